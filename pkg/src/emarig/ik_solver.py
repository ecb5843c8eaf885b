"""Per-frame pose solving and linear blend skinning.

The bone tree tracks one target per bone tail using an iterative
backward/forward positional solve (a FABRIK variant extended with per-bone
stretch clamping and weighted averaging at branch points). Volume
preservation is enforced analytically: a bone stretched by s scales its
cross section by 1/sqrt(s), so its cylinder-equivalent volume is constant.

Frames are independent; the batched entry point `solve_track` and the
single-frame `solve_pose` share one code path, so results are bit-identical
either way.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rig import Armature, SkinnedMesh, GROUP_MANDIBLE
from .rotations import minimal_rotation, mat_to_quat, quat_to_mat, norm


@dataclass(frozen=True)
class IkParams:
    tolerance: float = 1e-3          # cm, max per-target residual
    max_iterations: int = 50
    s_min: float = 0.5               # stretch ratio bounds
    s_max: float = 2.0
    target_weights: dict[str, float] | None = None

    def __post_init__(self):
        if not (self.tolerance > 0):
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not (0 < self.s_min <= 1.0 <= self.s_max):
            raise ValueError("stretch bounds must satisfy 0 < s_min <= 1 <= s_max")
        if self.target_weights is not None and any(
            w < 0 for w in self.target_weights.values()
        ):
            raise ValueError("target weights must be non-negative")


@dataclass(frozen=True)
class PoseTrack:
    """Solved poses for a whole sweep: leading axis is the frame."""

    bone_names: tuple[str, ...]
    quats: np.ndarray         # (F, K, 4) minimal rotations rest dir -> posed dir
    heads: np.ndarray         # (F, K, 3) cm
    tails: np.ndarray         # (F, K, 3) cm
    stretches: np.ndarray     # (F, K)
    cross_scales: np.ndarray  # (F, K) = 1/sqrt(stretch)
    residuals: np.ndarray     # (F, K) per-target distance, NaN where untargeted
    iterations: np.ndarray    # (F,)

    @property
    def n_frames(self) -> int:
        return self.quats.shape[0]

    def max_residual(self) -> np.ndarray:
        """(F,) worst per-target distance per frame."""
        with np.errstate(invalid="ignore"):
            return np.nanmax(self.residuals, axis=1)

    def frame(self, f: int) -> "PoseFrame":
        return PoseFrame(
            bone_names=self.bone_names,
            quats=self.quats[f],
            heads=self.heads[f],
            tails=self.tails[f],
            stretches=self.stretches[f],
            cross_scales=self.cross_scales[f],
            residuals=self.residuals[f],
            iterations_used=int(self.iterations[f]),
        )


@dataclass(frozen=True)
class PoseFrame:
    """One solved frame: per-bone transforms plus solve diagnostics.

    The optional jaw fields carry the rigid transform applied to the
    mandible group during skinning (identity when absent).
    """

    bone_names: tuple[str, ...]
    quats: np.ndarray
    heads: np.ndarray
    tails: np.ndarray
    stretches: np.ndarray
    cross_scales: np.ndarray
    residuals: np.ndarray
    iterations_used: int
    jaw_rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    jaw_translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @property
    def rotations(self) -> np.ndarray:
        return quat_to_mat(self.quats)

    @property
    def max_residual(self) -> float:
        finite = self.residuals[np.isfinite(self.residuals)]
        return float(finite.max()) if len(finite) else 0.0


def _target_weight_vector(armature: Armature, params: IkParams) -> np.ndarray:
    w = np.ones(armature.n_bones)
    if params.target_weights:
        for name, val in params.target_weights.items():
            w[armature.bone_index(name)] = val
    return w


def solve_track(
    armature: Armature,
    targets: np.ndarray,
    params: IkParams = IkParams(),
    target_mask: np.ndarray | None = None,
) -> PoseTrack:
    """Solve every frame of a (frames, bones, 3) target array.

    Iterates backward/forward passes until the worst per-target residual
    drops to the tolerance, progress stalls, or the iteration budget runs
    out; a frame is never left in a worse state than a previous iterate, so
    the reported residual is non-increasing in the iteration count.
    Untargeted bones (target_mask False) follow their parents.
    """
    targets = np.asarray(targets, dtype=np.float64)
    F, K = targets.shape[0], armature.n_bones
    if targets.shape != (F, K, 3):
        raise ValueError("targets must have shape (frames, n_bones, 3)")
    has = (
        np.ones(K, dtype=bool)
        if target_mask is None
        else np.asarray(target_mask, dtype=bool)
    )

    w_t = _target_weight_vector(armature, params)
    children = [armature.children_of(k) for k in range(K)]
    subtree_w = np.zeros(K)
    for k in reversed(range(K)):
        subtree_w[k] = w_t[k] * has[k] + sum(subtree_w[c] for c in children[k])

    lo = params.s_min * armature.rest_lengths
    hi = params.s_max * armature.rest_lengths
    parent_joint = np.where(armature.parents < 0, 0, armature.parents + 1)

    # Joint 0 is the anchored root point; joint k+1 is the tail of bone k.
    joints = np.empty((F, K + 1, 3))
    joints[:, 0] = armature.root_point
    joints[:, 1:] = armature.tails

    def residual_of(j):
        d = norm(j[:, 1:] - targets)
        d[:, ~has] = 0.0
        return d.max(axis=1) if K else np.zeros(F)

    best_res = residual_of(joints)
    iterations = np.zeros(F, dtype=np.int64)
    active = np.ones(F, dtype=bool)

    def pull(anchor, toward, lo_k, hi_k, fallback_dir):
        """Point at clamped distance from `anchor` in the direction of `toward`.

        Returns `toward` bitwise when its distance is already within bounds
        (this keeps already-solved configurations exactly fixed).
        """
        d = toward - anchor
        dist = norm(d)
        clamped = np.clip(dist, lo_k, hi_k)
        safe = np.where(dist > 0.0, dist, 1.0)
        scaled = anchor + d * (clamped / safe)[..., None]
        scaled = np.where(
            (dist > 0.0)[..., None], scaled, anchor + fallback_dir * clamped[..., None]
        )
        return np.where((clamped == dist)[..., None], toward, scaled)

    for it in range(1, params.max_iterations + 1):
        if not active.any():
            break

        # Backward pass: each bone proposes a tail position for itself; a
        # targeted bone wants its own target, projected into the reach
        # annulus of every child's proposal. Branch proposals are averaged,
        # weighted by their subtrees' target weight.
        prop = np.empty((F, K, 3))
        for k in reversed(range(K)):
            desired = targets[:, k] if has[k] else joints[:, k + 1]
            contribs = []
            weights = []
            if has[k]:
                contribs.append(targets[:, k])
                weights.append(w_t[k])
            for c in children[k]:
                p = pull(prop[:, c], desired, lo[c], hi[c], -armature.rest_dirs[c])
                contribs.append(p)
                weights.append(subtree_w[c])
            if not contribs:
                prop[:, k] = joints[:, k + 1]
            elif len(contribs) == 1:
                prop[:, k] = contribs[0]
            else:
                stacked = np.stack(contribs, axis=1)
                wv = np.asarray(weights, dtype=np.float64)
                if wv.sum() == 0.0:  # fully untargeted subtree
                    wv = np.ones_like(wv)
                avg = np.einsum("m,fmi->fi", wv, stacked) / wv.sum()
                same = (stacked == stacked[:, :1]).all(axis=(1, 2))
                prop[:, k] = np.where(same[:, None], stacked[:, 0], avg)

        # Forward pass: re-anchor at the root and restore bone lengths
        # (within the stretch bounds) down the tree.
        new_joints = np.empty_like(joints)
        new_joints[:, 0] = armature.root_point
        for k in range(K):
            head = new_joints[:, parent_joint[k]]
            new_joints[:, k + 1] = pull(head, prop[:, k], lo[k], hi[k], armature.rest_dirs[k])

        res = residual_of(new_joints)
        accept = active & (res <= best_res)
        reject = active & ~accept
        joints[accept] = new_joints[accept]
        best_res[accept] = res[accept]
        iterations[active] = it
        active &= ~reject
        active &= best_res > params.tolerance

    heads = joints[:, parent_joint]
    tails = joints[:, 1:]
    deltas = tails - heads
    lengths = norm(deltas)
    stretches = np.clip(lengths / armature.rest_lengths, params.s_min, params.s_max)
    cross_scales = 1.0 / np.sqrt(stretches)
    dirs = deltas / np.where(lengths > 0.0, lengths, 1.0)[..., None]
    R = minimal_rotation(np.broadcast_to(armature.rest_dirs, dirs.shape), dirs)
    quats = mat_to_quat(R)

    residuals = norm(tails - targets)
    residuals[:, ~has] = np.nan

    return PoseTrack(
        bone_names=armature.bone_names,
        quats=quats,
        heads=heads,
        tails=tails,
        stretches=stretches,
        cross_scales=cross_scales,
        residuals=residuals,
        iterations=iterations,
    )


def solve_pose(
    armature: Armature,
    targets: dict[str, np.ndarray] | np.ndarray,
    params: IkParams = IkParams(),
) -> PoseFrame:
    """Solve a single frame.

    `targets` is either a (bones, 3) array in bone order or a mapping from
    coil name to position; bones missing from the mapping follow their
    parents. Non-convergence is reported through residuals/iterations, not
    raised, so animation can always proceed.
    """
    K = armature.n_bones
    mask = np.ones(K, dtype=bool)
    if isinstance(targets, dict):
        arr = np.array(armature.tails)
        for k, name in enumerate(armature.bone_names):
            if name in targets:
                arr[k] = np.asarray(targets[name], dtype=np.float64)
            else:
                mask[k] = False
    else:
        arr = np.asarray(targets, dtype=np.float64)
        if arr.shape != (K, 3):
            raise ValueError(f"expected ({K}, 3) targets")
    track = solve_track(armature, arr[None, :, :], params, target_mask=mask)
    return track.frame(0)


# --- skinning -----------------------------------------------------------------

def _pose_affines(
    armature: Armature,
    quats: np.ndarray,
    heads: np.ndarray,
    stretches: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Affine maps (A, b) with v' = A v + b for each bone.

    A composes the minimal rotation with an anisotropic scale in the bone's
    rest frame: `stretch` along the rest axis, 1/sqrt(stretch) across it.
    """
    R = quat_to_mat(quats)
    s = np.asarray(stretches)
    c = 1.0 / np.sqrt(s)
    d0 = armature.rest_dirs
    outer = d0[:, :, None] * d0[:, None, :]
    S = c[..., None, None] * np.eye(3) + (s - c)[..., None, None] * outer
    A = R @ S
    b = heads - np.einsum("...kij,kj->...ki", A, armature.heads)
    return A, b


def apply_pose(
    mesh: SkinnedMesh,
    armature: Armature,
    pose: PoseFrame,
    vertex_indices: np.ndarray | None = None,
) -> np.ndarray:
    """Deform mesh vertices by linear blend skinning.

    Tongue vertices blend their (up to four) bone transforms; mandible
    vertices move rigidly with the pose's jaw transform; everything else
    (maxilla) stays put. Returns positions for `vertex_indices` (default:
    all vertices).
    """
    if vertex_indices is None:
        vertex_indices = np.arange(mesh.n_vertices)
    idx = np.asarray(vertex_indices)
    verts = mesh.vertices[idx]
    bones = mesh.weight_bones[idx]
    weights = mesh.weight_values[idx]

    A, b = _pose_affines(armature, pose.quats, pose.heads, pose.stretches)

    out = verts.copy()
    skinned = (bones >= 0).any(axis=1)
    if skinned.any():
        vb = bones[skinned].clip(min=0)
        vw = np.where(bones[skinned] >= 0, weights[skinned], 0.0)
        vv = verts[skinned]
        moved = np.einsum(
            "nsij,nj->nsi", A[vb], vv
        ) + b[vb]
        out[skinned] = np.einsum("ns,nsi->ni", vw, moved)

    mand = np.zeros(mesh.n_vertices, dtype=bool)
    mand[mesh.group_indices(GROUP_MANDIBLE)] = True
    jaw_rows = mand[idx] & ~skinned
    if jaw_rows.any():
        out[jaw_rows] = verts[jaw_rows] @ pose.jaw_rotation.T + pose.jaw_translation
    return out


def skin_trajectories(
    mesh: SkinnedMesh,
    armature: Armature,
    quats: np.ndarray,
    heads: np.ndarray,
    stretches: np.ndarray,
    vertex_indices: np.ndarray,
    jaw_rotations: np.ndarray | None = None,
    jaw_translations: np.ndarray | None = None,
) -> np.ndarray:
    """Skinned positions of selected vertices over all frames: (F, n, 3).

    Intended for small vertex subsets (seed vertices, probes); use
    apply_pose per frame for whole-mesh deformation.
    """
    idx = np.asarray(vertex_indices)
    verts = mesh.vertices[idx]
    bones = mesh.weight_bones[idx]
    weights = mesh.weight_values[idx]
    F = quats.shape[0]

    A, b = _pose_affines(armature, quats, heads, stretches)  # (F, K, 3, 3), (F, K, 3)

    out = np.broadcast_to(verts, (F,) + verts.shape).copy()
    skinned = (bones >= 0).any(axis=1)
    if skinned.any():
        vb = bones[skinned].clip(min=0)                       # (n, 4)
        vw = np.where(bones[skinned] >= 0, weights[skinned], 0.0)
        vv = verts[skinned]
        Ag = A[:, vb]                                         # (F, n, 4, 3, 3)
        bg = b[:, vb]
        moved = np.einsum("fnsij,nj->fnsi", Ag, vv) + bg
        out[:, skinned] = np.einsum("ns,fnsi->fni", vw, moved)

    mand = np.zeros(mesh.n_vertices, dtype=bool)
    mand[mesh.group_indices(GROUP_MANDIBLE)] = True
    jaw_rows = mand[idx] & ~skinned
    if jaw_rows.any() and jaw_rotations is not None:
        moved = np.einsum("fij,nj->fni", jaw_rotations, verts[jaw_rows])
        out[:, jaw_rows] = moved + jaw_translations[:, None, :]
    return out
