"""Head-motion normalization, dropout reconstruction and jitter smoothing.

Sweeps come out of the articulograph in device coordinates with the
speaker's head free to move; the three head-mounted reference coils let us
re-express every frame in a fixed head frame. Tracking gaps are filled by
linear interpolation and residual coil jitter is removed with a zero-phase
filter before any rigging happens, because jitter left in the targets turns
directly into implausible tongue motion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter1d
from scipy.signal import savgol_filter

from .ema_io import EmaSweep, CoilRoles, angles_from_vector, orientation_vector
from .errors import (
    AllInvalidChannel,
    DegenerateConfiguration,
    NoValidReferenceFrame,
    WindowTooLarge,
)

# Relative second-singular-value threshold below which a point set counts
# as collinear/coincident for rigid fitting.
_DEGENERACY_RTOL = 1e-9


@dataclass(frozen=True)
class RigidTransform:
    """Proper rigid motion x -> rotation @ x + translation (cm)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64)
        if R.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if abs(np.linalg.det(R) - 1.0) > 1e-9 or not np.allclose(
            R @ R.T, np.eye(3), atol=1e-9
        ):
            raise ValueError("rotation must be orthonormal with determinant +1")

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other: (self.compose(other)).apply(x) == self.apply(other.apply(x))."""
        return RigidTransform(
            rotation=self.rotation @ other.rotation,
            translation=self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        return RigidTransform(
            rotation=self.rotation.T, translation=-(self.rotation.T @ self.translation)
        )

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(rotation=np.eye(3), translation=np.zeros(3))


@dataclass(frozen=True)
class Similarity:
    """Uniform-scale rigid map x -> scale * (rotation @ x) + translation."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * (np.asarray(points) @ self.rotation.T) + self.translation

    def rotate(self, vectors: np.ndarray) -> np.ndarray:
        """Direction part only (unit vectors stay unit)."""
        return np.asarray(vectors) @ self.rotation.T

    def inverse(self) -> "Similarity":
        Rt = self.rotation.T
        return Similarity(
            scale=1.0 / self.scale,
            rotation=Rt,
            translation=-(Rt @ self.translation) / self.scale,
        )

    @classmethod
    def identity(cls) -> "Similarity":
        return cls(scale=1.0, rotation=np.eye(3), translation=np.zeros(3))


@dataclass(frozen=True)
class SmoothingSpec:
    """Zero-phase filter choice for coil-jitter suppression."""

    kind: str = "moving_average"
    window_frames: int = 9
    polynomial_order: int = 2

    def __post_init__(self):
        if self.kind not in ("none", "moving_average", "savitzky_golay"):
            raise ValueError(f"unknown smoothing kind {self.kind!r}")
        if self.window_frames < 1 or self.window_frames % 2 == 0:
            raise ValueError("window_frames must be odd and >= 1")
        if self.kind == "savitzky_golay" and not (
            0 <= self.polynomial_order < self.window_frames
        ):
            raise ValueError("polynomial_order must be < window_frames")


def _check_spread(points: np.ndarray, what: str) -> None:
    centered = points - points.mean(axis=0)
    s = np.linalg.svd(centered, compute_uv=False)
    if s[0] == 0.0 or s[1] <= _DEGENERACY_RTOL * s[0]:
        raise DegenerateConfiguration(
            f"{what} points are collinear or coincident (singular values {s})"
        )


def rigid_align(moving: np.ndarray, fixed: np.ndarray) -> RigidTransform:
    """Least-squares rigid transform mapping `moving` onto `fixed` (Kabsch).

    Requires >= 3 non-collinear point pairs; reflections are never returned.
    """
    moving = np.asarray(moving, dtype=np.float64)
    fixed = np.asarray(fixed, dtype=np.float64)
    if moving.shape != fixed.shape or moving.ndim != 2 or moving.shape[1] != 3:
        raise ValueError("point sets must both have shape (n, 3)")
    if moving.shape[0] < 3:
        raise ValueError("need at least 3 point pairs")
    _check_spread(moving, "moving")
    _check_spread(fixed, "fixed")

    cm = moving.mean(axis=0)
    cf = fixed.mean(axis=0)
    H = (moving - cm).T @ (fixed - cf)
    U, _, Vt = np.linalg.svd(H)
    V = Vt.T
    d = np.sign(np.linalg.det(V @ U.T))
    R = V @ np.diag([1.0, 1.0, d]) @ U.T
    t = cf - R @ cm
    return RigidTransform(rotation=R, translation=t)


def similarity_align(moving: np.ndarray, fixed: np.ndarray) -> Similarity:
    """Least-squares similarity (uniform scale + rigid) mapping moving onto fixed.

    Umeyama's closed form; used to register device-space coil positions to
    mesh-space seed points.
    """
    moving = np.asarray(moving, dtype=np.float64)
    fixed = np.asarray(fixed, dtype=np.float64)
    if moving.shape != fixed.shape or moving.ndim != 2 or moving.shape[1] != 3:
        raise ValueError("point sets must both have shape (n, 3)")
    if moving.shape[0] < 3:
        raise ValueError("need at least 3 point pairs")
    _check_spread(moving, "moving")
    _check_spread(fixed, "fixed")

    n = moving.shape[0]
    cm = moving.mean(axis=0)
    cf = fixed.mean(axis=0)
    mc = moving - cm
    fc = fixed - cf
    H = mc.T @ fc / n
    U, S, Vt = np.linalg.svd(H)
    V = Vt.T
    d = np.sign(np.linalg.det(V @ U.T))
    D = np.diag([1.0, 1.0, d])
    R = V @ D @ U.T
    var_m = np.sum(mc * mc) / n
    scale = float(np.trace(np.diag(S) @ D) / var_m)
    t = cf - scale * (R @ cm)
    return Similarity(scale=scale, rotation=R, translation=t)


def _batched_rigid_align(moving: np.ndarray, fixed: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame Kabsch: moving (F, n, 3) onto a single fixed (n, 3).

    Returns (rotations (F, 3, 3), translations (F, 3)). Raises on any
    degenerate frame.
    """
    F = moving.shape[0]
    cm = moving.mean(axis=1, keepdims=True)
    cf = fixed.mean(axis=0)
    mc = moving - cm
    fc = fixed - cf
    H = np.einsum("fni,nj->fij", mc, fc)
    U, S, Vt = np.linalg.svd(H)

    sm = np.linalg.svd(mc, compute_uv=False)
    bad = (sm[:, 0] == 0.0) | (sm[:, 1] <= _DEGENERACY_RTOL * sm[:, 0])
    if np.any(bad):
        frame = int(np.argmax(bad))
        raise DegenerateConfiguration(
            f"reference coils are collinear or coincident at frame {frame}"
        )

    V = np.swapaxes(Vt, 1, 2)
    d = np.sign(np.linalg.det(V @ np.swapaxes(U, 1, 2)))
    D = np.repeat(np.eye(3)[None, :, :], F, axis=0).copy()
    D[:, 2, 2] = d
    R = V @ D @ np.swapaxes(U, 1, 2)
    t = cf - np.einsum("fij,fj->fi", R, cm[:, 0, :])
    return R, t


def normalize_head(
    sweep: EmaSweep,
    roles: CoilRoles,
    reference_frame: np.ndarray | None = None,
) -> EmaSweep:
    """Remove per-frame head pose using the three reference coils.

    Every frame is rigidly aligned so that its reference-coil triplet lands
    on the reference positions (by default, the first frame in which all
    three reference coils are valid; alternatively, three supplied points in
    the order of `roles.reference`). Positions and coil-axis vectors of all
    channels are transformed; angles are re-derived from the rotated axis
    vectors because Euler angles do not compose under rotation.
    """
    roles.validate_against(sweep.channels)
    ref_idx = [sweep.channel_index(n) for n in roles.reference]
    ref_pos = sweep.positions[:, ref_idx, :]

    if reference_frame is None:
        valid = sweep.valid_mask()[:, ref_idx].all(axis=1)
        if not valid.any():
            raise NoValidReferenceFrame(
                "no frame has all three reference coils valid"
            )
        fixed = ref_pos[int(np.argmax(valid))]
    else:
        fixed = np.asarray(reference_frame, dtype=np.float64)
        if fixed.shape != (3, 3):
            raise ValueError("reference_frame must be three 3-vectors")

    if not np.isfinite(ref_pos).all():
        raise DegenerateConfiguration(
            "reference coils contain invalid samples; fill dropouts first"
        )
    _check_spread(fixed, "reference-frame")

    R, t = _batched_rigid_align(ref_pos, fixed)

    positions = np.einsum("fij,fcj->fci", R, sweep.positions) + t[:, None, :]
    axes = orientation_vector(sweep.phi, sweep.theta)
    axes = np.einsum("fij,fcj->fci", R, axes)
    phi, theta = angles_from_vector(axes)
    return sweep.with_arrays(positions=positions, phi=phi, theta=theta)


def detect_dropouts(sweep: EmaSweep, rms_ceiling: float = np.inf) -> np.ndarray:
    """(frames, channels) bool mask of invalid samples.

    A sample is invalid when any of its seven components is non-finite, or
    when its sensor-fit rms exceeds the ceiling (disabled by default since
    rms semantics vary across datasets).
    """
    bad = ~sweep.valid_mask()
    if np.isfinite(rms_ceiling):
        bad |= sweep.rms.astype(np.float64) > rms_ceiling
    return bad


def fill_dropouts(sweep: EmaSweep, rms_ceiling: float = np.inf) -> EmaSweep:
    """Replace invalid samples by per-channel linear interpolation.

    Nearest valid neighbors bracket each gap; leading/trailing gaps are
    filled with the nearest valid value. Valid samples are untouched.
    """
    bad = detect_dropouts(sweep, rms_ceiling)
    if not bad.any():
        return sweep

    n = sweep.n_frames
    idx = np.arange(n, dtype=np.float64)
    positions = np.array(sweep.positions)
    phi = np.array(sweep.phi)
    theta = np.array(sweep.theta)
    rms = np.array(sweep.rms)
    extra = np.array(sweep.extra)

    for c in range(len(sweep.channels)):
        gap = bad[:, c]
        if not gap.any():
            continue
        ok = ~gap
        if not ok.any():
            raise AllInvalidChannel(
                f"channel {sweep.channels[c]!r} has no valid sample"
            )
        good = idx[ok]
        for k in range(3):
            positions[gap, c, k] = np.interp(idx[gap], good, positions[ok, c, k])
        phi[gap, c] = np.interp(idx[gap], good, phi[ok, c])
        theta[gap, c] = np.interp(idx[gap], good, theta[ok, c])
        rms[gap, c] = np.interp(idx[gap], good, rms[ok, c].astype(np.float64)).astype(
            rms.dtype
        )
        extra[gap, c] = np.interp(
            idx[gap], good, extra[ok, c].astype(np.float64)
        ).astype(extra.dtype)

    return sweep.with_arrays(
        positions=positions, phi=phi, theta=theta, rms=rms, extra=extra
    )


def smooth(sweep: EmaSweep, spec: SmoothingSpec) -> EmaSweep:
    """Zero-phase smoothing of coil positions (angles pass through).

    Edges are handled by reflection padding. Filtering is applied about each
    signal's mean so constant signals are preserved exactly. Expects
    dropouts to have been filled already.
    """
    if spec.kind == "none" or spec.window_frames == 1:
        return sweep
    n = sweep.n_frames
    if spec.window_frames > n:
        raise WindowTooLarge(
            f"window of {spec.window_frames} frames exceeds sweep length {n}"
        )

    flat = np.array(sweep.positions).reshape(n, -1)
    mean = flat.mean(axis=0)
    centered = flat - mean
    if spec.kind == "moving_average":
        out = uniform_filter1d(centered, size=spec.window_frames, axis=0, mode="mirror")
    else:
        out = savgol_filter(
            centered,
            window_length=spec.window_frames,
            polyorder=spec.polynomial_order,
            axis=0,
            mode="mirror",
        )
    positions = (out + mean).reshape(sweep.positions.shape)
    return sweep.with_arrays(positions=positions)
