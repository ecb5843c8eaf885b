"""COLLADA 1.4.1 subset writer and reader for the animated model.

The subset is the smallest document that carries a skinned, baked rig:
one geometry with per-group triangle batches, one skin controller whose
joints are the tongue bones plus rigid jaw/skull anchors, a joint node
hierarchy mirroring the armature tree, and per-node baked matrix samplers
with LINEAR interpolation on a shared time source. Stretch is baked into
the node matrices as anisotropic scale, so generic consumers replay the
volume-preserving deformation with no custom semantics.

Numbers are printed with 9 significant digits and element order is fixed,
so identical inputs produce byte-identical documents. Bone rest tails and
the clip timing, which plain COLLADA cannot carry, ride along in ``extra``
blocks under the ``emarig`` technique profile; the reader requires them.
"""

from __future__ import annotations

import re
import xml.etree.ElementTree as ET
from xml.etree.ElementTree import Element, SubElement

import numpy as np

from .anim_db import AnimationClip
from .errors import InconsistentRig, ParseError, UnsupportedFeature
from .ik_solver import _pose_affines
from .rig import Armature, SkinnedMesh, GROUP_MANDIBLE, GROUP_MAXILLA, GROUP_TONGUE
from .rotations import mat_to_quat, quat_to_mat, norm

NS = "http://www.collada.org/2005/11/COLLADASchema"
PROFILE = "emarig"

_GROUP_ORDER = (GROUP_TONGUE, GROUP_MANDIBLE, GROUP_MAXILLA)


def _fmt(x: float) -> str:
    return format(float(x), ".9g")


def _fmt_array(values: np.ndarray) -> str:
    return " ".join(_fmt(v) for v in np.asarray(values).ravel())


def _fmt_ints(values: np.ndarray) -> str:
    return " ".join(str(int(v)) for v in np.asarray(values).ravel())


def _sanitize(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.\-]", "_", name)


def _affine_to_matrix16(A: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Stack (..., 3, 3) + (..., 3) into flat row-major 4x4 rows (..., 16)."""
    batch = A.shape[:-2]
    M = np.zeros(batch + (4, 4))
    M[..., :3, :3] = A
    M[..., :3, 3] = t
    M[..., 3, 3] = 1.0
    return M.reshape(batch + (16,))


def _float_source(parent: Element, sid: str, values: np.ndarray, params) -> None:
    src = SubElement(parent, "source", id=sid)
    arr = SubElement(src, "float_array", id=f"{sid}-array", count=str(values.size))
    arr.text = _fmt_array(values)
    tc = SubElement(src, "technique_common")
    stride = sum(1 if p[1] != "float4x4" else 16 for p in params)
    acc = SubElement(
        tc,
        "accessor",
        source=f"#{sid}-array",
        count=str(values.size // stride),
        stride=str(stride),
    )
    for name, typ in params:
        p = SubElement(acc, "param", type=typ)
        if name:
            p.set("name", name)


def _name_source(parent: Element, sid: str, names, param_name: str) -> None:
    src = SubElement(parent, "source", id=sid)
    arr = SubElement(src, "Name_array", id=f"{sid}-array", count=str(len(names)))
    arr.text = " ".join(names)
    tc = SubElement(src, "technique_common")
    acc = SubElement(
        tc, "accessor", source=f"#{sid}-array", count=str(len(names)), stride="1"
    )
    SubElement(acc, "param", name=param_name, type="name")


def write_collada(
    mesh: SkinnedMesh, armature: Armature, clip: AnimationClip | None
) -> str:
    """Serialize mesh, armature and (optionally) a baked clip to document text."""
    K = armature.n_bones
    if (mesh.weight_bones >= K).any():
        raise InconsistentRig("skin weights reference bones outside the armature")
    if len(set(armature.bone_names)) != K:
        raise InconsistentRig("bone names must be unique")
    if clip is not None and tuple(clip.bone_names) != tuple(armature.bone_names):
        raise InconsistentRig("clip channels do not match the armature bones")

    bone_sids = [_sanitize(n) for n in armature.bone_names]
    if len(set(bone_sids)) != K:
        raise InconsistentRig("bone names collide after id sanitization")
    root_sid = _sanitize(armature.root_name)
    jaw_sid = "Jaw"
    skull_sid = "Skull"
    while jaw_sid in bone_sids or jaw_sid == root_sid:
        jaw_sid += "_"
    while skull_sid in bone_sids or skull_sid == root_sid:
        skull_sid += "_"
    joint_sids = bone_sids + [jaw_sid, skull_sid]

    root = Element("COLLADA", xmlns=NS, version="1.4.1")
    asset = SubElement(root, "asset")
    contributor = SubElement(asset, "contributor")
    SubElement(contributor, "authoring_tool").text = "emarig"
    SubElement(asset, "unit", meter="0.01", name="centimeter")
    SubElement(asset, "up_axis").text = "Z_UP"

    # geometry -----------------------------------------------------------
    lg = SubElement(root, "library_geometries")
    geom = SubElement(lg, "geometry", id="mesh", name="mesh")
    m = SubElement(geom, "mesh")
    _float_source(m, "mesh-positions", mesh.vertices, [("X", "float"), ("Y", "float"), ("Z", "float")])
    verts = SubElement(m, "vertices", id="mesh-vertices")
    SubElement(verts, "input", semantic="POSITION", source="#mesh-positions")

    vertex_group = np.full(mesh.n_vertices, -1, dtype=np.int64)
    for gi, gname in enumerate(_GROUP_ORDER):
        vertex_group[mesh.group_indices(gname)] = gi
    tri_group = vertex_group[mesh.triangles[:, 0]] if len(mesh.triangles) else np.empty(0, int)
    for gi, gname in enumerate(_GROUP_ORDER):
        tris = mesh.triangles[tri_group == gi]
        if not len(tris):
            continue
        t = SubElement(m, "triangles", material=gname, count=str(len(tris)))
        SubElement(t, "input", semantic="VERTEX", source="#mesh-vertices", offset="0")
        SubElement(t, "p").text = _fmt_ints(tris)

    # skin controller ------------------------------------------------------
    lc = SubElement(root, "library_controllers")
    controller = SubElement(lc, "controller", id="skin")
    skin = SubElement(controller, "skin", source="#mesh")
    SubElement(skin, "bind_shape_matrix").text = _fmt_array(np.eye(4))
    _name_source(skin, "skin-joints", joint_sids, "JOINT")

    inv_binds = np.zeros((K + 2, 4, 4))
    inv_binds[:] = np.eye(4)
    inv_binds[:K, :3, 3] = -armature.heads
    _float_source(skin, "skin-bind-poses", inv_binds.reshape(-1, 16), [("TRANSFORM", "float4x4")])

    weights: list[float] = [1.0]
    vcounts: list[int] = []
    pairs: list[int] = []
    for v in range(mesh.n_vertices):
        bones = mesh.weight_bones[v]
        active = bones >= 0
        if active.any():
            idxs = bones[active]
            vals = mesh.weight_values[v][active]
            vcounts.append(len(idxs))
            for bi, wv in zip(idxs, vals):
                pairs.extend([int(bi), len(weights)])
                weights.append(float(wv))
        elif vertex_group[v] == 1:
            vcounts.append(1)
            pairs.extend([K, 0])
        elif vertex_group[v] == 2:
            vcounts.append(1)
            pairs.extend([K + 1, 0])
        else:
            vcounts.append(0)
    _float_source(skin, "skin-weights", np.asarray(weights), [("WEIGHT", "float")])
    joints = SubElement(skin, "joints")
    SubElement(joints, "input", semantic="JOINT", source="#skin-joints")
    SubElement(joints, "input", semantic="INV_BIND_MATRIX", source="#skin-bind-poses")
    vw = SubElement(skin, "vertex_weights", count=str(mesh.n_vertices))
    SubElement(vw, "input", semantic="JOINT", source="#skin-joints", offset="0")
    SubElement(vw, "input", semantic="WEIGHT", source="#skin-weights", offset="1")
    SubElement(vw, "vcount").text = " ".join(str(c) for c in vcounts)
    SubElement(vw, "v").text = " ".join(str(i) for i in pairs)

    # animations -----------------------------------------------------------
    if clip is not None:
        la = SubElement(root, "library_animations")
        A, b = _pose_affines(armature, clip.quats, clip.heads, clip.stretches)
        world = _affine_to_matrix16(A, clip.heads).reshape(clip.n_keys, K, 4, 4)

        locals_ = np.empty_like(world)
        c_inv = np.sqrt(clip.stretches)               # 1 / cross_scale
        s_inv = 1.0 / clip.stretches
        d0 = armature.rest_dirs
        outer = d0[:, :, None] * d0[:, None, :]
        S_inv = c_inv[..., None, None] * np.eye(3) + (s_inv - c_inv)[..., None, None] * outer
        R = quat_to_mat(clip.quats)
        A_inv = S_inv @ np.swapaxes(R, -1, -2)
        for k in range(K):
            p = armature.parents[k]
            if p < 0:
                locals_[:, k] = world[:, k]
                locals_[:, k, :3, 3] -= armature.root_point
            else:
                rel = clip.heads[:, k] - clip.heads[:, p]
                locals_[:, k, :3, :3] = A_inv[:, p] @ A[:, k]
                locals_[:, k, :3, 3] = np.einsum("fij,fj->fi", A_inv[:, p], rel)
                locals_[:, k, 3, :] = [0.0, 0.0, 0.0, 1.0]

        def emit_animation(node_sid: str, matrices: np.ndarray):
            anim = SubElement(la, "animation", id=f"anim-{node_sid}")
            _float_source(anim, f"anim-{node_sid}-input", clip.times, [("TIME", "float")])
            _float_source(
                anim,
                f"anim-{node_sid}-output",
                matrices.reshape(-1, 16),
                [("TRANSFORM", "float4x4")],
            )
            _name_source(
                anim,
                f"anim-{node_sid}-interp",
                ["LINEAR"] * clip.n_keys,
                "INTERPOLATION",
            )
            sampler = SubElement(anim, "sampler", id=f"anim-{node_sid}-sampler")
            SubElement(sampler, "input", semantic="INPUT", source=f"#anim-{node_sid}-input")
            SubElement(sampler, "input", semantic="OUTPUT", source=f"#anim-{node_sid}-output")
            SubElement(
                sampler, "input", semantic="INTERPOLATION", source=f"#anim-{node_sid}-interp"
            )
            SubElement(
                anim,
                "channel",
                source=f"#anim-{node_sid}-sampler",
                target=f"node-{node_sid}/transform",
            )

        for k, sid in enumerate(bone_sids):
            emit_animation(sid, locals_[:, k])
        jaw_world = _affine_to_matrix16(quat_to_mat(clip.jaw_quats), clip.jaw_translations)
        emit_animation(jaw_sid, jaw_world)

    # visual scene -----------------------------------------------------------
    lvs = SubElement(root, "library_visual_scenes")
    scene = SubElement(lvs, "visual_scene", id="Scene", name="Scene")

    root_node = SubElement(
        scene, "node", id=f"node-{root_sid}", name=root_sid, sid=root_sid, type="JOINT"
    )
    mat = SubElement(root_node, "matrix", sid="transform")
    mat.text = _fmt_array(_affine_to_matrix16(np.eye(3), armature.root_point))

    node_elems = {-1: root_node}
    for k, sid in enumerate(bone_sids):
        parent = node_elems[int(armature.parents[k])]
        node = SubElement(
            parent, "node", id=f"node-{sid}", name=sid, sid=sid, type="JOINT"
        )
        m_el = SubElement(node, "matrix", sid="transform")
        p = int(armature.parents[k])
        parent_head = armature.root_point if p < 0 else armature.heads[p]
        m_el.text = _fmt_array(
            _affine_to_matrix16(np.eye(3), armature.heads[k] - parent_head)
        )
        extra = SubElement(node, "extra")
        tech = SubElement(extra, "technique", profile=PROFILE)
        SubElement(tech, "tail").text = _fmt_array(armature.tails[k])
        SubElement(tech, "rest_length").text = _fmt(armature.rest_lengths[k])
        node_elems[k] = node

    for sid in (jaw_sid, skull_sid):
        n = SubElement(scene, "node", id=f"node-{sid}", name=sid, sid=sid, type="JOINT")
        SubElement(n, "matrix", sid="transform").text = _fmt_array(np.eye(4))

    model = SubElement(scene, "node", id="model", name="model")
    ic = SubElement(model, "instance_controller", url="#skin")
    SubElement(ic, "skeleton").text = f"#node-{root_sid}"

    s_extra = SubElement(scene, "extra")
    s_tech = SubElement(s_extra, "technique", profile=PROFILE)
    if clip is not None:
        SubElement(s_tech, "rate_hz").text = _fmt(clip.rate_hz)
        SubElement(s_tech, "duration").text = repr(float(clip.duration))

    sc = SubElement(root, "scene")
    SubElement(sc, "instance_visual_scene", url="#Scene")

    ET.indent(root, space="  ")
    return '<?xml version="1.0" encoding="utf-8"?>\n' + ET.tostring(
        root, encoding="unicode"
    ) + "\n"


# --- reader ---------------------------------------------------------------------


def _strip_ns(tag: str) -> str:
    return tag.split("}", 1)[1] if tag.startswith("{") else tag


def _local(elem: Element) -> str:
    return _strip_ns(elem.tag)


def _children(elem: Element, name: str) -> list[Element]:
    return [c for c in elem if _local(c) == name]


def _child(elem: Element, name: str) -> Element | None:
    found = _children(elem, name)
    return found[0] if found else None


def _floats(text: str | None) -> np.ndarray:
    parts = (text or "").split()
    return np.array(parts, dtype=np.float64) if parts else np.empty(0)


def _ints(text: str | None) -> np.ndarray:
    parts = (text or "").split()
    return np.array(parts, dtype=np.int64) if parts else np.empty(0, dtype=np.int64)


_KNOWN_LIBRARIES = {
    "asset",
    "library_geometries",
    "library_controllers",
    "library_animations",
    "library_visual_scenes",
    "scene",
    "extra",
}


def read_collada(document: str) -> tuple[SkinnedMesh, Armature, AnimationClip | None]:
    """Parse a document produced by write_collada (subset only).

    Raises ParseError on malformed XML and UnsupportedFeature on any
    element outside the written subset.
    """
    try:
        root = ET.fromstring(document)
    except ET.ParseError as exc:
        raise ParseError(f"malformed XML: {exc}", module="export") from None
    if _local(root) != "COLLADA":
        raise ParseError("not a COLLADA document", module="export")
    for child in root:
        if _local(child) not in _KNOWN_LIBRARIES:
            raise UnsupportedFeature(f"unsupported element <{_local(child)}>")

    # geometry
    lg = _child(root, "library_geometries")
    if lg is None or not _children(lg, "geometry"):
        raise UnsupportedFeature("document has no geometry")
    mesh_el = _child(_children(lg, "geometry")[0], "mesh")
    if mesh_el is None:
        raise UnsupportedFeature("geometry without <mesh>")
    for child in mesh_el:
        if _local(child) not in ("source", "vertices", "triangles"):
            raise UnsupportedFeature(f"unsupported geometry element <{_local(child)}>")
    src = _child(mesh_el, "source")
    positions = _floats(_child(src, "float_array").text).reshape(-1, 3)

    triangles = []
    tri_materials = []
    for tri_el in _children(mesh_el, "triangles"):
        inputs = _children(tri_el, "input")
        if len(inputs) != 1 or inputs[0].get("semantic") != "VERTEX":
            raise UnsupportedFeature("triangles must carry a single VERTEX input")
        tris = _ints(_child(tri_el, "p").text).reshape(-1, 3)
        triangles.append(tris)
        tri_materials.extend([tri_el.get("material", "")] * len(tris))
    tris = (
        np.concatenate(triangles).astype(np.int32)
        if triangles
        else np.empty((0, 3), np.int32)
    )

    groups: dict[str, set[int]] = {}
    for tri, mat in zip(tris, tri_materials):
        if mat in _GROUP_ORDER:
            groups.setdefault(mat, set()).update(int(v) for v in tri)
    group_arrays = {
        name: np.array(sorted(v), dtype=np.int64) for name, v in groups.items()
    }

    # skin
    lc = _child(root, "library_controllers")
    skin = _child(_children(lc, "controller")[0], "skin") if lc is not None else None
    if skin is None:
        raise UnsupportedFeature("document has no skin controller")
    joint_names: list[str] = []
    weights_arr = np.empty(0)
    for s in _children(skin, "source"):
        name_arr = _child(s, "Name_array")
        if name_arr is not None and "joints" in (s.get("id") or ""):
            joint_names = (name_arr.text or "").split()
        fa = _child(s, "float_array")
        if fa is not None and "weights" in (s.get("id") or ""):
            weights_arr = _floats(fa.text)

    vw = _child(skin, "vertex_weights")
    vcount = _ints(_child(vw, "vcount").text)
    v = _ints(_child(vw, "v").text)

    # scene hierarchy
    lvs = _child(root, "library_visual_scenes")
    if lvs is None or not _children(lvs, "visual_scene"):
        raise UnsupportedFeature("document has no visual scene")
    vscene = _children(lvs, "visual_scene")[0]

    skeleton_root_id = None
    for node in vscene.iter():
        if _local(node) == "skeleton":
            skeleton_root_id = (node.text or "").lstrip("#")
    if skeleton_root_id is None:
        raise UnsupportedFeature("no skeleton reference in the scene")

    def find_node(elem, node_id):
        for n in elem.iter():
            if _local(n) == "node" and n.get("id") == node_id:
                return n
        return None

    root_node = find_node(vscene, skeleton_root_id)
    if root_node is None:
        raise ParseError(f"skeleton root {skeleton_root_id!r} not found", module="export")
    root_name = root_node.get("sid") or root_node.get("name") or "Root"
    root_matrix = _floats(_child(root_node, "matrix").text).reshape(4, 4)
    root_point = root_matrix[:3, 3]

    bone_names: list[str] = []
    parents: list[int] = []
    rest_locals: list[np.ndarray] = []
    tails: list[np.ndarray] = []

    def walk(elem: Element, parent_idx: int):
        for child in _children(elem, "node"):
            if child.get("type") != "JOINT":
                continue
            sid = child.get("sid") or child.get("name")
            k = len(bone_names)
            bone_names.append(sid)
            parents.append(parent_idx)
            rest_locals.append(_floats(_child(child, "matrix").text).reshape(4, 4))
            tail = None
            extra = _child(child, "extra")
            if extra is not None:
                for tech in _children(extra, "technique"):
                    if tech.get("profile") == PROFILE and _child(tech, "tail") is not None:
                        tail = _floats(_child(tech, "tail").text)
            if tail is None:
                raise UnsupportedFeature(
                    f"joint {sid!r} is missing its rest-tail annotation"
                )
            tails.append(tail)
            walk(child, k)

    walk(root_node, -1)
    K = len(bone_names)
    if K == 0:
        raise UnsupportedFeature("skeleton has no bone joints")

    heads = np.empty((K, 3))
    for k in range(K):
        p = parents[k]
        base = root_point if p < 0 else heads[p]
        heads[k] = base + rest_locals[k][:3, 3]
    tails_arr = np.asarray(tails)
    deltas = tails_arr - heads
    rest_lengths = np.sqrt(np.sum(deltas * deltas, axis=-1))
    armature = Armature(
        bone_names=tuple(bone_names),
        parents=np.array(parents, dtype=np.int32),
        heads=heads,
        tails=tails_arr,
        rest_lengths=rest_lengths,
        rest_dirs=deltas / rest_lengths[:, None],
        root_point=root_point,
        root_name=root_name,
    )

    # weights back onto the mesh
    jaw_index = K if len(joint_names) > K else -1
    joint_to_bone = {}
    for j, name in enumerate(joint_names):
        if name in bone_names:
            joint_to_bone[j] = bone_names.index(name)
    weight_bones = np.full((len(positions), 4), -1, dtype=np.int32)
    weight_values = np.zeros((len(positions), 4))
    cursor = 0
    for vi, cnt in enumerate(vcount):
        slot = 0
        for _ in range(cnt):
            j, wi = int(v[cursor]), int(v[cursor + 1])
            cursor += 2
            if j in joint_to_bone:
                if slot >= 4:
                    raise UnsupportedFeature("more than 4 bone influences per vertex")
                weight_bones[vi, slot] = joint_to_bone[j]
                weight_values[vi, slot] = weights_arr[wi]
                slot += 1
        if slot:
            weight_values[vi, :slot] /= weight_values[vi, :slot].sum()

    mesh = SkinnedMesh(
        vertices=positions,
        triangles=tris,
        groups=group_arrays,
        weight_bones=weight_bones,
        weight_values=weight_values,
    )

    # animation channels
    la = _child(root, "library_animations")
    clip = None
    if la is not None:
        channels: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        for anim in _children(la, "animation"):
            chan = _child(anim, "channel")
            target = (chan.get("target") or "").split("/")[0]
            times = None
            mats = None
            for s in _children(anim, "source"):
                sid = s.get("id") or ""
                fa = _child(s, "float_array")
                na = _child(s, "Name_array")
                if fa is not None and sid.endswith("-input"):
                    times = _floats(fa.text)
                elif fa is not None and sid.endswith("-output"):
                    mats = _floats(fa.text).reshape(-1, 4, 4)
                elif na is not None and sid.endswith("-interp"):
                    kinds = set((na.text or "").split())
                    if kinds - {"LINEAR"}:
                        raise UnsupportedFeature(
                            f"unsupported interpolation {sorted(kinds - {'LINEAR'})}"
                        )
            if times is None or mats is None:
                raise UnsupportedFeature("animation without matrix sampler")
            channels[target] = (times, mats)

        ref_times = next(iter(channels.values()))[0]
        for times, _ in channels.values():
            if len(times) != len(ref_times) or not np.array_equal(times, ref_times):
                raise UnsupportedFeature("animations must share one time source")

        n = len(ref_times)
        worlds = np.empty((n, K, 4, 4))
        for k, sid in enumerate(bone_names):
            key = f"node-{sid}"
            if key not in channels:
                raise UnsupportedFeature(f"bone {sid!r} has no animation channel")
            local = channels[key][1]
            p = parents[k]
            if p < 0:
                base = np.eye(4)
                base[:3, 3] = root_point
                worlds[:, k] = base @ local
            else:
                worlds[:, k] = worlds[:, parents[k]] @ local

        heads_t = worlds[:, :, :3, 3]
        A = worlds[:, :, :3, :3]
        stretches = norm(np.einsum("fkij,kj->fki", A, armature.rest_dirs))
        c_inv = np.sqrt(stretches)
        s_inv = 1.0 / stretches
        d0 = armature.rest_dirs
        outer = d0[:, :, None] * d0[:, None, :]
        S_inv = c_inv[..., None, None] * np.eye(3) + (s_inv - c_inv)[..., None, None] * outer
        R = A @ S_inv
        quats = mat_to_quat(R)
        tails_t = heads_t + np.einsum(
            "fkij,kj->fki", A, armature.tails - armature.heads
        )

        jaw_key = next(
            (
                t
                for t in channels
                if t not in {f"node-{s}" for s in bone_names}
            ),
            None,
        )
        if jaw_key is not None:
            jaw_m = channels[jaw_key][1]
            jaw_quats = mat_to_quat(jaw_m[:, :3, :3])
            jaw_trans = jaw_m[:, :3, 3]
        else:
            jaw_quats = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
            jaw_trans = np.zeros((n, 3))

        rate = None
        duration = None
        for extra in _children(vscene, "extra"):
            for tech in _children(extra, "technique"):
                if tech.get("profile") == PROFILE:
                    if _child(tech, "rate_hz") is not None:
                        rate = float(_child(tech, "rate_hz").text)
                    if _child(tech, "duration") is not None:
                        duration = float(_child(tech, "duration").text)
        if rate is None:
            rate = (n - 1) / ref_times[-1] if n > 1 and ref_times[-1] > 0 else 1.0
        if duration is None:
            duration = ref_times[-1] + 1.0 / rate

        clip = AnimationClip(
            rate_hz=rate,
            bone_names=tuple(bone_names),
            times=ref_times,
            quats=quats,
            heads=heads_t,
            stretches=stretches,
            tails=tails_t,
            jaw_quats=jaw_quats,
            jaw_translations=jaw_trans,
            duration=duration,
        )

    return mesh, armature, clip
