import xml.etree.ElementTree as ET

import numpy as np
import pytest

from emarig.anim_db import AnimationClip
from emarig.collada_io import read_collada, write_collada
from emarig.errors import InconsistentRig, ParseError, UnsupportedFeature
from emarig.rig import Armature, SkinnedMesh
from emarig.rotations import axis_angle_matrix, mat_to_quat

from conftest import make_chain_armature


def quat_close(a, b, atol):
    direct = np.abs(a - b).max(axis=-1)
    flipped = np.abs(a + b).max(axis=-1)
    return (np.minimum(direct, flipped) < atol).all()


def random_tree_armature(rng, n_bones):
    # random tree, then relabeled so bones sit in DFS preorder (the
    # documented Armature invariant)
    raw_parents = [-1] + [int(rng.integers(-1, k)) for k in range(1, n_bones)]
    children = {k: [] for k in range(-1, n_bones)}
    for k, p in enumerate(raw_parents):
        children[p].append(k)
    order = []
    stack = list(reversed(children[-1]))
    while stack:
        k = stack.pop()
        order.append(k)
        stack.extend(reversed(children[k]))
    remap = {old: new for new, old in enumerate(order)}
    parents = np.array(
        [-1 if raw_parents[old] < 0 else remap[raw_parents[old]] for old in order],
        dtype=np.int32,
    )
    root_point = rng.normal(0, 2, 3)
    heads = np.empty((n_bones, 3))
    tails = np.empty((n_bones, 3))
    for k in range(n_bones):
        heads[k] = root_point if parents[k] < 0 else tails[parents[k]]
        tails[k] = heads[k] + rng.normal(0, 1.5, 3) + 0.3
    deltas = tails - heads
    lengths = np.sqrt(np.sum(deltas * deltas, axis=-1))
    return Armature(
        bone_names=tuple(f"J{k}" for k in range(n_bones)),
        parents=parents,
        heads=heads,
        tails=tails,
        rest_lengths=lengths,
        rest_dirs=deltas / lengths[:, None],
        root_point=root_point,
        root_name="Base",
    )


def random_mesh(rng, n_bones, n_tongue=10, n_mand=4, n_max=4):
    n = n_tongue + n_mand + n_max
    vertices = rng.normal(0, 2, (n, 3))
    tris = []
    for base, count in ((0, n_tongue), (n_tongue, n_mand), (n_tongue + n_mand, n_max)):
        for i in range(count - 2):
            tris.append((base + i, base + i + 1, base + i + 2))
    groups = {
        "tongue": np.arange(n_tongue, dtype=np.int64),
        "mandible": np.arange(n_tongue, n_tongue + n_mand, dtype=np.int64),
        "maxilla": np.arange(n_tongue + n_mand, n, dtype=np.int64),
    }
    weight_bones = np.full((n, 4), -1, dtype=np.int32)
    weight_values = np.zeros((n, 4))
    for v in range(n_tongue):
        cnt = int(rng.integers(1, min(4, n_bones) + 1))
        picks = rng.choice(n_bones, size=cnt, replace=False)
        w = rng.uniform(0.1, 1.0, cnt)
        w /= w.sum()
        weight_bones[v, :cnt] = np.sort(picks)
        weight_values[v, :cnt] = w
    return SkinnedMesh(
        vertices=vertices,
        triangles=np.asarray(tris, dtype=np.int32),
        groups=groups,
        weight_bones=weight_bones,
        weight_values=weight_values,
    )


def random_clip(rng, armature, n_keys):
    K = armature.n_bones
    times = np.concatenate([[0.0], np.cumsum(rng.uniform(0.004, 0.01, n_keys - 1))])
    stretches = rng.uniform(0.5, 2.0, (n_keys, K))
    quats = mat_to_quat(
        np.stack(
            [
                np.stack(
                    [
                        axis_angle_matrix(rng.normal(0, 1, 3), rng.uniform(-1, 1))
                        for _ in range(K)
                    ]
                )
                for _ in range(n_keys)
            ]
        )
    )
    heads = np.empty((n_keys, K, 3))
    tails = np.empty((n_keys, K, 3))
    from emarig.ik_solver import _pose_affines

    # heads must be tree-consistent: child head = parent posed tail
    for f in range(n_keys):
        A, _ = _pose_affines(armature, quats[f], np.zeros((K, 3)), stretches[f])
        for k in range(K):
            p = armature.parents[k]
            heads[f, k] = armature.root_point if p < 0 else tails[f, p]
            tails[f, k] = heads[f, k] + A[k] @ (armature.tails[k] - armature.heads[k])
    jaw_quats = mat_to_quat(
        np.stack(
            [axis_angle_matrix(rng.normal(0, 1, 3), rng.uniform(-0.3, 0.3)) for _ in range(n_keys)]
        )
    )
    jaw_trans = rng.normal(0, 0.5, (n_keys, 3))
    return AnimationClip(
        rate_hz=200.0,
        bone_names=armature.bone_names,
        times=times,
        quats=quats,
        heads=heads,
        stretches=stretches,
        tails=tails,
        jaw_quats=jaw_quats,
        jaw_translations=jaw_trans,
        duration=float(times[-1] + 0.005),
    )


class TestWriter:
    def test_reference_rig_joint_nodes(self, compiled_model):
        rig, clip, _ = compiled_model
        doc = write_collada(rig.mesh, rig.armature, clip)
        root = ET.fromstring(doc)
        ns = {"c": "http://www.collada.org/2005/11/COLLADASchema"}
        troot = root.find(".//c:node[@id='node-TRoot']", ns)
        assert troot is not None
        joints = troot.findall(".//c:node[@type='JOINT']", ns)
        assert len(joints) == 7

    def test_empty_clip_no_animation_library(self, compiled_model):
        rig, _, _ = compiled_model
        doc = write_collada(rig.mesh, rig.armature, None)
        assert "<library_animations>" not in doc
        assert "<library_geometries>" in doc
        assert "<library_controllers>" in doc

    def test_deterministic(self, compiled_model):
        rig, clip, _ = compiled_model
        assert write_collada(rig.mesh, rig.armature, clip) == write_collada(
            rig.mesh, rig.armature, clip
        )

    def test_inconsistent_rig(self):
        rng = np.random.default_rng(3)
        arm = make_chain_armature([[0, 0, 0], [1, 0, 0]])
        mesh = random_mesh(rng, n_bones=5)  # references bones beyond the armature
        with pytest.raises(InconsistentRig):
            write_collada(mesh, arm, None)

    def test_units_and_up_axis(self, compiled_model):
        rig, _, _ = compiled_model
        doc = write_collada(rig.mesh, rig.armature, None)
        assert '<unit meter="0.01" name="centimeter" />' in doc
        assert "<up_axis>Z_UP</up_axis>" in doc


class TestRoundTrip:
    def test_randomized(self):
        rng = np.random.default_rng(42)
        for trial in range(8):
            n_bones = int(rng.integers(1, 8))
            arm = random_tree_armature(rng, n_bones)
            mesh = random_mesh(rng, n_bones)
            clip = random_clip(rng, arm, int(rng.integers(2, 12)))
            doc = write_collada(mesh, arm, clip)
            m2, a2, c2 = read_collada(doc)

            assert np.array_equal(m2.triangles, mesh.triangles)
            assert m2.n_vertices == mesh.n_vertices
            for g in ("tongue", "mandible", "maxilla"):
                assert np.array_equal(m2.group_indices(g), mesh.group_indices(g))
            assert np.abs(m2.vertices - mesh.vertices).max() < 1e-6
            assert np.array_equal(m2.weight_bones, mesh.weight_bones)
            assert np.abs(m2.weight_values - mesh.weight_values).max() < 1e-6

            assert a2.bone_names == arm.bone_names
            assert np.array_equal(a2.parents, arm.parents)
            assert np.abs(a2.heads - arm.heads).max() < 1e-6
            assert np.abs(a2.tails - arm.tails).max() < 1e-6
            assert a2.root_name == arm.root_name

            assert np.abs(c2.times - clip.times).max() < 1e-6
            assert np.abs(c2.heads - clip.heads).max() < 1e-6
            assert np.abs(c2.stretches - clip.stretches).max() < 1e-6
            assert quat_close(c2.quats, clip.quats, 1e-6)
            assert np.abs(c2.tails - clip.tails).max() < 1e-6
            assert quat_close(c2.jaw_quats, clip.jaw_quats, 1e-6)
            assert np.abs(c2.jaw_translations - clip.jaw_translations).max() < 1e-6
            assert abs(c2.duration - clip.duration) < 1e-9
            assert c2.rate_hz == clip.rate_hz

    def test_no_clip_round_trip(self, compiled_model):
        rig, _, _ = compiled_model
        doc = write_collada(rig.mesh, rig.armature, None)
        m2, a2, c2 = read_collada(doc)
        assert c2 is None
        assert a2.bone_names == rig.armature.bone_names


class TestReaderErrors:
    def test_malformed_xml(self):
        with pytest.raises(ParseError):
            read_collada("<COLLADA><broken")

    def test_not_collada(self):
        with pytest.raises(ParseError):
            read_collada("<model/>")

    def test_unknown_library(self, compiled_model):
        rig, _, _ = compiled_model
        doc = write_collada(rig.mesh, rig.armature, None)
        doc = doc.replace(
            "<library_geometries>",
            "<library_lights><light/></library_lights><library_geometries>",
        )
        with pytest.raises(UnsupportedFeature):
            read_collada(doc)

    def test_unsupported_primitive(self, compiled_model):
        rig, _, _ = compiled_model
        doc = write_collada(rig.mesh, rig.armature, None)
        doc = doc.replace("<triangles", "<polylist", 1).replace(
            "</triangles>", "</polylist>", 1
        )
        with pytest.raises(UnsupportedFeature):
            read_collada(doc)
