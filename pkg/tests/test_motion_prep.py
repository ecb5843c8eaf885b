import numpy as np
import pytest

from emarig.ema_io import EmaSweep, orientation_vector
from emarig.errors import (
    AllInvalidChannel,
    DegenerateConfiguration,
    WindowTooLarge,
)
from emarig.fixture import FixtureSpec, synthetic_motion
from emarig.motion_prep import (
    RigidTransform,
    SmoothingSpec,
    fill_dropouts,
    normalize_head,
    rigid_align,
    similarity_align,
    smooth,
)
from emarig.rotations import axis_angle_matrix

from conftest import prepare


def make_sweep(positions, rate=200.0, phi=None, theta=None):
    positions = np.asarray(positions, dtype=np.float64)
    n, c = positions.shape[:2]
    zeros = np.zeros((n, c))
    return EmaSweep(
        rate_hz=rate,
        channels=tuple(f"C{i}" for i in range(c)),
        positions=positions,
        phi=zeros if phi is None else phi,
        theta=zeros.copy() if theta is None else theta,
        rms=np.zeros((n, c), np.float32),
        extra=np.zeros((n, c), np.float32),
    )


def brute_force_rotation(moving, fixed, rounds=12, grid=9):
    """Independent oracle: multiresolution grid search over Euler angles for
    the least-squares rotation (translation solved from centroids)."""
    mc = moving - moving.mean(axis=0)
    fc = fixed - fixed.mean(axis=0)

    def cost(ax, ay, az):
        R = (
            axis_angle_matrix([0, 0, 1], az)
            @ axis_angle_matrix([0, 1, 0], ay)
            @ axis_angle_matrix([1, 0, 0], ax)
        )
        d = mc @ R.T - fc
        return np.sum(d * d), R

    center = np.zeros(3)
    span = np.pi
    best_R = None
    for _ in range(rounds):
        best = None
        for ax in np.linspace(center[0] - span, center[0] + span, grid):
            for ay in np.linspace(center[1] - span, center[1] + span, grid):
                for az in np.linspace(center[2] - span, center[2] + span, grid):
                    c, R = cost(ax, ay, az)
                    if best is None or c < best[0]:
                        best = (c, np.array([ax, ay, az]), R)
        center = best[1]
        best_R = best[2]
        span = span * 2.0 / (grid - 1)
    return best_R


class TestRigidAlign:
    POINTS = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]])

    def test_identity(self):
        T = rigid_align(self.POINTS, self.POINTS)
        assert np.allclose(T.rotation, np.eye(3), atol=1e-12)
        assert np.allclose(T.translation, 0.0, atol=1e-12)

    def test_pure_translation(self):
        moving = self.POINTS + np.array([2.0, 0.0, 0.0])
        T = rigid_align(moving, self.POINTS)
        assert np.allclose(T.rotation, np.eye(3), atol=1e-12)
        assert np.allclose(T.translation, [-2.0, 0.0, 0.0], atol=1e-12)

    def test_constructed_rotation_and_brute_force(self):
        R = axis_angle_matrix([0, 0, 1], np.pi / 6)
        rng = np.random.default_rng(5)
        moving = rng.normal(0, 2, (6, 3))
        fixed = moving @ R.T
        T = rigid_align(moving, fixed)
        assert np.abs(T.rotation - R).max() < 1e-9
        R_search = brute_force_rotation(moving, fixed)
        assert np.abs(T.rotation - R_search).max() < 1e-4

    def test_no_reflection_on_random_inputs(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            moving = rng.normal(0, 1, (4, 3))
            fixed = rng.normal(0, 1, (4, 3))
            T = rigid_align(moving, fixed)
            assert abs(np.linalg.det(T.rotation) - 1.0) < 1e-9

    def test_left_invariance(self):
        rng = np.random.default_rng(13)
        for _ in range(20):
            moving = rng.normal(0, 1, (5, 3))
            fixed = rng.normal(0, 1, (5, 3))
            axis = rng.normal(0, 1, 3)
            E = RigidTransform(
                rotation=axis_angle_matrix(axis, rng.uniform(-np.pi, np.pi)),
                translation=rng.normal(0, 2, 3),
            )
            direct = rigid_align(moving, fixed)
            composed = rigid_align(E.apply(moving), fixed).compose(E)
            assert np.abs(direct.rotation - composed.rotation).max() < 1e-9
            assert np.abs(direct.translation - composed.translation).max() < 1e-9

    def test_collinear_degenerate(self):
        line = np.array([[0.0, 0, 0], [1, 0, 0], [2, 0, 0]])
        with pytest.raises(DegenerateConfiguration):
            rigid_align(line, line)

    def test_least_squares_optimality_vs_noise(self):
        rng = np.random.default_rng(17)
        moving = rng.normal(0, 1, (8, 3))
        R = axis_angle_matrix([1, 2, 3], 0.7)
        fixed = moving @ R.T + np.array([0.5, -1, 2]) + rng.normal(0, 0.01, (8, 3))
        T = rigid_align(moving, fixed)
        base = np.sum((T.apply(moving) - fixed) ** 2)
        for _ in range(50):
            axis = rng.normal(0, 1, 3)
            P = RigidTransform(
                rotation=axis_angle_matrix(axis, rng.normal(0, 0.05)),
                translation=rng.normal(0, 0.05, 3),
            )
            perturbed = P.compose(T)
            assert np.sum((perturbed.apply(moving) - fixed) ** 2) >= base - 1e-12


class TestSimilarityAlign:
    def test_recovers_construction(self):
        rng = np.random.default_rng(23)
        moving = rng.normal(0, 2, (7, 3))
        R = axis_angle_matrix([0.3, 1, -0.2], 0.9)
        scale = 1.37
        t = np.array([4.0, -1.0, 2.5])
        fixed = scale * (moving @ R.T) + t
        sim = similarity_align(moving, fixed)
        assert abs(sim.scale - scale) < 1e-9
        assert np.abs(sim.rotation - R).max() < 1e-9
        assert np.abs(sim.apply(moving) - fixed).max() < 1e-9

    def test_inverse(self):
        rng = np.random.default_rng(29)
        moving = rng.normal(0, 2, (5, 3))
        fixed = 0.8 * (moving @ axis_angle_matrix([0, 0, 1], 0.4).T) + 1.0
        sim = similarity_align(moving, fixed)
        assert np.abs(sim.inverse().apply(sim.apply(moving)) - moving).max() < 1e-9


class TestNormalizeHead:
    def _roles_and_sweep(self, n=50):
        from emarig.ema_io import CoilRoles

        rng = np.random.default_rng(31)
        positions = np.empty((n, 5, 3))
        positions[:, 0] = [0.0, 0, 5]
        positions[:, 1] = [2.0, 1, 5]
        positions[:, 2] = [-2.0, 1, 5]
        positions[:, 3] = rng.normal(0, 0.1, (n, 3)) + [1.0, 0, 0]
        positions[:, 4] = rng.normal(0, 0.1, (n, 3)) + [0.0, 1, 0]
        sweep = make_sweep(positions)
        roles = CoilRoles.from_channels(
            sweep.channels, reference=("C0", "C1", "C2"), tongue=("C3", "C4")
        )
        return sweep, roles

    def test_stationary_is_identity(self):
        sweep, roles = self._roles_and_sweep()
        out = normalize_head(sweep, roles)
        assert np.abs(out.positions - sweep.positions).max() < 1e-12

    def test_recovers_ground_truth(self):
        data = synthetic_motion(FixtureSpec(n_sweeps=1, frames_per_sweep=200))
        normalized = normalize_head(data.sweeps[0], data.roles)
        truth = data.truth_sweeps[0]
        assert np.abs(normalized.positions - truth.positions).max() < 1e-9

    def test_reference_coils_become_stationary(self):
        data = synthetic_motion(FixtureSpec(n_sweeps=1, frames_per_sweep=200))
        normalized = normalize_head(data.sweeps[0], data.roles)
        idx = [data.layout.channels.index(n) for n in data.roles.reference]
        ref = normalized.positions[:, idx, :]
        assert ref.std(axis=0).max() < 1e-9

    def test_idempotent(self):
        data = synthetic_motion(FixtureSpec(n_sweeps=1, frames_per_sweep=100))
        once = normalize_head(data.sweeps[0], data.roles)
        idx = [data.layout.channels.index(n) for n in data.roles.reference]
        again = normalize_head(once, data.roles, np.array(once.positions[0, idx, :]))
        assert np.abs(again.positions - once.positions).max() < 1e-12

    def test_preserves_intercoil_distances(self):
        data = synthetic_motion(FixtureSpec(n_sweeps=1, frames_per_sweep=150))
        sweep = data.sweeps[0]
        normalized = normalize_head(sweep, data.roles)

        def pairwise(p):
            return np.linalg.norm(p[:, :, None, :] - p[:, None, :, :], axis=-1)

        assert np.abs(
            pairwise(normalized.positions) - pairwise(sweep.positions)
        ).max() < 1e-9

    def test_orientation_vectors_rotate_with_head(self):
        data = synthetic_motion(FixtureSpec(n_sweeps=1, frames_per_sweep=120))
        normalized = normalize_head(data.sweeps[0], data.roles)
        truth = data.truth_sweeps[0]
        got = orientation_vector(normalized.phi, normalized.theta)
        want = orientation_vector(truth.phi, truth.theta)
        assert np.abs(got - want).max() < 1e-9

    def test_no_valid_reference_frame(self):
        from emarig.errors import NoValidReferenceFrame
        from emarig.ema_io import CoilRoles

        positions = np.ones((5, 4, 3))
        positions[:, 0] = np.nan  # one reference coil never valid
        sweep = make_sweep(positions)
        roles = CoilRoles.from_channels(
            sweep.channels, reference=("C0", "C1", "C2"), tongue=("C3",)
        )
        with pytest.raises(NoValidReferenceFrame):
            normalize_head(sweep, roles)


class TestFillDropouts:
    def test_no_invalid_is_identity(self):
        sweep = make_sweep(np.ones((5, 2, 3)))
        out = fill_dropouts(sweep)
        assert out is sweep

    def test_linear_midpoint(self):
        positions = np.ones((3, 1, 3))
        positions[0, 0] = 1.0
        positions[1, 0] = np.nan
        positions[2, 0] = 3.0
        out = fill_dropouts(make_sweep(positions))
        assert np.allclose(out.positions[1, 0], 2.0)

    def test_leading_gap_constant(self):
        positions = np.ones((4, 1, 3))
        positions[0, 0] = np.nan
        positions[1, 0] = np.nan
        positions[2, 0] = 7.0
        positions[3, 0] = 9.0
        out = fill_dropouts(make_sweep(positions))
        assert np.allclose(out.positions[0, 0], 7.0)
        assert np.allclose(out.positions[1, 0], 7.0)

    def test_all_invalid_channel(self):
        positions = np.full((3, 1, 3), np.nan)
        with pytest.raises(AllInvalidChannel):
            fill_dropouts(make_sweep(positions))

    def test_rms_ceiling(self):
        positions = np.ones((3, 1, 3))
        positions[1, 0] = 5.0
        sweep = make_sweep(positions)
        rms = np.array(sweep.rms)
        rms[1, 0] = 99.0
        sweep = sweep.with_arrays(rms=rms)
        out = fill_dropouts(sweep, rms_ceiling=10.0)
        assert np.allclose(out.positions[1, 0], 1.0)  # interpolated, not 5.0


class TestSmooth:
    def test_constant_preserved_exactly(self):
        positions = np.full((30, 2, 3), 1.2345678901234567)
        sweep = make_sweep(positions)
        out = smooth(sweep, SmoothingSpec(kind="moving_average", window_frames=9))
        assert np.array_equal(out.positions, sweep.positions)

    def test_kind_none_identity(self):
        sweep = make_sweep(np.random.default_rng(0).normal(0, 1, (20, 1, 3)))
        assert smooth(sweep, SmoothingSpec(kind="none")) is sweep

    def test_impulse_against_convolution_oracle(self):
        n = 31
        positions = np.zeros((n, 1, 3))
        positions[15, 0, 0] = 1.0
        sweep = make_sweep(positions)
        out = smooth(sweep, SmoothingSpec(kind="moving_average", window_frames=5))
        assert np.allclose(out.positions[13:18, 0, 0], 0.2, atol=1e-12)
        assert np.allclose(out.positions[:13, 0, 0], 0.0, atol=1e-12)

        # independent oracle: explicit reflection padding + convolution
        signal = positions[:, 0, 0]
        padded = np.pad(signal, 2, mode="reflect")
        expect = np.convolve(padded, np.ones(5) / 5.0, mode="valid")
        assert np.allclose(out.positions[:, 0, 0], expect, atol=1e-12)

    def test_savitzky_golay_matches_scipy_oracle(self):
        from scipy.signal import savgol_filter

        rng = np.random.default_rng(37)
        positions = rng.normal(0, 1, (64, 2, 3))
        sweep = make_sweep(positions)
        spec = SmoothingSpec(kind="savitzky_golay", window_frames=11, polynomial_order=3)
        out = smooth(sweep, spec)
        expect = savgol_filter(positions, 11, 3, axis=0, mode="mirror")
        assert np.allclose(out.positions, expect, atol=1e-9)

    def test_window_too_large(self):
        sweep = make_sweep(np.zeros((5, 1, 3)))
        with pytest.raises(WindowTooLarge):
            smooth(sweep, SmoothingSpec(kind="moving_average", window_frames=7))

    def test_length_unchanged(self):
        rng = np.random.default_rng(41)
        sweep = make_sweep(rng.normal(0, 1, (50, 3, 3)))
        out = smooth(sweep, SmoothingSpec(kind="moving_average", window_frames=9))
        assert out.n_frames == sweep.n_frames

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            SmoothingSpec(kind="moving_average", window_frames=4)
        with pytest.raises(ValueError):
            SmoothingSpec(kind="savitzky_golay", window_frames=5, polynomial_order=5)
        with pytest.raises(ValueError):
            SmoothingSpec(kind="boxcar")


def test_prepare_pipeline_order(small_fixture):
    prepared = prepare(small_fixture)
    assert len(prepared) == 2
    for sweep in prepared:
        assert sweep.valid_mask().all()
