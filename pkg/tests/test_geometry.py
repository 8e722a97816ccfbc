import numpy as np
import pytest

from swarmloc.geometry import (
    ConfigurationError,
    DEFAULT_ANCHOR_POSITIONS,
    LissajousParams,
    TraceParseError,
    lissajous_state,
    lissajous_states,
    load_trace,
    sample_lissajous_params,
    sample_random_swarm,
    scale_to_cube,
)

from conftest import make_swarm


class TestSampleRandomSwarm:
    def test_paper_anchor_layout_accepted(self):
        swarm = make_swarm(0)
        assert swarm.n == 8
        assert swarm.anchor_count == 4
        np.testing.assert_array_equal(swarm.positions[:4], DEFAULT_ANCHOR_POSITIONS)
        np.testing.assert_array_equal(swarm.velocities[:4], 0.0)

    def test_zero_pos_std_collapses_to_mean(self):
        swarm = sample_random_swarm(
            6, 4, 500.0, 0.0, 10.0, DEFAULT_ANCHOR_POSITIONS, 1
        )
        np.testing.assert_allclose(swarm.positions[4:], 500.0)

    def test_same_seed_bit_identical(self):
        a = make_swarm(7)
        b = make_swarm(7)
        np.testing.assert_array_equal(a.positions, b.positions)
        np.testing.assert_array_equal(a.velocities, b.velocities)

    def test_different_seeds_differ(self):
        a = make_swarm(7)
        b = make_swarm(8)
        assert not np.array_equal(a.positions, b.positions)

    def test_coplanar_anchors_rejected(self):
        flat = np.array(
            [[0, 0, 0], [1000, 0, 0], [0, 1000, 0], [1000, 1000, 0]], dtype=float
        )
        with pytest.raises(ConfigurationError):
            sample_random_swarm(8, 4, 500.0, 100.0, 10.0, flat, 0)

    def test_anchor_count_mismatch_rejected(self):
        with pytest.raises(ConfigurationError):
            sample_random_swarm(8, 3, 500.0, 100.0, 10.0, DEFAULT_ANCHOR_POSITIONS, 0)

    def test_all_anchor_swarm_rejected(self):
        with pytest.raises(ConfigurationError):
            sample_random_swarm(4, 4, 500.0, 100.0, 10.0, DEFAULT_ANCHOR_POSITIONS, 0)


class TestLissajous:
    def test_origin_phase(self):
        params = LissajousParams(
            amplitude=np.ones((1, 3)), rate=np.ones((1, 3)), phase=np.zeros((1, 3))
        )
        pos, vel = lissajous_state(params, 0, 0.0)
        np.testing.assert_allclose(pos, 0.0)
        np.testing.assert_allclose(vel, 1.0)

    def test_quarter_phase(self):
        params = LissajousParams(
            amplitude=np.full((1, 3), 2.5),
            rate=np.ones((1, 3)),
            phase=np.full((1, 3), np.pi / 2),
        )
        pos, vel = lissajous_state(params, 0, 0.0)
        np.testing.assert_allclose(pos, 2.5)
        np.testing.assert_allclose(vel, 0.0, atol=1e-12)

    def test_velocity_matches_finite_difference(self):
        rng = np.random.default_rng(3)
        h = 1e-4
        for _ in range(100):
            params = sample_lissajous_params(3, rng)
            t = float(rng.uniform(0, 100))
            _, vel = lissajous_states(params, t)
            pp, _ = lissajous_states(params, t + h)
            pm, _ = lissajous_states(params, t - h)
            fd = (pp - pm) / (2 * h)
            np.testing.assert_allclose(vel, fd, rtol=1e-5, atol=1e-6)

    def test_negative_amplitude_rejected(self):
        with pytest.raises(ConfigurationError):
            LissajousParams(
                amplitude=-np.ones((1, 3)), rate=np.ones((1, 3)), phase=np.zeros((1, 3))
            )


def _write_trace(path, rows):
    path.write_text("".join(f"{t},{uid},{x},{y},{z}\n" for t, uid, x, y, z in rows))


class TestLoadTrace:
    def test_identity_when_already_in_cube(self, tmp_path):
        f = tmp_path / "trace.txt"
        rows = [
            (0.0, 1, 0.0, 0.0, 0.0),
            (0.0, 2, 1000.0, 1000.0, 1000.0),
        ]
        _write_trace(f, rows)
        snaps = load_trace(f, 1000.0, np.array([500.0, 500.0, 500.0]))
        np.testing.assert_allclose(snaps[0].positions[0], [0, 0, 0], atol=1e-9)
        np.testing.assert_allclose(snaps[0].positions[1], [1000, 1000, 1000], atol=1e-9)

    def test_single_point_maps_to_center(self, tmp_path):
        f = tmp_path / "trace.txt"
        _write_trace(f, [(0.0, 1, 123.0, -7.0, 9.0)])
        snaps = load_trace(f, 1000.0, np.array([500.0, 500.0, 500.0]))
        np.testing.assert_allclose(snaps[0].positions[0], [500, 500, 500])

    def test_two_point_scaling(self, tmp_path):
        # 2 km apart mapped into a 1 km cube: distance becomes exactly 1 km
        f = tmp_path / "trace.txt"
        _write_trace(f, [(0.0, 1, 0.0, 0.0, 0.0), (0.0, 2, 2000.0, 0.0, 0.0)])
        snaps = load_trace(f, 1000.0, np.array([500.0, 500.0, 500.0]))
        d = np.linalg.norm(snaps[0].positions[0] - snaps[0].positions[1])
        assert abs(d - 1000.0) < 1e-9

    def test_bounding_box_fits_cube(self, tmp_path):
        rng = np.random.default_rng(0)
        rows = []
        for t in range(5):
            for uid in range(4):
                x, y, z = rng.uniform(-3000, 9000, size=3)
                rows.append((float(t), uid, x, y, z))
        f = tmp_path / "trace.txt"
        _write_trace(f, rows)
        center = np.array([500.0, 500.0, 500.0])
        snaps = load_trace(f, 1000.0, center)
        pts = np.concatenate([s.positions for s in snaps])
        assert (pts >= center - 500.0 - 1e-9).all()
        assert (pts <= center + 500.0 + 1e-9).all()

    def test_malformed_row_reports_line(self, tmp_path):
        f = tmp_path / "trace.txt"
        f.write_text("0,1,0,0,0\nnot-a-row\n")
        with pytest.raises(TraceParseError, match=":2"):
            load_trace(f, 1000.0, np.zeros(3))

    def test_too_few_ids_rejected(self, tmp_path):
        f = tmp_path / "trace.txt"
        _write_trace(f, [(0.0, 1, 0.0, 0.0, 0.0), (0.0, 2, 1.0, 0.0, 0.0)])
        with pytest.raises(ConfigurationError):
            load_trace(f, 1000.0, np.zeros(3), expected_count=4)

    def test_velocities_from_finite_differences(self, tmp_path):
        # constant-velocity motion along x at 5 m/s, already inside the cube
        f = tmp_path / "trace.txt"
        rows = []
        for step in range(4):
            rows.append((float(step), 1, 5.0 * step, 0.0, 0.0))
            rows.append((float(step), 2, 1000.0, 1000.0, 1000.0))
        _write_trace(f, rows)
        snaps = load_trace(f, 1000.0, np.array([500.0, 500.0, 500.0]))
        for snap in snaps:
            np.testing.assert_allclose(snap.velocities[0], [5.0, 0.0, 0.0], atol=1e-9)

    def test_degenerate_axis_uses_similarity(self):
        pts = np.array([[0.0, 0.0, 0.0], [2000.0, 0.0, 0.0]])
        scale, offset = scale_to_cube(pts, 1000.0, np.array([0.0, 0.0, 0.0]))
        assert scale == 0.5
        mapped = scale * pts + offset
        np.testing.assert_allclose(mapped[1] - mapped[0], [1000.0, 0.0, 0.0])
