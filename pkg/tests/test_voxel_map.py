import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptive_lio.geometry import Pose, exp_so3
from adaptive_lio.voxel_map import (
    DegeneratePlane,
    StaleSnapshot,
    TooFewPoints,
    UpdateOutcome,
    VoxelMap,
    fit_plane,
    frame_gate,
    quantize,
)


class TestQuantize:
    def test_unit_cell(self):
        assert quantize(np.array([0.1, 0.2, 0.3]), 1.0) == (0, 0, 0)

    def test_negative_floor(self):
        assert quantize(np.array([-0.1, 0.0, 0.0]), 1.0) == (-1, 0, 0)

    def test_fractional_side(self):
        assert quantize(np.array([2.5, -3.5, 0.0]), 0.5) == (5, -7, 0)

    def test_batch_matches_scalar(self):
        rng = np.random.default_rng(0)
        pts = rng.uniform(-10, 10, size=(100, 3))
        keys = quantize(pts, 0.5)
        for i in range(100):
            assert tuple(keys[i]) == quantize(pts[i], 0.5)

    def test_nonpositive_side_rejected(self):
        with pytest.raises(ValueError):
            quantize(np.zeros(3), 0.0)


class TestFitPlane:
    def test_exact_horizontal_plane(self):
        rng = np.random.default_rng(1)
        pts = np.column_stack([rng.uniform(-1, 1, 8), rng.uniform(-1, 1, 8),
                               np.full(8, 2.0)])
        centroid, cov, normal, planarity = fit_plane(pts)
        np.testing.assert_allclose(np.abs(normal), [0, 0, 1], atol=1e-9)
        assert centroid[2] == pytest.approx(2.0, abs=1e-9)
        assert planarity > 9

    def test_identical_points_degenerate(self):
        with pytest.raises(DegeneratePlane):
            fit_plane(np.ones((6, 3)))

    def test_too_few_points(self):
        with pytest.raises(TooFewPoints):
            fit_plane(np.random.default_rng(2).normal(size=(5, 3)))

    def test_noisy_oblique_plane_normal(self):
        # 100 samples of x+y+z=1 with sigma=0.01; analytic normal known.
        rng = np.random.default_rng(3)
        truth = np.array([1.0, 1.0, 1.0]) / np.sqrt(3)
        a = rng.uniform(-1, 1, 100)
        b = rng.uniform(-1, 1, 100)
        u = np.array([1.0, -1.0, 0.0]) / np.sqrt(2)
        v = np.cross(truth, u)
        base = truth / 3.0  # a point on the plane
        pts = base + np.outer(a, u) + np.outer(b, v) + \
            np.outer(rng.normal(0, 0.01, 100), truth)
        _, _, normal, _ = fit_plane(pts)
        angle = np.degrees(np.arccos(np.clip(abs(normal @ truth), -1, 1)))
        assert angle < 1.0

    def test_normal_sign_convention(self):
        rng = np.random.default_rng(4)
        pts = np.column_stack([rng.uniform(-1, 1, 10), rng.uniform(-1, 1, 10),
                               np.zeros(10)])
        _, _, normal, _ = fit_plane(pts)
        assert normal[np.argmax(np.abs(normal))] > 0

    def test_normal_equivariant_under_rotation(self):
        rng = np.random.default_rng(5)
        pts = np.column_stack([rng.uniform(-1, 1, 30), rng.uniform(-1, 1, 30),
                               rng.normal(0, 0.001, 30)])
        _, _, n0, _ = fit_plane(pts)
        R = exp_so3(np.array([0.4, -0.2, 0.9]))
        _, _, n1, _ = fit_plane(pts @ R.T)
        back = R.T @ n1
        np.testing.assert_allclose(np.abs(back @ n0), 1.0, atol=1e-9)


class TestFrameGate:
    def test_below_threshold_excluded(self):
        assert frame_gate(0.2, 0.3) is False

    def test_boundary_admits(self):
        assert frame_gate(0.3, 0.3) is True

    def test_above_admits(self):
        assert frame_gate(0.9, 0.3) is True


def _fresh_map(**kw):
    defaults = dict(side=1.0, capacity=2**16, min_points_for_plane=6, beta=0.9)
    defaults.update(kw)
    return VoxelMap(**defaults)


class TestInsert:
    def test_create_initializes_confidence(self):
        m = _fresh_map()
        outcome = m.insert_point(np.array([0.5, 0.5, 0.5]), 0.7)
        assert outcome is UpdateOutcome.CREATED
        voxel = m.voxels()[0]
        assert voxel.q_v == pytest.approx(0.7)
        assert voxel.point_count == 1

    def test_merge_blends_confidence(self):
        m = _fresh_map()
        m.insert_point(np.array([0.2, 0.2, 0.2]), 1.0)
        outcome = m.insert_point(np.array([0.7, 0.7, 0.7]), 0.5)
        assert outcome is UpdateOutcome.MERGED
        assert m.voxels()[0].q_v == pytest.approx(0.95)

    def test_collision_replaces(self):
        # capacity 1: every key occupies the single slot.
        m = _fresh_map(capacity=1)
        m.insert_point(np.array([0.5, 0.5, 0.5]), 0.9)
        outcome = m.insert_point(np.array([5.5, 0.5, 0.5]), 0.4)
        assert outcome is UpdateOutcome.REPLACED
        voxel = m.voxels()[0]
        assert voxel.key == (5, 0, 0)
        assert voxel.q_v == pytest.approx(0.4)
        assert voxel.point_count == 1

    def test_per_voxel_gate_rejects(self):
        m = _fresh_map(per_voxel_gate=True, delta_margin=0.3)
        m.insert_point(np.array([0.5, 0.5, 0.5]), 0.9)
        outcome = m.insert_point(np.array([0.6, 0.6, 0.6]), 0.5)
        assert outcome is UpdateOutcome.REJECTED
        assert m.voxels()[0].point_count == 1
        # within the margin the merge goes through
        assert m.insert_point(np.array([0.6, 0.6, 0.6]), 0.61) is UpdateOutcome.MERGED

    def test_confidence_contraction_closed_form(self):
        # q_k = s + beta^k (q0 - s), exactly.
        m = _fresh_map(beta=0.9)
        m.insert_point(np.array([0.5, 0.5, 0.5]), 1.0)
        q0, s = 1.0, 0.5
        for k in range(1, 51):
            m.insert_point(np.array([0.5, 0.5, 0.5]), s)
            expected = s + 0.9**k * (q0 - s)
            assert m.voxels()[0].q_v == pytest.approx(expected, abs=1e-15)

    @given(st.lists(st.floats(min_value=1e-6, max_value=1.0), min_size=1, max_size=60),
           st.floats(min_value=0.0, max_value=1.0))
    @settings(max_examples=50, deadline=None)
    def test_confidence_stays_in_unit_interval(self, scores, beta):
        m = _fresh_map(beta=beta)
        for s in scores:
            m.insert_point(np.array([0.5, 0.5, 0.5]), s)
        assert 0.0 < m.voxels()[0].q_v <= 1.0

    def test_batch_insert_equals_sequential(self):
        rng = np.random.default_rng(6)
        pts = rng.uniform(-3, 3, size=(400, 3))
        m1 = _fresh_map(refit_max_points=20)
        for p in pts:
            m1.insert_point(p, 0.8)
        m2 = _fresh_map(refit_max_points=20)
        counts = m2.insert_batch(pts, 0.8)
        assert counts["created"] + counts["merged"] + counts["replaced"] == 400
        assert m1.to_csv_bytes() == m2.to_csv_bytes()
        for v1, v2 in zip(m1.voxels(), m2.voxels()):
            np.testing.assert_allclose(v1.mean, v2.mean, atol=1e-12)
            np.testing.assert_allclose(v1.m2, v2.m2, atol=1e-12)

    def test_geometry_freezes_after_refit_budget(self):
        m = _fresh_map(refit_max_points=10)
        rng = np.random.default_rng(7)
        pts = np.column_stack([rng.uniform(0, 1, 30), rng.uniform(0, 1, 30),
                               np.zeros(30)])
        for p in pts[:10]:
            m.insert_point(p, 0.5)
        frozen_centroid = m.voxels()[0].centroid.copy()
        for p in pts[10:]:
            m.insert_point(p, 0.5)
        voxel = m.voxels()[0]
        assert voxel.frozen
        assert voxel.point_count == 30
        np.testing.assert_array_equal(voxel.centroid, frozen_centroid)


class TestQuery:
    def _planar_points(self, rng, key, n=10, side=1.0):
        base = (np.array(key) + 0.5) * side
        pts = np.tile(base, (n, 1))
        pts[:, 0] += rng.uniform(-0.45, 0.45, n)
        pts[:, 1] += rng.uniform(-0.45, 0.45, n)
        return pts

    def test_query_after_create(self):
        m = _fresh_map()
        rng = np.random.default_rng(8)
        pts = self._planar_points(rng, (0, 0, 0))
        for p in pts:
            m.insert_point(p, 0.9)
        voxel = m.query(pts[0])
        assert voxel is not None
        assert voxel.key == (0, 0, 0)

    def test_query_empty_map(self):
        assert _fresh_map().query(np.zeros(3)) is None

    def test_query_below_min_points_misses(self):
        m = _fresh_map()
        m.insert_point(np.array([0.5, 0.5, 0.5]), 0.9)
        assert m.query(np.array([0.5, 0.5, 0.5])) is None

    def test_neighbor_fallback(self):
        m = _fresh_map(neighbor_fallback=True)
        rng = np.random.default_rng(9)
        for p in self._planar_points(rng, (0, 0, 0)):
            m.insert_point(p, 0.9)
        hit = m.query(np.array([1.5, 0.5, 0.5]))  # one voxel over in +x
        assert hit is not None and hit.key == (0, 0, 0)
        m.neighbor_fallback = False
        assert m.query(np.array([1.5, 0.5, 0.5])) is None

    def test_snapshot_goes_stale_on_mutation(self):
        m = _fresh_map()
        snap = m.snapshot()
        m.insert_point(np.array([0.5, 0.5, 0.5]), 0.9)
        with pytest.raises(StaleSnapshot):
            snap.query(np.zeros(3))


class TestSerialization:
    def test_csv_digest_stable(self):
        m = _fresh_map()
        rng = np.random.default_rng(10)
        m.insert_batch(rng.uniform(-2, 2, size=(100, 3)), 0.7)
        assert m.digest() == m.digest()

    def test_ply_header_and_size(self, tmp_path):
        m = _fresh_map()
        rng = np.random.default_rng(11)
        m.insert_batch(rng.uniform(-2, 2, size=(100, 3)), 0.7)
        path = tmp_path / "map.ply"
        m.export_ply(str(path))
        blob = path.read_bytes()
        header, _, body = blob.partition(b"end_header\n")
        assert b"format binary_little_endian 1.0" in header
        n = len(m.voxels())
        assert f"element vertex {n}".encode() in header
        assert len(body) == n * 7 * 4

    def test_csv_dump_columns(self, tmp_path):
        m = _fresh_map()
        m.insert_point(np.array([0.5, 0.5, 0.5]), 0.7)
        path = tmp_path / "map.csv"
        m.export_csv(str(path))
        lines = path.read_text().splitlines()
        assert lines[0] == "kx,ky,kz,cx,cy,cz,nx,ny,nz,count,q_v,planarity"
        assert len(lines) == 2
