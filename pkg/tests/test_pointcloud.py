"""Tests for PLY I/O, unit-cube normalisation, farthest point sampling and kNN grouping."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pcjscc.pointcloud import (DegenerateExtentError, PlyError, PointCloud, fps, group_batch, knn_group,
                               knn_indices, load_ply, normalize_bbox, save_ply)

HEADER = "ply\nformat {fmt} 1.0\nelement vertex {n}\n{props}end_header\n"
XYZ = "property float x\nproperty float y\nproperty float z\n"


def write(tmp_path, text, name="c.ply"):
    p = tmp_path / name
    p.write_bytes(text.encode() if isinstance(text, str) else text)
    return p


# =============================================================================
# PointCloud
# =============================================================================

class TestPointCloud:
    @pytest.mark.parametrize("pts", [np.zeros((0, 3)), np.zeros((4, 2)), np.array([[0.0, np.nan, 1.0]]),
                                     np.array([[np.inf, 0.0, 0.0]])])
    def test_rejects_invalid_points(self, pts):
        with pytest.raises(ValueError):
            PointCloud(pts)

    def test_records_bbox(self):
        pc = PointCloud(np.array([[0.0, 1.0, -2.0], [3.0, -1.0, 5.0]]))
        np.testing.assert_array_equal(pc.bbox_min, [0.0, -1.0, -2.0])
        np.testing.assert_array_equal(pc.bbox_max, [3.0, 1.0, 5.0])
        assert len(pc) == 2


# =============================================================================
# PLY
# =============================================================================

class TestPly:
    def test_single_ascii_point(self, tmp_path):
        pc = load_ply(write(tmp_path, HEADER.format(fmt="ascii", n=1, props=XYZ) + "0 0 0\n"))
        assert len(pc) == 1
        np.testing.assert_array_equal(pc.points, [[0.0, 0.0, 0.0]])

    def test_binary_round_trip_is_bit_identical(self, tmp_path, rng):
        pts = rng.normal(size=(2048, 3)).astype(np.float32).astype(np.float64)
        save_ply(pts, tmp_path / "b.ply")
        np.testing.assert_array_equal(load_ply(tmp_path / "b.ply").points, pts)

    def test_ascii_round_trip_to_six_decimals(self, tmp_path, rng):
        pts = rng.uniform(-10, 10, size=(300, 3))
        save_ply(PointCloud(pts), tmp_path / "a.ply", binary=False)
        back = load_ply(tmp_path / "a.ply").points
        np.testing.assert_allclose(back, pts.astype(np.float32), atol=5e-7 + 1e-6)

    def test_extra_properties_and_elements(self, tmp_path):
        props = "property uchar red\nproperty double x\nproperty double y\nproperty double z\nproperty int id\n"
        text = ("ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 2\n" + props
                + "element face 1\nproperty list uchar int vertex_indices\nend_header\n"
                + "255 1 2 3 7\n0 4 5 6 8\n3 0 1 1\n")
        np.testing.assert_array_equal(load_ply(write(tmp_path, text)).points, [[1, 2, 3], [4, 5, 6]])

    def test_binary_with_mixed_types(self, tmp_path):
        dtype = np.dtype([("x", "<f8"), ("flag", "u1"), ("y", "<f8"), ("z", "<f4")])
        rec = np.zeros(3, dtype=dtype)
        rec["x"], rec["y"], rec["z"] = [1, 2, 3], [4, 5, 6], [7, 8, 9]
        props = "property double x\nproperty uchar flag\nproperty double y\nproperty float z\n"
        raw = HEADER.format(fmt="binary_little_endian", n=3, props=props).encode() + rec.tobytes()
        np.testing.assert_array_equal(load_ply(write(tmp_path, raw)).points, [[1, 4, 7], [2, 5, 8], [3, 6, 9]])

    @pytest.mark.parametrize("text,match", [
        ("plx\nformat ascii 1.0\nend_header\n", "magic"),
        ("ply\nformat ascii 1.0\nelement vertex 1\n" + XYZ, "end_header"),
        ("ply\nformat binary_big_endian 1.0\nelement vertex 1\n" + XYZ + "end_header\n", "format"),
        ("ply\nelement vertex 1\n" + XYZ + "end_header\n0 0 0\n", "format"),
        ("ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nend_header\n0 0\n",
         "'z'"),
        ("ply\nformat ascii 1.0\nelement vertex 2\n" + XYZ + "end_header\n0 0 0\n", "truncated"),
        ("ply\nformat ascii 1.0\nelement vertex 1\n" + XYZ + "end_header\n0 a 0\n", "numeric"),
        ("ply\nformat ascii 1.0\nelement vertex 1\n" + XYZ + "end_header\n0 0\n", "values"),
        ("ply\nformat ascii 1.0\nproperty float x\nend_header\n", "before any element"),
        ("ply\nformat ascii 1.0\nelement vertex 1\nproperty quad x\nend_header\n", "property"),
        ("ply\nformat ascii 1.0\nelement vertex x\nend_header\n", "element"),
        ("ply\nformat ascii 1.0\nbogus\nend_header\n", "keyword"),
        ("ply\nformat ascii 1.0\nelement face 1\nproperty int a\nend_header\n1\n", "vertex"),
    ])
    def test_malformed_headers_raise_with_offset(self, tmp_path, text, match):
        with pytest.raises(PlyError, match=match) as err:
            load_ply(write(tmp_path, text))
        assert err.value.offset >= 0 and "at byte" in str(err.value)

    def test_truncated_binary_payload(self, tmp_path):
        raw = HEADER.format(fmt="binary_little_endian", n=4, props=XYZ).encode() + b"\0" * 20
        with pytest.raises(PlyError, match="truncated") as err:
            load_ply(write(tmp_path, raw))
        assert err.value.offset == len(raw)

    def test_error_offset_points_at_bad_vertex(self, tmp_path):
        head = HEADER.format(fmt="ascii", n=2, props=XYZ)
        with pytest.raises(PlyError) as err:
            load_ply(write(tmp_path, head + "1 2 3\n4 x 6\n"))
        assert err.value.offset == len(head) + len("1 2 3\n")

    def test_missing_file_is_oserror(self, tmp_path):
        with pytest.raises(OSError):
            load_ply(tmp_path / "absent.ply")


# =============================================================================
# Normalisation
# =============================================================================

class TestNormalize:
    def test_two_corners(self):
        out = normalize_bbox(PointCloud(np.array([[0.0, 0, 0], [2, 2, 2]])))
        np.testing.assert_array_equal(out.points, [[0, 0, 0], [1, 1, 1]])

    def test_unit_cube_cloud_unchanged(self, rng):
        pts = np.vstack([np.zeros(3), np.ones(3), rng.uniform(size=(20, 3))])
        np.testing.assert_array_equal(normalize_bbox(PointCloud(pts)).points, pts)

    def test_degenerate_extent(self):
        with pytest.raises(DegenerateExtentError):
            normalize_bbox(PointCloud(np.ones((5, 3))))

    def test_inverse_mapping_and_chaining(self, rng):
        pts = rng.normal(size=(50, 3)) * [10, 1, 3] + 7
        once = normalize_bbox(PointCloud(pts))
        twice = normalize_bbox(PointCloud(once.points[:25], offset=once.offset, scale=once.scale))
        np.testing.assert_allclose(once.denormalized(), pts, atol=1e-12)
        np.testing.assert_allclose(twice.denormalized(), pts[:25], atol=1e-12)

    @given(arrays(np.float64, st.tuples(st.integers(2, 30), st.just(3)),
                  elements=st.floats(-1e3, 1e3, allow_nan=False)))
    @settings(max_examples=60, deadline=None)
    def test_lands_in_unit_cube_with_uniform_scale(self, pts):
        if np.ptp(pts, axis=0).max() < 1e-6:
            return
        out = normalize_bbox(PointCloud(pts))
        assert out.points.min() >= 0.0 and out.points.max() <= 1.0 + 1e-12
        assert np.isclose(np.ptp(out.points, axis=0).max(), 1.0)
        # uniform scaling preserves pairwise distance ratios
        d_in = np.linalg.norm(pts[0] - pts[1:], axis=1)
        d_out = np.linalg.norm(out.points[0] - out.points[1:], axis=1)
        np.testing.assert_allclose(d_out * out.scale, d_in, rtol=1e-9, atol=1e-9)


# =============================================================================
# FPS
# =============================================================================

def fps_oracle(pts, m, start):
    """Brute-force greedy max-min: evaluate every candidate's distance to the chosen set."""
    chosen = [start]
    while len(chosen) < m:
        best, best_d = None, -1.0
        for i in range(len(pts)):
            d = min(float(np.sum((pts[i] - pts[j]) ** 2)) for j in chosen)
            if d > best_d:
                best, best_d = i, d
        chosen.append(best)
    return chosen


class TestFps:
    LINE = np.column_stack([np.arange(11.0), np.zeros(11), np.zeros(11)])

    def test_line_two_points(self):
        assert set(fps(self.LINE, 2, start=0)) == {0, 10}

    def test_line_three_points(self):
        assert list(fps(self.LINE, 3, start=0)) == [0, 10, 5]

    def test_all_points(self, rng):
        pts = rng.normal(size=(17, 3))
        assert sorted(fps(pts, 17)) == list(range(17))

    @pytest.mark.parametrize("m", [0, 18])
    def test_bad_m(self, rng, m):
        with pytest.raises(ValueError):
            fps(rng.normal(size=(17, 3)), m)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_brute_force(self, seed):
        pts = np.random.default_rng(seed).normal(size=(40, 3))
        assert list(fps(pts, 8, start=3)) == fps_oracle(pts, 8, 3)

    def test_seeded_start_is_deterministic(self, rng):
        pts = rng.normal(size=(30, 3))
        np.testing.assert_array_equal(fps(pts, 5, seed=9), fps(pts, 5, seed=9))

    def test_default_start_is_nearest_centroid(self, rng):
        pts = rng.normal(size=(30, 3))
        assert fps(pts, 1)[0] == np.argmin(np.linalg.norm(pts - pts.mean(0), axis=1))

    def test_permutation_invariant_given_start(self, rng):
        pts = rng.normal(size=(40, 3))
        perm = rng.permutation(40)
        a = fps(pts, 10, start=0)
        b = perm[fps(pts[perm], 10, start=int(np.argsort(perm)[0]))]
        np.testing.assert_array_equal(a, b)


# =============================================================================
# kNN grouping
# =============================================================================

class TestGrouping:
    def test_single_patch_holds_everything(self, rng):
        pts = rng.normal(size=(20, 3))
        g = knn_group(pts, 1, 20)
        assert sorted(g.member_indices[0]) == list(range(20))
        np.testing.assert_array_equal(g.centers[0], pts[fps(pts, 1)[0]])

    def test_center_is_own_member_at_origin(self, rng):
        g = knn_group(rng.normal(size=(64, 3)), 8, 8)
        np.testing.assert_array_equal(g.relative_coords[:, 0], np.zeros((8, 3)))
        np.testing.assert_array_equal(g.member_indices[:, 0], g.center_indices)

    @pytest.mark.parametrize("seed", range(3))
    def test_knn_matches_exhaustive_oracle(self, seed):
        r = np.random.default_rng(seed)
        pts = r.normal(size=(64, 3))
        g = knn_group(pts, 8, 8)
        for c, members in zip(g.center_indices, g.member_indices):
            dist = [float(np.sum((pts[c] - p) ** 2)) for p in pts]
            oracle = sorted(range(64), key=lambda i: (dist[i], i))[:8]
            assert list(members) == oracle
        np.testing.assert_allclose(g.relative_coords, pts[g.member_indices] - g.centers[:, None])

    def test_invariants(self, rng):
        g = knn_group(rng.normal(size=(100, 3)), 10)
        assert g.member_indices.shape == (10, 10)
        assert np.all((g.center_indices >= 0) & (g.center_indices < 100))

    @pytest.mark.parametrize("t,k", [(5, 21), (21, 1)])
    def test_parameter_errors(self, rng, t, k):
        with pytest.raises(ValueError):
            knn_group(rng.normal(size=(20, 3)), t, k)

    def test_knn_ties_go_to_lower_index(self):
        pts = np.array([[1.0, 0, 0], [-1.0, 0, 0], [0, 1.0, 0], [0, 0, 0]])
        np.testing.assert_array_equal(knn_indices(pts, np.zeros((1, 3)), 3), [[3, 0, 1]])

    def test_group_batch_shapes(self, rng):
        centers, rel = group_batch(rng.normal(size=(3, 32, 3)), 4)
        assert centers.shape == (3, 4, 3) and rel.shape == (3, 4, 8, 3)

    def test_patches_cover_all_points_on_grid(self):
        pts = np.array(list(itertools.product(range(4), repeat=3)), dtype=float)
        g = knn_group(pts, 8, 8)
        assert len(np.unique(g.member_indices)) >= 40
