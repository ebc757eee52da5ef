import numpy as np
import pytest
from scipy.spatial import cKDTree

from lodsplat.cameras import look_at_camera
from lodsplat.lod import (
    EmptyInputError,
    bounding_sphere,
    build_levels,
    per_view_dmax,
    poisson_disk_indices,
    sample_mesh,
)


def brute_force_poisson(points, spacing):
    """Exhaustive-distance oracle for the greedy thinning."""
    accepted = []
    for i, p in enumerate(points):
        if all(np.sum((p - points[j]) ** 2) >= spacing**2 for j in accepted):
            accepted.append(i)
    return np.asarray(accepted, dtype=np.int64)


def unit_square_mesh():
    vertices = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], dtype=float)
    faces = np.array([[0, 1, 2], [0, 2, 3]])
    colors = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 0]], dtype=float)
    return vertices, faces, colors


class TestPoissonDisk:
    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(0)
        pts = rng.uniform(0, 1, size=(300, 3))
        for spacing in (0.05, 0.15, 0.4):
            np.testing.assert_array_equal(
                poisson_disk_indices(pts, spacing), brute_force_poisson(pts, spacing)
            )

    def test_min_distance_holds(self):
        rng = np.random.default_rng(1)
        pts = rng.uniform(0, 2, size=(1000, 3))
        keep = poisson_disk_indices(pts, 0.2)
        kept = pts[keep]
        tree = cKDTree(kept)
        dists, _ = tree.query(kept, k=2)
        assert dists[:, 1].min() >= 0.2

    def test_deterministic(self):
        rng = np.random.default_rng(2)
        pts = rng.uniform(0, 1, size=(500, 3))
        a = poisson_disk_indices(pts, 0.1)
        b = poisson_disk_indices(pts, 0.1)
        np.testing.assert_array_equal(a, b)


class TestSampleMesh:
    def test_unit_square_density_and_spacing(self):
        vertices, faces, colors = unit_square_mesh()
        pts, cols = sample_mesh(vertices, faces, colors, spacing=0.1, rng=np.random.default_rng(3))
        assert 60 <= len(pts) <= 100
        d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
        np.fill_diagonal(d, np.inf)
        assert d.min() >= 0.07
        assert np.all((cols >= 0) & (cols <= 1 + 1e-12))

    def test_degenerate_mesh_raises(self):
        vertices = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]], dtype=float)
        faces = np.array([[0, 1, 2]])
        with pytest.raises(EmptyInputError):
            sample_mesh(vertices, faces, np.zeros((3, 3)), spacing=0.1)

    def test_spacing_larger_than_mesh(self):
        vertices, faces, colors = unit_square_mesh()
        pts, _ = sample_mesh(vertices, faces, colors, spacing=5.0, rng=np.random.default_rng(4))
        assert len(pts) == 1

    def test_colors_interpolated_on_constant_mesh(self):
        vertices, faces, _ = unit_square_mesh()
        colors = np.full((4, 3), 0.25)
        _, cols = sample_mesh(vertices, faces, colors, spacing=0.2, rng=np.random.default_rng(5))
        np.testing.assert_allclose(cols, 0.25, atol=1e-12)


class TestBuildLevels:
    def test_small_cloud_single_level(self):
        rng = np.random.default_rng(6)
        pts = rng.uniform(0, 1, size=(5000, 3))
        cloud = build_levels(pts, eps_p=10_000)
        assert cloud.num_levels == 1
        np.testing.assert_array_equal(cloud.levels[0].points, pts)

    def test_grid_shrinks_about_4x_and_matches_oracle(self):
        tau = 0.04
        xs, ys = np.meshgrid(np.arange(200) * tau, np.arange(200) * tau)
        pts = np.stack([xs.ravel(), ys.ravel(), np.zeros(200 * 200)], axis=1)
        cloud = build_levels(pts, tau=tau, eps_p=10_000)
        counts = [len(lv) for lv in cloud.levels]
        assert counts[-1] == 40_000
        # each coarser level about 4x smaller on a regular grid
        for coarse, fine in zip(counts[:-1], counts[1:]):
            assert 3.0 <= fine / coarse <= 5.0
        assert counts[0] < 10_000
        # spacing doubles per coarser level
        spacings = [lv.spacing for lv in cloud.levels]
        for s_coarse, s_fine in zip(spacings[:-1], spacings[1:]):
            assert s_coarse == 2 * s_fine
        # greedy subsample matches the brute-force oracle on a prefix
        np.testing.assert_array_equal(
            poisson_disk_indices(pts[:2000], 2 * tau), brute_force_poisson(pts[:2000], 2 * tau)
        )
        assert len(poisson_disk_indices(pts, 2 * tau)) == counts[-2]

    def test_levels_are_subsets(self):
        rng = np.random.default_rng(7)
        pts = rng.uniform(0, 1, size=(3000, 3))
        cloud = build_levels(pts, tau=0.02, eps_p=1000)
        assert cloud.num_levels >= 2
        for coarse, fine in zip(cloud.levels[:-1], cloud.levels[1:]):
            fine_set = {tuple(p) for p in fine.points}
            assert all(tuple(p) in fine_set for p in coarse.points)
            assert len(coarse) < len(fine)

    def test_nn_spacing_invariant(self):
        rng = np.random.default_rng(8)
        pts = rng.uniform(0, 1.5, size=(4000, 3))
        # thin the input itself so the finest level honors its spacing tag
        tau = 0.03
        pts = pts[poisson_disk_indices(pts, tau)]
        cloud = build_levels(pts, tau=tau, eps_p=500)
        for lv in cloud.levels:
            if len(lv) < 2:
                continue
            tree = cKDTree(lv.points)
            dist, _ = tree.query(lv.points, k=2)
            frac = np.mean(dist[:, 1] >= 0.7 * lv.spacing)
            assert frac >= 0.99

    def test_empty_input_raises(self):
        with pytest.raises(EmptyInputError):
            build_levels(np.zeros((0, 3)))

    def test_level_file_round_trip_bit_exact(self, tmp_path):
        from lodsplat.fileio import read_point_cloud_ply, write_point_cloud_ply

        rng = np.random.default_rng(10)
        pts = rng.uniform(-2, 2, size=(500, 3))
        cols = rng.uniform(0, 1, size=(500, 3))
        cloud = build_levels(pts, colors=cols, tau=0.05, eps_p=200)
        for lvl, level in enumerate(cloud.levels):
            path = tmp_path / f"level_{lvl}.ply"
            write_point_cloud_ply(path, level.points, level.colors)
            first = path.read_bytes()
            back_pts, back_cols = read_point_cloud_ply(path)
            write_point_cloud_ply(path, back_pts, back_cols)
            assert path.read_bytes() == first


class TestPerViewDmax:
    def test_single_point_ahead(self):
        cam = look_at_camera([0, 0, 0], [1, 0, 0], width=32, height=32)
        assert per_view_dmax(np.array([[10.0, 0.0, 0.0]]), cam) == pytest.approx(10.0)

    def test_all_behind_fallback(self):
        cam = look_at_camera([0, 0, 0], [1, 0, 0], width=32, height=32)
        pts = np.array([[-5.0, 0, 0], [-7.0, 1, 0], [-6.0, -1, 1]])
        _, r = bounding_sphere(pts)
        assert per_view_dmax(pts, cam) == pytest.approx(2 * r)

    def test_matches_exhaustive_oracle(self):
        rng = np.random.default_rng(9)
        cam = look_at_camera([0, 0, 0], [1, 0, 0], width=64, height=48, fx=40.0)
        pts = rng.uniform([-2, -4, -4], [20, 4, 4], size=(500, 3))
        best = 0.0
        for p in pts:
            pc = cam.world_to_camera(p)
            if pc[2] <= 0:
                continue
            u = cam.fx * pc[0] / pc[2] + cam.cx
            v = cam.fy * pc[1] / pc[2] + cam.cy
            if 0 <= u < 64 and 0 <= v < 48:
                best = max(best, pc[2])
        assert best > 0
        assert per_view_dmax(pts, cam) == pytest.approx(best)
