import numpy as np
import pytest

from lodsplat.cameras import PinholeCamera, look_at_camera
from lodsplat.gaussians import (
    ContractViolationError,
    GaussianCloud,
    build_covariance,
    eval_sh,
    inverse_sigmoid,
    sigmoid,
)
from lodsplat.projection import camera_to_ray_space, expected_depth, project_covariance, ray_space_jacobian
from lodsplat.rasterizer import FrameBuffer, RenderSettings, rasterize, rasterize_backward


def naive_render(cloud, camera, settings):
    """Per-pixel reference renderer: no tiling, no footprint culling.

    Implements the documented compositing math directly on top of the
    geometry helpers, which are themselves oracle-tested.
    """
    h, w = camera.height, camera.width
    color = np.tile(settings.background_color.astype(float), (h, w, 1))
    depth = np.zeros((h, w))
    trans = np.ones((h, w))
    if len(cloud) == 0:
        return FrameBuffer(color, depth, trans)

    x_cam = cloud.positions @ camera.rotation.T + camera.translation
    vis = np.nonzero(x_cam[:, 2] > settings.near_plane)[0]
    vis = vis[np.lexsort((vis, x_cam[vis, 2]))]

    splats = []
    for i in vis:
        p = camera_to_ray_space(x_cam[i], near=0.0)
        sigma_w = build_covariance(
            cloud.rotations_raw[i] / np.linalg.norm(cloud.rotations_raw[i]), np.exp(cloud.log_scales[i])
        )
        j = ray_space_jacobian(x_cam[i], near=0.0)
        sigma_ray = project_covariance(sigma_w, camera.rotation, j)
        lam = np.linalg.inv(sigma_ray)
        mu = np.array([camera.fx * p[0] + camera.cx, camera.fy * p[1] + camera.cy])
        m = np.array(
            [
                [camera.fx**2 * sigma_ray[0, 0] + settings.low_pass, camera.fx * camera.fy * sigma_ray[0, 1]],
                [camera.fx * camera.fy * sigma_ray[0, 1], camera.fy**2 * sigma_ray[1, 1] + settings.low_pass],
            ]
        )
        conic = np.linalg.inv(m)
        dirn = cloud.positions[i] - camera.center
        col = np.maximum(0.0, eval_sh(cloud.sh_coeffs[i], dirn / np.linalg.norm(dirn)))
        splats.append((p, lam, mu, conic, sigmoid(cloud.opacities_raw[i]), col))

    for row in range(h):
        for colx in range(w):
            pu, pv = colx + 0.5, row + 0.5
            x0r = (pu - camera.cx) / camera.fx
            x1r = (pv - camera.cy) / camera.fy
            t = 1.0
            for p, lam, mu, conic, op, col in splats:
                if t < settings.early_stop_transmittance:
                    break
                delta = np.array([pu - mu[0], pv - mu[1]])
                alpha = min(settings.alpha_cap, op * np.exp(-0.5 * delta @ conic @ delta))
                if alpha < settings.alpha_cutoff:
                    continue
                d = expected_depth(p, lam, np.array([x0r, x1r]))
                color[row, colx] += col * alpha * t * 1.0
                depth[row, colx] += d * alpha * t
                t *= 1.0 - alpha
            color[row, colx] += (t - 1.0) * settings.background_color
            trans[row, colx] = t
    return FrameBuffer(color, depth, trans)


def random_cloud(rng, n, depth_range=(2.0, 6.0), lateral=1.2, opacity_raw=(-1.0, 2.0)):
    pos = np.stack(
        [
            rng.uniform(-lateral, lateral, n),
            rng.uniform(-lateral, lateral, n),
            rng.uniform(*depth_range, n),
        ],
        axis=1,
    )
    return GaussianCloud(
        positions=pos,
        rotations_raw=rng.normal(size=(n, 4)),
        log_scales=rng.uniform(np.log(0.1), np.log(0.45), size=(n, 3)),
        opacities_raw=rng.uniform(*opacity_raw, n),
        sh_coeffs=np.concatenate(
            [rng.uniform(-0.4, 0.9, size=(n, 1)).repeat(1, axis=1), rng.normal(scale=0.08, size=(n, 8))]
            * 3,
            axis=1,
        ),
        lod_levels=np.zeros(n, dtype=np.int32),
    )


def front_camera(width=32, height=32, fx=40.0):
    return PinholeCamera(
        fx=fx, fy=fx, cx=width / 2, cy=height / 2, width=width, height=height,
        rotation=np.eye(3), translation=np.zeros(3),
    )


class TestForward:
    def test_empty_scene(self):
        settings = RenderSettings(background_color=[0.2, 0.3, 0.4])
        frame = rasterize(GaussianCloud.empty(), front_camera(), settings)
        np.testing.assert_array_equal(frame.color[..., 0], 0.2)
        np.testing.assert_array_equal(frame.color[..., 2], 0.4)
        np.testing.assert_array_equal(frame.depth, 0.0)
        np.testing.assert_array_equal(frame.transmittance, 1.0)

    def test_single_splat_capped_alpha_and_depth(self):
        cam = PinholeCamera(fx=40.0, fy=40.0, cx=16.5, cy=16.5, width=33, height=33,
                            rotation=np.eye(3), translation=np.zeros(3))
        cloud = GaussianCloud(
            positions=[[0.0, 0.0, 3.0]],
            rotations_raw=[[1.0, 0, 0, 0]],
            log_scales=np.log([[0.5, 0.5, 0.5]]),
            opacities_raw=[10.0],
            sh_coeffs=np.zeros((1, 27)),
        )
        settings = RenderSettings()
        frame = rasterize(cloud, cam, settings)
        # alpha at the central pixel reaches the cap
        np.testing.assert_allclose(1.0 - frame.transmittance[16, 16], settings.alpha_cap, atol=1e-6)
        np.testing.assert_allclose(frame.depth[16, 16], 3.0 * settings.alpha_cap, rtol=1e-6)

    def test_two_splat_hand_composite(self):
        cam = PinholeCamera(fx=40.0, fy=40.0, cx=16.5, cy=16.5, width=33, height=33,
                            rotation=np.eye(3), translation=np.zeros(3))
        cloud = GaussianCloud(
            positions=[[0.0, 0.0, 1.0], [0.0, 0.0, 2.0]],
            rotations_raw=[[1.0, 0, 0, 0], [1.0, 0, 0, 0]],
            log_scales=np.log([[0.3, 0.3, 0.3], [0.6, 0.6, 0.6]]),
            opacities_raw=[0.0, 0.0],  # sigmoid -> 0.5; G = 1 at center pixel
            sh_coeffs=np.zeros((2, 27)),
        )
        frame = rasterize(cloud, cam, RenderSettings())
        np.testing.assert_allclose(frame.depth[16, 16], 1.0 * 0.5 + 2.0 * 0.5 * 0.5, rtol=1e-9)

    def test_matches_naive_reference(self):
        rng = np.random.default_rng(42)
        cloud = random_cloud(rng, 30)
        cam = front_camera()
        settings = RenderSettings(background_color=[0.1, 0.2, 0.3])
        fast = rasterize(cloud, cam, settings)
        ref = naive_render(cloud, cam, settings)
        np.testing.assert_allclose(fast.color, ref.color, atol=1e-10)
        np.testing.assert_allclose(fast.depth, ref.depth, atol=1e-10)
        np.testing.assert_allclose(fast.transmittance, ref.transmittance, atol=1e-10)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(7)
        cloud = random_cloud(rng, 25)
        cam = front_camera()
        settings = RenderSettings()
        frame = rasterize(cloud, cam, settings)
        perm = rng.permutation(25)
        frame2 = rasterize(cloud.take(perm), cam, settings)
        np.testing.assert_array_equal(frame.color, frame2.color)
        np.testing.assert_array_equal(frame.depth, frame2.depth)
        np.testing.assert_array_equal(frame.transmittance, frame2.transmittance)

    def test_weights_sum_to_one_minus_transmittance(self):
        rng = np.random.default_rng(8)
        cloud = random_cloud(rng, 40)
        cam = front_camera()
        settings = RenderSettings(background_color=[0.0, 0.0, 0.0])
        white = cloud.copy()
        # force unit color so rendered color = per-pixel sum of weights
        white.sh_coeffs[:] = 0.0
        white.sh_coeffs[:, [0, 9, 18]] = 0.5 / 0.28209479177387814
        frame = rasterize(white, cam, settings)
        np.testing.assert_allclose(frame.color[..., 0], 1.0 - frame.transmittance, atol=1e-9)
        assert np.all(frame.transmittance >= 0.0) and np.all(frame.transmittance <= 1.0)

    def test_depth_zero_where_nothing_hit(self):
        cam = front_camera()
        cloud = GaussianCloud(
            positions=[[0.0, 0.0, 3.0]],
            rotations_raw=[[1.0, 0, 0, 0]],
            log_scales=np.log([[0.05, 0.05, 0.05]]),
            opacities_raw=[3.0],
            sh_coeffs=np.zeros((1, 27)),
        )
        frame = rasterize(cloud, cam, RenderSettings())
        corner_zero = frame.depth[0, 0]
        assert corner_zero == 0.0
        assert frame.depth[16, 16] > 0.0

    def test_occluded_append_is_noop(self):
        cam = front_camera()
        blockers = GaussianCloud(
            positions=[[0.0, 0.0, 2.0], [0.0, 0.0, 2.1], [0.0, 0.0, 2.2]],
            rotations_raw=[[1.0, 0, 0, 0]] * 3,
            log_scales=np.log([[1.5, 1.5, 1.5]] * 3),
            opacities_raw=[12.0] * 3,  # alpha capped at 0.99 -> T = 1e-6 < early stop
            sh_coeffs=np.zeros((3, 27)),
        )
        settings = RenderSettings()
        base = rasterize(blockers, cam, settings)
        assert base.transmittance[16, 16] < settings.alpha_cutoff
        behind = GaussianCloud(
            positions=[[0.0, 0.0, 5.0]],
            rotations_raw=[[1.0, 0, 0, 0]],
            log_scales=np.log([[0.2, 0.2, 0.2]]),
            opacities_raw=[5.0],
            sh_coeffs=np.full((1, 27), 0.3),
        )
        both = rasterize(GaussianCloud.concatenate([blockers, behind]), cam, settings)
        assert both.color[16, 16, 0] == base.color[16, 16, 0]
        assert both.depth[16, 16] == base.depth[16, 16]

    def test_worker_count_determinism(self, monkeypatch):
        rng = np.random.default_rng(70)
        cloud = random_cloud(rng, 50)
        cam = front_camera(width=48, height=40)
        settings = RenderSettings()
        one = rasterize(cloud, cam, settings)
        monkeypatch.setenv("LODSPLAT_WORKERS", "4")
        four = rasterize(cloud, cam, settings)
        grads_four = rasterize_backward(cloud, cam, settings, np.ones((40, 48, 3)), np.ones((40, 48)))
        monkeypatch.setenv("LODSPLAT_WORKERS", "1")
        grads_one = rasterize_backward(cloud, cam, settings, np.ones((40, 48, 3)), np.ones((40, 48)))
        np.testing.assert_array_equal(one.color, four.color)
        np.testing.assert_array_equal(grads_one.positions, grads_four.positions)
        np.testing.assert_array_equal(grads_one.sh_coeffs, grads_four.sh_coeffs)


def linear_loss(cloud, camera, settings, wc, wd):
    frame = rasterize(cloud, camera, settings)
    return float((frame.color * wc).sum() + (frame.depth * wd).sum())


def fd_gradients(cloud, camera, settings, wc, wd, h=1e-5):
    out = {}
    arrays = {
        "positions": cloud.positions,
        "rotations_raw": cloud.rotations_raw,
        "log_scales": cloud.log_scales,
        "opacities_raw": cloud.opacities_raw,
        "sh_coeffs": cloud.sh_coeffs,
    }
    for name, arr in arrays.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            lp = linear_loss(cloud, camera, settings, wc, wd)
            flat[k] = orig - h
            lm = linear_loss(cloud, camera, settings, wc, wd)
            flat[k] = orig
            gflat[k] = (lp - lm) / (2 * h)
        out[name] = g
    return out


def max_rel_error(analytic, fd, floor=1e-6):
    return np.max(np.abs(analytic - fd) / np.maximum.reduce([np.abs(analytic), np.abs(fd), np.full_like(fd, floor)]))


class TestBackward:
    def test_zero_gradients(self):
        rng = np.random.default_rng(1)
        cloud = random_cloud(rng, 5)
        cam = front_camera(16, 16)
        g = rasterize_backward(cloud, cam, RenderSettings(), np.zeros((16, 16, 3)), np.zeros((16, 16)))
        for arr in (g.positions, g.rotations_raw, g.log_scales, g.opacities_raw, g.sh_coeffs):
            np.testing.assert_array_equal(arr, 0.0)

    def test_shape_contract(self):
        rng = np.random.default_rng(2)
        cloud = random_cloud(rng, 2)
        cam = front_camera(16, 16)
        with pytest.raises(ContractViolationError):
            rasterize_backward(cloud, cam, RenderSettings(), np.zeros((8, 8, 3)))

    def test_single_splat_all_parameters(self):
        rng = np.random.default_rng(3)
        cam = front_camera(12, 12, fx=16.0)
        cloud = GaussianCloud(
            positions=[[0.15, -0.1, 3.0]],
            rotations_raw=[[0.9, 0.2, -0.3, 0.1]],
            log_scales=np.log([[0.5, 0.35, 0.6]]),
            opacities_raw=[0.4],
            sh_coeffs=rng.uniform(-0.15, 0.35, size=(1, 27)) + np.eye(27)[0] * 0.4,
        )
        settings = RenderSettings(early_stop_transmittance=0.0)
        wc = rng.normal(size=(12, 12, 3))
        wd = np.zeros((12, 12))  # color-only loss
        analytic = rasterize_backward(cloud, cam, settings, wc, wd)
        fd = fd_gradients(cloud, cam, settings, wc, wd)
        for name in fd:
            err = max_rel_error(getattr(analytic, name), fd[name])
            assert err < 1e-4, f"{name}: {err}"

    def test_multi_splat_combined_loss(self):
        rng = np.random.default_rng(4)
        cloud = random_cloud(rng, 5, depth_range=(2.0, 5.0), opacity_raw=(-0.5, 1.5))
        cam = front_camera(10, 10, fx=14.0)
        settings = RenderSettings(early_stop_transmittance=0.0)
        wc = rng.normal(size=(10, 10, 3))
        wd = rng.normal(size=(10, 10)) * 0.3
        analytic = rasterize_backward(cloud, cam, settings, wc, wd)
        fd = fd_gradients(cloud, cam, settings, wc, wd)
        for name in fd:
            err = max_rel_error(getattr(analytic, name), fd[name])
            assert err < 1e-3, f"{name}: {err}"
