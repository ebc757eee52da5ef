import numpy as np
import pytest

from lodsplat.gaussians import (
    GaussianCloud,
    InvalidParameterError,
    build_covariance,
    eval_sh,
    quat_to_rotmat,
    sh_basis,
    sh_basis_grad,
    sigmoid,
)


def random_unit_quat(rng, n=None):
    q = rng.normal(size=(4,) if n is None else (n, 4))
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


class TestBuildCovariance:
    def test_identity(self):
        cov = build_covariance([1.0, 0, 0, 0], [1.0, 1.0, 1.0])
        np.testing.assert_allclose(cov, np.eye(3), atol=1e-15)

    def test_diagonal_squares(self):
        cov = build_covariance([1.0, 0, 0, 0], [2.0, 1.0, 1.0])
        np.testing.assert_allclose(cov, np.diag([4.0, 1.0, 1.0]), atol=1e-15)

    def test_z90_matches_explicit_product(self):
        # 90 degrees about z: quaternion (cos45, 0, 0, sin45)
        c = np.cos(np.pi / 4)
        q = np.array([c, 0.0, 0.0, c])
        s = np.array([2.0, 1.0, 1.0])
        r = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        expected = r @ np.diag(s) @ np.diag(s) @ r.T
        cov = build_covariance(q, s)
        np.testing.assert_allclose(cov, expected, atol=1e-12)
        np.testing.assert_allclose(cov, np.diag([1.0, 4.0, 1.0]), atol=1e-12)

    def test_quaternion_sign_flip_exact(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            q = random_unit_quat(rng)
            s = rng.uniform(0.1, 3.0, size=3)
            np.testing.assert_array_equal(build_covariance(q, s), build_covariance(-q, s))

    def test_eigenvalues_are_squared_scales(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            q = random_unit_quat(rng)
            s = rng.uniform(0.05, 4.0, size=3)
            ev = np.linalg.eigvalsh(build_covariance(q, s))
            np.testing.assert_allclose(np.sort(ev), np.sort(s**2), atol=1e-9)

    def test_symmetric_psd(self):
        rng = np.random.default_rng(3)
        q = random_unit_quat(rng, 20)
        s = rng.uniform(0.1, 2.0, size=(20, 3))
        cov = build_covariance(q, s)
        np.testing.assert_allclose(cov, np.swapaxes(cov, -1, -2), atol=1e-9)
        assert np.all(np.linalg.eigvalsh(cov) >= -1e-9)

    def test_nonfinite_rejected(self):
        with pytest.raises(InvalidParameterError):
            build_covariance([np.nan, 0, 0, 0], [1, 1, 1])
        with pytest.raises(InvalidParameterError):
            build_covariance([1, 0, 0, 0], [np.inf, 1, 1])


class TestEvalSh:
    def test_zero_coeffs_gives_half(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            d = rng.normal(size=3)
            d /= np.linalg.norm(d)
            np.testing.assert_allclose(eval_sh(np.zeros(27), d), [0.5, 0.5, 0.5], atol=0)

    def test_dc_only_constant(self):
        sh = np.zeros(27)
        sh[0] = 1.0  # red channel DC
        expected = np.array([0.5 + 0.28209479177387814, 0.5, 0.5])
        rng = np.random.default_rng(1)
        for _ in range(20):
            d = rng.normal(size=3)
            d /= np.linalg.norm(d)
            np.testing.assert_allclose(eval_sh(sh, d), expected, atol=1e-15)

    def test_degree1_odd_parity(self):
        rng = np.random.default_rng(2)
        sh = np.zeros(27)
        for ch in range(3):
            sh[ch * 9 + 1 : ch * 9 + 4] = rng.normal(size=3)
        for _ in range(20):
            d = rng.normal(size=3)
            d /= np.linalg.norm(d)
            np.testing.assert_allclose(
                eval_sh(sh, d) - 0.5, -(eval_sh(sh, -d) - 0.5), atol=1e-15
            )

    def test_degree0_direction_independent(self):
        rng = np.random.default_rng(4)
        sh = np.zeros(27)
        sh[[0, 9, 18]] = rng.normal(size=3)
        vals = []
        for _ in range(10):
            d = rng.normal(size=3)
            d /= np.linalg.norm(d)
            vals.append(eval_sh(sh, d))
        np.testing.assert_allclose(vals, np.broadcast_to(vals[0], (10, 3)), atol=0)

    def test_basis_grad_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        h = 1e-6
        for _ in range(10):
            d = rng.normal(size=3)
            g = sh_basis_grad(d)
            for k in range(3):
                dp = d.copy()
                dm = d.copy()
                dp[k] += h
                dm[k] -= h
                fd = (sh_basis(dp) - sh_basis(dm)) / (2 * h)
                np.testing.assert_allclose(g[:, k], fd, atol=1e-8)


class TestGaussianCloud:
    def test_activations(self):
        cloud = GaussianCloud(
            positions=[[0.0, 0.0, 1.0]],
            rotations_raw=[[2.0, 0.0, 0.0, 0.0]],
            log_scales=[[0.0, np.log(2.0), -1.0]],
            opacities_raw=[0.0],
            sh_coeffs=np.zeros((1, 27)),
        )
        assert np.all(cloud.scales > 0)
        np.testing.assert_allclose(cloud.scales[0], [1.0, 2.0, np.exp(-1.0)])
        np.testing.assert_allclose(cloud.opacities, [0.5])
        np.testing.assert_allclose(np.linalg.norm(cloud.rotations, axis=1), 1.0)

    def test_zero_rotation_rejected(self):
        with pytest.raises(InvalidParameterError):
            GaussianCloud(
                positions=[[0, 0, 0]],
                rotations_raw=[[0, 0, 0, 0]],
                log_scales=[[0, 0, 0]],
                opacities_raw=[0.0],
                sh_coeffs=np.zeros((1, 27)),
            )

    def test_record_round_trip(self):
        rng = np.random.default_rng(9)
        cloud = GaussianCloud(
            rng.normal(size=(5, 3)),
            rng.normal(size=(5, 4)),
            rng.normal(size=(5, 3)),
            rng.normal(size=5),
            rng.normal(size=(5, 27)),
            np.arange(5, dtype=np.int32) % 2,
        )
        rec = cloud.to_records()
        assert rec.dtype == np.float32 and rec.shape == (5, 38)
        back = GaussianCloud.from_records(rec, lod_level=3)
        np.testing.assert_array_equal(back.to_records(), rec)
        assert np.all(back.lod_levels == 3)

    def test_sigmoid_range(self):
        x = np.linspace(-40, 40, 1001)
        s = sigmoid(x)
        assert np.all(s >= 0) and np.all(s <= 1)
        np.testing.assert_allclose(sigmoid(0.0), 0.5)

    def test_quat_rotmat_orthonormal(self):
        rng = np.random.default_rng(12)
        r = quat_to_rotmat(random_unit_quat(rng, 30))
        np.testing.assert_allclose(r @ np.swapaxes(r, -1, -2), np.broadcast_to(np.eye(3), r.shape), atol=1e-12)
        np.testing.assert_allclose(np.linalg.det(r), 1.0, atol=1e-12)
