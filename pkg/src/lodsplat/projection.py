"""Ray-space transforms, covariance projection, and closed-form expected depth.

Ray space is the splatting coordinate frame (x0, x1, x2): x0 = X/Z and
x1 = Y/Z are normalized image-plane coordinates and x2 is the Euclidean
distance from the camera center along the pixel ray. Camera depth of a
ray-space point is t = x2 / l with l = sqrt(x0^2 + x1^2 + 1).
"""

from __future__ import annotations

import numpy as np

from .gaussians import InvalidParameterError

NEAR_PLANE = 0.01  # meters; camera-space Z below this is culled
LOW_PASS = 0.3  # pixel^2 floor added to the screen footprint diagonal


class BehindCameraError(ValueError):
    """Point lies at or behind the near plane."""


class DegenerateCovarianceError(ValueError):
    """Ray-space covariance is not usable for depth evaluation."""


def camera_to_ray_space(point_cam: np.ndarray, near: float = NEAR_PLANE) -> np.ndarray:
    """(X, Y, Z) -> (X/Z, Y/Z, sqrt(X^2+Y^2+Z^2)); broadcasts over leading dims."""
    p = np.asarray(point_cam, dtype=np.float64)
    z = p[..., 2]
    if np.any(z <= near):
        raise BehindCameraError("point at or behind the near plane")
    return np.stack(
        [p[..., 0] / z, p[..., 1] / z, np.linalg.norm(p, axis=-1)], axis=-1
    )


def ray_space_jacobian(point_cam: np.ndarray, near: float = NEAR_PLANE) -> np.ndarray:
    """Jacobian of the camera->ray-space map at point_cam; (..., 3) -> (..., 3, 3)."""
    p = np.asarray(point_cam, dtype=np.float64)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    if np.any(z <= near):
        raise BehindCameraError("point at or behind the near plane")
    r = np.linalg.norm(p, axis=-1)
    j = np.zeros(p.shape[:-1] + (3, 3))
    j[..., 0, 0] = 1.0 / z
    j[..., 0, 2] = -x / z**2
    j[..., 1, 1] = 1.0 / z
    j[..., 1, 2] = -y / z**2
    j[..., 2, 0] = x / r
    j[..., 2, 1] = y / r
    j[..., 2, 2] = z / r
    return j


def ray_space_jacobian_grad(point_cam: np.ndarray) -> np.ndarray:
    """dJ/d(X, Y, Z): (..., 3) -> (..., 3, 3, 3), last axis indexes the input coordinate."""
    p = np.asarray(point_cam, dtype=np.float64)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    r = np.linalg.norm(p, axis=-1)
    r3 = r**3
    g = np.zeros(p.shape[:-1] + (3, 3, 3))
    # d/dX
    g[..., 0, 2, 0] = -1.0 / z**2
    g[..., 2, 0, 0] = 1.0 / r - x * x / r3
    g[..., 2, 1, 0] = -x * y / r3
    g[..., 2, 2, 0] = -x * z / r3
    # d/dY
    g[..., 1, 2, 1] = -1.0 / z**2
    g[..., 2, 0, 1] = -x * y / r3
    g[..., 2, 1, 1] = 1.0 / r - y * y / r3
    g[..., 2, 2, 1] = -y * z / r3
    # d/dZ
    g[..., 0, 0, 2] = -1.0 / z**2
    g[..., 0, 2, 2] = 2.0 * x / z**3
    g[..., 1, 1, 2] = -1.0 / z**2
    g[..., 1, 2, 2] = 2.0 * y / z**3
    g[..., 2, 0, 2] = -x * z / r3
    g[..., 2, 1, 2] = -y * z / r3
    g[..., 2, 2, 2] = 1.0 / r - z * z / r3
    return g


def project_covariance(sigma_world: np.ndarray, w: np.ndarray, j: np.ndarray) -> np.ndarray:
    """Ray-space covariance J W Sigma W^T J^T, symmetrized; broadcasts over leading dims."""
    sigma_world = np.asarray(sigma_world, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    j = np.asarray(j, dtype=np.float64)
    if not (np.all(np.isfinite(sigma_world)) and np.all(np.isfinite(w)) and np.all(np.isfinite(j))):
        raise InvalidParameterError("non-finite covariance projection input")
    m = j @ w
    out = m @ sigma_world @ np.swapaxes(m, -1, -2)
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def expected_depth(p: np.ndarray, sigma_ray_inv: np.ndarray, pixel) -> np.ndarray:
    """Mean camera depth of a Gaussian's density along the pixel ray.

    ``p`` is the ray-space center, ``sigma_ray_inv`` the inverse ray-space
    covariance, ``pixel`` the ray-space (x0, x1) of the query ray. The
    conditional mean of x2 given (x0, x1) shifts the center by the
    precision-matrix column ratios; dividing by l converts distance to depth.
    """
    p = np.asarray(p, dtype=np.float64)
    lam = np.asarray(sigma_ray_inv, dtype=np.float64)
    pixel = np.asarray(pixel, dtype=np.float64)
    l22 = lam[..., 2, 2]
    if np.any(l22 <= 0):
        raise DegenerateCovarianceError("(sigma_ray_inv)[2,2] must be positive")
    x0 = pixel[..., 0]
    x1 = pixel[..., 1]
    l = np.sqrt(x0**2 + x1**2 + 1.0)
    k0 = lam[..., 0, 2] / l22
    k1 = lam[..., 1, 2] / l22
    return (p[..., 2] - k0 * (x0 - p[..., 0]) - k1 * (x1 - p[..., 1])) / l
