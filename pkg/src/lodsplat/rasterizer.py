"""Tile-based differentiable splatting of color and composited expected depth.

Forward model per pixel, with splats sorted front-to-back by camera-space
depth of their centers (index tiebreak):

    alpha_i = min(alpha_cap, opacity_i * exp(-0.5 * delta^T conic delta))
    skipped when alpha_i < alpha_cutoff or when transmittance has fallen
    below the early-stop threshold;
    color  = sum_i c_i alpha_i T_i + background * T_final
    depth  = sum_i d_i alpha_i T_i          (raw composite, not alpha-normalized)
    T_{i+1} = T_i * (1 - alpha_i),  T_1 = 1

d_i is the closed-form expected depth of splat i along the pixel ray. The
backward pass is analytic and recomputes the forward state tile by tile;
per-splat gradients are reduced in fixed tile order, so results are
byte-identical for any worker count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .cameras import PinholeCamera
from .gaussians import (
    ContractViolationError,
    GaussianCloud,
    InvalidParameterError,
    eval_sh,
    quat_to_rotmat,
    sh_basis,
    sh_basis_grad,
    sigmoid,
)
from .projection import LOW_PASS, NEAR_PLANE, ray_space_jacobian, ray_space_jacobian_grad

WORKERS_ENV = "LODSPLAT_WORKERS"


@dataclass
class RenderSettings:
    tile_size: int = 16
    alpha_cutoff: float = 1.0 / 255.0
    alpha_cap: float = 0.99
    background_color: np.ndarray = field(default_factory=lambda: np.zeros(3))
    early_stop_transmittance: float = 1e-4
    low_pass: float = LOW_PASS
    near_plane: float = NEAR_PLANE

    def __post_init__(self):
        self.background_color = np.asarray(self.background_color, dtype=np.float64).reshape(3)
        if not (0.0 < self.alpha_cutoff < self.alpha_cap < 1.0):
            raise InvalidParameterError("need 0 < alpha_cutoff < alpha_cap < 1")


@dataclass
class FrameBuffer:
    color: np.ndarray  # (H, W, 3)
    depth: np.ndarray  # (H, W) composited expected depth, 0 where nothing hit
    transmittance: np.ndarray  # (H, W) final T


@dataclass
class SplatGradients:
    positions: np.ndarray
    rotations_raw: np.ndarray
    log_scales: np.ndarray
    opacities_raw: np.ndarray
    sh_coeffs: np.ndarray

    @staticmethod
    def zeros(n: int) -> "SplatGradients":
        return SplatGradients(
            np.zeros((n, 3)), np.zeros((n, 4)), np.zeros((n, 3)), np.zeros(n), np.zeros((n, 27))
        )


def _workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def quat_rotmat_grad(q: np.ndarray) -> np.ndarray:
    """dR/dq for unit quaternions; (..., 4) -> (..., 4, 3, 3)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    zero = np.zeros_like(w)
    g = np.empty(q.shape[:-1] + (4, 3, 3))
    g[..., 0, :, :] = 2 * np.stack(
        [np.stack([zero, -z, y], -1), np.stack([z, zero, -x], -1), np.stack([-y, x, zero], -1)], -2
    )
    g[..., 1, :, :] = 2 * np.stack(
        [np.stack([zero, y, z], -1), np.stack([y, -2 * x, -w], -1), np.stack([z, w, -2 * x], -1)], -2
    )
    g[..., 2, :, :] = 2 * np.stack(
        [np.stack([-2 * y, x, w], -1), np.stack([x, zero, z], -1), np.stack([-w, z, -2 * y], -1)], -2
    )
    g[..., 3, :, :] = 2 * np.stack(
        [np.stack([-2 * z, -w, x], -1), np.stack([w, -2 * z, y], -1), np.stack([x, y, zero], -1)], -2
    )
    return g


class _Projected:
    """Per-frame projection of the visible splats, sorted front-to-back."""

    def __init__(self, cloud: GaussianCloud, camera: PinholeCamera, settings: RenderSettings):
        if not all(
            np.all(np.isfinite(a))
            for a in (cloud.positions, cloud.rotations_raw, cloud.log_scales,
                      cloud.opacities_raw, cloud.sh_coeffs)
        ):
            raise InvalidParameterError("non-finite splat parameters")
        self.cloud = cloud
        self.camera = camera
        self.settings = settings
        w_rot = camera.rotation
        x_cam_all = cloud.positions @ w_rot.T + camera.translation
        visible = x_cam_all[:, 2] > settings.near_plane
        idx = np.nonzero(visible)[0]
        z = x_cam_all[idx, 2]
        order = np.lexsort((idx, z))
        self.index = idx[order]  # original splat indices, front-to-back
        n = len(self.index)
        self.n = n
        if n == 0:
            return

        self.x_cam = x_cam_all[self.index]
        x, y, zz = self.x_cam[:, 0], self.x_cam[:, 1], self.x_cam[:, 2]
        r = np.linalg.norm(self.x_cam, axis=1)
        self.p = np.stack([x / zz, y / zz, r], axis=1)

        # world covariance factors kept for the backward pass
        q_raw = cloud.rotations_raw[self.index]
        self.q_norm = np.linalg.norm(q_raw, axis=1)
        self.q_unit = q_raw / self.q_norm[:, None]
        self.rot = quat_to_rotmat(self.q_unit)
        self.scales = np.exp(cloud.log_scales[self.index])
        rs = self.rot * (self.scales[:, None, :] ** 2)
        self.sigma_world = rs @ np.swapaxes(self.rot, -1, -2)

        self.jac = ray_space_jacobian(self.x_cam, near=0.0)
        self.m_jw = self.jac @ w_rot
        sigma_raw = self.m_jw @ self.sigma_world @ np.swapaxes(self.m_jw, -1, -2)
        self.sigma_ray = 0.5 * (sigma_raw + np.swapaxes(sigma_raw, -1, -2))
        self.lam = np.linalg.inv(self.sigma_ray)
        l22 = self.lam[:, 2, 2]
        self.k0 = self.lam[:, 0, 2] / l22
        self.k1 = self.lam[:, 1, 2] / l22

        fx, fy = camera.fx, camera.fy
        self.mu_pix = np.stack([fx * self.p[:, 0] + camera.cx, fy * self.p[:, 1] + camera.cy], axis=1)
        s2 = self.sigma_ray[:, :2, :2]
        m00 = fx * fx * s2[:, 0, 0] + settings.low_pass
        m01 = fx * fy * s2[:, 0, 1]
        m11 = fy * fy * s2[:, 1, 1] + settings.low_pass
        det = m00 * m11 - m01 * m01
        self.m2d = np.stack([m00, m01, m11], axis=1)
        self.conic = np.stack([m11 / det, -m01 / det, m00 / det], axis=1)
        half_trace = 0.5 * (m00 + m11)
        lam_max = half_trace + np.sqrt(np.maximum(0.0, half_trace**2 - det))
        # conservative footprint: alpha < cutoff is guaranteed outside this radius
        rad_mult = np.sqrt(2.0 * np.log(1.0 / settings.alpha_cutoff))
        self.radius = rad_mult * np.sqrt(lam_max)

        self.opac = sigmoid(cloud.opacities_raw[self.index])
        cam_pos = camera.center
        delta_w = cloud.positions[self.index] - cam_pos
        self.dir_norm = np.linalg.norm(delta_w, axis=1)
        self.view_dir = delta_w / self.dir_norm[:, None]
        self.color_sh = eval_sh(cloud.sh_coeffs[self.index], self.view_dir)
        self.color = np.maximum(0.0, self.color_sh)

    def tile_candidates(self, x0, x1, y0, y1):
        u, v = self.mu_pix[:, 0], self.mu_pix[:, 1]
        r = self.radius
        mask = (u + r > x0) & (u - r < x1) & (v + r > y0) & (v - r < y1)
        return np.nonzero(mask)[0]


def _tile_grid(camera: PinholeCamera, settings: RenderSettings):
    ts = settings.tile_size
    for y0 in range(0, camera.height, ts):
        for x0 in range(0, camera.width, ts):
            yield y0, min(y0 + ts, camera.height), x0, min(x0 + ts, camera.width)


def _tile_forward(proj: _Projected, sel, x0, x1, y0, y1):
    camera, settings = proj.camera, proj.settings
    us = np.arange(x0, x1) + 0.5
    vs = np.arange(y0, y1) + 0.5
    pu, pv = np.meshgrid(us, vs)
    pu = pu.ravel()
    pv = pv.ravel()
    npix = pu.size

    du = pu[None, :] - proj.mu_pix[sel, 0][:, None]
    dv = pv[None, :] - proj.mu_pix[sel, 1][:, None]
    a, b, c = proj.conic[sel, 0][:, None], proj.conic[sel, 1][:, None], proj.conic[sel, 2][:, None]
    q = a * du * du + 2.0 * b * du * dv + c * dv * dv
    g = np.exp(-0.5 * q)
    alpha = np.minimum(settings.alpha_cap, proj.opac[sel][:, None] * g)
    alpha[alpha < settings.alpha_cutoff] = 0.0

    t_seq = np.cumprod(1.0 - alpha, axis=0)
    t_before = np.vstack([np.ones((1, npix)), t_seq[:-1]])
    contrib = t_before >= settings.early_stop_transmittance
    w = alpha * t_before * contrib

    x0r = (pu - camera.cx) / camera.fx
    x1r = (pv - camera.cy) / camera.fy
    inv_l = 1.0 / np.sqrt(x0r**2 + x1r**2 + 1.0)
    d = (
        proj.p[sel, 2][:, None]
        - proj.k0[sel][:, None] * (x0r[None, :] - proj.p[sel, 0][:, None])
        - proj.k1[sel][:, None] * (x1r[None, :] - proj.p[sel, 1][:, None])
    ) * inv_l[None, :]

    color = w.T @ proj.color[sel]
    depth = (w * d).sum(axis=0)
    ncontrib = contrib.sum(axis=0)
    t_final = np.where(
        ncontrib == len(sel),
        t_seq[-1] if len(sel) else np.ones(npix),
        np.take_along_axis(t_before, np.minimum(ncontrib, len(sel) - 1)[None, :], axis=0)[0]
        if len(sel)
        else np.ones(npix),
    )
    color = color + t_final[:, None] * settings.background_color[None, :]
    h, wid = y1 - y0, x1 - x0
    return color.reshape(h, wid, 3), depth.reshape(h, wid), t_final.reshape(h, wid)


def rasterize(cloud: GaussianCloud, camera: PinholeCamera, settings: RenderSettings | None = None) -> FrameBuffer:
    """Render color, composited expected depth, and final transmittance."""
    settings = settings or RenderSettings()
    h, w = camera.height, camera.width
    frame = FrameBuffer(
        color=np.tile(settings.background_color, (h, w, 1)).astype(np.float64),
        depth=np.zeros((h, w)),
        transmittance=np.ones((h, w)),
    )
    if len(cloud) == 0:
        return frame
    proj = _Projected(cloud, camera, settings)
    if proj.n == 0:
        return frame

    tiles = list(_tile_grid(camera, settings))

    def run(tile):
        y0, y1, x0, x1 = tile
        sel = proj.tile_candidates(x0, x1, y0, y1)
        if len(sel) == 0:
            return None
        return _tile_forward(proj, sel, x0, x1, y0, y1)

    nworkers = _workers()
    if nworkers > 1:
        with ThreadPoolExecutor(max_workers=nworkers) as pool:
            results = list(pool.map(run, tiles))
    else:
        results = [run(t) for t in tiles]

    for tile, res in zip(tiles, results):
        if res is None:
            continue
        y0, y1, x0, x1 = tile
        color, depth, t_final = res
        frame.color[y0:y1, x0:x1] = color
        frame.depth[y0:y1, x0:x1] = depth
        frame.transmittance[y0:y1, x0:x1] = t_final
    return frame


def _tile_backward(proj: _Projected, sel, x0, x1, y0, y1, d_color, d_depth):
    """Recompute the tile forward state and return per-splat partial gradients.

    Returns (sel, dict of per-splat arrays) reduced over the tile's pixels.
    """
    camera, settings = proj.camera, proj.settings
    us = np.arange(x0, x1) + 0.5
    vs = np.arange(y0, y1) + 0.5
    pu, pv = np.meshgrid(us, vs)
    pu = pu.ravel()
    pv = pv.ravel()
    npix = pu.size

    du = pu[None, :] - proj.mu_pix[sel, 0][:, None]
    dv = pv[None, :] - proj.mu_pix[sel, 1][:, None]
    ca, cb, cc = proj.conic[sel, 0][:, None], proj.conic[sel, 1][:, None], proj.conic[sel, 2][:, None]
    q = ca * du * du + 2.0 * cb * du * dv + cc * dv * dv
    g = np.exp(-0.5 * q)
    alpha_raw = proj.opac[sel][:, None] * g
    capped = alpha_raw > settings.alpha_cap
    alpha = np.minimum(settings.alpha_cap, alpha_raw)
    below = alpha < settings.alpha_cutoff
    alpha[below] = 0.0

    one_m = 1.0 - alpha
    t_seq = np.cumprod(one_m, axis=0)
    t_before = np.vstack([np.ones((1, npix)), t_seq[:-1]])
    contrib = t_before >= settings.early_stop_transmittance
    w = alpha * t_before * contrib
    ncontrib = contrib.sum(axis=0)
    t_final = np.where(
        ncontrib == len(sel),
        t_seq[-1],
        np.take_along_axis(t_before, np.minimum(ncontrib, len(sel) - 1)[None, :], axis=0)[0],
    )

    x0r = (pu - camera.cx) / camera.fx
    x1r = (pv - camera.cy) / camera.fy
    inv_l = 1.0 / np.sqrt(x0r**2 + x1r**2 + 1.0)
    dx0 = x0r[None, :] - proj.p[sel, 0][:, None]
    dx1 = x1r[None, :] - proj.p[sel, 1][:, None]
    k0 = proj.k0[sel][:, None]
    k1 = proj.k1[sel][:, None]
    d = (proj.p[sel, 2][:, None] - k0 * dx0 - k1 * dx1) * inv_l[None, :]

    dc = d_color[y0:y1, x0:x1].reshape(npix, 3)
    dd = d_depth[y0:y1, x0:x1].reshape(npix)

    colors = proj.color[sel]  # (S, 3)
    wc = w[:, :, None] * colors[:, None, :]
    suffix_c = wc[::-1].cumsum(axis=0)[::-1] - wc  # sum over j > i
    suffix_c = suffix_c + t_final[None, :, None] * settings.background_color[None, None, :]
    wd = w * d
    suffix_d = wd[::-1].cumsum(axis=0)[::-1] - wd

    active = (alpha > 0.0) & contrib
    # dL/dalpha_i = dc . (c_i T_i - S_c/(1-a_i)) + dd * (d_i T_i - S_d/(1-a_i))
    term_c = colors[:, None, :] * t_before[:, :, None] - suffix_c / one_m[:, :, None]
    g_alpha = np.einsum("pk,spk->sp", dc, term_c) + dd[None, :] * (d * t_before - suffix_d / one_m)
    g_alpha = np.where(active, g_alpha, 0.0)

    grad_color = np.einsum("sp,pk->sk", w, dc)
    g_d = dd[None, :] * w

    thru = active & ~capped
    g_g = np.where(thru, g_alpha * proj.opac[sel][:, None], 0.0)
    g_op = np.where(thru, g_alpha * g, 0.0).sum(axis=1)
    g_q = -0.5 * g * g_g

    g_conic_a = (g_q * du * du).sum(axis=1)
    g_conic_b = (g_q * 2.0 * du * dv).sum(axis=1)
    g_conic_c = (g_q * dv * dv).sum(axis=1)
    g_du = g_q * (2.0 * ca * du + 2.0 * cb * dv)
    g_dv = g_q * (2.0 * cb * du + 2.0 * cc * dv)
    g_mu_u = -g_du.sum(axis=1)
    g_mu_v = -g_dv.sum(axis=1)

    gd_l = g_d * inv_l[None, :]
    g_p2 = gd_l.sum(axis=1)
    g_p0 = (gd_l * k0).sum(axis=1)
    g_p1 = (gd_l * k1).sum(axis=1)
    g_k0 = (-gd_l * dx0).sum(axis=1)
    g_k1 = (-gd_l * dx1).sum(axis=1)

    return sel, {
        "color": grad_color,
        "op": g_op,
        "conic": np.stack([g_conic_a, g_conic_b, g_conic_c], axis=1),
        "mu": np.stack([g_mu_u, g_mu_v], axis=1),
        "p": np.stack([g_p0, g_p1, g_p2], axis=1),
        "k": np.stack([g_k0, g_k1], axis=1),
    }


def rasterize_backward(
    cloud: GaussianCloud,
    camera: PinholeCamera,
    settings: RenderSettings | None,
    d_color: np.ndarray,
    d_depth: np.ndarray | None = None,
) -> SplatGradients:
    """Analytic gradients of sum(d_color * color) + sum(d_depth * depth) w.r.t. raw parameters."""
    settings = settings or RenderSettings()
    d_color = np.asarray(d_color, dtype=np.float64)
    if d_color.shape != (camera.height, camera.width, 3):
        raise ContractViolationError(
            f"d_color shape {d_color.shape} does not match the camera frame"
        )
    if d_depth is None:
        d_depth = np.zeros((camera.height, camera.width))
    d_depth = np.asarray(d_depth, dtype=np.float64)
    if d_depth.shape != (camera.height, camera.width):
        raise ContractViolationError("d_depth shape does not match the camera frame")

    grads = SplatGradients.zeros(len(cloud))
    if len(cloud) == 0:
        return grads
    proj = _Projected(cloud, camera, settings)
    n = proj.n
    if n == 0:
        return grads

    acc_color = np.zeros((n, 3))
    acc_op = np.zeros(n)
    acc_conic = np.zeros((n, 3))
    acc_mu = np.zeros((n, 2))
    acc_p = np.zeros((n, 3))
    acc_k = np.zeros((n, 2))

    tiles = list(_tile_grid(camera, settings))

    def run(tile):
        y0, y1, x0, x1 = tile
        sel = proj.tile_candidates(x0, x1, y0, y1)
        if len(sel) == 0:
            return None
        return _tile_backward(proj, sel, x0, x1, y0, y1, d_color, d_depth)

    nworkers = _workers()
    if nworkers > 1:
        with ThreadPoolExecutor(max_workers=nworkers) as pool:
            results = list(pool.map(run, tiles))
    else:
        results = [run(t) for t in tiles]

    for res in results:  # fixed tile order keeps the reduction deterministic
        if res is None:
            continue
        sel, part = res
        acc_color[sel] += part["color"]
        acc_op[sel] += part["op"]
        acc_conic[sel] += part["conic"]
        acc_mu[sel] += part["mu"]
        acc_p[sel] += part["p"]
        acc_k[sel] += part["k"]

    # ---- chain per-splat gradients back to raw parameters (vectorized) ----
    fx, fy = camera.fx, camera.fy
    w_rot = camera.rotation

    # screen center -> ray-space center
    acc_p[:, 0] += fx * acc_mu[:, 0]
    acc_p[:, 1] += fy * acc_mu[:, 1]

    # conic -> pixel-space 2x2 covariance M (conic = M^-1)
    qa = np.stack(
        [
            np.stack([proj.conic[:, 0], proj.conic[:, 1]], axis=1),
            np.stack([proj.conic[:, 1], proj.conic[:, 2]], axis=1),
        ],
        axis=1,
    )
    g_q2 = np.empty((n, 2, 2))
    g_q2[:, 0, 0] = acc_conic[:, 0]
    g_q2[:, 0, 1] = 0.5 * acc_conic[:, 1]
    g_q2[:, 1, 0] = 0.5 * acc_conic[:, 1]
    g_q2[:, 1, 1] = acc_conic[:, 2]
    g_m2 = -qa @ g_q2 @ qa

    # M = F Sigma2 F + low_pass*I with F = diag(fx, fy)
    f_outer = np.array([[fx * fx, fx * fy], [fx * fy, fy * fy]])
    g_sigma_ray = np.zeros((n, 3, 3))
    g_sigma_ray[:, :2, :2] = g_m2 * f_outer[None, :, :]

    # depth ratios k -> precision matrix entries -> sigma_ray
    l22 = proj.lam[:, 2, 2]
    g_lam = np.zeros((n, 3, 3))
    g_lam[:, 0, 2] = acc_k[:, 0] / l22
    g_lam[:, 1, 2] = acc_k[:, 1] / l22
    g_lam[:, 2, 2] = -(proj.k0 * acc_k[:, 0] + proj.k1 * acc_k[:, 1]) / l22
    lam_t = np.swapaxes(proj.lam, -1, -2)
    g_sigma_ray += -(lam_t @ g_lam @ lam_t)

    # symmetrization backward
    g_sigma_raw = 0.5 * (g_sigma_ray + np.swapaxes(g_sigma_ray, -1, -2))

    # sigma_raw = M_jw sigma_world M_jw^T
    g_mjw = 2.0 * g_sigma_raw @ proj.m_jw @ proj.sigma_world
    g_sigma_world = np.swapaxes(proj.m_jw, -1, -2) @ g_sigma_raw @ proj.m_jw
    g_jac = g_mjw @ w_rot.T

    # ray-space center path: p = rayspace(x_cam), dp/dx_cam = J
    g_x_cam = np.einsum("nij,ni->nj", proj.jac, acc_p)
    dj_dx = ray_space_jacobian_grad(proj.x_cam)
    g_x_cam += np.einsum("nij,nijk->nk", g_jac, dj_dx)
    g_position = g_x_cam @ w_rot

    # sigma_world = R D R^T, D = diag(scales^2)
    gs_sym = g_sigma_world + np.swapaxes(g_sigma_world, -1, -2)
    d_diag = proj.scales**2
    g_rot = gs_sym @ (proj.rot * d_diag[:, None, :])
    g_d = np.einsum("nji,njk,nki->ni", proj.rot, g_sigma_world, proj.rot)
    g_log_scales = g_d * 2.0 * d_diag

    dr_dq = quat_rotmat_grad(proj.q_unit)
    g_q_unit = np.einsum("nij,naij->na", g_rot, dr_dq)
    proj_mat = np.eye(4)[None, :, :] - proj.q_unit[:, :, None] * proj.q_unit[:, None, :]
    g_q_raw = np.einsum("nab,nb->na", proj_mat, g_q_unit) / proj.q_norm[:, None]

    # color -> SH coefficients and view direction
    clamp_mask = proj.color_sh > 0.0
    g_csh = acc_color * clamp_mask
    basis = sh_basis(proj.view_dir)  # (n, 9)
    g_sh = (g_csh[:, :, None] * basis[:, None, :]).reshape(n, 27)
    bgrad = sh_basis_grad(proj.view_dir)  # (n, 9, 3)
    sh = cloud.sh_coeffs[proj.index].reshape(n, 3, 9)
    g_dir = np.einsum("nc,nck,nkd->nd", g_csh, sh, bgrad)
    dirproj = np.eye(3)[None, :, :] - proj.view_dir[:, :, None] * proj.view_dir[:, None, :]
    g_position += np.einsum("nab,nb->na", dirproj, g_dir) / proj.dir_norm[:, None]

    g_op_raw = acc_op * proj.opac * (1.0 - proj.opac)

    grads.positions[proj.index] = g_position
    grads.rotations_raw[proj.index] = g_q_raw
    grads.log_scales[proj.index] = g_log_scales
    grads.opacities_raw[proj.index] = g_op_raw
    grads.sh_coeffs[proj.index] = g_sh
    return grads
