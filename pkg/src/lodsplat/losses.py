"""Training losses: L1 + SSIM photometric term and the normalized-depth L1 term.

All gradients are analytic so the render->loss chain can be verified end to
end against finite differences. Depth supervision compares normalized depths:
the same metric error costs more near the camera, and the map is bounded so
distant returns cannot dominate.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import correlate1d

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def depth_normalize(depth, beta: float):
    """Map [0, inf) depth to [0, 1): D/(2 beta) below beta, else 1 - beta/(2 D)."""
    d = np.asarray(depth, dtype=np.float64)
    near = d / (2.0 * beta)
    far = 1.0 - beta / (2.0 * np.maximum(d, beta))
    return np.where(d < beta, near, far)


def depth_normalize_grad(depth, beta: float):
    d = np.asarray(depth, dtype=np.float64)
    return np.where(d < beta, 1.0 / (2.0 * beta), beta / (2.0 * np.maximum(d, beta) ** 2))


def depth_loss(rendered_depths, gt_depths, beta: float):
    """Mean |R(rendered) - R(gt)| over pixels with a depth measurement (gt > 0).

    Accepts a single pair of buffers or matching sequences of per-view
    buffers. Returns (loss, had_valid_pixels).
    """
    if isinstance(rendered_depths, np.ndarray) and rendered_depths.ndim == 2:
        rendered_depths = [rendered_depths]
        gt_depths = [gt_depths]
    total = 0.0
    count = 0
    for rend, gt in zip(rendered_depths, gt_depths, strict=True):
        rend = np.asarray(rend, dtype=np.float64)
        gt = np.asarray(gt, dtype=np.float64)
        if rend.shape != gt.shape:
            raise ValueError("rendered/gt depth shape mismatch")
        valid = gt > 0
        if valid.any():
            total += np.abs(depth_normalize(rend[valid], beta) - depth_normalize(gt[valid], beta)).sum()
            count += int(valid.sum())
    if count == 0:
        return 0.0, False
    return total / count, True


def _gaussian_kernel(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA):
    x = np.arange(size) - (size - 1) / 2.0
    k = np.exp(-(x**2) / (2.0 * sigma**2))
    return k / k.sum()


def _filt(img, kernel):
    """Separable symmetric filter with zero padding; self-adjoint on the grid."""
    out = correlate1d(img, kernel, axis=0, mode="constant", cval=0.0)
    return correlate1d(out, kernel, axis=1, mode="constant", cval=0.0)


def _ssim_masked(x, y, mask):
    """Per-channel SSIM; the mean runs over valid pixels, windows are zero-padded.

    Returns (mean_ssim, d mean_ssim / d x).
    """
    kernel = _gaussian_kernel()
    nvalid = int(mask.sum()) * x.shape[2]
    if nvalid == 0:
        return 1.0, np.zeros_like(x)
    total = 0.0
    grad = np.zeros_like(x)
    for ch in range(x.shape[2]):
        xc = x[..., ch]
        yc = y[..., ch]
        mu_x = _filt(xc, kernel)
        mu_y = _filt(yc, kernel)
        e_x2 = _filt(xc * xc, kernel)
        e_xy = _filt(xc * yc, kernel)
        e_y2 = _filt(yc * yc, kernel)
        a1 = 2.0 * mu_x * mu_y + SSIM_C1
        a2 = 2.0 * (e_xy - mu_x * mu_y) + SSIM_C2
        b1 = mu_x**2 + mu_y**2 + SSIM_C1
        b2 = (e_x2 - mu_x**2) + (e_y2 - mu_y**2) + SSIM_C2
        s = (a1 * a2) / (b1 * b2)
        total += s[mask].sum()
        # w is the weight of each pixel's S in the mean
        w = mask / nvalid
        d_a1 = w * a2 / (b1 * b2)
        d_a2 = w * a1 / (b1 * b2)
        d_b1 = w * (-s / b1)
        d_b2 = w * (-s / b2)
        d_mu_x = 2.0 * mu_y * (d_a1 - d_a2) + 2.0 * mu_x * (d_b1 - d_b2)
        grad[..., ch] = _filt(d_mu_x, kernel) + 2.0 * xc * _filt(d_b2, kernel) + yc * _filt(2.0 * d_a2, kernel)
    return total / nvalid, grad


def ssim(pred, gt, return_grad: bool = False):
    """Mean SSIM (11x11 Gaussian window, sigma 1.5, unit dynamic range)."""
    x = np.asarray(pred, dtype=np.float64)
    y = np.asarray(gt, dtype=np.float64)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[..., None]
        y = y[..., None]
    mask = np.ones(x.shape[:2], dtype=bool)
    val, grad = _ssim_masked(x, y, mask)
    if not return_grad:
        return val
    return val, grad[..., 0] if squeeze else grad


def psnr(pred, gt) -> float:
    mse = float(np.mean((np.asarray(pred, dtype=np.float64) - np.asarray(gt, dtype=np.float64)) ** 2))
    if mse == 0.0:
        return float("inf")
    return -10.0 * np.log10(mse)


def total_loss(pred_image, gt_image, pred_depth, gt_depth, config, mask=None):
    """Photometric + weighted depth loss with analytic input gradients.

    ``config`` needs ``ssim_weight``, ``lambda_depth``, and ``depth_beta``.
    Returns (loss, d_pred_image, d_pred_depth, parts). Pixels where ``mask``
    is False, and depth pixels without a measurement (gt == 0), contribute
    nothing to any term.
    """
    pred_image = np.asarray(pred_image, dtype=np.float64)
    gt_image = np.asarray(gt_image, dtype=np.float64)
    pred_depth = np.asarray(pred_depth, dtype=np.float64)
    gt_depth = np.asarray(gt_depth, dtype=np.float64)
    if mask is None:
        mask = np.ones(pred_image.shape[:2], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    m3 = mask[..., None]

    n_rgb = max(int(mask.sum()) * pred_image.shape[2], 1)
    diff = np.where(m3, pred_image - gt_image, 0.0)
    l1 = np.abs(diff).sum() / n_rgb
    d_l1 = np.sign(diff) / n_rgb

    ssim_val, d_ssim = _ssim_masked(np.where(m3, pred_image, 0.0), np.where(m3, gt_image, 0.0), mask)

    w = config.ssim_weight
    l_rgb = (1.0 - w) * l1 + w * (1.0 - ssim_val)
    d_image = np.where(m3, (1.0 - w) * d_l1 - w * d_ssim, 0.0)

    beta = config.depth_beta
    valid = (gt_depth > 0) & mask
    n_d = int(valid.sum())
    if n_d > 0:
        resid = np.where(valid, depth_normalize(pred_depth, beta) - depth_normalize(gt_depth, beta), 0.0)
        l_depth = np.abs(resid).sum() / n_d
        d_depth = np.where(
            valid, config.lambda_depth * np.sign(resid) * depth_normalize_grad(pred_depth, beta) / n_d, 0.0
        )
    else:
        l_depth = 0.0
        d_depth = np.zeros_like(pred_depth)

    loss = l_rgb + config.lambda_depth * l_depth
    parts = {"l_rgb": float(l_rgb), "l1": float(l1), "ssim": float(ssim_val), "l_depth": float(l_depth)}
    return float(loss), d_image, d_depth, parts
