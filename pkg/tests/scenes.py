"""Synthetic scene builders shared by trainer, engine, and acceptance tests."""

import numpy as np

from lodsplat.cameras import look_at_camera
from lodsplat.gaussians import GaussianCloud, inverse_sigmoid, SH_C0
from lodsplat.lod import LevelCloud, MultiResCloud
from lodsplat.rasterizer import RenderSettings, rasterize
from lodsplat.trainer import TrainSample


def color_field(points, freq=1.0):
    """Smooth procedural surface color in [0.15, 0.85]."""
    p = np.asarray(points)
    r = 0.5 + 0.3 * np.sin(1.3 * freq * p[:, 0]) * np.cos(0.9 * freq * p[:, 1])
    g = 0.5 + 0.3 * np.sin(0.7 * freq * p[:, 0] + 1.1 * freq * p[:, 1])
    b = 0.5 + 0.3 * np.cos(1.7 * freq * p[:, 1]) * np.sin(0.5 * freq * p[:, 0] + 0.4)
    return np.stack([r, g, b], axis=1)


def wavy_surface_points(n_side, extent=4.0, seed=0):
    """Gently undulating sheet facing +z viewers, jittered off the grid."""
    rng = np.random.default_rng(seed)
    ticks = np.linspace(-extent / 2, extent / 2, n_side)
    xs, ys = np.meshgrid(ticks, ticks)
    pts = np.stack([xs.ravel(), ys.ravel(), np.zeros(n_side * n_side)], axis=1)
    pts[:, 2] = 0.25 * np.sin(1.1 * pts[:, 0]) * np.cos(0.8 * pts[:, 1])
    pts += rng.normal(scale=0.01, size=pts.shape)
    return pts


def surface_cloud(points, spacing, opacity=0.92, scale_mult=0.75, seed=0, freq=1.0, flatten=1.0):
    """Splat cloud covering a sampled surface with the procedural colors.

    ``flatten`` < 1 shrinks the z scale, turning blobs into surface-hugging
    pancakes.
    """
    rng = np.random.default_rng(seed)
    n = len(points)
    colors = color_field(points, freq=freq)
    sh = np.zeros((n, 27))
    sh[:, [0, 9, 18]] = (colors - 0.5) / SH_C0
    sh += rng.normal(scale=0.01, size=sh.shape)
    log_scales = np.full((n, 3), np.log(scale_mult * spacing))
    log_scales[:, 2] += np.log(flatten)
    return GaussianCloud(
        positions=np.asarray(points, dtype=float),
        rotations_raw=np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)),
        log_scales=log_scales,
        opacities_raw=np.full(n, float(inverse_sigmoid(opacity))),
        sh_coeffs=sh,
        lod_levels=np.zeros(n, dtype=np.int32),
    )


def ring_cameras(n, radius=6.0, height=4.5, target=(0.0, 0.0, 0.0), width=64, height_px=64, fx=56.0):
    cams = []
    for i in range(n):
        ang = 2 * np.pi * i / n
        eye = np.array([radius * np.cos(ang), radius * np.sin(ang), height])
        cams.append(
            look_at_camera(eye, target, up=(0, 0, 1), fx=fx, width=width, height=height_px,
                           cam_id=f"view{i}")
        )
    return cams


def render_samples(cloud, cameras, settings=None):
    """Ground-truth images + depth composites as training samples."""
    settings = settings or RenderSettings(background_color=[0.05, 0.05, 0.05])
    samples = []
    for cam in cameras:
        frame = rasterize(cloud, cam, settings)
        samples.append(
            TrainSample(
                image=frame.color.copy(),
                depth_map=np.where(frame.transmittance < 0.5, frame.depth, 0.0),
                camera=cam,
            )
        )
    return samples


def jittered_init(cloud, spacing, seed=1, pos_noise=0.05, color_noise=0.08, floater_frac=0.1,
                  floater_lift=1.5):
    """Initialization pyramid from the GT cloud with noise and lifted floaters."""
    rng = np.random.default_rng(seed)
    pts = cloud.positions + rng.normal(scale=pos_noise, size=cloud.positions.shape)
    n = len(pts)
    nfloat = int(floater_frac * n)
    lifted = rng.choice(n, size=nfloat, replace=False)
    pts[lifted, 2] += rng.uniform(0.5, 1.0, size=nfloat) * floater_lift
    colors = np.clip(
        color_field(cloud.positions) + rng.normal(scale=color_noise, size=(n, 3)), 0.0, 1.0
    )
    return MultiResCloud(levels=[LevelCloud(spacing=spacing, points=pts, colors=colors)])
