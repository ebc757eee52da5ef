"""Multi-level splat optimization with depth supervision and level-scaled densification.

One independent model per resolution level. Each iteration renders either the
distance-banded composite of all levels or one whole level (the coin decides),
so every level sees both its own band and full-frame supervision. Densification
thresholds are relaxed on coarser levels by the level scale factor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .cameras import PinholeCamera
from .fileio import append_jsonl, write_splat_ply
from .gaussians import ContractViolationError, GaussianCloud, InvalidParameterError, SH_C0, inverse_sigmoid
from .lod import MultiResCloud, bounding_sphere, per_view_dmax
from .losses import psnr, total_loss
from .rasterizer import RenderSettings, SplatGradients, rasterize, rasterize_backward

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-15
PARAM_GROUPS = ("positions", "rotations_raw", "log_scales", "opacities_raw", "sh_coeffs")


class TrainingDivergedError(RuntimeError):
    def __init__(self, iteration: int, snapshot: dict):
        super().__init__(f"non-finite loss at iteration {iteration}")
        self.iteration = iteration
        self.snapshot = snapshot


@dataclass
class TrainConfig:
    lambda_depth: float = 0.8
    lr_position: float = 1.6e-5  # scaled by scene extent at runtime
    lr_scaling: float = 1.5e-3
    lr_rotation: float = 1e-3
    lr_opacity: float = 5e-2
    lr_sh: float = 2.5e-3
    total_iterations: int | None = None  # None -> 20 x number of training images
    densify_start_iteration: int | None = None  # None -> 0.25 x total_iterations
    densify_interval: int = 100
    sigma_pos: float = 2e-4
    sigma_var: float = 0.01  # fraction of scene extent
    beta_s: float = math.sqrt(2.0)
    s_max: float = 4.0
    rrl_probability: float = 0.5
    ssim_weight: float = 0.2
    depth_beta: float = 10.0
    opacity_reset: bool = False
    opacity_reset_interval: int = 3000
    rng_seed: int = 0
    log_interval: int = 10

    def __post_init__(self):
        for lr in (self.lr_position, self.lr_scaling, self.lr_rotation, self.lr_opacity, self.lr_sh):
            if lr <= 0:
                raise InvalidParameterError("learning rates must be positive")
        if not 0.0 <= self.rrl_probability <= 1.0:
            raise InvalidParameterError("rrl_probability must lie in [0, 1]")
        if self.beta_s <= 1.0:
            raise InvalidParameterError("beta_s must exceed 1")
        if self.s_max < 1.0:
            raise InvalidParameterError("s_max must be at least 1")

    def resolved_iterations(self, num_samples: int) -> int:
        return self.total_iterations if self.total_iterations is not None else 20 * num_samples

    def resolved_densify_start(self, total: int) -> int:
        if self.densify_start_iteration is not None:
            return self.densify_start_iteration
        return int(round(0.25 * total))


@dataclass
class TrainSample:
    image: np.ndarray  # (H, W, 3) in [0, 1]
    depth_map: np.ndarray  # (H, W) meters, 0 = no measurement
    camera: PinholeCamera
    mask: np.ndarray | None = None  # (H, W) bool, True = valid

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float64)
        self.depth_map = np.asarray(self.depth_map, dtype=np.float64)
        if np.any(self.depth_map < 0):
            raise InvalidParameterError("depth_map must be non-negative")
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=bool)


def scale_factor(level: int, num_levels: int, beta_s: float, s_max: float) -> float:
    """Densification threshold multiplier: min(beta_s^(L-1-level), s_max)."""
    if not 0 <= level <= num_levels - 1:
        raise ContractViolationError(f"level {level} outside [0, {num_levels - 1}]")
    return min(beta_s ** (num_levels - 1 - level), s_max)


def select_render_set(models, camera: PinholeCamera, d_max: float, rng, config: TrainConfig):
    """Choose the per-level splat masks for one training render.

    With probability ``rrl_probability``: LOD-composite mode, where a splat of
    level l is included iff its distance band equals l. Otherwise one level,
    drawn uniformly, is rendered whole. A single-level model consumes no
    randomness. Returns (mode, masks).
    """
    num_levels = len(models)
    if num_levels == 1:
        return "composite", [np.ones(len(models[0]), dtype=bool)]
    if d_max <= 0:
        raise InvalidParameterError("d_max must be positive")
    if rng.random() < config.rrl_probability:
        cam_pos = camera.center
        masks = []
        for level, cloud in enumerate(models):
            d = np.linalg.norm(cloud.positions - cam_pos, axis=1)
            band = np.clip(
                np.floor(num_levels ** (1.0 - d / d_max)).astype(np.int64), 0, num_levels - 1
            )
            masks.append(band == level)
        return "composite", masks
    pick = int(rng.integers(num_levels))
    return f"single:{pick}", [
        np.full(len(cloud), lvl == pick, dtype=bool) for lvl, cloud in enumerate(models)
    ]


def densify(
    cloud: GaussianCloud,
    mean_grad_norm: np.ndarray,
    config: TrainConfig,
    level: int,
    num_levels: int,
    scene_extent: float,
    rng,
):
    """Clone small / split large splats whose position gradients exceed the threshold.

    Children inherit the parent's lod level. Returns (new_cloud, keep_mask,
    children_of) where keep_mask drops split parents and children_of maps each
    appended child to its parent row (for optimizer-state bookkeeping).
    """
    s_k = scale_factor(level, num_levels, config.beta_s, config.s_max)
    hot = mean_grad_norm > s_k * config.sigma_pos
    if not hot.any():
        return cloud, np.ones(len(cloud), dtype=bool), np.zeros(0, dtype=np.int64)

    scales = cloud.scales
    small = scales.max(axis=1) < s_k * config.sigma_var * scene_extent
    clone_idx = np.nonzero(hot & small)[0]
    split_idx = np.nonzero(hot & ~small)[0]

    children = []
    children_parent = []
    rot = _rotmats(cloud)
    for i in clone_idx:
        offset = rot[i] @ (scales[i] * rng.normal(size=3))
        child = cloud.take([i])
        child.positions[0] += offset
        children.append(child)
        children_parent.append(i)
    for i in split_idx:
        for _ in range(2):
            offset = rot[i] @ (scales[i] * rng.normal(size=3))
            child = cloud.take([i])
            child.positions[0] += offset
            child.log_scales[0] -= math.log(1.6)
            children.append(child)
            children_parent.append(i)

    keep = np.ones(len(cloud), dtype=bool)
    keep[split_idx] = False
    new_cloud = GaussianCloud.concatenate([cloud.take(keep)] + children)
    return new_cloud, keep, np.asarray(children_parent, dtype=np.int64)


def _rotmats(cloud: GaussianCloud):
    from .gaussians import quat_to_rotmat

    return quat_to_rotmat(cloud.rotations)


def initialize_models(init: MultiResCloud, config: TrainConfig) -> list[GaussianCloud]:
    """Per-level splat models from the resolution pyramid.

    Isotropic scales from the mean distance to the three nearest neighbors,
    identity rotations, opacity 0.1, colors in the SH DC term.
    """
    models = []
    for level_index, level in enumerate(init.levels):
        if len(level) == 0:
            raise InvalidParameterError("initialization requires points at every level")
        pts = level.points
        n = len(pts)
        if n >= 4:
            tree = cKDTree(pts)
            dist, _ = tree.query(pts, k=4)
            nn = dist[:, 1:].mean(axis=1)
        else:
            nn = np.full(n, level.spacing)
        nn = np.maximum(nn, 1e-7)
        sh = np.zeros((n, 27))
        sh[:, [0, 9, 18]] = (np.clip(level.colors, 0.0, 1.0) - 0.5) / SH_C0
        models.append(
            GaussianCloud(
                positions=pts.copy(),
                rotations_raw=np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)),
                log_scales=np.log(nn)[:, None].repeat(3, axis=1),
                opacities_raw=np.full(n, float(inverse_sigmoid(0.1))),
                sh_coeffs=sh,
                lod_levels=np.full(n, level_index, dtype=np.int32),
            )
        )
    return models


class _Adam:
    def __init__(self, cloud: GaussianCloud):
        self.m = {g: np.zeros_like(getattr(cloud, g)) for g in PARAM_GROUPS}
        self.v = {g: np.zeros_like(getattr(cloud, g)) for g in PARAM_GROUPS}
        self.t = 0

    def step(self, cloud: GaussianCloud, grads: dict, lrs: dict):
        self.t += 1
        bc1 = 1.0 - ADAM_BETA1**self.t
        bc2 = 1.0 - ADAM_BETA2**self.t
        for g in PARAM_GROUPS:
            grad = grads[g]
            self.m[g] = ADAM_BETA1 * self.m[g] + (1 - ADAM_BETA1) * grad
            self.v[g] = ADAM_BETA2 * self.v[g] + (1 - ADAM_BETA2) * grad * grad
            mhat = self.m[g] / bc1
            vhat = self.v[g] / bc2
            getattr(cloud, g)[...] -= lrs[g] * mhat / (np.sqrt(vhat) + ADAM_EPS)

    def densify_update(self, keep: np.ndarray, children_parent: np.ndarray):
        for g in PARAM_GROUPS:
            kept_m = self.m[g][keep]
            kept_v = self.v[g][keep]
            child_shape = (len(children_parent),) + self.m[g].shape[1:]
            self.m[g] = np.concatenate([kept_m, np.zeros(child_shape)])
            self.v[g] = np.concatenate([kept_v, np.zeros(child_shape)])


@dataclass
class TrainResult:
    levels: list[GaussianCloud]
    history: list[dict] = field(default_factory=list)


def train(
    samples: list[TrainSample],
    init: MultiResCloud,
    config: TrainConfig,
    settings: RenderSettings | None = None,
    log_path=None,
    checkpoint_dir=None,
) -> TrainResult:
    """Optimize per-level models against photometric + depth losses.

    Deterministic for a fixed ``config.rng_seed``. Raises
    TrainingDivergedError with a diagnostic snapshot on non-finite loss.
    """
    if not samples:
        raise InvalidParameterError("need at least one training sample")
    settings = settings or RenderSettings()
    rng = np.random.default_rng(config.rng_seed)
    models = initialize_models(init, config)
    num_levels = len(models)
    _, extent = bounding_sphere(init.finest.points)
    extent = max(extent, 1e-6)
    lrs = {
        "positions": config.lr_position * extent,
        "rotations_raw": config.lr_rotation,
        "log_scales": config.lr_scaling,
        "opacities_raw": config.lr_opacity,
        "sh_coeffs": config.lr_sh,
    }
    optimizers = [_Adam(m) for m in models]
    dmax_per_sample = [per_view_dmax(init.finest.points, s.camera) for s in samples]

    grad_norm_sum = [np.zeros(len(m)) for m in models]
    grad_norm_count = [np.zeros(len(m)) for m in models]

    total = config.resolved_iterations(len(samples))
    densify_start = config.resolved_densify_start(total)
    history: list[dict] = []

    for it in range(1, total + 1):
        k = int(rng.integers(len(samples)))
        sample = samples[k]
        mode, masks = select_render_set(models, sample.camera, dmax_per_sample[k], rng, config)
        index_lists = [np.nonzero(m)[0] for m in masks]
        parts_clouds = [models[lvl].take(ix) for lvl, ix in enumerate(index_lists) if len(ix)]
        merged = GaussianCloud.concatenate(parts_clouds) if parts_clouds else GaussianCloud.empty()

        frame = rasterize(merged, sample.camera, settings)
        loss, d_img, d_depth, parts = total_loss(
            frame.color, sample.image, frame.depth, sample.depth_map, config, mask=sample.mask
        )
        if not np.isfinite(loss):
            raise TrainingDivergedError(
                it,
                {
                    "iteration": it,
                    "sample": k,
                    "mode": mode,
                    "loss_parts": parts,
                    "splat_counts": [len(m) for m in models],
                },
            )
        grads = rasterize_backward(merged, sample.camera, settings, d_img, d_depth)

        offset = 0
        for lvl, ix in enumerate(index_lists):
            if len(ix) == 0:
                continue
            sl = slice(offset, offset + len(ix))
            level_grads = {
                "positions": np.zeros_like(models[lvl].positions),
                "rotations_raw": np.zeros_like(models[lvl].rotations_raw),
                "log_scales": np.zeros_like(models[lvl].log_scales),
                "opacities_raw": np.zeros_like(models[lvl].opacities_raw),
                "sh_coeffs": np.zeros_like(models[lvl].sh_coeffs),
            }
            level_grads["positions"][ix] = grads.positions[sl]
            level_grads["rotations_raw"][ix] = grads.rotations_raw[sl]
            level_grads["log_scales"][ix] = grads.log_scales[sl]
            level_grads["opacities_raw"][ix] = grads.opacities_raw[sl]
            level_grads["sh_coeffs"][ix] = grads.sh_coeffs[sl]
            optimizers[lvl].step(models[lvl], level_grads, lrs)
            grad_norm_sum[lvl][ix] += np.linalg.norm(grads.positions[sl], axis=1)
            grad_norm_count[lvl][ix] += 1
            offset += len(ix)

        if it >= densify_start and it % config.densify_interval == 0:
            for lvl in range(num_levels):
                mean_norm = grad_norm_sum[lvl] / np.maximum(grad_norm_count[lvl], 1)
                new_cloud, keep, children_parent = densify(
                    models[lvl], mean_norm, config, lvl, num_levels, extent, rng
                )
                if len(new_cloud) != len(models[lvl]):
                    models[lvl] = new_cloud
                    optimizers[lvl].densify_update(keep, children_parent)
                grad_norm_sum[lvl] = np.zeros(len(models[lvl]))
                grad_norm_count[lvl] = np.zeros(len(models[lvl]))

        if config.opacity_reset and it % config.opacity_reset_interval == 0:
            for m in models:
                m.opacities_raw[...] = np.minimum(m.opacities_raw, inverse_sigmoid(0.01))

        if it % config.log_interval == 0 or it == total:
            record = {
                "iteration": it,
                "mode": mode,
                "l_rgb": parts["l_rgb"],
                "l_depth": parts["l_depth"],
                "psnr": psnr(frame.color, sample.image),
                "splats_per_level": [len(m) for m in models],
            }
            history.append(record)
            if log_path is not None:
                append_jsonl(log_path, record)

    if checkpoint_dir is not None:
        save_checkpoints(models, checkpoint_dir)
    return TrainResult(levels=models, history=history)


def save_checkpoints(models: list[GaussianCloud], directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for lvl, cloud in enumerate(models):
        write_splat_ply(directory / f"level_{lvl}.ply", cloud)
