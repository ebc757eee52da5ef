"""Desk-scale Gaussian splatting toolkit with depth regularization and LOD streaming."""

__version__ = "0.1.0"

from .cameras import PinholeCamera, load_cameras, look_at_camera, save_cameras
from .engine import LoadBudget, RenderEngine, RenderSet, select_level
from .gaussians import GaussianCloud, build_covariance, eval_sh
from .lod import MultiResCloud, build_levels, per_view_dmax, sample_mesh
from .losses import depth_loss, depth_normalize, psnr, ssim, total_loss
from .octree import (
    HttpRangeReader,
    LocalRangeReader,
    OctreeNode,
    OctreeStore,
    build_octree,
    fetch_chunk,
    read_hierarchy,
)
from .projection import camera_to_ray_space, expected_depth, project_covariance, ray_space_jacobian
from .rasterizer import FrameBuffer, RenderSettings, rasterize, rasterize_backward
from .trainer import TrainConfig, TrainSample, scale_factor, select_render_set, train

__all__ = [
    "FrameBuffer",
    "GaussianCloud",
    "HttpRangeReader",
    "LoadBudget",
    "LocalRangeReader",
    "MultiResCloud",
    "OctreeNode",
    "OctreeStore",
    "PinholeCamera",
    "RenderEngine",
    "RenderSet",
    "RenderSettings",
    "TrainConfig",
    "TrainSample",
    "build_covariance",
    "build_levels",
    "build_octree",
    "camera_to_ray_space",
    "depth_loss",
    "depth_normalize",
    "eval_sh",
    "expected_depth",
    "fetch_chunk",
    "load_cameras",
    "look_at_camera",
    "per_view_dmax",
    "project_covariance",
    "psnr",
    "rasterize",
    "rasterize_backward",
    "ray_space_jacobian",
    "read_hierarchy",
    "sample_mesh",
    "save_cameras",
    "scale_factor",
    "select_level",
    "select_render_set",
    "ssim",
    "total_loss",
    "train",
]
