"""Input conditioning: fisheye-to-pinhole splitting, mesh cleanup, blocks, views.

The fisheye model is equidistant (r = f * theta), the conventional choice for
a 180-degree lens. One fisheye frame becomes five 90-degree virtual pinhole
views: straight ahead plus 45-degree tilts toward top, bottom, left, right.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .cameras import PinholeCamera
from .gaussians import InvalidParameterError
from .lod import EmptyInputError

VIRTUAL_VIEW_NAMES = ("forward", "top", "bottom", "left", "right")


@dataclass
class FisheyeModel:
    focal: float  # pixels per radian
    center: np.ndarray  # (2,) pixels
    fov_degrees: float = 180.0

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(2)
        if self.focal <= 0:
            raise InvalidParameterError("fisheye focal must be positive")
        if not 0.0 < self.fov_degrees <= 360.0:
            raise InvalidParameterError("fov must lie in (0, 360]")


def virtual_rotations() -> list[np.ndarray]:
    """Rotation of each virtual camera frame into the fisheye frame.

    Image y points down, so 'top' tilts the optical axis by -45 degrees about
    x, 'left' by -45 degrees about y.
    """
    def rx(a):
        c, s = math.cos(a), math.sin(a)
        return np.array([[1.0, 0, 0], [0, c, -s], [0, s, c]])

    def ry(a):
        c, s = math.cos(a), math.sin(a)
        return np.array([[c, 0, s], [0, 1.0, 0], [-s, 0, c]])

    q = math.pi / 4
    return [np.eye(3), rx(-q), rx(q), ry(-q), ry(q)]


def _bilinear(image: np.ndarray, u: np.ndarray, v: np.ndarray):
    """Sample image at continuous pixel coordinates; returns (values, inside)."""
    h, w = image.shape[:2]
    x = u - 0.5
    y = v - 0.5
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx = x - x0
    fy = y - y0
    inside = (x0 >= 0) & (y0 >= 0) & (x0 + 1 <= w - 1) & (y0 + 1 <= h - 1)
    x0c = np.clip(x0, 0, w - 2)
    y0c = np.clip(y0, 0, h - 2)
    i00 = image[y0c, x0c]
    i01 = image[y0c, x0c + 1]
    i10 = image[y0c + 1, x0c]
    i11 = image[y0c + 1, x0c + 1]
    fx = fx[..., None]
    fy = fy[..., None]
    val = (1 - fy) * ((1 - fx) * i00 + fx * i01) + fy * ((1 - fx) * i10 + fx * i11)
    return val, inside


def split_fisheye(
    image: np.ndarray,
    model: FisheyeModel,
    rig_rotation: np.ndarray | None = None,
    rig_translation: np.ndarray | None = None,
    out_size: int = 256,
):
    """Resample one fisheye image into five 90-degree pinhole views.

    Returns a list of (image, valid_mask, PinholeCamera); the cameras compose
    the virtual orientation with the rig pose (world -> fisheye frame).
    Pixels whose rays leave the fisheye field of view are masked out.
    """
    image = np.asarray(image, dtype=np.float64)
    if rig_rotation is None:
        rig_rotation = np.eye(3)
    if rig_translation is None:
        rig_translation = np.zeros(3)
    f_pin = out_size / 2.0  # 90-degree FOV: half-width = f * tan(45)
    cx = cy = out_size / 2.0
    half_fov = math.radians(model.fov_degrees) / 2.0

    us = (np.arange(out_size) + 0.5 - cx) / f_pin
    vs = (np.arange(out_size) + 0.5 - cy) / f_pin
    gx, gy = np.meshgrid(us, vs)
    dirs_virtual = np.stack([gx, gy, np.ones_like(gx)], axis=-1)

    outputs = []
    for rot in virtual_rotations():
        d = dirs_virtual @ rot.T  # direction in the fisheye frame
        norm = np.linalg.norm(d, axis=-1)
        theta = np.arccos(np.clip(d[..., 2] / norm, -1.0, 1.0))
        phi = np.arctan2(d[..., 1], d[..., 0])
        r = model.focal * theta
        u = model.center[0] + r * np.cos(phi)
        v = model.center[1] + r * np.sin(phi)
        values, inside = _bilinear(image, u, v)
        valid = inside & (theta <= half_fov)
        values = np.where(valid[..., None], values, 0.0)
        cam = PinholeCamera(
            fx=f_pin,
            fy=f_pin,
            cx=cx,
            cy=cy,
            width=out_size,
            height=out_size,
            rotation=rot.T @ rig_rotation,
            translation=rot.T @ rig_translation,
        )
        outputs.append((values, valid, cam))
    return outputs


def clean_mesh(vertices, faces, cloud_points, threshold: float = 0.1):
    """Drop faces whose centroid is farther than ``threshold`` from the cloud.

    Nearest-neighbor distances come from a kd-tree over the cloud (k = 1).
    Returns (vertices, kept_faces, kept_mask).
    """
    cloud_points = np.asarray(cloud_points, dtype=np.float64)
    if len(cloud_points) == 0:
        raise EmptyInputError("empty point cloud")
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    centroids = vertices[faces].mean(axis=1)
    dist, _ = cKDTree(cloud_points).query(centroids, k=1)
    keep = dist <= threshold
    return vertices, faces[keep], keep


@dataclass
class Block:
    core_min: np.ndarray
    core_max: np.ndarray
    expanded_min: np.ndarray
    expanded_max: np.ndarray
    view_ids: list[str] = field(default_factory=list)

    def contains(self, point) -> bool:
        p = np.asarray(point)
        return bool(np.all(p >= self.core_min) and np.all(p <= self.core_max))


def partition_blocks(scene_min, scene_max, grid: tuple[int, int], expansion: float = 0.3) -> list[Block]:
    """Regular nx-by-ny horizontal grid of blocks covering the scene footprint.

    Cores tile x/y exactly and span the full vertical extent; each block is
    then grown per axis by ``expansion`` of its core extent (half per side).
    """
    scene_min = np.asarray(scene_min, dtype=np.float64)
    scene_max = np.asarray(scene_max, dtype=np.float64)
    nx, ny = grid
    if nx < 1 or ny < 1:
        raise InvalidParameterError("grid must be at least 1x1")
    xs = np.linspace(scene_min[0], scene_max[0], nx + 1)
    ys = np.linspace(scene_min[1], scene_max[1], ny + 1)
    blocks = []
    for j in range(ny):
        for i in range(nx):
            cmin = np.array([xs[i], ys[j], scene_min[2]])
            cmax = np.array([xs[i + 1], ys[j + 1], scene_max[2]])
            grow = 0.5 * expansion * (cmax - cmin)
            blocks.append(Block(cmin, cmax, cmin - grow, cmax + grow))
    return blocks


def coverage_raster(vertices, faces, camera: PinholeCamera, scale: float = 0.25) -> np.ndarray:
    """Binary visibility-agnostic coverage of the mesh in the camera view.

    Triangles with any vertex behind the near plane are skipped; this is a
    screen-coverage proxy for view selection, not a renderer.
    """
    w = max(1, int(round(camera.width * scale)))
    h = max(1, int(round(camera.height * scale)))
    sx = w / camera.width
    sy = h / camera.height
    raster = np.zeros((h, w), dtype=bool)
    verts_cam = camera.world_to_camera(np.asarray(vertices, dtype=np.float64))
    z = verts_cam[:, 2]
    uv = np.stack(
        [
            (camera.fx * verts_cam[:, 0] / np.where(z > 0, z, 1.0) + camera.cx) * sx,
            (camera.fy * verts_cam[:, 1] / np.where(z > 0, z, 1.0) + camera.cy) * sy,
        ],
        axis=1,
    )
    for face in np.asarray(faces, dtype=np.int64):
        if np.any(z[face] <= 1e-6):
            continue
        tri = uv[face]
        x0, y0 = np.floor(tri.min(axis=0)).astype(int)
        x1, y1 = np.ceil(tri.max(axis=0)).astype(int)
        x0 = max(x0, 0)
        y0 = max(y0, 0)
        x1 = min(x1, w)
        y1 = min(y1, h)
        if x0 >= x1 or y0 >= y1:
            continue
        gx, gy = np.meshgrid(np.arange(x0, x1) + 0.5, np.arange(y0, y1) + 0.5)
        d = np.stack([gx, gy], axis=-1) - tri[0]
        e1 = tri[1] - tri[0]
        e2 = tri[2] - tri[0]
        det = e1[0] * e2[1] - e1[1] * e2[0]
        if det == 0.0:
            continue
        b1 = (d[..., 0] * e2[1] - d[..., 1] * e2[0]) / det
        b2 = (e1[0] * d[..., 1] - e1[1] * d[..., 0]) / det
        inside = (b1 >= 0) & (b2 >= 0) & (b1 + b2 <= 1)
        raster[y0:y1, x0:x1] |= inside
    return raster


def select_views(
    block: Block,
    cameras: list[PinholeCamera],
    vertices,
    faces,
    overlap_threshold: float = 0.8,
    raster_scale: float = 0.25,
) -> list[str]:
    """Training views for a block: inside the core, or dominated by block content.

    Outside cameras are kept when block-mesh coverage divided by full-mesh
    coverage exceeds the threshold. Block mesh = faces whose centroid lies in
    the expanded bbox.
    """
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    centroids = vertices[faces].mean(axis=1)
    in_block = np.all((centroids >= block.expanded_min) & (centroids <= block.expanded_max), axis=1)
    block_faces = faces[in_block]

    kept = []
    for cam in cameras:
        if block.contains(cam.center):
            kept.append(cam.cam_id)
            continue
        full = coverage_raster(vertices, faces, cam, raster_scale)
        n_full = int(full.sum())
        if n_full == 0:
            continue
        blk = coverage_raster(vertices, block_faces, cam, raster_scale)
        if blk.sum() / n_full > overlap_threshold:
            kept.append(cam.cam_id)
    return kept
