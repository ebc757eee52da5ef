"""Multi-resolution point cloud construction for per-level splat initialization.

The finest level is the input cloud (spacing tau); each coarser level doubles
the spacing and keeps a greedy Poisson-disk subset of the previous level, until
the count drops below the cutoff. Level 0 is the coarsest, L-1 the finest, and
coarser levels are literal subsets of finer ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cameras import PinholeCamera
from .gaussians import InvalidParameterError

DEFAULT_TAU = 0.04  # meters
DEFAULT_EPS_P = 10_000  # coarsest-level point budget

# candidates generated per unit disk area when sampling a surface; greedy
# rejection saturates well below this density
_OVERSAMPLE = 24.0


class EmptyInputError(ValueError):
    """Mesh or cloud has no usable content."""


@dataclass
class LevelCloud:
    spacing: float
    points: np.ndarray  # (N, 3)
    colors: np.ndarray  # (N, 3) in [0, 1]

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class MultiResCloud:
    """Resolution pyramid; index 0 is the coarsest level, L-1 the finest."""

    levels: list[LevelCloud]

    @property
    def num_levels(self) -> int:
        return len(self.levels)

    @property
    def finest(self) -> LevelCloud:
        return self.levels[-1]

    def __iter__(self):
        return iter(self.levels)


def poisson_disk_indices(points: np.ndarray, spacing: float) -> np.ndarray:
    """Greedy disk thinning: visit points in input order, accept a point iff no
    previously accepted point lies within ``spacing``.

    Deterministic for a fixed input order. Cell size spacing/sqrt(3) makes
    each grid cell hold at most one accepted point.
    """
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    cell = spacing / math.sqrt(3.0)
    coords = np.floor(points / cell).astype(np.int64)
    r2 = spacing * spacing
    occupied: dict[tuple[int, int, int], int] = {}
    accepted: list[int] = []
    pts = points  # local alias for speed
    get = occupied.get
    offsets = [
        (dx, dy, dz)
        for dx in range(-2, 3)
        for dy in range(-2, 3)
        for dz in range(-2, 3)
    ]
    for i in range(n):
        cx, cy, cz = coords[i]
        px, py, pz = pts[i]
        ok = True
        for dx, dy, dz in offsets:
            j = get((cx + dx, cy + dy, cz + dz))
            if j is not None:
                qx, qy, qz = pts[j]
                if (px - qx) ** 2 + (py - qy) ** 2 + (pz - qz) ** 2 < r2:
                    ok = False
                    break
        if ok:
            occupied[(cx, cy, cz)] = i
            accepted.append(i)
    return np.asarray(accepted, dtype=np.int64)


def sample_mesh(vertices, faces, vertex_colors, spacing: float, rng=None):
    """Sample a colored point set from a triangle mesh at the given spacing.

    Area-weighted uniform candidates, barycentric color interpolation, then
    greedy Poisson-disk thinning. Returns (points, colors).
    """
    if rng is None:
        rng = np.random.default_rng(0)
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    vertex_colors = np.asarray(vertex_colors, dtype=np.float64)
    if len(faces) == 0:
        raise EmptyInputError("mesh has no faces")
    a = vertices[faces[:, 0]]
    b = vertices[faces[:, 1]]
    c = vertices[faces[:, 2]]
    areas = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
    total_area = areas.sum()
    if total_area <= 0.0:
        raise EmptyInputError("mesh has zero total area")
    disk_area = math.pi * (spacing / 2.0) ** 2
    n_candidates = max(1, int(math.ceil(_OVERSAMPLE * total_area / disk_area)))

    tri = rng.choice(len(faces), size=n_candidates, p=areas / total_area)
    r1 = np.sqrt(rng.random(n_candidates))
    r2 = rng.random(n_candidates)
    w0 = 1.0 - r1
    w1 = r1 * (1.0 - r2)
    w2 = r1 * r2
    pts = w0[:, None] * a[tri] + w1[:, None] * b[tri] + w2[:, None] * c[tri]
    cols = (
        w0[:, None] * vertex_colors[faces[tri, 0]]
        + w1[:, None] * vertex_colors[faces[tri, 1]]
        + w2[:, None] * vertex_colors[faces[tri, 2]]
    )
    keep = poisson_disk_indices(pts, spacing)
    return pts[keep], cols[keep]


def build_levels(points, colors=None, tau: float = DEFAULT_TAU, eps_p: int = DEFAULT_EPS_P) -> MultiResCloud:
    """Build the resolution pyramid from the finest cloud down to below eps_p points."""
    points = np.asarray(points, dtype=np.float64)
    if len(points) == 0:
        raise EmptyInputError("empty point cloud")
    if colors is None:
        colors = np.full((len(points), 3), 0.5)
    colors = np.asarray(colors, dtype=np.float64)

    fine_to_coarse = [LevelCloud(tau, points, colors)]
    spacing = tau
    while len(fine_to_coarse[-1]) >= eps_p:
        spacing *= 2.0
        prev = fine_to_coarse[-1]
        keep = poisson_disk_indices(prev.points, spacing)
        fine_to_coarse.append(LevelCloud(spacing, prev.points[keep], prev.colors[keep]))
    return MultiResCloud(levels=fine_to_coarse[::-1])


def bounding_sphere(points) -> tuple[np.ndarray, float]:
    """(center, radius) of the bbox-centered bounding sphere."""
    points = np.asarray(points, dtype=np.float64)
    center = 0.5 * (points.min(axis=0) + points.max(axis=0))
    radius = float(np.linalg.norm(points - center, axis=1).max())
    return center, radius


def per_view_dmax(points, camera: PinholeCamera) -> float:
    """Maximum camera-space depth among points projecting inside the image.

    Falls back to the scene bounding-sphere diameter when nothing projects.
    """
    points = np.asarray(points, dtype=np.float64)
    if len(points) == 0:
        raise InvalidParameterError("empty point cloud")
    x_cam = camera.world_to_camera(points)
    z = x_cam[:, 2]
    front = z > 0
    if front.any():
        uv = camera.project(x_cam[front])
        inside = (
            (uv[:, 0] >= 0) & (uv[:, 0] < camera.width) & (uv[:, 1] >= 0) & (uv[:, 1] < camera.height)
        )
        if inside.any():
            return float(z[front][inside].max())
    _, radius = bounding_sphere(points)
    return 2.0 * radius
