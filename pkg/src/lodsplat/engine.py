"""Reference LOD render engine: level bands, frustum culling, budgeted loading.

Selection is a pure function of (camera, hierarchy, d_max, budget) and is
mirrored verbatim by the web viewer, with this engine as the oracle:

  1. A node is visible iff its bbox center lies inside the frustum, or the
     camera is inside the bbox. The frustum is the six camera planes (near,
     far, and the four image-edge planes), evaluated as camera-space slope
     tests with near = 0.01 and far = 2 x scene diameter.
  2. A visible node is wanted iff its depth equals
     select_level(|camera - center|) - bands are exclusive, one level per
     region.
  3. Wanted nodes are visited ordered by (depth, distance, node id);
     each is kept if resident, else fetched when the byte budget allows,
     evicting least-recently-used non-preloaded chunks that are not needed
     by the current pass.
  4. A kept node with a kept descendant is dropped from the emitted set: the
     finer chunk replaces the coarser coverage for that region.
  5. Visible leaf regions left without an emitted node on their ancestor
     chain (band boundaries, budget misses, fetch faults) fall back to their
     deepest preloaded ancestor, so the preloaded base always provides
     coverage at degraded quality.

Loading and rendering are decoupled: the renderer consumes an immutable
RenderSet snapshot and never blocks on the loader. Levels are hard-switched;
interpolating between adjacent levels during transitions would slot in at
RenderSet assembly but is intentionally not implemented.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cameras import PinholeCamera
from .gaussians import GaussianCloud, InvalidParameterError
from .octree import RECORD_SIZE, OctreeNode, OctreeStore, fetch_chunk
from .rasterizer import FrameBuffer, RenderSettings, rasterize

GIB = 1024**3


@dataclass
class LoadBudget:
    max_bytes: int = 2 * GIB
    preload_levels: int = 1

    def __post_init__(self):
        if self.max_bytes <= 0 or self.preload_levels < 0:
            raise InvalidParameterError("budget must be positive")


@dataclass
class RenderSet:
    """Immutable selection snapshot: nodes with their decoded splat slices."""

    entries: list[tuple[OctreeNode, GaussianCloud]]
    selected_ids: list[int]  # banded nodes made resident
    fallback_ids: list[int]  # preloaded ancestors standing in for missing chunks
    bytes_resident: int
    bytes_loaded: int
    faults: int

    @property
    def total_splats(self) -> int:
        return sum(len(c) for _, c in self.entries)


def select_level(d: float, d_max: float, num_levels: int) -> int:
    """Distance band -> level: clamp(floor(L^(1 - d/d_max)), 0, L-1)."""
    if d_max <= 0 or d < 0 or num_levels < 1:
        raise InvalidParameterError("need d >= 0, d_max > 0, L >= 1")
    raw = math.floor(num_levels ** (1.0 - d / d_max))
    return min(max(raw, 0), num_levels - 1)


def center_in_frustum(camera: PinholeCamera, point, near: float, far: float) -> bool:
    p = camera.world_to_camera(np.asarray(point, dtype=np.float64))
    x, y, z = p
    if not (near < z <= far):
        return False
    return (
        -camera.cx / camera.fx * z <= x <= (camera.width - camera.cx) / camera.fx * z
        and -camera.cy / camera.fy * z <= y <= (camera.height - camera.cy) / camera.fy * z
    )


def camera_in_bbox(camera: PinholeCamera, node: OctreeNode) -> bool:
    c = camera.center
    return bool(np.all(c >= node.bbox_min) and np.all(c <= node.bbox_max))


class ChunkCache:
    """Byte-budgeted chunk residency with pinned preloads and LRU eviction."""

    def __init__(self, source, budget: LoadBudget):
        self.source = source
        self.budget = budget
        self.chunks: dict[int, GaussianCloud] = {}
        self.pinned: set[int] = set()
        self.lru: list[int] = []  # least recently used first, non-pinned only
        self.total_bytes = 0

    def preload(self, store: OctreeStore) -> None:
        """Fetch the coarsest ``preload_levels`` levels, truncated coarse-first to fit."""
        for node in store.nodes:  # BFS order is coarse-first
            if node.depth >= self.budget.preload_levels or node.num_points == 0:
                continue
            if self.total_bytes + node.byte_size > self.budget.max_bytes:
                break
            self.chunks[node.node_id] = fetch_chunk(self.source, node)
            self.pinned.add(node.node_id)
            self.total_bytes += node.byte_size

    def is_resident(self, node_id: int) -> bool:
        return node_id in self.chunks

    def touch(self, node_id: int) -> None:
        if node_id in self.lru:
            self.lru.remove(node_id)
            self.lru.append(node_id)

    def ensure(self, node: OctreeNode, protected: set[int]) -> bool:
        """Make a chunk resident if the budget allows; True when resident."""
        if node.node_id in self.chunks:
            self.touch(node.node_id)
            return True
        while self.total_bytes + node.byte_size > self.budget.max_bytes:
            victim = next((nid for nid in self.lru if nid not in protected), None)
            if victim is None:
                return False
            self.lru.remove(victim)
            self.total_bytes -= len(self.chunks.pop(victim)) * RECORD_SIZE
        try:
            cloud = fetch_chunk(self.source, node)
        except Exception:
            raise _FetchFault(node.node_id)
        self.chunks[node.node_id] = cloud
        self.lru.append(node.node_id)
        self.total_bytes += node.byte_size
        return True


class _FetchFault(Exception):
    def __init__(self, node_id):
        self.node_id = node_id


class RenderEngine:
    """Budgeted coarse-to-fine renderer over an octree store."""

    def __init__(self, store: OctreeStore, source, budget: LoadBudget | None = None,
                 d_max: float | None = None):
        self.store = store
        self.budget = budget or LoadBudget()
        # interactive-time distance scale: bounding-sphere diameter of the
        # stored global cube (its diagonal)
        self.scene_diameter = float(np.linalg.norm(store.bbox_max - store.bbox_min))
        self.d_max = d_max if d_max is not None else self.scene_diameter
        self.near = 0.01
        self.far = 2.0 * self.scene_diameter
        self.cache = ChunkCache(source, self.budget)
        self.cache.preload(store)
        self._ancestors = self._build_ancestors()

    def _build_ancestors(self) -> dict[int, list[int]]:
        parents = {self.store.root.node_id: []}
        stack = [self.store.root]
        while stack:
            node = stack.pop()
            for child in node.children:
                parents[child.node_id] = parents[node.node_id] + [node.node_id]
                stack.append(child)
        return parents

    def _visible(self, camera: PinholeCamera, node: OctreeNode) -> bool:
        return center_in_frustum(camera, node.center, self.near, self.far) or camera_in_bbox(
            camera, node
        )

    def cull_and_collect(self, camera: PinholeCamera) -> RenderSet:
        cam_pos = camera.center
        num_levels = self.store.num_levels
        wanted = []
        for node in self.store.nodes:
            if node.num_points == 0 or not self._visible(camera, node):
                continue
            dist = float(np.linalg.norm(cam_pos - node.center))
            if select_level(dist, self.d_max, num_levels) == node.depth:
                wanted.append((node.depth, dist, node.node_id, node))
        wanted.sort(key=lambda t: (t[0], t[1], t[2]))

        protected = {t[2] for t in wanted} | self.cache.pinned
        resident_ids: list[int] = []
        faults = 0
        loaded = 0
        for _, _, nid, node in wanted:
            was_resident = self.cache.is_resident(nid)
            try:
                if self.cache.ensure(node, protected):
                    resident_ids.append(nid)
                    if not was_resident:
                        loaded += node.byte_size
            except _FetchFault:
                faults += 1

        # finer chunks replace coarser coverage: drop shadowed ancestors
        resident_set = set(resident_ids)
        shadowed: set[int] = set()
        for nid in resident_ids:
            for anc in self._ancestors[nid]:
                if anc in resident_set:
                    shadowed.add(anc)
        selected = [nid for nid in resident_ids if nid not in shadowed]
        selected_set = set(selected)

        # preloaded base covers visible leaf regions that lost their band node
        fallback: list[int] = []
        fallback_set: set[int] = set()
        leaf_depth = num_levels - 1
        for node in self.store.nodes:
            if node.depth != leaf_depth or node.num_points == 0 or not self._visible(camera, node):
                continue
            chain = self._ancestors[node.node_id] + [node.node_id]
            if any(nid in selected_set for nid in chain):
                continue
            for anc_id in reversed(chain):
                if anc_id in self.cache.pinned and self.store.nodes[anc_id].num_points > 0:
                    if anc_id not in fallback_set:
                        fallback.append(anc_id)
                        fallback_set.add(anc_id)
                    break

        entries = [(self.store.nodes[nid], self.cache.chunks[nid]) for nid in selected + fallback]
        return RenderSet(
            entries=entries,
            selected_ids=selected,
            fallback_ids=fallback,
            bytes_resident=self.cache.total_bytes,
            bytes_loaded=loaded,
            faults=faults,
        )

    def render_view(self, render_set: RenderSet, camera: PinholeCamera,
                    settings: RenderSettings | None = None) -> tuple[FrameBuffer, dict]:
        clouds = [c for _, c in render_set.entries]
        merged = GaussianCloud.concatenate(clouds) if clouds else GaussianCloud.empty()
        frame = rasterize(merged, camera, settings or RenderSettings())
        per_level: dict[int, int] = {}
        for node, cloud in render_set.entries:
            per_level[node.depth] = per_level.get(node.depth, 0) + len(cloud)
        stats = {
            "splats": render_set.total_splats,
            "nodes": len(render_set.entries),
            "bytes_resident": render_set.bytes_resident,
            "bytes_loaded": render_set.bytes_loaded,
            "faults": render_set.faults,
            "per_level": {str(k): v for k, v in sorted(per_level.items())},
            "selected_ids": render_set.selected_ids,
            "fallback_ids": render_set.fallback_ids,
        }
        return frame, stats
