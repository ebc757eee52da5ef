"""Octree packing of per-level splats into a two-file streamable store.

``hierarchy.bin`` holds the pruned tree metadata, ``octree.bin`` the
contiguous fixed-size splat records. Layout (all little-endian):

  hierarchy.bin:
    magic "LGSO" | u32 version=1 | u32 L | global bbox 6 x f64 | u32 node_count
    then per node, breadth-first: u8 depth | u8 child_mask | u16 reserved |
    u32 num_points | u64 byte_offset | u64 byte_size | bbox 6 x f64

  octree.bin:
    per node, in the same order: num_points records of 38 float32
    (position 3, rotation 4, log_scale 3, opacity 1, sh 27) = 152 bytes each.

The tree has depth L; a node at depth d holds exactly the level-d splats
inside its cell. Cells are half-open boxes obtained by midpoint splitting
(the global max face is closed). Nodes whose whole subtree is empty are
pruned; interior nodes with occupied descendants are kept even when they hold
no splats of their own. Within a node, records are sorted by the Morton code
of their quantized position (ties broken by the full record values), so the
output bytes do not depend on input order.
"""

from __future__ import annotations

import struct
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .gaussians import ContractViolationError, GaussianCloud, InvalidParameterError, SPLAT_FLOATS

MAGIC = b"LGSO"
VERSION = 1
RECORD_SIZE = SPLAT_FLOATS * 4  # 152 bytes
_NODE_STRUCT = struct.Struct("<BBHIQQ6d")  # 72 bytes
_HEADER_STRUCT = struct.Struct("<4sII6dI")


class StoreFormatError(ValueError):
    """Malformed hierarchy or payload file; message carries the byte position."""


class ChunkCorruptionError(ValueError):
    """Chunk decoded to non-finite values."""


@dataclass
class OctreeNode:
    node_id: int  # breadth-first emission index
    depth: int
    child_mask: int
    num_points: int
    byte_offset: int
    byte_size: int
    bbox_min: np.ndarray
    bbox_max: np.ndarray
    children: list["OctreeNode"] = field(default_factory=list)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.bbox_min + self.bbox_max)


@dataclass
class OctreeStore:
    num_levels: int
    bbox_min: np.ndarray
    bbox_max: np.ndarray
    nodes: list[OctreeNode]  # breadth-first order

    @property
    def root(self) -> OctreeNode:
        return self.nodes[0]

    def total_payload_bytes(self) -> int:
        return sum(n.byte_size for n in self.nodes)


def _cubify(bbox_min, bbox_max):
    center = 0.5 * (bbox_min + bbox_max)
    side = max(float((bbox_max - bbox_min).max()), 1e-9)
    return center - side / 2.0, center + side / 2.0


def _morton(q: np.ndarray) -> np.ndarray:
    """Interleave three 10-bit coordinates into a 30-bit code."""

    def spread(v):
        v = v.astype(np.uint64)
        v = (v | (v << 16)) & np.uint64(0x030000FF)
        v = (v | (v << 8)) & np.uint64(0x0300F00F)
        v = (v | (v << 4)) & np.uint64(0x030C30C3)
        v = (v | (v << 2)) & np.uint64(0x09249249)
        return v

    return spread(q[:, 0]) | (spread(q[:, 1]) << np.uint64(1)) | (spread(q[:, 2]) << np.uint64(2))


def _assign_cells(positions: np.ndarray, bbox_min, bbox_max, depth: int) -> np.ndarray:
    """Integer cell coordinates at the given depth via exact midpoint descent.

    Matches the recursive octant subdivision bit for bit, so every splat lands
    in the cell whose derived bbox contains it (lower-halves half-open, global
    max face closed).
    """
    n = len(positions)
    lo = np.tile(bbox_min, (n, 1))
    hi = np.tile(bbox_max, (n, 1))
    cells = np.zeros((n, 3), dtype=np.int64)
    for _ in range(depth):
        mid = 0.5 * (lo + hi)
        upper = positions >= mid
        cells = cells * 2 + upper
        lo = np.where(upper, mid, lo)
        hi = np.where(upper, hi, mid)
    return cells


def _sorted_records(cloud: GaussianCloud, members: np.ndarray, nmin, nmax) -> np.ndarray:
    rec = cloud.to_records()[members]
    span = np.maximum(nmax - nmin, 1e-12)
    q = np.clip(((cloud.positions[members] - nmin) / span * 1024.0).astype(np.int64), 0, 1023)
    morton = _morton(q)
    keys = tuple(rec[:, c] for c in range(rec.shape[1] - 1, -1, -1)) + (morton,)
    return rec[np.lexsort(keys)]


def build_octree(levels: list[GaussianCloud], hierarchy_path, payload_path) -> OctreeStore:
    """Pack per-level splat lists (index = LOD level = tree depth) into the store."""
    num_levels = len(levels)
    if num_levels == 0 or all(len(lv) == 0 for lv in levels):
        raise InvalidParameterError("cannot pack an empty set of levels")
    for lv in levels:
        if len(lv) and not np.all(np.isfinite(lv.to_records())):
            raise InvalidParameterError("non-finite splat attributes")

    all_pos = np.concatenate([lv.positions for lv in levels if len(lv)])
    bbox_min, bbox_max = _cubify(all_pos.min(axis=0), all_pos.max(axis=0))

    # per-depth cell membership
    cell_members: list[dict[tuple, np.ndarray]] = []
    for d, lv in enumerate(levels):
        members: dict[tuple, list[int]] = {}
        if len(lv):
            cells = _assign_cells(lv.positions, bbox_min, bbox_max, d)
            for i, c in enumerate(map(tuple, cells)):
                members.setdefault(c, []).append(i)
        cell_members.append({c: np.asarray(ix) for c, ix in members.items()})

    # subtree occupancy, deepest level first
    occupied: list[set] = [set(m.keys()) for m in cell_members]
    for d in range(num_levels - 2, -1, -1):
        occupied[d] |= {(c[0] // 2, c[1] // 2, c[2] // 2) for c in occupied[d + 1]}

    # breadth-first emission with midpoint-split bboxes
    node_meta = []
    payload = bytearray()
    queue = [((0, 0, 0), 0, np.array(bbox_min), np.array(bbox_max))]
    while queue:
        cell, depth, nmin, nmax = queue.pop(0)
        child_mask = 0
        if depth + 1 < num_levels:
            mid = 0.5 * (nmin + nmax)
            for octant in range(8):
                bits = np.array([octant & 1, (octant >> 1) & 1, (octant >> 2) & 1])
                child_cell = (
                    cell[0] * 2 + bits[0],
                    cell[1] * 2 + bits[1],
                    cell[2] * 2 + bits[2],
                )
                if child_cell in occupied[depth + 1]:
                    child_mask |= 1 << octant
                    cmin = np.where(bits, mid, nmin)
                    cmax = np.where(bits, nmax, mid)
                    queue.append((child_cell, depth + 1, cmin, cmax))
        members = cell_members[depth].get(cell)
        offset = len(payload)
        if members is not None:
            rec = _sorted_records(levels[depth], members, nmin, nmax)
            payload.extend(rec.astype("<f4").tobytes())
            num = len(rec)
        else:
            num = 0
        node_meta.append((depth, child_mask, num, offset, num * RECORD_SIZE, nmin, nmax))

    with open(hierarchy_path, "wb") as fh:
        fh.write(
            _HEADER_STRUCT.pack(
                MAGIC, VERSION, num_levels, *bbox_min.tolist(), *bbox_max.tolist(), len(node_meta)
            )
        )
        for depth, mask, num, off, size, nmin, nmax in node_meta:
            fh.write(_NODE_STRUCT.pack(depth, mask, 0, num, off, size, *nmin.tolist(), *nmax.tolist()))
    Path(payload_path).write_bytes(bytes(payload))
    return read_hierarchy(hierarchy_path)


def read_hierarchy(path) -> OctreeStore:
    """Parse and re-validate hierarchy.bin; refuses truncated or inconsistent files."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER_STRUCT.size:
        raise StoreFormatError(f"truncated header at byte {len(raw)}")
    magic, version, num_levels, *rest = _HEADER_STRUCT.unpack_from(raw, 0)
    if magic != MAGIC:
        raise StoreFormatError(f"bad magic {magic!r} at byte 0")
    if version != VERSION:
        raise StoreFormatError(f"unsupported version {version} at byte 4")
    bbox_min = np.array(rest[0:3])
    bbox_max = np.array(rest[3:6])
    node_count = rest[6]
    need = _HEADER_STRUCT.size + node_count * _NODE_STRUCT.size
    if len(raw) < need:
        raise StoreFormatError(f"truncated node table: file ends at byte {len(raw)}, need {need}")

    nodes: list[OctreeNode] = []
    for i in range(node_count):
        off = _HEADER_STRUCT.size + i * _NODE_STRUCT.size
        depth, mask, _reserved, num, boff, bsize, *bb = _NODE_STRUCT.unpack_from(raw, off)
        if depth >= num_levels:
            raise StoreFormatError(f"node {i}: depth {depth} exceeds tree depth at byte {off}")
        if bsize != num * RECORD_SIZE:
            raise StoreFormatError(f"node {i}: byte_size {bsize} != num_points*{RECORD_SIZE} at byte {off}")
        nodes.append(
            OctreeNode(i, depth, mask, num, boff, bsize, np.array(bb[0:3]), np.array(bb[3:6]))
        )
    if not nodes:
        raise StoreFormatError("empty hierarchy")

    # reconstruct parent/child links from BFS order
    next_child = 1
    for node in nodes:
        k = bin(node.child_mask).count("1")
        if next_child + k > len(nodes):
            raise StoreFormatError(f"node {node.node_id}: child references run past the node table")
        node.children = nodes[next_child : next_child + k]
        next_child += k
        mid = 0.5 * (node.bbox_min + node.bbox_max)
        octants = [o for o in range(8) if node.child_mask & (1 << o)]
        for child, octant in zip(node.children, octants):
            bits = np.array([octant & 1, (octant >> 1) & 1, (octant >> 2) & 1])
            want_min = np.where(bits, mid, node.bbox_min)
            want_max = np.where(bits, node.bbox_max, mid)
            if child.depth != node.depth + 1 or not (
                np.array_equal(child.bbox_min, want_min) and np.array_equal(child.bbox_max, want_max)
            ):
                raise StoreFormatError(f"node {child.node_id}: bbox is not octant {octant} of its parent")
    if next_child != len(nodes):
        raise StoreFormatError("node table does not form a single breadth-first tree")

    offsets = [n.byte_offset for n in nodes]
    sizes = [n.byte_size for n in nodes]
    pos = 0
    for i, (o, s) in enumerate(zip(offsets, sizes)):
        if o != pos:
            raise StoreFormatError(f"node {i}: byte_offset {o} breaks contiguous emission order")
        pos += s
    return OctreeStore(num_levels, bbox_min, bbox_max, nodes)


class LocalRangeReader:
    """Random access over a local payload file."""

    def __init__(self, path):
        self.path = Path(path)
        self._fh = open(path, "rb")

    def read(self, offset: int, size: int) -> bytes:
        self._fh.seek(offset)
        return self._fh.read(size)

    def close(self):
        self._fh.close()


class HttpRangeReader:
    """Random access over HTTP via Range requests."""

    def __init__(self, url: str):
        self.url = url

    def read(self, offset: int, size: int) -> bytes:
        req = urllib.request.Request(self.url, headers={"Range": f"bytes={offset}-{offset + size - 1}"})
        with urllib.request.urlopen(req) as resp:
            return resp.read()


def fetch_chunk(source, node: OctreeNode) -> GaussianCloud:
    """Decode one node's records; the splats carry the node depth as their level."""
    if node.num_points == 0:
        raise ContractViolationError(f"node {node.node_id} holds no points; nothing to fetch")
    raw = source.read(node.byte_offset, node.byte_size)
    if len(raw) != node.byte_size:
        raise IOError(
            f"short read for node {node.node_id}: wanted {node.byte_size} bytes, got {len(raw)}"
        )
    rec = np.frombuffer(raw, dtype="<f4").reshape(node.num_points, SPLAT_FLOATS)
    if not np.all(np.isfinite(rec)):
        raise ChunkCorruptionError(f"node {node.node_id} decodes to non-finite values")
    return GaussianCloud.from_records(rec, lod_level=node.depth)
