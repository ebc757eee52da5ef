"""File formats: minimal PLY reader/writer, per-level splat files, rasters, PNG.

PLY support covers what this pipeline produces and consumes: scalar float32 /
float64 / uint8 / int32 vertex properties plus one face list property, in
ascii or binary little-endian form. Splat files are binary little-endian with
the conventional property layout (x y z, rot_0..3, scale_0..2, opacity,
f_dc_0..2, f_rest_0..23) so common splat tooling can open them.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .gaussians import GaussianCloud

_PLY_TYPES = {
    "float": ("<f4", float),
    "float32": ("<f4", float),
    "double": ("<f8", float),
    "float64": ("<f8", float),
    "uchar": ("u1", int),
    "uint8": ("u1", int),
    "int": ("<i4", int),
    "int32": ("<i4", int),
    "uint": ("<u4", int),
    "uint32": ("<u4", int),
}


class PlyFormatError(ValueError):
    pass


def _parse_header(fh):
    magic = fh.readline().strip()
    if magic != b"ply":
        raise PlyFormatError("not a PLY file")
    fmt = None
    elements = []  # (name, count, [(prop_name, dtype) ...], list_prop or None)
    current = None
    while True:
        line = fh.readline()
        if not line:
            raise PlyFormatError("unterminated PLY header")
        tokens = line.decode("ascii").strip().split()
        if not tokens or tokens[0] == "comment":
            continue
        if tokens[0] == "format":
            fmt = tokens[1]
        elif tokens[0] == "element":
            current = {"name": tokens[1], "count": int(tokens[2]), "props": [], "list": None}
            elements.append(current)
        elif tokens[0] == "property":
            if tokens[1] == "list":
                current["list"] = (tokens[4], _PLY_TYPES[tokens[2]][0], _PLY_TYPES[tokens[3]][0])
            else:
                current["props"].append((tokens[2], _PLY_TYPES[tokens[1]][0]))
        elif tokens[0] == "end_header":
            break
    if fmt not in ("ascii", "binary_little_endian"):
        raise PlyFormatError(f"unsupported PLY format {fmt}")
    return fmt, elements


def read_ply(path):
    """Read a PLY file into {element: {property: array}}; face lists become (F, 3) int arrays."""
    with open(path, "rb") as fh:
        fmt, elements = _parse_header(fh)
        out = {}
        for el in elements:
            name, count = el["name"], el["count"]
            props = el["props"]
            if el["list"] is not None:
                list_name, count_dt, item_dt = el["list"]
                rows = []
                if fmt == "ascii":
                    for _ in range(count):
                        vals = fh.readline().split()
                        k = int(vals[0])
                        rows.append([int(v) for v in vals[1 : 1 + k]])
                else:
                    for _ in range(count):
                        k = int(np.frombuffer(fh.read(np.dtype(count_dt).itemsize), dtype=count_dt)[0])
                        item = np.dtype(item_dt)
                        rows.append(np.frombuffer(fh.read(item.itemsize * k), dtype=item_dt).tolist())
                if rows and any(len(r) != 3 for r in rows):
                    raise PlyFormatError("only triangle faces are supported")
                out[name] = {list_name: np.asarray(rows, dtype=np.int64).reshape(-1, 3)}
            elif fmt == "ascii":
                data = np.loadtxt(
                    [fh.readline() for _ in range(count)], dtype=np.float64, ndmin=2
                )
                out[name] = {p[0]: data[:, i] for i, p in enumerate(props)}
            else:
                dtype = np.dtype([(p[0], p[1]) for p in props])
                raw = fh.read(dtype.itemsize * count)
                if len(raw) != dtype.itemsize * count:
                    raise PlyFormatError(f"truncated PLY payload in element {name}")
                rec = np.frombuffer(raw, dtype=dtype)
                out[name] = {p[0]: rec[p[0]].copy() for p in props}
        return out


def _write_ply_header(fh, elements, binary=True):
    fh.write(b"ply\n")
    fh.write(b"format binary_little_endian 1.0\n" if binary else b"format ascii 1.0\n")
    for name, count, props, list_prop in elements:
        fh.write(f"element {name} {count}\n".encode())
        for pname, ptype in props:
            fh.write(f"property {ptype} {pname}\n".encode())
        if list_prop:
            fh.write(f"property list uchar int {list_prop}\n".encode())
    fh.write(b"end_header\n")


def write_point_cloud_ply(path, points, colors) -> None:
    """Binary point file: x, y, z float32 + red, green, blue uint8."""
    points = np.asarray(points, dtype=np.float32)
    colors_u8 = np.clip(np.asarray(colors, dtype=np.float64) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    dtype = np.dtype(
        [("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("red", "u1"), ("green", "u1"), ("blue", "u1")]
    )
    rec = np.empty(len(points), dtype=dtype)
    rec["x"], rec["y"], rec["z"] = points[:, 0], points[:, 1], points[:, 2]
    rec["red"], rec["green"], rec["blue"] = colors_u8[:, 0], colors_u8[:, 1], colors_u8[:, 2]
    with open(path, "wb") as fh:
        _write_ply_header(
            fh,
            [("vertex", len(points),
              [("x", "float"), ("y", "float"), ("z", "float"),
               ("red", "uchar"), ("green", "uchar"), ("blue", "uchar")], None)],
        )
        fh.write(rec.tobytes())


def read_point_cloud_ply(path):
    data = read_ply(path)["vertex"]
    pts = np.stack([data["x"], data["y"], data["z"]], axis=1).astype(np.float64)
    if "red" in data:
        cols = np.stack([data["red"], data["green"], data["blue"]], axis=1).astype(np.float64) / 255.0
    else:
        cols = np.full((len(pts), 3), 0.5)
    return pts, cols


def write_mesh_ply(path, vertices, faces, vertex_colors=None, binary=True) -> None:
    vertices = np.asarray(vertices, dtype=np.float32)
    faces = np.asarray(faces, dtype=np.int32)
    props = [("x", "float"), ("y", "float"), ("z", "float")]
    if vertex_colors is not None:
        colors_u8 = np.clip(np.asarray(vertex_colors) * 255.0 + 0.5, 0, 255).astype(np.uint8)
        props += [("red", "uchar"), ("green", "uchar"), ("blue", "uchar")]
    with open(path, "wb") as fh:
        _write_ply_header(
            fh,
            [("vertex", len(vertices), props, None), ("face", len(faces), [], "vertex_indices")],
            binary=binary,
        )
        if binary:
            dtype = np.dtype([(p, _PLY_TYPES[t][0]) for p, t in props])
            rec = np.empty(len(vertices), dtype=dtype)
            rec["x"], rec["y"], rec["z"] = vertices[:, 0], vertices[:, 1], vertices[:, 2]
            if vertex_colors is not None:
                rec["red"], rec["green"], rec["blue"] = colors_u8[:, 0], colors_u8[:, 1], colors_u8[:, 2]
            fh.write(rec.tobytes())
            for f in faces:
                fh.write(np.uint8(3).tobytes())
                fh.write(f.astype("<i4").tobytes())
        else:
            for i, v in enumerate(vertices):
                row = f"{v[0]} {v[1]} {v[2]}"
                if vertex_colors is not None:
                    row += f" {colors_u8[i, 0]} {colors_u8[i, 1]} {colors_u8[i, 2]}"
                fh.write((row + "\n").encode())
            for f in faces:
                fh.write(f"3 {f[0]} {f[1]} {f[2]}\n".encode())


def read_mesh_ply(path):
    data = read_ply(path)
    v = data["vertex"]
    vertices = np.stack([v["x"], v["y"], v["z"]], axis=1).astype(np.float64)
    if "red" in v:
        colors = np.stack([v["red"], v["green"], v["blue"]], axis=1).astype(np.float64) / 255.0
    else:
        colors = np.full((len(vertices), 3), 0.5)
    faces = data["face"]["vertex_indices"] if "face" in data else np.zeros((0, 3), dtype=np.int64)
    return vertices, faces, colors


_SPLAT_PROPS = (
    ["x", "y", "z"]
    + [f"rot_{i}" for i in range(4)]
    + [f"scale_{i}" for i in range(3)]
    + ["opacity"]
    + [f"f_dc_{i}" for i in range(3)]
    + [f"f_rest_{i}" for i in range(24)]
)


def _records_to_ply_columns(rec: np.ndarray) -> np.ndarray:
    """(N, 38) canonical records -> (N, 38) PLY column order."""
    cols = np.empty_like(rec)
    cols[:, 0:11] = rec[:, 0:11]
    for ch in range(3):
        cols[:, 11 + ch] = rec[:, 11 + 9 * ch]  # f_dc
        cols[:, 14 + 8 * ch : 14 + 8 * (ch + 1)] = rec[:, 12 + 9 * ch : 20 + 9 * ch]
    return cols


def _ply_columns_to_records(cols: np.ndarray) -> np.ndarray:
    rec = np.empty_like(cols)
    rec[:, 0:11] = cols[:, 0:11]
    for ch in range(3):
        rec[:, 11 + 9 * ch] = cols[:, 11 + ch]
        rec[:, 12 + 9 * ch : 20 + 9 * ch] = cols[:, 14 + 8 * ch : 14 + 8 * (ch + 1)]
    return rec


def write_splat_ply(path, cloud: GaussianCloud) -> None:
    """Per-level splat checkpoint; raw (pre-activation) values, float32."""
    cols = _records_to_ply_columns(cloud.to_records())
    with open(path, "wb") as fh:
        _write_ply_header(
            fh, [("vertex", len(cols), [(p, "float") for p in _SPLAT_PROPS], None)]
        )
        fh.write(cols.astype("<f4").tobytes())


def read_splat_ply(path, lod_level: int = 0) -> GaussianCloud:
    data = read_ply(path)["vertex"]
    missing = [p for p in _SPLAT_PROPS if p not in data]
    if missing:
        raise PlyFormatError(f"splat file missing properties: {missing[:4]}")
    cols = np.stack([np.asarray(data[p], dtype=np.float32) for p in _SPLAT_PROPS], axis=1)
    return GaussianCloud.from_records(_ply_columns_to_records(cols), lod_level=lod_level)


def write_depth_raster(path, depth: np.ndarray) -> None:
    """Raw little-endian raster: u32 width, u32 height, then row-major float32."""
    depth = np.asarray(depth, dtype=np.float32)
    h, w = depth.shape
    with open(path, "wb") as fh:
        fh.write(np.asarray([w, h], dtype="<u4").tobytes())
        fh.write(depth.astype("<f4").tobytes())


def read_depth_raster(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    w, h = np.frombuffer(raw[:8], dtype="<u4")
    data = np.frombuffer(raw[8:], dtype="<f4")
    if data.size != w * h:
        raise ValueError(f"depth raster {path}: expected {w * h} floats, found {data.size}")
    return data.reshape(int(h), int(w)).astype(np.float64)


def write_png(path, image: np.ndarray) -> None:
    """8-bit color preview from float [0, 1] or uint8 input."""
    img = np.asarray(image)
    if img.dtype != np.uint8:
        img = np.clip(img * 255.0 + 0.5, 0, 255).astype(np.uint8)
    Image.fromarray(img).save(path)


def read_png(path) -> np.ndarray:
    return np.asarray(Image.open(path), dtype=np.float64) / 255.0


def write_mask_png(path, mask: np.ndarray) -> None:
    Image.fromarray(np.asarray(mask, dtype=bool)).convert("1").save(path)


def read_mask_png(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("1"), dtype=bool)


def append_jsonl(path, record: dict) -> None:
    with open(path, "a") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_jsonl(path) -> list[dict]:
    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            out.append(json.loads(line))
    return out
