"""Pipeline command line: prepare, build-lod, train, pack, render, serve.

One manifest (JSON) names all inputs and knobs; flags override manifest
fields. Every command validates its inputs before running and is
deterministic given the manifest and seed. Exit codes: 0 success, 1 internal
error, 2 invalid input or manifest. Stage outputs live under the manifest's
output directory next to a machine-readable ``stage_status.json`` used to
skip stages whose inputs have not changed.

Worker count for the rasterizer comes from the LODSPLAT_WORKERS environment
variable (default 1).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cameras import PinholeCamera, load_cameras, save_cameras
from .dataprep import FisheyeModel, clean_mesh, partition_blocks, select_views, split_fisheye
from .engine import LoadBudget, RenderEngine
from .fileio import (
    append_jsonl,
    read_depth_raster,
    read_mask_png,
    read_mesh_ply,
    read_png,
    read_point_cloud_ply,
    read_splat_ply,
    write_depth_raster,
    write_mask_png,
    write_mesh_ply,
    write_png,
    write_point_cloud_ply,
)
from .lod import DEFAULT_EPS_P, DEFAULT_TAU, LevelCloud, MultiResCloud, build_levels, sample_mesh
from .octree import HttpRangeReader, LocalRangeReader, build_octree, read_hierarchy
from .rasterizer import RenderSettings
from .server import make_server
from .trainer import TrainConfig, TrainSample, train

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_INVALID = 2


class ManifestError(ValueError):
    pass


@dataclass
class Manifest:
    output_dir: Path
    mesh: Path | None = None
    cloud: Path | None = None
    images_dir: Path | None = None
    cameras: Path | None = None
    device_mask: Path | None = None
    tau: float = DEFAULT_TAU
    eps_p: int = DEFAULT_EPS_P
    grid: tuple[int, int] = (1, 1)
    expansion: float = 0.3
    overlap_threshold: float = 0.8
    budget_bytes: int = 2 * 1024**3
    preload_levels: int = 1
    seed: int = 0
    fisheye: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)

    @staticmethod
    def load(path) -> "Manifest":
        path = Path(path)
        if not path.is_file():
            raise ManifestError(f"manifest not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as err:
            raise ManifestError(f"manifest {path} is not valid JSON: {err}") from err
        if "output_dir" not in raw:
            raise ManifestError("manifest missing required field: output_dir")
        base = path.parent
        def p(key):
            return (base / raw[key]).resolve() if raw.get(key) else None

        return Manifest(
            output_dir=(base / raw["output_dir"]).resolve(),
            mesh=p("mesh"),
            cloud=p("cloud"),
            images_dir=p("images_dir"),
            cameras=p("cameras"),
            device_mask=p("device_mask"),
            tau=float(raw.get("tau", DEFAULT_TAU)),
            eps_p=int(raw.get("eps_p", DEFAULT_EPS_P)),
            grid=tuple(raw.get("grid", (1, 1))),
            expansion=float(raw.get("expansion", 0.3)),
            overlap_threshold=float(raw.get("overlap_threshold", 0.8)),
            budget_bytes=int(raw.get("budget_bytes", 2 * 1024**3)),
            preload_levels=int(raw.get("preload_levels", 1)),
            seed=int(raw.get("seed", 0)),
            fisheye=dict(raw.get("fisheye", {})),
            train=dict(raw.get("train", {})),
            background=tuple(raw.get("background", (0.0, 0.0, 0.0))),
        )

    def require(self, **names) -> None:
        """Fail fast when a stage's inputs are missing or unreadable."""
        for label, path in names.items():
            if path is None:
                raise ManifestError(f"manifest does not define required input: {label}")
            if not Path(path).exists():
                raise ManifestError(f"{label} does not exist: {path}")


def _fingerprint(paths, params) -> str:
    h = hashlib.sha256()
    for path in paths:
        if path is None:
            continue
        path = Path(path)
        h.update(str(path).encode())
        if path.is_file():
            st = path.stat()
            h.update(f"{st.st_size}:{st.st_mtime_ns}".encode())
        elif path.is_dir():
            for f in sorted(path.rglob("*")):
                if f.is_file():
                    st = f.stat()
                    h.update(f"{f.name}:{st.st_size}:{st.st_mtime_ns}".encode())
    h.update(json.dumps(params, sort_keys=True).encode())
    return h.hexdigest()


def _stage_status(output_dir: Path) -> dict:
    status_path = output_dir / "stage_status.json"
    if status_path.is_file():
        return json.loads(status_path.read_text())
    return {}


def _mark_stage(output_dir: Path, stage: str, fingerprint: str) -> None:
    status = _stage_status(output_dir)
    status[stage] = {"fingerprint": fingerprint}
    (output_dir / "stage_status.json").write_text(json.dumps(status, indent=2, sort_keys=True))


def _stage_is_fresh(output_dir: Path, stage: str, fingerprint: str) -> bool:
    return _stage_status(output_dir).get(stage, {}).get("fingerprint") == fingerprint


def _train_config(manifest: Manifest, args) -> TrainConfig:
    fields = dict(manifest.train)
    if getattr(args, "lambda_depth", None) is not None:
        fields["lambda_depth"] = args.lambda_depth
    if getattr(args, "iterations", None) is not None:
        fields["total_iterations"] = args.iterations
    fields.setdefault("rng_seed", manifest.seed)
    if getattr(args, "seed", None) is not None:
        fields["rng_seed"] = args.seed
    return TrainConfig(**fields)


# ----------------------------------------------------------------- commands


def cmd_prepare(manifest: Manifest, args) -> int:
    if getattr(args, "grid", None) is not None:
        manifest.grid = tuple(args.grid)
    manifest.require(images_dir=manifest.images_dir, cameras=manifest.cameras,
                     mesh=manifest.mesh, cloud=manifest.cloud)
    images = sorted(Path(manifest.images_dir).glob("*.png"))
    if not images:
        raise ManifestError(f"no input images (*.png) in {manifest.images_dir}")
    rig_cams = {c.cam_id: c for c in load_cameras(manifest.cameras)}
    missing = [img.stem for img in images if img.stem not in rig_cams]
    if missing:
        raise ManifestError(f"cameras file lacks rig poses for: {missing[:5]}")

    fp = _fingerprint(
        [manifest.images_dir, manifest.cameras, manifest.mesh, manifest.cloud, manifest.device_mask],
        {"fisheye": manifest.fisheye, "grid": manifest.grid, "expansion": manifest.expansion,
         "overlap": manifest.overlap_threshold, "stage": "prepare"},
    )
    out = manifest.output_dir / "prepared"
    if _stage_is_fresh(manifest.output_dir, "prepare", fp) and out.is_dir():
        print("prepare: inputs unchanged, skipping")
        return EXIT_OK

    out.mkdir(parents=True, exist_ok=True)
    (out / "images").mkdir(exist_ok=True)
    (out / "masks").mkdir(exist_ok=True)

    fe = manifest.fisheye
    out_size = int(fe.get("out_size", 256))
    device_mask = read_mask_png(manifest.device_mask) if manifest.device_mask else None

    pinhole_cams: list[PinholeCamera] = []
    from .dataprep import VIRTUAL_VIEW_NAMES

    for img_path in images:
        image = read_png(img_path)
        rig = rig_cams[img_path.stem]
        model = FisheyeModel(
            focal=float(fe.get("focal", image.shape[1] / np.pi)),
            center=fe.get("center", [image.shape[1] / 2, image.shape[0] / 2]),
            fov_degrees=float(fe.get("fov_degrees", 180.0)),
        )
        views = split_fisheye(image, model, rig.rotation, rig.translation, out_size=out_size)
        for name, (view, mask, cam) in zip(VIRTUAL_VIEW_NAMES, views):
            if name == "bottom" and device_mask is not None:
                mask = mask & device_mask
            view_id = f"{img_path.stem}_{name}"
            cam.cam_id = view_id
            write_png(out / "images" / f"{view_id}.png", view)
            write_mask_png(out / "masks" / f"{view_id}.png", mask)
            pinhole_cams.append(cam)
    save_cameras(out / "cameras.txt", pinhole_cams)

    verts, faces, colors = read_mesh_ply(manifest.mesh)
    cloud_pts, _ = read_point_cloud_ply(manifest.cloud)
    verts, faces_kept, _ = clean_mesh(verts, faces, cloud_pts, threshold=0.1)
    write_mesh_ply(out / "mesh_clean.ply", verts, faces_kept, colors)

    scene_min = verts.min(axis=0)
    scene_max = verts.max(axis=0)
    blocks = partition_blocks(scene_min, scene_max, manifest.grid, manifest.expansion)
    block_records = []
    for i, block in enumerate(blocks):
        views = select_views(block, pinhole_cams, verts, faces_kept, manifest.overlap_threshold)
        if not views:
            print(f"warning: block {i} selected no views", file=sys.stderr)
        block_records.append(
            {
                "core_min": block.core_min.tolist(),
                "core_max": block.core_max.tolist(),
                "expanded_min": block.expanded_min.tolist(),
                "expanded_max": block.expanded_max.tolist(),
                "view_ids": views,
            }
        )
    (out / "blocks.json").write_text(json.dumps(block_records, indent=2))
    _mark_stage(manifest.output_dir, "prepare", fp)
    print(f"prepare: wrote {len(pinhole_cams)} views, {len(blocks)} blocks to {out}")
    return EXIT_OK


def cmd_build_lod(manifest: Manifest, args) -> int:
    mesh_path = manifest.output_dir / "prepared" / "mesh_clean.ply"
    if not mesh_path.is_file():
        mesh_path = manifest.mesh
    manifest.require(mesh=mesh_path)
    tau = args.tau if args.tau is not None else manifest.tau
    eps_p = args.eps_p if args.eps_p is not None else manifest.eps_p

    out = manifest.output_dir / "lod"
    out.mkdir(parents=True, exist_ok=True)
    verts, faces, colors = read_mesh_ply(mesh_path)
    rng = np.random.default_rng(manifest.seed)
    points, point_colors = sample_mesh(verts, faces, colors, spacing=tau, rng=rng)
    cloud = build_levels(points, point_colors, tau=tau, eps_p=eps_p)

    meta = {"tau": tau, "eps_p": eps_p, "levels": []}
    for lvl, level in enumerate(cloud.levels):
        write_point_cloud_ply(out / f"level_{lvl}_points.ply", level.points, level.colors)
        meta["levels"].append({"spacing": level.spacing, "count": len(level)})
    (out / "lod_meta.json").write_text(json.dumps(meta, indent=2))
    print(f"build-lod: {cloud.num_levels} levels, finest {len(cloud.finest)} points")
    return EXIT_OK


def _load_lod(manifest: Manifest) -> MultiResCloud:
    out = manifest.output_dir / "lod"
    meta_path = out / "lod_meta.json"
    if not meta_path.is_file():
        raise ManifestError(f"LOD stage output missing: {meta_path} (run build-lod first)")
    meta = json.loads(meta_path.read_text())
    levels = []
    for lvl, info in enumerate(meta["levels"]):
        pts, cols = read_point_cloud_ply(out / f"level_{lvl}_points.ply")
        levels.append(LevelCloud(spacing=info["spacing"], points=pts, colors=cols))
    return MultiResCloud(levels=levels)


def _load_samples(manifest: Manifest) -> list[TrainSample]:
    prepared = manifest.output_dir / "prepared"
    img_dir = prepared / "images" if (prepared / "images").is_dir() else manifest.images_dir
    cam_path = prepared / "cameras.txt" if (prepared / "cameras.txt").is_file() else manifest.cameras
    manifest.require(images_dir=img_dir, cameras=cam_path)
    cams = {c.cam_id: c for c in load_cameras(cam_path)}
    samples = []
    for img_path in sorted(Path(img_dir).glob("*.png")):
        view_id = img_path.stem
        if view_id not in cams:
            continue
        image = read_png(img_path)
        depth_path = img_path.with_suffix(".depth")
        depth = read_depth_raster(depth_path) if depth_path.is_file() else np.zeros(image.shape[:2])
        mask_path = img_path.parent.parent / "masks" / img_path.name
        mask = read_mask_png(mask_path) if mask_path.is_file() else None
        samples.append(TrainSample(image=image, depth_map=depth, camera=cams[view_id], mask=mask))
    if not samples:
        raise ManifestError(f"no training samples found under {img_dir}")
    return samples


def cmd_train(manifest: Manifest, args) -> int:
    init = _load_lod(manifest)
    samples = _load_samples(manifest)
    config = _train_config(manifest, args)
    out = manifest.output_dir / "checkpoints"
    out.mkdir(parents=True, exist_ok=True)
    log_path = manifest.output_dir / "train_log.jsonl"
    if log_path.exists():
        log_path.unlink()
    settings = RenderSettings(background_color=manifest.background)
    result = train(samples, init, config, settings=settings, log_path=log_path, checkpoint_dir=out)
    counts = [len(m) for m in result.levels]
    print(f"train: finished {config.resolved_iterations(len(samples))} iterations, splats {counts}")
    return EXIT_OK


def cmd_pack(manifest: Manifest, args) -> int:
    ckpt = manifest.output_dir / "checkpoints"
    level_paths = sorted(ckpt.glob("level_*.ply"))
    if not level_paths:
        raise ManifestError(f"no checkpoints under {ckpt} (run train first)")
    levels = []
    for lvl, path in enumerate(level_paths):
        cloud = read_splat_ply(path, lod_level=lvl)
        if len(cloud) == 0:
            raise ManifestError(f"checkpoint {path} contains no splats")
        levels.append(cloud)
    store_dir = manifest.output_dir / "store"
    store_dir.mkdir(parents=True, exist_ok=True)
    store = build_octree(levels, store_dir / "hierarchy.bin", store_dir / "octree.bin")
    print(f"pack: {len(store.nodes)} nodes, {store.total_payload_bytes()} payload bytes")
    return EXIT_OK


def cmd_render(manifest: Manifest, args) -> int:
    store_dir = manifest.output_dir / "store"
    manifest.require(hierarchy=store_dir / "hierarchy.bin", payload=store_dir / "octree.bin")
    if args.camera_path is None or not Path(args.camera_path).is_file():
        raise ManifestError(f"camera path file not found: {args.camera_path}")
    cameras = load_cameras(args.camera_path)
    store = read_hierarchy(store_dir / "hierarchy.bin")
    if args.store_url:
        source = HttpRangeReader(args.store_url.rstrip("/") + "/octree.bin")
    else:
        source = LocalRangeReader(store_dir / "octree.bin")
    budget_bytes = args.budget_bytes if args.budget_bytes is not None else manifest.budget_bytes
    budget = LoadBudget(max_bytes=budget_bytes, preload_levels=manifest.preload_levels)
    engine = RenderEngine(store, source, budget)
    settings = RenderSettings(background_color=manifest.background)

    out = manifest.output_dir / "frames"
    out.mkdir(parents=True, exist_ok=True)
    stats_path = out / "stats.jsonl"
    if stats_path.exists():
        stats_path.unlink()
    finest_total = sum(n.num_points for n in store.nodes if n.depth == store.num_levels - 1)
    for i, cam in enumerate(cameras):
        rset = engine.cull_and_collect(cam)
        frame, stats = engine.render_view(rset, cam, settings)
        write_png(out / f"frame_{i:04d}.png", frame.color)
        write_depth_raster(out / f"frame_{i:04d}.depth", frame.depth)
        stats["frame"] = i
        stats["lod_vs_finest_ratio"] = (stats["splats"] / finest_total) if finest_total else 0.0
        append_jsonl(stats_path, stats)
    print(f"render: {len(cameras)} frames -> {out}")
    return EXIT_OK


def cmd_serve(manifest: Manifest, args) -> int:
    store_dir = manifest.output_dir / "store"
    manifest.require(hierarchy=store_dir / "hierarchy.bin", payload=store_dir / "octree.bin")
    httpd = make_server(store_dir, args.port, quiet=False)
    print(f"serve: {store_dir} on http://127.0.0.1:{httpd.server_address[1]} (Ctrl-C to stop)")
    try:
        httpd.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        httpd.server_close()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lodsplat", description=__doc__)
    parser.add_argument("--manifest", required=True, help="pipeline manifest (JSON)")
    sub = parser.add_subparsers(dest="command", required=True)

    p_prep = sub.add_parser("prepare", help="split fisheye views, clean mesh, partition blocks")
    p_prep.add_argument("--grid", nargs=2, type=int, metavar=("NX", "NY"), default=None)

    p_lod = sub.add_parser("build-lod", help="sample the mesh and build resolution levels")
    p_lod.add_argument("--tau", type=float, default=None, help="finest spacing in meters")
    p_lod.add_argument("--eps-p", type=int, default=None, help="coarsest-level point budget")

    p_train = sub.add_parser("train", help="optimize per-level splat models")
    p_train.add_argument("--lambda-depth", type=float, default=None)
    p_train.add_argument("--iterations", type=int, default=None)
    p_train.add_argument("--seed", type=int, default=None)

    sub.add_parser("pack", help="pack checkpoints into hierarchy.bin + octree.bin")

    p_render = sub.add_parser("render", help="budgeted LOD rendering along a camera path")
    p_render.add_argument("--camera-path", required=True, help="camera list file")
    p_render.add_argument("--budget-bytes", type=int, default=None)
    p_render.add_argument("--store-url", default=None, help="fetch chunks over HTTP instead of locally")

    p_serve = sub.add_parser("serve", help="serve the packed store with byte-range support")
    p_serve.add_argument("--port", type=int, default=8080)
    return parser


COMMANDS = {
    "prepare": cmd_prepare,
    "build-lod": cmd_build_lod,
    "train": cmd_train,
    "pack": cmd_pack,
    "render": cmd_render,
    "serve": cmd_serve,
}


def main(argv=None) -> int:
    from .fileio import PlyFormatError
    from .gaussians import InvalidParameterError
    from .lod import EmptyInputError
    from .octree import StoreFormatError

    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        manifest = Manifest.load(args.manifest)
        manifest.output_dir.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](manifest, args)
    except (ManifestError, FileNotFoundError, PlyFormatError, StoreFormatError,
            EmptyInputError, InvalidParameterError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as err:  # internal failure
        print(f"internal error: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
