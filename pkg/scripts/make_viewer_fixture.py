#!/usr/bin/env python3
"""Generate the web viewer's parity fixtures from the reference engine.

Writes frontend/test/fixtures/{hierarchy.bin, octree.bin, expected.json}:
a small multi-level store, 20 scripted poses, and for each pose the engine's
emitted node sets and byte accounting under a constrained budget.
"""

import json
import math
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))

from scenes import surface_cloud  # noqa: E402
from lodsplat.cameras import look_at_camera  # noqa: E402
from lodsplat.engine import LoadBudget, RenderEngine  # noqa: E402
from lodsplat.lod import build_levels  # noqa: E402
from lodsplat.octree import LocalRangeReader, build_octree  # noqa: E402


def main() -> None:
    out = Path(__file__).resolve().parent.parent / "frontend" / "test" / "fixtures"
    out.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(1234)
    n = 70
    ticks = np.linspace(-4.0, 4.0, n)
    gx, gy = np.meshgrid(ticks, ticks)
    pts = np.stack(
        [gx.ravel(), gy.ravel(), 0.3 * np.sin(0.8 * gx.ravel()) * np.cos(0.6 * gy.ravel())], axis=1
    )
    pts += rng.normal(scale=0.003, size=pts.shape)
    tau = 8.0 / (n - 1)
    pyramid = build_levels(pts, tau=tau, eps_p=200)
    levels = [
        surface_cloud(lv.points, lv.spacing, opacity=0.93, scale_mult=0.75, seed=i, freq=0.4)
        for i, lv in enumerate(pyramid.levels)
    ]
    for i, cloud in enumerate(levels):
        cloud.lod_levels[:] = i
    store = build_octree(levels, out / "hierarchy.bin", out / "octree.bin")
    print(f"store: L={store.num_levels}, nodes={len(store.nodes)}, "
          f"payload={store.total_payload_bytes()} bytes, "
          f"levels={[len(l) for l in levels]}")

    budget_bytes = store.total_payload_bytes() // 3
    engine = RenderEngine(
        store, LocalRangeReader(out / "octree.bin"),
        LoadBudget(max_bytes=budget_bytes, preload_levels=1),
    )

    center = 0.5 * (store.bbox_min + store.bbox_max)
    poses = []
    for i in range(20):
        ang = 2 * math.pi * i / 20 + 0.13
        radius = 2.0 + 7.0 * (0.5 + 0.5 * math.sin(0.41 * i))
        eye = center + np.array(
            [radius * math.cos(ang), radius * math.sin(ang), 1.0 + 1.8 * math.cos(0.29 * i)]
        )
        poses.append(look_at_camera(eye, center, up=(0, 0, 1), fx=40.0, width=64, height=64))

    expected = []
    for cam in poses:
        rset = engine.cull_and_collect(cam)
        expected.append(
            {
                "camera": {
                    "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
                    "width": cam.width, "height": cam.height,
                    "rotation": cam.rotation.reshape(-1).tolist(),
                    "translation": cam.translation.tolist(),
                },
                "selected_ids": rset.selected_ids,
                "fallback_ids": rset.fallback_ids,
                "bytes_resident": rset.bytes_resident,
                "bytes_loaded": rset.bytes_loaded,
            }
        )

    fixture = {
        "budget_bytes": budget_bytes,
        "preload_levels": 1,
        "d_max": engine.d_max,
        "num_levels": store.num_levels,
        "preloaded_ids": sorted(engine.cache.pinned),
        "poses": expected,
    }
    (out / "expected.json").write_text(json.dumps(fixture, indent=1))
    print(f"wrote {len(expected)} poses, budget {budget_bytes} bytes -> {out}")


if __name__ == "__main__":
    main()
