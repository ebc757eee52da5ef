import { beforeAll, describe, expect, it } from "vitest";
import { ViewerCore } from "../src/core.js";
import { parseHierarchy, Hierarchy } from "../src/format.js";
import { loadExpected, loadFixtureBuffer, MemorySource } from "./helpers.js";

/**
 * Oracle equivalence with the reference engine: for 20 scripted poses under a
 * constrained budget, the viewer must emit the identical node id sets and the
 * identical byte accounting (the fixture was produced by the engine).
 */

let hierarchy: Hierarchy;
let expected: any;

beforeAll(() => {
  hierarchy = parseHierarchy(loadFixtureBuffer("hierarchy.bin"));
  expected = loadExpected();
});

describe("engine parity on the fixture store", () => {
  it("preloads the same pinned set", async () => {
    const core = new ViewerCore(hierarchy, new MemorySource(loadFixtureBuffer("octree.bin")), {
      maxBytes: expected.budget_bytes,
      preloadLevels: expected.preload_levels,
    });
    await core.init();
    expect([...core.cache.pinned].sort((a, b) => a - b)).toEqual(expected.preloaded_ids);
    expect(core.dMax).toBeCloseTo(expected.d_max, 10);
  });

  it("selects identical node sets across all scripted poses", async () => {
    const core = new ViewerCore(hierarchy, new MemorySource(loadFixtureBuffer("octree.bin")), {
      maxBytes: expected.budget_bytes,
      preloadLevels: expected.preload_levels,
    });
    await core.init();
    for (let i = 0; i < expected.poses.length; i++) {
      const pose = expected.poses[i];
      const result = await core.collect(pose.camera);
      expect(result.selectedIds, `pose ${i} selected`).toEqual(pose.selected_ids);
      expect(result.fallbackIds, `pose ${i} fallback`).toEqual(pose.fallback_ids);
      expect(result.bytesResident, `pose ${i} bytes`).toBe(pose.bytes_resident);
      expect(result.bytesLoaded, `pose ${i} loaded`).toBe(pose.bytes_loaded);
      expect(result.bytesResident).toBeLessThanOrEqual(expected.budget_bytes);
    }
  });

  it("is deterministic across repeated runs", async () => {
    const runs: string[] = [];
    for (let r = 0; r < 2; r++) {
      const core = new ViewerCore(hierarchy, new MemorySource(loadFixtureBuffer("octree.bin")), {
        maxBytes: expected.budget_bytes,
        preloadLevels: expected.preload_levels,
      });
      await core.init();
      const log: unknown[] = [];
      for (const pose of expected.poses) {
        const result = await core.collect(pose.camera);
        log.push([result.selectedIds, result.fallbackIds, result.bytesResident]);
      }
      runs.push(JSON.stringify(log));
    }
    expect(runs[0]).toBe(runs[1]);
  });
});
