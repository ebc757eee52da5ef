import { afterAll, beforeAll, describe, expect, it } from "vitest";
import { createServer, Server } from "node:http";
import { readFileSync } from "node:fs";
import { join } from "node:path";
import { HttpRangeSource, ViewerCore } from "../src/core.js";
import { parseHierarchy } from "../src/format.js";
import { fixturesDir, loadExpected, loadFixtureBuffer } from "./helpers.js";

let server: Server;
let baseUrl: string;

beforeAll(async () => {
  const payload = readFileSync(join(fixturesDir, "octree.bin"));
  server = createServer((req, res) => {
    const range = req.headers.range;
    if (range) {
      const m = /bytes=(\d+)-(\d+)?/.exec(range);
      const start = Number(m![1]);
      const end = m![2] ? Number(m![2]) : payload.length - 1;
      const chunk = payload.subarray(start, end + 1);
      res.writeHead(206, {
        "Content-Range": `bytes ${start}-${end}/${payload.length}`,
        "Content-Length": chunk.length,
      });
      res.end(chunk);
    } else {
      res.writeHead(200, { "Content-Length": payload.length });
      res.end(payload);
    }
  });
  await new Promise<void>((resolve) => server.listen(0, "127.0.0.1", resolve));
  const addr = server.address() as { port: number };
  baseUrl = `http://127.0.0.1:${addr.port}/octree.bin`;
});

afterAll(() => server.close());

describe("HTTP range source", () => {
  it("drives the viewer core identically to the in-memory source", async () => {
    const hierarchy = parseHierarchy(loadFixtureBuffer("hierarchy.bin"));
    const expected = loadExpected();
    const core = new ViewerCore(hierarchy, new HttpRangeSource(baseUrl), {
      maxBytes: expected.budget_bytes,
      preloadLevels: expected.preload_levels,
    });
    await core.init();
    for (const pose of expected.poses.slice(0, 5)) {
      const result = await core.collect(pose.camera);
      expect(result.selectedIds).toEqual(pose.selected_ids);
      expect(result.fallbackIds).toEqual(pose.fallback_ids);
      expect(result.bytesResident).toBe(pose.bytes_resident);
    }
  });
});
