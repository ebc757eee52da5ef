import { readFileSync } from "node:fs";
import { fileURLToPath } from "node:url";
import { dirname, join } from "node:path";
import { ChunkSource } from "../src/cache.js";

export const fixturesDir = join(dirname(fileURLToPath(import.meta.url)), "fixtures");

export function loadFixtureBuffer(name: string): ArrayBuffer {
  const buf = readFileSync(join(fixturesDir, name));
  return buf.buffer.slice(buf.byteOffset, buf.byteOffset + buf.byteLength);
}

export function loadExpected(): any {
  return JSON.parse(readFileSync(join(fixturesDir, "expected.json"), "utf-8"));
}

/** Byte-range source over an in-memory payload, with optional injected failures. */
export class MemorySource implements ChunkSource {
  reads = 0;
  failFor = new Set<number>(); // byte offsets that must fail

  constructor(private data: ArrayBuffer) {}

  async read(offset: number, size: number): Promise<ArrayBuffer> {
    this.reads++;
    if (this.failFor.has(offset)) throw new Error("injected fetch failure");
    if (offset + size > this.data.byteLength) throw new Error("read past end");
    return this.data.slice(offset, offset + size);
  }
}
