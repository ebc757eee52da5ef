/**
 * Byte-budgeted chunk residency: pinned preloads plus LRU eviction,
 * mirroring the reference engine's accounting exactly.
 */

import { Hierarchy, SplatChunk, StoreNode, decodeChunk } from "./format.js";

export interface ChunkSource {
  read(offset: number, size: number, signal?: AbortSignal): Promise<ArrayBuffer>;
}

export class FetchFault extends Error {
  cause: unknown;

  constructor(public nodeId: number, cause?: unknown) {
    super(`fetch failed for node ${nodeId}`);
    this.cause = cause;
  }
}

export class ChunkCache {
  readonly chunks = new Map<number, SplatChunk>();
  readonly pinned = new Set<number>();
  private lru: number[] = []; // least recently used first, non-pinned only
  totalBytes = 0;
  fetchesInFlight = 0;

  constructor(
    private source: ChunkSource,
    readonly maxBytes: number,
    readonly preloadLevels: number,
  ) {}

  isResident(id: number): boolean {
    return this.chunks.has(id);
  }

  bytesOf(chunk: SplatChunk): number {
    return chunk.count * 152;
  }

  async preload(h: Hierarchy, signal?: AbortSignal): Promise<void> {
    for (const node of h.nodes) {
      if (node.depth >= this.preloadLevels || node.numPoints === 0) continue;
      if (this.totalBytes + node.byteSize > this.maxBytes) break;
      const chunk = await this.fetch(node, signal);
      this.chunks.set(node.id, chunk);
      this.pinned.add(node.id);
      this.totalBytes += node.byteSize;
    }
  }

  private async fetch(node: StoreNode, signal?: AbortSignal): Promise<SplatChunk> {
    this.fetchesInFlight++;
    try {
      const raw = await this.source.read(node.byteOffset, node.byteSize, signal);
      return decodeChunk(raw, node.numPoints);
    } catch (err) {
      throw new FetchFault(node.id, err);
    } finally {
      this.fetchesInFlight--;
    }
  }

  private touch(id: number): void {
    const at = this.lru.indexOf(id);
    if (at >= 0) {
      this.lru.splice(at, 1);
      this.lru.push(id);
    }
  }

  /** Make a chunk resident if the budget allows; resolves false when it cannot fit. */
  async ensure(node: StoreNode, protectedIds: Set<number>, signal?: AbortSignal): Promise<boolean> {
    if (this.chunks.has(node.id)) {
      this.touch(node.id);
      return true;
    }
    while (this.totalBytes + node.byteSize > this.maxBytes) {
      const victim = this.lru.find((id) => !protectedIds.has(id));
      if (victim === undefined) return false;
      this.lru.splice(this.lru.indexOf(victim), 1);
      const evicted = this.chunks.get(victim)!;
      this.chunks.delete(victim);
      this.totalBytes -= this.bytesOf(evicted);
    }
    const chunk = await this.fetch(node, signal);
    this.chunks.set(node.id, chunk);
    this.lru.push(node.id);
    this.totalBytes += node.byteSize;
    return true;
  }
}
