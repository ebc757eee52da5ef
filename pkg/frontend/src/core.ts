/**
 * Headless viewer core: hierarchy + cache + selection, no DOM or GL.
 *
 * The browser shell drives this on camera changes; tests drive it directly
 * against fixture stores and compare the emitted node sets with the
 * reference engine.
 */

import { ChunkCache, ChunkSource, FetchFault } from "./cache.js";
import { Hierarchy, SplatChunk } from "./format.js";
import {
  CameraPose,
  ancestorChains,
  coverageFallback,
  dropShadowedAncestors,
  sceneDiameter,
  wantedNodes,
} from "./selection.js";

export interface ViewerConfig {
  maxBytes: number;
  preloadLevels: number;
  dMax?: number; // defaults to the scene diameter
}

export interface CollectResult {
  selectedIds: number[];
  fallbackIds: number[];
  bytesResident: number;
  bytesLoaded: number;
  faults: number;
}

export class ViewerCore {
  readonly cache: ChunkCache;
  readonly near = 0.01;
  readonly far: number;
  readonly dMax: number;
  private chains: number[][];
  private epoch = 0;

  constructor(readonly hierarchy: Hierarchy, source: ChunkSource, config: ViewerConfig) {
    this.cache = new ChunkCache(source, config.maxBytes, config.preloadLevels);
    const diameter = sceneDiameter(hierarchy);
    this.dMax = config.dMax ?? diameter;
    this.far = 2.0 * diameter;
    this.chains = ancestorChains(hierarchy);
  }

  async init(signal?: AbortSignal): Promise<void> {
    await this.cache.preload(this.hierarchy, signal);
  }

  /** Monotonically increasing id; stale collects bail out when superseded. */
  nextEpoch(): number {
    return ++this.epoch;
  }

  isCurrent(epoch: number): boolean {
    return epoch === this.epoch;
  }

  async collect(cam: CameraPose, signal?: AbortSignal): Promise<CollectResult> {
    const wanted = wantedNodes(this.hierarchy, cam, this.dMax, this.near, this.far);
    const protectedIds = new Set<number>(this.cache.pinned);
    for (const w of wanted) protectedIds.add(w.id);

    const residentIds: number[] = [];
    let faults = 0;
    let loaded = 0;
    for (const w of wanted) {
      const wasResident = this.cache.isResident(w.id);
      try {
        if (await this.cache.ensure(w.node, protectedIds, signal)) {
          residentIds.push(w.id);
          if (!wasResident) loaded += w.node.byteSize;
        }
      } catch (err) {
        if (err instanceof FetchFault && !signal?.aborted) {
          faults++;
          continue;
        }
        throw err;
      }
    }

    const selected = dropShadowedAncestors(residentIds, this.chains);
    const fallback = coverageFallback(
      this.hierarchy, cam, this.near, this.far, selected, this.cache.pinned, this.chains,
    );
    return {
      selectedIds: selected,
      fallbackIds: fallback,
      bytesResident: this.cache.totalBytes,
      bytesLoaded: loaded,
      faults,
    };
  }

  emittedChunks(result: CollectResult): { id: number; chunk: SplatChunk }[] {
    const out: { id: number; chunk: SplatChunk }[] = [];
    for (const id of result.selectedIds.concat(result.fallbackIds)) {
      const chunk = this.cache.chunks.get(id);
      if (chunk) out.push({ id, chunk });
    }
    return out;
  }
}

export class HttpRangeSource implements ChunkSource {
  constructor(private url: string) {}

  async read(offset: number, size: number, signal?: AbortSignal): Promise<ArrayBuffer> {
    const resp = await fetch(this.url, {
      headers: { Range: `bytes=${offset}-${offset + size - 1}` },
      signal,
    });
    if (!resp.ok && resp.status !== 206) {
      throw new Error(`range request failed: ${resp.status}`);
    }
    const buf = await resp.arrayBuffer();
    if (buf.byteLength !== size) {
      throw new Error(`short read: wanted ${size} bytes, got ${buf.byteLength}`);
    }
    return buf;
  }
}

/** Retrying wrapper: exponential backoff, leaves cancellation to the signal. */
export class RetryingSource implements ChunkSource {
  constructor(private inner: ChunkSource, private attempts = 3, private baseDelayMs = 200) {}

  async read(offset: number, size: number, signal?: AbortSignal): Promise<ArrayBuffer> {
    let lastErr: unknown;
    for (let k = 0; k < this.attempts; k++) {
      if (signal?.aborted) throw new DOMException("aborted", "AbortError");
      try {
        return await this.inner.read(offset, size, signal);
      } catch (err) {
        if (signal?.aborted) throw err;
        lastErr = err;
        if (k + 1 < this.attempts) {
          await new Promise((res) => setTimeout(res, this.baseDelayMs * 2 ** k));
        }
      }
    }
    throw lastErr;
  }
}
