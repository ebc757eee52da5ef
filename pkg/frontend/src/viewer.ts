/**
 * Browser shell: wires the headless core, the sort worker, the renderer and
 * the fly controls. Three cooperating contexts with immutable messages:
 * this render loop, the async fetch path inside the core, and the sorter.
 * A frame is presented every cycle from whatever is resident; rendering
 * never blocks on loading or sorting.
 */

import { ViewerCore, HttpRangeSource, RetryingSource, CollectResult } from "./core.js";
import { parseHierarchy, SplatChunk } from "./format.js";
import { SplatRenderer } from "./gl.js";
import { FlyCamera } from "./controls.js";
import { cameraCenter, sceneDiameter } from "./selection.js";

export interface ViewerOptions {
  storeUrl: string;
  budgetBytes: number;
  preloadLevels: number;
}

export class Viewer {
  private core!: ViewerCore;
  private renderer!: SplatRenderer;
  private worker!: Worker;
  private camera!: FlyCamera;
  private sortEpoch = 0;
  private presentedEpoch = -1;
  private sortPending = false;
  private lastResult: CollectResult | null = null;
  private collectAbort: AbortController | null = null;
  private stats = { splats: 0, bytes: 0, nodes: 0 };

  constructor(private canvas: HTMLCanvasElement, private overlay: HTMLElement, private opts: ViewerOptions) {}

  async init(): Promise<void> {
    const resp = await fetch(`${this.opts.storeUrl}/hierarchy.bin`);
    if (!resp.ok) throw new Error(`cannot load hierarchy: ${resp.status}`);
    const hierarchy = parseHierarchy(await resp.arrayBuffer());
    const source = new RetryingSource(new HttpRangeSource(`${this.opts.storeUrl}/octree.bin`));
    this.core = new ViewerCore(hierarchy, source, {
      maxBytes: this.opts.budgetBytes,
      preloadLevels: this.opts.preloadLevels,
    });
    await this.core.init();

    this.renderer = new SplatRenderer(this.canvas);
    this.worker = new Worker(new URL("./sortWorker.js", import.meta.url), { type: "module" });
    this.worker.onmessage = (ev) => this.onWorkerMessage(ev.data);

    const diameter = sceneDiameter(hierarchy);
    const center: [number, number, number] = [
      0.5 * (hierarchy.bboxMin[0] + hierarchy.bboxMax[0]),
      0.5 * (hierarchy.bboxMin[1] + hierarchy.bboxMax[1]),
      0.5 * (hierarchy.bboxMin[2] + hierarchy.bboxMax[2]),
    ];
    const start: [number, number, number] = [center[0] - diameter * 0.6, center[1], center[2] + diameter * 0.2];
    this.camera = new FlyCamera(this.canvas, start, diameter, () => this.onCameraChange());

    this.onCameraChange();
    const loop = () => {
      this.camera.tick(1 / 60);
      this.renderer.draw(this.camera.pose());
      this.updateOverlay();
      requestAnimationFrame(loop);
    };
    requestAnimationFrame(loop);
  }

  private onCameraChange(): void {
    // cancel fetches scheduled for the previous pose
    this.collectAbort?.abort();
    const abort = new AbortController();
    this.collectAbort = abort;
    const epoch = this.core.nextEpoch();
    this.core
      .collect(this.camera.pose(), abort.signal)
      .then((result) => {
        if (!this.core.isCurrent(epoch)) return; // superseded
        const changed =
          this.lastResult === null ||
          result.selectedIds.join(",") + "|" + result.fallbackIds.join(",") !==
            this.lastResult.selectedIds.join(",") + "|" + this.lastResult.fallbackIds.join(",");
        this.lastResult = result;
        this.stats.bytes = result.bytesResident;
        if (changed) this.pushResidency(result);
        this.requestSort();
      })
      .catch(() => undefined); // aborted: frame still renders from the resident set
  }

  private pushResidency(result: CollectResult): void {
    const chunks = this.core.emittedChunks(result).map((e) => e.chunk);
    const count = chunks.reduce((acc: number, c: SplatChunk) => acc + c.count, 0);
    const positions = new Float32Array(count * 3);
    const rotations = new Float32Array(count * 4);
    const logScales = new Float32Array(count * 3);
    const opacities = new Float32Array(count);
    const sh = new Float32Array(count * 27);
    let at = 0;
    for (const c of chunks) {
      positions.set(c.positions, at * 3);
      rotations.set(c.rotations, at * 4);
      logScales.set(c.logScales, at * 3);
      opacities.set(c.opacities, at);
      sh.set(c.sh, at * 27);
      at += c.count;
    }
    this.stats.splats = count;
    this.stats.nodes = chunks.length;
    this.worker.postMessage(
      { type: "data", count, positions, rotations, logScales, opacities, sh },
      [positions.buffer, rotations.buffer, logScales.buffer, opacities.buffer, sh.buffer],
    );
  }

  private requestSort(): void {
    if (this.sortPending) return;
    this.sortPending = true;
    const pose = this.camera.pose();
    const r = pose.rotation;
    this.worker.postMessage({
      type: "sort",
      epoch: ++this.sortEpoch,
      camPos: cameraCenter(pose),
      viewZ: [r[6], r[7], r[8]],
    });
  }

  private onWorkerMessage(msg: any): void {
    if (msg.type === "ready") {
      this.sortPending = false;
      this.requestSort();
      return;
    }
    if (msg.type === "sorted") {
      this.sortPending = false;
      if (msg.epoch >= this.presentedEpoch) {
        // newest completed sort wins; stale ones are ignored
        this.presentedEpoch = msg.epoch;
        this.renderer.upload(msg.positions, msg.cov6, msg.rgba);
      }
      if (msg.epoch < this.sortEpoch) this.requestSort();
    }
  }

  private updateOverlay(): void {
    const inflight = this.core ? this.core.cache.fetchesInFlight : 0;
    this.overlay.textContent =
      `splats ${this.stats.splats.toLocaleString()} | nodes ${this.stats.nodes} | ` +
      `resident ${(this.stats.bytes / 1048576).toFixed(1)} MiB | fetches ${inflight}`;
  }
}
