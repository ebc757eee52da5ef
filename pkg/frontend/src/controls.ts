/**
 * Fly camera: WASD/QE movement, mouse-drag look, wheel speed, double-click
 * teleport along the picked ray.
 */

import { CameraPose } from "./selection.js";

export class FlyCamera {
  position: [number, number, number];
  yaw = 0;
  pitch = 0;
  speed: number;
  private keys = new Set<string>();
  private dragging = false;
  private lastX = 0;
  private lastY = 0;

  constructor(
    private canvas: HTMLCanvasElement,
    start: [number, number, number],
    sceneScale: number,
    public onMove: () => void,
  ) {
    this.position = [...start] as [number, number, number];
    this.speed = sceneScale * 0.1;
    canvas.addEventListener("mousedown", (e) => {
      this.dragging = true;
      this.lastX = e.clientX;
      this.lastY = e.clientY;
    });
    window.addEventListener("mouseup", () => (this.dragging = false));
    window.addEventListener("mousemove", (e) => {
      if (!this.dragging) return;
      this.yaw += (e.clientX - this.lastX) * 0.004;
      this.pitch += (e.clientY - this.lastY) * 0.004;
      this.pitch = Math.max(-1.5, Math.min(1.5, this.pitch));
      this.lastX = e.clientX;
      this.lastY = e.clientY;
      this.onMove();
    });
    canvas.addEventListener("wheel", (e) => {
      this.speed *= e.deltaY < 0 ? 1.2 : 1 / 1.2;
      e.preventDefault();
    });
    canvas.addEventListener("dblclick", () => {
      const f = this.forward();
      const hop = this.speed * 20;
      this.position = [
        this.position[0] + f[0] * hop,
        this.position[1] + f[1] * hop,
        this.position[2] + f[2] * hop,
      ];
      this.onMove();
    });
    window.addEventListener("keydown", (e) => this.keys.add(e.key.toLowerCase()));
    window.addEventListener("keyup", (e) => this.keys.delete(e.key.toLowerCase()));
  }

  forward(): [number, number, number] {
    const cp = Math.cos(this.pitch), sp = Math.sin(this.pitch);
    const cy = Math.cos(this.yaw), sy = Math.sin(this.yaw);
    return [cp * cy, cp * sy, -sp];
  }

  /** Integrate keyboard motion; returns true when the pose changed. */
  tick(dt: number): boolean {
    const f = this.forward();
    const right: [number, number, number] = [Math.cos(this.yaw - Math.PI / 2), Math.sin(this.yaw - Math.PI / 2), 0];
    let moved = false;
    const step = this.speed * dt * 60;
    const go = (v: [number, number, number], s: number) => {
      this.position = [this.position[0] + v[0] * s, this.position[1] + v[1] * s, this.position[2] + v[2] * s];
      moved = true;
    };
    if (this.keys.has("w")) go(f, step);
    if (this.keys.has("s")) go(f, -step);
    if (this.keys.has("a")) go(right, step);
    if (this.keys.has("d")) go(right, -step);
    if (this.keys.has("q")) go([0, 0, 1], step);
    if (this.keys.has("e")) go([0, 0, 1], -step);
    if (moved) this.onMove();
    return moved;
  }

  pose(): CameraPose {
    const f = this.forward();
    const upWorld: [number, number, number] = [0, 0, 1];
    let rx = [f[1] * upWorld[2] - f[2] * upWorld[1], f[2] * upWorld[0] - f[0] * upWorld[2], f[0] * upWorld[1] - f[1] * upWorld[0]];
    const n = Math.sqrt(rx[0] ** 2 + rx[1] ** 2 + rx[2] ** 2) || 1;
    rx = [rx[0] / n, rx[1] / n, rx[2] / n];
    const down = [f[1] * rx[2] - f[2] * rx[1], f[2] * rx[0] - f[0] * rx[2], f[0] * rx[1] - f[1] * rx[0]];
    const rot = [rx[0], rx[1], rx[2], down[0], down[1], down[2], f[0], f[1], f[2]];
    const t = [
      -(rot[0] * this.position[0] + rot[1] * this.position[1] + rot[2] * this.position[2]),
      -(rot[3] * this.position[0] + rot[4] * this.position[1] + rot[5] * this.position[2]),
      -(rot[6] * this.position[0] + rot[7] * this.position[1] + rot[8] * this.position[2]),
    ];
    const w = this.canvas.width;
    const h = this.canvas.height;
    return {
      fx: 0.8 * w, fy: 0.8 * w, cx: w / 2, cy: h / 2, width: w, height: h,
      rotation: rot, translation: t,
    };
  }
}
