/**
 * Node selection: level bands, frustum culling, and the emitted-set rules.
 *
 * This mirrors the reference engine step for step (same arithmetic, same
 * ordering, same tie-breaks), which is what the parity test pins:
 *   1. visible = bbox center inside the six camera planes, or camera inside
 *      the bbox (near 0.01, far 2 x scene diameter);
 *   2. wanted = visible nodes whose depth equals the distance band;
 *   3. budgeted residency in (depth, distance, id) order;
 *   4. resident nodes shadowed by a resident descendant are dropped;
 *   5. visible leaf regions without an emitted ancestor fall back to their
 *      deepest preloaded ancestor.
 */

import { Hierarchy, StoreNode, nodeCenter } from "./format.js";

export interface CameraPose {
  fx: number;
  fy: number;
  cx: number;
  cy: number;
  width: number;
  height: number;
  rotation: number[]; // 9, row-major, world -> camera
  translation: number[]; // 3
}

export function selectLevel(d: number, dMax: number, numLevels: number): number {
  if (!(dMax > 0) || d < 0 || numLevels < 1) throw new Error("need d >= 0, dMax > 0, L >= 1");
  const raw = Math.floor(Math.pow(numLevels, 1.0 - d / dMax));
  return Math.min(Math.max(raw, 0), numLevels - 1);
}

export function worldToCamera(cam: CameraPose, p: [number, number, number]): [number, number, number] {
  const r = cam.rotation;
  const t = cam.translation;
  return [
    r[0] * p[0] + r[1] * p[1] + r[2] * p[2] + t[0],
    r[3] * p[0] + r[4] * p[1] + r[5] * p[2] + t[1],
    r[6] * p[0] + r[7] * p[1] + r[8] * p[2] + t[2],
  ];
}

export function cameraCenter(cam: CameraPose): [number, number, number] {
  const r = cam.rotation;
  const t = cam.translation;
  // -R^T t
  return [
    -(r[0] * t[0] + r[3] * t[1] + r[6] * t[2]),
    -(r[1] * t[0] + r[4] * t[1] + r[7] * t[2]),
    -(r[2] * t[0] + r[5] * t[1] + r[8] * t[2]),
  ];
}

export function centerInFrustum(
  cam: CameraPose, point: [number, number, number], near: number, far: number,
): boolean {
  const [x, y, z] = worldToCamera(cam, point);
  if (!(z > near && z <= far)) return false;
  return (
    (-cam.cx / cam.fx) * z <= x && x <= ((cam.width - cam.cx) / cam.fx) * z &&
    (-cam.cy / cam.fy) * z <= y && y <= ((cam.height - cam.cy) / cam.fy) * z
  );
}

export function cameraInBbox(cam: CameraPose, node: StoreNode): boolean {
  const c = cameraCenter(cam);
  return (
    c[0] >= node.bboxMin[0] && c[0] <= node.bboxMax[0] &&
    c[1] >= node.bboxMin[1] && c[1] <= node.bboxMax[1] &&
    c[2] >= node.bboxMin[2] && c[2] <= node.bboxMax[2]
  );
}

export function sceneDiameter(h: Hierarchy): number {
  const dx = h.bboxMax[0] - h.bboxMin[0];
  const dy = h.bboxMax[1] - h.bboxMin[1];
  const dz = h.bboxMax[2] - h.bboxMin[2];
  return Math.sqrt(dx * dx + dy * dy + dz * dz);
}

export function ancestorChains(h: Hierarchy): number[][] {
  const chains: number[][] = new Array(h.nodes.length);
  chains[0] = [];
  const stack: StoreNode[] = [h.nodes[0]];
  while (stack.length) {
    const node = stack.pop()!;
    for (const child of node.children) {
      chains[child.id] = chains[node.id].concat([node.id]);
      stack.push(child);
    }
  }
  return chains;
}

export interface WantedNode {
  depth: number;
  dist: number;
  id: number;
  node: StoreNode;
}

export function wantedNodes(
  h: Hierarchy, cam: CameraPose, dMax: number, near: number, far: number,
): WantedNode[] {
  const camPos = cameraCenter(cam);
  const out: WantedNode[] = [];
  for (const node of h.nodes) {
    if (node.numPoints === 0) continue;
    const center = nodeCenter(node);
    if (!(centerInFrustum(cam, center, near, far) || cameraInBbox(cam, node))) continue;
    const vx = camPos[0] - center[0];
    const vy = camPos[1] - center[1];
    const vz = camPos[2] - center[2];
    const dist = Math.sqrt(vx * vx + vy * vy + vz * vz);
    if (selectLevel(dist, dMax, h.numLevels) === node.depth) {
      out.push({ depth: node.depth, dist, id: node.id, node });
    }
  }
  out.sort((a, b) => a.depth - b.depth || a.dist - b.dist || a.id - b.id);
  return out;
}

/** Drop resident nodes shadowed by a resident descendant; fine replaces coarse. */
export function dropShadowedAncestors(residentIds: number[], chains: number[][]): number[] {
  const residentSet = new Set(residentIds);
  const shadowed = new Set<number>();
  for (const id of residentIds) {
    for (const anc of chains[id]) {
      if (residentSet.has(anc)) shadowed.add(anc);
    }
  }
  return residentIds.filter((id) => !shadowed.has(id));
}

/** Deepest preloaded ancestor for each uncovered visible leaf region. */
export function coverageFallback(
  h: Hierarchy,
  cam: CameraPose,
  near: number,
  far: number,
  selected: number[],
  pinned: Set<number>,
  chains: number[][],
): number[] {
  const selectedSet = new Set(selected);
  const fallback: number[] = [];
  const fallbackSet = new Set<number>();
  const leafDepth = h.numLevels - 1;
  for (const node of h.nodes) {
    if (node.depth !== leafDepth || node.numPoints === 0) continue;
    if (!(centerInFrustum(cam, nodeCenter(node), near, far) || cameraInBbox(cam, node))) continue;
    const chain = chains[node.id].concat([node.id]);
    if (chain.some((id) => selectedSet.has(id))) continue;
    for (let k = chain.length - 1; k >= 0; k--) {
      const ancId = chain[k];
      if (pinned.has(ancId) && h.nodes[ancId].numPoints > 0) {
        if (!fallbackSet.has(ancId)) {
          fallback.push(ancId);
          fallbackSet.add(ancId);
        }
        break;
      }
    }
  }
  return fallback;
}
