/**
 * Store format decoding: hierarchy.bin node table and octree.bin splat records.
 *
 * hierarchy.bin (little-endian):
 *   "LGSO" | u32 version=1 | u32 L | bbox 6xf64 | u32 nodeCount
 *   per node (breadth-first): u8 depth | u8 childMask | u16 reserved |
 *   u32 numPoints | u64 byteOffset | u64 byteSize | bbox 6xf64   (72 bytes)
 *
 * octree.bin: numPoints records of 38 float32 per node
 *   (position 3, rotation 4, logScale 3, opacity 1, sh 27).
 */

export const RECORD_FLOATS = 38;
export const RECORD_SIZE = RECORD_FLOATS * 4;

const HEADER_SIZE = 4 + 4 + 4 + 48 + 4;
const NODE_SIZE = 72;

export interface StoreNode {
  id: number;
  depth: number;
  childMask: number;
  numPoints: number;
  byteOffset: number;
  byteSize: number;
  bboxMin: [number, number, number];
  bboxMax: [number, number, number];
  children: StoreNode[];
  parent: number; // -1 for the root
}

export interface Hierarchy {
  numLevels: number;
  bboxMin: [number, number, number];
  bboxMax: [number, number, number];
  nodes: StoreNode[]; // breadth-first order; index == id
}

export class StoreFormatError extends Error {}

export function parseHierarchy(buffer: ArrayBuffer): Hierarchy {
  const view = new DataView(buffer);
  if (buffer.byteLength < HEADER_SIZE) {
    throw new StoreFormatError(`truncated header at byte ${buffer.byteLength}`);
  }
  const magic = String.fromCharCode(
    view.getUint8(0), view.getUint8(1), view.getUint8(2), view.getUint8(3),
  );
  if (magic !== "LGSO") throw new StoreFormatError(`bad magic ${magic}`);
  const version = view.getUint32(4, true);
  if (version !== 1) throw new StoreFormatError(`unsupported version ${version}`);
  const numLevels = view.getUint32(8, true);
  const bboxMin: [number, number, number] = [
    view.getFloat64(12, true), view.getFloat64(20, true), view.getFloat64(28, true),
  ];
  const bboxMax: [number, number, number] = [
    view.getFloat64(36, true), view.getFloat64(44, true), view.getFloat64(52, true),
  ];
  const nodeCount = view.getUint32(60, true);
  if (buffer.byteLength < HEADER_SIZE + nodeCount * NODE_SIZE) {
    throw new StoreFormatError(
      `truncated node table: have ${buffer.byteLength}, need ${HEADER_SIZE + nodeCount * NODE_SIZE}`,
    );
  }

  const nodes: StoreNode[] = [];
  for (let i = 0; i < nodeCount; i++) {
    const off = HEADER_SIZE + i * NODE_SIZE;
    const depth = view.getUint8(off);
    const childMask = view.getUint8(off + 1);
    const numPoints = view.getUint32(off + 4, true);
    const byteOffset = Number(view.getBigUint64(off + 8, true));
    const byteSize = Number(view.getBigUint64(off + 16, true));
    if (depth >= numLevels) throw new StoreFormatError(`node ${i}: depth ${depth} exceeds tree`);
    if (byteSize !== numPoints * RECORD_SIZE) {
      throw new StoreFormatError(`node ${i}: byteSize ${byteSize} != numPoints * ${RECORD_SIZE}`);
    }
    nodes.push({
      id: i,
      depth,
      childMask,
      numPoints,
      byteOffset,
      byteSize,
      bboxMin: [
        view.getFloat64(off + 24, true), view.getFloat64(off + 32, true), view.getFloat64(off + 40, true),
      ],
      bboxMax: [
        view.getFloat64(off + 48, true), view.getFloat64(off + 56, true), view.getFloat64(off + 64, true),
      ],
      children: [],
      parent: -1,
    });
  }
  if (nodes.length === 0) throw new StoreFormatError("empty hierarchy");

  // breadth-first reconstruction: children follow in mask order
  let nextChild = 1;
  for (const node of nodes) {
    let bits = node.childMask;
    let count = 0;
    while (bits) { count += bits & 1; bits >>= 1; }
    if (nextChild + count > nodes.length) {
      throw new StoreFormatError(`node ${node.id}: child references run past the table`);
    }
    node.children = nodes.slice(nextChild, nextChild + count);
    for (const child of node.children) child.parent = node.id;
    nextChild += count;
  }
  if (nextChild !== nodes.length) {
    throw new StoreFormatError("node table does not form a single breadth-first tree");
  }

  let pos = 0;
  for (const node of nodes) {
    if (node.byteOffset !== pos) {
      throw new StoreFormatError(`node ${node.id}: byteOffset ${node.byteOffset} breaks emission order`);
    }
    pos += node.byteSize;
  }
  return { numLevels, bboxMin, bboxMax, nodes };
}

export interface SplatChunk {
  count: number;
  positions: Float32Array; // 3 per splat
  rotations: Float32Array; // raw quaternion, 4 per splat
  logScales: Float32Array; // 3 per splat
  opacities: Float32Array; // raw logit, 1 per splat
  sh: Float32Array; // 27 per splat, channel-major
}

export function decodeChunk(raw: ArrayBuffer, numPoints: number): SplatChunk {
  if (raw.byteLength !== numPoints * RECORD_SIZE) {
    throw new StoreFormatError(`chunk has ${raw.byteLength} bytes, expected ${numPoints * RECORD_SIZE}`);
  }
  const rec = new Float32Array(raw);
  const positions = new Float32Array(numPoints * 3);
  const rotations = new Float32Array(numPoints * 4);
  const logScales = new Float32Array(numPoints * 3);
  const opacities = new Float32Array(numPoints);
  const sh = new Float32Array(numPoints * 27);
  for (let i = 0; i < numPoints; i++) {
    const base = i * RECORD_FLOATS;
    for (let k = 0; k < 3; k++) positions[i * 3 + k] = rec[base + k];
    for (let k = 0; k < 4; k++) rotations[i * 4 + k] = rec[base + 3 + k];
    for (let k = 0; k < 3; k++) logScales[i * 3 + k] = rec[base + 7 + k];
    opacities[i] = rec[base + 10];
    for (let k = 0; k < 27; k++) sh[i * 27 + k] = rec[base + 11 + k];
    for (let k = 0; k < RECORD_FLOATS; k++) {
      if (!Number.isFinite(rec[base + k])) {
        throw new StoreFormatError(`record ${i} decodes to a non-finite value`);
      }
    }
  }
  return { count: numPoints, positions, rotations, logScales, opacities, sh };
}

export function nodeCenter(node: StoreNode): [number, number, number] {
  return [
    0.5 * (node.bboxMin[0] + node.bboxMax[0]),
    0.5 * (node.bboxMin[1] + node.bboxMax[1]),
    0.5 * (node.bboxMin[2] + node.bboxMax[2]),
  ];
}
