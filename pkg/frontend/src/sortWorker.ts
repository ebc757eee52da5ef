/**
 * Background sorter: owns the splat attribute tables, sorts back-to-front for
 * the current view, evaluates degree-2 SH per splat, and returns reordered
 * draw buffers. Results carry the epoch they were requested with; the
 * renderer presents the newest completed sort and ignores stale ones.
 */

const SH_C0 = 0.28209479177387814;
const SH_C1 = 0.4886025119029199;
const SH_C2 = [1.0925484305920792, -1.0925484305920792, 0.31539156525252005, -1.0925484305920792, 0.5462742152960396];

interface DataMsg {
  type: "data";
  count: number;
  positions: Float32Array;
  rotations: Float32Array;
  logScales: Float32Array;
  opacities: Float32Array;
  sh: Float32Array;
}

interface SortMsg {
  type: "sort";
  epoch: number;
  camPos: [number, number, number];
  viewZ: [number, number, number]; // camera forward axis in world frame
}

let count = 0;
let positions: Float32Array = new Float32Array(0);
let opacities: Float32Array = new Float32Array(0);
let sh: Float32Array = new Float32Array(0);
let cov6: Float32Array = new Float32Array(0);

function computeCovariances(rotations: Float32Array, logScales: Float32Array): Float32Array {
  const out = new Float32Array(count * 6);
  for (let i = 0; i < count; i++) {
    const qw = rotations[i * 4], qx = rotations[i * 4 + 1], qy = rotations[i * 4 + 2], qz = rotations[i * 4 + 3];
    const qn = Math.sqrt(qw * qw + qx * qx + qy * qy + qz * qz) || 1;
    const w = qw / qn, x = qx / qn, y = qy / qn, z = qz / qn;
    const r = [
      1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
    ];
    const s0 = Math.exp(logScales[i * 3]) ** 2;
    const s1 = Math.exp(logScales[i * 3 + 1]) ** 2;
    const s2 = Math.exp(logScales[i * 3 + 2]) ** 2;
    // sigma = R diag(s^2) R^T, upper triangle
    const m = [r[0] * s0, r[1] * s1, r[2] * s2, r[3] * s0, r[4] * s1, r[5] * s2, r[6] * s0, r[7] * s1, r[8] * s2];
    out[i * 6 + 0] = m[0] * r[0] + m[1] * r[1] + m[2] * r[2];
    out[i * 6 + 1] = m[0] * r[3] + m[1] * r[4] + m[2] * r[5];
    out[i * 6 + 2] = m[0] * r[6] + m[1] * r[7] + m[2] * r[8];
    out[i * 6 + 3] = m[3] * r[3] + m[4] * r[4] + m[5] * r[5];
    out[i * 6 + 4] = m[3] * r[6] + m[4] * r[7] + m[5] * r[8];
    out[i * 6 + 5] = m[6] * r[6] + m[7] * r[7] + m[8] * r[8];
  }
  return out;
}

function evalColor(i: number, dx: number, dy: number, dz: number): [number, number, number] {
  const b = [
    SH_C0,
    -SH_C1 * dy,
    SH_C1 * dz,
    -SH_C1 * dx,
    SH_C2[0] * dx * dy,
    SH_C2[1] * dy * dz,
    SH_C2[2] * (2 * dz * dz - dx * dx - dy * dy),
    SH_C2[3] * dx * dz,
    SH_C2[4] * (dx * dx - dy * dy),
  ];
  const out: [number, number, number] = [0.5, 0.5, 0.5];
  for (let ch = 0; ch < 3; ch++) {
    let acc = 0;
    for (let k = 0; k < 9; k++) acc += b[k] * sh[i * 27 + ch * 9 + k];
    out[ch] = Math.max(0, Math.min(1, 0.5 + acc));
  }
  return out;
}

self.onmessage = (ev: MessageEvent<DataMsg | SortMsg>) => {
  const msg = ev.data;
  if (msg.type === "data") {
    count = msg.count;
    positions = msg.positions;
    opacities = msg.opacities;
    sh = msg.sh;
    cov6 = computeCovariances(msg.rotations, msg.logScales);
    (self as unknown as Worker).postMessage({ type: "ready", count });
    return;
  }

  const [cx, cy, cz] = msg.camPos;
  const [fx, fy, fz] = msg.viewZ;
  const depth = new Float32Array(count);
  for (let i = 0; i < count; i++) {
    depth[i] =
      (positions[i * 3] - cx) * fx + (positions[i * 3 + 1] - cy) * fy + (positions[i * 3 + 2] - cz) * fz;
  }
  const order = new Uint32Array(count);
  for (let i = 0; i < count; i++) order[i] = i;
  order.sort((a, b) => depth[b] - depth[a]); // back to front

  const outPos = new Float32Array(count * 3);
  const outCov = new Float32Array(count * 6);
  const outRgba = new Uint8Array(count * 4);
  for (let k = 0; k < count; k++) {
    const i = order[k];
    outPos.set(positions.subarray(i * 3, i * 3 + 3), k * 3);
    outCov.set(cov6.subarray(i * 6, i * 6 + 6), k * 6);
    const px = positions[i * 3] - cx, py = positions[i * 3 + 1] - cy, pz = positions[i * 3 + 2] - cz;
    const n = Math.sqrt(px * px + py * py + pz * pz) || 1;
    const [r, g, b] = evalColor(i, px / n, py / n, pz / n);
    const alpha = 1 / (1 + Math.exp(-opacities[i]));
    outRgba[k * 4] = Math.round(r * 255);
    outRgba[k * 4 + 1] = Math.round(g * 255);
    outRgba[k * 4 + 2] = Math.round(b * 255);
    outRgba[k * 4 + 3] = Math.round(Math.min(0.99, alpha) * 255);
  }
  (self as unknown as Worker).postMessage(
    { type: "sorted", epoch: msg.epoch, count, positions: outPos, cov6: outCov, rgba: outRgba },
    [outPos.buffer, outCov.buffer, outRgba.buffer],
  );
};
