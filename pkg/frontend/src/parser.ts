/** Binary splat-bundle parsing.
 *
 * Layout (little-endian): magic "SHRP" (4), version u16, count u64,
 * gridW/gridH/layers u32, smax f64, source camera (fx, fy, cx, cy f64,
 * width/height u32, extrinsics 16 f64), then count records of 14 float32:
 * position xyz, scale xyz, rotation wxyz, color rgb, opacity.
 */

export const SPLAT_MAGIC = 0x53485250; // "SHRP" big-endian read of the 4 bytes
export const SPLAT_VERSION = 1;
export const HEADER_BYTES = 202;
export const RECORD_FLOATS = 14;

export class ParseError extends Error {
  constructor(message: string, public readonly byteOffset: number) {
    super(`${message} (at byte ${byteOffset})`);
    this.name = "ParseError";
  }
}

export interface CameraFile {
  fx: number;
  fy: number;
  cx: number;
  cy: number;
  extrinsics: number[][];
}

export interface SplatData {
  count: number;
  gridW: number;
  gridH: number;
  layers: number;
  smax: number;
  camera: CameraFile;
  sourceWidth: number;
  sourceHeight: number;
  /** Per-splat attribute arrays (float32, exactly as stored). */
  positions: Float32Array; // count * 3
  scales: Float32Array; // count * 3
  rotations: Float32Array; // count * 4, (w, x, y, z)
  colors: Float32Array; // count * 3
  opacities: Float32Array; // count
}

export interface ViewerManifest {
  splat: string;
  count: number;
  headboxRadiusMeters: number;
  sourceWidth: number;
  sourceHeight: number;
  camera: CameraFile;
}

export function parseSplat(buffer: ArrayBuffer): SplatData {
  if (buffer.byteLength < HEADER_BYTES) {
    throw new ParseError(
      `file too short for the header (${buffer.byteLength} bytes)`,
      buffer.byteLength,
    );
  }
  const view = new DataView(buffer);
  const magic =
    (view.getUint8(0) << 24) |
    (view.getUint8(1) << 16) |
    (view.getUint8(2) << 8) |
    view.getUint8(3);
  if (magic !== SPLAT_MAGIC) {
    throw new ParseError(`bad magic 0x${(magic >>> 0).toString(16)}`, 0);
  }
  const version = view.getUint16(4, true);
  if (version !== SPLAT_VERSION) {
    throw new ParseError(`unsupported version ${version}`, 4);
  }
  const countBig = view.getBigUint64(6, true);
  if (countBig > BigInt(Number.MAX_SAFE_INTEGER)) {
    throw new ParseError("splat count overflows", 6);
  }
  const count = Number(countBig);
  const gridW = view.getUint32(14, true);
  const gridH = view.getUint32(18, true);
  const layers = view.getUint32(22, true);
  if (count !== layers * gridH * gridW) {
    throw new ParseError(
      `count ${count} does not match grid ${layers}x${gridH}x${gridW}`,
      14,
    );
  }
  const smax = view.getFloat64(26, true);
  const fx = view.getFloat64(34, true);
  const fy = view.getFloat64(42, true);
  const cx = view.getFloat64(50, true);
  const cy = view.getFloat64(58, true);
  const sourceWidth = view.getUint32(66, true);
  const sourceHeight = view.getUint32(70, true);
  const extrinsics: number[][] = [];
  for (let r = 0; r < 4; r++) {
    const row: number[] = [];
    for (let c = 0; c < 4; c++) {
      row.push(view.getFloat64(74 + 8 * (r * 4 + c), true));
    }
    extrinsics.push(row);
  }

  const expected = HEADER_BYTES + count * RECORD_FLOATS * 4;
  if (buffer.byteLength !== expected) {
    throw new ParseError(
      `file length ${buffer.byteLength} != expected ${expected}`,
      Math.min(buffer.byteLength, expected),
    );
  }

  const positions = new Float32Array(count * 3);
  const scales = new Float32Array(count * 3);
  const rotations = new Float32Array(count * 4);
  const colors = new Float32Array(count * 3);
  const opacities = new Float32Array(count);
  for (let i = 0; i < count; i++) {
    const base = HEADER_BYTES + i * RECORD_FLOATS * 4;
    for (let k = 0; k < 3; k++) {
      positions[i * 3 + k] = view.getFloat32(base + 4 * k, true);
      scales[i * 3 + k] = view.getFloat32(base + 4 * (3 + k), true);
      colors[i * 3 + k] = view.getFloat32(base + 4 * (10 + k), true);
    }
    for (let k = 0; k < 4; k++) {
      rotations[i * 4 + k] = view.getFloat32(base + 4 * (6 + k), true);
    }
    opacities[i] = view.getFloat32(base + 4 * 13, true);
  }

  return {
    count,
    gridW,
    gridH,
    layers,
    smax,
    camera: { fx, fy, cx, cy, extrinsics },
    sourceWidth,
    sourceHeight,
    positions,
    scales,
    rotations,
    colors,
    opacities,
  };
}

export function parseManifest(text: string): ViewerManifest {
  let raw: unknown;
  try {
    raw = JSON.parse(text);
  } catch (err) {
    throw new ParseError(`manifest is not valid JSON: ${err}`, 0);
  }
  const m = raw as Record<string, unknown>;
  for (const key of [
    "splat",
    "count",
    "headboxRadiusMeters",
    "sourceWidth",
    "sourceHeight",
    "camera",
  ]) {
    if (!(key in m)) {
      throw new ParseError(`manifest is missing "${key}"`, 0);
    }
  }
  return m as unknown as ViewerManifest;
}
