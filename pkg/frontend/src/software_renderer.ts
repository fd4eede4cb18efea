/** CPU splat compositing that mirrors the primary renderer's math exactly:
 * positions travel through the affine chain E_tgt E_src^-1 K_src^-1 into
 * metric target-camera space, covariances rotate by the relative rotation
 * and pick up the perspective Jacobian at projection, and pixels composite
 * front-to-back in canonical depth order (ties by splat index) with the
 * same kernel cutoff, opacity clamp, and anti-aliasing dilation.
 *
 * This path doubles as the no-GPU fallback, so the golden tests pin the
 * semantics the WebGL path must reproduce. */

import {
  Mat3,
  Vec3,
  composeRigid,
  invertRigid,
  mat3Mul,
  mat3MulVec,
  quatToMat3,
  splitRigid,
} from "./linalg.js";
import { CameraFile, SplatData } from "./parser.js";

export const Q_CUT = 60.0;
export const ALPHA_MAX = 0.999;
export const AA_DILATION = 0.3;
export const ZNEAR = 1e-4;

export interface Frame {
  width: number;
  height: number;
  /** Row-major RGB in [0, 1]. */
  color: Float64Array;
  alpha: Float64Array;
  drawnSplats: number;
}

interface ProjectedSplat {
  index: number;
  depth: number;
  cx: number;
  cy: number;
  ia: number;
  ib: number;
  ic: number;
  bboxHx: number;
  bboxHy: number;
  r: number;
  g: number;
  b: number;
  opacity: number;
}

/** NDC-unit intrinsics of the bundle's source camera. */
function sourceNdc(camera: CameraFile, width: number, height: number) {
  return {
    fx: (2 * camera.fx) / width,
    fy: (2 * camera.fy) / height,
    cx: (2 * camera.cx) / width - 1,
    cy: (2 * camera.cy) / height - 1,
  };
}

export function projectSplats(
  data: SplatData,
  target: CameraFile,
): ProjectedSplat[] {
  const srcK = sourceNdc(data.camera, data.sourceWidth, data.sourceHeight);
  const src = splitRigid(data.camera.extrinsics);
  const tgt = splitRigid(target.extrinsics);
  const rel = composeRigid(tgt, invertRigid(src.r, src.t));

  // Affine chain: K_src^-1 then the relative rigid transform.
  const kinv: Mat3 = new Float64Array([
    1 / srcK.fx, 0, -srcK.cx / srcK.fx,
    0, 1 / srcK.fy, -srcK.cy / srcK.fy,
    0, 0, 1,
  ]);
  const a = mat3Mul(rel.r, kinv);

  const out: ProjectedSplat[] = [];
  const { fx, fy, cx, cy } = target;
  for (let i = 0; i < data.count; i++) {
    const mu: Vec3 = [
      data.positions[i * 3],
      data.positions[i * 3 + 1],
      data.positions[i * 3 + 2],
    ];
    const t0 = mat3MulVec(a, mu);
    const tx = t0[0] + rel.t[0];
    const ty = t0[1] + rel.t[1];
    const tz = t0[2] + rel.t[2];
    if (tz <= ZNEAR) continue;

    let qw = data.rotations[i * 4];
    let qx = data.rotations[i * 4 + 1];
    let qy = data.rotations[i * 4 + 2];
    let qz = data.rotations[i * 4 + 3];
    const qn = Math.hypot(qw, qx, qy, qz);
    qw /= qn; qx /= qn; qy /= qn; qz /= qn;
    const m = mat3Mul(rel.r, quatToMat3(qw, qx, qy, qz));

    const s0 = data.scales[i * 3] ** 2;
    const s1 = data.scales[i * 3 + 1] ** 2;
    const s2 = data.scales[i * 3 + 2] ** 2;
    // Sigma_c = M diag(s^2) M^T
    const c00 = m[0] * m[0] * s0 + m[1] * m[1] * s1 + m[2] * m[2] * s2;
    const c01 = m[0] * m[3] * s0 + m[1] * m[4] * s1 + m[2] * m[5] * s2;
    const c02 = m[0] * m[6] * s0 + m[1] * m[7] * s1 + m[2] * m[8] * s2;
    const c11 = m[3] * m[3] * s0 + m[4] * m[4] * s1 + m[5] * m[5] * s2;
    const c12 = m[3] * m[6] * s0 + m[4] * m[7] * s1 + m[5] * m[8] * s2;
    const c22 = m[6] * m[6] * s0 + m[7] * m[7] * s1 + m[8] * m[8] * s2;

    // J Sigma_c J^T with the pinhole Jacobian at (tx, ty, tz).
    const j00 = fx / tz;
    const j02 = (-fx * tx) / (tz * tz);
    const j11 = fy / tz;
    const j12 = (-fy * ty) / (tz * tz);
    const a00 = j00 * c00 + j02 * c02;
    const a01 = j00 * c01 + j02 * c12;
    const a02 = j00 * c02 + j02 * c22;
    const b1 = j11 * c11 + j12 * c12;
    const b2 = j11 * c12 + j12 * c22;
    const covA = a00 * j00 + a02 * j02 + AA_DILATION;
    const covB = a01 * j11 + a02 * j12;
    const covC = b1 * j11 + b2 * j12 + AA_DILATION;

    const det = covA * covC - covB * covB;
    out.push({
      index: i,
      depth: tz,
      cx: (fx * tx) / tz + cx,
      cy: (fy * ty) / tz + cy,
      ia: covC / det,
      ib: -covB / det,
      ic: covA / det,
      bboxHx: Math.sqrt(Q_CUT * covA),
      bboxHy: Math.sqrt(Q_CUT * covC),
      r: data.colors[i * 3],
      g: data.colors[i * 3 + 1],
      b: data.colors[i * 3 + 2],
      opacity: data.opacities[i],
    });
  }
  // Canonical order: ascending depth, ties by original index.
  out.sort((p, q) => (p.depth - q.depth) || (p.index - q.index));
  return out;
}

export function renderSoftware(
  data: SplatData,
  target: CameraFile,
  width: number,
  height: number,
): Frame {
  const splats = projectSplats(data, target);
  const color = new Float64Array(width * height * 3);
  const trans = new Float64Array(width * height).fill(1.0);

  // Splats arrive in global depth order, so a per-pixel running
  // transmittance buffer composites each pixel front to back.
  for (const s of splats) {
    const c0 = Math.max(0, Math.ceil(s.cx - s.bboxHx - 0.5));
    const c1 = Math.min(width - 1, Math.floor(s.cx + s.bboxHx - 0.5));
    const r0 = Math.max(0, Math.ceil(s.cy - s.bboxHy - 0.5));
    const r1 = Math.min(height - 1, Math.floor(s.cy + s.bboxHy - 0.5));
    for (let r = r0; r <= r1; r++) {
      const dy = r + 0.5 - s.cy;
      for (let c = c0; c <= c1; c++) {
        const dx = c + 0.5 - s.cx;
        const q = s.ia * dx * dx + 2 * s.ib * dx * dy + s.ic * dy * dy;
        if (q > Q_CUT) continue;
        let a = s.opacity * Math.exp(-0.5 * q);
        if (a > ALPHA_MAX) a = ALPHA_MAX;
        const p = r * width + c;
        const w = a * trans[p];
        color[p * 3] += s.r * w;
        color[p * 3 + 1] += s.g * w;
        color[p * 3 + 2] += s.b * w;
        trans[p] *= 1 - a;
      }
    }
  }

  const alpha = new Float64Array(width * height);
  for (let p = 0; p < alpha.length; p++) alpha[p] = 1 - trans[p];
  return { width, height, color, alpha, drawnSplats: splats.length };
}

/** Frame as 8-bit RGBA for canvas ImageData. */
export function frameToRgba(frame: Frame): Uint8ClampedArray<ArrayBuffer> {
  const out = new Uint8ClampedArray(
    new ArrayBuffer(frame.width * frame.height * 4),
  );
  for (let p = 0; p < frame.width * frame.height; p++) {
    out[p * 4] = Math.round(Math.min(1, Math.max(0, frame.color[p * 3])) * 255);
    out[p * 4 + 1] = Math.round(
      Math.min(1, Math.max(0, frame.color[p * 3 + 1])) * 255,
    );
    out[p * 4 + 2] = Math.round(
      Math.min(1, Math.max(0, frame.color[p * 3 + 2])) * 255,
    );
    out[p * 4 + 3] = 255;
  }
  return out;
}
