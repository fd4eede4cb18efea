/** Small dense linear algebra helpers (row-major 3x3 / 4x4 matrices). */

export type Vec3 = [number, number, number];
export type Mat3 = Float64Array; // 9 entries, row-major
export type Mat4 = Float64Array; // 16 entries, row-major

export function mat3Identity(): Mat3 {
  return new Float64Array([1, 0, 0, 0, 1, 0, 0, 0, 1]);
}

export function mat3Mul(a: Mat3, b: Mat3): Mat3 {
  const out = new Float64Array(9);
  for (let r = 0; r < 3; r++) {
    for (let c = 0; c < 3; c++) {
      out[r * 3 + c] =
        a[r * 3] * b[c] + a[r * 3 + 1] * b[3 + c] + a[r * 3 + 2] * b[6 + c];
    }
  }
  return out;
}

export function mat3MulVec(a: Mat3, v: Vec3): Vec3 {
  return [
    a[0] * v[0] + a[1] * v[1] + a[2] * v[2],
    a[3] * v[0] + a[4] * v[1] + a[5] * v[2],
    a[6] * v[0] + a[7] * v[1] + a[8] * v[2],
  ];
}

export function mat3Transpose(a: Mat3): Mat3 {
  return new Float64Array([a[0], a[3], a[6], a[1], a[4], a[7], a[2], a[5], a[8]]);
}

/** Rows of a 4x4 rigid world-to-camera matrix -> (R, t). */
export function splitRigid(m: number[][]): { r: Mat3; t: Vec3 } {
  const r = new Float64Array([
    m[0][0], m[0][1], m[0][2],
    m[1][0], m[1][1], m[1][2],
    m[2][0], m[2][1], m[2][2],
  ]);
  return { r, t: [m[0][3], m[1][3], m[2][3]] };
}

/** Inverse of a rigid transform given as (R, t). */
export function invertRigid(r: Mat3, t: Vec3): { r: Mat3; t: Vec3 } {
  const rt = mat3Transpose(r);
  const ti = mat3MulVec(rt, t);
  return { r: rt, t: [-ti[0], -ti[1], -ti[2]] };
}

export function composeRigid(
  a: { r: Mat3; t: Vec3 },
  b: { r: Mat3; t: Vec3 },
): { r: Mat3; t: Vec3 } {
  // (a ∘ b)(x) = a.r (b.r x + b.t) + a.t
  const r = mat3Mul(a.r, b.r);
  const bt = mat3MulVec(a.r, b.t);
  return { r, t: [bt[0] + a.t[0], bt[1] + a.t[1], bt[2] + a.t[2]] };
}

/** Unit quaternion (w, x, y, z) -> rotation matrix. */
export function quatToMat3(w: number, x: number, y: number, z: number): Mat3 {
  return new Float64Array([
    1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w),
    2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w),
    2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y),
  ]);
}

export function norm3(v: Vec3): number {
  return Math.hypot(v[0], v[1], v[2]);
}

export function sub3(a: Vec3, b: Vec3): Vec3 {
  return [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
}

export function add3(a: Vec3, b: Vec3): Vec3 {
  return [a[0] + b[0], a[1] + b[1], a[2] + b[2]];
}

export function scale3(a: Vec3, s: number): Vec3 {
  return [a[0] * s, a[1] * s, a[2] * s];
}

export function cross3(a: Vec3, b: Vec3): Vec3 {
  return [
    a[1] * b[2] - a[2] * b[1],
    a[2] * b[0] - a[0] * b[2],
    a[0] * b[1] - a[1] * b[0],
  ];
}

export function normalize3(v: Vec3): Vec3 {
  const n = norm3(v);
  return [v[0] / n, v[1] / n, v[2] / n];
}
