/** Interactive camera: orbit and free-fly modes, headbox clamping, and
 * pose import/export in the primary camera-file schema.
 *
 * World conventions match the scene bundles: y points down, z forward;
 * extrinsics are rigid world-to-camera matrices. */

import {
  Mat3,
  Vec3,
  add3,
  cross3,
  mat3MulVec,
  mat3Transpose,
  norm3,
  normalize3,
  scale3,
  splitRigid,
  sub3,
} from "./linalg.js";
import { CameraFile } from "./parser.js";

export interface Intrinsics {
  fx: number;
  fy: number;
  cx: number;
  cy: number;
}

export interface Pose {
  /** Camera center in world coordinates. */
  position: Vec3;
  /** World-to-camera rotation, row-major. */
  rotation: Mat3;
}

export function poseFromCameraFile(file: CameraFile): Pose {
  const { r, t } = splitRigid(file.extrinsics);
  const c = mat3MulVec(mat3Transpose(r), t);
  return { position: [-c[0], -c[1], -c[2]], rotation: r };
}

export function poseToExtrinsics(pose: Pose): number[][] {
  const t = mat3MulVec(pose.rotation, pose.position);
  const r = pose.rotation;
  return [
    [r[0], r[1], r[2], -t[0]],
    [r[3], r[4], r[5], -t[1]],
    [r[6], r[7], r[8], -t[2]],
    [0, 0, 0, 1],
  ];
}

export function cameraFile(intr: Intrinsics, pose: Pose): CameraFile {
  return {
    fx: intr.fx,
    fy: intr.fy,
    cx: intr.cx,
    cy: intr.cy,
    extrinsics: poseToExtrinsics(pose),
  };
}

/** Serialize a pose in the primary camera-file schema (paste into a file
 * for `layersplat render`). */
export function exportCameraJson(intr: Intrinsics, pose: Pose): string {
  const file = cameraFile(intr, pose);
  return JSON.stringify(
    { fx: file.fx, fy: file.fy, cx: file.cx, cy: file.cy, extrinsics: file.extrinsics },
    null,
    2,
  );
}

/** Look-at construction in the y-down world. */
export function lookAt(position: Vec3, target: Vec3): Pose {
  const forward = normalize3(sub3(target, position));
  const worldDown: Vec3 = [0, 1, 0];
  let right = cross3(worldDown, forward);
  const n = norm3(right);
  if (n < 1e-9) {
    right = [1, 0, 0];
  } else {
    right = scale3(right, 1 / n);
  }
  const down = cross3(forward, right);
  const rotation = new Float64Array([
    right[0], right[1], right[2],
    down[0], down[1], down[2],
    forward[0], forward[1], forward[2],
  ]);
  return { position, rotation };
}

export interface OrbitState {
  target: Vec3;
  azimuth: number; // radians around the world y (down) axis
  elevation: number;
  radius: number;
}

export function orbitPose(state: OrbitState): Pose {
  const ce = Math.cos(state.elevation);
  const position: Vec3 = [
    state.target[0] - state.radius * ce * Math.sin(state.azimuth),
    state.target[1] + state.radius * Math.sin(state.elevation),
    state.target[2] - state.radius * ce * Math.cos(state.azimuth),
  ];
  return lookAt(position, state.target);
}

export class Headbox {
  constructor(
    public readonly center: Vec3,
    public readonly radius: number,
    public enabled = true,
  ) {}

  /** Project a camera position back onto the headbox ball when outside. */
  clamp(position: Vec3): Vec3 {
    if (!this.enabled) return position;
    const d = sub3(position, this.center);
    const n = norm3(d);
    if (n <= this.radius) return position;
    return add3(this.center, scale3(d, this.radius / n));
  }

  contains(position: Vec3): boolean {
    return norm3(sub3(position, this.center)) <= this.radius + 1e-12;
  }
}

export type NavigationMode = "orbit" | "fly";

/** Steerable camera state: orbit or free-fly, clamped to the headbox,
 * with one-call reset to the bundled source pose. */
export class SteerableCamera {
  mode: NavigationMode = "orbit";
  orbit: OrbitState;
  flyPose: Pose;
  readonly headbox: Headbox;

  constructor(
    public readonly intrinsics: Intrinsics,
    private readonly homePose: Pose,
    headboxRadius: number,
    orbitTargetDistance = 1.5,
  ) {
    this.headbox = new Headbox([...homePose.position] as Vec3, headboxRadius);
    this.orbit = this.orbitFromPose(homePose, orbitTargetDistance);
    this.flyPose = { position: [...homePose.position], rotation: homePose.rotation };
  }

  private orbitFromPose(pose: Pose, distance: number): OrbitState {
    // Target sits `distance` along the camera's forward axis.
    const forward: Vec3 = [pose.rotation[6], pose.rotation[7], pose.rotation[8]];
    const target = add3(pose.position, scale3(forward, distance));
    const d = sub3(pose.position, target);
    const radius = norm3(d);
    return {
      target,
      azimuth: Math.atan2(-d[0], -d[2]),
      elevation: Math.asin(d[1] / radius),
      radius,
    };
  }

  reset(): void {
    this.orbit = this.orbitFromPose(this.homePose, this.orbit.radius);
    this.flyPose = {
      position: [...this.homePose.position],
      rotation: this.homePose.rotation,
    };
    this.mode = "orbit";
  }

  rotate(dAzimuth: number, dElevation: number): void {
    this.orbit.azimuth += dAzimuth;
    this.orbit.elevation = Math.min(
      Math.PI / 2 - 1e-3,
      Math.max(-Math.PI / 2 + 1e-3, this.orbit.elevation + dElevation),
    );
  }

  dolly(dRadius: number): void {
    this.orbit.radius = Math.max(1e-3, this.orbit.radius + dRadius);
  }

  pan(dx: number, dy: number): void {
    const pose = orbitPose(this.orbit);
    const right: Vec3 = [pose.rotation[0], pose.rotation[1], pose.rotation[2]];
    const down: Vec3 = [pose.rotation[3], pose.rotation[4], pose.rotation[5]];
    this.orbit.target = add3(
      this.orbit.target,
      add3(scale3(right, dx), scale3(down, dy)),
    );
  }

  fly(forwardM: number, rightM: number, downM: number): void {
    this.mode = "fly";
    const r = this.flyPose.rotation;
    const move: Vec3 = [
      r[0] * rightM + r[3] * downM + r[6] * forwardM,
      r[1] * rightM + r[4] * downM + r[7] * forwardM,
      r[2] * rightM + r[5] * downM + r[8] * forwardM,
    ];
    this.flyPose = {
      position: add3(this.flyPose.position, move),
      rotation: r,
    };
  }

  /** Current pose after the headbox clamp. */
  pose(): Pose {
    const raw = this.mode === "orbit" ? orbitPose(this.orbit) : this.flyPose;
    const clamped = this.headbox.clamp(raw.position);
    if (clamped === raw.position) return raw;
    if (this.mode === "orbit") {
      // Re-aim at the orbit target from the clamped position.
      return lookAt(clamped, this.orbit.target);
    }
    return { position: clamped, rotation: raw.rotation };
  }

  cameraFile(): CameraFile {
    return cameraFile(this.intrinsics, this.pose());
  }

  exportJson(): string {
    return exportCameraJson(this.intrinsics, this.pose());
  }
}
