// Minimal vector/quaternion math for the console. Quaternions are
// [w, x, y, z], matching the server's wire order.

export type Vec3 = [number, number, number];
export type Quat = [number, number, number, number];

export const IDENTITY: Quat = [1, 0, 0, 0];

export function vadd(a: Vec3, b: Vec3): Vec3 {
  return [a[0] + b[0], a[1] + b[1], a[2] + b[2]];
}

export function vsub(a: Vec3, b: Vec3): Vec3 {
  return [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
}

export function vscale(a: Vec3, s: number): Vec3 {
  return [a[0] * s, a[1] * s, a[2] * s];
}

export function vnorm(a: Vec3): number {
  return Math.hypot(a[0], a[1], a[2]);
}

export function vdot(a: Vec3, b: Vec3): number {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

export function quatNormalize(q: Quat): Quat {
  const n = Math.hypot(q[0], q[1], q[2], q[3]);
  if (!(n > 0) || !isFinite(n)) throw new Error("bad quaternion");
  const s = q[0] < 0 ? -1 / n : 1 / n;
  return [q[0] * s, q[1] * s, q[2] * s, q[3] * s];
}

export function quatMul(a: Quat, b: Quat): Quat {
  const [aw, ax, ay, az] = a;
  const [bw, bx, by, bz] = b;
  return [
    aw * bw - ax * bx - ay * by - az * bz,
    aw * bx + ax * bw + ay * bz - az * by,
    aw * by - ax * bz + ay * bw + az * bx,
    aw * bz + ax * by - ay * bx + az * bw,
  ];
}

export function quatConj(q: Quat): Quat {
  return [q[0], -q[1], -q[2], -q[3]];
}

export function quatRotate(q: Quat, v: Vec3): Vec3 {
  const u: Vec3 = [q[1], q[2], q[3]];
  const w = q[0];
  const uv: Vec3 = [
    u[1] * v[2] - u[2] * v[1],
    u[2] * v[0] - u[0] * v[2],
    u[0] * v[1] - u[1] * v[0],
  ];
  const uuv: Vec3 = [
    u[1] * uv[2] - u[2] * uv[1],
    u[2] * uv[0] - u[0] * uv[2],
    u[0] * uv[1] - u[1] * uv[0],
  ];
  return [
    v[0] + 2 * (w * uv[0] + uuv[0]),
    v[1] + 2 * (w * uv[1] + uuv[1]),
    v[2] + 2 * (w * uv[2] + uuv[2]),
  ];
}

export function quatFromAxisAngle(axis: Vec3, angle: number): Quat {
  const n = vnorm(axis);
  if (!(n > 0)) throw new Error("zero axis");
  const h = angle / 2;
  const s = Math.sin(h) / n;
  return quatNormalize([Math.cos(h), axis[0] * s, axis[1] * s, axis[2] * s]);
}

// DeviceOrientationEvent angles (degrees, intrinsic Z-X'-Y'') to a quaternion.
export function quatFromDeviceOrientation(alpha: number, beta: number, gamma: number): Quat {
  const d = Math.PI / 180;
  const za = quatFromAxisAngle([0, 0, 1], alpha * d);
  const xb = quatFromAxisAngle([1, 0, 0], beta * d);
  const yg = quatFromAxisAngle([0, 1, 0], gamma * d);
  return quatMul(quatMul(za, xb), yg);
}

export interface Pose {
  position: Vec3;
  orientation: Quat;
}

export function identityPose(): Pose {
  return { position: [0, 0, 0], orientation: [...IDENTITY] as Quat };
}

export function clonePose(p: Pose): Pose {
  return { position: [...p.position] as Vec3, orientation: [...p.orientation] as Quat };
}
