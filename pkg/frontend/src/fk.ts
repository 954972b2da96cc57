// Forward kinematics from the server's /model DH table, used to draw the
// arm. Must agree with the server's own FK (the render-agreement test
// pins this against server-reported TCP poses).

import type { ModelInfo } from "./protocol.js";
import type { Quat, Vec3 } from "./pose.js";

type Mat3 = number[]; // row-major 3x3

const EYE: Mat3 = [1, 0, 0, 0, 1, 0, 0, 0, 1];

function matMul(a: Mat3, b: Mat3): Mat3 {
  const out = new Array(9).fill(0);
  for (let r = 0; r < 3; r++)
    for (let c = 0; c < 3; c++)
      out[3 * r + c] = a[3 * r] * b[c] + a[3 * r + 1] * b[3 + c] + a[3 * r + 2] * b[6 + c];
  return out;
}

function matVec(a: Mat3, v: Vec3): Vec3 {
  return [
    a[0] * v[0] + a[1] * v[1] + a[2] * v[2],
    a[3] * v[0] + a[4] * v[1] + a[5] * v[2],
    a[6] * v[0] + a[7] * v[1] + a[8] * v[2],
  ];
}

function quatToMat(q: Quat): Mat3 {
  const [w, x, y, z] = q;
  return [
    1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
    2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
    2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
  ];
}

function matToQuat(m: Mat3): Quat {
  const t = m[0] + m[4] + m[8];
  let q: Quat;
  if (t > 0) {
    const s = Math.sqrt(t + 1) * 2;
    q = [0.25 * s, (m[7] - m[5]) / s, (m[2] - m[6]) / s, (m[3] - m[1]) / s];
  } else if (m[0] > m[4] && m[0] > m[8]) {
    const s = Math.sqrt(1 + m[0] - m[4] - m[8]) * 2;
    q = [(m[7] - m[5]) / s, 0.25 * s, (m[1] + m[3]) / s, (m[2] + m[6]) / s];
  } else if (m[4] > m[8]) {
    const s = Math.sqrt(1 + m[4] - m[0] - m[8]) * 2;
    q = [(m[2] - m[6]) / s, (m[1] + m[3]) / s, 0.25 * s, (m[5] + m[7]) / s];
  } else {
    const s = Math.sqrt(1 + m[8] - m[0] - m[4]) * 2;
    q = [(m[3] - m[1]) / s, (m[2] + m[6]) / s, (m[5] + m[7]) / s, 0.25 * s];
  }
  const n = Math.hypot(...q);
  const sgn = q[0] < 0 ? -1 : 1;
  return [q[0] * sgn / n, q[1] * sgn / n, q[2] * sgn / n, q[3] * sgn / n];
}

export interface FkResult {
  /** joint-frame origins: base, then after each joint transform, then TCP */
  origins: Vec3[];
  tcp: { position: Vec3; orientation: Quat };
}

export function forwardKinematics(model: ModelInfo, q: number[]): FkResult {
  if (q.length !== model.dh.length) throw new Error("joint count mismatch");
  let R = EYE;
  let p: Vec3 = [0, 0, 0];
  const origins: Vec3[] = [[0, 0, 0]];
  for (let i = 0; i < model.dh.length; i++) {
    const { a, alpha, d, theta_offset } = model.dh[i];
    const th = q[i] + theta_offset;
    const ct = Math.cos(th);
    const st = Math.sin(th);
    const ca = Math.cos(alpha);
    const sa = Math.sin(alpha);
    const A: Mat3 = [ct, -st * ca, st * sa, st, ct * ca, -ct * sa, 0, sa, ca];
    p = [
      p[0] + R[0] * a * ct + R[1] * a * st + R[2] * d,
      p[1] + R[3] * a * ct + R[4] * a * st + R[5] * d,
      p[2] + R[6] * a * ct + R[7] * a * st + R[8] * d,
    ];
    R = matMul(R, A);
    origins.push([...p] as Vec3);
  }
  const tool = model.tool_offset;
  const tp = matVec(R, tool.position.slice(0, 3) as Vec3);
  const tcpPos: Vec3 = [p[0] + tp[0], p[1] + tp[1], p[2] + tp[2]];
  const Rtcp = matMul(R, quatToMat(tool.orientation.slice(0, 4) as Quat));
  origins.push(tcpPos);
  return { origins, tcp: { position: tcpPos, orientation: matToQuat(Rtcp) } };
}
