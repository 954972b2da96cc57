// Skeletal arm view: orthographic 3/4 projection of the joint chain,
// fence boxes and task zones, with a clamp flash when a fence corrects
// the target. Pure projection math is exported for tests; canvas calls
// stay thin.

import { forwardKinematics } from "./fk.js";
import type { ModelInfo, StateMsg } from "./protocol.js";
import type { Vec3 } from "./pose.js";

export interface View {
  /** yaw then elevation, radians, applied to world points */
  yaw: number;
  elevation: number;
  pixelsPerMeter: number;
  centerPx: [number, number];
  /** world-space point drawn at centerPx */
  lookAt: Vec3;
}

export function defaultView(width: number, height: number, lookAt: Vec3): View {
  return {
    yaw: Math.PI / 5,
    elevation: Math.PI / 8,
    pixelsPerMeter: Math.min(width, height) * 0.9,
    centerPx: [width / 2, height * 0.62],
    lookAt,
  };
}

/** Orthographic projection: world meters -> canvas pixels (y down). */
export function project(view: View, p: Vec3): [number, number] {
  const cx = Math.cos(view.yaw);
  const sx = Math.sin(view.yaw);
  const x = (p[0] - view.lookAt[0]) * cx + (p[1] - view.lookAt[1]) * sx;
  const yw = -(p[0] - view.lookAt[0]) * sx + (p[1] - view.lookAt[1]) * cx;
  const ce = Math.cos(view.elevation);
  const se = Math.sin(view.elevation);
  const ys = (p[2] - view.lookAt[2]) * ce - yw * se;
  return [
    view.centerPx[0] + x * view.pixelsPerMeter,
    view.centerPx[1] - ys * view.pixelsPerMeter,
  ];
}

export function boxEdges(min: number[], max: number[]): [Vec3, Vec3][] {
  const c = (i: number): Vec3 => [
    (i & 1 ? max : min)[0],
    (i & 2 ? max : min)[1],
    (i & 4 ? max : min)[2],
  ];
  const pairs: [number, number][] = [
    [0, 1], [2, 3], [4, 5], [6, 7],
    [0, 2], [1, 3], [4, 6], [5, 7],
    [0, 4], [1, 5], [2, 6], [3, 7],
  ];
  return pairs.map(([a, b]) => [c(a), c(b)]);
}

export interface RenderFlags {
  clampFlash: boolean;
  lockIcon: boolean;
}

export function drawScene(
  ctx: CanvasRenderingContext2D,
  view: View,
  model: ModelInfo,
  state: StateMsg | null,
  flags: RenderFlags,
): void {
  const { canvas } = ctx;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.lineWidth = 1;

  // zones first (fills), then fences (edges)
  for (const zone of model.zones) {
    ctx.strokeStyle = zone.name === "tester" ? "#b8860b66" : "#2e8b5766";
    for (const [a, b] of boxEdges(zone.min, zone.max)) {
      line(ctx, project(view, a), project(view, b));
    }
  }
  for (const fence of model.fences) {
    if (fence.kind === "box" && fence.min && fence.max) {
      ctx.strokeStyle = fence.mode === "keep_in" ? "#44668888" : "#aa444488";
      for (const [a, b] of boxEdges(fence.min, fence.max)) {
        line(ctx, project(view, a), project(view, b));
      }
    } else if (fence.normal) {
      // draw the guide plane as a grid patch around the workspace center
      ctx.strokeStyle = fence.lock_orientation ? "#cc8844aa" : "#66aaccaa";
      drawPlanePatch(ctx, view, fence.normal as Vec3, fence.offset);
    }
  }

  if (state) {
    const fk = forwardKinematics(model, state.q_actual);
    ctx.strokeStyle = "#e8e8e8";
    ctx.lineWidth = 4;
    ctx.lineCap = "round";
    for (let i = 0; i + 1 < fk.origins.length; i++) {
      line(ctx, project(view, fk.origins[i]), project(view, fk.origins[i + 1]));
    }
    ctx.lineWidth = 1;
    for (const o of fk.origins) {
      dot(ctx, project(view, o), 3, "#9ad");
    }
    const tcpPx = project(view, fk.tcp.position);
    dot(ctx, tcpPx, 5, state.clutch ? "#6f6" : "#fa0");
    if (flags.lockIcon) {
      ctx.fillStyle = "#cc8844";
      ctx.fillText("LOCK", tcpPx[0] + 8, tcpPx[1] - 8);
    }
  }

  if (flags.clampFlash) {
    ctx.strokeStyle = "#f33";
    ctx.lineWidth = 6;
    ctx.strokeRect(3, 3, canvas.width - 6, canvas.height - 6);
    ctx.lineWidth = 1;
  }
}

function line(ctx: CanvasRenderingContext2D, a: [number, number], b: [number, number]) {
  ctx.beginPath();
  ctx.moveTo(a[0], a[1]);
  ctx.lineTo(b[0], b[1]);
  ctx.stroke();
}

function dot(ctx: CanvasRenderingContext2D, p: [number, number], r: number, color: string) {
  ctx.fillStyle = color;
  ctx.beginPath();
  ctx.arc(p[0], p[1], r, 0, 2 * Math.PI);
  ctx.fill();
}

function drawPlanePatch(ctx: CanvasRenderingContext2D, view: View, normal: Vec3, offset: number) {
  // orthonormal basis spanning the plane n.p = offset
  const n = normal;
  const ref: Vec3 = Math.abs(n[2]) < 0.9 ? [0, 0, 1] : [1, 0, 0];
  const u: Vec3 = cross(n, ref);
  const un = Math.hypot(...u);
  const ux: Vec3 = [u[0] / un, u[1] / un, u[2] / un];
  const v = cross(n, ux);
  const c: Vec3 = [
    n[0] * offset + view.lookAt[0] - n[0] * dot3(n, view.lookAt),
    n[1] * offset + view.lookAt[1] - n[1] * dot3(n, view.lookAt),
    n[2] * offset + view.lookAt[2] - n[2] * dot3(n, view.lookAt),
  ];
  const half = 0.35;
  for (let k = -3; k <= 3; k++) {
    const t = (k / 3) * half;
    line(
      ctx,
      project(view, [c[0] + ux[0] * t - v[0] * half, c[1] + ux[1] * t - v[1] * half, c[2] + ux[2] * t - v[2] * half]),
      project(view, [c[0] + ux[0] * t + v[0] * half, c[1] + ux[1] * t + v[1] * half, c[2] + ux[2] * t + v[2] * half]),
    );
    line(
      ctx,
      project(view, [c[0] + v[0] * t - ux[0] * half, c[1] + v[1] * t - ux[1] * half, c[2] + v[2] * t - ux[2] * half]),
      project(view, [c[0] + v[0] * t + ux[0] * half, c[1] + v[1] * t + ux[1] * half, c[2] + v[2] * t + ux[2] * half]),
    );
  }
}

function cross(a: Vec3, b: Vec3): Vec3 {
  return [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
}

function dot3(a: Vec3, b: Vec3): number {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}
