// Virtual operator pose and the clutch gate.
//
// Pointer drags, wheel ticks and device-orientation samples accumulate
// into a client-side pose; the server only ever sees deltas relative to
// the pose captured at clutch engage. The hard invariant lives here: no
// waypoint is produced while the clutch is released, except the single
// release message itself.

import {
  clonePose,
  identityPose,
  quatFromAxisAngle,
  quatFromDeviceOrientation,
  quatMul,
  quatNormalize,
  quatRotate,
} from "./pose.js";
import type { Pose, Quat, Vec3 } from "./pose.js";
import { makeWaypoint } from "./protocol.js";
import type { Gripper, WaypointMsg } from "./protocol.js";

export type InputMode = "pointer" | "device_orientation";

export interface InputGains {
  metersPerPixel: number;
  metersPerWheelTick: number;
  radiansPerPixel: number;
}

export const DEFAULT_GAINS: InputGains = {
  metersPerPixel: 0.001,
  metersPerWheelTick: 0.002,
  radiansPerPixel: 0.005,
};

const STREAM_INTERVAL_MS = 1000 / 60;

export class OperatorInput {
  readonly gains: InputGains;
  mode: InputMode = "pointer";
  pose: Pose = identityPose();
  clutchHeld = false;

  private seq = 0;
  private lastSentMs = -Infinity;
  private pendingGripper: Gripper | null = null;
  private heldButtons = 0;
  private epochMs: number | null = null;

  constructor(gains: Partial<InputGains> = {}) {
    this.gains = { ...DEFAULT_GAINS, ...gains };
  }

  // -- pose integration ------------------------------------------------------

  /** Pointer drag in screen pixels. Plain drag pans XY (screen up = +y);
   *  with the rotate modifier it yaws (x) and pitches (y) instead. */
  drag(dxPx: number, dyPx: number, rotateModifier = false): void {
    if (rotateModifier) {
      const yaw = quatFromAxisAngle([0, 0, 1], -dxPx * this.gains.radiansPerPixel);
      const pitch = quatFromAxisAngle([0, 1, 0], -dyPx * this.gains.radiansPerPixel);
      this.pose.orientation = quatNormalize(quatMul(yaw, quatMul(pitch, this.pose.orientation)));
      return;
    }
    this.pose.position[0] += dxPx * this.gains.metersPerPixel;
    this.pose.position[1] -= dyPx * this.gains.metersPerPixel;
  }

  /** Wheel or key-driven Z motion; positive raises the virtual hand. */
  lift(ticks: number): void {
    this.pose.position[2] += ticks * this.gains.metersPerWheelTick;
  }

  /** Absolute orientation from the device-orientation sensor (degrees). */
  deviceOrientation(alpha: number, beta: number, gamma: number): void {
    if (this.mode !== "device_orientation") return;
    this.pose.orientation = quatFromDeviceOrientation(alpha, beta, gamma);
  }

  // -- device panel ------------------------------------------------------------

  /** Queue a gripper command for the next streamed waypoint. */
  requestGripper(g: Exclude<Gripper, "hold">): void {
    this.pendingGripper = g;
  }

  /** Momentary button bits (start/reset/e-stop) held down right now. */
  setButtons(bits: number): void {
    this.heldButtons = bits;
  }

  // -- clutch ----------------------------------------------------------------

  engage(nowMs: number): WaypointMsg {
    this.clutchHeld = true;
    this.lastSentMs = -Infinity;
    return this.emit(nowMs)!;
  }

  /** Release produces exactly one clutch=false message. */
  release(nowMs: number): WaypointMsg {
    this.clutchHeld = false;
    return this.waypoint(nowMs, false);
  }

  /** 60 Hz pacing while held; null when released or not yet due. The
   *  schedule advances by whole intervals so coarse polling still
   *  averages 60 Hz instead of drifting slower. */
  emit(nowMs: number): WaypointMsg | null {
    if (!this.clutchHeld) return null;
    if (nowMs - this.lastSentMs < STREAM_INTERVAL_MS) return null;
    const stale = this.lastSentMs === -Infinity || nowMs - this.lastSentMs > 2 * STREAM_INTERVAL_MS;
    this.lastSentMs = stale ? nowMs : this.lastSentMs + STREAM_INTERVAL_MS;
    return this.waypoint(nowMs, true);
  }

  private waypoint(nowMs: number, clutch: boolean): WaypointMsg {
    if (this.epochMs === null) this.epochMs = nowMs;
    const gripper = this.pendingGripper ?? "hold";
    this.pendingGripper = null;
    this.seq += 1;
    return makeWaypoint(
      this.seq,
      (nowMs - this.epochMs) * 1000,
      clonePose(this.pose),
      clutch,
      gripper,
      this.heldButtons,
    );
  }
}

/** View-model for the device panel (buttons usable only mid-session with
 *  the clutch held, since button bits ride on waypoints). */
export function devicePanel(state: {
  tester_phase: string;
  specimen_loaded: boolean;
  tester_progress: number;
  last_yield: number | null;
}, clutchHeld: boolean) {
  return {
    phaseLabel: state.tester_phase.toUpperCase(),
    progressPct: Math.round(state.tester_progress * 100),
    yieldLabel: state.last_yield === null ? "-" : `${state.last_yield.toFixed(1)} N`,
    canStart: clutchHeld && state.tester_phase === "idle" && state.specimen_loaded,
    canReset: clutchHeld && state.tester_phase !== "running",
  };
}

/** Predicted base-frame TCP direction for a screen drag, mirroring the
 *  server pipeline: operator delta -> mapping rotation -> composition in
 *  the engage-time TCP frame. Used by the drag-direction check. */
export function expectedTcpDirection(
  dragDxPx: number,
  dragDyPx: number,
  gains: InputGains,
  mappingRotation: Quat,
  engageTcpOrientation: Quat,
): Vec3 {
  const opDelta: Vec3 = [
    dragDxPx * gains.metersPerPixel,
    -dragDyPx * gains.metersPerPixel,
    0,
  ];
  const mapped = quatRotate(mappingRotation, opDelta);
  return quatRotate(engageTcpOrientation, mapped);
}
