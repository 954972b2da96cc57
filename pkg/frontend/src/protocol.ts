// JSON mirror of the server's wire protocol (docs/protocol.md).
// Field names match the binary layout exactly.

import type { Pose, Quat, Vec3 } from "./pose.js";

export type Gripper = "hold" | "open" | "close";

export const BUTTON_START = 1;
export const BUTTON_RESET = 2;
export const BUTTON_ESTOP = 4;

export interface WaypointMsg {
  type: "waypoint";
  seq: number;
  send_time: number;
  pose: { position: number[]; orientation: number[] };
  clutch: boolean;
  gripper: Gripper;
  buttons: number;
}

export interface StateMsg {
  type: "state";
  arm_time: number;
  q_actual: number[];
  tcp: { position: number[]; orientation: number[] };
  clutch: boolean;
  clamped: boolean;
  lock_orientation: boolean;
  specimen_loaded: boolean;
  task_step: "connect" | "pick" | "place" | "test" | "return";
  tester_phase: "idle" | "running" | "complete" | "fault";
  tester_progress: number;
  cycle_count: number;
  degraded_events: number;
  warnings: number;
  last_yield: number | null;
}

export interface AcceptMsg {
  type: "accept";
  token: string;
}

export interface RejectMsg {
  type: "reject";
  reason: "busy" | "expired" | "invalid_token" | "version_mismatch";
}

export interface ErrorMsg {
  type: "error";
  message: string;
}

export type ServerMsg = StateMsg | AcceptMsg | RejectMsg | ErrorMsg;

export interface DhRow {
  a: number;
  alpha: number;
  d: number;
  theta_offset: number;
}

export interface FenceInfo {
  name: string;
  kind: "half_space" | "box";
  normal: number[] | null;
  offset: number;
  min: number[] | null;
  max: number[] | null;
  mode: "keep_in" | "keep_out";
  lock_orientation: boolean;
}

export interface ZoneInfo {
  name: string;
  min: number[];
  max: number[];
}

export interface ModelInfo {
  name: string;
  dh: DhRow[];
  limits: number[][];
  velocity_cap: number;
  tool_offset: { position: number[]; orientation: number[] };
  fences: FenceInfo[];
  zones: ZoneInfo[];
}

export function makeWaypoint(
  seq: number,
  sendTimeUs: number,
  pose: Pose,
  clutch: boolean,
  gripper: Gripper = "hold",
  buttons = 0,
): WaypointMsg {
  return {
    type: "waypoint",
    seq,
    send_time: Math.round(sendTimeUs),
    pose: { position: [...pose.position], orientation: [...pose.orientation] },
    clutch,
    gripper,
    buttons,
  };
}

export function helloMsg(version = 1): { type: "hello"; protocol_version: number } {
  return { type: "hello", protocol_version: version };
}

export function resumeMsg(token: string, version = 1) {
  return { type: "resume", protocol_version: version, token };
}

export function parseServerMsg(raw: unknown): ServerMsg | null {
  if (typeof raw !== "object" || raw === null) return null;
  const obj = raw as Record<string, unknown>;
  switch (obj.type) {
    case "state":
    case "accept":
    case "reject":
    case "error":
      return obj as unknown as ServerMsg;
    default:
      return null;
  }
}

export function poseFromWire(p: { position: number[]; orientation: number[] }): Pose {
  return {
    position: p.position.slice(0, 3) as Vec3,
    orientation: p.orientation.slice(0, 4) as Quat,
  };
}
