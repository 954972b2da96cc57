// DOM wiring for the operator console. All control logic lives in the
// DOM-free modules (input.ts, net.ts, fk.ts, render.ts); this file only
// routes browser events into them and paints the results.

import { devicePanel, OperatorInput } from "./input.js";
import { ConsoleClient } from "./net.js";
import type { ConnectionState } from "./net.js";
import { BUTTON_RESET, BUTTON_START } from "./protocol.js";
import type { ModelInfo, StateMsg } from "./protocol.js";
import { defaultView, drawScene, project } from "./render.js";
import type { Vec3 } from "./pose.js";
import { forwardKinematics } from "./fk.js";

const params = new URLSearchParams(location.search);
const serverBase = params.get("server") ?? `${location.protocol}//${location.hostname}:6080`;
const wsUrl = serverBase.replace(/^http/, "ws") + "/ws";

const $ = (id: string) => document.getElementById(id)!;
const canvas = $("arm-view") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;

let model: ModelInfo | null = null;
let clampFlashUntil = 0;
const input = new OperatorInput();

import type { SocketLike } from "./net.js";

// the browser WebSocket satisfies SocketLike at runtime; its handler
// signatures are just narrower (Event vs unknown)
const wsFactory = (url: string): SocketLike => new WebSocket(url) as unknown as SocketLike;

const client = new ConsoleClient(wsUrl, wsFactory, {
  onStateChange: renderConnection,
  onTelemetry: onTelemetry,
  onError: (m) => setText("status-error", m),
});

function setText(id: string, text: string) {
  $(id).textContent = text;
}

function renderConnection(state: ConnectionState) {
  setText("conn-state", state.toUpperCase());
  $("conn-state").className = `badge ${state}`;
  ($("busy-panel") as HTMLElement).style.display = state === "busy" ? "block" : "none";
  if (state !== "active" && input.clutchHeld) {
    // connection dropped mid-hold: clear local clutch; re-engage required
    input.clutchHeld = false;
    renderClutch();
  }
}

function renderClutch() {
  setText("clutch-state", input.clutchHeld ? "ENGAGED" : "released");
  $("clutch-state").className = input.clutchHeld ? "badge active" : "badge";
}

function onTelemetry(msg: StateMsg) {
  if (msg.clamped) clampFlashUntil = performance.now() + 300;
  setText("task-step", msg.task_step);
  setText("cycle-count", String(msg.cycle_count));
  setText("warnings", String(msg.warnings));
  setText("degraded", String(msg.degraded_events));
  const panel = devicePanel(msg, input.clutchHeld);
  setText("tester-phase", panel.phaseLabel);
  setText("tester-progress", `${panel.progressPct}%`);
  setText("tester-yield", panel.yieldLabel);
  ($("btn-start") as HTMLButtonElement).disabled = !panel.canStart;
  ($("btn-reset") as HTMLButtonElement).disabled = !panel.canReset;
}

// -- pose input ---------------------------------------------------------------

let dragging = false;
let lastX = 0;
let lastY = 0;

canvas.addEventListener("pointerdown", (ev) => {
  dragging = true;
  lastX = ev.clientX;
  lastY = ev.clientY;
  canvas.setPointerCapture(ev.pointerId);
});
canvas.addEventListener("pointermove", (ev) => {
  if (!dragging) return;
  input.drag(ev.clientX - lastX, ev.clientY - lastY, ev.shiftKey);
  lastX = ev.clientX;
  lastY = ev.clientY;
});
canvas.addEventListener("pointerup", () => (dragging = false));
canvas.addEventListener("wheel", (ev) => {
  ev.preventDefault();
  input.lift(-Math.sign(ev.deltaY));
});

window.addEventListener("keydown", (ev) => {
  if (ev.repeat) return;
  if (ev.code === "Space" && client.state === "active" && !input.clutchHeld) {
    ev.preventDefault();
    client.sendWaypoint(input.engage(performance.now()));
    renderClutch();
  } else if (ev.code === "PageUp" || ev.key === "e") {
    input.lift(1);
  } else if (ev.code === "PageDown" || ev.key === "q") {
    input.lift(-1);
  }
});
window.addEventListener("keyup", (ev) => {
  if (ev.code === "Space" && input.clutchHeld) {
    client.sendWaypoint(input.release(performance.now()));
    renderClutch();
  }
});

// device-orientation input mode (mobile)
($("mode-orientation") as HTMLInputElement).addEventListener("change", async (ev) => {
  const on = (ev.target as HTMLInputElement).checked;
  input.mode = on ? "device_orientation" : "pointer";
  const DOE = DeviceOrientationEvent as unknown as { requestPermission?: () => Promise<string> };
  if (on && typeof DOE.requestPermission === "function") {
    try {
      await DOE.requestPermission();
    } catch {
      input.mode = "pointer";
      (ev.target as HTMLInputElement).checked = false;
    }
  }
});
window.addEventListener("deviceorientation", (ev) => {
  if (ev.alpha !== null && ev.beta !== null && ev.gamma !== null) {
    input.deviceOrientation(ev.alpha, ev.beta, ev.gamma);
  }
});

// -- device panel + gripper ------------------------------------------------------

function holdButton(id: string, bit: number) {
  const el = $(id) as HTMLButtonElement;
  el.addEventListener("pointerdown", () => input.setButtons(bit));
  const clear = () => input.setButtons(0);
  el.addEventListener("pointerup", clear);
  el.addEventListener("pointerleave", clear);
}
holdButton("btn-start", BUTTON_START);
holdButton("btn-reset", BUTTON_RESET);

$("btn-grip-close").addEventListener("click", () => input.requestGripper("close"));
$("btn-grip-open").addEventListener("click", () => input.requestGripper("open"));
$("btn-connect").addEventListener("click", () => client.connect());
$("btn-retry").addEventListener("click", () => client.retryFresh());

// -- stream + render loops ---------------------------------------------------------

setInterval(() => {
  const wp = input.emit(performance.now());
  if (wp) client.sendWaypoint(wp);
}, 8);

function frame() {
  if (model) {
    const lookAt = forwardKinematics(model, new Array(model.dh.length).fill(0)).origins[0];
    const center: Vec3 = client.lastTelemetry
      ? (client.lastTelemetry.tcp.position.slice(0, 3) as Vec3)
      : lookAt;
    const view = defaultView(canvas.width, canvas.height, [center[0], center[1], center[2] - 0.1]);
    drawScene(ctx, view, model, client.lastTelemetry, {
      clampFlash: performance.now() < clampFlashUntil,
      lockIcon: client.lastTelemetry?.lock_orientation ?? false,
    });
    if (client.lastTelemetry) {
      const fk = forwardKinematics(model, client.lastTelemetry.q_actual);
      const px = project(view, fk.tcp.position);
      setText("tcp-readout", `TCP ${fk.tcp.position.map((v) => v.toFixed(3)).join(", ")} m @ ${px.map((v) => v.toFixed(0)).join(",")} px`);
    }
  }
  requestAnimationFrame(frame);
}

async function boot() {
  setText("server-url", serverBase);
  try {
    model = (await (await fetch(`${serverBase}/model`)).json()) as ModelInfo;
    setText("model-name", model.name);
  } catch {
    setText("status-error", `cannot fetch ${serverBase}/model`);
  }
  client.connect();
  renderClutch();
  requestAnimationFrame(frame);
}

void boot();
