// Live-stack console loop: needs `serve`, `sim` and `device-emu` running
// (see frontend/README.md), then:
//
//   RUN_E2E=1 npx vitest run test/e2e.test.ts
//
// Covers: connect, drag moves the TCP in the mapped direction, start/reset
// drive the tester through idle -> running -> complete -> idle, and no
// waypoint leaves while the clutch is released (server-side counter).

import { createConnection } from "node:net";
import { setTimeout as sleep } from "node:timers/promises";
import { describe, expect, it } from "vitest";
import WebSocket from "ws";

import { forwardKinematics } from "../src/fk.js";
import { DEFAULT_GAINS, expectedTcpDirection, OperatorInput } from "../src/input.js";
import { ConsoleClient } from "../src/net.js";
import type { SocketLike } from "../src/net.js";
import type { ModelInfo, StateMsg } from "../src/protocol.js";
import { vdot, vnorm, vsub } from "../src/pose.js";
import type { Quat, Vec3 } from "../src/pose.js";

const SERVER = process.env.E2E_SERVER ?? "http://127.0.0.1:6080";
const DEVICE_PORT = Number(process.env.E2E_DEVICE_PORT ?? 6050);
const WS_URL = SERVER.replace(/^http/, "ws") + "/ws";

function wsFactory(url: string): SocketLike {
  const ws = new WebSocket(url);
  const like: SocketLike = {
    send: (d) => ws.send(d),
    close: () => ws.close(),
    onopen: null,
    onmessage: null,
    onclose: null,
    onerror: null,
  };
  ws.on("open", () => like.onopen?.());
  ws.on("message", (d) => like.onmessage?.({ data: d.toString() }));
  ws.on("close", () => like.onclose?.());
  ws.on("error", () => like.onerror?.());
  return like;
}

function deviceCommand(cmd: string): Promise<string> {
  return new Promise((resolve, reject) => {
    const sock = createConnection(DEVICE_PORT, "127.0.0.1");
    sock.setTimeout(3000, () => reject(new Error("device timeout")));
    sock.on("error", reject);
    sock.on("connect", () => sock.write(cmd + "\n"));
    sock.on("data", (d) => {
      resolve(d.toString().trim());
      sock.end();
    });
  });
}

async function metrics(): Promise<Record<string, any>> {
  return (await fetch(`${SERVER}/metrics`)).json();
}

async function waitFor<T>(fn: () => T | null, timeoutMs: number, what: string): Promise<T> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    const v = fn();
    if (v !== null) return v;
    await sleep(50);
  }
  throw new Error(`timed out waiting for ${what}`);
}

describe.skipIf(!process.env.RUN_E2E)("console loop against the live stack", () => {
  it("drives the arm and the tester end to end", { timeout: 60_000 }, async () => {
    const model = (await (await fetch(`${SERVER}/model`)).json()) as ModelInfo;
    expect(model.dh).toHaveLength(6);

    const states: StateMsg[] = [];
    const client = new ConsoleClient(WS_URL, wsFactory, {
      onTelemetry: (m) => states.push(m),
    });
    client.connect();
    await waitFor(() => (client.state === "active" ? true : null), 5000, "session accept");
    const first = await waitFor(() => client.lastTelemetry, 5000, "first state");

    // ---- clutch + drag: TCP moves in the mapped direction --------------------
    const input = new OperatorInput();
    const engageFk = forwardKinematics(model, first.q_actual);
    const startTcp = engageFk.tcp.position;
    client.sendWaypoint(input.engage(performance.now()));
    const dragPx = 120;
    for (let i = 0; i < 60; i++) {
      input.drag(dragPx / 60, 0);
      const wp = input.emit(performance.now());
      if (wp) client.sendWaypoint(wp);
      await sleep(16);
    }
    // keep streaming until the arm settles
    const moved = await waitFor(() => {
      const wp = input.emit(performance.now());
      if (wp) client.sendWaypoint(wp);
      const latest = client.lastTelemetry!;
      const tcp = forwardKinematics(model, latest.q_actual).tcp.position;
      const delta = vsub(tcp, startTcp);
      return vnorm(delta) > 0.08 ? delta : null;
    }, 10_000, "TCP displacement");

    const expected = expectedTcpDirection(
      dragPx,
      0,
      DEFAULT_GAINS,
      [1, 0, 0, 0],
      engageFk.tcp.orientation as Quat,
    );
    const cos = vdot(moved, expected as Vec3) / (vnorm(moved) * vnorm(expected as Vec3));
    expect(cos).toBeGreaterThan(0.8);

    // ---- tester: idle -> running -> complete -> idle --------------------------
    expect((await deviceCommand("RESET"))).toBe("OK");
    expect(await deviceCommand("LOAD")).toBe("OK"); // staff preloads the specimen
    const keepStreaming = setInterval(() => {
      const wp = input.emit(performance.now());
      if (wp) client.sendWaypoint(wp);
    }, 10);
    await waitFor(
      () => (client.lastTelemetry?.specimen_loaded ? true : null),
      5000,
      "specimen_loaded",
    );
    input.setButtons(1); // START held on the stream
    await waitFor(
      () => (client.lastTelemetry?.tester_phase === "running" ? true : null),
      5000,
      "tester running",
    );
    input.setButtons(0);
    await waitFor(
      () => (client.lastTelemetry?.tester_phase === "complete" ? true : null),
      30_000,
      "tester complete",
    );
    expect(client.lastTelemetry?.last_yield).not.toBeNull();
    input.setButtons(2); // RESET
    await waitFor(
      () => (client.lastTelemetry?.tester_phase === "idle" ? true : null),
      5000,
      "tester reset",
    );
    input.setButtons(0);
    clearInterval(keepStreaming);

    // ---- release: nothing escapes while the clutch is off ---------------------
    client.sendWaypoint(input.release(performance.now()));
    const sentAfterRelease = client.sentWaypoints;
    input.drag(50, 50);
    for (let i = 0; i < 30; i++) {
      const wp = input.emit(performance.now());
      if (wp) client.sendWaypoint(wp);
      await sleep(10);
    }
    expect(client.sentWaypoints).toBe(sentAfterRelease);
    await sleep(300);
    const report = await metrics();
    expect(report.wp_unclutched_extra).toBe(0);
    expect(report.wp_total).toBeGreaterThan(50);

    client.disconnect();
  });
});
