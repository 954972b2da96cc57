import { describe, expect, it } from "vitest";

import { ConsoleClient } from "../src/net.js";
import type { SocketLike } from "../src/net.js";
import { makeWaypoint } from "../src/protocol.js";
import { identityPose } from "../src/pose.js";

class FakeSocket implements SocketLike {
  sent: string[] = [];
  closed = false;
  onopen: ((ev?: unknown) => void) | null = null;
  onmessage: ((ev: { data: unknown }) => void) | null = null;
  onclose: ((ev?: unknown) => void) | null = null;
  onerror: ((ev?: unknown) => void) | null = null;

  send(data: string): void {
    this.sent.push(data);
  }

  close(): void {
    this.closed = true;
    this.onclose?.();
  }

  open(): void {
    this.onopen?.();
  }

  push(obj: unknown): void {
    this.onmessage?.({ data: JSON.stringify(obj) });
  }
}

function makeClient() {
  const sockets: FakeSocket[] = [];
  const client = new ConsoleClient("ws://test/ws", () => {
    const s = new FakeSocket();
    sockets.push(s);
    return s;
  });
  return { client, sockets };
}

describe("session state machine", () => {
  it("hello then accept goes active", () => {
    const { client, sockets } = makeClient();
    client.connect();
    expect(client.state).toBe("handshaking");
    sockets[0].open();
    expect(JSON.parse(sockets[0].sent[0])).toEqual({ type: "hello", protocol_version: 1 });
    sockets[0].push({ type: "accept", token: "ab".repeat(16) });
    expect(client.state).toBe("active");
    expect(client.token).toBe("ab".repeat(16));
  });

  it("busy rejection is terminal until the user retries", () => {
    const { client, sockets } = makeClient();
    client.connect();
    sockets[0].open();
    sockets[0].push({ type: "reject", reason: "busy" });
    expect(client.state).toBe("busy");
    expect(sockets).toHaveLength(1); // no silent reconnect
    client.retryFresh();
    expect(sockets).toHaveLength(2);
    sockets[1].open();
    expect(JSON.parse(sockets[1].sent[0]).type).toBe("hello");
  });

  it("resumes with the stored token after a drop", () => {
    const { client, sockets } = makeClient();
    client.connect();
    sockets[0].open();
    sockets[0].push({ type: "accept", token: "11".repeat(16) });
    sockets[0].close(); // transport drop
    expect(client.state).toBe("disconnected");
    client.connect();
    sockets[1].open();
    const first = JSON.parse(sockets[1].sent[0]);
    expect(first.type).toBe("resume");
    expect(first.token).toBe("11".repeat(16));
  });

  it("expired resume clears the token", () => {
    const { client, sockets } = makeClient();
    client.token = "22".repeat(16);
    client.connect();
    sockets[0].open();
    sockets[0].push({ type: "reject", reason: "expired" });
    expect(client.state).toBe("rejected");
    expect(client.token).toBeNull();
  });

  it("waypoints are refused unless active", () => {
    const { client, sockets } = makeClient();
    const wp = makeWaypoint(1, 0, identityPose(), true);
    expect(client.sendWaypoint(wp)).toBe(false);
    client.connect();
    sockets[0].open();
    expect(client.sendWaypoint(wp)).toBe(false);
    sockets[0].push({ type: "accept", token: "cd".repeat(16) });
    expect(client.sendWaypoint(wp)).toBe(true);
    expect(client.sentWaypoints).toBe(1);
    expect(JSON.parse(sockets[0].sent.at(-1)!).type).toBe("waypoint");
  });

  it("telemetry snapshots are retained and forwarded", () => {
    const seen: string[] = [];
    const sockets: FakeSocket[] = [];
    const client = new ConsoleClient(
      "ws://test/ws",
      () => {
        const s = new FakeSocket();
        sockets.push(s);
        return s;
      },
      { onTelemetry: (m) => seen.push(m.task_step) },
    );
    client.connect();
    sockets[0].open();
    sockets[0].push({ type: "accept", token: "ef".repeat(16) });
    sockets[0].push({
      type: "state",
      arm_time: 1,
      q_actual: [0, 0, 0, 0, 0, 0],
      tcp: { position: [0, 0, 0], orientation: [1, 0, 0, 0] },
      clutch: false,
      clamped: false,
      lock_orientation: false,
      specimen_loaded: false,
      task_step: "pick",
      tester_phase: "idle",
      tester_progress: 0,
      cycle_count: 0,
      degraded_events: 0,
      warnings: 0,
      last_yield: null,
    });
    expect(seen).toEqual(["pick"]);
    expect(client.lastTelemetry?.task_step).toBe("pick");
  });

  it("junk frames are ignored", () => {
    const { client, sockets } = makeClient();
    client.connect();
    sockets[0].open();
    sockets[0].onmessage?.({ data: "not json{{" });
    sockets[0].push({ type: "mystery" });
    expect(client.state).toBe("handshaking");
  });
});
