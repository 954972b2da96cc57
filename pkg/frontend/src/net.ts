// Web-socket client with the session state machine. Busy rejections land
// in a terminal "busy" state that the UI must surface; reconnect/resume
// only happens on an explicit user action (no silent retry loops).

import { helloMsg, parseServerMsg, resumeMsg } from "./protocol.js";
import type { ServerMsg, StateMsg, WaypointMsg } from "./protocol.js";

export type ConnectionState =
  | "disconnected"
  | "handshaking"
  | "active"
  | "busy"
  | "rejected";

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export interface ClientEvents {
  onStateChange?: (s: ConnectionState) => void;
  onTelemetry?: (msg: StateMsg) => void;
  onError?: (message: string) => void;
}

export class ConsoleClient {
  state: ConnectionState = "disconnected";
  token: string | null = null;
  lastTelemetry: StateMsg | null = null;
  sentWaypoints = 0;

  private sock: SocketLike | null = null;

  constructor(
    private readonly url: string,
    private readonly factory: SocketFactory,
    private readonly events: ClientEvents = {},
  ) {}

  private setState(s: ConnectionState) {
    this.state = s;
    this.events.onStateChange?.(s);
  }

  connect(): void {
    if (this.state === "handshaking" || this.state === "active") return;
    this.setState("handshaking");
    const sock = this.factory(this.url);
    this.sock = sock;
    sock.onopen = () => {
      sock.send(JSON.stringify(this.token ? resumeMsg(this.token) : helloMsg()));
    };
    sock.onmessage = (ev) => {
      let parsed: ServerMsg | null = null;
      try {
        parsed = parseServerMsg(JSON.parse(String(ev.data)));
      } catch {
        return;
      }
      if (parsed) this.handle(parsed);
    };
    sock.onclose = () => {
      if (this.state !== "busy" && this.state !== "rejected") {
        this.setState("disconnected");
      }
      this.sock = null;
    };
    sock.onerror = () => {
      this.events.onError?.("socket error");
    };
  }

  private handle(msg: ServerMsg): void {
    switch (msg.type) {
      case "accept":
        this.token = msg.token;
        this.setState("active");
        break;
      case "reject":
        if (msg.reason === "busy") {
          this.setState("busy");
        } else {
          // expired or invalid token: a fresh hello is the only way back
          this.token = null;
          this.setState("rejected");
        }
        this.sock?.close();
        break;
      case "state":
        this.lastTelemetry = msg;
        this.events.onTelemetry?.(msg);
        break;
      case "error":
        this.events.onError?.(msg.message);
        break;
    }
  }

  /** Drop the session token and start over (explicit user action). */
  retryFresh(): void {
    this.token = null;
    this.setState("disconnected");
    this.connect();
  }

  sendWaypoint(wp: WaypointMsg): boolean {
    if (this.state !== "active" || this.sock === null) return false;
    this.sock.send(JSON.stringify(wp));
    this.sentWaypoints += 1;
    return true;
  }

  disconnect(): void {
    this.sock?.close();
    this.sock = null;
    this.setState("disconnected");
  }
}
