"""Socket shells around the server core.

One motion thread owns all kinematic state; network readers feed it
through a single inbox queue (waypoints, feedback datagrams, device
replies), which is the whole concurrency contract. State snapshots go
out by value to the operator stream and to web-socket subscribers.
"""

from __future__ import annotations

import queue
import socket
import threading
import time
from dataclasses import dataclass

from .device import DeviceLineClient, parse_status
from .protocol import (
    DecodeError,
    FeedbackMsg,
    HandshakeEvent,
    SessionHello,
    SessionResume,
    StateMsg,
    StreamDecoder,
    WaypointMsg,
    encode,
)
from .server import Effects, ServerConfig, ServerCore


class StateBus:
    """Fan-out of state snapshots to any number of subscribers."""

    def __init__(self):
        self._subs: list[queue.Queue] = []
        self._lock = threading.Lock()

    def subscribe(self, maxsize: int = 16) -> queue.Queue:
        q: queue.Queue = queue.Queue(maxsize=maxsize)
        with self._lock:
            self._subs.append(q)
        return q

    def unsubscribe(self, q: queue.Queue) -> None:
        with self._lock:
            if q in self._subs:
                self._subs.remove(q)

    def publish(self, item: StateMsg) -> None:
        with self._lock:
            subs = list(self._subs)
        for q in subs:
            try:
                q.put_nowait(item)
            except queue.Full:
                try:  # latest-wins for slow consumers
                    q.get_nowait()
                    q.put_nowait(item)
                except (queue.Empty, queue.Full):
                    pass


@dataclass
class _Event:
    kind: str  # wp | fb | dev
    payload: object
    arrival_us: int


class ServerShell:
    """Threads + sockets around a ServerCore."""

    def __init__(self, cfg: ServerConfig, core: ServerCore | None = None):
        self.cfg = cfg
        self.core = core or ServerCore(cfg)
        self.lock = threading.Lock()  # guards every core entry point
        self.inbox: queue.Queue[_Event] = queue.Queue()
        self.states = StateBus()
        self._epoch_ns = time.monotonic_ns()
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        self._operator_conn: socket.socket | None = None
        self._conn_lock = threading.Lock()
        self._device: DeviceLineClient | None = None
        self._device_lines: queue.Queue[str] = queue.Queue()
        self.device_connected = False

        self._listener = socket.create_server(("0.0.0.0", cfg.tcp_port))
        self._listener.settimeout(0.2)
        self.tcp_port = self._listener.getsockname()[1]

        self._udp = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._udp.bind(("0.0.0.0", cfg.feedback_port))
        self._udp.settimeout(0.2)
        self.feedback_port = self._udp.getsockname()[1]
        self._sim_addr = ("127.0.0.1", cfg.cmd_port)

    # -- time ----------------------------------------------------------------

    def now_us(self) -> int:
        return (time.monotonic_ns() - self._epoch_ns) // 1000

    def set_sim_addr(self, host: str, port: int) -> None:
        self._sim_addr = (host, port)

    # -- lifecycle -------------------------------------------------------------

    def start(self):
        for name, fn in (
            ("accept", self._accept_loop),
            ("feedback", self._feedback_loop),
            ("motion", self._motion_loop),
            ("device", self._device_loop),
        ):
            t = threading.Thread(target=fn, name=f"server-{name}", daemon=True)
            t.start()
            self._threads.append(t)
        return self

    def stop(self):
        self._stop.set()
        for t in self._threads:
            t.join(timeout=2)
        self._listener.close()
        self._udp.close()
        with self._conn_lock:
            if self._operator_conn is not None:
                self._operator_conn.close()
        if self._device is not None:
            self._device.close()

    # -- operator TCP -----------------------------------------------------------

    def _accept_loop(self):
        while not self._stop.is_set():
            try:
                conn, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            threading.Thread(
                target=self._serve_connection, args=(conn,), name="server-operator", daemon=True
            ).start()

    def _serve_connection(self, conn: socket.socket):
        conn.settimeout(0.5)
        decoder = StreamDecoder()
        accepted = False
        try:
            while not self._stop.is_set():
                try:
                    data = conn.recv(65536)
                except socket.timeout:
                    continue
                except OSError:
                    break
                if not data:
                    break
                try:
                    msgs = decoder.feed(data)
                except DecodeError:
                    break  # corrupt stream: drop the connection
                for msg in msgs:
                    if isinstance(msg, (SessionHello, SessionResume)):
                        with self.lock:
                            event, reply = self.core.handshake(msg, self.now_us())
                        try:
                            conn.sendall(encode(reply))
                        except OSError:
                            return
                        if event in (HandshakeEvent.ACCEPTED_NEW, HandshakeEvent.RESUMED):
                            accepted = True
                            with self._conn_lock:
                                self._operator_conn = conn
                        else:
                            return
                    elif isinstance(msg, WaypointMsg) and accepted:
                        self.inbox.put(_Event("wp", msg, self.now_us()))
        finally:
            with self._conn_lock:
                if self._operator_conn is conn:
                    self._operator_conn = None
                    with self.lock:
                        self.core.disconnect(self.now_us())
            conn.close()

    def _send_state(self, state: StateMsg) -> None:
        self.states.publish(state)
        with self._conn_lock:
            conn = self._operator_conn
        if conn is None:
            return
        try:
            conn.sendall(encode(state))
        except OSError:
            pass  # reader side will notice and disconnect

    # -- sim datagrams ---------------------------------------------------------

    def _feedback_loop(self):
        while not self._stop.is_set():
            try:
                data, _ = self._udp.recvfrom(8192)
            except socket.timeout:
                continue
            except OSError:
                return
            try:
                from .protocol import decode

                msg = decode(data)
            except DecodeError:
                continue
            if isinstance(msg, FeedbackMsg):
                self.inbox.put(_Event("fb", msg, self.now_us()))

    # -- device client -----------------------------------------------------------

    def _device_loop(self):
        backoff_until = 0.0
        while not self._stop.is_set():
            try:
                line = self._device_lines.get(timeout=0.1)
            except queue.Empty:
                continue
            if self._device is None and time.monotonic() >= backoff_until:
                try:
                    self._device = DeviceLineClient(self.cfg.device_host, self.cfg.device_port)
                    self.device_connected = True
                except OSError:
                    self._device = None
                    self.device_connected = False
                    backoff_until = time.monotonic() + 1.0
            if self._device is None:
                continue
            try:
                reply = self._device.command(line)
            except (OSError, ConnectionError):
                self._device.close()
                self._device = None
                self.device_connected = False
                continue
            if line == "STATUS":
                try:
                    status = parse_status(reply)
                except (KeyError, ValueError):
                    continue
                self.inbox.put(_Event("dev", status, self.now_us()))

    # -- motion loop -------------------------------------------------------------

    def _dispatch(self, eff: Effects) -> None:
        for cmd in eff.cmds:
            try:
                self._udp.sendto(encode(cmd), self._sim_addr)
            except OSError:
                pass
        for line in eff.device_lines:
            self._device_lines.put(line)
        for state in eff.states:
            self._send_state(state)

    def _motion_loop(self):
        period_s = self.core.cmd_period_us / 1e6
        next_tick = time.monotonic() + period_s
        while not self._stop.is_set():
            timeout = max(0.0, next_tick - time.monotonic())
            events: list[_Event] = []
            try:
                events.append(self.inbox.get(timeout=timeout))
            except queue.Empty:
                pass
            while True:
                try:
                    events.append(self.inbox.get_nowait())
                except queue.Empty:
                    break
            waypoints = [e for e in events if e.kind == "wp"]
            with self.lock:
                eff = Effects()
                for e in events:
                    if e.kind == "fb":
                        self.core.on_feedback(e.payload, self.now_us())
                    elif e.kind == "dev":
                        self.core.on_device_status(e.payload, self.now_us())
                for i, e in enumerate(waypoints):
                    eff.merge(
                        self.core.on_waypoint(
                            e.payload,
                            self.now_us(),
                            arrival_us=e.arrival_us,
                            run_ik=(i == len(waypoints) - 1),
                        )
                    )
                now = time.monotonic()
                if now >= next_tick - 1e-4:
                    eff.merge(self.core.tick(self.now_us()))
                    while next_tick <= now:
                        next_tick += period_s
            self._dispatch(eff)

    # -- introspection ------------------------------------------------------------

    def metrics_dict(self) -> dict:
        with self.lock:
            return self.core.metrics_report().to_dict()

    def model_dict(self) -> dict:
        with self.lock:
            return self.core.model_info()

    def handshake_json(self, msg, operator: str | None = None):
        with self.lock:
            return self.core.handshake(msg, self.now_us())

    def submit_waypoint(self, wp: WaypointMsg) -> None:
        self.inbox.put(_Event("wp", wp, self.now_us()))
