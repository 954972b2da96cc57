"""Simulated arm endpoint: integrates joint targets under the velocity
cap, answers with feedback datagrams, and injects configurable network
impairments (delay, jitter, loss) for latency experiments.

The core runs on a fixed-step clock decoupled from wall time; the UDP
shell paces those steps in real time. A `legacy_rate` mode applies newly
arrived commands only at a slow polling boundary, reproducing the
order-of-magnitude latency contrast of low-rate supervisory control.
"""

from __future__ import annotations

import heapq
import socket
import threading
import time
from dataclasses import dataclass

import numpy as np

from .kinematics import ArmModel
from .motion import rate_limit
from .protocol import DecodeError, FeedbackMsg, MotionCmd, decode, encode

CMD_PORT = 6041
FEEDBACK_PORT = 6042
DEFAULT_TICK_RATE = 250.0


@dataclass
class SimConfig:
    tick_rate: float = DEFAULT_TICK_RATE
    delay_ms: float = 0.0
    jitter_ms: float = 0.0
    loss_pct: float = 0.0
    seed: int = 0
    legacy_rate: float | None = None  # commands polled at this rate instead of per tick
    initial_q_deg: list[float] | None = None

    def __post_init__(self):
        if self.tick_rate <= 0:
            raise ValueError("tick_rate must be positive")
        if not (0.0 <= self.loss_pct < 100.0):
            raise ValueError("loss_pct must be in [0, 100)")
        if self.delay_ms < 0 or self.jitter_ms < 0:
            raise ValueError("delay and jitter must be >= 0")
        if self.legacy_rate is not None and self.legacy_rate <= 0:
            raise ValueError("legacy_rate must be positive")


class Impairment:
    """Per-datagram delay +- uniform jitter and Bernoulli loss, seeded."""

    def __init__(self, delay_ms: float, jitter_ms: float, loss_pct: float, seed: int):
        self.delay_us = delay_ms * 1000.0
        self.jitter_us = jitter_ms * 1000.0
        self.loss = loss_pct / 100.0
        self._rng = np.random.default_rng(seed)

    def schedule(self, send_us: int) -> int | None:
        """Delivery time for a datagram sent at send_us, or None when dropped."""
        if self.loss > 0.0 and self._rng.random() < self.loss:
            return None
        jitter = self._rng.uniform(-self.jitter_us, self.jitter_us) if self.jitter_us > 0 else 0.0
        return send_us + max(0, int(round(self.delay_us + jitter)))

    def apply(self, events: list[tuple[int, object]]) -> list[tuple[int, object]]:
        """Batch form: impaired delivery schedule, sorted by delivery time."""
        out = []
        for send_us, item in events:
            due = self.schedule(send_us)
            if due is not None:
                out.append((due, item))
        out.sort(key=lambda e: e[0])
        return out


class SimCore:
    """Fixed-step kinematic arm simulation; the only mutator is step()."""

    def __init__(self, model: ArmModel, cfg: SimConfig):
        self.model = model
        self.cfg = cfg
        self.tick_us = int(round(1e6 / cfg.tick_rate))
        self.dt = self.tick_us / 1e6
        if cfg.initial_q_deg is not None:
            q0 = np.deg2rad(np.asarray(cfg.initial_q_deg, dtype=float))
        else:
            q0 = np.zeros(model.ndof)
        self.q_actual = model.clamp(q0)
        self.clock_us = 0
        self.last_cmd: MotionCmd | None = None  # target currently being tracked
        self.applied_seq = -1
        self.decode_errors = 0
        self._rx = Impairment(cfg.delay_ms, cfg.jitter_ms, cfg.loss_pct, cfg.seed)
        self._tx = Impairment(cfg.delay_ms, cfg.jitter_ms, cfg.loss_pct, cfg.seed + 1)
        self._inbox: list[tuple[int, int, MotionCmd]] = []  # (due_us, tiebreak, cmd)
        self._outbox: list[tuple[int, int, FeedbackMsg]] = []
        self._counter = 0
        self._pending: MotionCmd | None = None  # delivered but not yet applied (legacy mode)
        self._legacy_us = int(round(1e6 / cfg.legacy_rate)) if cfg.legacy_rate else None
        self._next_poll_us = 0
        self.trace: list[tuple[int, np.ndarray, int]] = []
        self.trace_enabled = False

    def on_datagram(self, data: bytes, now_us: int | None = None) -> None:
        """Feed one raw datagram; junk counts as a decode error and is dropped."""
        now = self.clock_us if now_us is None else now_us
        try:
            msg = decode(data)
        except DecodeError:
            self.decode_errors += 1
            return
        if not isinstance(msg, MotionCmd):
            self.decode_errors += 1
            return
        due = self._rx.schedule(now)
        if due is None:
            return
        self._counter += 1
        heapq.heappush(self._inbox, (max(due, now), self._counter, msg))

    def _deliver_due(self) -> None:
        while self._inbox and self._inbox[0][0] <= self.clock_us:
            _, _, cmd = heapq.heappop(self._inbox)
            # latest-wins: stale sequence numbers never regress the target
            if self._pending is None or cmd.seq > self._pending.seq:
                if cmd.seq > self.applied_seq:
                    self._pending = cmd

    def _apply_pending(self) -> None:
        if self._pending is None:
            return
        if self._legacy_us is not None and self.clock_us < self._next_poll_us:
            return
        if self._legacy_us is not None:
            self._next_poll_us = self.clock_us + self._legacy_us
        self.last_cmd = self._pending
        self.applied_seq = self._pending.seq
        self._pending = None

    def step(self) -> list[FeedbackMsg]:
        """Advance one fixed tick; returns feedback datagrams due for sending."""
        self.clock_us += self.tick_us
        self._deliver_due()
        self._apply_pending()
        if self.last_cmd is not None:
            self.q_actual = self.model.clamp(
                rate_limit(self.q_actual, self.last_cmd.q_target, self.dt, self.model.velocity_cap)
            )
        fb = FeedbackMsg(
            seq_echo=self.applied_seq if self.applied_seq >= 0 else 0,
            q_actual=self.q_actual.copy(),
            arm_time=self.clock_us,
        )
        due = self._tx.schedule(self.clock_us)
        out: list[FeedbackMsg] = []
        if due is not None:
            self._counter += 1
            heapq.heappush(self._outbox, (max(due, self.clock_us), self._counter, fb))
        while self._outbox and self._outbox[0][0] <= self.clock_us:
            out.append(heapq.heappop(self._outbox)[2])
        if self.trace_enabled:
            self.trace.append((self.clock_us, self.q_actual.copy(), self.applied_seq))
        return out

    def write_trace(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            n = self.model.ndof
            f.write("tick_us," + ",".join(f"q{i + 1}" for i in range(n)) + ",last_seq\n")
            for t, q, seq in self.trace:
                f.write(f"{t}," + ",".join(f"{v:.9f}" for v in q) + f",{seq}\n")


class SimUdpServer:
    """UDP shell: listens for motion commands, paces the core in real time,
    and returns feedback datagrams to the commander's address."""

    def __init__(
        self,
        model: ArmModel,
        cfg: SimConfig,
        listen: tuple[str, int] = ("127.0.0.1", CMD_PORT),
        feedback_port: int = FEEDBACK_PORT,
    ):
        self.core = SimCore(model, cfg)
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._sock.bind(listen)
        self._sock.settimeout(0.1)
        self.listen_addr = self._sock.getsockname()
        self._feedback_port = feedback_port
        self._peer_host: str | None = None
        self._threads: list[threading.Thread] = []

    def _rx_loop(self):
        while not self._stop.is_set():
            try:
                data, addr = self._sock.recvfrom(8192)
            except socket.timeout:
                continue
            except OSError:
                return
            with self._lock:
                self._peer_host = addr[0]
                self.core.on_datagram(data)

    def _tick_loop(self):
        period = self.core.tick_us / 1e6
        next_deadline = time.monotonic() + period
        while not self._stop.is_set():
            delay = next_deadline - time.monotonic()
            if delay > 0:
                time.sleep(delay)
            next_deadline += period
            with self._lock:
                feedback = self.core.step()
                peer = self._peer_host
            if peer is not None:
                for fb in feedback:
                    try:
                        self._sock.sendto(encode(fb), (peer, self._feedback_port))
                    except OSError:
                        pass

    def start(self):
        rx = threading.Thread(target=self._rx_loop, name="sim-rx", daemon=True)
        tk = threading.Thread(target=self._tick_loop, name="sim-tick", daemon=True)
        rx.start()
        tk.start()
        self._threads = [rx, tk]
        return self

    def stop(self):
        self._stop.set()
        for t in self._threads:
            t.join(timeout=2)
        self._sock.close()
