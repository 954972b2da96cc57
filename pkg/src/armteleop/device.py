"""Tensile-tester emulator and its line-protocol endpoint.

The emulator is a closed state machine (idle/running/complete/fault)
driven by an explicit clock, so replays in virtual time are bit-exact.
Commands arrive as newline-terminated ASCII over a local stream socket;
`LOAD` is the simulated load-cell event the teleoperation server fires
when a specimen is placed.
"""

from __future__ import annotations

import socket
import socketserver
import threading
import time
from dataclasses import dataclass

import numpy as np

from .protocol import TesterPhase

DEFAULT_PORT = 6050
DEFAULT_TEST_DURATION_S = 8.0


@dataclass
class SpecimenModel:
    """Synthetic linear-elastic specimen with a noisy yield point."""

    stiffness: float = 250.0  # N/mm, shapes the load ramp
    yield_load: float = 500.0  # N
    noise_sigma: float = 0.0  # N
    seed: int = 0

    def __post_init__(self):
        if not (self.stiffness > 0 and self.yield_load > 0):
            raise ValueError("stiffness and yield_load must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


@dataclass
class TestResult:
    yield_load: float
    peak_load: float


class TesterEmulator:
    """State machine core; all transitions take the current time in us."""

    def __init__(
        self,
        specimen: SpecimenModel | None = None,
        duration_s: float = DEFAULT_TEST_DURATION_S,
        results_path: str | None = None,
    ):
        self.specimen = specimen or SpecimenModel()
        self.duration_us = int(duration_s * 1e6)
        self.results_path = results_path
        self.phase = TesterPhase.IDLE
        self.specimen_loaded = False
        self.result: TestResult | None = None
        self.progress = 0.0
        self.fault_reason: str | None = None
        self.iteration = 0
        self._rng = np.random.default_rng(self.specimen.seed)
        self._started_us: int | None = None

    # -- transitions --------------------------------------------------------

    def load_specimen(self, now_us: int) -> bool:
        """Simulated load-cell event; only an idle tester accepts a specimen."""
        if self.phase is not TesterPhase.IDLE:
            return False
        self.specimen_loaded = True
        return True

    def start_test(self, now_us: int) -> str:
        if self.phase is TesterPhase.RUNNING:
            return "ERR BUSY"
        if self.phase is TesterPhase.COMPLETE:
            return "ERR NOTREADY"
        if self.phase is TesterPhase.FAULT:
            return "ERR FAULT"
        if not self.specimen_loaded:
            self.phase = TesterPhase.FAULT
            self.fault_reason = "no_specimen"
            return "ERR NOSPECIMEN"
        self.phase = TesterPhase.RUNNING
        self.progress = 0.0
        self._started_us = now_us
        return "OK"

    def reset(self, now_us: int) -> str:
        """Back to idle from any phase; ejects the specimen and clears results."""
        self.phase = TesterPhase.IDLE
        self.specimen_loaded = False
        self.result = None
        self.progress = 0.0
        self.fault_reason = None
        self._started_us = None
        return "OK"

    def tick(self, now_us: int) -> None:
        if self.phase is not TesterPhase.RUNNING:
            return
        self.progress = min(1.0, (now_us - self._started_us) / self.duration_us)
        if self.progress >= 1.0:
            noisy_yield = self.specimen.yield_load + self.specimen.noise_sigma * float(
                self._rng.standard_normal()
            )
            self.result = TestResult(yield_load=noisy_yield, peak_load=1.1 * noisy_yield)
            self.phase = TesterPhase.COMPLETE
            self.iteration += 1
            self._append_result(now_us)

    def _append_result(self, now_us: int) -> None:
        if self.results_path is None:
            return
        header = "iteration,yield_load,peak_load,timestamp_us\n"
        try:
            with open(self.results_path, "x", encoding="utf-8") as f:
                f.write(header)
        except FileExistsError:
            pass
        with open(self.results_path, "a", encoding="utf-8") as f:
            f.write(
                f"{self.iteration},{self.result.yield_load:.6f},{self.result.peak_load:.6f},{now_us}\n"
            )

    # -- line protocol -------------------------------------------------------

    def status_line(self) -> str:
        yield_txt = f"{self.result.yield_load:.2f}" if self.result is not None else "NA"
        return (
            f"PHASE={self.phase.name} LOADED={int(self.specimen_loaded)} "
            f"PROGRESS={self.progress:.2f} YIELD={yield_txt}"
        )

    def handle_line(self, line: str, now_us: int) -> str:
        self.tick(now_us)
        cmd = line.strip()
        if cmd == "STATUS":
            return self.status_line()
        if cmd == "START":
            return self.start_test(now_us)
        if cmd == "RESET":
            return self.reset(now_us)
        if cmd == "LOAD":
            if self.phase is TesterPhase.RUNNING:
                return "ERR BUSY"
            if self.phase is TesterPhase.COMPLETE:
                return "ERR NOTREADY"
            if self.phase is TesterPhase.FAULT:
                return "ERR FAULT"
            self.load_specimen(now_us)
            return "OK"
        return "ERR UNKNOWN"


def _now_us() -> int:
    return time.monotonic_ns() // 1000


class DeviceServer:
    """Stream-socket shell around a TesterEmulator (one command at a time)."""

    def __init__(self, emulator: TesterEmulator, host: str = "127.0.0.1", port: int = DEFAULT_PORT):
        self.emulator = emulator
        self._lock = threading.Lock()
        outer = self

        class Handler(socketserver.StreamRequestHandler):
            def handle(self):
                while True:
                    line = self.rfile.readline()
                    if not line:
                        return
                    with outer._lock:
                        reply = outer.emulator.handle_line(line.decode("ascii", "replace"), _now_us())
                    self.wfile.write((reply + "\n").encode("ascii"))

        class Server(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

        self._server = Server((host, port), Handler)
        self.port = self._server.server_address[1]
        self._ticker_stop = threading.Event()
        self._threads: list[threading.Thread] = []

    def _ticker(self):
        while not self._ticker_stop.wait(0.05):
            with self._lock:
                self.emulator.tick(_now_us())

    def start(self):
        t1 = threading.Thread(target=self._server.serve_forever, name="device-accept", daemon=True)
        t2 = threading.Thread(target=self._ticker, name="device-ticker", daemon=True)
        t1.start()
        t2.start()
        self._threads = [t1, t2]
        return self

    def stop(self):
        self._ticker_stop.set()
        self._server.shutdown()
        self._server.server_close()
        for t in self._threads:
            t.join(timeout=2)


class DeviceLineClient:
    """Blocking line-protocol client used by the server shell and tests."""

    def __init__(self, host: str = "127.0.0.1", port: int = DEFAULT_PORT, timeout: float = 2.0):
        self._sock = socket.create_connection((host, port), timeout=timeout)
        self._file = self._sock.makefile("rwb")

    def command(self, cmd: str) -> str:
        self._file.write((cmd + "\n").encode("ascii"))
        self._file.flush()
        reply = self._file.readline()
        if not reply:
            raise ConnectionError("device connection closed")
        return reply.decode("ascii").rstrip("\n")

    def close(self):
        try:
            self._file.close()
        finally:
            self._sock.close()


def parse_status(line: str) -> dict:
    """STATUS reply -> {'phase', 'loaded', 'progress', 'yield'} (yield None when NA)."""
    fields = dict(item.split("=", 1) for item in line.split())
    return {
        "phase": TesterPhase[fields["PHASE"]],
        "loaded": fields["LOADED"] == "1",
        "progress": float(fields["PROGRESS"]),
        "yield": None if fields["YIELD"] == "NA" else float(fields["YIELD"]),
    }
