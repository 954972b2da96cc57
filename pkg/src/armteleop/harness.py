"""In-process loopback of server + simulated arm + tester emulator on a
shared virtual clock.

This is the accelerated replay path: no sockets, no wall-clock, fully
deterministic under fixed seeds. The socket shells exercise the same
cores over real transports.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .device import SpecimenModel, TesterEmulator, parse_status
from .kinematics import forward
from .protocol import SessionHello, StateMsg, WaypointMsg, encode
from .scripting import ReplayScript
from .server import MetricsReport, ServerConfig, ServerCore
from .sim import SimConfig, SimCore


@dataclass
class ReplayResult:
    events: list[str]
    expected: list[str]
    cycle_log: list[tuple[int, float]]
    metrics: MetricsReport
    final_tcp: np.ndarray
    final_target: np.ndarray | None
    sim_trace: list[tuple[int, np.ndarray, int]]
    results_csv: str | None
    states: list[StateMsg] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.events == self.expected

    def event_diff(self) -> str:
        lines = ["expected vs fired task events:"]
        for i in range(max(len(self.expected), len(self.events))):
            want = self.expected[i] if i < len(self.expected) else "-"
            got = self.events[i] if i < len(self.events) else "-"
            mark = "ok" if want == got else "MISMATCH"
            lines.append(f"  {i:3d}  {want:<14} {got:<14} {mark}")
        return "\n".join(lines)


class LoopbackHarness:
    """serve + sim + device-emu composed in one process on a virtual clock."""

    def __init__(
        self,
        cfg: ServerConfig,
        sim_cfg: SimConfig | None = None,
        specimen: SpecimenModel | None = None,
        results_path: str | None = None,
        test_duration_s: float = 8.0,
    ):
        self.cfg = cfg
        tokens = itertools.count(1)
        self.core = ServerCore(
            cfg, token_source=lambda: next(tokens).to_bytes(16, "little")
        )
        self.sim = SimCore(
            cfg.model,
            sim_cfg
            or SimConfig(
                tick_rate=cfg.command_hz,
                seed=cfg.seed,
                initial_q_deg=list(np.rad2deg(cfg.home_q)),
            ),
        )
        self.device = TesterEmulator(
            specimen or SpecimenModel(seed=cfg.seed),
            duration_s=test_duration_s,
            results_path=results_path,
        )
        self._results_path = results_path
        self.tick_us = self.sim.tick_us
        self.now_us = 0

    def _dispatch(self, eff, states_sink) -> None:
        for line in eff.device_lines:
            reply = self.device.handle_line(line, self.now_us)
            if line == "STATUS":
                self.core.on_device_status(parse_status(reply), self.now_us)
        for cmd in eff.cmds:
            self.sim.on_datagram(encode(cmd), self.now_us)
        if states_sink is not None:
            states_sink.extend(eff.states)

    def run_script(
        self,
        script: ReplayScript,
        settle_s: float = 6.0,
        collect_sim_trace: bool = False,
        collect_states: bool = False,
    ) -> ReplayResult:
        core, sim, device = self.core, self.sim, self.device
        sim.trace_enabled = collect_sim_trace
        states: list[StateMsg] | None = [] if collect_states else None

        event, reply = core.handshake(SessionHello(), self.now_us)
        assert event.name == "ACCEPTED_NEW", f"handshake failed: {reply}"

        rows = list(script.rows)
        idx = 0
        seq = itertools.count(1)
        end_us = script.duration_us + int(settle_s * 1e6)
        final_target = rows[-1].pose if rows else None

        while self.now_us < end_us:
            self.now_us += self.tick_us
            batch = []
            while idx < len(rows) and rows[idx].t_us <= self.now_us:
                batch.append(rows[idx])
                idx += 1
            for i, row in enumerate(batch):
                wp = WaypointMsg(
                    seq=next(seq),
                    send_time=row.t_us,
                    pose=row.pose,
                    clutch=row.clutch,
                    gripper=row.gripper,
                    buttons=row.buttons,
                )
                eff = core.on_waypoint(
                    wp, self.now_us, arrival_us=self.now_us, run_ik=(i == len(batch) - 1)
                )
                self._dispatch(eff, states)
            eff = core.tick(self.now_us)
            self._dispatch(eff, states)
            for fb in sim.step():
                core.on_feedback(fb, self.now_us)
            self.device.tick(self.now_us)

        results_text = None
        if self._results_path is not None:
            try:
                with open(self._results_path, "r", encoding="utf-8") as f:
                    results_text = f.read()
            except FileNotFoundError:
                results_text = ""

        rec = core.record
        return ReplayResult(
            events=[name for _, name in rec.events],
            expected=script.expected_events(),
            cycle_log=list(rec.cycle_log),
            metrics=core.metrics_report(),
            final_tcp=forward(self.cfg.model, sim.q_actual).position,
            final_target=None
            if final_target is None
            else forward(self.cfg.model, core.goal_q).position,
            sim_trace=list(sim.trace),
            results_csv=results_text,
            states=states or [],
        )
