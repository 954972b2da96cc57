"""Host-side core: session management, the motion pipeline, the lab-task
state machine, and metrics.

The core is sans-IO: every entry point takes the current time in
microseconds and returns the datagrams/lines/snapshots to send. Socket
shells (`shell.py`) and the in-process harness (`harness.py`) drive the
same object, so replays in virtual time are deterministic.

Pipeline order is pinned: clutch -> frame map -> filter -> fences -> IK
-> selection -> rate limit, followed by an output gate that refuses to
emit any command whose TCP would leave the admissible region or whose
joints would leave their limits.
"""

from __future__ import annotations

import importlib.resources as resources
import json
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import config as cfgmod
from .config import ConfigError, Section, parse_bool
from .geometry import Pose
from .ik import IkRequest, SelectionPolicy, select_solution, solve_candidates
from .kinematics import ArmModel, JointState, forward, load_arm
from .motion import (
    BoxMode,
    ClutchState,
    Fence,
    FilterState,
    FrameMapping,
    apply_fences,
    clutch_target,
    filter_step,
    rate_limit,
    validate_fences,
)
from .protocol import (
    Button,
    FeedbackMsg,
    Gripper,
    HandshakeEvent,
    MotionCmd,
    SessionHello,
    SessionManager,
    SessionResume,
    StateMsg,
    TaskStep,
    TesterPhase,
    WaypointMsg,
)

DEG = math.pi / 180.0
FENCE_GATE_EPS = 1e-9


@dataclass
class Zone:
    """Named axis-aligned task region (reload table, tester mouth)."""

    name: str
    box_min: np.ndarray
    box_max: np.ndarray

    def __post_init__(self):
        self.box_min = np.asarray(self.box_min, dtype=float).reshape(3)
        self.box_max = np.asarray(self.box_max, dtype=float).reshape(3)
        if not np.all(self.box_min < self.box_max):
            raise ConfigError(f"zone {self.name!r}: min must be < max componentwise")

    def contains(self, p: np.ndarray) -> bool:
        return bool(np.all(p >= self.box_min) and np.all(p <= self.box_max))


@dataclass
class ServerConfig:
    arm_path: str
    model: ArmModel
    fences: list[Fence]
    zones: dict[str, Zone]
    mapping: FrameMapping
    alpha_pos: float = 0.3
    alpha_rot: float = 0.3
    pos_tol: float = 1e-4
    rot_tol: float = 1e-3
    budget_us: float = 1000.0
    ik_candidates: int = 1
    selection: SelectionPolicy = field(default_factory=SelectionPolicy)
    tcp_port: int = 6040
    cmd_port: int = 6041
    feedback_port: int = 6042
    device_host: str = "127.0.0.1"
    device_port: int = 6050
    http_port: int = 6080
    ingest_hz: float = 60.0
    command_hz: float = 250.0
    state_hz: float = 20.0
    device_poll_hz: float = 10.0
    session_timeout_s: float = 120.0
    operator: str = "operator"
    home_q: np.ndarray = field(default_factory=lambda: np.zeros(6))
    seed: int = 0


def resolve_arm_path(ref: str) -> str:
    """Accept either a filesystem path or the name of a packaged model."""
    if os.path.exists(ref):
        return ref
    packaged = resources.files("armteleop") / "configs" / f"{ref}.cfg"
    if packaged.is_file():
        return str(packaged)
    raise ConfigError(f"arm model {ref!r}: no such file or packaged config")


def _parse_fence(sec: Section) -> Fence:
    name = sec.get("name", "fence")
    kind = sec.get("kind", "box")
    margin = float(sec.get("margin", "0"))
    lock = parse_bool(sec.get("lock_orientation", "false"), f"fence {name}")
    if kind == "half_space":
        return Fence(
            name=name,
            normal=sec.floats("normal", 3),
            offset=float(sec.require("offset")),
            margin=margin,
            lock_orientation=lock,
        )
    if kind == "box":
        mode_raw = sec.get("mode", "keep_in")
        try:
            mode = BoxMode(mode_raw)
        except ValueError:
            raise ConfigError(f"fence {name!r}: unknown mode {mode_raw!r}") from None
        return Fence(
            name=name,
            box_min=sec.floats("min", 3),
            box_max=sec.floats("max", 3),
            mode=mode,
            margin=margin,
            lock_orientation=lock,
        )
    raise ConfigError(f"fence {name!r}: unknown kind {kind!r}")


def load_server_config(path: str) -> ServerConfig:
    sections = cfgmod.parse_file(path)
    srv = cfgmod.first(sections, "server")
    arm_path = resolve_arm_path(srv.require("arm"))
    model = load_arm(arm_path)

    home_deg = srv.floats("home_deg", model.ndof) if srv.get("home_deg") else [0.0] * model.ndof
    home_q = model.clamp(np.deg2rad(home_deg))

    mapping = FrameMapping()
    msec = cfgmod.maybe(sections, "mapping")
    if msec is not None:
        mapping = FrameMapping(
            rotation=np.array(msec.floats("rotation_quat", 4)) if msec.get("rotation_quat") else np.array([1.0, 0, 0, 0]),
            translation_scale=float(msec.get("translation_scale", "1.0")),
        )

    alpha_pos = alpha_rot = 0.3
    fsec = cfgmod.maybe(sections, "filter")
    if fsec is not None:
        alpha_pos = float(fsec.get("alpha_pos", "0.3"))
        alpha_rot = float(fsec.get("alpha_rot", "0.3"))

    pos_tol, rot_tol, budget_us, candidates = 1e-4, 1e-3, 1000.0, 1
    selection = SelectionPolicy()
    iksec = cfgmod.maybe(sections, "ik")
    if iksec is not None:
        pos_tol = float(iksec.get("pos_tol", "1e-4"))
        rot_tol = float(iksec.get("rot_tol", "1e-3"))
        budget_us = float(iksec.get("budget_us", "1000"))
        candidates = int(iksec.get("candidates", "1"))
        selection = SelectionPolicy(
            manipulability_min=float(iksec.get("manipulability_min", "1e-3")),
            limit_margin=float(iksec.get("limit_margin_deg", "2.0")) * DEG,
        )

    fences = [_parse_fence(s) for s in sections if s.name == "fence"]
    validate_fences(fences)
    home_tcp = forward(model, home_q)
    for f in fences:
        if f.violation(home_tcp.position) > 1e-9:
            raise ConfigError(f"home posture violates fence {f.name!r}")

    zones: dict[str, Zone] = {}
    for s in sections:
        if s.name == "zone":
            z = Zone(s.require("name"), s.floats("min", 3), s.floats("max", 3))
            zones[z.name] = z

    return ServerConfig(
        arm_path=arm_path,
        model=model,
        fences=fences,
        zones=zones,
        mapping=mapping,
        alpha_pos=alpha_pos,
        alpha_rot=alpha_rot,
        pos_tol=pos_tol,
        rot_tol=rot_tol,
        budget_us=budget_us,
        ik_candidates=candidates,
        selection=selection,
        tcp_port=int(srv.get("tcp_port", "6040")),
        cmd_port=int(srv.get("cmd_port", "6041")),
        feedback_port=int(srv.get("feedback_port", "6042")),
        device_host=srv.get("device_host", "127.0.0.1"),
        device_port=int(srv.get("device_port", "6050")),
        http_port=int(srv.get("http_port", "6080")),
        ingest_hz=float(srv.get("ingest_hz", "60")),
        command_hz=float(srv.get("command_hz", "250")),
        state_hz=float(srv.get("state_hz", "20")),
        device_poll_hz=float(srv.get("device_poll_hz", "10")),
        session_timeout_s=float(srv.get("session_timeout_s", "120")),
        operator=srv.get("operator", "operator"),
        home_q=home_q,
        seed=int(srv.get("seed", "0")),
    )


@dataclass
class SessionRecord:
    operator_id: str
    task_step: TaskStep = TaskStep.CONNECT
    cycle_log: list[tuple[int, float]] = field(default_factory=list)
    events: list[tuple[int, str]] = field(default_factory=list)
    latency: dict[str, list[float]] = field(
        default_factory=lambda: {"ingest": [], "ik": [], "emit": [], "execute": [], "path": []}
    )
    degraded_events: int = 0
    warnings: int = 0
    fence_holds: int = 0
    wp_total: int = 0
    wp_unclutched_extra: int = 0
    cycle_start_us: int | None = None


class MetricsReport:
    """Percentile summary of per-stage latencies plus task counters."""

    STAGES = ("ingest", "ik", "emit", "execute", "path")

    def __init__(self, record: SessionRecord | None, wp_drops: int = 0):
        self.stages: dict[str, dict[str, float]] = {}
        rec = record
        for stage in self.STAGES:
            samples = rec.latency[stage] if rec else []
            if samples:
                arr = np.asarray(samples)
                self.stages[stage] = {
                    "count": int(arr.size),
                    "p50_us": float(np.percentile(arr, 50)),
                    "p95_us": float(np.percentile(arr, 95)),
                    "p99_us": float(np.percentile(arr, 99)),
                }
            else:
                self.stages[stage] = {"count": 0, "p50_us": 0.0, "p95_us": 0.0, "p99_us": 0.0}
        self.cycles = list(rec.cycle_log) if rec else []
        self.degraded_events = rec.degraded_events if rec else 0
        self.warnings = rec.warnings if rec else 0
        self.fence_holds = rec.fence_holds if rec else 0
        self.wp_total = rec.wp_total if rec else 0
        self.wp_unclutched_extra = rec.wp_unclutched_extra if rec else 0
        self.wp_drops = wp_drops

    def to_dict(self) -> dict:
        return {
            "stages": self.stages,
            "cycles": [{"iteration": i, "seconds": s} for i, s in self.cycles],
            "degraded_events": self.degraded_events,
            "warnings": self.warnings,
            "fence_holds": self.fence_holds,
            "wp_total": self.wp_total,
            "wp_drops": self.wp_drops,
            "wp_unclutched_extra": self.wp_unclutched_extra,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def write_csv(self, stages_path: str, cycles_path: str) -> None:
        with open(stages_path, "w", encoding="utf-8") as f:
            f.write("stage,count,p50_us,p95_us,p99_us\n")
            for stage, row in self.stages.items():
                f.write(f"{stage},{row['count']},{row['p50_us']:.3f},{row['p95_us']:.3f},{row['p99_us']:.3f}\n")
        with open(cycles_path, "w", encoding="utf-8") as f:
            f.write("iteration,seconds\n")
            for i, s in self.cycles:
                f.write(f"{i},{s:.6f}\n")


@dataclass
class Effects:
    """Outputs of one core entry point, for the shell to dispatch."""

    cmds: list[MotionCmd] = field(default_factory=list)
    device_lines: list[str] = field(default_factory=list)
    replies: list = field(default_factory=list)
    states: list[StateMsg] = field(default_factory=list)

    def merge(self, other: "Effects") -> "Effects":
        self.cmds.extend(other.cmds)
        self.device_lines.extend(other.device_lines)
        self.replies.extend(other.replies)
        self.states.extend(other.states)
        return self


class ServerCore:
    """Single-threaded control core; callers serialize access."""

    def __init__(self, cfg: ServerConfig, token_source=None):
        self.cfg = cfg
        self.model = cfg.model
        self.sessions = SessionManager(
            timeout_us=int(cfg.session_timeout_s * 1e6), token_source=token_source
        )
        self.record: SessionRecord | None = None
        self.clutch = ClutchState()
        self.filter = FilterState(alpha_pos=cfg.alpha_pos, alpha_rot=cfg.alpha_rot)
        self.q_cmd = cfg.home_q.copy()
        self.goal_q = cfg.home_q.copy()
        self.q_actual = cfg.home_q.copy()
        self.arm_time_us = 0
        self.seq_out = 0
        self.gripper = Gripper.OPEN
        self.buttons = Button.NONE
        self.clamped = False
        self.lock_orientation = False
        self.tester_phase = TesterPhase.IDLE
        self.tester_progress = 0.0
        self.specimen_loaded = False
        self.last_yield = float("nan")
        self.cmd_period_us = int(round(1e6 / cfg.command_hz))
        self._last_emit_us: int | None = None
        self._next_cmd_us = 0
        self._next_state_us = 0
        self._next_poll_us = 0
        self._pending_exec: dict[int, tuple[int, int | None]] = {}  # seq -> (sent_us, wp_arrival_us)
        self._gate_q = None
        self.record_rows: list[WaypointMsg] = []
        self.record_times: list[int] = []
        self.recording = False
        self._held_since_gate = False

    # -- session ------------------------------------------------------------

    def handshake(self, msg: SessionHello | SessionResume, now_us: int) -> tuple[HandshakeEvent, object]:
        event, reply = self.sessions.handshake(msg, now_us, operator_id=self.cfg.operator)
        if event is HandshakeEvent.ACCEPTED_NEW:
            self.record = SessionRecord(operator_id=self.cfg.operator)
            self._reset_motion_state()
        elif event is HandshakeEvent.RESUMED:
            # reattach safety: no motion before a fresh clutch engage
            self._release_clutch()
        return event, reply

    def disconnect(self, now_us: int) -> None:
        self.sessions.disconnect(now_us)
        self._release_clutch()

    def _reset_motion_state(self) -> None:
        self.clutch.release()
        self.filter.reset()
        self.goal_q = self.q_cmd.copy()
        self.gripper = Gripper.OPEN
        self.buttons = Button.NONE

    def _release_clutch(self) -> None:
        self.clutch.release()
        self.filter.reset()
        self.goal_q = self.q_cmd.copy()

    # -- helpers --------------------------------------------------------------

    def _commanded_pose(self) -> Pose:
        return forward(self.model, self.q_cmd)

    def _actual_pose(self) -> Pose:
        return forward(self.model, self.q_actual)

    def _warn(self) -> None:
        if self.record:
            self.record.warnings += 1

    def _task_event(self, event: str, now_us: int) -> None:
        """Advance the lab-task machine; out-of-order events warn and are ignored."""
        rec = self.record
        if rec is None:
            return
        step = rec.task_step
        if event == "engaged" and step is TaskStep.CONNECT:
            rec.task_step = TaskStep.PICK
            rec.cycle_start_us = now_us
        elif event == "pick" and step is TaskStep.PICK:
            rec.task_step = TaskStep.PLACE
            rec.events.append((now_us, "pick"))
        elif event == "place" and step is TaskStep.PLACE:
            rec.task_step = TaskStep.TEST
            rec.events.append((now_us, "place"))
        elif event == "test_complete" and step is TaskStep.TEST:
            rec.task_step = TaskStep.RETURN
            rec.events.append((now_us, "test_complete"))
        elif event == "returned" and step is TaskStep.RETURN:
            iteration = len(rec.cycle_log) + 1
            if rec.cycle_start_us is not None:
                rec.cycle_log.append((iteration, (now_us - rec.cycle_start_us) / 1e6))
            rec.cycle_start_us = now_us
            rec.task_step = TaskStep.PICK
            rec.events.append((now_us, "returned"))
        elif event == "engaged":
            pass  # re-engage mid-task is normal, not a warning
        else:
            self._warn()

    # -- inbound ---------------------------------------------------------------

    def on_waypoint(self, wp: WaypointMsg, now_us: int, arrival_us: int | None = None, run_ik: bool = True) -> Effects:
        eff = Effects()
        session = self.sessions.session
        if session is None or not session.connected:
            return eff
        if not session.accept_seq(wp.seq):
            return eff
        self.sessions.touch(now_us)
        rec = self.record
        rec.wp_total += 1
        if self.recording:
            self.record_rows.append(wp)
            self.record_times.append(now_us)

        ingest_us = max(0, now_us - arrival_us) if arrival_us is not None else 0
        rec.latency["ingest"].append(float(ingest_us))

        # device/e-stop buttons act on press edges
        pressed = Button(wp.buttons & ~self.buttons)
        self.buttons = wp.buttons
        if pressed & Button.START_TEST:
            eff.device_lines.append("START")
        if pressed & Button.RESET_TESTER:
            eff.device_lines.append("RESET")
        if pressed & Button.ESTOP:
            self._release_clutch()
            return eff

        # clutch edges
        if wp.clutch and not self.clutch.engaged:
            self.clutch.engage(wp.pose, self._commanded_pose())
            self.filter.reset()
            self.goal_q = self.q_cmd.copy()
            self._task_event("engaged", now_us)
        elif not wp.clutch:
            if self.clutch.engaged:
                self._release_clutch()
            else:
                rec.wp_unclutched_extra += 1

        # gripper edges judged at the arm's current position
        if wp.gripper is not Gripper.HOLD and wp.gripper is not self.gripper:
            tcp = self._actual_pose().position
            if wp.gripper is Gripper.CLOSE:
                zone = self.cfg.zones.get("reload")
                if zone is not None and zone.contains(tcp):
                    self._task_event("pick", now_us)
                else:
                    self._warn()
            else:  # OPEN after CLOSE
                zone = self.cfg.zones.get("tester")
                if zone is not None and zone.contains(tcp) and self.gripper is Gripper.CLOSE:
                    self._task_event("place", now_us)
                    eff.device_lines.append("LOAD")
                else:
                    self._warn()
            self.gripper = wp.gripper

        if self.clutch.engaged and run_ik:
            self._update_goal(wp, now_us, arrival_us if arrival_us is not None else now_us, eff)
        return eff

    def _update_goal(self, wp: WaypointMsg, now_us: int, arrival_us: int, eff: Effects) -> None:
        rec = self.record
        target = clutch_target(self.clutch, self.cfg.mapping, wp.pose)
        target = filter_step(self.filter, target)
        fenced, clamped, lock = apply_fences(self.cfg.fences, target, self._commanded_pose())
        self.clamped = clamped
        self.lock_orientation = lock

        t0 = time.monotonic_ns()
        req = IkRequest(
            target=fenced,
            seed=JointState(self.q_cmd),
            pos_tol=self.cfg.pos_tol,
            rot_tol=self.cfg.rot_tol,
            budget_us=self.cfg.budget_us,
            rng_seed=(self.cfg.seed * 0x9E3779B1 + wp.seq) & 0xFFFFFFFF,
        )
        candidates = solve_candidates(self.model, req, attempts=self.cfg.ik_candidates)
        ik_us = (time.monotonic_ns() - t0) / 1e3
        rec.latency["ik"].append(ik_us)

        if not candidates:
            rec.degraded_events += 1  # hold last goal; never extrapolate
            return
        chosen = select_solution(candidates, JointState(self.q_cmd), self.model, policy=self.cfg.selection)
        if chosen.degraded:
            rec.degraded_events += 1
        self.goal_q = chosen.q.q.copy()
        self._emit_cmd(now_us, eff, wp_arrival_us=arrival_us)

    # -- outbound -----------------------------------------------------------

    def _emit_cmd(self, now_us: int, eff: Effects, wp_arrival_us: int | None = None) -> None:
        if not self.clutch.engaged:
            return
        if self._last_emit_us is not None and now_us <= self._last_emit_us:
            return
        if np.array_equal(self.goal_q, self.q_cmd):
            return  # already commanded there; the arm holds without traffic
        dt = (now_us - self._last_emit_us) / 1e6 if self._last_emit_us is not None else self.cmd_period_us / 1e6
        q_next = self.model.clamp(rate_limit(self.q_cmd, self.goal_q, dt, self.model.velocity_cap))

        # output gate: never emit a command whose TCP leaves the raw
        # admissible region (the margin absorbs IK and tracking error)
        tcp = forward(self.model, q_next).position
        for f in self.cfg.fences:
            if f.violation(tcp, margin=0.0) > FENCE_GATE_EPS:
                if self.record and not self._held_since_gate:
                    self.record.fence_holds += 1
                    self._held_since_gate = True
                return
        self._held_since_gate = False
        self.q_cmd = q_next
        self.seq_out += 1
        cmd = MotionCmd(seq=self.seq_out, send_time=now_us, q_target=q_next.copy())
        self._pending_exec[self.seq_out] = (now_us, wp_arrival_us)
        if len(self._pending_exec) > 4096:  # feedback loss: forget the oldest
            self._pending_exec.pop(min(self._pending_exec))
        self._last_emit_us = now_us
        eff.cmds.append(cmd)
        if self.record:
            start = wp_arrival_us if wp_arrival_us is not None else now_us
            self.record.latency["emit"].append(float(max(0, now_us - start)))

    def on_feedback(self, fb: FeedbackMsg, now_us: int) -> None:
        self.q_actual = fb.q_actual.copy()
        self.arm_time_us = fb.arm_time
        done = [seq for seq in self._pending_exec if seq <= fb.seq_echo]
        for seq in done:
            sent_us, wp_arrival = self._pending_exec.pop(seq)
            if self.record:
                self.record.latency["execute"].append(float(now_us - sent_us))
                if wp_arrival is not None:
                    self.record.latency["path"].append(float(now_us - wp_arrival))

    def on_device_status(self, status: dict, now_us: int) -> None:
        prev = self.tester_phase
        self.tester_phase = status["phase"]
        self.tester_progress = status["progress"]
        self.specimen_loaded = status["loaded"]
        if status["yield"] is not None:
            self.last_yield = status["yield"]
        if prev is TesterPhase.RUNNING and self.tester_phase is TesterPhase.COMPLETE:
            self._task_event("test_complete", now_us)

    def tick(self, now_us: int) -> Effects:
        """Pacing: command stream, return-zone detection, device polls, state snapshots."""
        eff = Effects()
        if now_us >= self._next_cmd_us:
            self._next_cmd_us = now_us + self.cmd_period_us
            self._emit_cmd(now_us, eff)
        rec = self.record
        if rec is not None and rec.task_step is TaskStep.RETURN:
            zone = self.cfg.zones.get("reload")
            if zone is not None and zone.contains(self._actual_pose().position):
                self._task_event("returned", now_us)
        if now_us >= self._next_poll_us:
            self._next_poll_us = now_us + int(1e6 / self.cfg.device_poll_hz)
            eff.device_lines.append("STATUS")
        if now_us >= self._next_state_us:
            self._next_state_us = now_us + int(1e6 / self.cfg.state_hz)
            eff.states.append(self.state_snapshot())
        return eff

    def state_snapshot(self) -> StateMsg:
        rec = self.record
        return StateMsg(
            arm_time=self.arm_time_us,
            q_actual=self.q_actual.copy(),
            tcp=self._actual_pose(),
            clutch=self.clutch.engaged,
            clamped=self.clamped,
            lock_orientation=self.lock_orientation,
            specimen_loaded=self.specimen_loaded,
            task_step=rec.task_step if rec else TaskStep.CONNECT,
            tester_phase=self.tester_phase,
            tester_progress=self.tester_progress,
            cycle_count=len(rec.cycle_log) if rec else 0,
            degraded_events=rec.degraded_events if rec else 0,
            warnings=rec.warnings if rec else 0,
            last_yield=self.last_yield,
        )

    def metrics_report(self) -> MetricsReport:
        drops = self.sessions.session.stale_drops if self.sessions.session else 0
        return MetricsReport(self.record, wp_drops=drops)

    def model_info(self) -> dict:
        """DH table, limits and fences for the console's /model endpoint."""
        m = self.model
        return {
            "name": m.name,
            "dh": [
                {"a": float(r[0]), "alpha": float(r[1]), "d": float(r[2]), "theta_offset": float(r[3])}
                for r in m.dh
            ],
            "limits": [[float(lo), float(hi)] for lo, hi in m.limits],
            "velocity_cap": float(m.velocity_cap),
            "tool_offset": {
                "position": [float(v) for v in m.tool_offset.position],
                "orientation": [float(v) for v in m.tool_offset.orientation],
            },
            "fences": [
                {
                    "name": f.name,
                    "kind": "half_space" if f.normal is not None else "box",
                    "normal": None if f.normal is None else [float(v) for v in f.normal],
                    "offset": f.offset,
                    "min": None if f.box_min is None else [float(v) for v in f.box_min],
                    "max": None if f.box_max is None else [float(v) for v in f.box_max],
                    "mode": f.mode.value,
                    "lock_orientation": f.lock_orientation,
                }
                for f in self.cfg.fences
            ],
            "zones": [
                {"name": z.name, "min": [float(v) for v in z.box_min], "max": [float(v) for v in z.box_max]}
                for z in self.cfg.zones.values()
            ],
        }

    def write_trace(self, path: str) -> None:
        """Record/replay format documented in docs/traces.md."""
        from .scripting import write_waypoint_trace

        write_waypoint_trace(path, self.record_times, self.record_rows)
