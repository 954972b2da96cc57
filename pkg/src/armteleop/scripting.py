"""Replay scripts: recorded or generated operator waypoint streams plus
the task events a replay is expected to fire.

CSV rows (see docs/traces.md):

    wp,<t_us>,<x>,<y>,<z>,<qw>,<qx>,<qy>,<qz>,<clutch>,<gripper>,<buttons>
    expect,<t_us>,<event>

Timestamps are microseconds from replay start and must be non-decreasing.
Events: pick, place, test_complete, returned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import ConfigError
from .geometry import Pose, quat_conj, quat_rotate
from .kinematics import forward
from .protocol import Button, Gripper, WaypointMsg
from .server import ServerConfig

_GRIPPER = {"hold": Gripper.HOLD, "open": Gripper.OPEN, "close": Gripper.CLOSE}
_GRIPPER_NAME = {v: k for k, v in _GRIPPER.items()}


@dataclass
class ScriptRow:
    t_us: int
    pose: Pose
    clutch: bool
    gripper: Gripper = Gripper.HOLD
    buttons: Button = Button.NONE


@dataclass
class ReplayScript:
    rows: list[ScriptRow] = field(default_factory=list)
    expects: list[tuple[int, str]] = field(default_factory=list)

    def __post_init__(self):
        ts = [r.t_us for r in self.rows]
        if any(b < a for a, b in zip(ts, ts[1:])):
            raise ConfigError("script timestamps must be non-decreasing")

    @property
    def duration_us(self) -> int:
        last_wp = self.rows[-1].t_us if self.rows else 0
        last_ev = self.expects[-1][0] if self.expects else 0
        return max(last_wp, last_ev)

    def expected_events(self) -> list[str]:
        return [name for _, name in sorted(self.expects, key=lambda e: e[0])]


def parse_script(path: str) -> ReplayScript:
    rows: list[ScriptRow] = []
    expects: list[tuple[int, str]] = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split(",")
            kind = parts[0]
            try:
                if kind == "wp":
                    if len(parts) != 12:
                        raise ValueError(f"wp row needs 12 fields, got {len(parts)}")
                    t = int(parts[1])
                    vals = [float(v) for v in parts[2:9]]
                    clutch = parts[9].strip() == "1"
                    gripper = _GRIPPER[parts[10].strip()]
                    buttons = Button(int(parts[11]))
                    rows.append(
                        ScriptRow(t, Pose(np.array(vals[:3]), np.array(vals[3:])), clutch, gripper, buttons)
                    )
                elif kind == "expect":
                    if len(parts) != 3:
                        raise ValueError("expect row needs 3 fields")
                    expects.append((int(parts[1]), parts[2].strip()))
                else:
                    raise ValueError(f"unknown row kind {kind!r}")
            except (ValueError, KeyError) as e:
                raise ConfigError(f"{path}:{lineno}: {e}") from None
    return ReplayScript(rows=rows, expects=expects)


def write_script(path: str, script: ReplayScript) -> None:
    events = sorted(script.expects, key=lambda e: e[0])
    with open(path, "w", encoding="utf-8") as f:
        f.write("# replay script; see docs/traces.md\n")
        ei = 0
        for row in script.rows:
            while ei < len(events) and events[ei][0] <= row.t_us:
                f.write(f"expect,{events[ei][0]},{events[ei][1]}\n")
                ei += 1
            p, q = row.pose.position, row.pose.orientation
            f.write(
                f"wp,{row.t_us},"
                + ",".join(f"{v:.9f}" for v in (*p, *q))
                + f",{int(row.clutch)},{_GRIPPER_NAME[row.gripper]},{int(row.buttons)}\n"
            )
        for t, name in events[ei:]:
            f.write(f"expect,{t},{name}\n")


def write_waypoint_trace(path: str, times_us: list[int], waypoints: list[WaypointMsg]) -> None:
    """Server-side recording in the same wp-row format (no expect rows)."""
    script = ReplayScript(
        rows=[
            ScriptRow(t, wp.pose, wp.clutch, wp.gripper, wp.buttons)
            for t, wp in zip(times_us, waypoints)
        ]
    )
    write_script(path, script)


def _smooth(u: float) -> float:
    return 0.5 * (1.0 - math.cos(math.pi * min(max(u, 0.0), 1.0)))


class _Timeline:
    """Piecewise-linear-in-smoothstep TCP schedule for the virtual operator."""

    def __init__(self, start: np.ndarray):
        self.knots: list[tuple[float, np.ndarray]] = [(0.0, np.asarray(start, dtype=float))]

    def move_to(self, t_end: float, target) -> None:
        t_last, _ = self.knots[-1]
        if t_end < t_last:
            raise ValueError("timeline must move forward")
        self.knots.append((t_end, np.asarray(target, dtype=float)))

    def dwell(self, t_end: float) -> None:
        self.move_to(t_end, self.knots[-1][1])

    def at(self, t: float) -> np.ndarray:
        knots = self.knots
        if t <= knots[0][0]:
            return knots[0][1]
        for (t0, p0), (t1, p1) in zip(knots, knots[1:]):
            if t <= t1:
                if t1 == t0:
                    return p1
                return p0 + (p1 - p0) * _smooth((t - t0) / (t1 - t0))
        return knots[-1][1]


def generate_cycle_script(
    cfg: ServerConfig,
    cycles: int = 10,
    period_s: float = 68.0,
    rate_hz: float = 20.0,
) -> ReplayScript:
    """Scripted stand-in for a human operator running the lab task.

    Each cycle: engage, pick at the reload zone, carry to the tester,
    press against the guide fence, place, start the test, rest while it
    runs, reset, carry back, release. The pacing is tuned so that cycle
    times land inside the 60-80 s band.
    """
    if "reload" not in cfg.zones or "tester" not in cfg.zones:
        raise ConfigError("cycle script needs 'reload' and 'tester' zones in the server config")
    home_tcp = forward(cfg.model, cfg.home_q).position
    reload_c = 0.5 * (cfg.zones["reload"].box_min + cfg.zones["reload"].box_max)
    tester_c = 0.5 * (cfg.zones["tester"].box_min + cfg.zones["tester"].box_max)
    if not cfg.zones["reload"].contains(home_tcp):
        raise ConfigError("home posture TCP must start inside the reload zone")
    press = tester_c + np.array([0.0, -0.08, 0.0])  # beyond the tester guide fence

    # segment ends within one cycle (seconds)
    T_CLOSE = 1.0
    T_GO_END = 14.0
    T_SETTLE = 16.0
    T_PRESS = 19.0
    T_BACK = 21.0
    T_OPEN = 21.0
    T_START = 22.0
    T_RELEASE1 = 23.0
    T_ENGAGE2 = 36.0
    T_RESET = 36.5
    T_RECORD_END = 53.0
    T_HOME_END = 67.0
    T_RELEASE2 = 67.5

    tl = _Timeline(home_tcp)
    rows: list[ScriptRow] = []
    expects: list[tuple[int, str]] = []
    dt = 1.0 / rate_hz

    # invert the published pipeline formula target = origin_robot o (M d M^-1):
    # the delta is applied in the engage-time TCP frame, so the operator pose
    # for a desired base-frame TCP point pre-rotates by both inverses
    home_quat = forward(cfg.model, cfg.home_q).orientation
    undo = quat_conj(cfg.mapping.rotation), quat_conj(home_quat)
    scale = cfg.mapping.translation_scale

    def op_pose(tcp: np.ndarray) -> Pose:
        base_delta = quat_rotate(undo[1], tcp - home_tcp)
        return Pose(quat_rotate(undo[0], base_delta) / scale)

    for c in range(cycles):
        base = c * period_s
        tl.dwell(base + T_CLOSE)
        tl.move_to(base + T_GO_END, tester_c)
        tl.dwell(base + T_SETTLE)
        tl.move_to(base + T_PRESS, press)
        tl.move_to(base + T_BACK, tester_c)
        tl.dwell(base + T_RECORD_END)
        tl.move_to(base + T_HOME_END, home_tcp)
        tl.dwell(base + period_s)

        expects.append((int((base + T_CLOSE) * 1e6), "pick"))
        expects.append((int((base + T_OPEN) * 1e6), "place"))
        expects.append((int((base + T_START + 9.0) * 1e6), "test_complete"))
        expects.append((int((base + T_HOME_END) * 1e6), "returned"))

        def emit(t_s: float, clutch=True, gripper=Gripper.HOLD, buttons=Button.NONE):
            rows.append(ScriptRow(int(round(t_s * 1e6)), op_pose(tl.at(t_s)), clutch, gripper, buttons))

        t = base
        # engaged phase 1: pick, carry, press, place, start
        emit(t)  # engage edge
        while t < base + T_RELEASE1 - 1e-9:
            t = round(t + dt, 9)
            gripper = Gripper.HOLD
            buttons = Button.NONE
            if abs(t - (base + T_CLOSE)) < dt / 2:
                gripper = Gripper.CLOSE
            if abs(t - (base + T_OPEN)) < dt / 2:
                gripper = Gripper.OPEN
            if base + T_START <= t < base + T_START + 0.5:
                buttons = Button.START_TEST
            emit(t, gripper=gripper, buttons=buttons)
        emit(base + T_RELEASE1, clutch=False)

        # engaged phase 2: reset, record results pause, carry home
        t = base + T_ENGAGE2
        emit(t)
        while t < base + T_RELEASE2 - 1e-9:
            t = round(t + dt, 9)
            buttons = Button.RESET_TESTER if base + T_RESET <= t < base + T_RESET + 0.5 else Button.NONE
            emit(t, buttons=buttons)
        emit(base + T_RELEASE2, clutch=False)

    rows.sort(key=lambda r: r.t_us)
    return ReplayScript(rows=rows, expects=expects)
