"""Serial-arm model: standard DH chain, forward kinematics, geometric
Jacobian, and the singularity measure used by solution selection.

Models are loaded from config files (degrees/meters on disk, radians
internally) and are immutable after load. The hot math lives in the
kernel backend (compiled or pure, see `armteleop.core`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import config as cfg
from . import core
from .geometry import Pose

DEG = math.pi / 180.0


@dataclass
class ArmModel:
    """DH-parameterized arm. `dh` rows are [a(m), alpha(rad), d(m), theta_offset(rad)]."""

    name: str
    dh: np.ndarray
    limits: np.ndarray  # (N,2) rad
    velocity_cap: float  # rad/s
    tool_offset: Pose = field(default_factory=Pose)

    def __post_init__(self):
        self.dh = np.ascontiguousarray(self.dh, dtype=float)
        self.limits = np.ascontiguousarray(self.limits, dtype=float)
        if self.dh.ndim != 2 or self.dh.shape[1] != 4 or self.dh.shape[0] < 1:
            raise ValueError("dh must be (N,4) with N >= 1")
        if self.limits.shape != (self.dh.shape[0], 2):
            raise ValueError("limits must be (N,2)")
        if not np.all(self.limits[:, 0] < self.limits[:, 1]):
            raise ValueError("each joint needs min < max")
        if not self.velocity_cap > 0.0:
            raise ValueError("velocity_cap must be positive")
        # packed tool pose for the kernels
        self._tool7 = np.ascontiguousarray(
            np.concatenate([self.tool_offset.position, self.tool_offset.orientation])
        )
        self._qmin = np.ascontiguousarray(self.limits[:, 0])
        self._qmax = np.ascontiguousarray(self.limits[:, 1])
        for arr in (self.dh, self.limits, self._tool7, self._qmin, self._qmax):
            arr.setflags(write=False)

    @property
    def ndof(self) -> int:
        return self.dh.shape[0]

    @property
    def reach(self) -> float:
        """Radius of a sphere guaranteed to contain every reachable TCP point."""
        link = float(np.sum(np.abs(self.dh[:, 0])) + np.sum(np.abs(self.dh[:, 2])))
        return link + float(np.linalg.norm(self.tool_offset.position))

    def clamp(self, q: np.ndarray) -> np.ndarray:
        return np.clip(q, self._qmin, self._qmax)

    def in_limits(self, q: np.ndarray, margin: float = 0.0) -> bool:
        return bool(np.all(q >= self._qmin + margin) and np.all(q <= self._qmax - margin))

    def random_q(self, rng: np.random.Generator, margin: float = 0.0) -> np.ndarray:
        return rng.uniform(self._qmin + margin, self._qmax - margin)


@dataclass
class JointState:
    """Joint vector plus a monotonic timestamp in nanoseconds."""

    q: np.ndarray
    timestamp: int = 0

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).reshape(-1)


def _as_q(model: ArmModel, q) -> np.ndarray:
    vec = q.q if isinstance(q, JointState) else np.asarray(q, dtype=float)
    vec = np.ascontiguousarray(vec.reshape(-1))
    if vec.shape[0] != model.ndof:
        raise ValueError(f"expected {model.ndof} joint angles, got {vec.shape[0]}")
    return vec


def forward(model: ArmModel, q) -> Pose:
    """Base->TCP pose via the standard DH chain composed with the tool offset."""
    pose7 = core.fk_pose(model.dh, _as_q(model, q), model._tool7)
    return Pose(pose7[:3], pose7[3:])


def jacobian(model: ArmModel, q) -> np.ndarray:
    """6xN geometric Jacobian at the TCP in the base frame (rows: linear m, angular rad)."""
    return core.jacobian(model.dh, _as_q(model, q), model._tool7)


def fk_origins_axes(model: ArmModel, q):
    """Per-joint frame origins and z axes plus the TCP pose (kernel layout)."""
    return core.fk_origins_axes(model.dh, _as_q(model, q), model._tool7)


def manipulability(model: ArmModel, q) -> float:
    """Distance from singularity: smallest singular value of the Jacobian."""
    J = jacobian(model, q)
    return float(np.linalg.svd(J, compute_uv=False)[-1])


def dh_frames(model: ArmModel, q) -> list[np.ndarray]:
    """All partial products T_0^k for k = 0..N as 4x4 matrices (no tool)."""
    vec = _as_q(model, q)
    T = np.eye(4)
    frames = [T.copy()]
    for i in range(model.ndof):
        a, alpha, d, off = model.dh[i]
        th = vec[i] + off
        ct, st = math.cos(th), math.sin(th)
        ca, sa = math.cos(alpha), math.sin(alpha)
        A = np.array(
            [
                [ct, -st * ca, st * sa, a * ct],
                [st, ct * ca, -ct * sa, a * st],
                [0.0, sa, ca, d],
                [0.0, 0.0, 0.0, 1.0],
            ]
        )
        T = T @ A
        frames.append(T.copy())
    return frames


def load_arm(path: str) -> ArmModel:
    """Read an arm model config (angles in degrees, lengths in meters)."""
    sections = cfg.parse_file(path)
    sec = cfg.first(sections, "arm")
    name = sec.get("name", "arm")

    rows = []
    for raw in sec.get_all("joint"):
        vals = [float(t) for t in raw.split()]
        if len(vals) != 4:
            raise cfg.ConfigError(f"[arm] joint row needs 4 values (a alpha_deg d theta_offset_deg): {raw!r}")
        a, alpha_deg, d, off_deg = vals
        rows.append([a, alpha_deg * DEG, d, off_deg * DEG])
    if not rows:
        raise cfg.ConfigError("[arm] needs at least one joint row")

    lims = []
    for raw in sec.get_all("limit"):
        vals = [float(t) for t in raw.split()]
        if len(vals) != 2:
            raise cfg.ConfigError(f"[arm] limit row needs 2 values (min_deg max_deg): {raw!r}")
        lims.append([vals[0] * DEG, vals[1] * DEG])
    if len(lims) != len(rows):
        raise cfg.ConfigError(f"[arm] {len(rows)} joint rows but {len(lims)} limit rows")

    cap_dps = float(sec.get("velocity_cap", "100.0"))
    tool_pos = [float(t) for t in sec.get("tool_position", "0 0 0.15").split()]
    if len(tool_pos) != 3:
        raise cfg.ConfigError("[arm] tool_position needs 3 values")
    tool_quat_raw = sec.get("tool_quat", "1 0 0 0")
    tool_quat = [float(t) for t in tool_quat_raw.split()]
    if len(tool_quat) != 4:
        raise cfg.ConfigError("[arm] tool_quat needs 4 values (w x y z)")

    try:
        return ArmModel(
            name=name,
            dh=np.array(rows),
            limits=np.array(lims),
            velocity_cap=cap_dps * DEG,
            tool_offset=Pose(np.array(tool_pos), np.array(tool_quat)),
        )
    except ValueError as e:
        raise cfg.ConfigError(f"[arm] {e}") from None
