"""Operator-pose to robot-target pipeline pieces: clutch remapping,
low-pass filtering, virtual fences, and joint rate limiting.

Pipeline order is fixed: clutch -> frame map -> filter -> fences -> IK ->
selection -> rate limit. The server owns that composition; everything
here is a pure step on value types.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .config import ConfigError
from .geometry import Pose, compose, delta, quat_conj, quat_mul, quat_normalize, quat_rotate, quat_slerp

# a deficit this small counts as satisfied, so projections are exact fixed points
_EDGE_EPS = 1e-12
_MAX_PASSES = 10


@dataclass
class ClutchState:
    """Origins latched at the engage transition; immutable until release."""

    engaged: bool = False
    origin_operator: Pose | None = None
    origin_robot: Pose | None = None

    def engage(self, operator_pose: Pose, robot_pose: Pose) -> None:
        self.engaged = True
        self.origin_operator = operator_pose.copy()
        self.origin_robot = robot_pose.copy()

    def release(self) -> None:
        self.engaged = False
        self.origin_operator = None
        self.origin_robot = None


@dataclass
class FrameMapping:
    """Operator frame -> robot base frame: rotation plus translation gain."""

    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation_scale: float = 1.0

    def __post_init__(self):
        self.rotation = quat_normalize(np.asarray(self.rotation, dtype=float))
        if not (np.isfinite(self.translation_scale) and self.translation_scale > 0):
            raise ValueError("translation_scale must be finite and positive")


def clutch_target(clutch: ClutchState, mapping: FrameMapping, operator_pose: Pose) -> Pose:
    """Robot target for the operator's current pose relative to the clutch origin.

    The operator-frame delta is rotated into the robot base frame (position
    by the mapping rotation, orientation by conjugation) and scaled, then
    rebased onto the robot-side origin.
    """
    if not clutch.engaged or clutch.origin_operator is None or clutch.origin_robot is None:
        raise RuntimeError("clutch_target called while clutch is disengaged")
    d = delta(clutch.origin_operator, operator_pose)
    r = mapping.rotation
    pos = mapping.translation_scale * quat_rotate(r, d.position)
    quat = quat_mul(r, quat_mul(d.orientation, quat_conj(r)))
    return compose(clutch.origin_robot, Pose(pos, quat))


@dataclass
class FilterState:
    """One-pole exponential smoothing of the pose stream."""

    alpha_pos: float = 0.3
    alpha_rot: float = 0.3
    last: Pose | None = None

    def __post_init__(self):
        if not (0.0 < self.alpha_pos <= 1.0 and 0.0 < self.alpha_rot <= 1.0):
            raise ValueError("filter alphas must be in (0, 1]")

    def reset(self) -> None:
        self.last = None


def filter_step(state: FilterState, pose: Pose) -> Pose:
    """EMA toward `pose`; the first call seeds the filter and passes through."""
    if state.last is None:
        state.last = pose.copy()
        return pose.copy()
    p = state.alpha_pos * pose.position + (1.0 - state.alpha_pos) * state.last.position
    q = quat_slerp(state.last.orientation, pose.orientation, state.alpha_rot)
    out = Pose(p, q)
    state.last = out.copy()
    return out


class BoxMode(enum.Enum):
    KEEP_IN = "keep_in"
    KEEP_OUT = "keep_out"


@dataclass
class Fence:
    """Geometric constraint on the commanded TCP position.

    Exactly one of `normal`/`offset` (half-space: admissible where
    normal . p >= offset) or `box_min`/`box_max` with a mode is set.
    `margin` shrinks the admissible region so tracking and IK error cannot
    carry the arm across the raw boundary. `lock_orientation` freezes the
    commanded orientation while the raw target presses against this fence.
    """

    name: str = "fence"
    normal: np.ndarray | None = None
    offset: float = 0.0
    box_min: np.ndarray | None = None
    box_max: np.ndarray | None = None
    mode: BoxMode = BoxMode.KEEP_IN
    margin: float = 0.0
    lock_orientation: bool = False

    def __post_init__(self):
        if (self.normal is None) == (self.box_min is None):
            raise ConfigError(f"fence {self.name!r}: define either a half-space or a box")
        if self.normal is not None:
            self.normal = np.asarray(self.normal, dtype=float).reshape(3)
            n = float(np.linalg.norm(self.normal))
            if abs(n - 1.0) > 1e-6:
                raise ConfigError(f"fence {self.name!r}: normal must be unit length")
            self.normal = self.normal / n
        else:
            self.box_min = np.asarray(self.box_min, dtype=float).reshape(3)
            self.box_max = np.asarray(self.box_max, dtype=float).reshape(3)
            if not np.all(self.box_min < self.box_max):
                raise ConfigError(f"fence {self.name!r}: box min must be < max componentwise")
            if self.mode is BoxMode.KEEP_IN and np.any(
                self.box_max - self.box_min <= 2 * self.margin
            ):
                raise ConfigError(f"fence {self.name!r}: margin leaves no admissible interior")
        if self.margin < 0:
            raise ConfigError(f"fence {self.name!r}: margin must be >= 0")

    def violation(self, p: np.ndarray, margin: float | None = None) -> float:
        """Penetration depth beyond the margin-shrunk admissible region (0 if
        inside). Pass margin=0.0 to test against the raw region instead."""
        m = self.margin if margin is None else margin
        if self.normal is not None:
            return max(0.0, self.offset + m - float(self.normal @ p))
        lo = self.box_min + m
        hi = self.box_max - m
        if self.mode is BoxMode.KEEP_IN:
            return float(np.max(np.maximum(lo - p, p - hi), initial=0.0))
        # keep-out: violated when strictly inside the inflated box
        inside = np.minimum(p - (self.box_min - m), (self.box_max + m) - p)
        depth = float(np.min(inside))
        return max(0.0, depth)

    def project(self, p: np.ndarray) -> np.ndarray:
        """Minimal correction of p onto the admissible region."""
        if self.normal is not None:
            d = self.offset + self.margin - float(self.normal @ p)
            return p + d * self.normal
        if self.mode is BoxMode.KEEP_IN:
            return np.clip(p, self.box_min + self.margin, self.box_max - self.margin)
        # keep-out: push along the axis of least penetration to the nearest face
        lo = self.box_min - self.margin
        hi = self.box_max + self.margin
        out = p.copy()
        below = p - lo
        above = hi - p
        axis = None
        best = np.inf
        to_hi = True
        for i in range(3):
            if below[i] < best:
                best, axis, to_hi = below[i], i, False
            if above[i] < best:
                best, axis, to_hi = above[i], i, True
        out[axis] = hi[axis] if to_hi else lo[axis]
        return out


def validate_fences(fences: list[Fence], probe: np.ndarray | None = None) -> None:
    """Reject contradictory fence sets at load time.

    Projection must reach a fixed point from the probe point (defaults to
    the keep-in center or origin); an empty admissible region never
    converges within the pass limit.
    """
    if probe is None:
        keep_ins = [f for f in fences if f.box_min is not None and f.mode is BoxMode.KEEP_IN]
        if keep_ins:
            probe = 0.5 * (keep_ins[0].box_min + keep_ins[0].box_max)
        else:
            probe = np.zeros(3)
    pose, _, _ = apply_fences(fences, Pose(probe), Pose(probe))
    for f in fences:
        if f.violation(pose.position) > _EDGE_EPS:
            raise ConfigError("fence set has an empty admissible region (contradictory config)")


def apply_fences(
    fences: list[Fence], target: Pose, current_robot: Pose
) -> tuple[Pose, bool, bool]:
    """Clamp the target position into the admissible region.

    Returns (pose, clamped, lock_orientation). Corrections are applied
    per violated fence, iterating to a fixed point (<= 10 passes). When a
    lock_orientation fence is pressed, the commanded orientation is
    replaced with the current robot orientation.
    """
    p = target.position.copy()
    clamped = False
    lock = False
    for f in fences:
        if f.lock_orientation and f.violation(target.position) > _EDGE_EPS:
            lock = True
    for _ in range(_MAX_PASSES):
        moved = False
        for f in fences:
            if f.violation(p) > _EDGE_EPS:
                p = f.project(p)
                clamped = True
                moved = True
        if not moved:
            break
    orientation = current_robot.orientation if lock else target.orientation
    if not clamped and not lock:
        return target, False, False
    return Pose(p, orientation), clamped, lock


def rate_limit(prev: np.ndarray, target_q: np.ndarray, dt: float, cap: float) -> np.ndarray:
    """Move each joint toward target by at most cap*dt; exact arrival inside the bound."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    prev = np.asarray(prev, dtype=float)
    target_q = np.asarray(target_q, dtype=float)
    if prev.shape != target_q.shape:
        raise ValueError("joint vector lengths differ")
    step = np.clip(target_q - prev, -cap * dt, cap * dt)
    return prev + step
