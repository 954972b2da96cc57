"""Budgeted inverse kinematics with configuration-consistent selection.

The solver is damped least squares with an adaptive Levenberg schedule and
deterministic seeded restarts, capped by a wall-clock budget (default
1 ms). Selection keeps the arm away from singularities and joint limits
and prefers solutions that preserve the operator-visible arm
configuration (shoulder/elbow/wrist branch).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import core
from .geometry import Pose, Twist
from .kinematics import ArmModel, JointState, dh_frames, manipulability

DEFAULT_POS_TOL = 1e-4  # m
DEFAULT_ROT_TOL = 1e-3  # rad
DEFAULT_BUDGET_US = 1000.0
MANIPULABILITY_MIN = 1e-3
LIMIT_MARGIN = math.radians(2.0)


class IkStatus(enum.Enum):
    CONVERGED = "converged"
    BUDGET_EXHAUSTED = "budget_exhausted"
    UNREACHABLE = "unreachable"


class Shoulder(enum.Enum):
    LEFT = "left"
    RIGHT = "right"


class Elbow(enum.Enum):
    UP = "up"
    DOWN = "down"


class Wrist(enum.Enum):
    NO_FLIP = "no_flip"
    FLIP = "flip"


@dataclass(frozen=True)
class ConfigIndicator:
    """Discrete arm-posture branch; derived deterministically from q."""

    shoulder: Shoulder
    elbow: Elbow
    wrist: Wrist

    def __str__(self):
        return f"{self.shoulder.value}/{self.elbow.value}/{self.wrist.value}"


@dataclass
class IkRequest:
    target: Pose
    seed: JointState
    pos_tol: float = DEFAULT_POS_TOL
    rot_tol: float = DEFAULT_ROT_TOL
    budget_us: float = DEFAULT_BUDGET_US
    rng_seed: int = 0

    def __post_init__(self):
        if not (self.pos_tol > 0 and self.rot_tol > 0 and self.budget_us > 0):
            raise ValueError("tolerances and budget must be positive")


@dataclass
class IkSolution:
    q: JointState
    residual: Twist
    iterations: int
    config: ConfigIndicator | None
    status: IkStatus
    degraded: bool = False
    solve_time_us: float = 0.0

    @property
    def converged(self) -> bool:
        return self.status is IkStatus.CONVERGED


def configuration_indicator(model: ArmModel, q) -> ConfigIndicator:
    """Shoulder from the wrist-center y in the shoulder frame, elbow from the
    sign of joint 3, wrist from the sign of joint 5. Zeros resolve to
    (left, up, no_flip)."""
    vec = q.q if isinstance(q, JointState) else np.asarray(q, dtype=float)
    frames = dh_frames(model, vec)
    n = model.ndof
    # wrist center: origin of the frame the second wrist joint rotates about
    wc_idx = min(4, n - 1)
    wc = frames[wc_idx][:3, 3]
    shoulder_frame = frames[1] if n >= 2 else frames[0]
    local = shoulder_frame[:3, :3].T @ (wc - shoulder_frame[:3, 3])
    shoulder = Shoulder.LEFT if local[1] >= 0.0 else Shoulder.RIGHT
    elbow = Elbow.UP if (n < 3 or vec[2] >= 0.0) else Elbow.DOWN
    wrist = Wrist.NO_FLIP if (n < 5 or vec[4] >= 0.0) else Wrist.FLIP
    return ConfigIndicator(shoulder, elbow, wrist)


def solve(model: ArmModel, req: IkRequest) -> IkSolution:
    """Damped-least-squares solve within a wall-clock budget.

    Returns UNREACHABLE without iterating when the target position lies
    outside the arm's reach sphere. Joint limits are enforced by
    projection on every iteration, so the result is always in-limit.
    """
    seed_q = np.ascontiguousarray(model.clamp(req.seed.q), dtype=float)
    if seed_q.shape[0] != model.ndof:
        raise ValueError(f"seed has {seed_q.shape[0]} joints, model has {model.ndof}")

    if float(np.linalg.norm(req.target.position)) > model.reach:
        return IkSolution(
            q=JointState(seed_q),
            residual=_residual(model, seed_q, req.target),
            iterations=0,
            config=configuration_indicator(model, seed_q),
            status=IkStatus.UNREACHABLE,
        )

    target7 = np.ascontiguousarray(
        np.concatenate([req.target.position, req.target.orientation])
    )
    q, err, iters, status = core.dls_solve(
        model.dh,
        model._tool7,
        model._qmin,
        model._qmax,
        target7,
        seed_q,
        req.pos_tol,
        req.rot_tol,
        float(req.budget_us),
        int(req.rng_seed),
    )
    return IkSolution(
        q=JointState(q),
        residual=Twist(err[:3], err[3:]),
        iterations=int(iters),
        config=configuration_indicator(model, q),
        status=IkStatus.CONVERGED if status == 0 else IkStatus.BUDGET_EXHAUSTED,
    )


def _residual(model: ArmModel, q: np.ndarray, target: Pose) -> Twist:
    from .geometry import pose_error
    from .kinematics import forward

    return pose_error(target, forward(model, q))


def solve_candidates(model: ArmModel, req: IkRequest, attempts: int = 1) -> list[IkSolution]:
    """One solve from the seed plus optional extra attempts from perturbed
    seeds (distinct rng streams), deduplicated in joint space. Converged
    solutions only; empty list if nothing converged."""
    out: list[IkSolution] = []
    rng = np.random.default_rng(req.rng_seed)
    for k in range(max(1, attempts)):
        sub = IkRequest(
            target=req.target,
            seed=req.seed
            if k == 0
            else JointState(model.clamp(req.seed.q + rng.uniform(-0.6, 0.6, model.ndof))),
            pos_tol=req.pos_tol,
            rot_tol=req.rot_tol,
            budget_us=req.budget_us,
            rng_seed=req.rng_seed + k,
        )
        sol = solve(model, sub)
        if not sol.converged:
            continue
        if any(np.max(np.abs(sol.q.q - prev.q.q)) < 1e-6 for prev in out):
            continue
        out.append(sol)
    return out


@dataclass
class SelectionPolicy:
    manipulability_min: float = MANIPULABILITY_MIN
    limit_margin: float = LIMIT_MARGIN


def select_solution(
    candidates: list[IkSolution],
    previous: JointState,
    model: ArmModel,
    policy: SelectionPolicy | None = None,
) -> IkSolution:
    """Pick the command-worthy solution among converged candidates.

    Near-singular and near-limit candidates are filtered out; survivors
    that keep the previous arm configuration win; ties break on joint
    distance to the previous state, then on candidate index. An emptied
    filter returns the max-manipulability candidate flagged degraded.
    """
    if not candidates:
        raise ValueError("select_solution needs at least one candidate")
    policy = policy or SelectionPolicy()

    scored = []
    for idx, cand in enumerate(candidates):
        w = manipulability(model, cand.q.q)
        near_limit = not model.in_limits(cand.q.q, margin=policy.limit_margin)
        scored.append((idx, cand, w, near_limit))

    survivors = [s for s in scored if s[2] >= policy.manipulability_min and not s[3]]
    if not survivors:
        idx, cand, _, _ = max(scored, key=lambda s: s[2])
        out = IkSolution(
            q=cand.q,
            residual=cand.residual,
            iterations=cand.iterations,
            config=cand.config,
            status=cand.status,
            degraded=True,
            solve_time_us=cand.solve_time_us,
        )
        return out

    prev_ind = configuration_indicator(model, previous)

    def rank(entry):
        idx, cand, _, _ = entry
        mismatch = 0 if cand.config == prev_ind else 1
        dist = float(np.linalg.norm(cand.q.q - previous.q))
        return (mismatch, dist, idx)

    return min(survivors, key=rank)[1]
