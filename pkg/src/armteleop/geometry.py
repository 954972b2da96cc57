"""SE(3) pose algebra: the currency of the whole motion pipeline.

Poses carry a position in meters and a unit quaternion in (w, x, y, z)
order, canonicalized to w >= 0 so the double cover never leaks into
equality tests. All angles are radians; degrees exist only at config and
CLI boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

QUAT_ATOL = 1e-9


def quat_normalize(q: np.ndarray) -> np.ndarray:
    """Unit-norm, w >= 0 canonical form of a (w,x,y,z) quaternion.

    Idempotent bit-for-bit: an already-canonical quaternion passes through
    unchanged, so codec round trips stay exact.
    """
    q = np.asarray(q, dtype=float)
    n = math.sqrt(float(q @ q))
    if n == 0.0 or not math.isfinite(n):
        raise ValueError("quaternion has zero or non-finite norm")
    if abs(n - 1.0) > 1e-12:
        q = q / n
    if q[0] < 0.0:
        q = -q
    return q


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conj(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate a 3-vector by a unit quaternion."""
    w = q[0]
    u = q[1:]
    # v' = v + 2w (u x v) + 2 (u x (u x v))
    uv = np.cross(u, v)
    return v + 2.0 * w * uv + 2.0 * np.cross(u, uv)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    """Shepperd's method, then canonicalized."""
    t = float(np.trace(R))
    if t > 0.0:
        s = math.sqrt(t + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        q = np.array(
            [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
        )
    elif R[1, 1] > R[2, 2]:
        s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        q = np.array(
            [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
        )
    else:
        s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        q = np.array(
            [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
        )
    return quat_normalize(q)


def exp_so3(rotvec: np.ndarray) -> np.ndarray:
    """Rotation vector (axis * angle, rad) -> unit quaternion."""
    rotvec = np.asarray(rotvec, dtype=float)
    angle = math.sqrt(float(rotvec @ rotvec))
    if angle < 1e-12:
        # first-order expansion keeps exp(log(q)) exact near identity
        q = np.array([1.0, 0.5 * rotvec[0], 0.5 * rotvec[1], 0.5 * rotvec[2]])
        return quat_normalize(q)
    axis = rotvec / angle
    h = 0.5 * angle
    s = math.sin(h)
    return quat_normalize(np.array([math.cos(h), s * axis[0], s * axis[1], s * axis[2]]))


def log_so3(q: np.ndarray) -> np.ndarray:
    """Unit quaternion -> rotation vector, angle in [0, pi].

    At exactly pi the axis sign is ambiguous; the component of largest
    magnitude is made positive (pinned convention).
    """
    q = quat_normalize(q)
    w = q[0]
    v = q[1:]
    s = math.sqrt(float(v @ v))
    if s < 1e-12:
        return 2.0 * v  # small-angle: q ~ (1, r/2)
    angle = 2.0 * math.atan2(s, w)
    axis = v / s
    if abs(angle - math.pi) < 1e-9:
        k = int(np.argmax(np.abs(axis)))
        if axis[k] < 0.0:
            axis = -axis
    return angle * axis


def quat_slerp(a: np.ndarray, b: np.ndarray, t: float) -> np.ndarray:
    """Geodesic interpolation from a toward b by fraction t in [0, 1]."""
    a = quat_normalize(a)
    b = quat_normalize(b)
    dot = float(a @ b)
    if dot < 0.0:  # take the short arc
        b = -b
        dot = -dot
    if dot > 1.0 - 1e-12:
        return quat_normalize(a + t * (b - a))
    theta = math.acos(min(1.0, dot))
    s = math.sin(theta)
    return quat_normalize((math.sin((1.0 - t) * theta) / s) * a + (math.sin(t * theta) / s) * b)


@dataclass
class Pose:
    """Rigid transform: position (m) + unit quaternion (w,x,y,z)."""

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    orientation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3).copy()
        if not np.all(np.isfinite(self.position)):
            raise ValueError("pose position must be finite")
        self.orientation = quat_normalize(self.orientation)

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    @staticmethod
    def from_translation(x: float, y: float, z: float) -> "Pose":
        return Pose(np.array([x, y, z], dtype=float))

    @staticmethod
    def from_axis_angle(axis, angle: float, position=(0.0, 0.0, 0.0)) -> "Pose":
        axis = np.asarray(axis, dtype=float)
        n = np.linalg.norm(axis)
        if n == 0.0:
            raise ValueError("rotation axis must be nonzero")
        return Pose(np.asarray(position, dtype=float), exp_so3(axis / n * angle))

    @staticmethod
    def from_matrix(T: np.ndarray) -> "Pose":
        T = np.asarray(T, dtype=float)
        return Pose(T[:3, 3], matrix_to_quat(T[:3, :3]))

    def to_matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = quat_to_matrix(self.orientation)
        T[:3, 3] = self.position
        return T

    def copy(self) -> "Pose":
        return Pose(self.position.copy(), self.orientation.copy())

    def approx_equal(self, other: "Pose", pos_tol: float = 1e-9, rot_tol: float = 1e-9) -> bool:
        dp = float(np.linalg.norm(self.position - other.position))
        dr = float(np.linalg.norm(log_so3(quat_mul(quat_conj(self.orientation), other.orientation))))
        return dp <= pos_tol and dr <= rot_tol

    def __repr__(self):
        p = ", ".join(f"{v:.6g}" for v in self.position)
        q = ", ".join(f"{v:.6g}" for v in self.orientation)
        return f"Pose(p=[{p}], q=[{q}])"


@dataclass
class Twist:
    """Small pose difference: linear part in m, angular part in rad."""

    linear: np.ndarray = field(default_factory=lambda: np.zeros(3))
    angular: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.linear = np.asarray(self.linear, dtype=float).reshape(3)
        self.angular = np.asarray(self.angular, dtype=float).reshape(3)
        if not (np.all(np.isfinite(self.linear)) and np.all(np.isfinite(self.angular))):
            raise ValueError("twist components must be finite")

    def norm_linear(self) -> float:
        return float(np.linalg.norm(self.linear))

    def norm_angular(self) -> float:
        return float(np.linalg.norm(self.angular))


def compose(a: Pose, b: Pose) -> Pose:
    """Chain two transforms; equals the homogeneous-matrix product T(a)@T(b)."""
    return Pose(
        a.position + quat_rotate(a.orientation, b.position),
        quat_mul(a.orientation, b.orientation),
    )


def inverse(p: Pose) -> Pose:
    qc = quat_conj(p.orientation)
    return Pose(-quat_rotate(qc, p.position), qc)


def delta(origin: Pose, current: Pose) -> Pose:
    """Relative pose of `current` with respect to `origin` (clutch frame)."""
    return compose(inverse(origin), current)


def pose_error(target: Pose, actual: Pose) -> Twist:
    """Base-frame error twist taking `actual` to `target`."""
    return Twist(
        target.position - actual.position,
        log_so3(quat_mul(target.orientation, quat_conj(actual.orientation))),
    )
