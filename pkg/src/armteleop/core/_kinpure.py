"""Pure-numpy kinematics kernels: DH forward chain, geometric Jacobian,
and the damped-least-squares solve loop.

Same call surface as the compiled module `_kincore`; the package picks one
at import time. Array layouts:

  dh    (N,4) float64 rows [a, alpha, d, theta_offset]
  q     (N,)  float64 joint angles, rad
  tool  (7,)  float64 flange->TCP pose [x y z qw qx qy qz]
  pose  (7,)  float64 [x y z qw qx qy qz]
"""

import math
import time

import numpy as np

BACKEND = "pure"

_STALL_ITERS = 12
_MAX_ATTEMPT_ITERS = 200


def _rot_to_quat(R):
    t = R[0, 0] + R[1, 1] + R[2, 2]
    if t > 0.0:
        s = math.sqrt(t + 1.0) * 2.0
        q = (0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s)
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        q = ((R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s)
    elif R[1, 1] > R[2, 2]:
        s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        q = ((R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s)
    else:
        s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        q = ((R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s)
    q = np.array(q)
    n = math.sqrt(float(q @ q))
    q /= n
    if q[0] < 0.0:
        q = -q
    return q


def _quat_to_rot(q):
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def _chain(dh, q, tool):
    """Accumulated rotation/origin plus per-joint frame origins and z axes."""
    n = dh.shape[0]
    R = np.eye(3)
    p = np.zeros(3)
    origins = np.empty((n, 3))
    zaxes = np.empty((n, 3))
    for i in range(n):
        origins[i] = p
        zaxes[i] = R[:, 2]
        a, alpha, d, off = dh[i]
        th = q[i] + off
        ct, st = math.cos(th), math.sin(th)
        ca, sa = math.cos(alpha), math.sin(alpha)
        A = np.array(
            [
                [ct, -st * ca, st * sa],
                [st, ct * ca, -ct * sa],
                [0.0, sa, ca],
            ]
        )
        p = p + R @ np.array([a * ct, a * st, d])
        R = R @ A
    p_tcp = p + R @ tool[:3]
    R_tcp = R @ _quat_to_rot(tool[3:])
    return origins, zaxes, p_tcp, R_tcp


def fk_pose(dh, q, tool):
    """Base->TCP pose for joint angles q."""
    _, _, p, R = _chain(dh, q, tool)
    out = np.empty(7)
    out[:3] = p
    out[3:] = _rot_to_quat(R)
    return out


def fk_origins_axes(dh, q, tool):
    """Joint-frame origins and z axes (one row per joint) plus the TCP pose."""
    origins, zaxes, p, R = _chain(dh, q, tool)
    tcp = np.empty(7)
    tcp[:3] = p
    tcp[3:] = _rot_to_quat(R)
    return origins, zaxes, tcp


def jacobian(dh, q, tool):
    """Geometric Jacobian at the TCP in the base frame, rows [linear; angular]."""
    origins, zaxes, p_tcp, _ = _chain(dh, q, tool)
    n = dh.shape[0]
    J = np.empty((6, n))
    for i in range(n):
        z = zaxes[i]
        J[:3, i] = np.cross(z, p_tcp - origins[i])
        J[3:, i] = z
    return J


def _quat_log(q):
    # assumes unit norm; returns rotation vector with angle in [0, pi]
    w = q[0]
    if w < 0.0:
        q = -q
        w = -w
    v = q[1:]
    s = math.sqrt(float(v @ v))
    if s < 1e-12:
        return 2.0 * v
    return (2.0 * math.atan2(s, w) / s) * v


def _pose_err(target, p, R):
    """6-vector [linear; angular] taking the frame (p, R) to target."""
    e = np.empty(6)
    e[:3] = target[:3] - p
    qc = _rot_to_quat(R)
    tq = target[3:]
    # tq * conj(qc)
    dw = tq[0] * qc[0] + tq[1] * qc[1] + tq[2] * qc[2] + tq[3] * qc[3]
    dx = -tq[0] * qc[1] + tq[1] * qc[0] - tq[2] * qc[3] + tq[3] * qc[2]
    dy = -tq[0] * qc[2] + tq[1] * qc[3] + tq[2] * qc[0] - tq[3] * qc[1]
    dz = -tq[0] * qc[3] - tq[1] * qc[2] + tq[2] * qc[1] + tq[3] * qc[0]
    e[3:] = _quat_log(np.array([dw, dx, dy, dz]))
    return e


def dls_solve(
    dh,
    tool,
    qmin,
    qmax,
    target,
    seed,
    pos_tol,
    rot_tol,
    budget_us,
    rng_seed=0,
    lam0=1e-3,
    lam_min=1e-6,
    lam_max=1e-1,
    restart_scale=0.5,
):
    """Levenberg-damped least squares from `seed`, restarting on stall.

    Joint limits are enforced by projection every iteration. Returns
    (q, err6, iterations, status) with status 0 = converged, 1 = budget
    exhausted (best-so-far q returned).
    """
    t0 = time.monotonic_ns()
    budget_ns = int(budget_us) * 1000
    rng = np.random.default_rng(rng_seed)
    n = dh.shape[0]
    eye6 = np.eye(6)

    q = np.clip(np.asarray(seed, dtype=float), qmin, qmax)
    lam = lam0
    iters = 0
    stall = 0
    attempt_iters = 0

    _, _, p, R = _chain(dh, q, tool)
    err = _pose_err(target, p, R)
    best_q = q.copy()
    best_err = err.copy()
    best_norm = math.inf

    while True:
        lin = math.sqrt(float(err[:3] @ err[:3]))
        ang = math.sqrt(float(err[3:] @ err[3:]))
        if lin <= pos_tol and ang <= rot_tol:
            return q, err, iters, 0
        enorm = math.sqrt(lin * lin + ang * ang)
        if enorm < best_norm:
            best_norm = enorm
            best_q[:] = q
            best_err[:] = err
        # stop early when another iteration would overshoot the budget
        spent = time.monotonic_ns() - t0
        if spent + spent // max(iters, 1) > budget_ns:
            return best_q, best_err, iters, 1

        if stall >= _STALL_ITERS or attempt_iters >= _MAX_ATTEMPT_ITERS:
            q = np.clip(seed + rng.uniform(-restart_scale, restart_scale, n), qmin, qmax)
            _, _, p, R = _chain(dh, q, tool)
            err = _pose_err(target, p, R)
            lam = lam0
            stall = 0
            attempt_iters = 0
            continue

        J = jacobian(dh, q, tool)
        JJT = J @ J.T
        JJT[np.diag_indices(6)] += lam * lam
        try:
            dq = J.T @ np.linalg.solve(JJT, err)
        except np.linalg.LinAlgError:
            dq = J.T @ np.linalg.lstsq(JJT + eye6 * 1e-9, err, rcond=None)[0]
        q_new = np.clip(q + dq, qmin, qmax)
        _, _, p, R = _chain(dh, q_new, tool)
        err_new = _pose_err(target, p, R)
        new_norm = math.sqrt(float(err_new @ err_new))
        if new_norm < enorm:
            if enorm - new_norm < 1e-12 * (1.0 + enorm):
                stall += 1
            else:
                stall = 0
            q = q_new
            err = err_new
            lam = max(lam / 1.5, lam_min)
        else:
            lam = min(lam * 2.0, lam_max)
            stall += 1
        iters += 1
        attempt_iters += 1
