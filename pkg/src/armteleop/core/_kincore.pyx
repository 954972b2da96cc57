# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kinematics kernels: DH forward chain, geometric Jacobian, and
the damped-least-squares solve loop.

Call-compatible with `_kinpure`; this is the hot path behind the
sub-millisecond IK budget. Supports up to 16 joints (stack buffers).
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport atan2, cos, fabs, sin, sqrt
from posix.time cimport CLOCK_MONOTONIC, clock_gettime, timespec

cnp.import_array()

BACKEND = "compiled"

DEF MAXJ = 16
DEF STALL_ITERS = 12
DEF MAX_ATTEMPT_ITERS = 200


cdef inline long long _now_ns() noexcept nogil:
    cdef timespec ts
    clock_gettime(CLOCK_MONOTONIC, &ts)
    return <long long>ts.tv_sec * 1000000000LL + ts.tv_nsec


cdef inline double _splitmix64(unsigned long long *state) noexcept nogil:
    # deterministic restart perturbations; uniform in [0, 1)
    cdef unsigned long long z
    state[0] += 0x9E3779B97F4A7C15ULL
    z = state[0]
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    z = z ^ (z >> 31)
    return (z >> 11) * (1.0 / 9007199254740992.0)


cdef inline void _rot_to_quat(const double *R, double *q) noexcept nogil:
    # R row-major 3x3 -> unit quaternion (w,x,y,z), w >= 0
    cdef double t = R[0] + R[4] + R[8]
    cdef double s, n
    if t > 0.0:
        s = sqrt(t + 1.0) * 2.0
        q[0] = 0.25 * s
        q[1] = (R[7] - R[5]) / s
        q[2] = (R[2] - R[6]) / s
        q[3] = (R[3] - R[1]) / s
    elif R[0] > R[4] and R[0] > R[8]:
        s = sqrt(1.0 + R[0] - R[4] - R[8]) * 2.0
        q[0] = (R[7] - R[5]) / s
        q[1] = 0.25 * s
        q[2] = (R[1] + R[3]) / s
        q[3] = (R[2] + R[6]) / s
    elif R[4] > R[8]:
        s = sqrt(1.0 + R[4] - R[0] - R[8]) * 2.0
        q[0] = (R[2] - R[6]) / s
        q[1] = (R[1] + R[3]) / s
        q[2] = 0.25 * s
        q[3] = (R[5] + R[7]) / s
    else:
        s = sqrt(1.0 + R[8] - R[0] - R[4]) * 2.0
        q[0] = (R[3] - R[1]) / s
        q[1] = (R[2] + R[6]) / s
        q[2] = (R[5] + R[7]) / s
        q[3] = 0.25 * s
    n = sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
    q[0] /= n
    q[1] /= n
    q[2] /= n
    q[3] /= n
    if q[0] < 0.0:
        q[0] = -q[0]
        q[1] = -q[1]
        q[2] = -q[2]
        q[3] = -q[3]


cdef inline void _quat_to_rot(const double *q, double *R) noexcept nogil:
    cdef double w = q[0], x = q[1], y = q[2], z = q[3]
    R[0] = 1 - 2 * (y * y + z * z); R[1] = 2 * (x * y - w * z); R[2] = 2 * (x * z + w * y)
    R[3] = 2 * (x * y + w * z); R[4] = 1 - 2 * (x * x + z * z); R[5] = 2 * (y * z - w * x)
    R[6] = 2 * (x * z - w * y); R[7] = 2 * (y * z + w * x); R[8] = 1 - 2 * (x * x + y * y)


cdef struct Chain:
    double ox[MAXJ]
    double oy[MAXJ]
    double oz[MAXJ]
    double zx[MAXJ]
    double zy[MAXJ]
    double zz[MAXJ]
    double p[3]       # TCP position
    double R[9]       # TCP rotation, row-major


cdef void _chain(const double *dh, const double *q, const double *tool, int n, Chain *out) noexcept nogil:
    cdef double R[9]
    cdef double Rn[9]
    cdef double A[9]
    cdef double p[3]
    cdef double v[3]
    cdef double Rt[9]
    cdef double a, alpha, d, off, th, ct, st, ca, sa
    cdef int i, r, c
    R[0] = 1; R[1] = 0; R[2] = 0
    R[3] = 0; R[4] = 1; R[5] = 0
    R[6] = 0; R[7] = 0; R[8] = 1
    p[0] = 0; p[1] = 0; p[2] = 0
    for i in range(n):
        out.ox[i] = p[0]; out.oy[i] = p[1]; out.oz[i] = p[2]
        out.zx[i] = R[2]; out.zy[i] = R[5]; out.zz[i] = R[8]
        a = dh[4 * i]; alpha = dh[4 * i + 1]; d = dh[4 * i + 2]; off = dh[4 * i + 3]
        th = q[i] + off
        ct = cos(th); st = sin(th)
        ca = cos(alpha); sa = sin(alpha)
        A[0] = ct; A[1] = -st * ca; A[2] = st * sa
        A[3] = st; A[4] = ct * ca; A[5] = -ct * sa
        A[6] = 0.0; A[7] = sa; A[8] = ca
        v[0] = a * ct; v[1] = a * st; v[2] = d
        p[0] += R[0] * v[0] + R[1] * v[1] + R[2] * v[2]
        p[1] += R[3] * v[0] + R[4] * v[1] + R[5] * v[2]
        p[2] += R[6] * v[0] + R[7] * v[1] + R[8] * v[2]
        for r in range(3):
            for c in range(3):
                Rn[3 * r + c] = (R[3 * r] * A[c] + R[3 * r + 1] * A[3 + c] + R[3 * r + 2] * A[6 + c])
        for r in range(9):
            R[r] = Rn[r]
    out.p[0] = p[0] + R[0] * tool[0] + R[1] * tool[1] + R[2] * tool[2]
    out.p[1] = p[1] + R[3] * tool[0] + R[4] * tool[1] + R[5] * tool[2]
    out.p[2] = p[2] + R[6] * tool[0] + R[7] * tool[1] + R[8] * tool[2]
    _quat_to_rot(tool + 3, Rt)
    for r in range(3):
        for c in range(3):
            out.R[3 * r + c] = (R[3 * r] * Rt[c] + R[3 * r + 1] * Rt[3 + c] + R[3 * r + 2] * Rt[6 + c])


cdef void _jac(const Chain *ch, int n, double *J) noexcept nogil:
    # J row-major 6 x n, rows [linear; angular]
    cdef int i
    cdef double dx, dy, dz
    for i in range(n):
        dx = ch.p[0] - ch.ox[i]
        dy = ch.p[1] - ch.oy[i]
        dz = ch.p[2] - ch.oz[i]
        J[i] = ch.zy[i] * dz - ch.zz[i] * dy
        J[n + i] = ch.zz[i] * dx - ch.zx[i] * dz
        J[2 * n + i] = ch.zx[i] * dy - ch.zy[i] * dx
        J[3 * n + i] = ch.zx[i]
        J[4 * n + i] = ch.zy[i]
        J[5 * n + i] = ch.zz[i]


cdef void _pose_err(const double *target, const Chain *ch, double *e) noexcept nogil:
    cdef double qc[4]
    cdef double dq[4]
    cdef double s, ang
    e[0] = target[0] - ch.p[0]
    e[1] = target[1] - ch.p[1]
    e[2] = target[2] - ch.p[2]
    _rot_to_quat(ch.R, qc)
    # dq = target_quat * conj(qc)
    dq[0] = target[3] * qc[0] + target[4] * qc[1] + target[5] * qc[2] + target[6] * qc[3]
    dq[1] = -target[3] * qc[1] + target[4] * qc[0] - target[5] * qc[3] + target[6] * qc[2]
    dq[2] = -target[3] * qc[2] + target[4] * qc[3] + target[5] * qc[0] - target[6] * qc[1]
    dq[3] = -target[3] * qc[3] - target[4] * qc[2] + target[5] * qc[1] + target[6] * qc[0]
    if dq[0] < 0.0:
        dq[0] = -dq[0]; dq[1] = -dq[1]; dq[2] = -dq[2]; dq[3] = -dq[3]
    s = sqrt(dq[1] * dq[1] + dq[2] * dq[2] + dq[3] * dq[3])
    if s < 1e-12:
        e[3] = 2.0 * dq[1]; e[4] = 2.0 * dq[2]; e[5] = 2.0 * dq[3]
    else:
        ang = 2.0 * atan2(s, dq[0]) / s
        e[3] = ang * dq[1]; e[4] = ang * dq[2]; e[5] = ang * dq[3]


cdef bint _cholesky6_solve(double *A, double *b) noexcept nogil:
    # in-place solve of A x = b for symmetric positive definite 6x6 A (row-major);
    # result written into b. Returns False if a pivot collapses.
    cdef double L[36]
    cdef double y[6]
    cdef double s
    cdef int i, j, k
    for i in range(6):
        for j in range(i + 1):
            s = A[6 * i + j]
            for k in range(j):
                s -= L[6 * i + k] * L[6 * j + k]
            if i == j:
                if s <= 0.0:
                    return False
                L[6 * i + j] = sqrt(s)
            else:
                L[6 * i + j] = s / L[6 * j + j]
    for i in range(6):
        s = b[i]
        for k in range(i):
            s -= L[6 * i + k] * y[k]
        y[i] = s / L[6 * i + i]
    for i in range(5, -1, -1):
        s = y[i]
        for k in range(i + 1, 6):
            s -= L[6 * k + i] * b[k]
        b[i] = s / L[6 * i + i]
    return True


def fk_pose(cnp.ndarray[double, ndim=2, mode="c"] dh,
            cnp.ndarray[double, ndim=1, mode="c"] q,
            cnp.ndarray[double, ndim=1, mode="c"] tool):
    """Base->TCP pose for joint angles q."""
    cdef int n = dh.shape[0]
    if n > MAXJ:
        raise ValueError("too many joints for compiled kernel")
    cdef Chain ch
    _chain(<double *>dh.data, <double *>q.data, <double *>tool.data, n, &ch)
    out = np.empty(7)
    cdef cnp.ndarray[double, ndim=1] o = out
    o[0] = ch.p[0]; o[1] = ch.p[1]; o[2] = ch.p[2]
    _rot_to_quat(ch.R, <double *>o.data + 3)
    return out


def fk_origins_axes(cnp.ndarray[double, ndim=2, mode="c"] dh,
                    cnp.ndarray[double, ndim=1, mode="c"] q,
                    cnp.ndarray[double, ndim=1, mode="c"] tool):
    """Joint-frame origins and z axes (one row per joint) plus the TCP pose."""
    cdef int n = dh.shape[0]
    if n > MAXJ:
        raise ValueError("too many joints for compiled kernel")
    cdef Chain ch
    _chain(<double *>dh.data, <double *>q.data, <double *>tool.data, n, &ch)
    origins = np.empty((n, 3))
    zaxes = np.empty((n, 3))
    tcp = np.empty(7)
    cdef cnp.ndarray[double, ndim=2] og = origins
    cdef cnp.ndarray[double, ndim=2] za = zaxes
    cdef cnp.ndarray[double, ndim=1] tc = tcp
    cdef int i
    for i in range(n):
        og[i, 0] = ch.ox[i]; og[i, 1] = ch.oy[i]; og[i, 2] = ch.oz[i]
        za[i, 0] = ch.zx[i]; za[i, 1] = ch.zy[i]; za[i, 2] = ch.zz[i]
    tc[0] = ch.p[0]; tc[1] = ch.p[1]; tc[2] = ch.p[2]
    _rot_to_quat(ch.R, <double *>tc.data + 3)
    return origins, zaxes, tcp


def jacobian(cnp.ndarray[double, ndim=2, mode="c"] dh,
             cnp.ndarray[double, ndim=1, mode="c"] q,
             cnp.ndarray[double, ndim=1, mode="c"] tool):
    """Geometric Jacobian at the TCP in the base frame, rows [linear; angular]."""
    cdef int n = dh.shape[0]
    if n > MAXJ:
        raise ValueError("too many joints for compiled kernel")
    cdef Chain ch
    _chain(<double *>dh.data, <double *>q.data, <double *>tool.data, n, &ch)
    J = np.empty((6, n))
    cdef cnp.ndarray[double, ndim=2, mode="c"] Jv = J
    _jac(&ch, n, <double *>Jv.data)
    return J


def dls_solve(cnp.ndarray[double, ndim=2, mode="c"] dh,
              cnp.ndarray[double, ndim=1, mode="c"] tool,
              cnp.ndarray[double, ndim=1, mode="c"] qmin,
              cnp.ndarray[double, ndim=1, mode="c"] qmax,
              cnp.ndarray[double, ndim=1, mode="c"] target,
              cnp.ndarray[double, ndim=1, mode="c"] seed,
              double pos_tol, double rot_tol, double budget_us,
              unsigned long long rng_seed=0,
              double lam0=1e-3, double lam_min=1e-6, double lam_max=1e-1,
              double restart_scale=0.5):
    """Levenberg-damped least squares from `seed`, restarting on stall.

    Joint limits are enforced by projection every iteration. Returns
    (q, err6, iterations, status) with status 0 = converged, 1 = budget
    exhausted (best-so-far q returned).
    """
    cdef int n = dh.shape[0]
    if n > MAXJ:
        raise ValueError("too many joints for compiled kernel")
    cdef const double *cdh = <double *>dh.data
    cdef const double *ctool = <double *>tool.data
    cdef const double *cqmin = <double *>qmin.data
    cdef const double *cqmax = <double *>qmax.data
    cdef const double *ctarget = <double *>target.data
    cdef const double *cseed = <double *>seed.data

    cdef long long t0 = _now_ns()
    cdef long long budget_ns = <long long>(budget_us * 1000.0)
    cdef unsigned long long rng = rng_seed ^ 0xD1B54A32D192ED03ULL

    cdef double q[MAXJ]
    cdef double qn[MAXJ]
    cdef double best_q[MAXJ]
    cdef double err[6]
    cdef double err_new[6]
    cdef double best_err[6]
    cdef double J[6 * MAXJ]
    cdef double JJT[36]
    cdef double rhs[6]
    cdef double lam = lam0
    cdef double lin, ang, enorm, new_norm, best_norm, s
    cdef long long spent
    cdef int iters = 0, stall = 0, attempt_iters = 0
    cdef int i, j, k, status
    cdef Chain ch

    for i in range(n):
        q[i] = cseed[i]
        if q[i] < cqmin[i]: q[i] = cqmin[i]
        if q[i] > cqmax[i]: q[i] = cqmax[i]
    _chain(cdh, q, ctool, n, &ch)
    _pose_err(ctarget, &ch, err)
    for i in range(6):
        best_err[i] = err[i]
    for i in range(n):
        best_q[i] = q[i]
    best_norm = 1e300
    status = -1

    with nogil:
        while True:
            lin = sqrt(err[0] * err[0] + err[1] * err[1] + err[2] * err[2])
            ang = sqrt(err[3] * err[3] + err[4] * err[4] + err[5] * err[5])
            if lin <= pos_tol and ang <= rot_tol:
                status = 0
                break
            enorm = sqrt(lin * lin + ang * ang)
            if enorm < best_norm:
                best_norm = enorm
                for i in range(n):
                    best_q[i] = q[i]
                for i in range(6):
                    best_err[i] = err[i]
            # stop early when another iteration would overshoot the budget
            spent = _now_ns() - t0
            if spent + spent // (iters if iters > 0 else 1) > budget_ns:
                status = 1
                break

            if stall >= STALL_ITERS or attempt_iters >= MAX_ATTEMPT_ITERS:
                for i in range(n):
                    q[i] = cseed[i] + restart_scale * (2.0 * _splitmix64(&rng) - 1.0)
                    if q[i] < cqmin[i]: q[i] = cqmin[i]
                    if q[i] > cqmax[i]: q[i] = cqmax[i]
                _chain(cdh, q, ctool, n, &ch)
                _pose_err(ctarget, &ch, err)
                lam = lam0
                stall = 0
                attempt_iters = 0
                continue

            _jac(&ch, n, J)
            for i in range(6):
                for j in range(i + 1):
                    s = 0.0
                    for k in range(n):
                        s += J[n * i + k] * J[n * j + k]
                    JJT[6 * i + j] = s
                    JJT[6 * j + i] = s
                JJT[6 * i + i] += lam * lam
                rhs[i] = err[i]
            if not _cholesky6_solve(JJT, rhs):
                lam = lam * 4.0 if lam * 4.0 < lam_max else lam_max
                stall += 1
                iters += 1
                attempt_iters += 1
                continue
            for i in range(n):
                s = 0.0
                for j in range(6):
                    s += J[n * j + i] * rhs[j]
                qn[i] = q[i] + s
                if qn[i] < cqmin[i]: qn[i] = cqmin[i]
                if qn[i] > cqmax[i]: qn[i] = cqmax[i]
            _chain(cdh, qn, ctool, n, &ch)
            _pose_err(ctarget, &ch, err_new)
            new_norm = sqrt(err_new[0] * err_new[0] + err_new[1] * err_new[1] + err_new[2] * err_new[2]
                            + err_new[3] * err_new[3] + err_new[4] * err_new[4] + err_new[5] * err_new[5])
            if new_norm < enorm:
                if enorm - new_norm < 1e-12 * (1.0 + enorm):
                    stall += 1
                else:
                    stall = 0
                for i in range(n):
                    q[i] = qn[i]
                for i in range(6):
                    err[i] = err_new[i]
                lam = lam / 1.5
                if lam < lam_min:
                    lam = lam_min
            else:
                lam = lam * 2.0
                if lam > lam_max:
                    lam = lam_max
                stall += 1
            iters += 1
            attempt_iters += 1
            # re-chain for the (possibly rejected) current q before next Jacobian
            _chain(cdh, q, ctool, n, &ch)

    q_out = np.empty(n)
    e_out = np.empty(6)
    cdef cnp.ndarray[double, ndim=1] qo = q_out
    cdef cnp.ndarray[double, ndim=1] eo = e_out
    if status == 0:
        for i in range(n):
            qo[i] = q[i]
        for i in range(6):
            eo[i] = err[i]
    else:
        for i in range(n):
            qo[i] = best_q[i]
        for i in range(6):
            eo[i] = best_err[i]
    return q_out, e_out, iters, status
