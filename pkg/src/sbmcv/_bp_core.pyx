# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled belief-propagation kernels.

Mirrors ``sbmcv._bp_py`` operation for operation; see that module for the
reference semantics.
"""

import numpy as np
from libc.math cimport exp, log, INFINITY

cdef double TINY = 1e-300
cdef double TINY_REL = 1e-250


cdef int _vertex(
    Py_ssize_t i,
    const long[::1] indptr,
    const long[::1] dst,
    const long[::1] rev,
    const double[::1] theta,
    const double[::1] log_gamma,
    const double[:, ::1] omega,
    double[:, ::1] msgs,
    double[:, ::1] marg,
    double[::1] field,
    double[:, ::1] logf,
    double[::1] base,
    double[::1] acc,
    double[::1] row,
    double damping,
    bint update_field,
    bint finalize,
    double[::1] log_zv,
    double[::1] log_zcav,
    double* resid,
) noexcept nogil:
    cdef Py_ssize_t q = log_gamma.shape[0]
    cdef Py_ssize_t lo = indptr[i], hi = indptr[i + 1]
    cdef Py_ssize_t e, r, s, t, k
    cdef double th_i = theta[i], f, mx, tot, v, diff, d
    cdef double th_j

    for s in range(q):
        base[s] = log_gamma[s] - th_i * field[s]
        acc[s] = 0.0

    for e in range(lo, hi):
        r = rev[e]
        th_j = theta[dst[e]]
        k = e - lo
        for s in range(q):
            f = 0.0
            for t in range(q):
                f += msgs[r, t] * omega[t, s]
            f *= th_j * th_i
            if f < TINY:
                f = TINY
            logf[k, s] = log(f)
            acc[s] += logf[k, s]

    # full marginal
    mx = -INFINITY
    for s in range(q):
        row[s] = base[s] + acc[s]
        if row[s] > mx:
            mx = row[s]
    if mx == -INFINITY:
        return lo if hi > lo else -2
    tot = 0.0
    for s in range(q):
        row[s] = exp(row[s] - mx)
        tot += row[s]
    if finalize:
        log_zv[i] = mx + log(tot)
    for s in range(q):
        v = row[s] / tot
        if update_field:
            d = th_i * (v - marg[i, s])
            if d != 0.0:
                for t in range(q):
                    field[t] += d * omega[s, t]
        marg[i, s] = v

    # outgoing cavity messages
    for e in range(lo, hi):
        k = e - lo
        mx = -INFINITY
        for s in range(q):
            row[s] = base[s] + acc[s] - logf[k, s]
            if row[s] > mx:
                mx = row[s]
        if mx == -INFINITY:
            return e
        tot = 0.0
        for s in range(q):
            row[s] = exp(row[s] - mx)
            tot += row[s]
        if finalize:
            log_zcav[e] = mx + log(tot)
            continue
        if damping > 0.0:
            v = 0.0
            for s in range(q):
                row[s] = (1.0 - damping) * (row[s] / tot) + damping * msgs[e, s]
                v += row[s]
            tot = v
        for s in range(q):
            v = row[s] / tot
            diff = v - msgs[e, s]
            if diff < 0:
                diff = -diff
            if diff > resid[0]:
                resid[0] = diff
            msgs[e, s] = v
    return -1


cdef int _vertex_mul(
    Py_ssize_t i,
    const long[::1] indptr,
    const long[::1] dst,
    const long[::1] rev,
    const double[::1] theta,
    const double[::1] log_gamma,
    const double[:, ::1] omega,
    double[:, ::1] msgs,
    double[:, ::1] marg,
    double[::1] field,
    double[:, ::1] fac,
    double[::1] base,
    double[::1] acc,
    double[::1] row,
    double damping,
    bint update_field,
    double* resid,
) noexcept nogil:
    # Same update as _vertex, but products are formed directly with each
    # factor scaled to max 1; only q exponentials per vertex.
    cdef Py_ssize_t q = log_gamma.shape[0]
    cdef Py_ssize_t lo = indptr[i], hi = indptr[i + 1]
    cdef Py_ssize_t e, r, s, t, k
    cdef double th_i = theta[i], f, mx, tot, v, diff, d

    mx = -INFINITY
    for s in range(q):
        base[s] = log_gamma[s] - th_i * field[s]
        if base[s] > mx:
            mx = base[s]
    if mx == -INFINITY:
        return lo if hi > lo else -2
    for s in range(q):
        base[s] = exp(base[s] - mx)
        acc[s] = 1.0

    for e in range(lo, hi):
        r = rev[e]
        k = e - lo
        mx = 0.0
        for s in range(q):
            f = 0.0
            for t in range(q):
                f += msgs[r, t] * omega[t, s]
            fac[k, s] = f
            if f > mx:
                mx = f
        if mx * th_i * theta[dst[e]] < TINY:
            # every factor sits at the floor: uninformative
            for s in range(q):
                fac[k, s] = 1.0
        else:
            for s in range(q):
                f = fac[k, s] / mx
                fac[k, s] = f if f > TINY_REL else TINY_REL
        mx = 0.0
        for s in range(q):
            acc[s] *= fac[k, s]
            if acc[s] > mx:
                mx = acc[s]
        for s in range(q):
            acc[s] /= mx

    tot = 0.0
    for s in range(q):
        row[s] = base[s] * acc[s]
        tot += row[s]
    if not tot > 0.0:
        return lo if hi > lo else -2
    for s in range(q):
        v = row[s] / tot
        if update_field:
            d = th_i * (v - marg[i, s])
            if d != 0.0:
                for t in range(q):
                    field[t] += d * omega[s, t]
        marg[i, s] = v

    for e in range(lo, hi):
        k = e - lo
        tot = 0.0
        for s in range(q):
            row[s] = base[s] * acc[s] / fac[k, s]
            tot += row[s]
        if not tot > 0.0:
            return e
        if damping > 0.0:
            v = 0.0
            for s in range(q):
                row[s] = (1.0 - damping) * (row[s] / tot) + damping * msgs[e, s]
                v += row[s]
            tot = v
        for s in range(q):
            v = row[s] / tot
            diff = v - msgs[e, s]
            if diff < 0:
                diff = -diff
            if diff > resid[0]:
                resid[0] = diff
            msgs[e, s] = v
    return -1


def sweep_async(
    const long[::1] indptr,
    const long[::1] dst,
    const long[::1] rev,
    const double[::1] theta,
    const double[::1] log_gamma,
    const double[:, ::1] omega,
    double[:, ::1] msgs,
    double[:, ::1] marg,
    double[::1] field,
    const long[::1] order,
    double damping,
    bint update_field,
):
    """One asynchronous pass over all vertices in ``order``.

    Returns ``(max_residual, bad)`` where ``bad`` is ``-1`` or the half-edge
    whose normalization vanished.
    """
    cdef Py_ssize_t q = log_gamma.shape[0]
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef long dmax = 1
    cdef Py_ssize_t i, idx
    cdef int bad = -1
    cdef double resid = 0.0
    for i in range(n):
        if indptr[i + 1] - indptr[i] > dmax:
            dmax = indptr[i + 1] - indptr[i]
    cdef double[:, ::1] logf = np.empty((dmax, q))
    cdef double[::1] base = np.empty(q)
    cdef double[::1] acc = np.empty(q)
    cdef double[::1] row = np.empty(q)
    with nogil:
        for idx in range(order.shape[0]):
            i = order[idx]
            bad = _vertex_mul(i, indptr, dst, rev, theta, log_gamma, omega, msgs, marg, field,
                              logf, base, acc, row, damping, update_field, &resid)
            if bad != -1:
                break
    return resid, bad


def finalize(
    const long[::1] indptr,
    const long[::1] dst,
    const long[::1] rev,
    const double[::1] theta,
    const double[::1] log_gamma,
    const double[:, ::1] omega,
    double[:, ::1] msgs,
    double[:, ::1] marg,
    double[::1] field,
    double[::1] log_zv,
    double[::1] log_zcav,
):
    """Recompute marginals and the vertex/cavity log-normalizers in place.

    Messages and the field are left untouched.
    """
    cdef Py_ssize_t q = log_gamma.shape[0]
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef long dmax = 1
    cdef Py_ssize_t i
    cdef int bad = -1
    cdef double resid = 0.0
    for i in range(n):
        if indptr[i + 1] - indptr[i] > dmax:
            dmax = indptr[i + 1] - indptr[i]
    cdef double[:, ::1] logf = np.empty((dmax, q))
    cdef double[::1] base = np.empty(q)
    cdef double[::1] acc = np.empty(q)
    cdef double[::1] row = np.empty(q)
    with nogil:
        for i in range(n):
            bad = _vertex(i, indptr, dst, rev, theta, log_gamma, omega, msgs, marg, field,
                          logf, base, acc, row, 0.0, False, True,
                          log_zv, log_zcav, &resid)
            if bad != -1:
                break
    return bad
