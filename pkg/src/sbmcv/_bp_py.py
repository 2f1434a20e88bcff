"""Pure-Python belief-propagation kernels (fallback for ``_bp_core``).

Both kernels process one vertex ``i`` at a time.  With ``F_k`` the log of
the incoming factor ``theta_k theta_i sum_t psi^{k->i}_t omega[t, s]`` and
``base = log gamma - theta_i h``:

* the full marginal is ``softmax(base + sum_k F_k)``;
* the outgoing message ``i -> j`` is ``softmax(base + sum_k F_k - F_j)``.

Outgoing messages of ``i`` depend only on incoming ones, so updating all of
them together is the same as visiting those half-edges consecutively.
"""

from __future__ import annotations

import numpy as np

TINY = 1e-300
TINY_REL = 1e-250


def _incoming_logf(i, lo, hi, dst, rev, theta, omega, msgs):
    f = msgs[rev[lo:hi]] @ omega
    f *= (theta[dst[lo:hi]] * theta[i])[:, None]
    np.maximum(f, TINY, out=f)
    return np.log(f)


def _incoming_rel(i, lo, hi, dst, rev, theta, omega, msgs):
    # log factors scaled to max 0 per neighbour, as the compiled sweep does
    f = msgs[rev[lo:hi]] @ omega
    mx = f.max(axis=1, keepdims=True) if hi > lo else np.ones((0, 1))
    flat = (mx[:, 0] * theta[dst[lo:hi]] * theta[i]) < TINY
    with np.errstate(divide="ignore", invalid="ignore"):
        f = np.maximum(f / mx, TINY_REL)
    f[flat] = 1.0
    return np.log(f)


def _softmax_rows(x):
    mx = x.max(axis=-1, keepdims=True)
    w = np.exp(x - mx)
    tot = w.sum(axis=-1, keepdims=True)
    return w / tot, (mx + np.log(tot))[..., 0], mx[..., 0]


def sweep_async(indptr, dst, rev, theta, log_gamma, omega, msgs, marg, field,
                order, damping, update_field):
    resid = 0.0
    for i in order:
        lo, hi = indptr[i], indptr[i + 1]
        base = log_gamma - theta[i] * field
        if base.max() == -np.inf:
            return resid, (lo if hi > lo else -2)
        logf = _incoming_rel(i, lo, hi, dst, rev, theta, omega, msgs)
        acc = logf.sum(axis=0)
        new_marg, _, mx = _softmax_rows(base + acc)
        if update_field:
            field += theta[i] * ((new_marg - marg[i]) @ omega)
        marg[i] = new_marg
        if hi == lo:
            continue
        new, _, mx = _softmax_rows(base + acc - logf)
        bad = np.flatnonzero(mx == -np.inf)
        if bad.size:
            return resid, int(lo + bad[0])
        if damping > 0.0:
            new = (1.0 - damping) * new + damping * msgs[lo:hi]
            new /= new.sum(axis=1, keepdims=True)
        resid = max(resid, float(np.abs(new - msgs[lo:hi]).max()))
        msgs[lo:hi] = new
    return resid, -1


def finalize(indptr, dst, rev, theta, log_gamma, omega, msgs, marg, field, log_zv, log_zcav):
    n = indptr.shape[0] - 1
    for i in range(n):
        lo, hi = indptr[i], indptr[i + 1]
        base = log_gamma - theta[i] * field
        logf = _incoming_logf(i, lo, hi, dst, rev, theta, omega, msgs)
        acc = logf.sum(axis=0)
        marg[i], log_zv[i], mx = _softmax_rows(base + acc)
        if mx == -np.inf:
            return lo if hi > lo else -2
        if hi > lo:
            _, log_zcav[lo:hi], mx = _softmax_rows(base + acc - logf)
            bad = np.flatnonzero(mx == -np.inf)
            if bad.size:
                return int(lo + bad[0])
    return -1


def sweep_sync(indptr, dst, rev, src, theta, log_gamma, omega, msgs, marg, field, damping):
    """Jacobi update of every message from a frozen copy of the previous ones.

    Vectorized over all half-edges; marginals are recomputed from the same
    snapshot.  Returns ``(max_residual, bad)`` like :func:`sweep_async`.
    """
    n = indptr.shape[0] - 1
    f = msgs[rev] @ omega  # factor carried by half-edge e into src[e]
    f *= (theta[dst] * theta[src])[:, None]
    np.maximum(f, TINY, out=f)
    logf = np.log(f)
    acc = np.zeros((n, omega.shape[0]))
    np.add.at(acc, src, logf)
    base = log_gamma[None, :] - theta[:, None] * field[None, :]
    new_marg, _, mx_v = _softmax_rows(base + acc)
    if np.any(mx_v == -np.inf):
        i = int(np.flatnonzero(mx_v == -np.inf)[0])
        return 0.0, (int(indptr[i]) if indptr[i + 1] > indptr[i] else -2)
    new, _, mx = _softmax_rows(base[src] + acc[src] - logf)
    bad = np.flatnonzero(mx == -np.inf)
    if bad.size:
        return 0.0, int(bad[0])
    if damping > 0.0:
        new = (1.0 - damping) * new + damping * msgs
        new /= new.sum(axis=1, keepdims=True)
    resid = float(np.abs(new - msgs).max()) if msgs.size else 0.0
    msgs[...] = new
    marg[...] = new_marg
    return resid, -1
