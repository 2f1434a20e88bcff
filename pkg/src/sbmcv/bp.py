"""Belief propagation for the (degree-corrected) stochastic block model.

Cavity messages live on directed half-edges (see :mod:`sbmcv.graph`).  The
interaction with non-neighbors enters through the external field
``h[s] = sum_k theta_k sum_t psi^k_t omega[t, s]``, which is maintained
incrementally during asynchronous sweeps and recomputed from scratch every
``FIELD_REFRESH`` sweeps.

Partition terms are kept in log-space (``log_z_vertex`` etc.) because
``Z^i`` is of order ``N^{-d_i}`` and underflows for hubs.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import kernels
from .graph import Graph
from .model import Hyperparams

logger = logging.getLogger(__name__)

FIELD_REFRESH = 10
PERTURBATION = 0.05


class BPError(RuntimeError):
    """Raised when a message normalization vanishes."""

    def __init__(self, g: Graph, bad: int):
        if bad >= 0:
            i, j = int(g.src[bad]), int(g.dst[bad])
            msg = f"normalization underflow on half-edge {bad} ({i} -> {j})"
        else:
            msg = "normalization underflow on an isolated vertex"
        self.half_edge = bad
        super().__init__(msg + "; hyperparameters are pathological")


@dataclass
class BPState:
    """Messages, marginals, field and partition terms of one BP run."""

    messages: np.ndarray
    marginals: np.ndarray
    field: np.ndarray
    log_z_vertex: np.ndarray | None = None
    log_z_edge: np.ndarray | None = None
    log_z_cavity: np.ndarray | None = None
    converged: bool = False
    sweeps: int = 0
    residual: float = np.inf
    damping: float = 0.0
    meta: dict = dc_field(default_factory=dict)

    @property
    def q(self) -> int:
        return int(self.marginals.shape[1])

    @property
    def z_vertex(self) -> np.ndarray:
        return np.exp(self.log_z_vertex)

    @property
    def z_edge(self) -> np.ndarray:
        return np.exp(self.log_z_edge)

    @property
    def z_cavity(self) -> np.ndarray:
        return np.exp(self.log_z_cavity)

    def copy(self) -> "BPState":
        def c(a):
            return None if a is None else a.copy()

        return BPState(
            messages=self.messages.copy(),
            marginals=self.marginals.copy(),
            field=self.field.copy(),
            log_z_vertex=c(self.log_z_vertex),
            log_z_edge=c(self.log_z_edge),
            log_z_cavity=c(self.log_z_cavity),
            converged=self.converged,
            sweeps=self.sweeps,
            residual=self.residual,
            damping=self.damping,
            meta=dict(self.meta),
        )

    def permuted(self, perm) -> "BPState":
        """Relabel clusters: new cluster ``k`` is old cluster ``perm[k]``."""
        out = self.copy()
        out.messages = self.messages[:, perm].copy()
        out.marginals = self.marginals[:, perm].copy()
        out.field = self.field[perm].copy()
        return out

    def hard_labels(self) -> np.ndarray:
        return np.argmax(self.marginals, axis=1)

    def save(self, path) -> None:
        """Write a ``.npz`` checkpoint (arrays plus JSON metadata)."""
        arrays = {"messages": self.messages, "marginals": self.marginals, "field": self.field}
        for name in ("log_z_vertex", "log_z_edge", "log_z_cavity"):
            val = getattr(self, name)
            if val is not None:
                arrays[name] = val
        meta = {
            "converged": bool(self.converged),
            "sweeps": int(self.sweeps),
            "residual": float(self.residual),
            "damping": float(self.damping),
            "meta": self.meta,
        }
        np.savez(path, _meta=np.array(json.dumps(meta)), **arrays)

    @classmethod
    def load(cls, path) -> "BPState":
        with np.load(path) as data:
            meta = json.loads(str(data["_meta"]))
            opt = {k: data[k] for k in ("log_z_vertex", "log_z_edge", "log_z_cavity") if k in data}
            return cls(
                messages=data["messages"],
                marginals=data["marginals"],
                field=data["field"],
                converged=meta["converged"],
                sweeps=meta["sweeps"],
                residual=meta["residual"],
                damping=meta["damping"],
                meta=meta["meta"],
                **opt,
            )


def _perturbed_rows(rng, rows: int, q: int) -> np.ndarray:
    x = (1.0 / q) * (1.0 + rng.uniform(-PERTURBATION, PERTURBATION, size=(rows, q)))
    return x / x.sum(axis=1, keepdims=True)


def _assignment_rows(labels, q: int, strength: float) -> np.ndarray:
    labels = np.asarray(labels)
    if q == 1:
        return np.ones((labels.shape[0], 1))
    rows = np.full((labels.shape[0], q), (1.0 - strength) / (q - 1))
    rows[np.arange(labels.shape[0]), labels] = strength
    return rows


def init_messages(
    g: Graph,
    q: int,
    mode: str = "uniform-perturbed",
    seed: int = 0,
    labels=None,
    hp: Hyperparams | None = None,
    strength: float = 0.9,
) -> BPState:
    """Initial BP state.

    ``uniform-perturbed`` draws each message as ``(1/q)(1 + u)`` renormalized
    with ``u ~ U[-0.05, 0.05]``; ``from-assignment`` puts mass ``strength`` on
    ``labels[src]``.  If ``hp`` is given the field is computed from the
    initial marginals; otherwise it is left at zero (``run_bp`` recomputes it).
    """
    if q < 1:
        raise ValueError("q must be >= 1")
    if mode == "uniform-perturbed":
        rng = np.random.default_rng(seed)
        msgs = _perturbed_rows(rng, 2 * g.m, q)
        marg = _perturbed_rows(rng, g.n, q)
    elif mode == "from-assignment":
        if labels is None:
            raise ValueError("from-assignment initialization needs labels")
        labels = np.asarray(labels)
        msgs = _assignment_rows(labels[g.src], q, strength)
        marg = _assignment_rows(labels, q, strength)
    else:
        raise ValueError(f"unknown init mode {mode!r}")
    state = BPState(messages=np.ascontiguousarray(msgs), marginals=np.ascontiguousarray(marg),
                    field=np.zeros(q))
    if hp is not None:
        state.field = compute_field(state.marginals, hp)
    return state


def compute_field(marginals: np.ndarray, hp: Hyperparams) -> np.ndarray:
    """External field ``h[s] = sum_k theta_k sum_t psi^k_t omega[t, s]``."""
    return (hp.theta @ marginals) @ hp.omega


def _log_gamma(hp: Hyperparams) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(hp.gamma)


def _args(g: Graph, hp: Hyperparams):
    return (g.indptr, g.dst, g.reverse, np.ascontiguousarray(hp.theta), _log_gamma(hp),
            np.ascontiguousarray(hp.omega))


def message_update(state: BPState, hp: Hyperparams, g: Graph, e: int) -> tuple[np.ndarray, float]:
    """New value of message ``e = (i -> j)`` from the current incoming messages.

    Does not modify ``state``.  Returns the normalized row and its L-infinity
    distance to the stored message.
    """
    i, j = int(g.src[e]), int(g.dst[e])
    lo, hi = g.indptr[i], g.indptr[i + 1]
    others = np.array([k for k in range(lo, hi) if k != e], dtype=np.int64)
    logp = _log_gamma(hp) - hp.theta[i] * state.field
    if others.size:
        f = state.messages[g.reverse[others]] @ hp.omega
        f *= (hp.theta[g.dst[others]] * hp.theta[i])[:, None]
        logp = logp + np.log(np.maximum(f, kernels._bp_py.TINY)).sum(axis=0)
    mx = logp.max()
    if mx == -np.inf:
        raise BPError(g, e)
    row = np.exp(logp - mx)
    row /= row.sum()
    return row, float(np.abs(row - state.messages[e]).max())


def refresh(state: BPState, hp: Hyperparams, g: Graph, backend=None) -> None:
    """Recompute field, marginals and all partition terms in place."""
    impl = backend or kernels.get_backend()
    state.field = compute_field(state.marginals, hp)
    log_zv = np.empty(g.n)
    log_zc = np.empty(2 * g.m)
    bad = impl.finalize(*_args(g, hp), state.messages, state.marginals, state.field, log_zv, log_zc)
    if bad != -1:
        raise BPError(g, bad)
    state.log_z_vertex = log_zv
    state.log_z_cavity = log_zc
    state.log_z_edge = edge_log_partition(state, hp, g)


def edge_log_partition(state: BPState, hp: Hyperparams, g: Graph) -> np.ndarray:
    """``log Z^{ij} = log sum psi^{i->j}_s theta_i omega[s,t] theta_j psi^{j->i}_t``."""
    fwd, bwd = _edge_halves(g)
    u, v = g.edges[:, 0], g.edges[:, 1]
    z = np.einsum("es,st,et->e", state.messages[fwd], hp.omega, state.messages[bwd])
    z *= hp.theta[u] * hp.theta[v]
    with np.errstate(divide="ignore"):
        return np.log(z)


def _edge_halves(g: Graph) -> tuple[np.ndarray, np.ndarray]:
    """Half-edge ids ``(u -> v, v -> u)`` for every undirected edge ``u < v``."""
    cached = getattr(g, "_halves", None)
    if cached is None:
        fwd = np.empty(g.m, dtype=np.int64)
        bwd = np.empty(g.m, dtype=np.int64)
        h = np.arange(2 * g.m)
        is_fwd = g.src < g.dst
        fwd[g.edge_of[is_fwd]] = h[is_fwd]
        bwd[g.edge_of[~is_fwd]] = h[~is_fwd]
        cached = (fwd, bwd)
        object.__setattr__(g, "_halves", cached)
    return cached


def sweep(
    state: BPState,
    hp: Hyperparams,
    g: Graph,
    damping: float = 0.0,
    rng: np.random.Generator | int | None = None,
    schedule: str = "async",
    freeze_field: bool = False,
    backend=None,
) -> float:
    """One pass over all half-edges; mutates ``state`` and returns the max residual.

    ``async`` visits vertices in a random order from ``rng`` and updates
    each vertex's outgoing messages, its marginal and the field in turn.
    ``sync`` updates every message from a snapshot of the previous pass.
    Every ``FIELD_REFRESH`` sweeps the field and marginals are rebuilt from
    scratch to cancel incremental drift.
    """
    if not 0.0 <= damping < 1.0:
        raise ValueError("damping must lie in [0, 1)")
    impl = backend or kernels.get_backend()
    if schedule == "async":
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        order = rng.permutation(g.n).astype(np.int64)
        resid, bad = impl.sweep_async(*_args(g, hp), state.messages, state.marginals, state.field,
                                      order, float(damping), not freeze_field)
    elif schedule == "sync":
        resid, bad = kernels.sweep_sync(g.indptr, g.dst, g.reverse, g.src, hp.theta, _log_gamma(hp),
                                        hp.omega, state.messages, state.marginals, state.field,
                                        float(damping))
        if not freeze_field:
            state.field = compute_field(state.marginals, hp)
    else:
        raise ValueError(f"unknown schedule {schedule!r}")
    if bad != -1:
        raise BPError(g, bad)
    state.sweeps += 1
    if not freeze_field and state.sweeps % FIELD_REFRESH == 0:
        _rebuild_marginals(state, hp, g, impl)
    state.residual = float(resid)
    return float(resid)


def _rebuild_marginals(state, hp, g, impl):
    state.field = compute_field(state.marginals, hp)
    log_zv = np.empty(g.n)
    log_zc = np.empty(2 * g.m)
    bad = impl.finalize(*_args(g, hp), state.messages, state.marginals, state.field, log_zv, log_zc)
    if bad != -1:
        raise BPError(g, bad)
    state.field = compute_field(state.marginals, hp)


def run_bp(
    g: Graph,
    hp: Hyperparams,
    init: BPState,
    tol: float = 1e-6,
    max_sweeps: int = 500,
    damping: float = 0.0,
    seed: int = 0,
    retry_damping: float | None = 0.3,
    schedule: str = "async",
    field: np.ndarray | None = None,
    backend=None,
) -> BPState:
    """Iterate sweeps until the max message change drops below ``tol``.

    Returns a new state with partition terms filled in.  A run that hits
    ``max_sweeps`` is returned with ``converged=False``; if ``damping`` was
    zero it is first retried from where it stopped with ``retry_damping``.
    Passing ``field`` holds the external field fixed at that value.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    impl = backend or kernels.get_backend()
    state = init.copy()
    state.messages = np.ascontiguousarray(state.messages, dtype=np.float64)
    state.marginals = np.ascontiguousarray(state.marginals, dtype=np.float64)
    freeze = field is not None
    if freeze:
        state.field = np.array(field, dtype=np.float64)
    else:
        state.field = compute_field(state.marginals, hp)
    state.sweeps = 0
    state.converged = False
    rng = np.random.default_rng(seed)

    def _iterate(lam, budget):
        for _ in range(budget):
            r = sweep(state, hp, g, damping=lam, rng=rng, schedule=schedule,
                      freeze_field=freeze, backend=impl)
            if r < tol:
                return True
        return False

    state.damping = damping
    ok = _iterate(damping, max_sweeps)
    if not ok and damping == 0.0 and retry_damping:
        logger.debug("BP not converged after %d sweeps; retrying with damping %.2f",
                     state.sweeps, retry_damping)
        state.damping = retry_damping
        ok = _iterate(retry_damping, max_sweeps)
    state.converged = ok
    if freeze:
        log_zv = np.empty(g.n)
        log_zc = np.empty(2 * g.m)
        bad = impl.finalize(*_args(g, hp), state.messages, state.marginals, state.field,
                            log_zv, log_zc)
        if bad != -1:
            raise BPError(g, bad)
        state.log_z_vertex, state.log_z_cavity = log_zv, log_zc
        state.log_z_edge = edge_log_partition(state, hp, g)
    else:
        refresh(state, hp, g, impl)
    return state


def non_edge_term(state: BPState, hp: Hyperparams, g: Graph) -> float:
    """Mean-field non-edge contribution ``-(1/2) sum (theta psi)^T omega (theta psi)``.

    Equals ``-L`` at an EM fixed point; reported for diagnostics only.
    """
    t = hp.theta @ state.marginals
    return float(-0.5 * t @ hp.omega @ t)


def bethe_vertex_terms(state: BPState, g: Graph) -> np.ndarray:
    """Per-vertex split of ``N f`` before constants: ``-log Z^i + (1/2) sum_j log Z^{ij}``."""
    half = np.zeros(g.n)
    np.add.at(half, g.edges[:, 0], 0.5 * state.log_z_edge)
    np.add.at(half, g.edges[:, 1], 0.5 * state.log_z_edge)
    return -state.log_z_vertex + half


def bethe_free_energy(state: BPState, hp: Hyperparams, g: Graph, extensive: bool = True) -> float:
    """Bethe free energy per vertex.

    ``f = -(1/N) sum_i log Z^i + (1/N) sum_E log Z^{ij} - c/2``, with
    ``-(c/2) log N`` added when ``extensive`` so that ``f`` stays O(1) as
    ``N`` grows.  The degree-corrected model uses the same form; its
    non-edge term is approximated by ``-L`` exactly as in the standard case.
    """
    if state.log_z_vertex is None or state.log_z_edge is None:
        raise ValueError("state has no partition terms; run refresh() first")
    n = g.n
    c = g.mean_degree
    f = (-state.log_z_vertex.sum() + state.log_z_edge.sum()) / n - c / 2.0
    if extensive:
        f -= 0.5 * c * np.log(n)
    return float(f)


def bethe_log_partition(state: BPState) -> float:
    """``sum_i log Z^i - sum_E log Z^{ij}``; exact log-partition on trees."""
    return float(state.log_z_vertex.sum() - state.log_z_edge.sum())
