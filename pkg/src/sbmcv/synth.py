"""Planted block-model generators and brute-force oracles.

The oracles here are deliberately naive: :func:`exact_posterior` enumerates
every cluster assignment and :func:`brute_force_loocv` deletes an edge and
reruns BP.  Tests compare the cavity-based quantities against them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import brentq
from scipy.special import logsumexp

from . import bp
from .graph import Graph, from_edges, write_edge_list
from .model import DEGREE_CORRECTED, STANDARD, Hyperparams, planted_partition


@dataclass
class PlantedGraph:
    graph: Graph
    labels: np.ndarray
    hyperparams: Hyperparams
    seed: int

    def save(self, out_dir, stem: str = "graph") -> dict:
        """Write ``<stem>.edges``, ``<stem>.labels`` and ``<stem>.params.json``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "edges": out / f"{stem}.edges",
            "labels": out / f"{stem}.labels",
            "hyperparams": out / f"{stem}.params.json",
        }
        write_edge_list(self.graph, paths["edges"])
        write_labels(self.labels, paths["labels"])
        d = self.hyperparams.to_dict()
        d["seed"] = self.seed
        with open(paths["hyperparams"], "w") as fh:
            json.dump(d, fh, indent=2)
        return paths


def write_labels(labels, path, vertex_names=None) -> None:
    with open(path, "w") as fh:
        for v, lab in enumerate(labels):
            name = v if vertex_names is None else vertex_names[v]
            fh.write(f"{name}\t{int(lab)}\n")


def read_labels(path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                v, lab = line.split()[:2]
                rows.append((int(v), int(lab)))
    rows.sort()
    return np.array([lab for _, lab in rows], dtype=np.int64)


def overlap(pred, truth) -> float:
    """Fraction of vertices labelled correctly under the best label matching."""
    from scipy.optimize import linear_sum_assignment

    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape:
        raise ValueError("label vectors differ in length")
    if pred.size == 0:
        return 1.0
    k = int(max(pred.max(), truth.max())) + 1
    conf = np.zeros((k, k))
    np.add.at(conf, (pred, truth), 1.0)
    r, c = linear_sum_assignment(-conf)
    return float(conf[r, c].sum() / pred.size)


def _triangle_decode(k: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Map ``k = v(v-1)/2 + u`` (``u < v``) back to ``(u, v)``."""
    v = np.floor((1.0 + np.sqrt(1.0 + 8.0 * k.astype(np.float64))) / 2.0).astype(np.int64)
    # repair float rounding
    v -= (v * (v - 1) // 2) > k
    v += ((v + 1) * v // 2) <= k
    u = k - v * (v - 1) // 2
    return u, v


def _sample_candidates(rng, buckets, prob) -> np.ndarray:
    """Bernoulli sampling of vertex pairs bucket by bucket.

    ``buckets`` is a list of vertex arrays; pairs between buckets ``a <= b``
    are kept with probability ``prob[a, b]``.  Uses one binomial draw plus a
    sample without replacement per bucket pair.
    """
    out = []
    nb = len(buckets)
    for a in range(nb):
        va = buckets[a]
        for b in range(a, nb):
            vb = buckets[b]
            p = float(prob[a, b])
            if a == b:
                pairs = va.size * (va.size - 1) // 2
            else:
                pairs = va.size * vb.size
            if pairs == 0 or p <= 0.0:
                continue
            m = int(rng.binomial(pairs, min(p, 1.0)))
            if m == 0:
                continue
            k = rng.choice(pairs, size=m, replace=False)
            if a == b:
                u, v = _triangle_decode(k)
                out.append(np.stack([va[u], va[v]], axis=1))
            else:
                out.append(np.stack([va[k // vb.size], vb[k % vb.size]], axis=1))
    if not out:
        return np.zeros((0, 2), dtype=np.int64)
    return np.concatenate(out)


def _draw_labels(rng, gamma, n):
    return rng.choice(gamma.shape[0], size=n, p=gamma).astype(np.int64)


def sample_sbm(hp: Hyperparams, n: int | None = None, seed: int = 0) -> PlantedGraph:
    """Sample a graph from the standard SBM.

    Labels are iid from ``gamma``; each pair ``i < j`` is connected with
    probability ``omega[s_i, s_j]``.
    """
    n = hp.n if n is None else n
    if hp.kind != STANDARD:
        raise ValueError("sample_sbm needs standard hyperparameters; use sample_dcsbm")
    if np.any(hp.omega > 1) or np.any(hp.omega < 0):
        raise ValueError("omega entries must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    labels = _draw_labels(rng, hp.gamma, n)
    groups = [np.flatnonzero(labels == s) for s in range(hp.q)]
    edges = _sample_candidates(rng, groups, hp.omega)
    g = from_edges(n, edges)
    hp_n = hp if hp.n == n else Hyperparams.create(hp.gamma, hp.omega, n)
    return PlantedGraph(graph=g, labels=labels, hyperparams=hp_n, seed=seed)


def power_law_weights(rng, size: int, tau: float, d_max: float, x_min: float = 1.0) -> np.ndarray:
    """Inverse-CDF samples from density ``x**tau`` on ``[x_min, d_max]``."""
    u = rng.random(size)
    a = tau + 1.0
    if abs(a) < 1e-12:
        return x_min * (d_max / x_min) ** u
    lo, hi = x_min ** a, d_max ** a
    return (lo + u * (hi - lo)) ** (1.0 / a)


def power_law_mean(tau: float, d_max: float, x_min: float) -> float:
    a, b = x_min, d_max
    def integ(p):  # integral of x**p over [a, b]
        return np.log(b / a) if abs(p + 1.0) < 1e-12 else (b ** (p + 1) - a ** (p + 1)) / (p + 1)
    return float(integ(tau + 1.0) / integ(tau))


def power_law_min_for_mean(tau: float, d_max: float, mean: float) -> float:
    """Lower cutoff ``x_min`` giving the truncated power law the requested mean."""
    if not 1.0 < mean < d_max:
        raise ValueError("mean must lie strictly between 1 and d_max")
    return float(brentq(lambda a: power_law_mean(tau, d_max, a) - mean, 1e-9, d_max * (1 - 1e-9)))


def normalize_theta(theta: np.ndarray, labels: np.ndarray, q: int) -> np.ndarray:
    """Scale ``theta`` so that it sums to the cluster size within every cluster."""
    theta = np.asarray(theta, dtype=np.float64).copy()
    for s in range(q):
        idx = labels == s
        if idx.any():
            theta[idx] *= idx.sum() / theta[idx].sum()
    return theta


def sample_dcsbm(
    hp: Hyperparams,
    n: int | None = None,
    theta_law: str = "power-law",
    seed: int = 0,
    tau: float = -2.0,
    d_max: float = 100.0,
    mean_degree: float | None = None,
    theta=None,
) -> PlantedGraph:
    """Sample a degree-corrected SBM with ``P(edge) = min(1, theta_i omega theta_j)``.

    With ``theta_law="power-law"`` raw weights follow ``x**tau`` on
    ``[x_min, d_max]``; ``x_min`` is 1 unless ``mean_degree`` is given, in
    which case it is chosen so the raw weights (the target degrees) have that
    mean.  With ``theta_law="explicit"`` the supplied ``theta`` is used.
    Either way ``theta`` is renormalized per planted cluster.

    Pairs are sampled in buckets of similar ``theta`` (factor-2 bins) at the
    bucket's maximal probability and then thinned, so an all-ones ``theta``
    consumes the random stream exactly like :func:`sample_sbm`.
    """
    n = hp.n if n is None else n
    rng = np.random.default_rng(seed)
    labels = _draw_labels(rng, hp.gamma, n)
    if theta_law == "power-law":
        x_min = 1.0 if mean_degree is None else power_law_min_for_mean(tau, d_max, mean_degree)
        raw = power_law_weights(rng, n, tau, d_max, x_min)
    elif theta_law == "explicit":
        if theta is None:
            raise ValueError("explicit theta law needs theta")
        raw = np.asarray(theta, dtype=np.float64)
    else:
        raise ValueError(f"unknown theta law {theta_law!r}")
    th = normalize_theta(raw, labels, hp.q)

    buckets, owner, th_max = [], [], []
    for s in range(hp.q):
        members = np.flatnonzero(labels == s)
        if members.size == 0:
            continue
        key = np.floor(np.log2(th[members]) + 1e-12).astype(np.int64)
        for k in np.unique(key):
            b = members[key == k]
            buckets.append(b)
            owner.append(s)
            th_max.append(th[b].max())
    owner = np.array(owner, dtype=np.int64)
    th_max = np.array(th_max)
    pmax = np.minimum(1.0, hp.omega[np.ix_(owner, owner)] * np.outer(th_max, th_max))
    cand = _sample_candidates(rng, buckets, pmax)

    if cand.shape[0]:
        u, v = cand[:, 0], cand[:, 1]
        p = np.minimum(1.0, th[u] * hp.omega[labels[u], labels[v]] * th[v])
        bu = np.empty(n, dtype=np.int64)
        for idx, b in enumerate(buckets):
            bu[b] = idx
        keep = rng.random(cand.shape[0]) * pmax[bu[u], bu[v]] < p
        cand = cand[keep]
    g = from_edges(n, cand)
    out_hp = Hyperparams.create(hp.gamma, hp.omega, n, kind=DEGREE_CORRECTED, theta=th)
    return PlantedGraph(graph=g, labels=labels, hyperparams=out_hp, seed=seed)


def planted_dcsbm_params(q: int, c: float, eps: float, n: int) -> Hyperparams:
    """Planted-partition ``omega`` for the DC model (``theta`` filled by the sampler)."""
    base = planted_partition(q, c, eps, n)
    return Hyperparams.create(base.gamma, base.omega, n, kind=DEGREE_CORRECTED)


def mixing_to_eps(mu: float, q: int) -> float:
    """``eps`` whose equal-size planted partition sends a fraction ``mu`` of edges across clusters."""
    return mu / ((q - 1) * (1.0 - mu))


@dataclass
class ExactPosterior:
    marginals: np.ndarray
    edge_marginals: np.ndarray
    log_partition: float


MAX_ASSIGNMENTS = 2 ** 24


def exact_posterior(g: Graph, hp: Hyperparams, field=None, likelihood: str = "factorized") -> ExactPosterior:
    """Enumerate all ``q**N`` assignments.

    ``likelihood``:

    * ``"factorized"``: ``prod_i gamma_{s_i} exp(-theta_i h_{s_i}) prod_E kappa``,
      the model BP solves exactly on trees for a given field ``h``
      (default zero);
    * ``"bernoulli"``: the full edge/non-edge likelihood over all pairs;
    * ``"poisson"``: ``prod_{i<j} kappa^A exp(-kappa)``.
    """
    n, q = g.n, hp.q
    if q ** n > MAX_ASSIGNMENTS:
        raise ValueError(f"q**N = {q ** n} assignments is too many to enumerate")
    assign = np.indices((q,) * n).reshape(n, -1).T  # (q**n, n)
    with np.errstate(divide="ignore"):
        log_gamma = np.log(hp.gamma)
    logw = log_gamma[assign].sum(axis=1)
    th = hp.theta
    if likelihood == "factorized":
        h = np.zeros(q) if field is None else np.asarray(field, dtype=np.float64)
        logw = logw - (th[None, :] * h[assign]).sum(axis=1)
        pairs, present = g.edges, np.ones(g.m, dtype=bool)
    elif likelihood in ("bernoulli", "poisson"):
        iu, ju = np.triu_indices(n, 1)
        pairs = np.stack([iu, ju], axis=1)
        present = np.array([g.has_edge(i, j) for i, j in pairs], dtype=bool)
    else:
        raise ValueError(f"unknown likelihood {likelihood!r}")
    with np.errstate(divide="ignore"):
        for (i, j), a in zip(pairs, present):
            kap = th[i] * th[j] * hp.omega[assign[:, i], assign[:, j]]
            if likelihood == "factorized" or (a and likelihood == "bernoulli"):
                logw += np.log(kap)
            elif likelihood == "bernoulli":
                logw += np.log1p(-np.minimum(kap, 1.0))
            elif a:
                logw += np.log(kap) - kap
            else:
                logw -= kap
    logz = float(logsumexp(logw))
    w = np.exp(logw - logz)
    marg = np.zeros((n, q))
    for i in range(n):
        marg[i] = np.bincount(assign[:, i], weights=w, minlength=q)
    pair = np.zeros((g.m, q, q))
    for k, (i, j) in enumerate(g.edges):
        pair[k] = np.bincount(assign[:, i] * q + assign[:, j], weights=w, minlength=q * q).reshape(q, q)
    return ExactPosterior(marginals=marg, edge_marginals=pair, log_partition=logz)


def brute_force_loocv(
    g: Graph,
    hp: Hyperparams,
    edge: tuple[int, int],
    tol: float = 1e-12,
    max_sweeps: int = 5000,
    full_state: bp.BPState | None = None,
    seed: int = 0,
) -> float:
    """Edge-held-out predictive probability by deleting the edge and rerunning BP.

    Hyperparameters stay fixed.  ``full_state`` is a converged BP state on
    the full graph (computed when omitted).  The reduced graph is started
    from its messages and keeps its external field, so the run stays in the
    same basin and the only information removed is the edge itself.
    Returns ``sum_{s,t} psi'^i_s kappa_{st} psi'^j_t`` with ``psi'`` the
    marginals of the reduced graph.
    """
    i, j = edge
    if not g.has_edge(i, j):
        raise KeyError(edge)
    if full_state is None:
        full_state = bp.run_bp(g, hp, bp.init_messages(g, hp.q, seed=seed), tol=tol,
                               max_sweeps=max_sweeps, seed=seed)
    reduced = g.remove_edge(i, j)
    # half-edges are sorted by (src, dst), so dropping the two ids keeps the order
    keep = np.ones(2 * g.m, dtype=bool)
    keep[[g.half_edge(i, j), g.half_edge(j, i)]] = False
    init = full_state.copy()
    init.messages = full_state.messages[keep]
    st = bp.run_bp(reduced, hp, init, tol=tol, max_sweeps=max_sweeps, seed=seed + 1,
                   field=full_state.field)
    kap = hp.theta[i] * hp.theta[j] * hp.omega
    return float(st.marginals[i] @ kap @ st.marginals[j])
