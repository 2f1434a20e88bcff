"""Model-assessment objectives computed from a converged BP state.

All four errors keep only their edge sums; the non-edge contribution is a
constant (the expected edge count over ``L``, up to ``O(1/N)``) that cancels
when comparing different ``q``.  Absolute values therefore differ from a
naive cross-entropy by that constant.

Per edge ``(i, j)`` with cavity messages ``a = psi^{i->j}``, ``b = psi^{j->i}``
and kernel ``kappa`` (``omega`` or ``theta_i omega theta_j``):

* ``p_cav = a_s b_t`` (edge held out),
* ``p_full = a_s kappa_st b_t / Z^{ij}`` (edge included),
* Bayes:    ``-log Z^{ij}``,
* Gibbs:    ``-sum p_cav log kappa``,
* MAP:      Gibbs with ``a, b`` replaced by point masses at their argmax,
* training: ``-sum p_full log kappa``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import bp, em
from .graph import Graph
from .model import Hyperparams, canonical_kind

logger = logging.getLogger(__name__)

CRITERIA = ("gibbs", "bayes", "training", "map", "bethe")

CSV_COLUMNS = ["q", "f_bethe", "e_bayes", "se_bayes", "e_gibbs", "se_gibbs", "e_map", "se_map",
               "e_training", "se_training", "kl_gap_gibbs", "kl_gap_training", "converged", "init_used"]


@dataclass
class EdgeErrorTerms:
    bayes: np.ndarray
    gibbs: np.ndarray
    map: np.ndarray
    training: np.ndarray
    kl_gibbs: np.ndarray
    kl_training: np.ndarray
    clamps: int = 0


@dataclass
class AssessmentRow:
    q: int
    f_bethe: float
    e_bayes: float
    e_gibbs: float
    e_map: float
    e_training: float
    se_bayes: float
    se_gibbs: float
    se_map: float
    se_training: float
    kl_gap_gibbs: float
    kl_gap_training: float
    converged: bool
    init_used: str
    se_bethe: float = float("nan")
    kappa_clamps: int = 0
    fe_trace: list = field(default_factory=list)

    def error(self, criterion: str) -> tuple[float, float]:
        """``(value, standard error)`` of the named criterion."""
        if criterion == "bethe":
            return self.f_bethe, self.se_bethe
        if criterion not in CRITERIA:
            raise ValueError(f"unknown criterion {criterion!r}")
        return getattr(self, f"e_{criterion}"), getattr(self, f"se_{criterion}")

    def csv_row(self) -> list:
        out = []
        for col in CSV_COLUMNS:
            v = getattr(self, col)
            if isinstance(v, bool):
                out.append("true" if v else "false")
            elif isinstance(v, float):
                out.append(repr(v))
            else:
                out.append(str(v))
        return out

    def to_dict(self) -> dict:
        d = {c: getattr(self, c) for c in CSV_COLUMNS}
        d.update(se_bethe=self.se_bethe, kappa_clamps=self.kappa_clamps, fe_trace=list(self.fe_trace))
        return d


def kappa_floor(n: int) -> float:
    return 1e-12 / n


def _edge_arrays(state: bp.BPState, hp: Hyperparams, g: Graph):
    fwd, bwd = bp._edge_halves(g)
    a = state.messages[fwd]
    b = state.messages[bwd]
    u, v = g.edges[:, 0], g.edges[:, 1]
    kap = (hp.theta[u] * hp.theta[v])[:, None, None] * hp.omega[None, :, :]
    return a, b, kap


def _safe_log_kappa(kap: np.ndarray, n: int) -> tuple[np.ndarray, int]:
    floor = kappa_floor(n)
    low = kap < floor
    return np.log(np.where(low, floor, kap)), int(low.sum())


def standard_error(terms) -> float:
    """Sample standard deviation over ``sqrt(len)``; 0 for fewer than two terms."""
    x = np.asarray(terms, dtype=np.float64)
    if x.size < 2:
        return 0.0
    return float(x.std(ddof=1) / math.sqrt(x.size))


def e_bayes(state: bp.BPState, g: Graph | None = None) -> tuple[float, np.ndarray]:
    """Held-out edge cross-entropy ``-(1/L) sum log Z^{ij}``."""
    lz = state.log_z_edge
    if lz is None:
        raise ValueError("state has no edge partition terms")
    if not np.all(np.isfinite(lz)):
        raise FloatingPointError("Z^{ij} <= 0 on some edge")
    terms = -lz
    return float(terms.mean()) if terms.size else 0.0, terms


def e_bayes_vertex_form(state: bp.BPState, g: Graph) -> float:
    """Same quantity via ``-(1/2L) sum_i sum_{k in di} (log Z^i - log Z^{k->i})``."""
    # half-edge e = (i -> k); its reverse is (k -> i)
    lzc_into = state.log_z_cavity[g.reverse]
    tot = (state.log_z_vertex[g.src] - lzc_into).sum()
    return float(-tot / (2 * g.m))


def e_gibbs(state: bp.BPState, hp: Hyperparams, g: Graph) -> tuple[float, np.ndarray]:
    a, b, kap = _edge_arrays(state, hp, g)
    logk, _ = _safe_log_kappa(kap, g.n)
    terms = -np.einsum("es,et,est->e", a, b, logk)
    return float(terms.mean()) if terms.size else 0.0, terms


def _argmax_onehot(x: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x)
    out[np.arange(x.shape[0]), np.argmax(x, axis=1)] = 1.0
    return out


def e_map(state: bp.BPState, hp: Hyperparams, g: Graph) -> tuple[float, np.ndarray]:
    a, b, kap = _edge_arrays(state, hp, g)
    logk, _ = _safe_log_kappa(kap, g.n)
    terms = -np.einsum("es,et,est->e", _argmax_onehot(a), _argmax_onehot(b), logk)
    return float(terms.mean()) if terms.size else 0.0, terms


def _posteriors(state, hp, g):
    a, b, kap = _edge_arrays(state, hp, g)
    p_cav = a[:, :, None] * b[:, None, :]
    joint = p_cav * kap
    p_full = joint / joint.sum(axis=(1, 2), keepdims=True)
    return p_cav, p_full, kap


def e_training(state: bp.BPState, hp: Hyperparams, g: Graph) -> tuple[float, np.ndarray]:
    _, p_full, kap = _posteriors(state, hp, g)
    logk, _ = _safe_log_kappa(kap, g.n)
    terms = -(p_full * logk).sum(axis=(1, 2))
    return float(terms.mean()) if terms.size else 0.0, terms


def kl_gaps(state: bp.BPState, hp: Hyperparams, g: Graph) -> tuple[float, float, np.ndarray, np.ndarray]:
    """Mean ``KL(p_cav || p_full)`` and ``KL(p_full || p_cav)`` over edges, plus per-edge terms.

    Since ``p_full / p_cav = kappa / Z^{ij}`` the divergences are evaluated
    as ``sum p (log Z - log kappa)`` with the same kernel floor as the error
    terms.  A zero kernel entry then gives a large but finite gap, and
    ``E_Gibbs - E_Bayes`` and ``E_Bayes - E_training`` equal the two gaps.
    """
    p_cav, p_full, kap = _posteriors(state, hp, g)
    if kap.shape[0] == 0:
        return 0.0, 0.0, np.zeros(0), np.zeros(0)
    logk, _ = _safe_log_kappa(kap, g.n)
    lz = np.log((p_cav * kap).sum(axis=(1, 2)))[:, None, None]
    kg = (p_cav * (lz - logk)).sum(axis=(1, 2))
    kt = (p_full * (logk - lz)).sum(axis=(1, 2))
    return float(kg.mean()), float(kt.mean()), kg, kt


def edge_terms(state: bp.BPState, hp: Hyperparams, g: Graph) -> EdgeErrorTerms:
    _, tb = e_bayes(state, g)
    _, tg = e_gibbs(state, hp, g)
    _, tm = e_map(state, hp, g)
    _, tt = e_training(state, hp, g)
    _, _, kg, kt = kl_gaps(state, hp, g)
    _, _, kap = _edge_arrays(state, hp, g)
    _, clamps = _safe_log_kappa(kap, g.n)
    return EdgeErrorTerms(bayes=tb, gibbs=tg, map=tm, training=tt, kl_gibbs=kg, kl_training=kt,
                          clamps=clamps)


def kl_divergence(p, r) -> float:
    p = np.asarray(p, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(p > 0, p * (np.log(p) - np.log(r)), 0.0)
    return float(t.sum())


def coarse_grain(p, partition) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    return np.array([p[list(part)].sum() for part in partition])


def kl_refinement_check(p, r, partition) -> tuple[float, float]:
    """KL divergence of ``p`` from ``r`` before and after coarse-graining.

    ``partition`` is a family of disjoint index sets covering every index
    once.  Raises ``AssertionError`` if the coarse divergence exceeds the
    fine one by more than rounding.
    """
    n = len(p)
    flat = sorted(i for part in partition for i in part)
    if flat != list(range(n)):
        raise ValueError("partition must cover every index exactly once")
    fine = kl_divergence(p, r)
    coarse = kl_divergence(coarse_grain(p, partition), coarse_grain(r, partition))
    assert fine >= coarse - 1e-12 * max(1.0, abs(fine)), (fine, coarse)
    return fine, coarse


def assess(fit: em.FitResult, g: Graph, q: int | None = None) -> AssessmentRow:
    st, hp = fit.state, fit.hyperparams
    t = edge_terms(st, hp, g)
    vt = bp.bethe_vertex_terms(st, g)
    return AssessmentRow(
        q=hp.q if q is None else q,
        f_bethe=float(fit.free_energy),
        e_bayes=float(t.bayes.mean()),
        e_gibbs=float(t.gibbs.mean()),
        e_map=float(t.map.mean()),
        e_training=float(t.training.mean()),
        se_bayes=standard_error(t.bayes),
        se_gibbs=standard_error(t.gibbs),
        se_map=standard_error(t.map),
        se_training=standard_error(t.training),
        kl_gap_gibbs=float(t.kl_gibbs.mean()),
        kl_gap_training=float(t.kl_training.mean()),
        converged=bool(fit.converged),
        init_used=fit.init_used,
        se_bethe=float(vt.std(ddof=1) / math.sqrt(g.n)) if g.n > 1 else 0.0,
        kappa_clamps=t.clamps,
        fe_trace=list(fit.fe_trace),
    )


def _fit_and_assess(args):
    g, q, kind, cfg = args
    return assess(em.fit(g, q, kind=kind, cfg=cfg), g, q)


def sweep(g: Graph, q_range, kind: str = "standard", cfg: em.FitConfig | None = None,
          jobs: int = 1) -> list[AssessmentRow]:
    """Fit and assess every ``q`` in ``q_range`` (inclusive ``(qmin, qmax)`` or an iterable)."""
    cfg = cfg or em.FitConfig()
    kind = canonical_kind(kind)
    if isinstance(q_range, tuple) and len(q_range) == 2:
        qs = list(range(q_range[0], q_range[1] + 1))
    else:
        qs = list(q_range)
    tasks = [(g, q, kind, cfg) for q in qs]
    if jobs > 1 and len(qs) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_fit_and_assess, tasks))
    else:
        rows = [_fit_and_assess(t) for t in tasks]
    return sorted(rows, key=lambda r: r.q)


def one_se_select(rows: list[AssessmentRow], criterion: str = "gibbs") -> int:
    """Smallest ``q`` whose error is within one standard error of the best ``q``."""
    if not rows:
        raise ValueError("no rows")
    rows = sorted(rows, key=lambda r: r.q)
    vals = [r.error(criterion) for r in rows]
    k = min(range(len(rows)), key=lambda i: (vals[i][0], rows[i].q))
    best, se = vals[k]
    thresh = best + (0.0 if not np.isfinite(se) else se)
    for r, (v, _) in zip(rows, vals):
        if v <= thresh:
            return r.q
    return rows[k].q


def write_csv(rows: list[AssessmentRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow(r.csv_row())


def read_csv(path) -> list[AssessmentRow]:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            kw = {}
            for k, v in rec.items():
                if k == "q":
                    kw[k] = int(v)
                elif k == "converged":
                    kw[k] = v == "true"
                elif k == "init_used":
                    kw[k] = v
                else:
                    kw[k] = float(v)
            rows.append(AssessmentRow(**kw))
    return rows


def write_json(rows: list[AssessmentRow], path, extra: dict | None = None) -> None:
    doc = {"rows": [r.to_dict() for r in rows]}
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
