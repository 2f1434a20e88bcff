"""Initial hyperparameters for EM: spectral, assortative and polarized."""

from __future__ import annotations

import logging
import warnings

import numpy as np
from scipy.sparse import csr_matrix, diags
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from .graph import Graph, largest_component
from .model import DEGREE_CORRECTED, Hyperparams, canonical_kind

logger = logging.getLogger(__name__)

DENSE_LIMIT = 2000


class SpectralFailure(RuntimeError):
    pass


def _degree_theta(g: Graph) -> np.ndarray:
    d = g.degrees.astype(np.float64)
    c = d.mean()
    return d / c if c > 0 else np.ones(g.n)


def labels_to_theta(g: Graph, labels: np.ndarray, q: int) -> np.ndarray:
    """``theta_i = d_i / dbar_{s_i}`` with ``dbar`` the mean degree of the cluster."""
    d = g.degrees.astype(np.float64)
    theta = np.ones(g.n)
    for s in range(q):
        idx = labels == s
        if idx.any():
            tot = d[idx].sum()
            if tot > 0:
                theta[idx] = d[idx] * idx.sum() / tot
    return theta


def block_counts(g: Graph, labels: np.ndarray, q: int) -> tuple[np.ndarray, np.ndarray]:
    """Cluster sizes ``n_s`` and edge counts ``m_st`` (diagonal counted twice)."""
    sizes = np.bincount(labels, minlength=q).astype(np.float64)
    a, b = labels[g.edges[:, 0]], labels[g.edges[:, 1]]
    m = np.zeros((q, q))
    np.add.at(m, (a, b), 1.0)
    np.add.at(m, (b, a), 1.0)
    return sizes, m


def params_from_labels(g: Graph, labels: np.ndarray, q: int, kind: str = "standard") -> Hyperparams:
    """Counting estimates ``gamma = n_s/N`` and ``omega = m_st/(n_s n_t)``."""
    kind = canonical_kind(kind)
    sizes, m = block_counts(g, labels, q)
    with np.errstate(divide="ignore", invalid="ignore"):
        omega = np.where(np.outer(sizes, sizes) > 0, m / np.outer(sizes, sizes), 0.0)
    if kind != DEGREE_CORRECTED:
        omega = np.minimum(omega, 1.0)
        theta = None
    else:
        theta = labels_to_theta(g, labels, q)
    return Hyperparams.create(sizes / g.n, omega, g.n, kind=kind, theta=theta)


def spectral_embedding(g: Graph, q: int, seed: int = 0) -> np.ndarray:
    """Eigenvectors of ``I - D^{-1/2} A D^{-1/2}`` for the ``q`` smallest eigenvalues."""
    d = g.degrees.astype(np.float64)
    inv = np.zeros_like(d)
    inv[d > 0] = 1.0 / np.sqrt(d[d > 0])
    adj = csr_matrix((np.ones(2 * g.m), g.dst, g.indptr), shape=(g.n, g.n))
    s = diags(inv) @ adj @ diags(inv)
    if g.n < DENSE_LIMIT or q >= g.n - 1:
        lap = np.eye(g.n) - s.toarray()
        _, vecs = np.linalg.eigh(lap)
        return vecs[:, :q]
    # smallest eigenvalues of I - S are the largest of S
    v0 = np.random.default_rng(seed).standard_normal(g.n)
    try:
        vals, vecs = eigsh(s, k=q, which="LA", v0=v0, tol=1e-8, maxiter=max(1000, 20 * g.n))
    except ArpackNoConvergence as exc:
        raise SpectralFailure(str(exc)) from exc
    return vecs[:, np.argsort(-vals)]


def kmeans(x: np.ndarray, k: int, seed: int = 0, n_init: int = 10, max_iter: int = 100) -> np.ndarray:
    from sklearn.cluster import KMeans

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # duplicate points / convergence chatter
        km = KMeans(n_clusters=k, init="k-means++", n_init=n_init, max_iter=max_iter, random_state=seed % 2 ** 32)
        return km.fit_predict(x).astype(np.int64)


def spectral_labels(g: Graph, q: int, seed: int = 0) -> np.ndarray:
    """k-means labels on the row-normalized spectral embedding.

    Each connected component contributes its own zero eigenvalue, so on a
    disconnected graph the embedding is computed for the largest component
    only and the remaining vertices get uniform random labels.
    """
    if q > g.n:
        raise ValueError("q exceeds the number of vertices")
    if q == 1:
        return np.zeros(g.n, dtype=np.int64)
    sub, old_to_new = largest_component(g)
    if sub.n < g.n:
        labels = np.random.default_rng(seed).integers(q, size=g.n)
        if sub.n > q:
            keep = old_to_new >= 0
            labels[keep] = spectral_labels(sub, q, seed=seed)[old_to_new[keep]]
        return labels.astype(np.int64)
    emb = spectral_embedding(g, q, seed=seed)
    norms = np.linalg.norm(emb, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return kmeans(emb / norms, q, seed=seed)


def spectral_init(g: Graph, q: int, seed: int = 0, kind: str = "standard") -> tuple[np.ndarray, Hyperparams]:
    """Spectral clustering labels and the counting hyperparameters they imply."""
    labels = spectral_labels(g, q, seed=seed)
    return labels, params_from_labels(g, labels, q, kind=kind)


def _scaled(weights: np.ndarray, g: Graph, kind: str) -> Hyperparams:
    """Scale a relative affinity pattern so that ``N gamma^T omega gamma = c``."""
    q = weights.shape[0]
    gamma = np.full(q, 1.0 / q)
    c = g.mean_degree
    scale = c / (g.n * (gamma @ weights @ gamma))
    omega = weights * scale
    theta = _degree_theta(g) if kind == DEGREE_CORRECTED else None
    if kind != DEGREE_CORRECTED:
        omega = np.minimum(omega, 1.0)
    return Hyperparams.create(gamma, omega, g.n, kind=kind, theta=theta)


def assortative_init(g: Graph, q: int, ratio: float = 10.0, kind: str = "standard") -> Hyperparams:
    """Equal clusters with diagonal affinity ``ratio`` times the off-diagonal."""
    w = np.ones((q, q))
    np.fill_diagonal(w, ratio)
    return _scaled(w, g, canonical_kind(kind))


def polarized_init(g: Graph, q: int, seed: int = 0, ratio: float = 10.0,
                   kind: str = "standard") -> tuple[Hyperparams, tuple[int, int]]:
    """Equal clusters where one random unordered pair ``(s, t)`` has ``ratio`` times the affinity."""
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(q)
    k = int(rng.integers(iu.size))
    s, t = int(iu[k]), int(ju[k])
    w = np.ones((q, q))
    w[s, t] = w[t, s] = ratio
    return _scaled(w, g, canonical_kind(kind)), (s, t)
