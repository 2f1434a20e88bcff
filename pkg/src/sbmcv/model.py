"""Block-model hyperparameters shared by the standard and degree-corrected SBM.

Connection strengths are treated as Poisson rates: the expected number of
edges between vertices ``i`` and ``j`` in clusters ``s`` and ``t`` is
``theta[i] * omega[s, t] * theta[j]``.  In the sparse regime (``omega`` of
order ``1/N``) this coincides with the Bernoulli edge probability up to
``O(1/N)``, so the standard model is just the case ``theta == 1``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

STANDARD = "standard"
DEGREE_CORRECTED = "degree-corrected"
KINDS = (STANDARD, DEGREE_CORRECTED)

_ALIASES = {"sbm": STANDARD, "standard": STANDARD, "dcsbm": DEGREE_CORRECTED,
            "dc": DEGREE_CORRECTED, "degree-corrected": DEGREE_CORRECTED}


def canonical_kind(kind: str) -> str:
    try:
        return _ALIASES[kind]
    except KeyError:
        raise ValueError(f"unknown model kind {kind!r}") from None


@dataclass
class ClampCounter:
    """Counts kernel values that exceeded 1 and were clamped."""

    count: int = 0


@dataclass(frozen=True, eq=False)
class Hyperparams:
    """Parameters ``(q, gamma, omega, theta)`` of an SBM or DC-SBM.

    ``theta`` is stored per vertex for both kinds (all ones for the standard
    model) so the inference code never branches on the kind.
    """

    gamma: np.ndarray
    omega: np.ndarray
    theta: np.ndarray
    kind: str = STANDARD
    clamps: ClampCounter = field(default_factory=ClampCounter, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", canonical_kind(self.kind))
        object.__setattr__(self, "gamma", np.asarray(self.gamma, dtype=np.float64))
        object.__setattr__(self, "omega", np.atleast_2d(np.asarray(self.omega, dtype=np.float64)))
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=np.float64))

    @classmethod
    def create(cls, gamma, omega, n: int, kind: str = STANDARD, theta=None) -> "Hyperparams":
        theta = np.ones(n) if theta is None else theta
        hp = cls(gamma=gamma, omega=omega, theta=theta, kind=kind)
        hp.validate()
        return hp

    @property
    def q(self) -> int:
        return int(self.gamma.shape[0])

    @property
    def n(self) -> int:
        return int(self.theta.shape[0])

    @property
    def degree_corrected(self) -> bool:
        return self.kind == DEGREE_CORRECTED

    def with_(self, **changes) -> "Hyperparams":
        changes.setdefault("clamps", ClampCounter())
        return replace(self, **changes)

    def validate(self, atol: float = 1e-9) -> None:
        q = self.q
        if q < 1:
            raise ValueError("q must be >= 1")
        if self.omega.shape != (q, q):
            raise ValueError(f"omega must be {q}x{q}, got {self.omega.shape}")
        if np.any(self.gamma < 0) or abs(self.gamma.sum() - 1.0) > atol:
            raise ValueError("gamma must be a probability vector")
        if not np.allclose(self.omega, self.omega.T, rtol=1e-12, atol=0):
            raise ValueError("omega must be symmetric")
        if np.any(self.omega < 0):
            raise ValueError("omega must be nonnegative")
        if self.kind == STANDARD:
            if np.any(self.omega > 1):
                raise ValueError("omega entries must be <= 1 for the standard model")
            if not np.all(self.theta == 1.0):
                raise ValueError("theta must be identically 1 for the standard model")
        elif np.any(self.theta < 0) or not np.all(np.isfinite(self.theta)):
            raise ValueError("theta must be finite and nonnegative")

    def kernel(self, i: int, j: int, s: int, t: int) -> float:
        """Connection probability for vertices ``i, j`` in clusters ``s, t``.

        Values above 1 (possible for degree-corrected hubs) are clamped and
        counted in ``self.clamps``.
        """
        q = self.q
        if not (0 <= s < q and 0 <= t < q):
            raise IndexError(f"cluster index out of range for q={q}")
        if not (0 <= i < self.n and 0 <= j < self.n):
            raise IndexError("vertex index out of range")
        val = float(self.theta[i] * self.omega[s, t] * self.theta[j])
        if val > 1.0:
            self.clamps.count += 1
            return 1.0
        return val

    def expected_degree(self) -> float:
        """Mean degree ``N * gamma^T omega gamma`` implied by the parameters."""
        return float(self.n * self.gamma @ self.omega @ self.gamma)

    def permuted(self, perm) -> "Hyperparams":
        """Relabel clusters: new cluster ``k`` is old cluster ``perm[k]``."""
        perm = np.asarray(perm)
        return self.with_(gamma=self.gamma[perm], omega=self.omega[np.ix_(perm, perm)])

    def to_dict(self, include_theta: bool = True) -> dict:
        d = {
            "q": self.q,
            "kind": self.kind,
            "gamma": self.gamma.tolist(),
            "omega": self.omega.tolist(),
        }
        if include_theta and (self.degree_corrected or not np.all(self.theta == 1.0)):
            d["theta"] = self.theta.tolist()
        d["n"] = self.n
        return d

    @classmethod
    def from_dict(cls, d: dict, n: int | None = None) -> "Hyperparams":
        n = d.get("n", n)
        theta = d.get("theta")
        if theta is None:
            if n is None:
                raise ValueError("hyperparams without theta need an explicit vertex count")
            theta = np.ones(n)
        hp = cls(gamma=d["gamma"], omega=d["omega"], theta=theta, kind=d.get("kind", STANDARD))
        if "q" in d and d["q"] != hp.q:
            raise ValueError("q does not match gamma length")
        hp.validate()
        return hp

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def from_json(cls, path, n: int | None = None) -> "Hyperparams":
        with open(path) as fh:
            return cls.from_dict(json.load(fh), n=n)


def planted_partition(q: int, c: float, eps: float, n: int) -> Hyperparams:
    """Equal-size planted partition with ``omega_out = eps * omega_in``.

    Scaled so that the expected mean degree is ``c``:
    ``omega_in = q c / (N (1 + (q - 1) eps))``.
    """
    if q < 1:
        raise ValueError("q must be >= 1")
    if not 0.0 <= eps <= 1.0:
        raise ValueError("eps must lie in [0, 1]")
    if c <= 0:
        raise ValueError("c must be positive")
    w_in = q * c / (n * (1.0 + (q - 1) * eps))
    omega = np.full((q, q), eps * w_in)
    np.fill_diagonal(omega, w_in)
    return Hyperparams.create(np.full(q, 1.0 / q), omega, n)
