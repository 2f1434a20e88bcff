import sys

import numpy as np
import pytest

from sbmcv.graph import from_edges
from sbmcv.model import Hyperparams, planted_partition
from sbmcv import synth


def random_tree(n, rng):
    """Uniform random recursive tree on ``n`` vertices, relabelled at random."""
    perm = rng.permutation(n)
    edges = [(perm[k], perm[rng.integers(k)]) for k in range(1, n)]
    return from_edges(n, np.array(edges, dtype=np.int64).reshape(-1, 2))


def random_hyperparams(q, n, rng, kind="standard", scale=1.0):
    """Random valid parameters; ``omega`` entries are O(1) so trees stay informative."""
    gamma = rng.dirichlet(np.full(q, 2.0))
    w = rng.uniform(0.05, 1.0, size=(q, q)) * scale
    omega = np.minimum((w + w.T) / 2, 1.0)
    theta = rng.uniform(0.5, 1.5, size=n) if kind != "standard" else None
    return Hyperparams.create(gamma, omega, n, kind=kind, theta=theta)


@pytest.fixture(scope="session")
def planted_small():
    hp = planted_partition(2, 6.0, 0.1, 400)
    return synth.sample_sbm(hp, seed=5)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.RESULTS:
        terminalreporter.write_line(line)
