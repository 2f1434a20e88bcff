import numpy as np
import pytest

from sbmcv import _bp_py, bp, kernels, synth
from sbmcv.graph import from_edges
from sbmcv.model import Hyperparams, planted_partition

from conftest import random_hyperparams, random_tree


def _converged(g, hp, seed=0, **kw):
    st = bp.run_bp(g, hp, bp.init_messages(g, hp.q, seed=seed), tol=1e-13, max_sweeps=2000,
                   seed=seed, **kw)
    assert st.converged
    return st


def test_three_vertex_path_matches_enumeration():
    g = from_edges(3, [(0, 1), (1, 2)])
    hp = Hyperparams.create([0.3, 0.7], [[0.6, 0.1], [0.1, 0.4]], 3)
    st = _converged(g, hp)
    ex = synth.exact_posterior(g, hp, field=st.field)
    np.testing.assert_allclose(st.marginals, ex.marginals, atol=1e-12)
    assert bp.bethe_log_partition(st) == pytest.approx(ex.log_partition, abs=1e-12)


@pytest.mark.parametrize("kind", ["standard", "dcsbm"])
def test_random_trees_exact(kind):
    rng = np.random.default_rng(7)
    for _ in range(15):
        n = int(rng.integers(2, 10))
        q = int(rng.integers(1, 4))
        g = random_tree(n, rng)
        hp = random_hyperparams(q, n, rng, kind=kind)
        st = _converged(g, hp, seed=int(rng.integers(1000)))
        ex = synth.exact_posterior(g, hp, field=st.field)
        np.testing.assert_allclose(st.marginals, ex.marginals, atol=1e-10)
        assert bp.bethe_log_partition(st) == pytest.approx(ex.log_partition, abs=1e-10)


def test_tree_free_energy_convention():
    rng = np.random.default_rng(3)
    g = random_tree(8, rng)
    hp = random_hyperparams(2, 8, rng)
    st = _converged(g, hp)
    ex = synth.exact_posterior(g, hp, field=st.field)
    c = g.mean_degree
    expect = -ex.log_partition / g.n - c / 2 - 0.5 * c * np.log(g.n)
    assert bp.bethe_free_energy(st, hp, g) == pytest.approx(expect, abs=1e-12)
    assert bp.bethe_free_energy(st, hp, g, extensive=False) == pytest.approx(expect + 0.5 * c * np.log(g.n))


def test_q1_closed_form(planted_small):
    g = planted_small.graph
    w = 2 * g.m / g.n ** 2
    hp = Hyperparams.create([1.0], [[w]], g.n)
    st = _converged(g, hp)
    c = g.mean_degree
    expect = g.n * w - g.m / g.n * np.log(w) - c / 2 - 0.5 * c * np.log(g.n)
    assert bp.bethe_free_energy(st, hp, g) == pytest.approx(expect, abs=1e-12)
    # reduces to c/2 - (c/2) log c
    assert expect == pytest.approx(c / 2 - 0.5 * c * np.log(c), abs=1e-12)
    np.testing.assert_allclose(st.log_z_edge, np.log(w), rtol=1e-14)


def test_compiled_matches_python(planted_small):
    if kernels.BACKEND != "compiled":
        pytest.skip("compiled kernel not built")
    g = planted_small.graph
    hp = planted_partition(2, 6.0, 0.1, g.n)
    init = bp.init_messages(g, 2, seed=4)
    a = bp.run_bp(g, hp, init, seed=9, max_sweeps=40, backend=kernels.get_backend("compiled"))
    b = bp.run_bp(g, hp, init, seed=9, max_sweeps=40, backend=kernels.get_backend("python"))
    assert a.sweeps == b.sweeps
    np.testing.assert_allclose(a.messages, b.messages, atol=1e-11)
    np.testing.assert_allclose(a.log_z_vertex, b.log_z_vertex, rtol=1e-12)
    np.testing.assert_allclose(a.log_z_cavity, b.log_z_cavity, rtol=1e-12)


def test_sync_schedule_reaches_same_fixed_point(planted_small):
    g = planted_small.graph
    hp = planted_partition(2, 6.0, 0.1, g.n)
    init = bp.init_messages(g, 2, mode="from-assignment", labels=planted_small.labels)
    a = bp.run_bp(g, hp, init, tol=1e-10, max_sweeps=2000)
    b = bp.run_bp(g, hp, init, tol=1e-10, max_sweeps=2000, schedule="sync", damping=0.2)
    assert a.converged and b.converged
    np.testing.assert_allclose(a.marginals, b.marginals, atol=1e-7)
    assert bp.bethe_free_energy(a, hp, g) == pytest.approx(bp.bethe_free_energy(b, hp, g), abs=1e-9)


def test_determinism(planted_small):
    g = planted_small.graph
    hp = planted_partition(2, 6.0, 0.1, g.n)
    a = bp.run_bp(g, hp, bp.init_messages(g, 2, seed=1), seed=2, max_sweeps=20)
    b = bp.run_bp(g, hp, bp.init_messages(g, 2, seed=1), seed=2, max_sweeps=20)
    np.testing.assert_array_equal(a.messages, b.messages)
    np.testing.assert_array_equal(a.log_z_vertex, b.log_z_vertex)


def test_message_update_agrees_with_sweep_at_fixed_point(planted_small):
    g = planted_small.graph
    hp = planted_partition(2, 6.0, 0.1, g.n)
    st = bp.run_bp(g, hp, bp.init_messages(g, 2, mode="from-assignment", labels=planted_small.labels),
                   tol=1e-12, max_sweeps=2000)
    for e in (0, 17, 2 * g.m - 1):
        row, r = bp.message_update(st, hp, g, e)
        assert r < 1e-9
        assert row.sum() == pytest.approx(1.0)


def test_dc_with_unit_theta_is_elementwise_standard(planted_small):
    g = planted_small.graph
    a = planted_partition(2, 6.0, 0.1, g.n)
    b = Hyperparams.create(a.gamma, a.omega, g.n, kind="dc", theta=np.ones(g.n))
    sa = bp.run_bp(g, a, bp.init_messages(g, 2, seed=3), seed=3, max_sweeps=50)
    sb = bp.run_bp(g, b, bp.init_messages(g, 2, seed=3), seed=3, max_sweeps=50)
    np.testing.assert_array_equal(sa.messages, sb.messages)
    assert bp.bethe_free_energy(sa, a, g) == bp.bethe_free_energy(sb, b, g)


def test_permutation_covariance(planted_small):
    g = planted_small.graph
    hp = Hyperparams.create([0.4, 0.6], [[0.02, 0.002], [0.002, 0.012]], g.n)
    st = _converged(g, hp)
    perm = [1, 0]
    sp = bp.run_bp(g, hp.permuted(perm), st.permuted(perm), tol=1e-13, max_sweeps=5)
    np.testing.assert_allclose(sp.marginals, st.marginals[:, perm], atol=1e-11)
    assert bp.bethe_free_energy(sp, hp.permuted(perm), g) == pytest.approx(bp.bethe_free_energy(st, hp, g))


def test_isolated_vertices_follow_prior_and_field():
    g = from_edges(4, [(0, 1)])
    hp = Hyperparams.create([0.5, 0.5], [[0.5, 0.1], [0.1, 0.5]], 4)
    st = _converged(g, hp)
    logp = np.log(hp.gamma) - st.field
    expect = np.exp(logp - logp.max())
    np.testing.assert_allclose(st.marginals[2], expect / expect.sum(), atol=1e-12)


def test_fixed_field_is_kept():
    rng = np.random.default_rng(2)
    g = random_tree(6, rng)
    hp = random_hyperparams(2, 6, rng)
    h = np.array([0.3, 1.1])
    st = bp.run_bp(g, hp, bp.init_messages(g, 2), tol=1e-13, max_sweeps=500, field=h)
    np.testing.assert_array_equal(st.field, h)
    ex = synth.exact_posterior(g, hp, field=h)
    np.testing.assert_allclose(st.marginals, ex.marginals, atol=1e-11)


def test_vanishing_normalization_names_the_edge():
    g = from_edges(3, [(0, 1), (1, 2)])
    hp = Hyperparams.create([0.5, 0.5], [[0.5, 0.1], [0.1, 0.5]], 3)
    st = bp.init_messages(g, 2, hp=hp)
    st.field = np.array([np.inf, np.inf])
    with pytest.raises(bp.BPError, match=r"half-edge 1 \(1 -> 0\)"):
        bp.message_update(st, hp, g, 1)


def test_init_modes():
    g = from_edges(3, [(0, 1), (1, 2)])
    st = bp.init_messages(g, 1, seed=3)
    assert np.all(st.messages == 1.0)
    st = bp.init_messages(g, 2, mode="from-assignment", labels=[0, 0, 1])
    np.testing.assert_allclose(st.marginals, [[0.9, 0.1], [0.9, 0.1], [0.1, 0.9]], rtol=1e-15)
    np.testing.assert_allclose(st.messages[g.half_edge(2, 1)], [0.1, 0.9], rtol=1e-15)
    a = bp.init_messages(g, 3, seed=8)
    b = bp.init_messages(g, 3, seed=8)
    np.testing.assert_array_equal(a.messages, b.messages)
    assert np.all(np.abs(a.messages * 3 - 1) <= 0.05 / 0.95 + 1e-12)
    with pytest.raises(ValueError):
        bp.init_messages(g, 2, mode="from-assignment")


def test_fixed_point_identities(planted_small):
    g = planted_small.graph
    hp = planted_partition(2, 6.0, 0.1, g.n)
    st = bp.run_bp(g, hp, bp.init_messages(g, 2, mode="from-assignment", labels=planted_small.labels),
                   tol=1e-12, max_sweeps=2000)
    assert st.converged
    # Z^{i->j} Z^{ij} = Z^i on every half-edge
    lhs = st.log_z_cavity + st.log_z_edge[g.edge_of]
    np.testing.assert_allclose(lhs, st.log_z_vertex[g.src], rtol=1e-10)
    np.testing.assert_allclose(st.messages.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(st.marginals.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(st.field, bp.compute_field(st.marginals, hp), rtol=1e-10)
    before = st.messages.copy()
    r = bp.sweep(st, hp, g, rng=0)
    assert r < 1e-11
    np.testing.assert_allclose(st.messages, before, atol=1e-11)


def test_field_tracks_marginals_after_each_sweep(planted_small):
    g = planted_small.graph
    hp = planted_partition(2, 6.0, 0.1, g.n)
    st = bp.init_messages(g, 2, seed=1, hp=hp)
    for k in range(3):
        bp.sweep(st, hp, g, rng=k)
        np.testing.assert_allclose(st.field, bp.compute_field(st.marginals, hp), rtol=1e-10)
        np.testing.assert_allclose(st.messages.sum(axis=1), 1.0, atol=1e-12)


def test_q1_converges_in_one_sweep(planted_small):
    g = planted_small.graph
    hp = Hyperparams.create([1.0], [[0.01]], g.n)
    st = bp.run_bp(g, hp, bp.init_messages(g, 1))
    assert st.converged and st.sweeps == 1
    assert np.all(st.marginals == 1.0)


def test_nonconvergence_is_reported(planted_small):
    g = planted_small.graph
    hp = planted_partition(2, 6.0, 0.1, g.n)
    st = bp.run_bp(g, hp, bp.init_messages(g, 2, seed=0), tol=1e-15, max_sweeps=2, retry_damping=0.3)
    assert not st.converged
    assert st.sweeps == 4 and st.damping == 0.3
    assert np.isfinite(bp.bethe_free_energy(st, hp, g))


def test_checkpoint_roundtrip(tmp_path, planted_small):
    g = planted_small.graph
    hp = planted_partition(2, 6.0, 0.1, g.n)
    st = bp.run_bp(g, hp, bp.init_messages(g, 2), max_sweeps=10)
    st.meta["note"] = "x"
    p = tmp_path / "state.npz"
    st.save(p)
    back = bp.BPState.load(p)
    np.testing.assert_array_equal(back.messages, st.messages)
    np.testing.assert_array_equal(back.log_z_edge, st.log_z_edge)
    assert back.sweeps == st.sweeps and back.meta == {"note": "x"}


def test_python_finalize_matches_refresh(planted_small):
    g = planted_small.graph
    hp = planted_partition(2, 6.0, 0.1, g.n)
    st = bp.run_bp(g, hp, bp.init_messages(g, 2), max_sweeps=10)
    a, b = st.copy(), st.copy()
    bp.refresh(a, hp, g)
    bp.refresh(b, hp, g, backend=_bp_py)
    np.testing.assert_allclose(b.log_z_vertex, a.log_z_vertex, rtol=1e-12)
    np.testing.assert_allclose(b.log_z_edge, a.log_z_edge, rtol=1e-12)
