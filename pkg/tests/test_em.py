import numpy as np
import pytest

from sbmcv import bp, em, synth
from sbmcv.model import Hyperparams, planted_partition

FAST = em.FitConfig(restarts=1, max_em_iters=40, em_sweeps=30, max_sweeps=300)


def _check_conservation(hp, state, g):
    assert hp.gamma.sum() == pytest.approx(1.0, abs=1e-14)
    mass = g.n ** 2 * hp.gamma @ hp.omega @ hp.gamma
    assert mass == pytest.approx(2 * g.m, rel=1e-10)
    if hp.degree_corrected:
        lab = state.hard_labels()
        for s in np.unique(lab):
            assert hp.theta[lab == s].sum() == pytest.approx((lab == s).sum(), rel=1e-12)


def test_q1_closed_form(planted_small):
    g = planted_small.graph
    res = em.fit(g, 1, cfg=FAST)
    np.testing.assert_allclose(res.hyperparams.gamma, [1.0])
    np.testing.assert_allclose(res.hyperparams.omega, [[2 * g.m / g.n ** 2]], rtol=1e-12)
    assert res.em_iters == 1 and res.converged


def test_q1_dc_theta(planted_small):
    g = planted_small.graph
    res = em.fit(g, 1, kind="dcsbm", cfg=FAST)
    np.testing.assert_allclose(res.hyperparams.theta, g.degrees * g.n / (2 * g.m), rtol=1e-12)


@pytest.mark.parametrize("kind", ["standard", "dcsbm"])
def test_m_step_conservation_every_iteration(planted_small, kind):
    g = planted_small.graph
    res = em.fit(g, 2, kind=kind, cfg=FAST, on_mstep=_check_conservation)
    assert res.em_iters >= 1


def test_m_step_conservation_on_unconverged_state(planted_small):
    g = planted_small.graph
    hp = Hyperparams.create([0.2, 0.3, 0.5], np.full((3, 3), 0.01), g.n)
    st = bp.run_bp(g, hp, bp.init_messages(g, 3, seed=2), max_sweeps=1, retry_damping=None)
    new = em.m_step(st, hp, g)
    _check_conservation(new, st, g)


def test_planted_recovery(planted_small):
    g = planted_small.graph
    res = em.fit(g, 2, cfg=FAST)
    truth = planted_small.hyperparams
    oracle = bp.run_bp(g, truth, bp.init_messages(g, 2, mode="from-assignment",
                                                  labels=planted_small.labels), tol=1e-8)
    ov_fit = synth.overlap(res.hard_labels, planted_small.labels)
    ov_oracle = synth.overlap(oracle.hard_labels(), planted_small.labels)
    assert ov_fit >= ov_oracle - 0.01
    assert res.fe_trace[-1] == res.free_energy
    assert {c.init.split("#")[0] for c in res.candidates} == set(em.STRATEGIES)


def test_learned_omega_close_to_truth():
    pg = synth.sample_sbm(planted_partition(2, 8.0, 0.1, 3000), seed=11)
    res = em.fit(pg.graph, 2, cfg=FAST)
    w = np.sort(res.hyperparams.omega.ravel())
    t = np.sort(pg.hyperparams.omega.ravel())
    np.testing.assert_allclose(w, t, rtol=0.1)


def test_selection_is_minimum_free_energy(planted_small):
    g = planted_small.graph
    res = em.fit(g, 2, cfg=FAST)
    assert res.free_energy == min(c.free_energy for c in res.candidates)


def test_fit_is_deterministic(planted_small):
    g = planted_small.graph
    a = em.fit(g, 2, cfg=FAST)
    b = em.fit(g, 2, cfg=FAST)
    assert a.free_energy == b.free_energy
    np.testing.assert_array_equal(a.state.messages, b.state.messages)


def test_theta_update_sums():
    from sbmcv.graph import from_edges

    g = from_edges(5, [(0, 1), (1, 2), (2, 3), (3, 4), (1, 3)])
    th = em.update_theta(g, np.array([0, 0, 0, 1, 1]), 2)
    assert th[:3].sum() == pytest.approx(3.0)
    assert th[3:].sum() == pytest.approx(2.0)
    np.testing.assert_allclose(th[:3], np.array([1, 3, 2]) * 3 / 6)
    warn = []
    em.update_theta(g, np.zeros(5, dtype=int), 3, warn=warn)
    assert any("empty cluster" in w for w in warn)


def test_config_roundtrip_and_errors():
    cfg = em.FitConfig(restarts=2, strategies=("assortative",))
    assert em.FitConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError, match="unknown config"):
        em.FitConfig.from_dict({"bogus": 1})
    with pytest.raises(ValueError, match="strategies"):
        em.FitConfig.from_dict({"strategies": ["random"]})


def test_bad_q():
    from sbmcv.graph import from_edges

    with pytest.raises(ValueError):
        em.fit(from_edges(2, [(0, 1)]), 0)
