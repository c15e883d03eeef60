import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ergokit import (ConfigurationError, FitError, SampleSizeError, coupling_time_tail,
                     example_e1, finite_chain_run, levy_dissipative, linear,
                     maximal_coupling_batch, maximal_coupling_discrete, meeting_survival_exact,
                     synchronous_pair_batch)
from ergokit.coupling import coupled_kernel

probs = st.lists(st.floats(0.01, 1.0), min_size=2, max_size=6)


@given(probs, probs)
@settings(max_examples=40, deadline=None)
def test_discrete_coupling_is_maximal(p, q):
    n = min(len(p), len(q))
    p = np.array(p[:n]) / sum(p[:n])
    q = np.array(q[:n]) / sum(q[:n])
    u = np.random.default_rng(0).random((20000, 3))
    i, j, c = maximal_coupling_discrete(p, q, u)
    assert np.all(i[c] == j[c])
    overlap = np.minimum(p, q).sum()
    assert abs(c.mean() - overlap) < 5 * math.sqrt(overlap * (1 - overlap) / 20000) + 1e-9
    assert np.allclose(np.bincount(i, minlength=n) / 20000, p, atol=0.025)
    assert np.allclose(np.bincount(j, minlength=n) / 20000, q, atol=0.025)


def test_identical_laws_always_couple():
    p = np.array([0.2, 0.3, 0.5])
    i, j, c = maximal_coupling_discrete(p, p, np.random.default_rng(1).random((1000, 3)))
    assert c.all() and np.array_equal(i, j)


def test_gaussian_maximal_coupling():
    from scipy import stats
    dp = stats.norm(0, 1).pdf
    dq = stats.norm(1, 1).pdf
    z1, z2, c = maximal_coupling_batch(dp, lambda g, n: g.normal(0, 1, n), dq,
                                       lambda g, n: g.normal(1, 1, n), 20000, 3)
    tv = math.erf(1 / (2 * math.sqrt(2)))
    assert abs(c.mean() - (1 - tv)) < 4 * math.sqrt(tv * (1 - tv) / 20000)
    assert np.array_equal(z1[c], z2[c])


def test_sync_contraction_linear():
    m = linear([[-1.0, 0.5], [-0.5, -1.0]])
    _, _, rep = synchronous_pair_batch(m, [2.0, 0.0], [-1.0, 1.0], 2.0, 0.01, 100, 4)
    assert rep.passed and rep.statistic <= 1.0
    assert rep.observed_rate == pytest.approx(2.0, rel=0.05)


def test_sync_requires_rate(e1):
    with pytest.raises(ConfigurationError):
        synchronous_pair_batch(e1, [1.0, 1.0], [0.0, 1.0], 1.0, 0.01, 10, 0)


def test_sync_equal_starts_warns():
    with pytest.warns(UserWarning):
        _, _, rep = synchronous_pair_batch(levy_dissipative(), [1.0, 1.0], [1.0, 1.0], 0.5, 0.01,
                                           10, 0)
    assert rep.passed and rep.degenerate


def test_finite_chain_matches_exact_survival():
    P = np.array([[0.5, 0.3, 0.2], [0.1, 0.6, 0.3], [0.3, 0.3, 0.4]])
    run = finite_chain_run(P, 0, 2, max_steps=30, n_trials=20000, seed=2)
    exact = meeting_survival_exact(P, 0, 2, 5)
    emp = np.array([np.mean(run.tau_samples > k) for k in range(6)])
    se = np.sqrt(exact * (1 - exact) / 20000)
    assert np.all(np.abs(emp - exact) <= 4 * se + 1e-12)


def test_coupled_kernel_rows_stochastic():
    P = np.array([[0.7, 0.3], [0.4, 0.6]])
    K = coupled_kernel(P)
    np.testing.assert_allclose(K.sum(axis=1), 1.0)


def test_tail_fit_geometric():
    gen = np.random.default_rng(0)
    tau = gen.geometric(0.4, 5000)
    fit = coupling_time_tail(tau)
    assert fit.p_fit == pytest.approx(0.6, rel=0.05)
    assert fit.finite and fit.exp_moment > 1


def test_tail_fit_guards():
    from ergokit.coupling import CouplingRun
    tau = np.full(100, 50)
    cens = np.arange(100) < 60
    run = CouplingRun(100, tau, cens, np.full(100, np.nan), 0.0, 1.0, 0.5, 50)
    with pytest.raises(FitError):
        coupling_time_tail(run)
    with pytest.raises(SampleSizeError):
        coupling_time_tail(np.arange(1, 20))
    pm = coupling_time_tail(np.full(80, 2))
    assert pm.point_mass and pm.p_fit is None


def test_coupled_chain_small_run(e1):
    from ergokit import coupled_chain_run
    run = coupled_chain_run(e1, [3.0, 1.0], [-2.0, -1.0], t_chain=3.0, n_trials=20, max_steps=10,
                            n_kernel=500, bins=20, seed=5)
    assert run.trials == 20
    assert np.all(run.tau_samples[~run.censored] >= 1)
    assert run.successes <= run.attempts
    lines = run.to_csv().splitlines()
    assert lines[0] == "trial,tau_chain_steps,tau1_time,censored" and len(lines) == 21
