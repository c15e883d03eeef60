import math

import numpy as np
import pytest

from ergokit import (FitError, InputError, SampleSizeError, brownian, drift_fit, example_e1,
                     fit_decay, invariant_agreement, levy_dissipative, ornstein_uhlenbeck,
                     tv_curve, tv_gaussian_exact, tv_histogram)
from ergokit.ergodicity import (e1_explicit_bound, e1_sharp_bound, explicit_bound_constant,
                                histogram_cells, tv_gaussian_equal_cov)
from ergokit.model import quadratic_lyapunov


def test_tv_histogram_extremes():
    a = np.random.default_rng(0).normal(size=(5000, 1))
    assert tv_histogram(a, a, 20)[0] == 0.0
    assert tv_histogram(a, a + 100.0, 20)[0] == pytest.approx(1.0)


def test_tv_histogram_gaussian_pair():
    g = np.random.default_rng(1)
    tv, se = tv_histogram(g.normal(0, 1, 200_000), g.normal(1, 1, 200_000), 40)
    assert abs(tv - tv_gaussian_exact(0, 1, 1)) < 0.01
    assert se > 0


def test_tv_histogram_guards():
    with pytest.raises(SampleSizeError):
        tv_histogram(np.zeros(10), np.zeros(10))
    with pytest.raises(InputError):
        tv_histogram(np.zeros((200, 4)), np.zeros((200, 4)))


def test_histogram_overflow_cell():
    cells, n = histogram_cells(np.array([[0.0], [1.0], [2.0]]), np.array([0.0]),
                               np.array([1.0]), 4)
    assert n == 5 and list(cells) == [0, 3, 4]


def test_gaussian_tv_forms_agree():
    assert tv_gaussian_equal_cov([0.0], [1.0], [[4.0]]) == pytest.approx(tv_gaussian_exact(0, 1, 2))


def test_fit_decay_exact_exponential():
    t = np.linspace(0, 5, 21)
    theta, c, _ = fit_decay(t, 0.9 * np.exp(-0.7 * t))
    assert theta == pytest.approx(0.7) and c == pytest.approx(0.9)


def test_fit_decay_needs_points():
    with pytest.raises(FitError, match=r"\(0, 1\)"):
        fit_decay([0, 1, 2], [1.0, 1.0, 1.0])


def test_tv_curve_exact_ou():
    m = ornstein_uhlenbeck(1.0, 1.0)
    c = tv_curve(m, [3.0], [-3.0], [1.0, 2.0, 3.0])
    assert c.method == "exact_gaussian"
    s = math.sqrt((1 - math.exp(-4)) / 2)
    assert c.tv_hat[1] == pytest.approx(tv_gaussian_exact(3 * math.exp(-2), -3 * math.exp(-2), s))
    assert "t,tv_hat,se" == c.to_csv().splitlines()[0]


def test_drift_fit_brownian_fails():
    fit = drift_fit(brownian(1), quadratic_lyapunov(1.0), [[-5.0], [0.0], [5.0]], 2000, 0.01, 0)
    assert not fit.passed and fit.alpha_hat >= 1.0


def test_drift_fit_ou_passes():
    fit = drift_fit(ornstein_uhlenbeck(1.0), quadratic_lyapunov(1.0), [[-5.0], [0.0], [5.0]],
                    2000, 0.01, 0)
    assert fit.passed
    # E[1 + X^2] = 1 + 25 e^{-2} + (1 - e^{-2})/2 at x = 5
    assert fit.estimate[2] / fit.v0[2] == pytest.approx((1.5 + 24.5 * math.exp(-2)) / 26, rel=0.03)


def test_explicit_bound_constant():
    fit = drift_fit(example_e1(), __import__("ergokit").e1_lyapunov(2.0), [[1.0, 1.0], [5.0, 3.0]],
                    2000, 0.02, 1)
    c_final, slack = explicit_bound_constant(fit, e1_explicit_bound(1.0, 2.0))
    assert np.all(slack >= -1e-12) and slack.min() == pytest.approx(0.0, abs=1e-12)
    c_sharp, _ = explicit_bound_constant(fit, e1_sharp_bound(1.0, 2.0))
    assert c_sharp >= 0


def test_invariant_agreement_small():
    rep = invariant_agreement(ornstein_uhlenbeck(1.0), [[4.0], [-4.0]], 8.0, 20000, 0.02, 30)
    assert rep.passed
    assert rep.tv[0, 1] == rep.tv[1, 0]


def test_moment_bound_small():
    from ergokit import moment_bound_check
    rep = moment_bound_check(levy_dissipative(), [1.0, 1.0], np.linspace(0, 4, 17), 2000, 0.05, 3)
    assert rep.c_hat > 0 and rep.times.shape == (17,)
