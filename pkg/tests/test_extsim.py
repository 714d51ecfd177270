import math

import numpy as np
import pytest
from scipy import integrate
from scipy.special import gamma
from scipy.stats import kstest, norm

from htorder.exceptions import DomainError
from htorder.extsim import (
    ExactModelSpec,
    StudyConfig,
    StudyPair,
    ht_sample,
    normalising_constants,
    preset,
    run_rmse_study,
    sample_exact_residual,
    simulate_exact,
    study_quantile,
    true_conditional_quantile,
)
from htorder.htcore import HTFit, HTParams, ResidualSummary
from htorder.margins import laplace_quantile


def _logistic_cdf(z, lam):
    return np.exp((lam - 1.0) * np.logaddexp(0.0, -np.asarray(z) / lam))


def test_logistic_residual_at_zero():
    assert abs(sample_exact_residual("logistic", 0.5, 2**-0.5)) < 1e-10
    assert abs(sample_exact_residual("logistic", 0.5, 0.70711)) < 1e-4


def test_inverted_logistic_unit_exponential():
    assert abs(sample_exact_residual("inverted_logistic", 1.0, 1 - math.exp(-1)) - 1.0) < 1e-12


def test_gaussian_residual_sd():
    sd = sample_exact_residual("gaussian", 0.7, norm.cdf(1.0))
    assert abs(sd - 0.70697) < 1e-5


@pytest.mark.parametrize("family,dep", [("logistic", 1.2), ("logistic", 0.0),
                                        ("inverted_logistic", 0.0), ("gaussian", 1.0),
                                        ("gaussian", -0.1), ("frank", 0.5)])
def test_dep_out_of_range(family, dep):
    with pytest.raises(DomainError):
        sample_exact_residual(family, dep, 0.5)


def test_residual_u_domain():
    with pytest.raises(DomainError):
        sample_exact_residual("gaussian", 0.5, 1.0)


def test_normalising_constants():
    assert normalising_constants("logistic", 0.3) == (1.0, 0.0)
    assert normalising_constants("inverted_logistic", 0.3) == (0.0, 0.7)
    assert normalising_constants("gaussian", 0.5) == (0.25, 0.5)


def test_simulate_exact_above_threshold():
    u = float(laplace_quantile(0.95))
    d = simulate_exact(ExactModelSpec("gaussian", 0.5, u, 1000), 0)
    assert d.n == 1000
    assert np.all(d.y_cond > u)


def test_simulate_exact_logistic_residual_law():
    lam = 0.6
    d = simulate_exact(ExactModelSpec("logistic", lam, 2.0, 10_000), 1)
    res = kstest(d.y_dep - d.y_cond, lambda z: _logistic_cdf(z, lam))
    assert res.statistic < 0.05


def test_simulate_exact_conditional_mean():
    kappa = 0.5
    d = simulate_exact(ExactModelSpec("inverted_logistic", kappa, 2.0, 200_000), 2)
    mean_z = gamma(1 + kappa) / kappa**kappa
    sd_z = math.sqrt(gamma(1 + 2 * kappa) / kappa ** (2 * kappa) - mean_z**2)
    for x in (2.2, 2.6, 3.0, 3.5):
        sel = (d.y_cond >= x) & (d.y_cond < x + 0.1)
        mid = d.y_cond[sel].mean()
        se = mid ** (1 - kappa) * sd_z / math.sqrt(sel.sum())
        assert abs(d.y_dep[sel].mean() - mid ** (1 - kappa) * mean_z) < 4 * se


def test_simulate_exact_deterministic():
    spec = ExactModelSpec("logistic", 0.6, 2.0, 50)
    a, b = simulate_exact(spec, 5), simulate_exact(spec, 5)
    assert np.array_equal(a.y_dep, b.y_dep)


class _LaplaceMargin:
    def ppf(self, p):
        return laplace_quantile(p)


def _embedded_logistic_fit(lam, u, m=20_000):
    z = sample_exact_residual("logistic", lam, (np.arange(m) + 0.5) / m)
    return HTFit(HTParams(1.0, 0.0), z, 0.0, ResidualSummary(z, z, z), u)


def test_ht_sample_matches_numerical_integration():
    lam, u, y = 0.6, 2.0, 3.5
    fit = _embedded_logistic_fit(lam, u)
    n = 200_000
    out = ht_sample(fit, _LaplaceMargin(), _LaplaceMargin(), n, 3)
    assert np.all(out[:, 0] > u - 1e-9)
    est = np.mean(out[:, 1] > y)
    exact, _ = integrate.quad(lambda t: math.exp(-t) * (1 - _logistic_cdf(y - u - t, lam)),
                              0, np.inf)
    assert abs(est - exact) < 3 * math.sqrt(exact * (1 - exact) / n)


def test_true_quantile_forms():
    x = np.array([2.0, 5.0, 10.0])
    lg = true_conditional_quantile("logistic", 0.6, x, 0.3)
    assert np.allclose(np.diff(lg - x), 0.0, atol=1e-12)
    il = true_conditional_quantile("inverted_logistic", 0.5, x, 1 - math.exp(-0.5))
    assert np.allclose(il, x**0.5, atol=1e-12)
    assert true_conditional_quantile("gaussian", 0.0, 4.0, 0.8) == 0.0
    assert study_quantile("gaussian", 0.0, 4.0, 0.8) == pytest.approx(laplace_quantile(0.8))
    with pytest.raises(DomainError):
        true_conditional_quantile("gaussian", 0.5, 4.0, 1.0)


def test_ordering_preserved_by_exact_models():
    x = np.geomspace(float(laplace_quantile(0.95)), 50, 60)
    for q in np.linspace(0.5, 0.99, 15):
        hi = true_conditional_quantile("logistic", 0.6, x, q)
        lo = true_conditional_quantile("logistic", 0.9, x, q)
        assert np.all(hi >= lo)


def test_study_config_validation():
    with pytest.raises(DomainError):
        StudyConfig(pairs=())
    with pytest.raises(DomainError):
        StudyConfig(pairs=(("gaussian", 0.5, 0.0),), quantiles=(0.0,))
    cfg = StudyConfig(pairs=(("gaussian", 0.5, 0.0),))
    assert isinstance(cfg.pairs[0], StudyPair)
    with pytest.raises(DomainError):
        preset("nope")
    assert preset("paper-table4-desk", full=True).n_replicates == 1000


def test_study_rows_and_determinism():
    cfg = preset("smoke", n_replicates=3, n_per_sample=150)
    a = run_rmse_study(cfg)
    b = run_rmse_study(cfg)
    rows = a.rows()
    assert len(rows) == len(cfg.pairs) * len(cfg.quantiles) * len(cfg.levels) * 2 * 3
    assert all(r["value"] > 0 for r in rows)
    assert a.to_dict() == b.to_dict()
