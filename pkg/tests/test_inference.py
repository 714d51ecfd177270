import numpy as np
import pytest

from htorder.constraints import ConstraintLevel, keef_feasible, so_feasible_chain
from htorder.exceptions import BootstrapUnstable, DegenerateResidualsWarning, DomainError
from htorder.htcore import ExceedanceData, ResidualSummary, fit_unconstrained
from htorder.inference import (
    LrtResult,
    OrderingSpec,
    _Problem,
    bootstrap_functional,
    constrained_is_feasible,
    fit_constrained,
    fit_keef,
    fits_loglik,
    lrt_ordering,
    simulate_from_fits,
)


def _groups(alphas, seed, n=200, beta=0.3, sd=0.6, u=2.0):
    rng = np.random.default_rng(seed)
    out = {}
    for label, alpha in zip("ABCD", alphas):
        yc = u + rng.standard_exponential(n)
        out[label] = ExceedanceData(yc, alpha * yc + yc**beta * rng.normal(0, sd, n), u)
    return out


def _spec(data, labels=None):
    labels = labels or tuple(sorted(data))
    top = max(float(d.y_cond.max()) for d in data.values())
    return OrderingSpec(labels, ConstraintLevel.default(top))


def _summaries(fits, data, order):
    return [(fits[g].params.alpha, fits[g].params.beta,
             ResidualSummary.from_fit(fits[g].residuals, data[g])) for g in order]


def test_spec_validation():
    lvl = ConstraintLevel(5.0)
    with pytest.raises(DomainError):
        OrderingSpec(("A",), lvl)
    with pytest.raises(DomainError):
        OrderingSpec(("A", "A"), lvl)
    with pytest.raises(DomainError):
        OrderingSpec(("A", "B"), lvl, qs=(0.0, 1.5))


def test_missing_group():
    data = _groups((0.2, 0.5), 0)
    with pytest.raises(DomainError):
        fit_constrained(data, OrderingSpec(("A", "Z"), ConstraintLevel(10.0)))


def test_inactive_constraints_leave_fits_unchanged():
    data = _groups((-0.2, 0.7), 1, sd=0.3)
    spec = _spec(data)
    unc = {g: fit_unconstrained(d) for g, d in data.items()}
    assert so_feasible_chain(_summaries(unc, data, spec.group_order), spec.level)
    con = fit_constrained(data, spec, unconstrained=unc)
    for g in data:
        assert con[g].params == unc[g].params


@pytest.mark.parametrize("seed", range(6))
def test_active_constraints(seed):
    data = _groups((0.6, 0.4, 0.2), 10 + seed)
    spec = _spec(data)
    unc = {g: fit_unconstrained(d) for g, d in data.items()}
    con = fit_constrained(data, spec, unconstrained=unc)
    assert fits_loglik(con) <= fits_loglik(unc) + 1e-9
    assert any(con[g].params != unc[g].params for g in data)
    order = spec.group_order
    assert constrained_is_feasible([con[g] for g in order], [data[g] for g in order], spec.level)
    assert so_feasible_chain(_summaries(con, data, order), spec.level)


def test_constrained_beats_feasible_probes():
    data = _groups((0.6, 0.3), 21)
    spec = _spec(data)
    con = fit_constrained(data, spec)
    order = spec.group_order
    problem = _Problem([data[g] for g in order], spec.level, spec.qs, ordered=True)
    theta = np.array([x for g in order for x in (con[g].params.alpha, con[g].params.beta)])
    best = problem.joint_loglik(theta)
    assert abs(best - fits_loglik(con)) < 1e-6
    rng = np.random.default_rng(0)
    found = 0
    while found < 500:
        probe = theta + rng.normal(0, 0.05, theta.size)
        if problem.feasible(probe):
            found += 1
            assert problem.joint_loglik(probe) <= best + 1e-6


def test_keef_fit_is_feasible():
    rng = np.random.default_rng(3)
    yc = 2.0 + rng.standard_exponential(300)
    d = ExceedanceData(yc, 1.0 * yc + rng.normal(0, 0.4, 300), 2.0)
    lvl = ConstraintLevel.default(float(yc.max()))
    unc = fit_unconstrained(d)
    fit = fit_keef(d, lvl, unconstrained=unc)
    assert fit.loglik <= unc.loglik + 1e-9
    rs = ResidualSummary.from_fit(fit.residuals, d)
    assert keef_feasible(fit.params.alpha, fit.params.beta, rs, lvl)


def test_simulate_from_fits_sizes():
    data = _groups((0.2, 0.5), 4)
    fits = {g: fit_unconstrained(d) for g, d in data.items()}
    sim = simulate_from_fits(fits, {"A": 30, "B": 40}, np.random.default_rng(0))
    assert sim["A"].n == 30 and sim["B"].n == 40
    assert np.all(sim["B"].y_cond > 2.0)


def test_lrt_rejects_small_nsim():
    data = _groups((0.2, 0.5), 5, n=80)
    with pytest.raises(DomainError):
        lrt_ordering(data, _spec(data), n_sim=50)


def test_lrt_inactive_gives_unit_pvalue():
    data = _groups((-0.2, 0.7), 1, n=100, sd=0.3)
    res = lrt_ordering(data, _spec(data), n_sim=99, seed=0)
    assert res.statistic == 0.0
    assert res.p_value == 1.0


def test_lrt_result_and_determinism():
    data = _groups((0.6, 0.2), 6, n=100)
    spec = _spec(data)
    a = lrt_ordering(data, spec, n_sim=99, seed=3)
    b = lrt_ordering(data, spec, n_sim=99, seed=3)
    assert isinstance(a, LrtResult)
    assert a.statistic > 0
    assert np.all(a.null_sample >= 0)
    assert 1 / 100 <= a.p_value <= 1.0
    k = np.count_nonzero(a.null_sample >= a.statistic)
    assert a.p_value == (1 + k) / 100
    assert a.statistic == b.statistic
    assert np.array_equal(a.null_sample, b.null_sample)
    assert a.to_dict()["n_sim"] == 99


def test_bootstrap_domain_and_degenerate():
    data = _groups((0.2, 0.5), 7, n=60)
    spec = _spec(data)
    with pytest.raises(DomainError):
        bootstrap_functional(data, spec, "alpha:A", n_boot=0)
    with pytest.raises(DomainError):
        bootstrap_functional(data, spec, "nonsense", n_boot=100)
    yc = np.full(40, 3.0)
    flat = {"A": ExceedanceData(yc, yc.copy(), 2.0), "B": ExceedanceData(yc, yc.copy(), 2.0)}
    with pytest.raises(BootstrapUnstable), pytest.warns(DegenerateResidualsWarning):
        bootstrap_functional(flat, OrderingSpec(("A", "B"), ConstraintLevel(5.0)), "alpha:A",
                             n_boot=100)


def test_bootstrap_interval():
    data = _groups((0.2, 0.5), 8, n=150)
    spec = _spec(data)
    est, lo, hi = bootstrap_functional(data, spec, "alpha:B", n_boot=100, seed=1)
    assert lo <= hi
    assert lo - 0.2 <= est <= hi + 0.2
    again = bootstrap_functional(data, spec, "alpha:B", n_boot=100, seed=1)
    assert again == (est, lo, hi)
    q = bootstrap_functional(data, spec, "quantile:B:6.0:0.8", n_boot=100, seed=1)
    assert q[1] <= q[2]


@pytest.mark.slow
def test_bootstrap_coverage():
    covered = 0
    for trial in range(50):
        data = _groups((0.2, 0.5), 1000 + trial, n=150)
        _, lo, hi = bootstrap_functional(data, _spec(data), "alpha:B", n_boot=100, seed=trial)
        covered += lo <= 0.5 <= hi
    assert covered >= 45
