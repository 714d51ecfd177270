import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from htorder import _kernels
from htorder.constraints import (
    X_FAR,
    ConstraintLevel,
    DFunction,
    classify_stationary,
    keef_feasible,
    keef_feasible_values,
    keef_margins,
    so_feasible,
    so_feasible_chain,
    so_margin,
)
from htorder.exceptions import DomainError
from htorder.htcore import ResidualSummary, fit_unconstrained

from oracles import (
    X_TOP,
    keef_configs,
    keef_oracle,
    ordering_region,
    random_summary,
    so_configs,
    so_oracle,
    two_groups,
)


def _summary(z, zp, zm):
    return ResidualSummary(np.asarray(z, float), np.asarray(zp, float), np.asarray(zm, float))


def test_level_rules():
    with pytest.raises(DomainError):
        ConstraintLevel(0.0)
    with pytest.raises(DomainError):
        ConstraintLevel(math.inf)
    lvl = ConstraintLevel.default(3.2)
    assert lvl.v == 5.0
    assert ConstraintLevel.default(7.5).v == 7.5
    assert lvl.for_data(9.0).v == 9.0
    fixed = ConstraintLevel(5.0)
    assert fixed.for_data(9.0) is fixed


def test_keef_equality_case_feasible():
    zp = [-0.5, 0.3, 1.2]
    rs = _summary(zp, zp, [-3.0, -2.0, -1.0])
    assert keef_feasible(1.0, 0.0, rs, ConstraintLevel(5.0))


def test_keef_exceeding_upper_bound_infeasible():
    zp = [-0.5, 0.3, 1.2]
    rs = _summary([-0.5, 0.3, 2.2], zp, [-3.0, -2.0, -1.0])
    assert not keef_feasible(1.0, 0.0, rs, ConstraintLevel(5.0))


def test_keef_matches_grid_oracle():
    for alpha, beta, rs, lvl in keef_configs(101, 1000):
        assert keef_feasible(alpha, beta, rs, lvl) == keef_oracle(alpha, beta, rs, lvl.v)


def test_so_matches_grid_oracle_on_same_range():
    for hi, lo, lvl in so_configs(102, 1000, beta_range=(-1.0, 0.95)):
        assert so_feasible(hi, lo, lvl, x_max=X_TOP) == so_oracle(hi, lo, lvl.v)


def test_so_far_field_cases():
    # with equal or reversed alphas D can turn negative only far beyond 1e6;
    # a grid out to 1e300 sees it and agrees with the unbounded decision
    far = 0
    for hi, lo, lvl in so_configs(103, 3000, beta_range=(-1.0, 0.95)):
        unbounded = so_feasible(hi, lo, lvl)
        assert unbounded == so_oracle(hi, lo, lvl.v, n=20000, top=1e300)
        if unbounded != so_oracle(hi, lo, lvl.v):
            far += 1
            assert hi[0] <= lo[0]
    assert far >= 1


def test_theorem_example_two_stationary_points():
    df = DFunction(0.2, 0.1, 0.2, 0.5, 0.6, 0.6)
    report = classify_stationary(df, 0.01)
    assert report.count == 2
    s = df.inflection()
    assert abs(s - 0.2259) < 1e-3
    assert df.derivative(s) < 0
    for x in report.points:
        assert abs(df.derivative(x)) < 1e-8


def test_linear_difference_has_no_stationary_point():
    assert classify_stationary(DFunction(0.3, 0.1, 0.2, 0.5, 0.0, 0.0), 1.0).count == 0


def test_equal_beta_branch():
    df = DFunction(0.3, 0.1, 0.4, 0.4 + 1e-12, -2.0, 0.5)
    assert df.inflection() is None
    assert classify_stationary(df, 0.5).count <= 1


@settings(max_examples=300, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-2, 0.95), st.floats(-2, 0.95),
       st.floats(-3, 3), st.floats(-3, 3), st.floats(0.01, 20))
def test_stationary_points_are_sign_changes(ah, al, bh, bl, zh, zl, v):
    df = DFunction(ah, al, bh, bl, zh, zl)
    report = classify_stationary(df, v)
    assert report.count in (0, 1, 2)
    for x in report.points:
        assert x > v
        lo, hi = df.derivative(x * (1 - 1e-6)), df.derivative(x * (1 + 1e-6))
        assert lo * hi <= 0 or min(abs(lo), abs(hi)) < 1e-9


def test_so_identical_and_alpha_order():
    rs = random_summary(np.random.default_rng(0))
    lvl = ConstraintLevel(5.0)
    assert so_feasible((0.3, 0.2, rs), (0.3, 0.2, rs), lvl)
    assert not so_feasible((0.2, 0.2, rs), (0.3, 0.2, rs), lvl)


def test_chain_rules():
    rng = np.random.default_rng(1)
    rs = _summary(rng.normal(size=30), rng.normal(size=30) + 2.0, rng.normal(size=30) - 2.0)
    lvl = ConstraintLevel(5.0)
    same = [(0.2, 0.3, rs)] * 4
    assert so_feasible_chain(same, lvl)
    broken = [(0.2, 0.3, rs), (0.4, 0.3, rs), (0.3, 0.3, rs), (0.5, 0.3, rs)]
    assert not so_feasible_chain(broken, lvl)
    with pytest.raises(DomainError):
        so_feasible_chain(same[:1], lvl)


def test_chain_is_conjunction_of_pairs():
    rng = np.random.default_rng(2)
    lvl = ConstraintLevel(4.0)
    for _ in range(200):
        alphas = np.sort(rng.uniform(-0.5, 0.9, 4))
        groups = [(float(a), float(rng.uniform(-0.5, 0.6)), random_summary(rng)) for a in alphas]
        expect = (all(keef_feasible(a, b, rs, lvl) for a, b, rs in groups)
                  and all(so_feasible(h, l, lvl) for l, h in zip(groups[:-1], groups[1:])))
        assert so_feasible_chain(groups, lvl) == expect


@pytest.mark.parametrize("seed", [3, 4])
def test_nestedness_on_grid(seed):
    # ordering region of the lower group given the upper group's fit
    lo, hi = two_groups(seed)
    hi_fit = fit_unconstrained(hi)
    v = float(max(lo.y_cond.max(), hi.y_cond.max()))
    ga, gb = np.linspace(-1, 1, 50), np.linspace(-1.5, 0.95, 50)
    both = ordering_region(lo, hi_fit, hi, (0.0, 1.0), v, ga, gb, keef=False)
    assert both.any() and not both.all()
    for q in (0.1, 0.25, 0.5, 0.75, 0.9):
        single = ordering_region(lo, hi_fit, hi, (q,), v, ga, gb, keef=False)
        assert np.all(single[both])


def test_monotone_relaxation_in_v():
    lo, hi = two_groups(4)
    hi_fit = fit_unconstrained(hi)
    v0 = float(max(lo.y_cond.max(), hi.y_cond.max()))
    ga, gb = np.linspace(-1, 1, 30), np.linspace(-1.5, 0.95, 30)
    prev = ordering_region(lo, hi_fit, hi, (0.0, 1.0), v0, ga, gb)
    for v in (v0 * 1.5, v0 * 3, v0 * 10):
        cur = ordering_region(lo, hi_fit, hi, (0.0, 1.0), v, ga, gb)
        assert np.all(cur[prev])
        prev = cur


def test_monotone_relaxation_random_configs():
    for alpha, beta, rs, lvl in keef_configs(5, 300):
        if keef_feasible(alpha, beta, rs, lvl):
            assert keef_feasible(alpha, beta, rs, ConstraintLevel(lvl.v * 2))
    for hi, lo, lvl in so_configs(6, 300):
        if so_feasible(hi, lo, lvl):
            assert so_feasible(hi, lo, ConstraintLevel(lvl.v * 2))


def test_q_sufficiency_audit():
    # feasibility at the extreme residual quantiles usually carries over to
    # the interior ones; counterexamples are counted, not ruled out
    grid_qs = tuple(np.round(np.linspace(0, 1, 21), 10))
    checked = counter = 0
    for hi, lo, lvl in so_configs(7, 1000):
        if so_feasible(hi, lo, lvl):
            checked += 1
            counter += not so_feasible(hi, lo, lvl, qs=grid_qs)
    print(f"q-sufficiency audit: {counter} counterexamples among {checked} feasible pairs")
    assert checked > 0
    assert 0 <= counter <= checked


def test_keef_margins_sign_matches_decision():
    for alpha, beta, rs, lvl in keef_configs(8, 500):
        for q in (0.0, 1.0):
            z, zp, zm = rs.z_quantile(q), rs.z_plus_quantile(q), rs.z_minus_quantile(q)
            up, low = keef_margins(alpha, beta, z, zp, zm, lvl.v)
            ok = keef_feasible_values(alpha, beta, z, zp, zm, lvl.v)
            if min(up, low) > 1e-6:
                assert ok
            if min(up, low) < -1e-6:
                assert not ok


def test_kernels_agree_with_reference():
    for alpha, beta, rs, lvl in keef_configs(9, 500):
        for q in (0.0, 1.0):
            args = (alpha, beta, rs.z_quantile(q), rs.z_plus_quantile(q), rs.z_minus_quantile(q),
                    lvl.v)
            assert _kernels.keef_ok(*args) == keef_feasible_values(*args)
            up, low = keef_margins(*args)
            a, b, z, zp, zm, v = args
            assert _kernels._keef_gap(1 - a, z, zp, b, v) == pytest.approx(up, rel=1e-9, abs=1e-9)
            assert _kernels._keef_gap(1 + a, -z, -zm, b, v) == pytest.approx(low, rel=1e-9,
                                                                             abs=1e-9)
    for (ah, bh, rh), (al, bl, rl), lvl in so_configs(10, 500, beta_range=(-1.0, 0.95)):
        for q in (0.0, 1.0):
            df = DFunction(ah, al, bh, bl, rh.z_quantile(q), rl.z_quantile(q))
            ref = so_margin(df, lvl.v)
            fast = _kernels.so_margin(ah, al, bh, bl, df.z_hi, df.z_lo, lvl.v)
            if math.isinf(ref):
                assert fast == ref
            else:
                assert fast == pytest.approx(ref, rel=1e-7, abs=1e-9)


def test_bounded_margin_uses_endpoint():
    df = DFunction(0.1, 0.3, 0.0, 0.0, 0.0, 0.0)
    assert so_margin(df, 1.0) == -math.inf
    assert so_margin(df, 1.0, x_max=10.0) == pytest.approx(-2.0)
    assert X_FAR > 1e300
