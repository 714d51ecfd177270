"""Brute-force reference checks shared by the constraint and acceptance tests.

They evaluate the conditional quantile curves directly on a dense log-spaced
grid of conditioning values instead of reasoning about stationary points.
"""
import numpy as np

from htorder.constraints import ConstraintLevel, keef_feasible, so_feasible
from htorder.htcore import ExceedanceData, ResidualSummary

GRID_POINTS = 500
X_TOP = 1e6
TOL = 1e-8
QS = (0.0, 1.0)


def grid(v, n=GRID_POINTS, top=X_TOP):
    return np.geomspace(v, top, n)


def keef_oracle(alpha, beta, rs, v, qs=QS, n=GRID_POINTS, top=X_TOP):
    x = grid(v, n, top)
    for q in qs:
        y = alpha * x + x**beta * rs.z_quantile(q)
        upper = x + rs.z_plus_quantile(q)
        lower = -x + rs.z_minus_quantile(q)
        if np.any(y > upper + TOL) or np.any(y < lower - TOL):
            return False
    return True


def so_oracle(hi, lo, v, qs=QS, n=GRID_POINTS, top=X_TOP):
    (ah, bh, rh), (al, bl, rl) = hi, lo
    x = grid(v, n, top)
    for q in qs:
        d = (ah - al) * x + x**bh * rh.z_quantile(q) - x**bl * rl.z_quantile(q)
        if np.any(d < -TOL):
            return False
    return True


def random_summary(rng, size=30):
    z = rng.normal(rng.uniform(-1, 1), rng.uniform(0.1, 2.0), size)
    zp = rng.normal(rng.uniform(-2, 1), rng.uniform(0.1, 2.0), size)
    zm = rng.normal(rng.uniform(-1, 2), rng.uniform(0.1, 2.0), size)
    return ResidualSummary(z, zp, zm)


def keef_configs(seed, count, beta_range=(-1.0, 0.5)):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        yield (float(rng.uniform(-1, 1)), float(rng.uniform(*beta_range)), random_summary(rng),
               ConstraintLevel(float(rng.uniform(1.0, 10.0))))


def so_configs(seed, count, beta_range=(-1.0, 0.5)):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        a = np.sort(rng.uniform(-1, 1, 2))
        if rng.uniform() < 0.1:
            a = a[::-1]
        if rng.uniform() < 0.1:
            a = np.array([a[0], a[0]])
        hi = (float(a[1]), float(rng.uniform(*beta_range)), random_summary(rng))
        lo = (float(a[0]), float(rng.uniform(*beta_range)), random_summary(rng))
        yield hi, lo, ConstraintLevel(float(rng.uniform(1.0, 10.0)))


def two_groups(seed=3):
    """Exceedances of two groups with ordered alphas, lower group first."""
    rng = np.random.default_rng(seed)
    out = []
    for alpha in (0.2, 0.5):
        yc = 2.0 + rng.exponential(size=200)
        out.append(ExceedanceData(yc, alpha * yc + yc**0.3 * rng.normal(0, 0.6, 200), 2.0))
    return out


def ordering_region(lo_data, hi_fit, hi_data, qs, v, ga, gb, keef=True):
    """Feasibility of the lower group's ``(alpha, beta)`` grid given the upper fit."""
    lvl = ConstraintLevel(v)
    a_hi, b_hi = hi_fit.params.alpha, hi_fit.params.beta
    rs_hi = ResidualSummary.from_fit(hi_fit.residuals, hi_data)
    out = np.zeros((ga.size, gb.size), dtype=bool)
    for i, a in enumerate(ga):
        for j, b in enumerate(gb):
            z = (lo_data.y_dep - a * lo_data.y_cond) / lo_data.y_cond**b
            rs = ResidualSummary.from_fit(z, lo_data)
            ok = so_feasible((a_hi, b_hi, rs_hi), (a, b, rs), lvl, qs)
            out[i, j] = ok and (not keef or keef_feasible(a, b, rs, lvl, qs))
    return out
