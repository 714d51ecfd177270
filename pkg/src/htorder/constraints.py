"""Parameter-space constraints for the conditional extremes model.

Two families of constraints are decided here, both for extrapolation
levels ``x > v``:

* the asymptotic-dependence bounds, which keep a conditional quantile
  ``alpha * x + x**beta * z(q)`` between the quantiles of the perfectly
  negatively and perfectly positively dependent models;
* stochastic ordering of two conditional tails, i.e. nonnegativity of the
  quantile difference ``D(x) = (a_hi - a_lo) x + x**b_hi z_hi - x**b_lo z_lo``,
  decided by locating the (at most two) stationary points of ``D``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from scipy.optimize import brentq

from .exceptions import DomainError

#: ``D(x) >= -FEASIBILITY_TOL`` counts as satisfied.
FEASIBILITY_TOL = 1e-8
#: Upper end of the bracket used when reporting stationary points.
X_MAX = 1e8
#: Effectively infinite bracket (``exp(700)``) used by feasibility decisions.
X_FAR = math.exp(700.0)
_EQUAL_BETA = 1e-9
DEFAULT_QS = (0.0, 1.0)


@dataclass(frozen=True)
class ConstraintLevel:
    """Level ``v`` above which constraints are enforced.

    ``rule`` records how the value was chosen and travels into output metadata.
    """

    v: float
    rule: str = "fixed"
    floor: float | None = None

    def __post_init__(self):
        if not (self.v > 0 and math.isfinite(self.v)):
            raise DomainError(f"constraint level must be positive and finite, got {self.v}")

    @classmethod
    def default(cls, max_observed, floor=5.0):
        """``v = max(floor, max_observed)``."""
        v = max(float(floor), float(max_observed))
        return cls(v=v, rule=f"max({floor:g}, max observed conditioning value)",
                   floor=float(floor))

    def for_data(self, max_observed):
        """Re-apply a data-driven rule to new data; a fixed level is returned unchanged."""
        if self.floor is None:
            return self
        return ConstraintLevel.default(max_observed, self.floor)


@dataclass(frozen=True)
class DFunction:
    """Coefficients of the quantile difference ``D(x)`` between two groups."""

    alpha_hi: float
    alpha_lo: float
    beta_hi: float
    beta_lo: float
    z_hi: float
    z_lo: float

    def value(self, x):
        return ((self.alpha_hi - self.alpha_lo) * x + x**self.beta_hi * self.z_hi
                - x**self.beta_lo * self.z_lo)

    def derivative(self, x):
        return (self.alpha_hi - self.alpha_lo
                + self.beta_hi * self.z_hi * x ** (self.beta_hi - 1.0)
                - self.beta_lo * self.z_lo * x ** (self.beta_lo - 1.0))

    def second_derivative(self, x):
        return (self.beta_hi * (self.beta_hi - 1.0) * self.z_hi * x ** (self.beta_hi - 2.0)
                - self.beta_lo * (self.beta_lo - 1.0) * self.z_lo * x ** (self.beta_lo - 2.0))

    def inflection(self):
        """Root ``s`` of ``D''``, or ``None`` when it is not a positive real number."""
        a = self.beta_hi * (self.beta_hi - 1.0) * self.z_hi
        b = self.beta_lo * (self.beta_lo - 1.0) * self.z_lo
        if abs(self.beta_hi - self.beta_lo) < _EQUAL_BETA or a == 0.0 or b == 0.0:
            return None
        ratio = b / a
        if ratio <= 0.0:
            return None
        log_s = math.log(ratio) / (self.beta_hi - self.beta_lo)
        if log_s > 709.0:
            return None
        return math.exp(log_s)


@dataclass(frozen=True)
class StationaryReport:
    count: int
    points: tuple = field(default_factory=tuple)
    s: float | None = None


def _sign(value):
    return int(value > 0) - int(value < 0)


def classify_stationary(df, lvl, x_max=X_MAX):
    """Locate the stationary points of ``D`` on ``(v, x_max]``.

    ``D''`` has at most one positive root ``s``, so ``D'`` is monotone on
    ``[v, s]`` and on ``[s, x_max]`` (or on all of ``[v, x_max]`` when ``s`` is
    not a real number above ``v``). Each monotone piece holds a root of ``D'``
    exactly when ``D'`` changes sign across it; roots are refined on the
    ``log x`` scale.
    """
    v = lvl.v if isinstance(lvl, ConstraintLevel) else float(lvl)
    s = df.inflection()
    if x_max <= v:
        return StationaryReport(0, (), s)
    edges = [v, s, x_max] if s is not None and v < s < x_max else [v, x_max]

    def dprime_log(t):
        return df.derivative(math.exp(t))

    points = []
    for a, b in zip(edges[:-1], edges[1:]):
        ta, tb = math.log(a), math.log(b)
        fa, fb = dprime_log(ta), dprime_log(tb)
        if _sign(fa) * _sign(fb) < 0:
            t = brentq(dprime_log, ta, tb, xtol=1e-13, rtol=1e-15, maxiter=200)
            x = math.exp(t)
            if x > v and (not points or x > points[-1] * (1 + 1e-12)):
                points.append(x)
    return StationaryReport(len(points), tuple(points), s)


def so_margin(df, v, x_max=None):
    """Infimum of ``D`` over ``[v, x_max]`` (default ``[v, infinity)``).

    Over the unbounded range ``alpha_hi < alpha_lo`` gives ``-inf``.
    """
    if x_max is None:
        if df.alpha_hi < df.alpha_lo:
            return -math.inf
        x_max = X_FAR
        # without a linear term the power terms set the limit at infinity
        ends = [v, X_FAR] if df.alpha_hi == df.alpha_lo else [v]
    else:
        ends = [v, x_max]
    report = classify_stationary(df, v, x_max=x_max)
    return min(df.value(x) for x in ends + list(report.points))


def _pair_margins(alpha_hi, beta_hi, rs_hi, alpha_lo, beta_lo, rs_lo, v, qs, x_max=None):
    out = []
    for q in qs:
        df = DFunction(alpha_hi, alpha_lo, beta_hi, beta_lo,
                       rs_hi.z_quantile(q), rs_lo.z_quantile(q))
        out.append(so_margin(df, v, x_max))
    return out


def so_feasible(hi, lo, lvl, qs=DEFAULT_QS, x_max=None):
    """Whether group ``hi``'s conditional quantiles dominate group ``lo``'s above ``v``.

    ``hi`` and ``lo`` are ``(alpha, beta, ResidualSummary)`` triples. For each
    ``q`` the check requires ``D(v) >= 0`` and ``D >= 0`` at every stationary
    point above ``v``; ``alpha_hi >= alpha_lo`` is required throughout.
    ``x_max`` restricts the check to ``[v, x_max]``, in which case only the
    endpoints and stationary points matter.
    """
    alpha_hi, beta_hi, rs_hi = hi
    alpha_lo, beta_lo, rs_lo = lo
    if x_max is None and alpha_hi < alpha_lo:
        return False
    margins = _pair_margins(alpha_hi, beta_hi, rs_hi, alpha_lo, beta_lo, rs_lo, lvl.v, qs,
                            x_max)
    return all(m >= -FEASIBILITY_TOL for m in margins)


def _scaled_power(beta, bz, gap):
    """``(1 - 1/beta) * bz**(1/(1-beta)) * gap**(-beta/(1-beta))`` evaluated in logs."""
    log_mag = (math.log(bz) - beta * math.log(gap)) / (1.0 - beta)
    sign = 1.0 - 1.0 / beta
    if log_mag > 700.0:
        return math.copysign(math.inf, sign)
    return sign * math.exp(log_mag)


def _case1(alpha, beta, z, zp, v):
    """Upper bound against asymptotic positive dependence, as displayed."""
    vb = v ** (beta - 1.0)
    # a gap of FEASIBILITY_TOL at x = v counts as satisfied
    if alpha <= min(1.0, 1.0 - beta * z * vb, 1.0 - vb * z + zp / v) + FEASIBILITY_TOL / v:
        return True
    if 1.0 - beta * z * vb < alpha <= 1.0 and beta != 0.0:
        bz = beta * z
        if bz <= 0.0:
            return False
        if alpha == 1.0:
            # (1 - alpha)**(-beta / (1 - beta)) diverges or vanishes
            return beta < 0.0 and zp > 0.0
        return _scaled_power(beta, bz, 1.0 - alpha) + zp > 0.0
    return False


def _case2(alpha, beta, z, zm, v):
    """Lower bound against asymptotic negative dependence, as displayed."""
    vb = v ** (beta - 1.0)
    if -alpha <= min(1.0, 1.0 + beta * vb * z, 1.0 + vb * z - zm / v) + FEASIBILITY_TOL / v:
        return True
    if 1.0 + beta * vb * z < -alpha <= 1.0 and beta != 0.0:
        mbz = -beta * z
        if mbz <= 0.0:
            return False
        if alpha == -1.0:
            return beta < 0.0 and -zm > 0.0
        return _scaled_power(beta, mbz, 1.0 + alpha) - zm > 0.0
    return False


def keef_feasible_values(alpha, beta, z, zp, zm, v):
    """Asymptotic-dependence check for a single quantile level given raw values."""
    return _case1(alpha, beta, z, zp, v) and _case2(alpha, beta, z, zm, v)


def keef_feasible(alpha, beta, rs, lvl, qs=DEFAULT_QS):
    """Whether ``y^-(q) <= y(q) <= y^+(q)`` holds for all ``x > v`` and each ``q`` in ``qs``."""
    v = lvl.v
    for q in qs:
        if not keef_feasible_values(alpha, beta, rs.z_quantile(q), rs.z_plus_quantile(q),
                                    rs.z_minus_quantile(q), v):
            return False
    return True


def keef_margins(alpha, beta, z, zp, zm, v):
    """Infima over ``x >= v`` of ``y^+ - y`` and ``y - y^-`` for one quantile level.

    Both differences are convex whenever they have an interior minimum, so the
    infimum is either the value at ``v`` or the value at the stationary point.
    """
    def lower(slope, coef, const):
        # inf over x >= v of slope * x - x**beta * coef + const
        at_v = slope * v - v**beta * coef + const
        bc = beta * coef
        if bc <= 0.0 or slope - bc * v ** (beta - 1.0) >= 0.0:
            return at_v
        if slope <= 0.0:
            if beta > 0.0:
                return -math.inf
            return min(at_v, const)
        log_x = (math.log(bc) - math.log(slope)) / (1.0 - beta)
        if log_x > 700.0:
            # value at the stationary point is slope * x * (1 - 1/beta) + const
            return -math.inf if beta > 0.0 else at_v
        x_star = math.exp(log_x)
        return min(at_v, slope * x_star - x_star**beta * coef + const)

    upper_gap = lower(1.0 - alpha, z, zp)
    lower_gap = lower(1.0 + alpha, -z, -zm)
    return upper_gap, lower_gap


def so_feasible_chain(groups, lvl, qs=DEFAULT_QS):
    """Ordering along a chain of groups plus the dependence bounds for each group.

    ``groups`` lists ``(alpha, beta, ResidualSummary)`` from the lowest
    conditional tail to the highest.
    """
    if len(groups) < 2:
        raise DomainError("an ordering chain needs at least two groups")
    for alpha, beta, rs in groups:
        if not keef_feasible(alpha, beta, rs, lvl, qs):
            return False
    for lo, hi in zip(groups[:-1], groups[1:]):
        if not so_feasible(hi, lo, lvl, qs):
            return False
    return True
