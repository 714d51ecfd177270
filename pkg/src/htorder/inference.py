"""Constrained estimation across ordered groups, the ordering test and bootstrap.

The joint pseudo-likelihood of several groups is maximised over the
``(alpha, beta)`` pairs of every group, with ``(mu, sigma)`` profiled out in
closed form. Parameter vectors violating the asymptotic-dependence bounds or
the chain ordering get likelihood ``-inf``; the simplex search starts from a
feasible point found by minimising a constraint-violation measure from the
unconstrained optimum.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .constraints import (
    DEFAULT_QS,
    FEASIBILITY_TOL,
    ConstraintLevel,
    DFunction,
    keef_feasible_values,
    so_margin,
)
from .exceptions import (
    BootstrapUnstable,
    DomainError,
    FitDiverged,
    HTOrderError,
    InfeasibleStart,
    NonFiniteStatistic,
)
from ._kernels import constraint_values, joint_barrier, joint_loglik
from .htcore import (
    ALPHA_BOUNDS,
    BETA_BOUNDS,
    DEGENERATE_SD,
    ExceedanceData,
    build_fit,
    fit_unconstrained,
    sample_conditional,
    type7_quantile,
)

logger = logging.getLogger(__name__)

_LOG_2PI = math.log(2.0 * math.pi)
_VIOLATION_CAP = 1e6


@dataclass(frozen=True)
class OrderingSpec:
    """Chain of groups whose conditional tails are ordered, lowest first."""

    group_order: tuple
    level: ConstraintLevel
    qs: tuple = DEFAULT_QS

    def __post_init__(self):
        order = tuple(self.group_order)
        object.__setattr__(self, "group_order", order)
        object.__setattr__(self, "qs", tuple(float(q) for q in self.qs))
        if len(order) < 2:
            raise DomainError("an ordering needs at least two groups")
        if len(set(order)) != len(order):
            raise DomainError("group labels must be distinct")
        if any(not 0.0 <= q <= 1.0 for q in self.qs):
            raise DomainError("constraint quantile levels must lie in [0, 1]")


@dataclass
class LrtResult:
    statistic: float
    null_sample: np.ndarray
    p_value: float
    n_sim: int
    unconstrained: dict = field(default_factory=dict, repr=False)
    constrained: dict = field(default_factory=dict, repr=False)

    def to_dict(self):
        return {"statistic": float(self.statistic), "p_value": float(self.p_value),
                "n_sim": int(self.n_sim),
                "null_sample": [float(s) for s in self.null_sample]}


class _Group:
    """Per-group cache used inside the joint objective."""

    __slots__ = ("d", "sum_log", "zp", "zm", "n")

    def __init__(self, d, qs):
        self.d = d
        self.n = d.n
        self.sum_log = float(d.log_cond.sum())
        zp = np.sort(d.y_dep - d.y_cond)
        zm = np.sort(d.y_dep + d.y_cond)
        self.zp = [type7_quantile(zp, q) for q in qs]
        self.zm = [type7_quantile(zm, q) for q in qs]

    def evaluate(self, alpha, beta, qs):
        d = self.d
        z = (d.y_dep - alpha * d.y_cond) * np.exp(-beta * d.log_cond)
        sd = float(z.std())
        ll = (-self.n * math.log(max(sd, DEGENERATE_SD)) - beta * self.sum_log
              - 0.5 * self.n * (1.0 + _LOG_2PI))
        if len(qs) == 2 and qs[0] == 0.0 and qs[1] == 1.0:
            zq = [float(z.min()), float(z.max())]
        else:
            zs = np.sort(z)
            zq = [type7_quantile(zs, q) for q in qs]
        return ll, zq


class _Problem:
    """Joint constrained likelihood over ``len(groups)`` ``(alpha, beta)`` pairs."""

    def __init__(self, datas, level, qs, ordered):
        self.groups = [_Group(d, qs) for d in datas]
        self.v = level.v
        self.qs = tuple(qs)
        self.ordered = ordered
        self.n_evals = 0
        self._yc = np.concatenate([d.y_cond for d in datas])
        self._yd = np.concatenate([d.y_dep for d in datas])
        self._logc = np.concatenate([d.log_cond for d in datas])
        self._offsets = np.cumsum([0] + [d.n for d in datas]).astype(np.int64)
        self._sum_logs = np.array([g.sum_log for g in self.groups])
        self._zp = np.array([g.zp for g in self.groups], dtype=float)
        self._zm = np.array([g.zm for g in self.groups], dtype=float)
        self._qs = np.array(self.qs, dtype=float)

    def _split(self, theta):
        return [(float(theta[2 * g]), float(theta[2 * g + 1])) for g in range(len(self.groups))]

    @staticmethod
    def in_box(ab):
        a, b = ab
        return ALPHA_BOUNDS[0] <= a <= ALPHA_BOUNDS[1] and BETA_BOUNDS[0] <= b <= BETA_BOUNDS[1]

    def loglik_parts(self, theta):
        pars = self._split(theta)
        lls, zqs = [], []
        for grp, (a, b) in zip(self.groups, pars):
            ll, zq = grp.evaluate(a, b, self.qs)
            lls.append(ll)
            zqs.append(zq)
        return pars, lls, zqs

    def is_feasible_parts(self, pars, zqs):
        v = self.v
        for grp, (a, b), zq in zip(self.groups, pars, zqs):
            for k in range(len(self.qs)):
                if not keef_feasible_values(a, b, zq[k], grp.zp[k], grp.zm[k], v):
                    return False
        if self.ordered:
            for g in range(len(self.groups) - 1):
                (al, bl), (ah, bh) = pars[g], pars[g + 1]
                if ah < al:
                    return False
                for k in range(len(self.qs)):
                    df = DFunction(ah, al, bh, bl, zqs[g + 1][k], zqs[g][k])
                    if so_margin(df, v) < -FEASIBILITY_TOL:
                        return False
        return True

    def feasible(self, theta):
        """Reference feasibility decision through :mod:`htorder.constraints`."""
        pars, _, zqs = self.loglik_parts(theta)
        return all(self.in_box(p) for p in pars) and self.is_feasible_parts(pars, zqs)

    def barrier_objective(self, theta):
        """Negative joint log-likelihood, ``+inf`` outside the feasible set."""
        self.n_evals += 1
        return joint_barrier(np.asarray(theta, dtype=float), self._yc, self._yd, self._logc,
                             self._offsets, self._sum_logs, self._zp, self._zm, self._qs,
                             self.v, self.ordered, ALPHA_BOUNDS[0], ALPHA_BOUNDS[1],
                             BETA_BOUNDS[0], BETA_BOUNDS[1], DEGENERATE_SD, FEASIBILITY_TOL)

    def joint_loglik(self, theta):
        return joint_loglik(np.asarray(theta, dtype=float), self._yc, self._yd, self._logc,
                            self._offsets, self._sum_logs, self._qs, DEGENERATE_SD)

    def margins(self, theta):
        """Smooth-ish constraint margins; all nonnegative on the feasible set."""
        return constraint_values(np.asarray(theta, dtype=float), self._yc, self._yd,
                                 self._logc, self._offsets, self._sum_logs, self._zp, self._zm,
                                 self._qs, self.v, self.ordered, DEGENERATE_SD, _VIOLATION_CAP)

    def violation(self, theta):
        """Nonnegative constraint-violation measure; zero only at feasible points."""
        self.n_evals += 1
        theta = np.asarray(theta, dtype=float)
        clipped = theta.copy()
        clipped[0::2] = np.clip(theta[0::2], *ALPHA_BOUNDS)
        clipped[1::2] = np.clip(theta[1::2], *BETA_BOUNDS)
        total = 10.0 * float(np.abs(theta - clipped).sum())
        total += float(np.maximum(-self.margins(clipped), 0.0).sum())
        if total == 0.0 and not math.isfinite(self.barrier_objective(clipped)):
            # margins and the displayed bounds can disagree exactly on the boundary
            total = 1e-9
        return total


def _simplex(x0, step):
    x0 = np.asarray(x0, dtype=float)
    pts = [x0]
    for i in range(x0.size):
        p = x0.copy()
        p[i] += step if i % 2 == 0 or p[i] + step < BETA_BOUNDS[1] else -step
        pts.append(p)
    return np.array(pts)


def _find_feasible(problem, theta_start, rng_seed=0):
    """Minimise the violation measure until a feasible point appears."""
    class _Found(Exception):
        pass

    found = {}

    def target(theta):
        val = problem.violation(theta)
        if val == 0.0:
            found["theta"] = np.array(theta, dtype=float)
            raise _Found
        return val

    rng = np.random.default_rng(rng_seed)
    theta_start = np.asarray(theta_start, dtype=float)
    starts = [theta_start]
    starts.extend(theta_start + rng.normal(0.0, 0.3, size=theta_start.size) for _ in range(6))
    # every group at independence, then at a common mid-dependence point
    g = len(problem.groups)
    starts.append(np.tile([0.0, 0.0], g))
    starts.append(np.tile([0.3, 0.3], g))
    for x0 in starts:
        for step in (0.1, 0.4):
            try:
                target(x0)
                minimize(target, x0, method="Nelder-Mead",
                         options={"initial_simplex": _simplex(x0, step), "maxfev": 3000,
                                  "xatol": 1e-10, "fatol": 1e-14})
            except _Found:
                theta = found["theta"]
                if problem.feasible(theta):
                    return theta
    raise InfeasibleStart("could not locate a parameter vector satisfying the constraints")


def _barrier_search(problem, theta0, f0, steps=(0.05, 0.01, 0.002), maxfev=1000):
    best_x, best_f = np.asarray(theta0, dtype=float), f0
    for step in steps:
        res = minimize(problem.barrier_objective, best_x, method="Nelder-Mead",
                       options={"initial_simplex": _simplex(best_x, step),
                                "xatol": 1e-9, "fatol": 1e-10, "maxfev": maxfev})
        if res.fun < best_f - 1e-10:
            best_x, best_f = res.x, float(res.fun)
    return best_x, best_f


def _pull_back(problem, x, anchor):
    """Closest point to ``x`` on the segment towards feasible ``anchor`` that is feasible."""
    if math.isfinite(problem.barrier_objective(x)):
        return x
    lo, hi = 0.0, 1.0
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if math.isfinite(problem.barrier_objective((1 - mid) * x + mid * anchor)):
            hi = mid
        else:
            lo = mid
    return (1 - hi) * x + hi * anchor


def _boundary_search(problem, theta0):
    """Sequential quadratic programming along the constraint margins from a feasible start.

    The simplex stalls on curved active boundaries; the margins are
    piecewise smooth, which suffices for SLSQP to slide along them. The
    result is pulled back into the feasible set and polished by the barrier
    simplex.
    """
    g = len(problem.groups)
    with np.errstate(all="ignore"), warnings.catch_warnings():
        # SLSQP reports (and clips) steps that leave the box
        warnings.simplefilter("ignore", RuntimeWarning)
        res = minimize(lambda t: -problem.joint_loglik(t), theta0, method="SLSQP",
                       constraints=[{"type": "ineq", "fun": problem.margins}],
                       bounds=[ALPHA_BOUNDS, BETA_BOUNDS] * g,
                       options={"ftol": 1e-12, "maxiter": 200})
    x = res.x if np.all(np.isfinite(res.x)) else theta0
    x = _pull_back(problem, x, theta0)
    return _barrier_search(problem, x, problem.barrier_objective(x))


def _screen_feasible(problem, theta_unc, n_points, rng):
    """Random feasible points near the unconstrained optimum, best first."""
    k = theta_unc.size
    lo = np.tile([ALPHA_BOUNDS[0], -1.5], k // 2)
    hi = np.tile([ALPHA_BOUNDS[1], 0.95], k // 2)
    out = []
    for i in range(n_points):
        if i % 2 == 0:
            theta = np.clip(theta_unc + rng.normal(0.0, 0.25, size=k), lo, hi)
        else:
            theta = rng.uniform(lo, hi)
        f = problem.barrier_objective(theta)
        if np.isfinite(f):
            out.append((f, theta))
    out.sort(key=lambda c: c[0])
    return out


def _optimise_constrained(datas, level, qs, ordered, unconstrained=None, n_screen=200,
                          n_starts=5):
    problem = _Problem(datas, level, qs, ordered)
    if unconstrained is None:
        unconstrained = [fit_unconstrained(d) for d in datas]
    theta_unc = np.array([x for f in unconstrained for x in (f.params.alpha, f.params.beta)])
    if problem.feasible(theta_unc):
        return unconstrained, True
    theta0 = _find_feasible(problem, theta_unc)
    starts = [theta0]
    rng = np.random.default_rng(0)
    starts.extend(x for _, x in _screen_feasible(problem, theta_unc, n_screen, rng)[:n_starts])
    candidates = [_boundary_search(problem, x) for x in starts]
    candidates.sort(key=lambda c: c[1])
    # the compiled barrier and the reference check can differ on a knife edge
    best_x = next((x for x, f in candidates if np.isfinite(f) and problem.feasible(x)), theta0)
    fits = [build_fit(best_x[2 * g], best_x[2 * g + 1], d) for g, d in enumerate(datas)]
    logger.debug("constrained fit: %d evaluations", problem.n_evals)
    return fits, False


def constrained_is_feasible(fits, datas, level, qs=DEFAULT_QS, ordered=True):
    problem = _Problem(datas, level, qs, ordered)
    theta = np.array([x for f in fits for x in (f.params.alpha, f.params.beta)])
    return problem.feasible(theta)


def fit_keef(d, level, qs=DEFAULT_QS, unconstrained=None):
    """Fit one group subject only to the asymptotic-dependence bounds."""
    fits, _ = _optimise_constrained([d], level, qs, ordered=False,
                                    unconstrained=None if unconstrained is None else [unconstrained])
    return fits[0]


def fit_constrained(data_by_group, spec, unconstrained=None):
    """Maximise the joint pseudo-likelihood subject to the ordering chain.

    Parameters
    ----------
    data_by_group : dict
        Label to :class:`~htorder.htcore.ExceedanceData`.
    spec : OrderingSpec
    unconstrained : dict, optional
        Precomputed unconstrained fits by label.

    Returns
    -------
    dict
        Label to constrained :class:`~htorder.htcore.HTFit`. When the
        unconstrained fits already satisfy every constraint they are returned
        unchanged.
    """
    missing = [g for g in spec.group_order if g not in data_by_group]
    if missing:
        raise DomainError(f"no data for groups {missing}")
    datas = [data_by_group[g] for g in spec.group_order]
    unc = None if unconstrained is None else [unconstrained[g] for g in spec.group_order]
    fits, _ = _optimise_constrained(datas, spec.level, spec.qs, ordered=True, unconstrained=unc)
    return dict(zip(spec.group_order, fits))


def fits_loglik(fits):
    return float(sum(f.loglik for f in fits.values()))


def simulate_from_fits(fits, sizes, rng):
    """Regenerate exceedance data for every group from fitted models."""
    out = {}
    for label, fit in fits.items():
        p = fit.params
        yc, yd = sample_conditional(p.alpha, p.beta, fit.residuals, fit.threshold_u,
                                    sizes[label], rng)
        out[label] = ExceedanceData(yc, yd, fit.threshold_u)
    return out


def _statistic(data_by_group, spec):
    try:
        unc = {g: fit_unconstrained(data_by_group[g]) for g in spec.group_order}
        con = fit_constrained(data_by_group, spec, unconstrained=unc)
    except (FitDiverged, FloatingPointError) as exc:
        raise NonFiniteStatistic(str(exc)) from exc
    ll_con = fits_loglik(con)
    # the unconstrained maximum can never be below the constrained one
    ll_unc = max(fits_loglik(unc), ll_con)
    stat = 2.0 * (ll_unc - ll_con)
    if not math.isfinite(stat):
        raise NonFiniteStatistic("likelihood-ratio statistic is not finite")
    return stat, unc, con


def _spec_for(data_by_group, spec):
    top = max(float(d.y_cond.max()) for d in data_by_group.values())
    return OrderingSpec(spec.group_order, spec.level.for_data(top), spec.qs)


def lrt_ordering(data_by_group, spec, n_sim=99, seed=0):
    """Likelihood-ratio test of the ordering with a simulated null distribution.

    The null sample is produced by fitting under the ordering, simulating
    ``n_sim`` datasets of the observed group sizes from the constrained fits,
    and refitting both models on each. Replicate ``i`` draws from its own
    stream spawned from ``seed``. A simulated dataset that admits no feasible
    ordered fit gets an infinite statistic, which can only raise the p-value.
    """
    if n_sim < 99:
        raise DomainError("n_sim must be at least 99")
    stat, unc, con = _statistic(data_by_group, spec)
    sizes = {g: data_by_group[g].n for g in spec.group_order}
    streams = np.random.SeedSequence(seed).spawn(n_sim)
    null = np.empty(n_sim)
    for i, ss in enumerate(streams):
        rng = np.random.default_rng(ss)
        sim = simulate_from_fits(con, sizes, rng)
        try:
            null[i] = _statistic(sim, _spec_for(sim, spec))[0]
        except InfeasibleStart:
            null[i] = np.inf
    p_value = (1.0 + np.count_nonzero(null >= stat)) / (n_sim + 1.0)
    return LrtResult(statistic=stat, null_sample=null, p_value=float(p_value), n_sim=n_sim,
                     unconstrained=unc, constrained=con)


def _resolve_functional(functional):
    if callable(functional):
        return functional
    parts = str(functional).split(":")
    kind = parts[0]
    if kind in ("alpha", "beta", "mu", "sigma") and len(parts) == 2:
        return lambda fits: getattr(fits[parts[1]].params, kind)
    if kind == "quantile" and len(parts) == 4:
        label, x, q = parts[1], float(parts[2]), float(parts[3])
        return lambda fits: fits[label].conditional_quantile(x, q)
    raise DomainError(f"unknown functional {functional!r}")


def bootstrap_functional(data_by_group, spec, functional, n_boot=200, seed=0,
                         max_failure_rate=0.10):
    """Parametric bootstrap of a derived quantity under the constrained model.

    ``functional`` is either a callable on the dict of fits or a string such as
    ``"alpha:A"`` or ``"quantile:A:6.2:0.8"``. Returns
    ``(estimate, lower95, upper95)`` from the equal-tailed bootstrap interval.
    """
    if n_boot < 100:
        raise DomainError("n_boot must be at least 100")
    func = _resolve_functional(functional)
    fits = fit_constrained(data_by_group, spec)
    if any(f.degenerate for f in fits.values()):
        raise BootstrapUnstable("fitted residuals are degenerate; refits cannot succeed")
    estimate = float(func(fits))
    sizes = {g: data_by_group[g].n for g in spec.group_order}
    values, failures = [], 0
    for ss in np.random.SeedSequence(seed).spawn(n_boot):
        rng = np.random.default_rng(ss)
        try:
            sim = simulate_from_fits(fits, sizes, rng)
            refit = fit_constrained(sim, _spec_for(sim, spec))
            if any(f.degenerate for f in refit.values()):
                raise FitDiverged("degenerate refit")
            values.append(float(func(refit)))
        except HTOrderError:
            failures += 1
    if failures > max_failure_rate * n_boot:
        raise BootstrapUnstable(f"{failures} of {n_boot} bootstrap refits failed")
    lo, hi = np.quantile(values, [0.025, 0.975])
    return estimate, float(lo), float(hi)
