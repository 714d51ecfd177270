"""Heffernan-Tawn conditional extremes model.

Given a conditioning variable ``Y_cond = x`` above a threshold ``u`` on the
standard Laplace scale, the dependent variable is modelled as
``Y_dep = alpha * x + x**beta * Z`` with ``Z`` independent of ``Y_cond``.
Parameters are estimated by pseudo-likelihood, treating ``Z`` as Normal with
mean ``mu`` and standard deviation ``sigma``; ``Z`` itself is then estimated by
the empirical distribution of the fitted residuals.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import DegenerateResidualsWarning, DomainError, FitDiverged, InsufficientData
from .margins import laplace_quantile

ALPHA_BOUNDS = (-1.0, 1.0)
BETA_BOUNDS = (-5.0, 1.0 - 1e-6)
#: Residual standard deviations below this are reported as degenerate.
DEGENERATE_SD = 1e-8
MIN_EXCEEDANCES = 10
_LOG_2PI = math.log(2.0 * math.pi)
_STARTS = [(a, b) for a in (-0.5, 0.0, 0.5) for b in (0.0, 0.5)]


def type7_quantile(sorted_values, q):
    """Linear-interpolation (type 7) quantile of an already sorted sample."""
    a = sorted_values
    n = a.shape[0]
    if q <= 0.0:
        return float(a[0])
    if q >= 1.0:
        return float(a[-1])
    h = (n - 1) * q
    lo = int(math.floor(h))
    frac = h - lo
    if lo + 1 >= n:
        return float(a[-1])
    return float(a[lo] + frac * (a[lo + 1] - a[lo]))


@dataclass(frozen=True)
class HTParams:
    alpha: float
    beta: float
    mu: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        if not ALPHA_BOUNDS[0] <= self.alpha <= ALPHA_BOUNDS[1]:
            raise DomainError(f"alpha must lie in [-1, 1], got {self.alpha}")
        if not self.beta < 1.0:
            raise DomainError(f"beta must be below 1, got {self.beta}")

    def to_dict(self):
        return {k: float(getattr(self, k)) for k in ("alpha", "beta", "mu", "sigma")}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: float(d[k]) for k in ("alpha", "beta", "mu", "sigma")})


@dataclass(frozen=True)
class ExceedanceData:
    """Pairs ``(y_cond, y_dep)`` on the Laplace scale with ``y_cond > threshold_u``."""

    y_cond: np.ndarray
    y_dep: np.ndarray
    threshold_u: float
    log_cond: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        yc = np.asarray(self.y_cond, dtype=float).ravel().copy()
        yd = np.asarray(self.y_dep, dtype=float).ravel().copy()
        if yc.size == 0:
            raise InsufficientData("exceedance data is empty")
        if yc.shape != yd.shape:
            raise DomainError("y_cond and y_dep must have equal length")
        if not np.all(np.isfinite(yc)) or not np.all(np.isfinite(yd)):
            raise DomainError("exceedance data must be finite")
        if self.threshold_u <= 0:
            raise DomainError("the dependence threshold must be positive")
        if np.any(yc <= self.threshold_u):
            raise DomainError("every conditioning value must exceed the threshold")
        for arr in (yc, yd):
            arr.setflags(write=False)
        object.__setattr__(self, "y_cond", yc)
        object.__setattr__(self, "y_dep", yd)
        object.__setattr__(self, "threshold_u", float(self.threshold_u))
        log_cond = np.log(yc)
        log_cond.setflags(write=False)
        object.__setattr__(self, "log_cond", log_cond)

    @property
    def n(self):
        return self.y_cond.size

    @classmethod
    def from_pairs(cls, y_cond, y_dep, threshold_u):
        """Keep only the pairs whose conditioning value exceeds ``threshold_u``."""
        y_cond = np.asarray(y_cond, dtype=float)
        y_dep = np.asarray(y_dep, dtype=float)
        keep = y_cond > threshold_u
        return cls(y_cond[keep], y_dep[keep], threshold_u)

    def to_dict(self):
        return {"threshold_u": self.threshold_u,
                "y_cond": self.y_cond.tolist(), "y_dep": self.y_dep.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["y_cond"]), np.asarray(d["y_dep"]), float(d["threshold_u"]))


class ResidualSummary:
    """Empirical quantile functions used by the constraint checks.

    ``z_quantile`` describes the fitted residuals; ``z_plus_quantile`` and
    ``z_minus_quantile`` describe ``y_dep - y_cond`` and ``y_dep + y_cond``,
    the residuals of the perfectly positively and negatively dependent models.
    All use type-7 interpolation, so ``q = 0`` and ``q = 1`` give the sample
    minimum and maximum.
    """

    __slots__ = ("_z", "_zp", "_zm")

    def __init__(self, residuals, z_plus, z_minus):
        self._z = np.sort(np.asarray(residuals, dtype=float).ravel())
        self._zp = np.sort(np.asarray(z_plus, dtype=float).ravel())
        self._zm = np.sort(np.asarray(z_minus, dtype=float).ravel())
        if self._z.size == 0 or self._zp.size == 0 or self._zm.size == 0:
            raise InsufficientData("residual summary needs nonempty samples")

    @classmethod
    def from_fit(cls, residuals, data):
        return cls(residuals, data.y_dep - data.y_cond, data.y_dep + data.y_cond)

    def z_quantile(self, q):
        return type7_quantile(self._z, q)

    def z_plus_quantile(self, q):
        return type7_quantile(self._zp, q)

    def z_minus_quantile(self, q):
        return type7_quantile(self._zm, q)

    @property
    def sorted_residuals(self):
        return self._z

    def to_dict(self):
        return {"residuals": self._z.tolist(), "z_plus": self._zp.tolist(),
                "z_minus": self._zm.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["residuals"], d["z_plus"], d["z_minus"])


@dataclass(frozen=True)
class HTFit:
    params: HTParams
    residuals: np.ndarray
    loglik: float
    residual_summary: ResidualSummary
    threshold_u: float
    degenerate: bool = False

    def conditional_quantile(self, x, q):
        return conditional_quantile(self.params, self.residual_summary, x, q)

    def to_dict(self):
        return {"params": self.params.to_dict(),
                "residuals": np.asarray(self.residuals).tolist(),
                "loglik": float(self.loglik),
                "threshold_u": float(self.threshold_u),
                "degenerate": bool(self.degenerate),
                "residual_summary": self.residual_summary.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(params=HTParams.from_dict(d["params"]),
                   residuals=np.asarray(d["residuals"], dtype=float),
                   loglik=float(d["loglik"]),
                   residual_summary=ResidualSummary.from_dict(d["residual_summary"]),
                   threshold_u=float(d["threshold_u"]),
                   degenerate=bool(d.get("degenerate", False)))


def residuals(p, d):
    """Normalised residuals ``(y_dep - alpha * y_cond) / y_cond**beta``."""
    return (d.y_dep - p.alpha * d.y_cond) / d.y_cond ** p.beta


def negloglik(p, d):
    """Working Normal negative log-likelihood of the conditional model."""
    if not p.sigma > 0:
        raise DomainError("sigma must be positive")
    scale = d.y_cond ** p.beta
    resid = (d.y_dep - p.alpha * d.y_cond - p.mu * scale) / scale
    n = d.n
    return float(n * math.log(p.sigma) + p.beta * d.log_cond.sum()
                 + 0.5 * np.dot(resid, resid) / p.sigma**2 + 0.5 * n * _LOG_2PI)


def profile_terms(alpha, beta, d):
    """Profile log-likelihood at ``(alpha, beta)`` with ``(mu, sigma)`` in closed form.

    Returns ``(loglik, mu_hat, sigma_hat, residuals)``; ``sigma_hat`` is the
    maximum likelihood (divisor ``n``) standard deviation of the residuals.
    """
    z = (d.y_dep - alpha * d.y_cond) * np.exp(-beta * d.log_cond)
    mu = float(z.mean())
    sd = float(np.sqrt(np.mean((z - mu) ** 2)))
    n = d.n
    ll = (-n * math.log(max(sd, DEGENERATE_SD)) - beta * float(d.log_cond.sum())
          - 0.5 * n * (1.0 + _LOG_2PI))
    return ll, mu, sd, z


def profile_loglik(alpha, beta, d):
    return profile_terms(alpha, beta, d)[0]


def _profile_value_and_grad(theta, d, sum_log):
    alpha, beta = theta
    w = np.exp(-beta * d.log_cond)
    z = (d.y_dep - alpha * d.y_cond) * w
    zc = z - z.mean()
    n = d.n
    var = float(np.dot(zc, zc)) / n
    if var < DEGENERATE_SD**2:
        ll = -n * math.log(DEGENERATE_SD) - beta * sum_log - 0.5 * n * (1.0 + _LOG_2PI)
        return -ll, np.array([0.0, sum_log])
    ll = -0.5 * n * math.log(var) - beta * sum_log - 0.5 * n * (1.0 + _LOG_2PI)
    dvar_da = -2.0 * float(np.dot(zc, d.y_cond * w)) / n
    dvar_db = -2.0 * float(np.dot(zc, d.log_cond * z)) / n
    grad = np.array([0.5 * n * dvar_da / var, 0.5 * n * dvar_db / var + sum_log])
    return -ll, grad


def profile_surface(d, grid_alpha, grid_beta):
    """Profile log-likelihood on a grid; entry ``(i, j)`` is at ``(alpha_i, beta_j)``."""
    ga = np.atleast_1d(np.asarray(grid_alpha, dtype=float))
    gb = np.atleast_1d(np.asarray(grid_beta, dtype=float))
    if ga.size == 0 or gb.size == 0:
        raise DomainError("grids must be nonempty")
    w = np.exp(-gb[:, None] * d.log_cond[None, :])            # (B, n)
    base = d.y_dep[None, :] * w                                # (B, n)
    cw = d.y_cond[None, :] * w                                 # (B, n)
    z = base[None, :, :] - ga[:, None, None] * cw[None, :, :]  # (A, B, n)
    sd = z.std(axis=2)
    n = d.n
    return (-n * np.log(np.maximum(sd, DEGENERATE_SD))
            - gb[None, :] * d.log_cond.sum() - 0.5 * n * (1.0 + _LOG_2PI))


_GRID_ALPHA = np.linspace(-1.0, 1.0, 21)
_GRID_BETA = np.linspace(-3.0, 0.95, 21)


def build_fit(alpha, beta, d):
    """Assemble an :class:`HTFit` at fixed ``(alpha, beta)`` with profiled ``(mu, sigma)``."""
    ll, mu, sd, z = profile_terms(alpha, beta, d)
    degenerate = sd < DEGENERATE_SD
    if degenerate:
        warnings.warn(f"residual standard deviation {sd:.3g} is numerically zero",
                      DegenerateResidualsWarning, stacklevel=2)
    params = HTParams(alpha=float(alpha), beta=float(beta), mu=mu,
                      sigma=max(sd, DEGENERATE_SD))
    z.setflags(write=False)
    return HTFit(params=params, residuals=z, loglik=ll,
                 residual_summary=ResidualSummary.from_fit(z, d),
                 threshold_u=d.threshold_u, degenerate=bool(degenerate))


def fit_unconstrained(d, starts=None):
    """Pseudo-likelihood fit of the conditional model without constraints.

    ``(mu, sigma)`` are profiled out in closed form and the remaining
    ``(alpha, beta)`` profile is maximised within the box
    ``[-1, 1] x [-5, 1)`` from several starts, one of them the best point of a
    coarse grid. Ties between starts go to the earliest.
    """
    if d.n < MIN_EXCEEDANCES:
        raise InsufficientData(f"need at least {MIN_EXCEEDANCES} exceedances, got {d.n}")
    surface = profile_surface(d, _GRID_ALPHA, _GRID_BETA)
    i, j = np.unravel_index(np.argmax(surface), surface.shape)
    start_points = list(_STARTS if starts is None else starts)
    start_points.append((float(_GRID_ALPHA[i]), float(_GRID_BETA[j])))
    sum_log = float(d.log_cond.sum())
    best_x, best_f = None, np.inf
    for start in start_points:
        res = minimize(_profile_value_and_grad, np.asarray(start, dtype=float),
                       args=(d, sum_log), jac=True, method="L-BFGS-B",
                       bounds=[ALPHA_BOUNDS, BETA_BOUNDS],
                       options={"ftol": 1e-13, "gtol": 1e-9, "maxiter": 500})
        if np.isfinite(res.fun) and res.fun < best_f - 1e-12:
            best_x, best_f = res.x, float(res.fun)
    if best_x is None:
        raise FitDiverged("no start produced a finite likelihood")
    return build_fit(float(best_x[0]), float(best_x[1]), d)


def conditional_quantile(p, rs, x, q):
    """``q``-th conditional quantile ``alpha * x + x**beta * z(q)`` of ``Y_dep | Y_cond = x``."""
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr <= 0):
        raise DomainError("conditioning value must be positive")
    if not 0.0 <= q <= 1.0:
        raise DomainError("q must lie in [0, 1]")
    out = p.alpha * x_arr + x_arr ** p.beta * rs.z_quantile(q)
    return float(out) if out.ndim == 0 else out


def sample_conditional(alpha, beta, residual_pool, threshold_u, n, rng):
    """Draw ``n`` pairs from the fitted model given ``Y_cond > threshold_u``.

    The conditioning value is a Laplace variable above the (positive)
    threshold, i.e. ``u + Exp(1)``; residuals are resampled from the pool.
    """
    y_cond = threshold_u + rng.standard_exponential(n)
    z = rng.choice(np.asarray(residual_pool, dtype=float), size=n, replace=True)
    return y_cond, alpha * y_cond + y_cond**beta * z


class HeffernanTawn(BaseEstimator):
    """Estimator wrapper around :func:`fit_unconstrained`.

    Parameters
    ----------
    threshold_quantile : float
        Standard Laplace quantile level of the dependence threshold.

    ``X`` holds two Laplace-scale columns: the conditioning variable first, the
    dependent variable second.
    """

    def __init__(self, threshold_quantile=0.7):
        self.threshold_quantile = threshold_quantile

    def fit(self, X, y=None):
        X = check_array(X)
        if X.shape[1] != 2:
            raise DomainError("expected two columns: conditioning, dependent")
        self.threshold_ = float(laplace_quantile(self.threshold_quantile))
        self.data_ = ExceedanceData.from_pairs(X[:, 0], X[:, 1], self.threshold_)
        self.fit_ = fit_unconstrained(self.data_)
        p = self.fit_.params
        self.alpha_, self.beta_, self.mu_, self.sigma_ = p.alpha, p.beta, p.mu, p.sigma
        return self

    def predict(self, x, q=0.5):
        """Conditional ``q``-quantile of the dependent variable at each ``x``."""
        check_is_fitted(self, "fit_")
        return self.fit_.conditional_quantile(np.asarray(x, dtype=float), q)

    def sample(self, n, random_state=None):
        """Draw ``n`` Laplace-scale pairs given the conditioning variable exceeds the threshold."""
        check_is_fitted(self, "fit_")
        rng = np.random.default_rng(random_state)
        yc, yd = sample_conditional(self.alpha_, self.beta_, self.fit_.residuals,
                                    self.threshold_, n, rng)
        return np.column_stack([yc, yd])

    def score(self, X, y=None):
        """Mean profile log-likelihood per exceedance of ``X`` at the fitted ``(alpha, beta)``."""
        check_is_fitted(self, "fit_")
        X = check_array(X)
        d = ExceedanceData.from_pairs(X[:, 0], X[:, 1], self.threshold_)
        return negloglik(self.fit_.params, d) / -d.n
