"""Semiparametric marginal models and the transformation to Laplace margins.

Each margin is modelled by its empirical distribution below a threshold ``u``
and by a generalised Pareto (GP) tail above it. Probabilities are mapped to the
standard Laplace scale, on which the conditional dependence model operates.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import DomainError, FitDiverged, InsufficientData

#: Upper clamp applied to CDF values so that they stay strictly inside (0, 1).
CDF_EPS = 1e-10
_XI_LOWER, _XI_UPPER = -1.0, 2.0
_XI_ZERO = 1e-12


@dataclass(frozen=True)
class GpdParams:
    """Generalised Pareto scale and shape."""

    sigma: float
    xi: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise DomainError(f"GP scale must be positive, got {self.sigma}")
        if not self.xi > _XI_LOWER:
            raise DomainError(f"GP shape must exceed -1, got {self.xi}")

    def to_dict(self):
        return {"sigma": float(self.sigma), "xi": float(self.xi)}

    @classmethod
    def from_dict(cls, d):
        return cls(sigma=float(d["sigma"]), xi=float(d["xi"]))


def gpd_loglik_terms(excesses, sigma, xi):
    """Per-observation GP log-densities; ``-inf`` outside the support."""
    y = np.asarray(excesses, dtype=float)
    if sigma <= 0:
        return np.full(y.shape, -np.inf)
    if abs(xi) < _XI_ZERO:
        return -np.log(sigma) - y / sigma
    arg = 1.0 + xi * y / sigma
    out = np.full(y.shape, -np.inf)
    ok = arg > 0
    out[ok] = -np.log(sigma) - (1.0 + 1.0 / xi) * np.log(arg[ok])
    return out


def gpd_negloglik(excesses, sigma, xi):
    """GP negative log-likelihood of threshold excesses."""
    return -float(np.sum(gpd_loglik_terms(excesses, sigma, xi)))


def fit_gpd(excesses, n_starts=5):
    """Maximum likelihood fit of a GP distribution to threshold excesses.

    The optimisation runs a Nelder-Mead simplex over ``(log sigma, xi)`` from
    several starting points, rejecting shapes outside ``(-1, 2]``.

    Parameters
    ----------
    excesses : array_like
        Positive, already threshold-subtracted exceedances.
    n_starts : int
        Number of simplex starts.

    Returns
    -------
    GpdParams
    """
    y = np.asarray(excesses, dtype=float).ravel()
    if y.size == 0:
        raise InsufficientData("cannot fit a GP distribution to no excesses")
    if np.any(~np.isfinite(y)) or np.any(y <= 0):
        raise DomainError("GP excesses must be finite and strictly positive")

    def objective(theta):
        log_sigma, xi = theta
        if not (_XI_LOWER < xi <= _XI_UPPER):
            return np.inf
        value = gpd_negloglik(y, np.exp(log_sigma), xi)
        return value if np.isfinite(value) else np.inf

    mean = float(np.mean(y))
    var = float(np.var(y))
    starts = [(np.log(mean), 0.0)]
    if var > 0:
        # method-of-moments start, pulled inside the admissible shape range
        xi_mom = float(np.clip(0.5 * (1.0 - mean**2 / var), -0.45, 0.9))
        starts.append((np.log(max(mean * (1.0 - xi_mom), 1e-12)), xi_mom))
    for xi0 in (-0.25, 0.25, 0.5, 0.1):
        sigma0 = max(mean * (1.0 - xi0), np.max(y) * max(-xi0, 0.0) * 1.05, 1e-12)
        starts.append((np.log(sigma0), xi0))
    starts = starts[: max(n_starts, 1)]

    best = None
    for start in starts:
        if not np.isfinite(objective(start)):
            continue
        res = minimize(objective, np.asarray(start), method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 4000})
        # restart once from the optimum; simplex methods can stop short
        res = minimize(objective, res.x, method="Nelder-Mead",
                       options={"xatol": 1e-12, "fatol": 1e-13, "maxiter": 4000})
        if np.isfinite(res.fun) and (best is None or res.fun < best.fun):
            best = res
    if best is None:
        raise FitDiverged("GP fit did not converge from any start")
    return GpdParams(sigma=float(np.exp(best.x[0])), xi=float(best.x[1]))


def gpd_survival(excess, params):
    """GP survival function of an excess over the threshold."""
    y = np.maximum(np.asarray(excess, dtype=float), 0.0)
    sigma, xi = params.sigma, params.xi
    if abs(xi) < _XI_ZERO:
        return np.exp(-y / sigma)
    arg = np.maximum(1.0 + xi * y / sigma, 0.0)
    with np.errstate(divide="ignore"):
        return np.where(arg > 0, arg ** (-1.0 / xi), 0.0)


def gpd_quantile_excess(tail_prob, params):
    """Excess ``y`` with GP survival probability ``tail_prob``."""
    p = np.asarray(tail_prob, dtype=float)
    sigma, xi = params.sigma, params.xi
    if abs(xi) < _XI_ZERO:
        return -sigma * np.log(p)
    return sigma / xi * (p ** (-xi) - 1.0)


@dataclass(frozen=True)
class MarginalModel:
    """Empirical body below ``threshold_u`` with a GP tail above it.

    ``exceed_prob`` is ``1 - F~(u)`` with the empirical CDF
    ``F~(x) = #{X_i <= x} / (n + 1)``.
    """

    threshold_u: float
    exceed_prob: float
    body_sample: np.ndarray
    gpd: GpdParams

    def __post_init__(self):
        sample = np.sort(np.asarray(self.body_sample, dtype=float).ravel())
        object.__setattr__(self, "body_sample", sample)
        sample.setflags(write=False)
        if not 0.0 < self.exceed_prob < 1.0:
            raise DomainError("exceedance probability must lie in (0, 1)")

    @property
    def n(self):
        return self.body_sample.size

    def cdf(self, x):
        return semiparametric_cdf(x, self)

    def ppf(self, p):
        """Inverse of :meth:`cdf`; the body uses empirical order statistics."""
        p = np.asarray(p, dtype=float)
        if np.any((p <= 0) | (p >= 1)):
            raise DomainError("probabilities must lie in (0, 1)")
        n = self.n
        body_cut = 1.0 - self.exceed_prob
        idx = np.clip(np.ceil(p * (n + 1)).astype(int), 1, n) - 1
        body = self.body_sample[idx]
        tail_p = np.clip((1.0 - p) / self.exceed_prob, 0.0, 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            tail = self.threshold_u + gpd_quantile_excess(tail_p, self.gpd)
        return np.where(p <= body_cut, np.minimum(body, self.threshold_u), tail)

    def to_dict(self):
        return {
            "threshold_u": float(self.threshold_u),
            "exceed_prob": float(self.exceed_prob),
            "gpd": self.gpd.to_dict(),
            "body_sample": [float(v) for v in self.body_sample],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(threshold_u=float(d["threshold_u"]),
                   exceed_prob=float(d["exceed_prob"]),
                   body_sample=np.asarray(d["body_sample"], dtype=float),
                   gpd=GpdParams.from_dict(d["gpd"]))


def fit_marginal(x, threshold_quantile=0.7, n_starts=5):
    """Fit a :class:`MarginalModel` with threshold at an empirical quantile."""
    x = np.asarray(x, dtype=float).ravel()
    if not 0.0 < threshold_quantile < 1.0:
        raise DomainError("threshold quantile must lie in (0, 1)")
    if x.size < 3:
        raise InsufficientData("need at least three observations for a marginal fit")
    u = float(np.quantile(x, threshold_quantile))
    excesses = x[x > u] - u
    if excesses.size < 2:
        raise InsufficientData("fewer than two observations above the marginal threshold")
    n = x.size
    exceed_prob = 1.0 - np.count_nonzero(x <= u) / (n + 1.0)
    return MarginalModel(threshold_u=u, exceed_prob=exceed_prob, body_sample=x,
                         gpd=fit_gpd(excesses, n_starts=n_starts))


def semiparametric_cdf(x, m):
    """Semiparametric CDF: empirical below the threshold, GP tail above it.

    Values are clamped to at most ``1 - CDF_EPS`` (also past a finite upper
    endpoint when the shape is negative).
    """
    x_arr = np.asarray(x, dtype=float)
    n = m.n
    body = np.searchsorted(m.body_sample, x_arr, side="right") / (n + 1.0)
    tail = 1.0 - m.exceed_prob * gpd_survival(x_arr - m.threshold_u, m.gpd)
    out = np.where(x_arr > m.threshold_u, tail, body)
    out = np.minimum(out, 1.0 - CDF_EPS)
    return float(out) if np.ndim(out) == 0 else out


def _check_open_unit(p):
    p = np.asarray(p, dtype=float)
    if np.any(~((p > 0) & (p < 1))):
        raise DomainError("probabilities must lie strictly inside (0, 1)")
    return p


def to_laplace(p):
    """Map probabilities in (0, 1) to the standard Laplace scale."""
    p = _check_open_unit(p)
    with np.errstate(divide="ignore"):
        y = np.where(p < 0.5, np.log(2.0 * p), -np.log(2.0 * (1.0 - p)))
    return float(y) if y.ndim == 0 else y


def from_laplace(y):
    """Standard Laplace CDF; inverse of :func:`to_laplace`."""
    y = np.asarray(y, dtype=float)
    with np.errstate(over="ignore"):
        p = np.where(y < 0, 0.5 * np.exp(np.minimum(y, 0.0)),
                     1.0 - 0.5 * np.exp(-np.maximum(y, 0.0)))
    return float(p) if p.ndim == 0 else p


def laplace_quantile(p):
    """Quantile function of the standard Laplace distribution."""
    return to_laplace(p)


class SemiparametricMarginal(TransformerMixin, BaseEstimator):
    """Column-wise semiparametric margins with a Laplace-scale transform.

    Parameters
    ----------
    threshold_quantile : float
        Empirical quantile level used as the GP threshold of every column.
    n_starts : int
        Simplex starts for each GP fit.

    Attributes
    ----------
    models_ : list of MarginalModel
        One fitted model per column.
    """

    def __init__(self, threshold_quantile=0.7, n_starts=5):
        self.threshold_quantile = threshold_quantile
        self.n_starts = n_starts

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_samples=3)
        self.models_ = [fit_marginal(X[:, j], self.threshold_quantile, self.n_starts)
                        for j in range(X.shape[1])]
        self.n_features_in_ = X.shape[1]
        return self

    def _check_width(self, X):
        if X.shape[1] != self.n_features_in_:
            raise DomainError(f"expected {self.n_features_in_} columns, got {X.shape[1]}")

    def transform(self, X):
        """Original scale to standard Laplace scale."""
        check_is_fitted(self, "models_")
        X = check_array(X)
        self._check_width(X)
        cols = [to_laplace(np.atleast_1d(m.cdf(X[:, j]))) for j, m in enumerate(self.models_)]
        return np.column_stack(cols)

    def inverse_transform(self, Y):
        """Standard Laplace scale back to the original scale."""
        check_is_fitted(self, "models_")
        Y = check_array(Y)
        self._check_width(Y)
        cols = []
        for j, m in enumerate(self.models_):
            p = np.clip(from_laplace(Y[:, j]), CDF_EPS, 1.0 - CDF_EPS)
            cols.append(m.ppf(p))
        return np.column_stack(cols)
