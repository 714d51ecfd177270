"""Exact-model simulation, fitted-model sampling and the RMSE study harness."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import norm

from .constraints import ConstraintLevel
from .exceptions import DomainError, HTOrderError, StudyUnstable
from .htcore import ExceedanceData, fit_unconstrained, sample_conditional
from .inference import OrderingSpec, fit_constrained, fit_keef
from .margins import CDF_EPS, from_laplace, laplace_quantile

FAMILIES = ("logistic", "inverted_logistic", "gaussian")
#: Estimates differing by more than this in alpha or beta count as changed.
CHANGE_TOL = 1e-6


def _check_dep(family, dep):
    if family not in FAMILIES:
        raise DomainError(f"unknown family {family!r}; expected one of {FAMILIES}")
    dep = float(dep)
    if family == "gaussian":
        if not 0.0 <= dep < 1.0:
            raise DomainError(f"gaussian rho must lie in [0, 1), got {dep}")
    elif not 0.0 < dep <= 1.0:
        raise DomainError(f"{family} dependence parameter must lie in (0, 1], got {dep}")
    return dep


def normalising_constants(family, dep):
    """``(alpha, beta)`` of the limiting conditional model for ``Y2 | Y1``."""
    dep = _check_dep(family, dep)
    if family == "logistic":
        return 1.0, 0.0
    if family == "inverted_logistic":
        return 0.0, 1.0 - dep
    return dep**2, 0.5


def sample_exact_residual(family, dep, u01):
    """Inverse of the limiting residual distribution ``G`` at ``u01``."""
    dep = _check_dep(family, dep)
    u = np.asarray(u01, dtype=float)
    if np.any((u <= 0.0) | (u >= 1.0)):
        raise DomainError("u01 must lie strictly inside (0, 1)")
    if family == "logistic":
        if dep == 1.0:
            raise DomainError("logistic residual distribution is degenerate at lambda = 1")
        out = -dep * np.log(u ** (1.0 / (dep - 1.0)) - 1.0)
    elif family == "inverted_logistic":
        out = (-np.log1p(-u) / dep) ** dep
    else:
        out = math.sqrt(2.0 * dep**2 * (1.0 - dep**2)) * norm.ppf(u)
    return float(out) if out.ndim == 0 else out


def true_conditional_quantile(family, dep, x, q):
    """``alpha * x + x**beta * G^{-1}(q)`` with the tabulated ingredients.

    At ``rho = 0`` the Gaussian residual law is a point mass at zero and the
    quantile is 0.
    """
    if not 0.0 < q < 1.0:
        raise DomainError("q must lie in (0, 1)")
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise DomainError("conditioning value must be positive")
    alpha, beta = normalising_constants(family, dep)
    z = sample_exact_residual(family, dep, q)
    out = alpha * x + x**beta * z
    return float(out) if out.ndim == 0 else out


def _is_independence(family, dep):
    return family == "gaussian" and dep == 0.0


def study_quantile(family, dep, x, q):
    """True conditional quantile of the model actually simulated by :func:`simulate_exact`.

    Identical to :func:`true_conditional_quantile` except for the Gaussian
    copula at ``rho = 0``, which is simulated as exact independence
    (``Y2`` standard Laplace).
    """
    if _is_independence(family, dep):
        return float(laplace_quantile(q)) + 0.0 * float(x)
    return true_conditional_quantile(family, dep, x, q)


@dataclass(frozen=True)
class ExactModelSpec:
    family: str
    dep: float
    threshold_u: float
    n: int

    def __post_init__(self):
        _check_dep(self.family, self.dep)
        if not self.threshold_u > 0:
            raise DomainError("threshold must be positive")
        if self.n < 1:
            raise DomainError("n must be positive")


def simulate_exact(spec, seed):
    """Draw ``spec.n`` pairs from the exact conditional model above ``spec.threshold_u``.

    ``seed`` may be an integer, a ``SeedSequence`` or a ``Generator``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    y1 = spec.threshold_u + rng.standard_exponential(spec.n)
    if _is_independence(spec.family, spec.dep):
        y2 = rng.laplace(0.0, 1.0, spec.n)
        return ExceedanceData(y1, y2, spec.threshold_u)
    alpha, beta = normalising_constants(spec.family, spec.dep)
    u = rng.uniform(size=spec.n)
    u = np.clip(u, CDF_EPS, 1.0 - CDF_EPS)
    z = np.atleast_1d(sample_exact_residual(spec.family, spec.dep, u))
    return ExceedanceData(y1, alpha * y1 + y1**beta * z, spec.threshold_u)


def ht_sample(fit, cond_margin, dep_margin, n, seed):
    """Sample the original-scale pair ``(X_cond, X_dep)`` given ``X_cond`` exceeds its threshold.

    Conditioning values are Laplace above the fit's threshold, residuals are
    resampled from the fitted residuals, and both margins are mapped back
    through the inverse probability-integral and Laplace transforms.

    Returns
    -------
    ndarray of shape (n, 2)
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    p = fit.params
    y_cond, y_dep = sample_conditional(p.alpha, p.beta, fit.residuals, fit.threshold_u, n, rng)
    pc = np.clip(from_laplace(y_cond), CDF_EPS, 1.0 - CDF_EPS)
    pd = np.clip(from_laplace(y_dep), CDF_EPS, 1.0 - CDF_EPS)
    return np.column_stack([cond_margin.ppf(pc), dep_margin.ppf(pd)])


@dataclass(frozen=True)
class StudyPair:
    """Two dependence values of one family; ``dep_hi`` gives the larger conditional tail."""

    family: str
    dep_hi: float
    dep_lo: float

    def __post_init__(self):
        _check_dep(self.family, self.dep_hi)
        _check_dep(self.family, self.dep_lo)

    @property
    def label(self):
        return f"{self.family}({self.dep_hi:g},{self.dep_lo:g})"


@dataclass(frozen=True)
class StudyConfig:
    pairs: tuple
    n_per_sample: int = 500
    n_replicates: int = 200
    quantiles: tuple = (0.2, 0.8)
    levels: tuple = (0.95, 0.999)
    seed: int = 0
    threshold_quantile: float = 0.95
    v_floor: float = 5.0
    max_failure_rate: float = 0.05

    def __post_init__(self):
        pairs = tuple(p if isinstance(p, StudyPair) else StudyPair(*p) for p in self.pairs)
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "quantiles", tuple(float(q) for q in self.quantiles))
        object.__setattr__(self, "levels", tuple(float(p) for p in self.levels))
        if not pairs:
            raise DomainError("a study needs at least one pair")
        if self.n_per_sample < 10 or self.n_replicates < 1:
            raise DomainError("counts must be positive (at least 10 pairs per sample)")
        if any(not 0.0 < q < 1.0 for q in self.quantiles):
            raise DomainError("quantile levels must lie in (0, 1)")
        if any(not 0.0 < p < 1.0 for p in self.levels):
            raise DomainError("conditioning levels must lie in (0, 1)")
        if not 0.5 < self.threshold_quantile < 1.0:
            raise DomainError("threshold quantile must lie in (0.5, 1)")

    def to_dict(self):
        d = asdict(self)
        d["pairs"] = [asdict(p) for p in self.pairs]
        return d


PRESETS = {
    "paper-table4-desk": dict(
        pairs=(StudyPair("logistic", 0.6, 0.9),
               StudyPair("inverted_logistic", 0.3, 0.7),
               StudyPair("inverted_logistic", 0.415, 1.0),
               StudyPair("gaussian", 0.7, 0.3),
               StudyPair("gaussian", 0.5, 0.0)),
        n_per_sample=500, n_replicates=200),
    # the inverted logistic and Gaussian values sharing a tail-dependence coefficient
    "equal-tail-coefficient": dict(
        pairs=(StudyPair("inverted_logistic", 0.415, 1.0), StudyPair("gaussian", 0.5, 0.0)),
        n_per_sample=500, n_replicates=200),
    "smoke": dict(
        pairs=(StudyPair("inverted_logistic", 0.3, 0.7),),
        n_per_sample=200, n_replicates=10),
}


def preset(name, full=False, **overrides):
    if name not in PRESETS:
        raise DomainError(f"unknown preset {name!r}; available: {sorted(PRESETS)}")
    kw = dict(PRESETS[name])
    if full:
        kw["n_replicates"] = 1000
    kw.update(overrides)
    return StudyConfig(**kw)


MODELS = ("HT", "AD", "SO")
RATIOS = (("AD", "HT"), ("SO", "HT"), ("SO", "AD"))


@dataclass
class RmseTable:
    """RMSEs by ``(model, family, dep, q, level)`` with derived ratios and change rates."""

    rmse: dict = field(default_factory=dict)
    change_percent: dict = field(default_factory=dict)
    n_used: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def ratio(self, num, den, family, dep, q, level):
        return (self.rmse[(num, family, float(dep), float(q), float(level))]
                / self.rmse[(den, family, float(dep), float(q), float(level))])

    @property
    def entries(self):
        out = {}
        for (model, family, dep, q, level) in self.rmse:
            if model != "HT":
                continue
            for num, den in RATIOS:
                out[(f"{num}/{den}", family, dep, q, level)] = self.ratio(
                    num, den, family, dep, q, level)
        return out

    def rows(self):
        """One row per ratio cell, sorted, for CSV output."""
        rows = []
        for (name, family, dep, q, level), value in sorted(self.entries.items()):
            rows.append({"ratio": name, "family": family, "dep": dep, "q": q,
                         "level": level, "value": value})
        return rows

    def to_dict(self):
        return {
            "ratios": self.rows(),
            "rmse": [{"model": m, "family": f, "dep": d, "q": q, "level": lv, "value": v}
                     for (m, f, d, q, lv), v in sorted(self.rmse.items())],
            "change_percent": [{"pair": k[0], "family": k[1], "dep": k[2], "value": v}
                               for k, v in sorted(self.change_percent.items())],
            "n_used": [{"family": k[0], "dep_hi": k[1], "dep_lo": k[2], "value": v}
                       for k, v in sorted(self.n_used.items())],
            "config": self.config,
        }


def _changed(a, b):
    return (abs(a.params.alpha - b.params.alpha) > CHANGE_TOL
            or abs(a.params.beta - b.params.beta) > CHANGE_TOL)


def _replicate(pair, cfg, u, rep):
    """Fit HT, AD and SO models to one simulated pair of samples."""
    ss = np.random.SeedSequence([cfg.seed, cfg.pairs.index(pair), rep])
    s_hi, s_lo = ss.spawn(2)
    d_hi = simulate_exact(ExactModelSpec(pair.family, pair.dep_hi, u, cfg.n_per_sample), s_hi)
    d_lo = simulate_exact(ExactModelSpec(pair.family, pair.dep_lo, u, cfg.n_per_sample), s_lo)
    ht = {"hi": fit_unconstrained(d_hi), "lo": fit_unconstrained(d_lo)}
    ad = {k: fit_keef(d, ConstraintLevel.default(d.y_cond.max(), cfg.v_floor),
                      unconstrained=ht[k])
          for k, d in (("hi", d_hi), ("lo", d_lo))}
    top = max(d_hi.y_cond.max(), d_lo.y_cond.max())
    spec = OrderingSpec(("lo", "hi"), ConstraintLevel.default(top, cfg.v_floor))
    so = fit_constrained({"hi": d_hi, "lo": d_lo}, spec, unconstrained=ht)
    return {"HT": ht, "AD": ad, "SO": so}


def run_rmse_study(cfg, progress=None):
    """Monte Carlo RMSE comparison of the unconstrained and two constrained fits.

    For each pair and replicate both samples are drawn, the three models are
    fitted, and conditional quantile estimates at every ``(q, x_p)`` are
    compared with the truth. Replicates whose fits fail are dropped; more
    than ``cfg.max_failure_rate`` of them raises :class:`StudyUnstable`.
    """
    u = float(laplace_quantile(cfg.threshold_quantile))
    table = RmseTable(config=cfg.to_dict())
    xs = [float(laplace_quantile(p)) for p in cfg.levels]
    for pair in cfg.pairs:
        sq_err = {}
        changes = {(a, b, side): 0 for a, b in RATIOS for side in ("hi", "lo")}
        used = 0
        failures = 0
        for rep in range(cfg.n_replicates):
            try:
                fits = _replicate(pair, cfg, u, rep)
            except HTOrderError:
                failures += 1
                continue
            used += 1
            for side, dep in (("hi", pair.dep_hi), ("lo", pair.dep_lo)):
                for a, b in RATIOS:
                    changes[(a, b, side)] += _changed(fits[a][side], fits[b][side])
                for q in cfg.quantiles:
                    for p, x in zip(cfg.levels, xs):
                        truth = study_quantile(pair.family, dep, x, q)
                        for model in MODELS:
                            est = fits[model][side].conditional_quantile(x, q)
                            key = (model, pair.family, float(dep), q, p)
                            sq_err[key] = sq_err.get(key, 0.0) + (est - truth) ** 2
            if progress is not None:
                progress(pair, rep)
        if failures > cfg.max_failure_rate * cfg.n_replicates:
            raise StudyUnstable(f"{failures} of {cfg.n_replicates} replicates failed "
                                f"for {pair.label}")
        for key, total in sq_err.items():
            table.rmse[key] = math.sqrt(total / used)
        for (a, b, side), count in changes.items():
            dep = pair.dep_hi if side == "hi" else pair.dep_lo
            table.change_percent[(f"{a}-{b}", pair.family, float(dep))] = 100.0 * count / used
        table.n_used[(pair.family, float(pair.dep_hi), float(pair.dep_lo))] = used
    return table
