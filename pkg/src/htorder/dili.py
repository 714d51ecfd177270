"""Liver-safety application: per-dose ALT/TBL modelling and joint survival.

Each lab variable is log transformed, and the post-treatment value is
adjusted for its baseline by median regression. The residuals of the two
variables go to the Laplace scale, where conditional extremes models are
fitted per dose, with or without stochastic ordering across doses. Joint
survival probabilities of post-treatment values come from simulation, with
percentile intervals from replaying the whole pipeline on resampled
patients.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.stats import norm, rankdata, spearmanr
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .constraints import DEFAULT_QS, ConstraintLevel
from .exceptions import (
    BootstrapUnstable,
    DomainError,
    HTOrderError,
    InsufficientData,
    SchemaError,
    TooFewTailPoints,
    UnfittedDose,
)
from .htcore import ExceedanceData, HTFit, fit_unconstrained, sample_conditional
from .inference import OrderingSpec, fit_constrained, lrt_ordering
from .margins import MarginalModel, fit_marginal, from_laplace, laplace_quantile, to_laplace

logger = logging.getLogger(__name__)

COLUMNS = ("dose", "ALT.B", "ALT.M", "TBL.B", "TBL.M")
ULN_ALT = 36.0
ULN_TBL = 21.0
#: Hy's Law cell: ALT above three and TBL above two upper limits of normal.
HYS_LAW = (3.0 * ULN_ALT, 2.0 * ULN_TBL)
#: ``name -> (conditioning column, dependent column)`` with columns (ALT, TBL).
DIRECTIONS = {"TBL|ALT": (0, 1), "ALT|TBL": (1, 0)}
MODELS = ("SO", "HT")
_P_CLIP = 1e-15


@dataclass(frozen=True)
class TrialRecord:
    dose: str
    alt_baseline: float
    alt_post: float
    tbl_baseline: float
    tbl_post: float

    def __post_init__(self):
        for name in ("alt_baseline", "alt_post", "tbl_baseline", "tbl_post"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise DomainError(f"{name} must be positive, got {value}")


class TrialData:
    """Column store of trial records.

    Parameters
    ----------
    dose : array of str
    alt_baseline, alt_post, tbl_baseline, tbl_post : array of float
        Positive lab values on the original scale.
    """

    _FIELDS = ("alt_baseline", "alt_post", "tbl_baseline", "tbl_post")

    def __init__(self, dose, alt_baseline, alt_post, tbl_baseline, tbl_post):
        self.dose = np.asarray(dose, dtype=str)
        n = self.dose.size
        for name, col in zip(COLUMNS[1:], (alt_baseline, alt_post, tbl_baseline, tbl_post)):
            arr = np.asarray(col, dtype=float)
            if arr.shape != (n,):
                raise SchemaError(f"column {name} has the wrong length", column=name)
            if not np.all(np.isfinite(arr) & (arr > 0)):
                raise SchemaError(f"column {name} must hold positive numbers", column=name)
        self.alt_baseline = np.asarray(alt_baseline, dtype=float)
        self.alt_post = np.asarray(alt_post, dtype=float)
        self.tbl_baseline = np.asarray(tbl_baseline, dtype=float)
        self.tbl_post = np.asarray(tbl_post, dtype=float)

    def __len__(self):
        return self.dose.size

    @property
    def doses(self):
        return tuple(sorted(set(self.dose.tolist())))

    @classmethod
    def from_records(cls, records):
        records = list(records)
        return cls([r.dose for r in records],
                   *[[getattr(r, f) for r in records] for f in cls._FIELDS])

    def records(self):
        return [TrialRecord(str(d), *map(float, vals))
                for d, *vals in zip(self.dose, *(getattr(self, f) for f in self._FIELDS))]

    def subset(self, idx):
        return TrialData(self.dose[idx], *(getattr(self, f)[idx] for f in self._FIELDS))

    def for_dose(self, dose):
        return self.subset(np.flatnonzero(self.dose == dose))

    def resample(self, rng):
        """Resample patients with replacement within each dose."""
        parts = [rng.choice(np.flatnonzero(self.dose == d), size=np.count_nonzero(self.dose == d))
                 for d in self.doses]
        return self.subset(np.concatenate(parts))

    def to_dict(self):
        out = {"dose": self.dose.tolist()}
        out.update({f: getattr(self, f).tolist() for f in self._FIELDS})
        return out

    @classmethod
    def from_dict(cls, d):
        return cls(d["dose"], *(d[f] for f in cls._FIELDS))


def read_trial_csv(path):
    """Read a CSV with header ``dose,ALT.B,ALT.M,TBL.B,TBL.M`` (extra columns ignored)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip().strip('"') for h in (reader.fieldnames or [])]
        for col in COLUMNS:
            if col not in header:
                raise SchemaError(f"missing column {col!r}", column=col)
        reader.fieldnames = header
        rows = list(reader)
    if not rows:
        raise InsufficientData("the input table has no rows")
    cols = {c: [] for c in COLUMNS}
    for i, row in enumerate(rows, start=2):
        cols["dose"].append(str(row["dose"]).strip())
        for c in COLUMNS[1:]:
            try:
                cols[c].append(float(row[c]))
            except (TypeError, ValueError):
                raise SchemaError(f"line {i}: column {c!r} is not a number", column=c) from None
    return TrialData(*(cols[c] for c in COLUMNS))


def write_trial_csv(data, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(COLUMNS)
        for r in data.records():
            w.writerow([r.dose, repr(r.alt_baseline), repr(r.alt_post),
                        repr(r.tbl_baseline), repr(r.tbl_post)])


@dataclass(frozen=True)
class BaselineAdjustment:
    gamma: float
    delta: float
    residuals: np.ndarray

    def to_dict(self):
        return {"gamma": self.gamma, "delta": self.delta}


def check_loss(gamma, delta, w_post, w_base):
    """Sum of absolute deviations ``sum |w_post - gamma - delta * w_base|``."""
    return float(np.abs(w_post - gamma - delta * w_base).sum())


def _vertex_walk(x, y, i, j, max_iter=500):
    # an L1 line fit is optimal at a line through two data points; move to the
    # best line sharing one point with the current one until none improves
    def lines_through(k):
        dx = x - x[k]
        ok = np.abs(dx) > 1e-12 * max(1.0, abs(x[k]))
        slope = (y[ok] - y[k]) / dx[ok]
        icpt = y[k] - slope * x[k]
        loss = np.abs(y[None, :] - icpt[:, None] - slope[:, None] * x[None, :]).sum(axis=1)
        idx = np.flatnonzero(ok)
        b = int(np.argmin(loss))
        return float(loss[b]), int(idx[b])

    best = check_loss(*_line(x, y, i, j), y, x)
    for _ in range(max_iter):
        li, ki = lines_through(i)
        lj, kj = lines_through(j)
        if min(li, lj) >= best - 1e-12 * max(1.0, best):
            break
        if li <= lj:
            j, best = ki, li
        else:
            i, best = kj, lj
    return _line(x, y, i, j)


def _line(x, y, i, j):
    delta = (y[j] - y[i]) / (x[j] - x[i])
    return y[i] - delta * x[i], delta


def median_regression(w_post, w_base):
    """Least-absolute-deviation fit of ``w_post`` on ``w_base``.

    A simplex search on the absolute loss is followed by an exact polish over
    lines through pairs of observations, then the intercept is moved to the
    median residual, which keeps the loss at its minimum.
    """
    y = np.asarray(w_post, dtype=float).ravel()
    x = np.asarray(w_base, dtype=float).ravel()
    if x.shape != y.shape:
        raise DomainError("w_post and w_base must have equal lengths")
    if x.size < 10:
        raise InsufficientData("median regression needs at least 10 pairs")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise DomainError("inputs must be finite")
    if np.ptp(x) == 0:
        raise DomainError("baseline values are all equal")
    slope0 = np.polyfit(x, y, 1)[0]
    start = np.array([np.median(y - slope0 * x), slope0])
    res = minimize(lambda t: check_loss(t[0], t[1], y, x), start, method="Nelder-Mead",
                   options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 4000})
    gamma, delta = res.x
    r = np.abs(y - gamma - delta * x)
    order = np.argsort(r)
    i = int(order[0])
    j = next(int(k) for k in order[1:] if abs(x[k] - x[i]) > 1e-12 * max(1.0, abs(x[i])))
    gamma, delta = _vertex_walk(x, y, i, j)
    if check_loss(res.x[0], res.x[1], y, x) < check_loss(gamma, delta, y, x):
        gamma, delta = res.x
    gamma += float(np.median(y - gamma - delta * x))
    return BaselineAdjustment(float(gamma), float(delta), y - gamma - delta * x)


def _pseudo_uniform(a):
    return rankdata(a) / (len(a) + 1.0)


def _paired(x, y, n_min):
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise DomainError("x and y must have equal lengths")
    if x.size < n_min:
        raise InsufficientData(f"need at least {n_min} pairs, got {x.size}")
    return x, y


def conditional_spearman(x, y, level):
    """Spearman correlation over the joint upper tail ``(1 - level, 1]^2`` of the ranks.

    ``level = 1`` uses every pair.
    """
    if not 0.0 < level <= 1.0:
        raise DomainError("level must lie in (0, 1]")
    x, y = _paired(x, y, 10)
    u, v = _pseudo_uniform(x), _pseudo_uniform(y)
    keep = (u > 1.0 - level) & (v > 1.0 - level)
    if np.count_nonzero(keep) < 5:
        raise TooFewTailPoints(f"only {np.count_nonzero(keep)} pairs in the tail region")
    return float(spearmanr(x[keep], y[keep])[0])


def chi_measures(x, y, p_levels):
    """Empirical ``chi(p)`` and ``chibar(p)`` at each level in ``p_levels``.

    ``chi(p) = P(V > p | U > p)`` and
    ``chibar(p) = 2 log P(U > p) / log P(U > p, V > p) - 1`` on the rank scale;
    ``chibar`` is ``-1`` when no pair lies in the joint tail.
    """
    x, y = _paired(x, y, 100)
    p_levels = np.atleast_1d(np.asarray(p_levels, dtype=float))
    if np.any(~((p_levels > 0) & (p_levels < 1))):
        raise DomainError("levels must lie in (0, 1)")
    u, v = _pseudo_uniform(x), _pseudo_uniform(y)
    chi, chibar = [], []
    for p in p_levels:
        pu = np.mean(u > p)
        puv = np.mean((u > p) & (v > p))
        chi.append(puv / pu if pu > 0 else np.nan)
        if pu == 0:
            chibar.append(np.nan)
        elif puv == 0:
            chibar.append(-1.0)
        elif puv == 1.0:
            chibar.append(1.0)
        else:
            chibar.append(2.0 * math.log(pu) / math.log(puv) - 1.0)
    return np.array(chi), np.array(chibar)


@dataclass(frozen=True)
class SurvivalEstimate:
    x_cut: float
    y_cut: float
    prob: float
    ci95: tuple | None = None
    dose: str | None = None
    model: str | None = None

    def to_dict(self):
        return {"dose": self.dose, "model": self.model, "x_cut": self.x_cut,
                "y_cut": self.y_cut, "prob": self.prob,
                "ci95": None if self.ci95 is None else list(self.ci95)}


@dataclass
class DoseModel:
    """Everything fitted for one dose below the dependence model."""

    dose: str
    adjustments: tuple
    baseline_margins: tuple
    residual_margins: tuple
    laplace: np.ndarray

    def to_dict(self):
        return {"dose": self.dose,
                "adjustments": [a.to_dict() for a in self.adjustments],
                "baseline_margins": [m.to_dict() for m in self.baseline_margins],
                "residual_margins": [m.to_dict() for m in self.residual_margins],
                "laplace": self.laplace.tolist()}

    @classmethod
    def from_dict(cls, d, data):
        lab = np.asarray(d["laplace"], dtype=float).reshape(-1, 2)
        w = _log_columns(data)
        adj = tuple(BaselineAdjustment(float(a["gamma"]), float(a["delta"]),
                                       w[2 * k + 1] - a["gamma"] - a["delta"] * w[2 * k])
                    for k, a in enumerate(d["adjustments"]))
        return cls(d["dose"], adj,
                   tuple(MarginalModel.from_dict(m) for m in d["baseline_margins"]),
                   tuple(MarginalModel.from_dict(m) for m in d["residual_margins"]), lab)


def _log_columns(data):
    return (np.log(data.alt_baseline), np.log(data.alt_post),
            np.log(data.tbl_baseline), np.log(data.tbl_post))


def fit_dose(data, marg_q):
    """Baseline adjustment, margins and Laplace-scale residuals for one dose."""
    wab, wap, wtb, wtp = _log_columns(data)
    adj = (median_regression(wap, wab), median_regression(wtp, wtb))
    base = (fit_marginal(wab, marg_q), fit_marginal(wtb, marg_q))
    resid = tuple(fit_marginal(a.residuals, marg_q) for a in adj)
    lap = np.column_stack([to_laplace(np.atleast_1d(m.cdf(a.residuals)))
                           for m, a in zip(resid, adj)])
    return DoseModel(str(data.dose[0]), adj, base, resid, lap)


def simulate_post(dm, fit, threshold, direction, n, rng):
    """Simulate ``n`` post-treatment (ALT, TBL) pairs on the original scale.

    Laplace-scale residual pairs come from the conditional model when the
    conditioning residual exceeds ``threshold`` (probability ``exp(-u) / 2``)
    and from the observed pairs below it otherwise. Baselines are drawn
    independently from their fitted margins.
    """
    c, k = DIRECTIONS[direction]
    n_tail = int(rng.binomial(n, 0.5 * math.exp(-threshold)))
    yc, yd = sample_conditional(fit.params.alpha, fit.params.beta, fit.residuals,
                                threshold, n_tail, rng)
    body = dm.laplace[dm.laplace[:, c] <= threshold]
    pick = body[rng.integers(0, body.shape[0], size=n - n_tail)]
    y = np.empty((n, 2))
    y[:n_tail, c], y[:n_tail, k] = yc, yd
    y[n_tail:] = pick
    p = np.clip(from_laplace(y), _P_CLIP, 1.0 - _P_CLIP)
    u_base = np.clip(rng.random((n, 2)), _P_CLIP, 1.0 - _P_CLIP)
    out = []
    for j in range(2):
        x_res = dm.residual_margins[j].ppf(p[:, j])
        w_base = dm.baseline_margins[j].ppf(u_base[:, j])
        a = dm.adjustments[j]
        with np.errstate(over="ignore"):
            out.append(np.exp(a.gamma + a.delta * w_base + x_res))
    return out[0], out[1]


def _survival(alt, tbl, cuts):
    return np.array([np.mean((alt > x) & (tbl > y)) for x, y in cuts])


class DiliPipeline(BaseEstimator):
    """Per-dose ALT/TBL pipeline with stochastically ordered dose effects.

    Parameters
    ----------
    marg_q : float
        Empirical quantile level of the GP thresholds of every margin.
    dep_q : float
        Laplace quantile level of the dependence-model threshold.
    v_level : float or None
        Fixed constraint level. ``None`` uses ``max(v_floor, largest
        conditioning value)`` in each direction.
    v_floor : float
    qs : tuple of float
        Residual quantile levels at which constraints are imposed.
    dose_order : tuple or None
        Doses from the lowest tail to the highest; sorted labels by default.
    direction : str
        Conditioning direction used for survival simulation.
    """

    def __init__(self, marg_q=0.7, dep_q=0.7, v_level=None, v_floor=5.0, qs=DEFAULT_QS,
                 dose_order=None, direction="TBL|ALT"):
        self.marg_q = marg_q
        self.dep_q = dep_q
        self.v_level = v_level
        self.v_floor = v_floor
        self.qs = qs
        self.dose_order = dose_order
        self.direction = direction

    def _validate(self):
        for name in ("marg_q", "dep_q"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise DomainError(f"{name} must lie in (0, 1)")
        if self.direction not in DIRECTIONS:
            raise DomainError(f"direction must be one of {sorted(DIRECTIONS)}")

    def fit(self, X, y=None):
        """Fit every stage on a :class:`TrialData` (or a sequence of records)."""
        self._validate()
        data = X if isinstance(X, TrialData) else TrialData.from_records(X)
        order = tuple(self.dose_order) if self.dose_order is not None else data.doses
        missing = [d for d in order if d not in data.doses]
        if missing:
            raise UnfittedDose(f"no records for doses {missing}")
        self.data_ = data
        self.dose_order_ = order
        self.threshold_ = float(laplace_quantile(self.dep_q))
        self.doses_ = {d: fit_dose(data.for_dose(d), self.marg_q) for d in order}
        self._fit_dependence()
        return self

    def _fit_dependence(self):
        self.exceedances_, self.levels_, self.ht_fits_, self.so_fits_ = {}, {}, {}, {}
        for name, (c, k) in DIRECTIONS.items():
            ex = {d: ExceedanceData.from_pairs(dm.laplace[:, c], dm.laplace[:, k], self.threshold_)
                  for d, dm in self.doses_.items()}
            top = max(float(e.y_cond.max()) for e in ex.values())
            level = (ConstraintLevel.default(top, self.v_floor) if self.v_level is None
                     else ConstraintLevel(float(self.v_level)))
            ht = {d: fit_unconstrained(e) for d, e in ex.items()}
            spec = OrderingSpec(self.dose_order_, level, self.qs)
            self.exceedances_[name] = ex
            self.levels_[name] = level
            self.ht_fits_[name] = ht
            self.so_fits_[name] = fit_constrained(ex, spec, unconstrained=ht)

    def ordering_spec(self, direction):
        check_is_fitted(self, "doses_")
        return OrderingSpec(self.dose_order_, self.levels_[direction], self.qs)

    def fits(self, model, direction=None):
        check_is_fitted(self, "doses_")
        direction = direction or self.direction
        if model not in MODELS:
            raise DomainError(f"model must be one of {MODELS}")
        return (self.so_fits_ if model == "SO" else self.ht_fits_)[direction]

    def test_ordering(self, n_sim=99, seed=0):
        """Ordering test in both conditioning directions."""
        check_is_fitted(self, "doses_")
        return {name: lrt_ordering(self.exceedances_[name], self.ordering_spec(name),
                                   n_sim=n_sim, seed=[seed, i])
                for i, name in enumerate(DIRECTIONS)}

    def diagnostics(self, p_levels=(0.8, 0.9, 0.95), spearman_levels=(1.0, 0.5, 0.2)):
        """Residual dependence summaries and residual-baseline correlations per dose."""
        check_is_fitted(self, "doses_")
        out = {}
        for d, dm in self.doses_.items():
            ra, rt = (a.residuals for a in dm.adjustments)
            sub = self.data_.for_dose(d)
            entry = {"n": int(ra.size),
                     "residual_baseline_spearman": {
                         "ALT": float(spearmanr(ra, np.log(sub.alt_baseline))[0]),
                         "TBL": float(spearmanr(rt, np.log(sub.tbl_baseline))[0])}}
            cs = {}
            for lvl in spearman_levels:
                try:
                    cs[f"{lvl:g}"] = conditional_spearman(ra, rt, lvl)
                except HTOrderError:
                    cs[f"{lvl:g}"] = None
            entry["conditional_spearman"] = cs
            if ra.size >= 100:
                chi, chibar = chi_measures(ra, rt, p_levels)
                entry["chi"] = dict(zip([f"{p:g}" for p in p_levels], chi.tolist()))
                entry["chibar"] = dict(zip([f"{p:g}" for p in p_levels], chibar.tolist()))
            out[d] = entry
        return out

    def _check_doses(self, doses):
        doses = self.dose_order_ if doses is None else tuple(doses)
        bad = [d for d in doses if d not in self.doses_]
        if bad:
            raise UnfittedDose(f"dose(s) {bad} were not fitted")
        return doses

    def _point_survival(self, cuts, doses, models, n_sim, ss):
        children = dict(zip(self.dose_order_, ss.spawn(len(self.dose_order_))))
        out = {}
        for d in doses:
            for m in models:
                # common random numbers across models
                rng = np.random.default_rng(children[d])
                alt, tbl = simulate_post(self.doses_[d], self.fits(m)[d], self.threshold_,
                                         self.direction, n_sim, rng)
                out[d, m] = _survival(alt, tbl, cuts)
        return out

    def survival(self, cuts, doses=None, models=MODELS, n_sim=200000, n_boot=0, seed=0,
                 max_failure_rate=0.10):
        """Joint survival ``P(ALT > x, TBL > y)`` at each ``(x, y)`` in ``cuts``.

        Every cut shares one simulated sample per dose and model, so estimates
        are monotone in both cuts. With ``n_boot > 0`` the pipeline is refitted
        on patients resampled within dose and the equal-tailed 95% percentile
        interval is reported, widened when needed to contain the estimate.

        Returns
        -------
        list of SurvivalEstimate
            Ordered by dose, model, then cut.
        """
        check_is_fitted(self, "doses_")
        doses = self._check_doses(doses)
        models = tuple(models)
        cuts = [(float(x), float(y)) for x, y in cuts]
        if n_sim < 1 or n_boot < 0:
            raise DomainError("n_sim must be positive and n_boot nonnegative")
        streams = np.random.SeedSequence(seed).spawn(n_boot + 1)
        point = self._point_survival(cuts, doses, models, n_sim, streams[0])
        boots = {key: [] for key in point}
        failures = 0
        for ss in streams[1:]:
            resample_ss, sim_ss = ss.spawn(2)
            try:
                rep = DiliPipeline(**self.get_params())
                rep.dose_order = self.dose_order_
                rep.fit(self.data_.resample(np.random.default_rng(resample_ss)))
                vals = rep._point_survival(cuts, doses, models, n_sim, sim_ss)
            except HTOrderError as exc:
                logger.debug("bootstrap replay failed: %s", exc)
                failures += 1
                continue
            for key, v in vals.items():
                boots[key].append(v)
        if n_boot and failures > max_failure_rate * n_boot:
            raise BootstrapUnstable(f"{failures} of {n_boot} pipeline replays failed")
        out = []
        for (d, m), est in point.items():
            if n_boot:
                lo, hi = np.quantile(np.array(boots[d, m]), [0.025, 0.975], axis=0)
            for i, (x, y) in enumerate(cuts):
                ci = None
                if n_boot:
                    ci = (float(min(lo[i], est[i])), float(max(hi[i], est[i])))
                out.append(SurvivalEstimate(x, y, float(est[i]), ci, d, m))
        return out

    def predict_survival(self, dose, x_cut, y_cut, model="SO", n_sim=200000, n_boot=0,
                         seed=0):
        return self.survival([(x_cut, y_cut)], doses=[dose], models=[model], n_sim=n_sim,
                             n_boot=n_boot, seed=seed)[0]

    def conditional_quantiles(self, x, q, model="SO", direction=None):
        """Laplace-scale conditional quantiles per dose at conditioning values ``x``."""
        fits = self.fits(model, direction)
        return {d: np.atleast_1d(f.conditional_quantile(np.asarray(x, dtype=float), q))
                for d, f in fits.items()}

    def to_dict(self):
        check_is_fitted(self, "doses_")
        params = self.get_params()
        params["qs"] = list(params["qs"])
        params["dose_order"] = list(self.dose_order_)
        return {
            "params": params,
            "threshold": self.threshold_,
            "data": self.data_.to_dict(),
            "doses": {d: dm.to_dict() for d, dm in self.doses_.items()},
            "directions": {
                name: {"v": self.levels_[name].v, "v_rule": self.levels_[name].rule,
                       "v_floor": self.levels_[name].floor,
                       "HT": {d: f.to_dict() for d, f in self.ht_fits_[name].items()},
                       "SO": {d: f.to_dict() for d, f in self.so_fits_[name].items()}}
                for name in DIRECTIONS},
        }

    @classmethod
    def from_dict(cls, state):
        params = dict(state["params"])
        params["qs"] = tuple(params["qs"])
        params["dose_order"] = tuple(params["dose_order"])
        self = cls(**params)
        self.data_ = TrialData.from_dict(state["data"])
        self.dose_order_ = params["dose_order"]
        self.threshold_ = float(state["threshold"])
        self.doses_ = {d: DoseModel.from_dict(v, self.data_.for_dose(d))
                       for d, v in state["doses"].items()}
        self.exceedances_, self.levels_, self.ht_fits_, self.so_fits_ = {}, {}, {}, {}
        for name, (c, k) in DIRECTIONS.items():
            entry = state["directions"][name]
            self.exceedances_[name] = {
                d: ExceedanceData.from_pairs(dm.laplace[:, c], dm.laplace[:, k], self.threshold_)
                for d, dm in self.doses_.items()}
            self.levels_[name] = ConstraintLevel(float(entry["v"]), entry["v_rule"],
                                                 entry.get("v_floor"))
            self.ht_fits_[name] = {d: HTFit.from_dict(f) for d, f in entry["HT"].items()}
            self.so_fits_[name] = {d: HTFit.from_dict(f) for d, f in entry["SO"].items()}
        return self


def predict_survival(pipeline, dose, x_cut, y_cut, model="SO", n_sim=200000, n_boot=0,
                     seed=0):
    """Functional form of :meth:`DiliPipeline.predict_survival`."""
    return pipeline.predict_survival(dose, x_cut, y_cut, model=model, n_sim=n_sim,
                                     n_boot=n_boot, seed=seed)


def simulate_trial(n_per_dose=150, doses=("A", "B", "C", "D"), rho=(0.1, 0.2, 0.3, 0.4),
                   seed=0):
    """Synthetic trial with dose-increasing residual dependence.

    Log baselines are independent normals; log post values follow a linear
    baseline adjustment plus Laplace residuals coupled by a Gaussian copula
    with correlation ``rho[j]`` at dose ``j``.
    """
    if len(rho) != len(doses):
        raise DomainError("one correlation per dose is required")
    rng = np.random.default_rng(seed)
    cols = {c: [] for c in COLUMNS}
    for d, r in zip(doses, rho):
        n = n_per_dose
        wab = rng.normal(math.log(20.0), 0.35, n)
        wtb = rng.normal(math.log(8.0), 0.35, n)
        g = rng.multivariate_normal([0.0, 0.0], [[1.0, r], [r, 1.0]], size=n)
        lap = to_laplace(np.clip(norm.cdf(g), _P_CLIP, 1.0 - _P_CLIP))
        cols["dose"] += [d] * n
        cols["ALT.B"] += np.exp(wab).tolist()
        cols["ALT.M"] += np.exp(0.5 + 0.85 * wab + 0.25 * lap[:, 0]).tolist()
        cols["TBL.B"] += np.exp(wtb).tolist()
        cols["TBL.M"] += np.exp(0.5 + 0.8 * wtb + 0.25 * lap[:, 1]).tolist()
    return TrialData(*(cols[c] for c in COLUMNS))
