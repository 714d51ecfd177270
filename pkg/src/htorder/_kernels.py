"""Compiled objective for the constrained joint fit.

These kernels mirror :mod:`htorder.constraints` and the profile likelihood in
:mod:`htorder.htcore` for the inner loop of the constrained optimiser. The
pure Python versions remain the reference; the test suite checks that both
agree.
"""
import math

import numpy as np
from numba import njit

_LOG_2PI = math.log(2.0 * math.pi)
_LOG_FAR = 700.0
_EQUAL_BETA = 1e-9
#: Same value as ``constraints.FEASIBILITY_TOL``.
_GAP_TOL = 1e-8


@njit(cache=True)
def _type7(sorted_values, q):
    n = sorted_values.shape[0]
    if q <= 0.0:
        return sorted_values[0]
    if q >= 1.0:
        return sorted_values[n - 1]
    h = (n - 1) * q
    lo = int(math.floor(h))
    if lo + 1 >= n:
        return sorted_values[n - 1]
    return sorted_values[lo] + (h - lo) * (sorted_values[lo + 1] - sorted_values[lo])


@njit(cache=True)
def group_terms(yc, yd, logc, sum_log, alpha, beta, qs, min_sd, zq_out):
    """Profile log-likelihood; residual quantiles at ``qs`` are written to ``zq_out``."""
    n = yc.shape[0]
    z = np.empty(n)
    mean = 0.0
    for i in range(n):
        z[i] = (yd[i] - alpha * yc[i]) * math.exp(-beta * logc[i])
        mean += z[i]
    mean /= n
    ss = 0.0
    for i in range(n):
        ss += (z[i] - mean) ** 2
    sd = math.sqrt(ss / n)
    if sd < min_sd:
        sd = min_sd
    ll = -n * math.log(sd) - beta * sum_log - 0.5 * n * (1.0 + _LOG_2PI)
    minmax = qs.shape[0] == 2 and qs[0] == 0.0 and qs[1] == 1.0
    if minmax:
        zq_out[0] = z.min()
        zq_out[1] = z.max()
    else:
        zs = np.sort(z)
        for k in range(qs.shape[0]):
            zq_out[k] = _type7(zs, qs[k])
    return ll


@njit(cache=True)
def _scaled_power(beta, bz, gap):
    log_mag = (math.log(bz) - beta * math.log(gap)) / (1.0 - beta)
    sign = 1.0 - 1.0 / beta
    if log_mag > 700.0:
        return math.inf if sign > 0 else -math.inf
    return sign * math.exp(log_mag)


@njit(cache=True)
def _case1(alpha, beta, z, zp, v):
    vb = v ** (beta - 1.0)
    if alpha <= min(1.0, 1.0 - beta * z * vb, 1.0 - vb * z + zp / v) + _GAP_TOL / v:
        return True
    if 1.0 - beta * z * vb < alpha <= 1.0 and beta != 0.0:
        bz = beta * z
        if bz <= 0.0:
            return False
        if alpha == 1.0:
            return beta < 0.0 and zp > 0.0
        return _scaled_power(beta, bz, 1.0 - alpha) + zp > 0.0
    return False


@njit(cache=True)
def _case2(alpha, beta, z, zm, v):
    vb = v ** (beta - 1.0)
    if -alpha <= min(1.0, 1.0 + beta * vb * z, 1.0 + vb * z - zm / v) + _GAP_TOL / v:
        return True
    if 1.0 + beta * vb * z < -alpha <= 1.0 and beta != 0.0:
        mbz = -beta * z
        if mbz <= 0.0:
            return False
        if alpha == -1.0:
            return beta < 0.0 and -zm > 0.0
        return _scaled_power(beta, mbz, 1.0 + alpha) - zm > 0.0
    return False


@njit(cache=True)
def keef_ok(alpha, beta, z, zp, zm, v):
    return _case1(alpha, beta, z, zp, v) and _case2(alpha, beta, z, zm, v)


@njit(cache=True)
def _d_value(ah, al, bh, bl, zh, zl, x):
    return (ah - al) * x + x**bh * zh - x**bl * zl


@njit(cache=True)
def _d_prime_log(ah, al, bh, bl, zh, zl, t):
    x = math.exp(t)
    return ah - al + bh * zh * x ** (bh - 1.0) - bl * zl * x ** (bl - 1.0)


@njit(cache=True)
def _root_log(ah, al, bh, bl, zh, zl, ta, tb):
    fa = _d_prime_log(ah, al, bh, bl, zh, zl, ta)
    for _ in range(200):
        tm = 0.5 * (ta + tb)
        fm = _d_prime_log(ah, al, bh, bl, zh, zl, tm)
        if (fm > 0) == (fa > 0) and fm != 0.0:
            ta, fa = tm, fm
        else:
            tb = tm
        if tb - ta < 1e-13:
            break
    return 0.5 * (ta + tb)


@njit(cache=True)
def so_margin(ah, al, bh, bl, zh, zl, v):
    """Infimum of the quantile difference over ``[v, infinity)``."""
    if ah < al:
        return -math.inf
    best = _d_value(ah, al, bh, bl, zh, zl, v)
    tv, tfar = math.log(v), _LOG_FAR
    a = bh * (bh - 1.0) * zh
    b = bl * (bl - 1.0) * zl
    edges = np.empty(3)
    edges[0] = tv
    n_edges = 1
    if abs(bh - bl) >= _EQUAL_BETA and a != 0.0 and b != 0.0 and b / a > 0.0:
        ts = math.log(b / a) / (bh - bl)
        if tv < ts < tfar:
            edges[n_edges] = ts
            n_edges += 1
    edges[n_edges] = tfar
    n_edges += 1
    for k in range(n_edges - 1):
        ta, tb = edges[k], edges[k + 1]
        fa = _d_prime_log(ah, al, bh, bl, zh, zl, ta)
        fb = _d_prime_log(ah, al, bh, bl, zh, zl, tb)
        if (fa > 0 and fb < 0) or (fa < 0 and fb > 0):
            t = _root_log(ah, al, bh, bl, zh, zl, ta, tb)
            val = _d_value(ah, al, bh, bl, zh, zl, math.exp(t))
            if val < best:
                best = val
    if ah == al:
        val = _d_value(ah, al, bh, bl, zh, zl, math.exp(tfar))
        if val < best:
            best = val
    return best


@njit(cache=True)
def joint_barrier(theta, yc, yd, logc, offsets, sum_logs, zp, zm, qs, v, ordered,
                  alpha_lo, alpha_hi, beta_lo, beta_hi, min_sd, tol):
    """Negative joint profile log-likelihood, ``inf`` outside the feasible set.

    Group ``g`` occupies ``offsets[g]:offsets[g + 1]`` of the concatenated
    samples; ``zp`` and ``zm`` hold its fixed reference quantiles in row ``g``.
    """
    g_count = sum_logs.shape[0]
    nq = qs.shape[0]
    zq = np.empty((g_count, nq))
    total = 0.0
    for g in range(g_count):
        a, b = theta[2 * g], theta[2 * g + 1]
        if not (alpha_lo <= a <= alpha_hi and beta_lo <= b <= beta_hi):
            return math.inf
        lo, hi = offsets[g], offsets[g + 1]
        total += group_terms(yc[lo:hi], yd[lo:hi], logc[lo:hi], sum_logs[g], a, b, qs,
                             min_sd, zq[g])
        for k in range(nq):
            if not keef_ok(a, b, zq[g, k], zp[g, k], zm[g, k], v):
                return math.inf
    if ordered:
        for g in range(g_count - 1):
            al, bl = theta[2 * g], theta[2 * g + 1]
            ah, bh = theta[2 * g + 2], theta[2 * g + 3]
            if ah < al:
                return math.inf
            for k in range(nq):
                if so_margin(ah, al, bh, bl, zq[g + 1, k], zq[g, k], v) < -tol:
                    return math.inf
    return -total


@njit(cache=True)
def _keef_gap(slope, coef, const, beta, v):
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
        return -math.inf if beta > 0.0 else at_v
    x = math.exp(log_x)
    return min(at_v, slope * x - x**beta * coef + const)


@njit(cache=True)
def joint_loglik(theta, yc, yd, logc, offsets, sum_logs, qs, min_sd):
    g_count = sum_logs.shape[0]
    zq = np.empty((g_count, qs.shape[0]))
    total = 0.0
    for g in range(g_count):
        lo, hi = offsets[g], offsets[g + 1]
        total += group_terms(yc[lo:hi], yd[lo:hi], logc[lo:hi], sum_logs[g], theta[2 * g],
                             theta[2 * g + 1], qs, min_sd, zq[g])
    return total


@njit(cache=True)
def constraint_values(theta, yc, yd, logc, offsets, sum_logs, zp, zm, qs, v, ordered,
                      min_sd, cap):
    """Constraint margins, each nonnegative exactly when its constraint holds.

    Per group and quantile level the distances to the two dependence bounds
    (divided by ``v``); per ordered pair the alpha gap and the infimum of the
    quantile difference. Values are floored at ``-cap``.
    """
    g_count = sum_logs.shape[0]
    nq = qs.shape[0]
    zq = np.empty((g_count, nq))
    n_out = 2 * g_count * nq + (g_count - 1) * (1 + nq) if ordered else 2 * g_count * nq
    out = np.empty(n_out)
    pos = 0
    for g in range(g_count):
        a, b = theta[2 * g], theta[2 * g + 1]
        lo, hi = offsets[g], offsets[g + 1]
        group_terms(yc[lo:hi], yd[lo:hi], logc[lo:hi], sum_logs[g], a, b, qs, min_sd, zq[g])
        for k in range(nq):
            out[pos] = max(_keef_gap(1.0 - a, zq[g, k], zp[g, k], b, v) / v, -cap)
            out[pos + 1] = max(_keef_gap(1.0 + a, -zq[g, k], -zm[g, k], b, v) / v, -cap)
            pos += 2
    if ordered:
        for g in range(g_count - 1):
            al, bl = theta[2 * g], theta[2 * g + 1]
            ah, bh = theta[2 * g + 2], theta[2 * g + 3]
            out[pos] = ah - al
            pos += 1
            for k in range(nq):
                m = so_margin(max(ah, al), al, bh, bl, zq[g + 1, k], zq[g, k], v)
                out[pos] = max(m, -cap)
                pos += 1
    return out
