"""Blocked jackknife and truncated-exponential helpers."""
from __future__ import annotations

import numpy as np
from scipy.optimize import brentq


def n_blocks_for(n: int, block_size: int, min_blocks: int = 10) -> int:
    """Number of jackknife blocks: ``n // block_size``, raised to ``min_blocks`` for short series."""
    if n < 2:
        raise ValueError("need at least two samples for a jackknife")
    nb = n // max(1, block_size)
    if nb < min_blocks:
        nb = min(min_blocks, n)
    return max(2, nb)


def block_split(n: int, n_blocks: int) -> list[slice]:
    edges = np.linspace(0, n, n_blocks + 1).astype(int)
    return [slice(edges[b], edges[b + 1]) for b in range(n_blocks)]


def jackknife(data, estimator=None, n_blocks: int = 10):
    """Leave-one-block-out jackknife.

    ``data`` has samples along axis 0.  ``estimator`` maps a sub-array to a
    float or array; the default is the sample mean.  Returns (estimate, stderr)
    where the estimate is ``estimator(data)`` on the full set.
    """
    data = np.asarray(data)
    n = data.shape[0]
    if estimator is None:
        estimator = lambda x: np.mean(x, axis=0)
    blocks = block_split(n, n_blocks)
    full = np.asarray(estimator(data), dtype=float)
    keep = np.ones(n, dtype=bool)
    loo = []
    for sl in blocks:
        keep[:] = True
        keep[sl] = False
        loo.append(np.asarray(estimator(data[keep]), dtype=float))
    loo = np.array(loo)
    nb = len(blocks)
    var = (nb - 1) / nb * np.sum((loo - loo.mean(axis=0)) ** 2, axis=0)
    return full, np.sqrt(var)


def truncexp_mean(beta, cap):
    """Mean of the density proportional to exp(-beta * x) on [0, cap]."""
    x = beta * cap
    if abs(x) < 1e-4:
        return cap * (0.5 - x / 12.0 + x ** 3 / 720.0)
    if x > 700.0:
        return 1.0 / beta
    if x < -700.0:
        return cap + 1.0 / beta
    return 1.0 / beta - cap / np.expm1(x)


def solve_beta_from_mean(mean, cap):
    """Invert truncexp_mean; the mean is strictly decreasing in beta."""
    if not 0.0 < mean < cap:
        raise ValueError(f"mean {mean} outside the open interval (0, {cap})")
    f = lambda b: truncexp_mean(b, cap) - mean
    if f(0.0) == 0.0:
        return 0.0
    scale = 1.0 / cap
    if f(0.0) > 0:
        lo, hi = 0.0, scale
        while f(hi) > 0:
            lo, hi = hi, hi * 10.0
            if hi > 1e300:
                raise ValueError("could not bracket beta")
    else:
        lo, hi = -scale, 0.0
        while f(lo) < 0:
            hi, lo = lo, lo * 10.0
            if lo < -1e300:
                raise ValueError("could not bracket beta")
    return brentq(f, lo, hi, xtol=1e-14 * max(1.0, abs(hi)), rtol=1e-13, maxiter=500)


def sample_truncexp(beta, cap, size, rng):
    """Inverse-CDF draws from the truncated exponential on [0, cap]."""
    u = rng.random(size)
    x = beta * cap
    if abs(x) < 1e-12:
        return u * cap
    # F^-1(u) = -log(1 - u (1 - e^{-x})) / beta
    return -np.log1p(-u * -np.expm1(-x)) / beta


def fit_binned_truncexp(counts, width):
    """Maximum-likelihood beta for equal-width bin counts of a truncated exponential.

    The score equation for grouped data reads
    mean bin start + mean(beta, width) = mean(beta, n_bins * width).
    """
    counts = np.asarray(counts, dtype=float)
    nb = counts.size
    total = counts.sum()
    occupied = np.count_nonzero(counts)
    if total <= 0 or occupied < 2:
        raise ValueError("histogram mass in fewer than two bins")
    upper = nb * width
    abar = float(np.sum(counts * np.arange(nb) * width) / total)
    g = lambda b: truncexp_mean(b, upper) - truncexp_mean(b, width) - abar
    scale = 1.0 / upper
    lo, hi = -scale, scale
    while g(hi) > 0:
        hi *= 10.0
        if hi > 1e300:
            raise ValueError("could not bracket beta")
    while g(lo) < 0:
        lo *= 10.0
        if lo < -1e300:
            raise ValueError("could not bracket beta")
    return brentq(g, lo, hi, xtol=1e-14 * max(1.0, abs(hi)), rtol=1e-13, maxiter=500)
