"""Chain diagnostics and the summaries used in the subsampling experiment.

IACT uses Geyer's initial monotone sequence estimator; densities use a
Gaussian kernel with Silverman's bandwidth.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass, field

import numpy as np


def _autocovariance(x):
    n = x.size
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n]
    return acov / n


def iact(series, return_flag=False):
    """Integrated autocorrelation time, ``1 + 2 * sum of autocorrelations``.

    The sum is truncated by Geyer's initial monotone sequence: pairs
    ``gamma(2m) + gamma(2m + 1)`` are summed while positive and forced to be
    nonincreasing. Results are floored at 1. A constant series has no
    information at all; it gets the series length and ``flag=True``.

    Parameters
    ----------
    series : array, shape (m,)
    return_flag : bool
        Also return whether the value was flagged as maximal.
    """
    x = np.asarray(series, dtype=float).ravel()
    if x.size < 2:
        raise ValueError("need at least two samples")
    if not np.all(np.isfinite(x)):
        raise ValueError("series has non-finite entries")
    x = x - x.mean()
    if np.all(x == 0) or np.max(np.abs(x)) < 1e-300:
        return (float(x.size), True) if return_flag else float(x.size)
    acov = _autocovariance(x)
    pairs = acov[: 2 * (acov.size // 2)].reshape(-1, 2).sum(axis=1)
    positive = pairs > 0
    stop = pairs.size if positive.all() else int(np.argmin(positive))
    pairs = np.minimum.accumulate(pairs[:stop])
    tau = (-acov[0] + 2 * pairs.sum()) / acov[0]
    tau = float(min(max(tau, 1.0), x.size))
    return (tau, False) if return_flag else tau


def ess(series) -> float:
    x = np.asarray(series).ravel()
    return x.size / iact(x)


def silverman_bandwidth(samples) -> float:
    x = np.asarray(samples, dtype=float).ravel()
    sd = x.std(ddof=1)
    if not sd > 0:
        raise ValueError("bandwidth undefined for a constant sample")
    return 1.06 * sd * x.size ** (-0.2)


def kde(samples, grid, bandwidth=None):
    """Gaussian kernel density estimate of ``samples`` evaluated at ``grid``."""
    x = np.asarray(samples, dtype=float).ravel()
    grid = np.asarray(grid, dtype=float)
    h = silverman_bandwidth(x) if bandwidth is None else float(bandwidth)
    out = np.empty(grid.size)
    flat = grid.ravel()
    step = max(1, 2_000_000 // max(x.size, 1))
    for s in range(0, flat.size, step):
        g = flat[s:s + step, None]
        out[s:s + step] = np.exp(-0.5 * ((g - x) / h) ** 2).sum(axis=1)
    return (out / (x.size * h * math.sqrt(2 * math.pi))).reshape(grid.shape)


def kde_l1(a, b, grid_points=512) -> float:
    """L1 distance between the two samples' KDEs on a shared grid."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    ha, hb = silverman_bandwidth(a), silverman_bandwidth(b)
    pad = 4 * max(ha, hb)
    grid = np.linspace(min(a.min(), b.min()) - pad, max(a.max(), b.max()) + pad, grid_points)
    return float(np.trapezoid(np.abs(kde(a, grid, ha) - kde(b, grid, hb)), grid))


def discard_burn_in(values, burn_in):
    """Drop the initial state and the first ``burn_in`` iterations of a trace array."""
    return np.asarray(values)[1 + burn_in:]


# --------------------------------------------------------------------------
# experiment summaries


def select_hpd_thetas(states, log_post, theta_star, levels=(0.25, 0.5, 1.0)):
    """Most extreme sample inside each highest-posterior-density set.

    Samples are ranked by their log posterior. For each level the top
    fraction of samples forms the set, and the member farthest from
    ``theta_star`` after per-component standardization is returned.
    """
    states = np.asarray(states, dtype=float)
    log_post = np.asarray(log_post, dtype=float)
    if states.shape[0] < 1000:
        raise ValueError("need at least 1000 post burn-in samples")
    order = np.argsort(-log_post, kind="stable")
    scale = states.std(axis=0, ddof=1)
    scale[scale == 0] = 1.0
    dist = np.linalg.norm((states - np.asarray(theta_star)) / scale, axis=1)
    picks = []
    for level in levels:
        if not 0 < level <= 1:
            raise ValueError(f"HPD level must lie in (0, 1], got {level}")
        top = order[: max(1, int(math.ceil(level * states.shape[0])))]
        picks.append(states[top[np.argmax(dist[top])]])
    return picks


PERCENT_ERROR_FORMULA = "100 * (q_i(theta) - l_i(theta)) / |l_i(theta)|"


def cv_percent_error(model, data, theta_star, theta, order):
    """Signed percentage error of the Taylor proxy for every datum.

    Data with ``l_i(theta) == 0`` have no relative error; they come back as
    NaN so that ``np.nan*`` summaries skip them.
    """
    from .subsample import q_datum

    ll = model.loglik(theta, data)
    q = q_datum(model, data, theta_star, theta, order)
    out = np.full(ll.shape, np.nan)
    ok = ll != 0
    out[ok] = 100.0 * (q[ok] - ll[ok]) / np.abs(ll[ok])
    return out


@dataclass
class EfficiencyReport:
    iact_full: list
    iact_sub: list
    cost_full: float
    cost_sub: float
    efficiency: list
    sticky: list = field(default_factory=list)
    cost_model: str = "full: n term evaluations; subsampled: 3k + d^2"

    def to_dict(self):
        return asdict(self)


def relative_efficiency(states_full, states_sub, n, k, d) -> EfficiencyReport:
    """Per-parameter ``(IACT_full * n) / (IACT_sub * (3k + d^2))``.

    Parameters
    ----------
    states_full, states_sub : arrays, shape (m, d)
        Post burn-in draws of the full-data and subsampled chains.
    """
    full = np.atleast_2d(np.asarray(states_full, dtype=float).T).T
    sub = np.atleast_2d(np.asarray(states_sub, dtype=float).T).T
    cost_full = float(n)
    cost_sub = float(3 * k + d ** 2)
    iact_full, iact_sub, eff, sticky = [], [], [], []
    for j in range(full.shape[1]):
        tf, _ = iact(full[:, j], return_flag=True)
        ts, flag = iact(sub[:, j], return_flag=True)
        iact_full.append(tf)
        iact_sub.append(ts)
        sticky.append(flag)
        eff.append(0.0 if flag else (tf * cost_full) / (ts * cost_sub))
    return EfficiencyReport(iact_full, iact_sub, cost_full, cost_sub, eff, sticky)


@dataclass
class StickinessReport:
    max_run: int
    acceptance_rate: float
    streak_histogram: dict
    flagged: bool

    def to_dict(self):
        return asdict(self)


def stickiness_report(accepted) -> StickinessReport:
    """Longest stretch over which the chain sat on one state.

    ``accepted`` is the per-row accept flag of a trace, whose first entry
    (the initial state) counts as accepted. A run is an accepted row plus
    the rejections that follow it; the rejection-streak histogram maps
    streak length to count.
    """
    acc = np.asarray(accepted, dtype=bool).ravel()
    if acc.size == 0:
        raise ValueError("empty trace")
    starts = np.flatnonzero(acc)
    if starts.size == 0 or starts[0] != 0:
        starts = np.concatenate(([0], starts))
    runs = np.diff(np.concatenate((starts, [acc.size])))
    hist = Counter(int(r - 1) for r in runs)
    rate = float(acc[1:].mean()) if acc.size > 1 else 1.0
    max_run = int(runs.max())
    return StickinessReport(max_run, rate, dict(sorted(hist.items())), max_run == acc.size)
