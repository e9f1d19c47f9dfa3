"""Control-variate subsampling estimator of the log posterior.

For a model with per-datum log-likelihoods ``l_i`` and a Taylor proxy
``q_i`` of ``l_i`` around a reference point ``theta_star``, the estimator is

    log prior + sum_i q_i(theta) + (n / k) * sum_{j in S} (l_j - q_j)(theta)

for a subsample ``S`` of ``k`` indices drawn uniformly with replacement. Its
variance is estimated by ``(n^2 / k) * s^2`` with ``s^2`` the sample variance
(divisor ``k - 1``) of the differences ``d_j = l_j - q_j``.

The full-data sums ``sum_i q_i`` reduce to the cached derivative totals at
``theta_star``, so an estimate costs ``O(k)`` per-datum evaluations.

Indices are zero-based throughout.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .rng import as_generator

_CHUNK = 4096


class DataError(ValueError):
    pass


class LogDensityModel(Protocol):
    """Per-datum likelihood interface consumed by the estimator and samplers."""

    dim: int

    def loglik(self, theta, data, idx=None) -> np.ndarray: ...
    def loglik_grad(self, theta, data, idx=None): ...
    def loglik_grad_hess(self, theta, data, idx=None): ...
    def log_prior(self, theta) -> float: ...
    def grad_prior(self, theta) -> np.ndarray: ...
    def hess_prior(self, theta) -> np.ndarray: ...


@dataclass
class ControlVariateCache:
    """Totals of the per-datum derivatives at ``theta_star``.

    ``order`` is 2 (second-order Taylor proxy), 1 (first-order) or 0 (no
    control variate, ``q == 0``, kept for comparisons).
    """

    theta_star: np.ndarray
    order: int
    n: int
    sum_loglik: float
    sum_grad: np.ndarray | None
    sum_hess: np.ndarray | None
    data_checksum: str | None = None

    def to_json(self) -> str:
        return json.dumps({
            "theta_star": self.theta_star.tolist(),
            "order": self.order,
            "n": self.n,
            "sum_loglik": self.sum_loglik,
            "sum_grad": None if self.sum_grad is None else self.sum_grad.tolist(),
            "sum_hess": None if self.sum_hess is None else self.sum_hess.tolist(),
            "data_checksum": self.data_checksum,
        })

    @classmethod
    def from_json(cls, text, data=None) -> ControlVariateCache:
        raw = json.loads(text)
        cache = cls(
            theta_star=np.asarray(raw["theta_star"], dtype=float),
            order=int(raw["order"]),
            n=int(raw["n"]),
            sum_loglik=float(raw["sum_loglik"]),
            sum_grad=None if raw["sum_grad"] is None else np.asarray(raw["sum_grad"], dtype=float),
            sum_hess=None if raw["sum_hess"] is None else np.asarray(raw["sum_hess"], dtype=float),
            data_checksum=raw.get("data_checksum"),
        )
        if data is not None:
            cache.check_data(data)
        return cache

    def check_data(self, data):
        checksum = data.checksum() if hasattr(data, "checksum") else None
        if len(data) != self.n or (self.data_checksum and checksum != self.data_checksum):
            raise DataError("control-variate cache was built on a different dataset")


def _check_order(order):
    if order not in (0, 1, 2):
        raise ValueError(f"control-variate order must be 0, 1 or 2, got {order}")


def _chunks(n):
    return [np.arange(s, min(s + _CHUNK, n)) for s in range(0, n, _CHUNK)]


def build_cv_cache(model, data, theta_star, order=2) -> ControlVariateCache:
    """One pass over the data accumulating log-likelihood, gradient and Hessian totals.

    Chunk totals are combined with numpy's pairwise summation, so the result
    does not depend on anything but the data and ``theta_star``.
    """
    _check_order(order)
    theta_star = np.array(theta_star, dtype=float)
    n = len(data)
    lls, gs, hs = [], [], []
    for idx in _chunks(n):
        if order == 2:
            ll, g, h = model.loglik_grad_hess(theta_star, data, idx)
        else:
            ll, g = model.loglik_grad(theta_star, data, idx)
            h = None
        bad = ~np.isfinite(ll) | ~np.all(np.isfinite(g), axis=1)
        if h is not None:
            bad |= ~np.all(np.isfinite(h.reshape(h.shape[0], -1)), axis=1)
        if np.any(bad):
            raise DataError(f"non-finite derivatives at datum {int(idx[np.argmax(bad)])}")
        lls.append(ll.sum())
        gs.append(g.sum(axis=0))
        if h is not None:
            hs.append(h.sum(axis=0))
    checksum = data.checksum() if hasattr(data, "checksum") else None
    if order == 0:
        return ControlVariateCache(theta_star, 0, n, 0.0, None, None, checksum)
    return ControlVariateCache(
        theta_star, order, n,
        float(np.sum(lls)),
        np.sum(gs, axis=0),
        np.sum(hs, axis=0) if order == 2 else None,
        checksum,
    )


def q_total(cache: ControlVariateCache, theta) -> float:
    """``sum_i q_i(theta)`` from the cached totals."""
    if cache.order == 0:
        return 0.0
    delta = np.asarray(theta, dtype=float) - cache.theta_star
    out = cache.sum_loglik + float(cache.sum_grad @ delta)
    if cache.order == 2:
        out += 0.5 * float(delta @ cache.sum_hess @ delta)
    return out


def q_datum(model, data, theta_star, theta, order, idx=None) -> np.ndarray:
    """Per-datum Taylor proxy ``q_i(theta)`` around ``theta_star``."""
    _check_order(order)
    theta_star = np.asarray(theta_star, dtype=float)
    delta = np.asarray(theta, dtype=float) - theta_star
    if order == 0:
        m = len(data) if idx is None else np.size(idx)
        return np.zeros(m)
    if order == 1:
        ll, g = model.loglik_grad(theta_star, data, idx)
        return ll + g @ delta
    ll, g, h = model.loglik_grad_hess(theta_star, data, idx)
    return ll + g @ delta + 0.5 * np.einsum("i,mij,j->m", delta, h, delta)


@dataclass(frozen=True)
class LogPostEstimate:
    value: float
    sigma2_hat: float
    k: int


def draw_subsample(rng, n, k) -> np.ndarray:
    """``k`` indices drawn uniformly with replacement from ``0..n-1``."""
    if k < 1 or n < 1:
        raise ValueError("need n >= 1 and k >= 1")
    return as_generator(rng).integers(0, n, size=k)


def differences(model, data, cache, theta, idx=None) -> np.ndarray:
    """``d_i = l_i(theta) - q_i(theta)`` on the given indices."""
    ll = model.loglik(theta, data, idx)
    return ll - q_datum(model, data, cache.theta_star, theta, cache.order, idx)


def estimate_logpost(model, data, cache, theta, subsample) -> LogPostEstimate:
    """Unbiased estimate of the log posterior and its estimated variance.

    Parameters
    ----------
    subsample : int array, shape (k,)
        Indices with ``k >= 2``; duplicates are allowed.
    """
    subsample = np.asarray(subsample)
    k = subsample.size
    if k < 2:
        raise ValueError("need a subsample of at least 2 indices to estimate the variance")
    n = cache.n
    d = differences(model, data, cache, theta, subsample)
    value = model.log_prior(theta) + q_total(cache, theta) + n * float(np.mean(d))
    sigma2 = n ** 2 / k * float(np.var(d, ddof=1))
    return LogPostEstimate(value, sigma2, k)


def bias_corrected_loglik(estimate: LogPostEstimate) -> float:
    """``value - sigma2_hat / 2``: removes the bias picked up by ``exp(estimate)``."""
    return estimate.value - estimate.sigma2_hat / 2


def population_sigma2(model, data, cache, theta, k) -> float:
    """Exact variance ``(n^2 / k) * var(d)`` of the estimator, divisor ``n``."""
    d = np.concatenate([differences(model, data, cache, theta, idx) for idx in _chunks(len(data))])
    n = d.size
    return n ** 2 / k * float(np.var(d))
