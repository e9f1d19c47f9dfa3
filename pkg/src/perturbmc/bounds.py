"""Perturbation bounds for Markov chains and estimators of their inputs.

The closed-form evaluators take certificates (a contraction rate, a one-step
approximation error, a drift condition) and return distance bounds between
the marginal laws of an exact and a perturbed chain. The estimators probe
kernels on user-chosen states; a supremum over an uncountable state space is
only ever checked on that probe grid, and the reports say so.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .rng import RngStream
from .transport import empirical_wasserstein_1d

BETA_GRID = np.geomspace(0.001, 0.999, 64)
PROBE_GRID_NOTE = "suprema evaluated on a finite probe grid only (heuristic certificate)"


class BoundDomainError(ValueError):
    pass


@dataclass(frozen=True)
class ContractionCertificate:
    alpha: float

    def __post_init__(self):
        _check_alpha(self.alpha)


@dataclass(frozen=True)
class ApproximationCertificate:
    epsilon: float
    weighted: bool = False

    def __post_init__(self):
        _check_epsilon(self.epsilon)


@dataclass(frozen=True)
class LyapunovCertificate:
    V: Callable
    beta: float
    L: float

    def __post_init__(self):
        if not 0 < self.beta < 1:
            raise BoundDomainError(f"beta must lie in (0, 1), got {self.beta}")
        if self.L < 0:
            raise BoundDomainError(f"L must be nonnegative, got {self.L}")

    def check_V(self, probes):
        values = np.array([self.V(x) for x in probes], dtype=float)
        if np.any(values < 1):
            raise BoundDomainError("Lyapunov weight V must be at least 1")
        return values


@dataclass
class BoundReport:
    n: int
    marginal_bound: float
    stationary_bound: float
    inputs: dict = field(default_factory=dict)

    def to_json(self, **kwargs) -> str:
        return json.dumps(asdict(self), **kwargs)


def _check_alpha(alpha):
    if not (0 < alpha <= 1) or math.isnan(alpha):
        raise BoundDomainError(f"alpha must lie in (0, 1], got {alpha}")


def _check_epsilon(epsilon):
    if not epsilon >= 0:
        raise BoundDomainError(f"epsilon must be nonnegative, got {epsilon}")


def theorem1_marginal_bound(alpha, epsilon, w0, n) -> float:
    """``(1 - alpha)**n * w0 + epsilon * min(n, 1/alpha)``."""
    _check_alpha(alpha)
    _check_epsilon(epsilon)
    if w0 < 0:
        raise BoundDomainError("initial distance must be nonnegative")
    if n < 0:
        raise BoundDomainError("n must be nonnegative")
    return (1 - alpha) ** n * w0 + epsilon * min(n, 1 / alpha)


def theorem1_stationary_bound(alpha, epsilon) -> float:
    _check_alpha(alpha)
    _check_epsilon(epsilon)
    return epsilon / alpha


def compute_kappa(L, beta, integral_V_p0) -> float:
    """``max(L / beta, integral of V against the perturbed chain's initial law)``."""
    if L < 0 or integral_V_p0 < 0:
        raise BoundDomainError("L and the initial V-moment must be nonnegative")
    if not 0 < beta < 1:
        raise BoundDomainError(f"beta must lie in (0, 1), got {beta}")
    return max(L / beta, integral_V_p0)


def theorem2_marginal_bound(alpha, epsilon_weighted, kappa, w0, n) -> float:
    """``(1 - alpha)**n * w0 + epsilon * kappa / alpha`` with V-weighted epsilon."""
    _check_alpha(alpha)
    _check_epsilon(epsilon_weighted)
    if kappa < 1:
        raise BoundDomainError(f"kappa must be at least 1 since V >= 1, got {kappa}")
    if w0 < 0 or n < 0:
        raise BoundDomainError("w0 and n must be nonnegative")
    return (1 - alpha) ** n * w0 + epsilon_weighted * kappa / alpha


def theorem2_stationary_bound(alpha, epsilon_weighted, beta, L) -> float:
    _check_alpha(alpha)
    _check_epsilon(epsilon_weighted)
    if not 0 < beta < 1 or L < 0:
        raise BoundDomainError("need beta in (0, 1) and L >= 0")
    return (epsilon_weighted / alpha) * (L / beta)


def inherited_tv_contraction(alpha, epsilon):
    """TV contraction coefficient inherited by the perturbed kernel.

    Returns ``1 - alpha + 2 * epsilon`` when ``2 * epsilon < alpha`` and
    ``None`` when inheritance fails.
    """
    _check_alpha(alpha)
    _check_epsilon(epsilon)
    if 2 * epsilon < alpha:
        return 1 - alpha + 2 * epsilon
    return None


def theorem1_report(alpha, epsilon, w0, n) -> BoundReport:
    return BoundReport(
        n=n,
        marginal_bound=theorem1_marginal_bound(alpha, epsilon, w0, n),
        stationary_bound=theorem1_stationary_bound(alpha, epsilon),
        inputs={"theorem": 1, "alpha": alpha, "epsilon": epsilon, "w0": w0},
    )


def theorem2_report(alpha, epsilon_weighted, beta, L, integral_V_p0, w0, n) -> BoundReport:
    kappa = compute_kappa(L, beta, integral_V_p0)
    return BoundReport(
        n=n,
        marginal_bound=theorem2_marginal_bound(alpha, epsilon_weighted, kappa, w0, n),
        stationary_bound=theorem2_stationary_bound(alpha, epsilon_weighted, beta, L),
        inputs={"theorem": 2, "alpha": alpha, "epsilon_weighted": epsilon_weighted,
                "beta": beta, "L": L, "kappa": kappa, "integral_V_p0": integral_V_p0,
                "w0": w0},
    )


@dataclass
class EpsilonEstimate:
    epsilon: float
    probes: np.ndarray
    distances: np.ndarray
    weights: np.ndarray
    note: str = PROBE_GRID_NOTE

    @property
    def ratios(self):
        return self.distances / self.weights


def _stream(rng):
    return rng if isinstance(rng, RngStream) else RngStream(int(rng or 0))


def estimate_epsilon_weighted(Q, K, V, probe_states, distance_estimator=None, rng=0,
                              draws=10_000) -> EpsilonEstimate:
    """Largest ``distance(Q(x, .), K(x, .)) / V(x)`` over the probe states.

    One-step samples from both kernels reuse the same stream per probe, so
    innovation-driven pairs are compared under common random numbers.
    """
    probes = np.asarray(list(probe_states), dtype=float)
    if probes.size == 0:
        raise ValueError("need at least one probe state")
    distance_estimator = distance_estimator or empirical_wasserstein_1d
    stream = _stream(rng)
    dists = np.empty(probes.size)
    weights = np.empty(probes.size)
    for i, x in enumerate(probes):
        sub = stream.substream(i)
        start = np.full(draws, x)
        a = Q.step_batch(start, sub.generator())
        b = K.step_batch(start, sub.generator())
        dists[i] = distance_estimator(a, b)
        weights[i] = V(x)
    if np.any(weights < 1):
        raise BoundDomainError("Lyapunov weight V must be at least 1")
    return EpsilonEstimate(float(np.max(dists / weights)), probes, dists, weights)


@dataclass
class LyapunovFit:
    beta: float | None
    L: float | None
    feasible: bool
    probes: np.ndarray
    kv: np.ndarray
    kv_se: np.ndarray
    v: np.ndarray
    slack: np.ndarray | None = None
    exact: bool = False
    note: str = PROBE_GRID_NOTE


def fit_lyapunov(kernel, V, probe_states, rng=0, draws=10_000, betas=None,
                 max_L=math.inf) -> LyapunovFit:
    """Fit the drift condition ``(KV)(x) <= (1 - beta) V(x) + L`` on probe states.

    ``KV`` is computed exactly when the kernel offers ``expect(f, x)`` and by
    Monte Carlo otherwise. For every beta on the grid the smallest feasible
    ``L`` is found (padded by 1e-9 for exact evaluations, 3 standard errors
    for Monte Carlo); the pair minimizing ``L / beta``, the quantity entering
    the stationary bound, is returned, ties going to the larger beta.
    """
    probes = np.asarray(list(probe_states), dtype=float)
    if probes.size == 0:
        raise ValueError("need at least one probe state")
    betas = BETA_GRID if betas is None else np.asarray(betas, dtype=float)
    v = np.array([V(x) for x in probes], dtype=float)
    exact = hasattr(kernel, "expect")
    if exact:
        kv = np.array([kernel.expect(V, x) for x in probes], dtype=float)
        se = np.zeros_like(kv)
        pad = np.full_like(kv, 1e-9)
    else:
        stream = _stream(rng)
        kv = np.empty(probes.size)
        se = np.empty(probes.size)
        for i, x in enumerate(probes):
            nxt = kernel.step_batch(np.full(draws, x), stream.substream(i).generator())
            vals = _apply(V, nxt)
            kv[i] = vals.mean()
            se[i] = vals.std(ddof=1) / math.sqrt(draws)
        pad = 3 * se
    req = kv + pad
    L_by_beta = np.array([max(0.0, float(np.max(req - (1 - b) * v))) for b in betas])
    ok = np.isfinite(L_by_beta) & (L_by_beta <= max_L)
    if not np.any(ok):
        return LyapunovFit(None, None, False, probes, kv, se, v, exact=exact)
    ratio = np.where(ok, L_by_beta / betas, np.inf)
    best = ratio.min()
    tied = np.flatnonzero(ratio <= best * (1 + 1e-12) + 1e-15)
    j = tied[np.argmax(betas[tied])]
    beta, L = float(betas[j]), float(L_by_beta[j])
    slack = (1 - beta) * v + L - kv
    return LyapunovFit(beta, L, True, probes, kv, se, v, slack, exact)


def _apply(f, xs):
    try:
        out = np.asarray(f(xs), dtype=float)
        if out.shape == xs.shape:
            return out
    except (TypeError, ValueError):
        pass
    return np.array([f(x) for x in xs], dtype=float)


def lyapunov_slack(kernel_expect, V, probes, beta, L):
    """Slack ``(1 - beta) V(x) + L - (KV)(x)`` of a given drift pair at each probe."""
    return np.array([(1 - beta) * V(x) + L - kernel_expect(V, x) for x in probes])
