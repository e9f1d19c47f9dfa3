"""Wasserstein and total variation distances.

The 1-D quantile formula is the workhorse; the linear-programming solver in
:func:`wasserstein_bruteforce` exists to cross-check it and to evaluate
arbitrary metrics (the trivial 0/1 metric recovers total variation) on small
supports.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .rng import as_generator

BRUTEFORCE_MAX_SUPPORT = 12


@dataclass(frozen=True)
class DiscreteDistribution:
    """Finitely many weighted point masses.

    ``support`` has shape ``(m,)`` for distributions on the line or ``(m, d)``
    otherwise. Weights must be nonnegative and sum to one within 1e-12.
    """

    support: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        support = np.asarray(self.support, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if support.ndim == 0:
            support = support.reshape(1)
        if support.shape[0] == 0:
            raise ValueError("empty support")
        if weights.shape != (support.shape[0],):
            raise ValueError("weights must have one entry per support point")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise ValueError("weights must be finite and nonnegative")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {weights.sum():.15g}, expected 1")
        if not np.all(np.isfinite(support)):
            raise ValueError("support points must be finite")
        keys = support.reshape(support.shape[0], -1)
        if np.unique(keys, axis=0).shape[0] != keys.shape[0]:
            raise ValueError("support points must be distinct")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def from_masses(cls, support, weights, drop_zero=False):
        """Build a distribution, merging repeated support points."""
        support = np.asarray(support, dtype=float)
        weights = np.asarray(weights, dtype=float)
        flat = support.reshape(support.shape[0], -1)
        uniq, inverse = np.unique(flat, axis=0, return_inverse=True)
        merged = np.zeros(uniq.shape[0])
        np.add.at(merged, inverse.ravel(), weights)
        if drop_zero:
            keep = merged > 0
            uniq, merged = uniq[keep], merged[keep]
        if support.ndim == 1:
            uniq = uniq[:, 0]
        return cls(uniq, merged / merged.sum())

    @classmethod
    def dirac(cls, point):
        return cls(np.atleast_1d(np.asarray(point, dtype=float)), np.ones(1))

    @classmethod
    def from_samples(cls, samples):
        samples = np.asarray(samples, dtype=float)
        return cls.from_masses(samples, np.full(samples.shape[0], 1.0 / samples.shape[0]))

    def __len__(self):
        return self.support.shape[0]

    def mass_at(self, point) -> float:
        hits = np.all(
            self.support.reshape(len(self), -1) == np.ravel(np.asarray(point, dtype=float)),
            axis=1,
        )
        return float(self.weights[hits].sum())


def _validate_sample(x, name):
    x = np.asarray(x, dtype=float).ravel()
    if x.size == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} has non-finite entries")
    return x


def _quantile_steps(dist):
    order = np.argsort(dist.support, kind="stable")
    values = dist.support[order]
    cum = np.cumsum(dist.weights[order])
    cum[-1] = 1.0
    return values, cum


def wasserstein_1d(mu: DiscreteDistribution, nu: DiscreteDistribution) -> float:
    r"""Exact :math:`W_1` between two distributions on the real line.

    Evaluates :math:`\int_0^1 |F_\mu^{-1}(s) - F_\nu^{-1}(s)|\,ds` by merging the
    breakpoints of both quantile step functions; on each merged interval both
    generalized inverses are constant.
    """
    if mu.support.ndim != 1 or nu.support.ndim != 1:
        raise ValueError("wasserstein_1d needs one-dimensional supports")
    xa, ca = _quantile_steps(mu)
    xb, cb = _quantile_steps(nu)
    breaks = np.union1d(ca, cb)
    lower = np.concatenate(([0.0], breaks[:-1]))
    widths = breaks - lower
    mid = 0.5 * (lower + breaks)
    qa = xa[np.minimum(np.searchsorted(ca, mid, side="left"), xa.size - 1)]
    qb = xb[np.minimum(np.searchsorted(cb, mid, side="left"), xb.size - 1)]
    return float(np.sum(widths * np.abs(qa - qb)))


def euclidean(a, b) -> float:
    return float(np.linalg.norm(np.atleast_1d(a) - np.atleast_1d(b)))


def trivial_metric(a, b) -> float:
    return 0.0 if np.array_equal(np.atleast_1d(a), np.atleast_1d(b)) else 1.0


def wasserstein_bruteforce(mu: DiscreteDistribution, nu: DiscreteDistribution,
                           metric=euclidean) -> float:
    """Optimal transport cost by solving the transport linear program exactly.

    Limited to supports of at most 12 points each; solved with HiGHS dual
    simplex so the optimum is a vertex of the transport polytope.
    """
    m, k = len(mu), len(nu)
    if m > BRUTEFORCE_MAX_SUPPORT or k > BRUTEFORCE_MAX_SUPPORT:
        raise ValueError(
            f"support sizes {m} x {k} exceed the brute-force limit {BRUTEFORCE_MAX_SUPPORT}"
        )
    cost = np.array([[metric(a, b) for b in nu.support] for a in mu.support], dtype=float)
    rows = np.kron(np.eye(m), np.ones((1, k)))
    cols = np.kron(np.ones((1, m)), np.eye(k))
    a_eq = np.vstack([rows, cols])
    b_eq = np.concatenate([mu.weights, nu.weights])
    res = linprog(
        cost.ravel(), A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs-ds",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(max(cost.ravel() @ res.x, 0.0))


def tv_discrete(mu: DiscreteDistribution, nu: DiscreteDistribution) -> float:
    """Half the L1 distance between the mass functions, over the union of supports."""
    union = DiscreteDistribution.from_masses(
        np.concatenate([mu.support, nu.support]),
        np.ones(len(mu) + len(nu)) / (len(mu) + len(nu)),
    )
    keys = union.support.reshape(len(union), -1)

    def masses(dist):
        out = np.zeros(len(union))
        flat = dist.support.reshape(len(dist), -1)
        for row, w in zip(flat, dist.weights):
            out[np.all(keys == row, axis=1)] += w
        return out

    return float(min(1.0, 0.5 * np.abs(masses(mu) - masses(nu)).sum()))


def empirical_wasserstein_1d(a, b, rng=None) -> float:
    """W1 between two equal-size samples: mean gap of matched order statistics.

    A larger sample is first thinned to the size of the smaller one by drawing
    without replacement.
    """
    a = _validate_sample(a, "a")
    b = _validate_sample(b, "b")
    if a.size != b.size:
        gen = as_generator(rng if rng is not None else 0)
        if a.size > b.size:
            a = gen.choice(a, size=b.size, replace=False)
        else:
            b = gen.choice(b, size=a.size, replace=False)
    if a.size != b.size:
        raise RuntimeError("sample sizes still differ after subsampling")
    return float(np.mean(np.abs(np.sort(a) - np.sort(b))))


def _common_edges(a, b, bins):
    both = np.concatenate([a, b])
    lo, hi = both.min(), both.max()
    if isinstance(bins, str):
        edges = np.histogram_bin_edges(both, bins=bins, range=(lo, hi))
        if edges.size < 3:
            edges = np.linspace(lo, hi, 3)
    else:
        if bins < 2:
            raise ValueError("need at least two bins")
        edges = np.linspace(lo, hi, int(bins) + 1)
    return edges


def tv_histogram(a, b, bins="fd") -> float:
    """Coarse TV estimate: half the L1 distance of normalized histograms.

    Plug-in histogram TV is biased upward at finite sample sizes; use it for
    sanity checks only.
    """
    a = _validate_sample(a, "a")
    b = _validate_sample(b, "b")
    both = np.concatenate([a, b])
    if both.min() == both.max():
        # a degenerate common range means both samples are the same point mass
        return 0.0
    edges = _common_edges(a, b, bins)
    ha = np.histogram(a, bins=edges)[0] / a.size
    hb = np.histogram(b, bins=edges)[0] / b.size
    return float(0.5 * np.abs(ha - hb).sum())


def tv_witness(a, b, bins=16, rng=None):
    """Held-out lower estimate of TV with its standard error.

    Half of each sample picks the witness set ``A`` (bins where ``a`` is
    denser); the other half estimates ``P_a(A) - P_b(A)``. That difference is
    unbiased for ``TV`` restricted to ``A``, which never exceeds the true TV,
    so the estimate does not carry the upward plug-in bias of
    :func:`tv_histogram`.

    Returns
    -------
    (estimate, standard_error)
    """
    a = _validate_sample(a, "a")
    b = _validate_sample(b, "b")
    gen = as_generator(rng if rng is not None else 0)
    a = gen.permutation(a)
    b = gen.permutation(b)
    a1, a2 = a[: a.size // 2], a[a.size // 2:]
    b1, b2 = b[: b.size // 2], b[b.size // 2:]
    both = np.concatenate([a, b])
    if both.min() == both.max():
        return 0.0, 0.0
    edges = _common_edges(a, b, bins)
    ha = np.histogram(a1, bins=edges)[0] / a1.size
    hb = np.histogram(b1, bins=edges)[0] / b1.size
    witness = ha > hb
    ia = witness[np.clip(np.searchsorted(edges, a2, side="right") - 1, 0, witness.size - 1)]
    ib = witness[np.clip(np.searchsorted(edges, b2, side="right") - 1, 0, witness.size - 1)]
    pa, pb = ia.mean(), ib.mean()
    se = np.sqrt(pa * (1 - pa) / ia.size + pb * (1 - pb) / ib.size)
    return float(pa - pb), float(se)


def empirical_wasserstein_1d_se(a, b, rng=None, resamples=200):
    """Empirical W1 between two samples with a bootstrap standard error.

    Returns
    -------
    (estimate, standard_error)
    """
    a = _validate_sample(a, "a")
    b = _validate_sample(b, "b")
    gen = as_generator(rng if rng is not None else 0)
    est = empirical_wasserstein_1d(a, b, rng=gen)
    boot = np.empty(resamples)
    for i in range(resamples):
        boot[i] = empirical_wasserstein_1d(gen.choice(a, a.size), gen.choice(b, b.size), rng=gen)
    return est, float(boot.std(ddof=1))
