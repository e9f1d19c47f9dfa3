"""The three analytic examples: a three-point walk, an AR(1) pair, and an
independent Metropolis sampler whose log-target is noisy on part of the space.

Each builder returns the exact kernel ``Q``, the perturbed kernel ``K`` and
the closed-form constants that feed the bounds in :mod:`perturbmc.bounds`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate, stats
from scipy.special import log_ndtr, ndtr

from .bounds import LyapunovCertificate
from .chain import FiniteKernel, InnovationKernel, synchronous_coupling
from .transport import DiscreteDistribution, wasserstein_1d

MEAN_ABS_STD_NORMAL = math.sqrt(2 / math.pi)


class QuadratureAccuracyError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# three-point random walk


@dataclass(frozen=True)
class ThreePointSpec:
    x: float
    xt: float
    y: float
    q: float

    def __post_init__(self):
        if not self.xt <= self.x < self.y:
            raise ValueError("need xt <= x < y")
        if not 0 < self.q < 1:
            raise ValueError("q must lie in (0, 1)")


@dataclass(frozen=True)
class ThreePointConstants:
    contraction_factor: float
    alpha: float
    epsilon: float
    pi_q: DiscreteDistribution
    pi_k: DiscreteDistribution
    stationary_w1: float


def _two_point(a, b, wa):
    if a == b:
        return DiscreteDistribution.dirac(a)
    return DiscreteDistribution(np.array([a, b]), np.array([wa, 1 - wa]))


def build_three_point(spec: ThreePointSpec):
    """Random walk between ``x`` and ``y``; the perturbed walk uses ``xt`` in place of ``x``.

    From ``x`` or ``xt`` the walk moves to the low point with probability
    ``1 - q`` and to ``y`` with probability ``q``; from ``y`` it moves to the
    low point with probability ``q``.
    """
    x, xt, y, q = spec.x, spec.xt, spec.y, spec.q
    states = np.array([x, y]) if xt == x else np.array([xt, x, y])
    m = states.size

    def matrix(low):
        P = np.zeros((m, m))
        lo = int(np.flatnonzero(states == low)[0])
        for i, z in enumerate(states):
            if z == y:
                P[i, lo] += q
                P[i, m - 1] += 1 - q
            else:
                P[i, lo] += 1 - q
                P[i, m - 1] += q
        return P

    Q = FiniteKernel(states, matrix(x))
    K = FiniteKernel(states, matrix(xt))
    factor = abs(1 - 2 * q)
    pi_q = _two_point(x, y, 0.5)
    pi_k = _two_point(xt, y, 0.5)
    consts = ThreePointConstants(
        contraction_factor=factor,
        alpha=1 - factor,
        epsilon=max(q, 1 - q) * abs(x - xt),
        pi_q=pi_q,
        pi_k=pi_k,
        stationary_w1=wasserstein_1d(pi_q, pi_k),
    )
    return Q, K, consts


# --------------------------------------------------------------------------
# autoregressive pair


@dataclass(frozen=True)
class AR1Spec:
    alpha: float
    alphatilde: float
    innovation: object = None  # scipy frozen distribution; standard normal if None
    mean_abs_innovation: float | None = None

    def __post_init__(self):
        for name in ("alpha", "alphatilde"):
            if not 0 < getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.innovation is None:
            object.__setattr__(self, "innovation", stats.norm())
        if self.mean_abs_innovation is None:
            if self.innovation.dist.name == "norm" and self.innovation.args == () \
                    and not self.innovation.kwds:
                m = MEAN_ABS_STD_NORMAL
            else:
                m = float(self.innovation.expect(abs))
            object.__setattr__(self, "mean_abs_innovation", m)
        if not math.isfinite(self.mean_abs_innovation):
            raise ValueError("innovation must have a finite first absolute moment")


class AR1Kernel(InnovationKernel):
    """``x' = (1 - alpha) x + z`` with ``z`` drawn from the innovation law."""

    def __init__(self, alpha, innovation):
        self.alpha = alpha
        self.innovation = innovation
        self.innovation_family = f"ar1:{innovation.dist.name}:{innovation.args}:{innovation.kwds}"

    def draw_innovation(self, gen, size=None):
        return self.innovation.rvs(size=size, random_state=gen)

    def update(self, x, w):
        return (1 - self.alpha) * x + w


@dataclass(frozen=True)
class AR1Constants:
    """Closed-form certificates of the AR(1) pair for ``V(x) = 1 + |x|``."""

    alpha: float
    alphatilde: float
    mean_abs_innovation: float

    @property
    def epsilon_weighted(self):
        return abs(self.alpha - self.alphatilde)

    def epsilon_at(self, x):
        """Exact one-step W1 between the two kernels at ``x``."""
        return abs(self.alpha - self.alphatilde) * np.abs(x)

    @staticmethod
    def V(x):
        return 1 + np.abs(x)

    @property
    def beta(self):
        return self.alphatilde

    @property
    def L(self):
        return self.alphatilde + self.mean_abs_innovation


def build_ar1(spec: AR1Spec):
    """Exact and perturbed AR(1) kernels plus their synchronous coupling."""
    Q = AR1Kernel(spec.alpha, spec.innovation)
    K = AR1Kernel(spec.alphatilde, spec.innovation)
    consts = AR1Constants(spec.alpha, spec.alphatilde, spec.mean_abs_innovation)
    return Q, K, synchronous_coupling(Q, K), consts


def ar1_stationary_std_normal(alpha):
    """Stationary standard deviation of the AR(1) chain with N(0, 1) innovations."""
    return 1 / math.sqrt(1 - (1 - alpha) ** 2)


def gaussian_w1_centered(s1, s2):
    """W1 between N(0, s1^2) and N(0, s2^2): the comonotone map is a dilation."""
    return abs(s1 - s2) * MEAN_ABS_STD_NORMAL


# --------------------------------------------------------------------------
# noisy independent Metropolis


def default_log_target(w):
    return np.sin(3 * w) - w ** 2


@dataclass
class NoisyIMHSpec:
    """Independent Metropolis setting with noisy log-target evaluations.

    ``proposal`` is a scipy frozen distribution with bounded support, which
    defines the state space. ``noisy_region`` is a closed interval inside it.
    ``alpha`` (a lower bound on proposal/target density ratio) is computed by
    grid minimization when not given.
    """

    log_target: Callable = default_log_target
    proposal: object = None
    noisy_region: tuple = (0.8, 1.0)
    sigma2: float = 0.01
    alpha: float | None = None
    grid_points: int = 1024

    def __post_init__(self):
        if self.proposal is None:
            self.proposal = stats.uniform(0, 1)
        lo, hi = self.support
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise ValueError("proposal must have bounded support")
        if self.noisy_region is not None:
            a, b = self.noisy_region
            if not lo <= a <= b <= hi:
                raise ValueError("noisy region must be an interval inside the proposal support")
        if not self.sigma2 > 0:
            raise ValueError("noise variance must be positive")
        self.log_norm = math.log(
            integrate.quad(lambda w: math.exp(self.log_target(w)), lo, hi,
                           epsabs=1e-13, epsrel=1e-12, limit=200)[0]
        )
        grid = np.linspace(lo, hi, self.grid_points)
        self.grid_spacing = float(grid[1] - grid[0])
        if self.alpha is None:
            ratio = np.exp(self.proposal.logpdf(grid) - self.log_target(grid) + self.log_norm)
            self.alpha = float(min(1.0, ratio.min()))
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")

    @property
    def support(self):
        return tuple(float(s) for s in self.proposal.support())

    @property
    def sigma(self):
        return math.sqrt(self.sigma2)

    @property
    def noisy_mass(self) -> float:
        if self.noisy_region is None:
            return 0.0
        a, b = self.noisy_region
        return float(self.proposal.cdf(b) - self.proposal.cdf(a))

    def in_noisy(self, w):
        w = np.asarray(w)
        if self.noisy_region is None:
            return np.zeros(w.shape, dtype=bool)
        a, b = self.noisy_region
        return (w >= a) & (w <= b)

    def log_ratio(self, x, y):
        """``log r(x, y)`` with ``r = (e^U(y) / mu(y)) * (mu(x) / e^U(x))``, unnormalized."""
        return (self.log_target(y) - self.log_target(x)
                + self.proposal.logpdf(x) - self.proposal.logpdf(y))


class IMHKernel(InnovationKernel):
    """Independent Metropolis step; with ``noisy=True`` the log-target is perturbed.

    The innovation is ``(z, u, e_current, e_proposed)``: proposal, acceptance
    uniform and two standard normals. The exact kernel ignores the normals,
    so both kernels consume identical draws and couple synchronously. Noise
    is fresh at every step, at the current and at the proposed point.
    """

    innovation_family = "imh"

    def __init__(self, spec: NoisyIMHSpec, noisy: bool):
        self.spec = spec
        self.noisy = noisy

    def draw_innovation(self, gen, size=None):
        z = self.spec.proposal.rvs(size=size, random_state=gen)
        u = gen.random(size)
        shape = (2,) if size is None else (2, size)
        e = gen.standard_normal(shape)
        return z, u, e[0], e[1]

    def log_accept(self, x, z, e_x, e_z):
        lr = self.spec.log_ratio(x, z)
        if self.noisy:
            s = self.spec.sigma
            lr = lr + s * e_z * self.spec.in_noisy(z) - s * e_x * self.spec.in_noisy(x)
        return np.minimum(0.0, lr)

    def update(self, x, w):
        z, u, e_x, e_z = w
        accept = np.log(u) < self.log_accept(x, z, e_x, e_z)
        return np.where(accept, z, x)

    def acceptance(self, x, y):
        if self.noisy:
            return expected_noisy_acceptance(self.spec, x, y)
        return exact_acceptance(self.spec, x, y)

    def expect(self, f, x):
        """``(Kf)(x)`` by adaptive quadrature over the proposal."""
        lo, hi = self.spec.support
        pts = [p for p in (*(self.spec.noisy_region or ()), x) if lo < p < hi]
        fx = float(f(x))

        def move(y):
            return float(self.acceptance(x, y)) * float(self.spec.proposal.pdf(y))

        acc = integrate.quad(move, lo, hi, points=pts or None, limit=200, epsabs=1e-12)[0]
        val = integrate.quad(lambda y: move(y) * float(f(y)), lo, hi, points=pts or None,
                             limit=200, epsabs=1e-12)[0]
        return val + fx * (1 - acc)


def build_noisy_imh(spec: NoisyIMHSpec):
    return IMHKernel(spec, noisy=False), IMHKernel(spec, noisy=True)


def exact_acceptance(spec: NoisyIMHSpec, x, y):
    return np.exp(np.minimum(0.0, spec.log_ratio(x, y)))


def _noise_var(spec, x, y):
    return spec.sigma2 * (spec.in_noisy(x).astype(float) + spec.in_noisy(y).astype(float))


def lognormal_min_one(log_c, v2):
    """``E[min(1, c e^W)]`` for ``W ~ N(0, v2)``, in closed form."""
    log_c = np.asarray(log_c, dtype=float)
    v2 = np.asarray(v2, dtype=float)
    v = np.sqrt(v2)
    safe_v = np.where(v > 0, v, 1.0)
    t = -log_c
    upper = ndtr(-t / safe_v)
    lower = np.exp(log_c + v2 / 2 + log_ndtr((t - v2) / safe_v))
    return np.where(v > 0, upper + lower, np.exp(np.minimum(0.0, log_c)))


def expected_noisy_acceptance(spec: NoisyIMHSpec, x, y):
    """Mean of the noisy acceptance probability over the evaluation noise."""
    if np.any(~np.isfinite(spec.log_ratio(x, y))):
        raise ValueError("ratio r(x, y) must be positive and finite")
    return lognormal_min_one(spec.log_ratio(x, y), _noise_var(spec, x, y))


def expected_noisy_acceptance_quadrature(spec: NoisyIMHSpec, x, y) -> float:
    """Adaptive-quadrature oracle for :func:`expected_noisy_acceptance`, scalar inputs.

    The integrand is split at the kink ``c e^w = 1`` so the adaptive rule sees
    two smooth pieces.
    """
    log_c = float(spec.log_ratio(x, y))
    v2 = float(_noise_var(spec, x, y))
    if v2 == 0:
        return math.exp(min(0.0, log_c))
    v = math.sqrt(v2)
    kink = -log_c
    dens = stats.norm(scale=v).pdf
    below = integrate.quad(lambda w: math.exp(log_c + w) * dens(w), -np.inf, kink,
                           epsabs=1e-14, epsrel=1e-12, limit=200)[0]
    above = integrate.quad(dens, kink, np.inf, epsabs=1e-14, epsrel=1e-12, limit=200)[0]
    return below + above


def expected_noisy_acceptance_gauss_hermite(spec: NoisyIMHSpec, x, y, nodes=40) -> float:
    """Tensor Gauss-Hermite rule over both noise variables (coarse: integrand has a kink)."""
    t, w = np.polynomial.hermite_e.hermegauss(nodes)
    w = w / w.sum()
    s = spec.sigma
    ex = s * t[:, None] * float(spec.in_noisy(x))
    ey = s * t[None, :] * float(spec.in_noisy(y))
    vals = np.exp(np.minimum(0.0, float(spec.log_ratio(x, y)) + ey - ex))
    return float(w @ vals @ w)


@dataclass(frozen=True)
class AcceptanceGap:
    gap: float
    envelope: float
    exceeds_envelope: bool


def acceptance_gap(spec: NoisyIMHSpec, x, y) -> AcceptanceGap:
    """``|a(x, y) - E[a_hat(x, y)]|`` against the claimed ``sigma^2 e^{sigma^2}`` envelope.

    The envelope is treated as a claim under test; exceeding it is flagged,
    not raised.
    """
    gap = float(abs(exact_acceptance(spec, x, y) - expected_noisy_acceptance(spec, x, y)))
    touched = bool(spec.in_noisy(x) or spec.in_noisy(y))
    env = spec.sigma2 * math.exp(spec.sigma2) if touched else 0.0
    return AcceptanceGap(gap, env, gap > env + 1e-15)


@dataclass(frozen=True)
class TVGap:
    value: float
    envelope: float
    envelope_uniform: float
    one_step_tv: float


def noisy_imh_tv_gap(spec: NoisyIMHSpec, x) -> TVGap:
    """Acceptance-gap integral ``2 * int |a - E a_hat| dmu`` from state ``x``.

    Also returns the region-aware envelope
    ``2 s e^s (1[x in noisy] + mu(noisy) 1[x not in noisy])``, its uniform
    relaxation ``2 s e^s`` (``s`` the noise variance), and the exact one-step
    TV distance between the two kernel rows at ``x``.
    """
    lo, hi = spec.support
    s = spec.sigma2
    env_unif = 2 * s * math.exp(s)
    if spec.noisy_region is None:
        return TVGap(0.0, 0.0, env_unif, 0.0)
    a, b = spec.noisy_region
    x_noisy = bool(spec.in_noisy(x))

    def diff(y):
        return float(exact_acceptance(spec, x, y) - expected_noisy_acceptance(spec, x, y)) \
            * float(spec.proposal.pdf(y))

    pieces = [(lo, hi)] if x_noisy else [(a, b)]
    abs_int = 0.0
    signed_int = 0.0
    for p, r in pieces:
        if r <= p:
            continue
        pts = [c for c in (a, b, x) if p < c < r] or None
        v1, e1 = integrate.quad(lambda y: abs(diff(y)), p, r, points=pts, limit=400,
                                epsabs=1e-13, epsrel=1e-10)
        v2, e2 = integrate.quad(diff, p, r, points=pts, limit=400, epsabs=1e-13, epsrel=1e-10)
        if max(e1, e2) > 1e-8:
            raise QuadratureAccuracyError(f"quadrature error {max(e1, e2):.2e} exceeds 1e-8")
        abs_int += v1
        signed_int += v2
    env = env_unif * (1.0 if x_noisy else spec.noisy_mass)
    tv = 0.5 * (abs_int + abs(signed_int))
    return TVGap(2 * abs_int, env, env_unif, tv)


@dataclass(frozen=True)
class NoisyIMHCertificates:
    lyapunov: LyapunovCertificate
    R: float
    epsilon_envelope: float
    kappa: float
    final_bound: float
    unweighted_bound: float


def noisy_imh_certificates(spec: NoisyIMHSpec, R=None) -> NoisyIMHCertificates:
    """Drift pair for ``V = 1 + R 1[noisy]`` and the resulting TV bounds.

    ``R=None`` means ``R = 1 / mu(noisy)``, which gives the weighted envelope
    ``2 s e^s mu(noisy)`` and the final bound
    ``(2 s e^s mu(noisy) / alpha) (1 + 1 / alpha)``.
    """
    mass = spec.noisy_mass
    if R is None:
        if mass == 0:
            raise ValueError("noisy region has zero proposal mass; R = 1/mu is undefined")
        R = 1 / mass
    if R < 0:
        raise ValueError("R must be nonnegative")
    alpha = spec.alpha
    s = spec.sigma2
    base = 2 * s * math.exp(s)

    def V(w, R=R):
        return 1 + R * spec.in_noisy(w).astype(float)

    L = alpha + R * mass
    # beta = alpha may equal 1 when the target is the proposal; keep it inside (0, 1)
    beta = min(alpha, 1 - 1e-12)
    cert = LyapunovCertificate(V, beta, L)
    eps = base * max(1 / (1 + R), mass)
    kappa = max(L / alpha, 1 + R * mass)
    return NoisyIMHCertificates(
        lyapunov=cert,
        R=R,
        epsilon_envelope=eps,
        kappa=kappa,
        final_bound=eps * kappa / alpha,
        unweighted_bound=base / alpha,
    )


def discretize_imh(spec: NoisyIMHSpec, m=64, noisy=False) -> FiniteKernel:
    """Independent Metropolis on ``m`` grid midpoints with the proposal's cell masses."""
    lo, hi = spec.support
    edges = np.linspace(lo, hi, m + 1)
    pts = 0.5 * (edges[:-1] + edges[1:])
    mu = np.diff(spec.proposal.cdf(edges))
    mu = mu / mu.sum()
    log_pi = spec.log_target(pts)
    x, y = np.meshgrid(pts, pts, indexing="ij")
    log_r = log_pi[None, :] - log_pi[:, None] + np.log(mu[:, None]) - np.log(mu[None, :])
    if noisy:
        acc = lognormal_min_one(log_r, _noise_var(spec, x, y))
    else:
        acc = np.exp(np.minimum(0.0, log_r))
    P = acc * mu[None, :]
    np.fill_diagonal(P, 0.0)
    P[np.diag_indices(m)] = 1 - P.sum(axis=1)
    return FiniteKernel(pts, P)


def discrete_alpha(kernel: FiniteKernel) -> float:
    """``1 - max_{i,j} TV(P_i, P_j)`` for a finite kernel."""
    P = kernel.matrix
    tv = 0.5 * np.abs(P[:, None, :] - P[None, :, :]).sum(axis=-1)
    return float(1 - tv.max())
