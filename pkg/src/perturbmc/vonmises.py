"""Von Mises angular regression.

Each angle follows ``vonMises(mu_i, kappa)`` with mean direction
``mu_i = 2 * arctan(beta @ z_i)``. Parameters are ``theta = (beta, log kappa)``
with independent ``N(0, 10^2)`` priors on every component.
"""
from __future__ import annotations

import hashlib
import io
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

LOG_2PI = math.log(2 * math.pi)
BESSEL_SPLIT = 15.0
_SERIES_TERMS = 64
_ASYMPTOTIC_TERMS = 30


# --------------------------------------------------------------------------
# modified Bessel functions of the first kind, orders 0 and 1


def _as_positive(kappa):
    kappa = np.asarray(kappa, dtype=float)
    if np.any(~(kappa > 0)):
        raise ValueError("kappa must be positive")
    return kappa


def _series_sums(kappa):
    # I0 = sum t_k, I1 = (kappa/2) sum t_k / (k+1), t_k = (kappa^2/4)^k / (k!)^2
    k = np.arange(_SERIES_TERMS)
    x = (kappa[..., None] ** 2) / 4
    ratio = np.where(k > 0, x / np.maximum(k, 1) ** 2, 1.0)
    terms = np.cumprod(ratio, axis=-1)
    s0 = terms.sum(axis=-1)
    s1 = (kappa / 2) * (terms / (k + 1)).sum(axis=-1)
    return s0, s1


def _asymptotic_sums(kappa, order):
    # I_nu(kappa) ~ e^kappa / sqrt(2 pi kappa) * sum_k (-1)^k prod_j (4 nu^2 - (2j-1)^2) / (k! (8 kappa)^k)
    j = np.arange(1, _ASYMPTOTIC_TERMS + 1)
    factors = -(4.0 * order ** 2 - (2 * j - 1) ** 2) / (j * 8.0 * kappa[..., None])
    terms = np.concatenate([np.ones(kappa.shape + (1,)), np.cumprod(factors, axis=-1)], axis=-1)
    return terms.sum(axis=-1)


def log_bessel_i0_series(kappa):
    s0, _ = _series_sums(_as_positive(kappa))
    return np.log(s0)


def log_bessel_i0_asymptotic(kappa):
    kappa = _as_positive(kappa)
    return kappa - 0.5 * np.log(2 * np.pi * kappa) + np.log(_asymptotic_sums(kappa, 0))


def log_bessel_i0(kappa):
    """``log I0(kappa)``: power series below 15, large-argument expansion above."""
    kappa = _as_positive(kappa)
    small = kappa <= BESSEL_SPLIT
    out = np.empty_like(kappa)
    if np.any(small):
        out[small] = log_bessel_i0_series(kappa[small])
    if np.any(~small):
        out[~small] = log_bessel_i0_asymptotic(kappa[~small])
    return out if out.ndim else float(out)


def bessel_ratio_i1_i0(kappa):
    """``I1(kappa) / I0(kappa)``, the derivative of ``log I0``."""
    kappa = _as_positive(kappa)
    small = kappa <= BESSEL_SPLIT
    out = np.empty_like(kappa)
    if np.any(small):
        s0, s1 = _series_sums(kappa[small])
        out[small] = s1 / s0
    if np.any(~small):
        big = kappa[~small]
        out[~small] = _asymptotic_sums(big, 1) / _asymptotic_sums(big, 0)
    return out if out.ndim else float(out)


# --------------------------------------------------------------------------
# data


@dataclass
class VonMisesDataset:
    angles: np.ndarray
    features: np.ndarray
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.angles = np.ascontiguousarray(self.angles, dtype=float)
        self.features = np.ascontiguousarray(np.atleast_2d(self.features), dtype=float)
        if self.features.shape[0] != self.angles.shape[0]:
            raise ValueError("need one feature row per angle")
        if np.any(~(np.abs(self.angles) < np.pi)):
            raise ValueError("angles must lie strictly inside (-pi, pi)")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features must be finite")

    def __len__(self):
        return self.angles.shape[0]

    @property
    def n(self):
        return self.angles.shape[0]

    @property
    def d_z(self):
        return self.features.shape[1]

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(np.asarray(self.angles.shape + self.features.shape, dtype="<i8").tobytes())
        h.update(self.angles.astype("<f8").tobytes())
        h.update(self.features.astype("<f8").tobytes())
        return h.hexdigest()


def sample_von_mises(mu, kappa, gen):
    """Best-Fisher wrapped-Cauchy rejection sampler; returns angles in (-pi, pi)."""
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    out = np.empty_like(mu)
    if kappa < 1e-8:
        out[:] = gen.uniform(-np.pi, np.pi, size=mu.shape)
    else:
        tau = 1 + math.sqrt(1 + 4 * kappa ** 2)
        rho = (tau - math.sqrt(2 * tau)) / (2 * kappa)
        r = (1 + rho ** 2) / (2 * rho)
        todo = np.arange(mu.size)
        while todo.size:
            u1, u2, u3 = gen.random((3, todo.size))
            z = np.cos(np.pi * u1)
            f = (1 + r * z) / (r + z)
            c = kappa * (r - f)
            with np.errstate(divide="ignore"):
                ok = (c * (2 - c) - u2 > 0) | (np.log(c / u2) + 1 - c >= 0)
            theta = np.sign(u3 - 0.5) * np.arccos(np.clip(f, -1, 1))
            out[todo[ok]] = theta[ok]
            todo = todo[~ok]
        out = out + mu
    wrapped = np.mod(out + np.pi, 2 * np.pi) - np.pi
    # the boundary -pi (== pi) has probability zero; nudge it inside the open interval
    edge = ~(np.abs(wrapped) < np.pi)
    wrapped[edge] = np.copysign(np.nextafter(np.pi, 0), wrapped[edge])
    return wrapped


def simulate_dataset(n, d_z, beta_true, kappa_true, rng) -> VonMisesDataset:
    """Features: an intercept column of ones plus ``d_z - 1`` standard normal columns."""
    from .rng import as_generator

    if n < 1 or kappa_true <= 0:
        raise ValueError("need n >= 1 and kappa_true > 0")
    beta_true = np.asarray(beta_true, dtype=float)
    if beta_true.shape != (d_z,):
        raise ValueError(f"beta_true must have length d_z={d_z}")
    gen = as_generator(rng)
    z = np.empty((n, d_z))
    z[:, 0] = 1.0
    z[:, 1:] = gen.standard_normal((n, d_z - 1))
    mu = 2 * np.arctan(z @ beta_true)
    angles = sample_von_mises(mu, kappa_true, gen)
    seed = getattr(rng, "seed", rng if isinstance(rng, int) else None)
    return VonMisesDataset(angles, z, seed=seed, meta={
        "beta_true": beta_true.tolist(), "kappa_true": float(kappa_true)})


# --------------------------------------------------------------------------
# model


class VonMisesModel:
    """Per-datum log-likelihood, gradient and Hessian for the regression model."""

    def __init__(self, d_z, prior_sd=10.0):
        self.d_z = d_z
        self.dim = d_z + 1
        self.prior_sd = prior_sd

    def _pieces(self, theta, data, idx):
        theta = np.asarray(theta, dtype=float)
        beta, log_kappa = theta[:-1], theta[-1]
        z = data.features if idx is None else data.features[idx]
        x = data.angles if idx is None else data.angles[idx]
        u = z @ beta
        resid = x - 2 * np.arctan(u)
        # overflow gives kappa = inf and non-finite output, which callers treat as rejection
        with np.errstate(over="ignore"):
            kappa = np.exp(np.float64(log_kappa))
        return z, u, resid, kappa

    def loglik(self, theta, data, idx=None):
        _, _, resid, kappa = self._pieces(theta, data, idx)
        return kappa * np.cos(resid) - LOG_2PI - log_bessel_i0(kappa)

    def loglik_grad(self, theta, data, idx=None):
        z, u, resid, kappa = self._pieces(theta, data, idx)
        c, s = np.cos(resid), np.sin(resid)
        ll = kappa * c - LOG_2PI - log_bessel_i0(kappa)
        dmu = 2 / (1 + u ** 2)
        g = np.empty((z.shape[0], self.dim))
        g[:, :-1] = (kappa * s * dmu)[:, None] * z
        g[:, -1] = kappa * c - kappa * bessel_ratio_i1_i0(kappa)
        return ll, g

    def loglik_grad_hess(self, theta, data, idx=None):
        z, u, resid, kappa = self._pieces(theta, data, idx)
        c, s = np.cos(resid), np.sin(resid)
        a = bessel_ratio_i1_i0(kappa)
        ll = kappa * c - LOG_2PI - log_bessel_i0(kappa)
        w = 1 + u ** 2
        dmu = 2 / w
        d2mu = -4 * u / w ** 2
        g = np.empty((z.shape[0], self.dim))
        g[:, :-1] = (kappa * s * dmu)[:, None] * z
        g[:, -1] = kappa * c - kappa * a
        h = np.empty((z.shape[0], self.dim, self.dim))
        h[:, :-1, :-1] = (kappa * (s * d2mu - c * dmu ** 2))[:, None, None] \
            * (z[:, :, None] * z[:, None, :])
        h[:, :-1, -1] = g[:, :-1]
        h[:, -1, :-1] = g[:, :-1]
        h[:, -1, -1] = kappa * c - kappa ** 2 * (1 - a ** 2)
        return ll, g, h

    def grad(self, theta, data, idx=None):
        return self.loglik_grad(theta, data, idx)[1]

    def hess(self, theta, data, idx=None):
        return self.loglik_grad_hess(theta, data, idx)[2]

    def log_prior(self, theta):
        theta = np.asarray(theta, dtype=float)
        v = self.prior_sd ** 2
        return float(-0.5 * theta @ theta / v - self.dim * (0.5 * LOG_2PI + math.log(self.prior_sd)))

    def grad_prior(self, theta):
        return -np.asarray(theta, dtype=float) / self.prior_sd ** 2

    def hess_prior(self, theta):
        return -np.eye(self.dim) / self.prior_sd ** 2

    def log_posterior(self, theta, data):
        return self.log_prior(theta) + float(np.sum(self.loglik(theta, data)))


def loglik_datum(params, x_i, z_i):
    theta = np.asarray(params, dtype=float)
    with np.errstate(over="ignore"):
        kappa = np.exp(np.float64(theta[-1]))
    return float(kappa * math.cos(x_i - 2 * math.atan(float(np.dot(theta[:-1], z_i))))
                 - LOG_2PI - log_bessel_i0(kappa))


def _single(x_i, z_i):
    return VonMisesDataset(np.array([x_i]), np.atleast_2d(z_i))


def grad_datum(params, x_i, z_i):
    z_i = np.atleast_1d(z_i)
    return VonMisesModel(z_i.size).grad(params, _single(x_i, z_i))[0]


def hess_datum(params, x_i, z_i):
    z_i = np.atleast_1d(z_i)
    return VonMisesModel(z_i.size).hess(params, _single(x_i, z_i))[0]


# --------------------------------------------------------------------------
# posterior mode


class ModeFindingError(RuntimeError):
    def __init__(self, message, trajectory):
        super().__init__(message)
        self.trajectory = trajectory


class SaddlePointWarning(RuntimeWarning):
    pass


@dataclass
class ModeResult:
    theta: np.ndarray
    hessian: np.ndarray
    iterations: int
    grad_norm: float
    trajectory: list


def _posterior_derivs(model, data, theta):
    with np.errstate(invalid="ignore", over="ignore"):
        return _posterior_derivs_raw(model, data, theta)


def _posterior_derivs_raw(model, data, theta):
    if hasattr(model, "loglik_grad_hess"):
        ll, g, h = model.loglik_grad_hess(theta, data)
    else:
        ll, g, h = model.loglik(theta, data), model.grad(theta, data), model.hess(theta, data)
    f = model.log_prior(theta) + float(np.sum(ll))
    grad = model.grad_prior(theta) + g.sum(axis=0)
    hess = model.hess_prior(theta) + h.sum(axis=0)
    return f, grad, 0.5 * (hess + hess.T)


def find_mode(model, data, init=None, tol=1e-8, max_iter=200, max_step=None) -> ModeResult:
    """Newton ascent with backtracking on the full-data log posterior.

    Where the negative Hessian is not positive definite the step is damped
    by adding a multiple of the identity until it is. ``max_step`` caps the
    Euclidean length of each Newton step; a cap keeps the path from leaping
    into a distant basin of a multimodal posterior. Stops when the
    gradient's sup-norm falls below ``tol``.
    """
    theta = np.zeros(model.dim) if init is None else np.array(init, dtype=float)
    f, g, h = _posterior_derivs(model, data, theta)
    trajectory = [(theta.copy(), f, float(np.max(np.abs(g))))]
    for it in range(1, max_iter + 1):
        if np.max(np.abs(g)) <= tol:
            break
        neg = -h
        shift = 0.0
        while True:
            try:
                chol = np.linalg.cholesky(neg + shift * np.eye(model.dim))
                break
            except np.linalg.LinAlgError:
                shift = max(2 * shift, 1e-6 * max(1.0, np.abs(neg).max()))
        step = np.linalg.solve(chol.T, np.linalg.solve(chol, g))
        length = float(np.linalg.norm(step))
        if max_step is not None and length > max_step:
            step *= max_step / length
        t = 1.0
        while True:
            cand = theta + t * step
            f_new, g_new, h_new = _posterior_derivs(model, data, cand)
            if np.isfinite(f_new) and f_new >= f + 1e-4 * t * (g @ step) - 1e-12 * abs(f):
                break
            t *= 0.5
            if t < 1e-12:
                raise ModeFindingError("line search failed", trajectory)
        theta, f, g, h = cand, f_new, g_new, h_new
        trajectory.append((theta.copy(), f, float(np.max(np.abs(g)))))
    else:
        if np.max(np.abs(g)) > tol:
            raise ModeFindingError(f"no convergence within {max_iter} Newton steps", trajectory)
    try:
        np.linalg.cholesky(-h)
    except np.linalg.LinAlgError:
        warnings.warn("negative Hessian at terminus is not positive definite",
                      SaddlePointWarning, stacklevel=2)
    return ModeResult(theta, h, len(trajectory) - 1, float(np.max(np.abs(g))), trajectory)


# --------------------------------------------------------------------------
# dataset files

_MAGIC = b"VMDS1\n"


def write_csv(data: VonMisesDataset, path):
    header = ",".join(["angle"] + [f"z_{j + 1}" for j in range(data.d_z)])
    table = np.column_stack([data.angles, data.features])
    np.savetxt(path, table, delimiter=",", header=header, comments="", fmt="%.17g")


def read_csv(path, seed=None) -> VonMisesDataset:
    with open(path) as fh:
        cols = fh.readline().strip().split(",")
    if not cols or cols[0] != "angle" or any(c != f"z_{j + 1}" for j, c in enumerate(cols[1:])):
        raise ValueError(f"unexpected CSV header {cols!r}; need angle,z_1,...,z_d")
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return VonMisesDataset(table[:, 0], table[:, 1:], seed=seed)


def write_binary(data: VonMisesDataset, path):
    """Columnar little-endian float64 with a one-line JSON header ``{n, d_z, seed}``."""
    header = json.dumps({"n": data.n, "d_z": data.d_z, "seed": data.seed}).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(header + b"\n")
        fh.write(data.angles.astype("<f8").tobytes())
        fh.write(np.asfortranarray(data.features).astype("<f8").tobytes(order="F"))


def read_binary(path) -> VonMisesDataset:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError("not a von Mises dataset file")
        header = json.loads(fh.readline())
        body = fh.read()
    n, d_z = header["n"], header["d_z"]
    values = np.frombuffer(body, dtype="<f8")
    if values.size != n * (d_z + 1):
        raise ValueError("file body does not match header dimensions")
    angles = values[:n].copy()
    features = values[n:].reshape((n, d_z), order="F").copy()
    return VonMisesDataset(angles, features, seed=header.get("seed"))


def dataset_to_bytes(data: VonMisesDataset) -> bytes:
    buf = io.BytesIO()
    np.save(buf, np.column_stack([data.angles, data.features]))
    return buf.getvalue()
