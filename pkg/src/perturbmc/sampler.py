"""Random-walk Metropolis samplers: exact full-data and pseudomarginal subsampled.

Both samplers draw proposals and acceptance uniforms from the same main
stream in the same order; subsample indices come from a separate substream.
With a noiseless estimator the two therefore produce identical traces.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .chain import Trace
from .diagnostics import discard_burn_in, iact
from .rng import RngStream
from .subsample import bias_corrected_loglik, draw_subsample, estimate_logpost

MAX_NONFINITE_FRACTION = 0.01


class SamplerAbort(RuntimeError):
    pass


@dataclass
class PMConfig:
    iterations: int
    k: int = 100
    cv_order: int = 2
    proposal_scale: float = 1.0
    seed: int = 0
    burn_in: int | None = None

    def __post_init__(self):
        if self.burn_in is None:
            self.burn_in = self.iterations // 5
        if not self.iterations > self.burn_in >= 0:
            raise ValueError("need iterations > burn_in >= 0")
        if self.k < 2:
            raise ValueError("subsample size k must be at least 2")
        if self.cv_order not in (1, 2):
            raise ValueError("cv_order must be 1 or 2")
        if not self.proposal_scale > 0:
            raise ValueError("proposal_scale must be positive")


def default_proposal_covariance(hessian, scale=1.0):
    """``scale * (2.38^2 / d) * (-H)^{-1}``, or a scaled identity if ``-H`` is not PD."""
    hessian = np.atleast_2d(np.asarray(hessian, dtype=float))
    d = hessian.shape[0]
    factor = scale * 2.38 ** 2 / d
    neg = -0.5 * (hessian + hessian.T)
    try:
        chol = np.linalg.cholesky(neg)
    except np.linalg.LinAlgError:
        warnings.warn("negative Hessian not positive definite; using a scaled identity",
                      RuntimeWarning, stacklevel=2)
        return factor * np.eye(d)
    inv_chol = np.linalg.solve(chol, np.eye(d))
    cov = factor * inv_chol.T @ inv_chol
    return 0.5 * (cov + cov.T)


def _streams(seed):
    stream = seed if isinstance(seed, RngStream) else RngStream(int(seed))
    return stream.generator(), stream.substream(1).generator()


def _proposal_factor(cov):
    return np.linalg.cholesky(np.atleast_2d(np.asarray(cov, dtype=float)))


def run_exact_mh(model, data, config: PMConfig, proposal_cov, init) -> Trace:
    """Random-walk Metropolis on the full-data log posterior."""
    gen, _ = _streams(config.seed)
    chol = _proposal_factor(proposal_cov)
    theta = np.array(init, dtype=float)
    logp = model.log_posterior(theta, data)
    if not math.isfinite(logp):
        raise SamplerAbort("log posterior is not finite at the initial state")
    m = config.iterations
    states = np.empty((m + 1, theta.size))
    logps = np.empty(m + 1)
    accepted = np.zeros(m + 1, dtype=bool)
    states[0], logps[0], accepted[0] = theta, logp, True
    for t in range(1, m + 1):
        prop = theta + chol @ gen.standard_normal(theta.size)
        logp_prop = model.log_posterior(prop, data)
        if math.isfinite(logp_prop) and math.log(gen.random()) < logp_prop - logp:
            theta, logp = prop, logp_prop
            accepted[t] = True
        states[t], logps[t] = theta, logp
    return Trace(states, accepted, {"log_post": logps})


def pseudomarginal_chain(propose, estimate, init, iterations, seed=0) -> Trace:
    """Generic pseudomarginal Metropolis loop with estimate recycling.

    Parameters
    ----------
    propose : callable ``(theta, gen) -> theta'``
        Symmetric proposal drawing from the main stream.
    estimate : callable ``(theta, gen_sub) -> (log_estimate, sigma2_hat)``
        Noisy log-target estimate drawing from the estimator substream.
    init : array
        Starting state.
    iterations : int
    seed : int or RngStream

    Every proposal gets a fresh estimate. On acceptance the proposal and its
    estimate replace the current pair; on rejection both are kept, so the
    current estimate is recycled rather than recomputed. A proposal whose
    estimate is not finite is rejected; the run aborts once such proposals
    exceed 1% of the requested iterations.

    Returns
    -------
    Trace
        ``aux`` holds ``z_hat`` (retained log estimate), ``sigma2_hat`` (its
        variance estimate), ``sigma2_proposed`` (the variance estimate
        computed at each iteration's proposal), ``subsample_id`` (iteration
        that drew the retained estimate) and ``nonfinite`` (rejections for
        non-finite estimates).
    """
    gen, gen_sub = _streams(seed)
    theta = np.array(init, dtype=float)
    z, s2 = estimate(theta, gen_sub)
    if not math.isfinite(z):
        raise SamplerAbort("estimate is not finite at the initial state")
    m = iterations
    states = np.empty((m + 1,) + theta.shape)
    zs, s2s, s2_prop = np.empty(m + 1), np.empty(m + 1), np.empty(m + 1)
    sub_id = np.zeros(m + 1, dtype=np.int64)
    accepted = np.zeros(m + 1, dtype=bool)
    states[0], zs[0], s2s[0], accepted[0] = theta, z, s2, True
    s2_prop[0] = s2
    current_id, nonfinite, limit = 0, 0, MAX_NONFINITE_FRACTION * m
    for t in range(1, m + 1):
        prop = propose(theta, gen)
        z_prop, s2_new = estimate(prop, gen_sub)
        u = gen.random()
        s2_prop[t] = s2_new
        if not math.isfinite(z_prop):
            nonfinite += 1
            if nonfinite > limit:
                raise SamplerAbort(f"{nonfinite} non-finite estimates by iteration {t}")
        elif math.log(u) < z_prop - z:
            theta, z, s2, current_id = prop, z_prop, s2_new, t
            accepted[t] = True
        states[t], zs[t], s2s[t], sub_id[t] = theta, z, s2, current_id
    return Trace(states, accepted, {"z_hat": zs, "sigma2_hat": s2s, "sigma2_proposed": s2_prop,
                                    "subsample_id": sub_id, "nonfinite": nonfinite})


def run_pseudomarginal(model, data, cache, config: PMConfig, proposal_cov, init=None) -> Trace:
    """Pseudomarginal random-walk Metropolis with a bias-corrected subsample estimate.

    Each proposal is scored by ``value - sigma2_hat / 2`` from a fresh
    subsample of ``config.k`` indices; see :func:`pseudomarginal_chain` for
    the recycling rule and the trace contents.
    """
    if cache.order != config.cv_order:
        raise ValueError(f"cache has order {cache.order}, config asks for {config.cv_order}")
    chol = _proposal_factor(proposal_cov)
    n, k = cache.n, config.k

    def propose(theta, gen):
        return theta + chol @ gen.standard_normal(theta.size)

    def estimate(theta, gen_sub):
        est = estimate_logpost(model, data, cache, theta, draw_subsample(gen_sub, n, k))
        return bias_corrected_loglik(est), est.sigma2_hat

    init = cache.theta_star if init is None else init
    return pseudomarginal_chain(propose, estimate, init, config.iterations, config.seed)


def write_trace_csv(trace: Trace, path):
    """Columns: iteration, theta_1..theta_d, z_hat, sigma2_hat, accept."""
    states = np.atleast_2d(trace.states.T).T
    d = states.shape[1]
    z = trace.aux.get("z_hat", trace.aux.get("log_post"))
    s2 = trace.aux.get("sigma2_hat", np.zeros(len(trace)))
    acc = trace.accepted if trace.accepted is not None else np.ones(len(trace), dtype=bool)
    header = ",".join(["iteration"] + [f"theta_{j + 1}" for j in range(d)]
                      + ["z_hat", "sigma2_hat", "accept"])
    with open(path, "w", newline="\n") as fh:
        fh.write(header + "\n")
        for t in range(len(trace)):
            row = [str(t)] + [repr(float(v)) for v in states[t]]
            row += [repr(float(z[t])) if z is not None else "nan", repr(float(s2[t])),
                    str(int(acc[t]))]
            fh.write(",".join(row) + "\n")


def summarize_trace(trace: Trace, burn_in) -> dict:
    """Acceptance rate, sigma2_hat statistics and per-parameter IACT after burn-in."""
    states = discard_burn_in(np.atleast_2d(trace.states.T).T, burn_in)
    out = {
        "iterations": len(trace) - 1,
        "burn_in": burn_in,
        "acceptance_rate": float(np.mean(trace.accepted[1:])),
        "iact": [iact(states[:, j]) for j in range(states.shape[1])],
    }
    if "sigma2_hat" in trace.aux:
        s2 = discard_burn_in(trace.aux["sigma2_hat"], burn_in)
        out["sigma2_hat"] = {"mean": float(s2.mean()), "median": float(np.median(s2)),
                             "max": float(s2.max())}
    return out


def write_summary_json(trace: Trace, burn_in, path, extra=None):
    summary = summarize_trace(trace, burn_in)
    summary.update(extra or {})
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return summary
