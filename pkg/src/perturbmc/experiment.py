"""Experiment runners shared by the command line and the acceptance tests.

Each runner takes plain keyword settings, does the work and returns an
:class:`Artifacts` bundle: a JSON-ready report plus named numeric tables that
the caller may persist as CSV.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import bounds as bd
from .chain import exact_n_step, simulate_coupled, simulate_ensemble, synchronous_coupling
from .diagnostics import (PERCENT_ERROR_FORMULA, cv_percent_error, discard_burn_in, kde_l1,
                          relative_efficiency, select_hpd_thetas, stickiness_report)
from .rng import RngStream
from .sampler import PMConfig, default_proposal_covariance, run_exact_mh, run_pseudomarginal, \
    summarize_trace
from .subsample import build_cv_cache
from .transport import (DiscreteDistribution, empirical_wasserstein_1d_se, trivial_metric,
                        tv_discrete, tv_witness, wasserstein_1d, wasserstein_bruteforce)
from .vonmises import VonMisesModel, find_mode, simulate_dataset
from .worked_examples import (AR1Spec, NoisyIMHSpec, ThreePointSpec, acceptance_gap,
                              ar1_stationary_std_normal, build_ar1, build_noisy_imh,
                              build_three_point, discrete_alpha, discretize_imh,
                              gaussian_w1_centered, noisy_imh_certificates, noisy_imh_tv_gap)

# Regression coefficients for the simulated von Mises data: an intercept of
# 0.5 and nine slopes of alternating sign and magnitude 10.
DEFAULT_BETA_TRUE = (0.5, 10.0, -10.0, 10.0, -10.0, 10.0, -10.0, 10.0, -10.0, 10.0)
DEFAULT_KAPPA_TRUE = 2.0
# With large slopes 2 arctan saturates and the posterior has distant local
# modes; unit-length Newton steps from the origin reach the global one.
MODE_MAX_STEP = 1.0


@dataclass
class Table:
    columns: list
    rows: np.ndarray


@dataclass
class Artifacts:
    report: dict
    tables: dict = field(default_factory=dict)
    dataset_checksum: str | None = None


def _clean(obj):
    """Convert numpy scalars and arrays inside a report to plain Python."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _coupled_table(coupling, init, n, stream):
    pair = simulate_coupled(coupling, init, n, stream)
    rows = np.column_stack([np.arange(n + 1), pair.first.states, pair.second.states])
    return Table(["iteration", "exact", "perturbed"], rows)


# --------------------------------------------------------------------------
# marginal distance curves


def marginal_w1_curve(Q, K, init_q, init_k, steps, replicates, stream):
    """Empirical W1 between the two chains' marginals at each requested step.

    Both ensembles start from point masses and are run independently.

    Returns
    -------
    dict step -> (estimate, bootstrap standard error)
    """
    out_q = simulate_ensemble(Q, np.full(replicates, init_q, dtype=float), max(steps),
                              stream.substream(0), record=steps)
    out_k = simulate_ensemble(K, np.full(replicates, init_k, dtype=float), max(steps),
                              stream.substream(1), record=steps)
    return {n: empirical_wasserstein_1d_se(out_q[n], out_k[n], rng=stream.substream(2 + n).generator())
            for n in steps}


def marginal_tv_curve(Q, K, init, steps, replicates, stream, bins=16):
    """Held-out witness TV estimate and standard error at each requested step."""
    out_q = simulate_ensemble(Q, np.full(replicates, init, dtype=float), max(steps),
                              stream.substream(0), record=steps)
    out_k = simulate_ensemble(K, np.full(replicates, init, dtype=float), max(steps),
                              stream.substream(1), record=steps)
    return {n: tv_witness(out_q[n], out_k[n], bins=bins, rng=stream.substream(2 + n).generator())
            for n in steps}


# --------------------------------------------------------------------------
# worked examples


def run_example1(q, x, xt, y, steps=(1, 5, 20, 100), replicates=100_000, seed=0, init=None,
                 trace_steps=200) -> Artifacts:
    """Three-point walk: exact and simulated marginal distances against the bounds."""
    spec = ThreePointSpec(x=x, xt=xt, y=y, q=q)
    Q, K, consts = build_three_point(spec)
    init = y if init is None else init
    stream = RngStream(seed)
    start = DiscreteDistribution.dirac(init)
    empirical = marginal_w1_curve(Q, K, init, init, list(steps), replicates, stream)
    marginal = {}
    for n in steps:
        exact = wasserstein_1d(exact_n_step(Q, start, n), exact_n_step(K, start, n))
        est, se = empirical[n]
        marginal[n] = {
            "exact_w1": exact,
            "empirical_w1": est,
            "empirical_se": se,
            "bound": bd.theorem1_marginal_bound(consts.alpha, consts.epsilon, 0.0, n),
        }
    report = {
        "experiment": "example1",
        "settings": {"q": q, "x": x, "xt": xt, "y": y, "init": init, "replicates": replicates},
        "alpha": consts.alpha,
        "epsilon": consts.epsilon,
        "contraction_factor": consts.contraction_factor,
        "stationary_w1_exact": consts.stationary_w1,
        "stationary_bound": bd.theorem1_stationary_bound(consts.alpha, consts.epsilon),
        "marginal": marginal,
    }
    table = _coupled_table(synchronous_coupling(Q, K), (init, init), trace_steps,
                           stream.substream(99))
    return Artifacts(_clean(report), {"trace": table})


def ar1_exact_marginal_w1(alpha, alphatilde, n):
    """W1 between the two Gaussian marginals after ``n`` steps from 0 (unit innovations)."""
    def sd(a):
        r = (1 - a) ** 2
        return math.sqrt((1 - r ** n) / (1 - r))
    return gaussian_w1_centered(sd(alpha), sd(alphatilde))


def run_ar1(alpha=0.5, alphatilde=0.4, steps=(1, 5, 20, 100), replicates=10_000, seed=0,
            trace_steps=200) -> Artifacts:
    """AR(1) pair: weighted-epsilon bound against exact Gaussian distances."""
    Q, K, coupling, consts = build_ar1(AR1Spec(alpha, alphatilde))
    eps, beta, L = consts.epsilon_weighted, consts.beta, consts.L
    kappa = bd.compute_kappa(L, beta, 1.0)
    stream = RngStream(seed)
    empirical = marginal_w1_curve(Q, K, 0.0, 0.0, list(steps), replicates, stream)
    marginal = {}
    for n in steps:
        est, se = empirical[n]
        marginal[n] = {
            "exact_w1": ar1_exact_marginal_w1(alpha, alphatilde, n),
            "empirical_w1": est,
            "empirical_se": se,
            "bound": bd.theorem2_marginal_bound(alpha, eps, kappa, 0.0, n),
        }
    report = {
        "experiment": "ar1",
        "settings": {"alpha": alpha, "alphatilde": alphatilde, "replicates": replicates},
        "epsilon_weighted": eps,
        "beta": beta,
        "L": L,
        "kappa": kappa,
        "stationary_w1_exact": gaussian_w1_centered(ar1_stationary_std_normal(alpha),
                                                    ar1_stationary_std_normal(alphatilde)),
        "stationary_bound": bd.theorem2_stationary_bound(alpha, eps, beta, L),
        "marginal": marginal,
    }
    table = _coupled_table(coupling, (0.0, 0.0), trace_steps, stream.substream(99))
    return Artifacts(_clean(report), {"trace": table})


NOISY_IMH_PROBES = tuple(np.round(np.linspace(0.0125, 0.9875, 40), 6))


def noisy_imh_measured_epsilon(spec, cert, probes=NOISY_IMH_PROBES):
    """Largest exact one-step TV over ``V`` on the probe grid."""
    ratios = []
    for x in probes:
        tv = noisy_imh_tv_gap(spec, x).one_step_tv
        ratios.append(tv / float(cert.lyapunov.V(np.asarray(x))))
    return float(max(ratios)), np.asarray(ratios)


def run_noisy_imh(sigma2=0.01, region=(0.8, 1.0), steps=(1, 5, 20, 100), replicates=10_000,
                  seed=0, init=0.5, probes=NOISY_IMH_PROBES, trace_steps=200) -> Artifacts:
    """Independent Metropolis with a noisy region: envelopes, measured gaps and TV bounds."""
    spec = NoisyIMHSpec(noisy_region=tuple(region), sigma2=sigma2)
    Q, K = build_noisy_imh(spec)
    cert = noisy_imh_certificates(spec)
    lyap = cert.lyapunov
    eps_measured, ratios = noisy_imh_measured_epsilon(spec, cert, probes)
    v0 = float(lyap.V(np.asarray(init)))
    kappa = bd.compute_kappa(lyap.L, lyap.beta, v0)
    gaps = [noisy_imh_tv_gap(spec, x) for x in probes]
    grid = np.linspace(0.0125, 0.9875, 10)
    acc = [acceptance_gap(spec, a, b) for a in grid for b in grid]
    stream = RngStream(seed)
    empirical = marginal_tv_curve(Q, K, init, list(steps), replicates, stream)
    marginal = {}
    for n in steps:
        est, se = empirical[n]
        marginal[n] = {
            "empirical_tv": est,
            "empirical_se": se,
            "bound_measured_epsilon": bd.theorem2_marginal_bound(spec.alpha, eps_measured,
                                                                 kappa, 0.0, n),
            "bound_envelope": bd.theorem2_marginal_bound(spec.alpha, cert.epsilon_envelope,
                                                         kappa, 0.0, n),
        }
    mass = spec.noisy_mass
    inherited = bd.inherited_tv_contraction(spec.alpha, 2 * sigma2 * math.exp(sigma2))
    report = {
        "experiment": "noisy-imh",
        "settings": {"sigma2": sigma2, "region": list(region), "init": init,
                     "replicates": replicates},
        "alpha": spec.alpha,
        "alpha_discretized": discrete_alpha(discretize_imh(spec, 64)),
        "noisy_mass": mass,
        "R": cert.R,
        "lyapunov": {"beta": lyap.beta, "L": lyap.L},
        "epsilon_envelope": cert.epsilon_envelope,
        "epsilon_measured": eps_measured,
        "kappa": kappa,
        "weighted_bound": cert.final_bound,
        "unweighted_bound": cert.unweighted_bound,
        "weighted_over_unweighted": cert.final_bound / cert.unweighted_bound,
        "predicted_ratio": mass * (1 + 1 / spec.alpha),
        "inherited_tv_contraction": inherited,
        "tv_gap_probes": [
            {"x": float(x), "gap_integral": g.value, "envelope": g.envelope,
             "one_step_tv": g.one_step_tv, "within_envelope": g.value <= g.envelope}
            for x, g in zip(probes, gaps)
        ],
        "pointwise_envelope_violations": int(sum(a.exceeds_envelope for a in acc)),
        "pointwise_pairs_checked": len(acc),
        "marginal": marginal,
    }
    table = _coupled_table(synchronous_coupling(Q, K), (init, init), trace_steps,
                           stream.substream(99))
    return Artifacts(_clean(report), {"trace": table})


def run_bounds(theorem, alpha, epsilon, w0=0.0, steps=(1, 5, 20, 100), beta=None, L=None,
               integral_V_p0=1.0) -> Artifacts:
    """Evaluate a closed-form bound at several horizons."""
    if theorem == 1:
        reports = [bd.theorem1_report(alpha, epsilon, w0, n) for n in steps]
    else:
        if beta is None or L is None:
            raise ValueError("the weighted bound needs beta and L")
        reports = [bd.theorem2_report(alpha, epsilon, beta, L, integral_V_p0, w0, n)
                   for n in steps]
    report = {
        "experiment": "bounds",
        "theorem": theorem,
        "stationary_bound": reports[0].stationary_bound,
        "marginal": {r.n: r.marginal_bound for r in reports},
        "inputs": reports[0].inputs,
        "inherited_tv_contraction": (bd.inherited_tv_contraction(alpha, epsilon)
                                     if theorem == 1 and epsilon >= 0 else None),
    }
    return Artifacts(_clean(report))


def random_instance(gen, max_support=6):
    m = int(gen.integers(1, max_support + 1))
    support = np.unique(np.round(gen.normal(size=m), 6))
    weights = gen.dirichlet(np.ones(support.size))
    return DiscreteDistribution(support, weights / weights.sum())


def run_metrics_selftest(instances=100, seed=0, tolerance=1e-10) -> Artifacts:
    """Compare the quantile W1 and the discrete TV against the transport LP."""
    gen = RngStream(seed).generator()
    w_err, tv_err = [], []
    for _ in range(instances):
        mu, nu = random_instance(gen), random_instance(gen)
        w_err.append(abs(wasserstein_1d(mu, nu) - wasserstein_bruteforce(mu, nu)))
        tv_err.append(abs(tv_discrete(mu, nu) - wasserstein_bruteforce(mu, nu, trivial_metric)))
    report = {
        "experiment": "metrics-selftest",
        "instances": instances,
        "max_abs_error_w1": max(w_err),
        "max_abs_error_tv": max(tv_err),
        "tolerance": tolerance,
        "passed": max(w_err) <= tolerance and max(tv_err) <= tolerance,
    }
    return Artifacts(_clean(report))


# --------------------------------------------------------------------------
# von Mises subsampling experiment


@dataclass
class VonMisesSetup:
    model: VonMisesModel
    data: object
    mode: object
    proposal_cov: np.ndarray


def vonmises_setup(n=10_000, d_z=10, beta_true=DEFAULT_BETA_TRUE, kappa_true=DEFAULT_KAPPA_TRUE,
                   data_seed=2024, proposal_scale=1.0) -> VonMisesSetup:
    data = simulate_dataset(n, d_z, np.asarray(beta_true, dtype=float), kappa_true,
                            RngStream(data_seed))
    model = VonMisesModel(d_z)
    mode = find_mode(model, data, max_step=MODE_MAX_STEP)
    return VonMisesSetup(model, data, mode, default_proposal_covariance(mode.hessian,
                                                                        proposal_scale))


def run_vonmises(n=10_000, d_z=10, beta_true=DEFAULT_BETA_TRUE, kappa_true=DEFAULT_KAPPA_TRUE,
                 data_seed=2024, k=100, cv_order=2, iterations=50_000, burn_in=None,
                 proposal_scale=1.0, seed=7, full_baseline=True, setup=None,
                 full_trace=None) -> Artifacts:
    """Simulate data, find the mode, run the subsampled chain and compare to full data.

    ``setup`` and ``full_trace`` let callers reuse the data, mode and
    full-data baseline across several subsampled runs.
    """
    setup = setup or vonmises_setup(n, d_z, beta_true, kappa_true, data_seed, proposal_scale)
    model, data, mode = setup.model, setup.data, setup.mode
    config = PMConfig(iterations=iterations, k=k, cv_order=cv_order,
                      proposal_scale=proposal_scale, seed=seed, burn_in=burn_in)
    cache = build_cv_cache(model, data, mode.theta, cv_order)
    t0 = time.perf_counter()
    sub = run_pseudomarginal(model, data, cache, config, setup.proposal_cov)
    wall_sub = time.perf_counter() - t0
    b = config.burn_in
    sub_states = discard_burn_in(sub.states, b)
    s2 = discard_burn_in(sub.aux["sigma2_hat"], b)
    s2_prop = discard_burn_in(sub.aux["sigma2_proposed"], b)
    report = {
        "experiment": "vonmises",
        "settings": {"n": n, "d_z": d_z, "beta_true": list(beta_true), "kappa_true": kappa_true,
                     "data_seed": data_seed, "k": k, "cv_order": cv_order,
                     "iterations": iterations, "burn_in": b, "proposal_scale": proposal_scale,
                     "seed": seed},
        "mode": {"theta_star": mode.theta, "newton_iterations": mode.iterations,
                 "grad_norm": mode.grad_norm},
        "subsampled": summarize_trace(sub, b),
        "sigma2_hat_retained": {"mean": s2.mean(), "median": np.median(s2), "max": s2.max()},
        "sigma2_hat_proposed": {"mean": s2_prop.mean(), "median": np.median(s2_prop),
                                "max": s2_prop.max()},
        "stickiness": stickiness_report(sub.accepted).to_dict(),
        "wall_time_seconds": {"subsampled": wall_sub},
        "percent_error_formula": PERCENT_ERROR_FORMULA,
    }
    report["stickiness"].pop("streak_histogram")
    tables = {"trace": _trace_table(sub)}
    if full_baseline:
        if full_trace is None:
            t0 = time.perf_counter()
            full_trace = run_exact_mh(model, data, PMConfig(iterations=iterations, seed=seed + 1,
                                                            burn_in=b), setup.proposal_cov,
                                      mode.theta)
            report["wall_time_seconds"]["full"] = time.perf_counter() - t0
        full_states = discard_burn_in(full_trace.states, b)
        eff = relative_efficiency(full_states, sub_states, n, k, model.dim)
        report["full"] = summarize_trace(full_trace, b)
        report["efficiency"] = eff.to_dict()
        report["kde_l1"] = [kde_l1(full_states[:, j], sub_states[:, j])
                            for j in range(model.dim)]
        log_post = discard_burn_in(full_trace.aux["log_post"], b)
        picks = select_hpd_thetas(full_states, log_post, mode.theta)
        report["hpd_thetas"] = {}
        for level, theta in zip(("25", "50", "100"), picks):
            err = {o: cv_percent_error(model, data, mode.theta, theta, o) for o in (1, 2)}
            report["hpd_thetas"][level] = {
                "theta": theta,
                "median_abs_percent_error": {f"order{o}": float(np.nanmedian(np.abs(e)))
                                             for o, e in err.items()},
            }
        tables["full_trace"] = _trace_table(full_trace)
    return Artifacts(_clean(report), tables, data.checksum())


def _trace_table(trace):
    states = trace.states
    d = states.shape[1]
    z = trace.aux.get("z_hat", trace.aux.get("log_post"))
    s2 = trace.aux.get("sigma2_hat", np.zeros(len(trace)))
    rows = np.column_stack([np.arange(len(trace)), states, z, s2, trace.accepted.astype(int)])
    return Table(["iteration"] + [f"theta_{j + 1}" for j in range(d)]
                 + ["z_hat", "sigma2_hat", "accept"], rows)


def to_jsonable(obj):
    if hasattr(obj, "__dataclass_fields__"):
        return _clean(asdict(obj))
    return _clean(obj)
