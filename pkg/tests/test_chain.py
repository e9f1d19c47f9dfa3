import math

import numpy as np
import pytest
from scipy import stats

from perturbmc import bounds as bd
from perturbmc.chain import (FiniteKernel, IdentityKernel, InnovationKernel, NonFiniteStateError,
                             TransitionKernel, UnsupportedKernelError, exact_n_step,
                             simulate_chain, simulate_coupled, simulate_coupled_ensemble,
                             simulate_ensemble, synchronous_coupling)
from perturbmc.rng import RngStream
from perturbmc.transport import DiscreteDistribution, empirical_wasserstein_1d, tv_discrete
from perturbmc.worked_examples import AR1Spec, ThreePointSpec, build_ar1, build_three_point


def three_point(q=0.5):
    return build_three_point(ThreePointSpec(x=0.0, xt=-0.2, y=1.0, q=q))


class Exploding(InnovationKernel):
    innovation_family = "exploding"

    def draw_innovation(self, gen, size=None):
        return gen.random(size)

    def update(self, x, w):
        return np.inf if x > 10 else x + 4


class Opaque(TransitionKernel):
    def step(self, x, gen):
        return x


def test_identity_kernel_trace_constant():
    tr = simulate_chain(IdentityKernel(), np.array([1.5, -2.0]), 5, RngStream(0))
    assert len(tr) == 6
    assert np.all(tr.states == np.array([1.5, -2.0]))


def test_trace_length_and_negative_steps():
    Q, _, _ = three_point()
    assert len(simulate_chain(Q, 1.0, 0, 0)) == 1
    with pytest.raises(ValueError):
        simulate_chain(Q, 1.0, -1, 0)
    with pytest.raises(ValueError):
        simulate_coupled(synchronous_coupling(Q, Q), (1.0, 1.0), -1, 0)


def test_nonfinite_state_reports_step():
    with pytest.raises(NonFiniteStateError) as err:
        simulate_chain(Exploding(), 0.0, 10, 0)
    assert err.value.step == 4


def test_reproducible_traces():
    Q, K, _ = three_point(0.3)
    a = simulate_chain(K, 1.0, 500, RngStream(11, 2))
    b = simulate_chain(K, 1.0, 500, RngStream(11, 2))
    assert np.array_equal(a.states, b.states)


def test_three_point_occupancy_half_each():
    Q, _, _ = three_point(0.5)
    tr = simulate_chain(Q, 1.0, 100_000, RngStream(1))
    share = np.mean(tr.states[1:] == 1.0)
    assert share == pytest.approx(0.5, abs=0.01)


def test_two_state_transition_counts_chi_square():
    P = np.array([[0.7, 0.3], [0.4, 0.6]])
    ker = FiniteKernel([0.0, 1.0], P)
    tr = simulate_chain(ker, 0.0, 10_000, RngStream(2))
    s = tr.states.astype(int)
    for i in (0, 1):
        nxt = s[1:][s[:-1] == i]
        counts = np.bincount(nxt, minlength=2)
        assert stats.chisquare(counts, P[i] * counts.sum()).pvalue > 0.01


def test_finite_kernel_validation():
    with pytest.raises(ValueError):
        FiniteKernel(np.arange(65.0), np.full((65, 65), 1 / 65))
    with pytest.raises(ValueError):
        FiniteKernel([0.0, 1.0], [[0.5, 0.6], [0.5, 0.5]])
    with pytest.raises(ValueError):
        FiniteKernel([0.0, 0.0], np.eye(2))
    ker = FiniteKernel([0.0, 1.0], np.eye(2))
    with pytest.raises(ValueError):
        ker.exact_row(0.5)


def test_self_coupling_identical_paths():
    Q, _, _ = three_point(0.3)
    pair = simulate_coupled(synchronous_coupling(Q, Q), (1.0, 1.0), 200, RngStream(3))
    assert np.array_equal(pair.first.states, pair.second.states)


def test_ar1_coupled_gap_contracts_exactly():
    Q, _, _, _ = build_ar1(AR1Spec(0.3, 0.2))
    pair = simulate_coupled(synchronous_coupling(Q, Q), (4.0, -1.0), 60, RngStream(4))
    gap = np.abs(pair.first.states - pair.second.states)
    np.testing.assert_allclose(gap, 5.0 * 0.7 ** np.arange(61), rtol=1e-12, atol=1e-15)


def test_ar1_pair_one_step_gap_is_deterministic():
    alpha, at = 0.5, 0.45
    _, _, coupling, _ = build_ar1(AR1Spec(alpha, at))
    gen = RngStream(5).generator()
    for x in (-3.0, 0.0, 2.5, 10.0):
        a, b = coupling.step_pair(x, x, gen)
        assert abs(a - b) == pytest.approx(abs(alpha - at) * abs(x), abs=1e-12)


def test_ar1_pair_mean_gap_below_weighted_bound():
    alpha, at, reps, n = 0.5, 0.45, 10_000, 50
    _, _, coupling, consts = build_ar1(AR1Spec(alpha, at))
    out = simulate_coupled_ensemble(coupling, np.zeros(reps), np.zeros(reps), n, RngStream(6))
    xs, ys = out[n]
    gap = np.abs(xs - ys)
    kappa = bd.compute_kappa(consts.L, consts.beta, 1.0)
    bound = bd.theorem2_marginal_bound(alpha, consts.epsilon_weighted, kappa, 0.0, n)
    assert gap.mean() <= bound + 3 * gap.std(ddof=1) / math.sqrt(reps)


def test_coupling_marginals_match_direct_draws():
    Q, K, coupling, _ = build_ar1(AR1Spec(0.5, 0.4))
    reps, x = 100_000, 1.5
    out = simulate_coupled_ensemble(coupling, np.full(reps, x), np.full(reps, x), 1, RngStream(7))
    xs, ys = out[1]
    direct_q = simulate_ensemble(Q, np.full(reps, x), 1, RngStream(8))[1]
    direct_k = simulate_ensemble(K, np.full(reps, x), 1, RngStream(9))[1]
    assert empirical_wasserstein_1d(xs, direct_q) <= 0.02
    assert empirical_wasserstein_1d(ys, direct_k) <= 0.02


def test_coupling_refuses_incompatible_kernels():
    Q, _, _ = three_point()
    ar, _, _, _ = build_ar1(AR1Spec(0.5, 0.4))
    with pytest.raises(UnsupportedKernelError):
        synchronous_coupling(Q, Opaque())
    with pytest.raises(UnsupportedKernelError):
        synchronous_coupling(Q, ar)


def _coupled_joint(coupling, x, y):
    """Exact joint law of one coupled step of two finite kernels driven by one uniform."""
    q, k = coupling.q_side, coupling.k_side
    cuts = np.union1d(q._cum[q.index_of(x)], k._cum[k.index_of(y)])
    cuts = np.union1d([0.0], np.clip(cuts, 0, 1))
    mids, widths = 0.5 * (cuts[1:] + cuts[:-1]), np.diff(cuts)
    a, b = q.update(x, mids), k.update(y, mids)
    return a, b, widths


@pytest.mark.parametrize("q", [0.3, 0.5, 0.7])
def test_finite_coupling_marginals_exact(q):
    Q, K, _ = three_point(q)
    coupling = synchronous_coupling(Q, K)
    for x in Q.states:
        a, b, w = _coupled_joint(coupling, x, x)
        ma = DiscreteDistribution.from_masses(a, w, drop_zero=True)
        mb = DiscreteDistribution.from_masses(b, w, drop_zero=True)
        assert tv_discrete(ma, Q.exact_row(x)) <= 1e-12
        assert tv_discrete(mb, K.exact_row(x)) <= 1e-12


def test_exact_n_step_examples():
    Q, K, _ = three_point(0.3)
    init = DiscreteDistribution.dirac(1.0)
    assert exact_n_step(Q, init, 0) is init
    law = exact_n_step(Q, DiscreteDistribution.dirac(-0.2), 200)
    assert law.mass_at(0.0) == pytest.approx(0.5, abs=1e-12)
    assert law.mass_at(1.0) == pytest.approx(0.5, abs=1e-12)
    assert abs(law.weights.sum() - 1) <= 1e-12
    assert exact_n_step(Q, DiscreteDistribution.dirac(-0.2), 1).mass_at(-0.2) == 0.0
    flip = FiniteKernel([0.0, 1.0], [[0.0, 1.0], [1.0, 0.0]])
    one = exact_n_step(flip, DiscreteDistribution.dirac(0.0), 1)
    assert tv_discrete(one, flip.exact_row(0.0)) == 0.0
    ar, _, _, _ = build_ar1(AR1Spec(0.5, 0.4))
    with pytest.raises(UnsupportedKernelError):
        exact_n_step(ar, init, 3)
    with pytest.raises(ValueError):
        exact_n_step(Q, init, -1)


@pytest.mark.parametrize("n", [1, 3, 10])
def test_ensemble_matches_exact_n_step(n):
    _, K, _ = three_point(0.3)
    reps = 100_000
    xs = simulate_ensemble(K, np.full(reps, 1.0), n, RngStream(10 + n))[n]
    empirical = DiscreteDistribution.from_samples(xs)
    assert tv_discrete(empirical, exact_n_step(K, DiscreteDistribution.dirac(1.0), n)) <= 0.01


def test_ensemble_records_requested_steps():
    Q, _, _ = three_point(0.3)
    out = simulate_ensemble(Q, np.full(10, 1.0), 5, RngStream(1), record=[0, 2, 5])
    assert sorted(out) == [0, 2, 5]
    assert np.all(out[0] == 1.0)
