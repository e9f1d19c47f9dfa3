"""Markov kernels, chain simulation and coupled chains.

Kernels come in two flavours. Every kernel can ``step`` a state with a
generator. *Innovation-driven* kernels additionally split a step into drawing
an innovation and applying a deterministic ``update``; sharing the innovation
between two such kernels gives the synchronous coupling. Finite-state kernels
also expose their exact transition rows.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import as_generator
from .transport import DiscreteDistribution

MAX_FINITE_STATES = 64


class NonFiniteStateError(RuntimeError):
    def __init__(self, step, state):
        super().__init__(f"kernel produced a non-finite state at step {step}: {state!r}")
        self.step = step
        self.state = state


class UnsupportedKernelError(TypeError):
    pass


class TransitionKernel:
    """Base class. Subclasses implement :meth:`step`; ensembles use :meth:`step_batch`."""

    def step(self, x, gen: np.random.Generator):
        raise NotImplementedError

    def step_batch(self, xs, gen: np.random.Generator):
        return np.array([self.step(x, gen) for x in xs])

    def exact_row(self, x) -> DiscreteDistribution:
        raise UnsupportedKernelError(f"{type(self).__name__} has no exact transition rows")

    @property
    def has_exact_rows(self) -> bool:
        return False


class InnovationKernel(TransitionKernel):
    """Kernel of the form ``x' = update(x, w)`` with ``w`` drawn independently of ``x``.

    Two kernels can be coupled synchronously when they declare the same
    ``innovation_family``; the family string names the shared innovation law.
    """

    innovation_family: str = ""

    def draw_innovation(self, gen, size=None):
        raise NotImplementedError

    def update(self, x, w):
        raise NotImplementedError

    def step(self, x, gen):
        return self.update(x, self.draw_innovation(gen))

    def step_batch(self, xs, gen):
        return self.update(np.asarray(xs, dtype=float), self.draw_innovation(gen, size=len(xs)))


class IdentityKernel(InnovationKernel):
    innovation_family = "none"

    def draw_innovation(self, gen, size=None):
        return None

    def update(self, x, w):
        return x


class FiniteKernel(InnovationKernel):
    """Kernel on finitely many real states given by a row-stochastic matrix.

    Steps are taken by inverse-CDF lookup of a single uniform, so two finite
    kernels on the same state list couple synchronously through that uniform.
    """

    innovation_family = "uniform"

    def __init__(self, states, matrix):
        states = np.asarray(states, dtype=float)
        matrix = np.asarray(matrix, dtype=float)
        m = states.shape[0]
        if m > MAX_FINITE_STATES:
            raise ValueError(f"finite kernels are limited to {MAX_FINITE_STATES} states")
        if matrix.shape != (m, m):
            raise ValueError("transition matrix must be square and match the states")
        if np.any(matrix < 0) or np.max(np.abs(matrix.sum(axis=1) - 1)) > 1e-12:
            raise ValueError("transition matrix must be row-stochastic")
        if np.unique(states).size != m:
            raise ValueError("states must be distinct")
        self.states = states
        self.matrix = matrix
        self._cum = np.cumsum(matrix, axis=1)
        self._cum[:, -1] = 1.0

    @property
    def has_exact_rows(self):
        return True

    def index_of(self, x):
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(np.sort(self.states), x)
        order = np.argsort(self.states)
        idx = order[np.clip(idx, 0, self.states.size - 1)]
        if not np.all(self.states[idx] == x):
            raise ValueError(f"state {x!r} is not in the kernel's state space")
        return idx

    def exact_row(self, x):
        row = self.matrix[self.index_of(x)]
        keep = row > 0
        return DiscreteDistribution(self.states[keep], row[keep] / row[keep].sum())

    def expect(self, f, x):
        values = np.array([f(s) for s in self.states], dtype=float)
        return float(self.matrix[self.index_of(x)] @ values)

    def draw_innovation(self, gen, size=None):
        return gen.random(size)

    def update(self, x, w):
        i = self.index_of(x)
        j = (self._cum[i] <= np.asarray(w)[..., None]).sum(axis=-1)
        return self.states[np.minimum(j, self.states.size - 1)]


@dataclass
class Trace:
    """States visited by a chain plus per-step annotations.

    ``states[0]`` is the initial state, so ``len(trace) == n + 1``.
    ``accepted`` and the entries of ``aux`` are aligned with ``states``; the
    initial row carries no decision and is recorded as accepted.
    """

    states: np.ndarray
    accepted: np.ndarray | None = None
    aux: dict = field(default_factory=dict)

    def __len__(self):
        return self.states.shape[0]

    def __getitem__(self, t):
        return self.states[t]


@dataclass
class PairedTrace:
    first: Trace
    second: Trace


class CouplingKernel:
    """Joint kernel on pairs; ``step_pair`` must have the marginals ``(q_side, k_side)``."""

    def __init__(self, q_side, k_side, step_pair, step_pair_batch=None):
        self.q_side = q_side
        self.k_side = k_side
        self._step_pair = step_pair
        self._step_pair_batch = step_pair_batch

    def step_pair(self, x, y, gen):
        return self._step_pair(x, y, gen)

    def step_pair_batch(self, xs, ys, gen):
        if self._step_pair_batch is not None:
            return self._step_pair_batch(xs, ys, gen)
        out = [self._step_pair(x, y, gen) for x, y in zip(xs, ys)]
        return np.array([o[0] for o in out]), np.array([o[1] for o in out])


def synchronous_coupling(noise_driven_q, noise_driven_k) -> CouplingKernel:
    """Couple two innovation-driven kernels by feeding both the same innovation."""
    for kern in (noise_driven_q, noise_driven_k):
        if not isinstance(kern, InnovationKernel):
            raise UnsupportedKernelError(
                f"{type(kern).__name__} is not innovation-driven; cannot couple synchronously"
            )
    if noise_driven_q.innovation_family != noise_driven_k.innovation_family:
        raise UnsupportedKernelError(
            "kernels draw different innovations: "
            f"{noise_driven_q.innovation_family!r} vs {noise_driven_k.innovation_family!r}"
        )

    def step_pair(x, y, gen):
        w = noise_driven_q.draw_innovation(gen)
        return noise_driven_q.update(x, w), noise_driven_k.update(y, w)

    def step_pair_batch(xs, ys, gen):
        w = noise_driven_q.draw_innovation(gen, size=len(xs))
        return (noise_driven_q.update(np.asarray(xs, dtype=float), w),
                noise_driven_k.update(np.asarray(ys, dtype=float), w))

    return CouplingKernel(noise_driven_q, noise_driven_k, step_pair, step_pair_batch)


def _check_finite(state, t):
    if not np.all(np.isfinite(state)):
        raise NonFiniteStateError(t, state)


def simulate_chain(kernel: TransitionKernel, init, n: int, rng) -> Trace:
    """Run ``n`` steps of ``kernel`` from ``init``; returns ``n + 1`` states."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    gen = as_generator(rng)
    x = np.asarray(init, dtype=float)
    _check_finite(x, 0)
    states = [x]
    for t in range(1, n + 1):
        x = np.asarray(kernel.step(x, gen), dtype=float)
        _check_finite(x, t)
        states.append(x)
    return Trace(np.array(states))


def simulate_coupled(coupling: CouplingKernel, init, n: int, rng) -> PairedTrace:
    if n < 0:
        raise ValueError("n must be nonnegative")
    gen = as_generator(rng)
    x, y = (np.asarray(s, dtype=float) for s in init)
    _check_finite(x, 0)
    _check_finite(y, 0)
    xs, ys = [x], [y]
    for t in range(1, n + 1):
        x, y = coupling.step_pair(x, y, gen)
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        _check_finite(x, t)
        _check_finite(y, t)
        xs.append(x)
        ys.append(y)
    return PairedTrace(Trace(np.array(xs)), Trace(np.array(ys)))


def simulate_ensemble(kernel: TransitionKernel, inits, n: int, rng, record=None):
    """Step many independent replicates at once.

    Parameters
    ----------
    inits : array, shape (replicates,)
        Initial states, one per replicate.
    record : iterable of int, optional
        Steps at which to keep the ensemble; defaults to ``[n]``.

    Returns
    -------
    dict mapping step -> array of replicate states
    """
    gen = as_generator(rng)
    keep = sorted(set(record if record is not None else [n]))
    xs = np.array(inits, dtype=float)
    out = {0: xs.copy()} if 0 in keep else {}
    for t in range(1, n + 1):
        xs = np.asarray(kernel.step_batch(xs, gen), dtype=float)
        if not np.all(np.isfinite(xs)):
            raise NonFiniteStateError(t, xs[~np.isfinite(xs)][:3])
        if t in keep:
            out[t] = xs.copy()
    return out


def simulate_coupled_ensemble(coupling: CouplingKernel, inits_x, inits_y, n: int, rng,
                              record=None):
    """Replicate version of :func:`simulate_coupled`; returns step -> (xs, ys)."""
    gen = as_generator(rng)
    keep = sorted(set(record if record is not None else [n]))
    xs = np.array(inits_x, dtype=float)
    ys = np.array(inits_y, dtype=float)
    out = {0: (xs.copy(), ys.copy())} if 0 in keep else {}
    for t in range(1, n + 1):
        xs, ys = coupling.step_pair_batch(xs, ys, gen)
        if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
            raise NonFiniteStateError(t, "ensemble")
        if t in keep:
            out[t] = (np.array(xs, copy=True), np.array(ys, copy=True))
    return out


def exact_n_step(kernel: FiniteKernel, init: DiscreteDistribution, n: int) -> DiscreteDistribution:
    """Exact law after ``n`` steps, ``p0 @ P**n``, on the kernel's state list."""
    if not getattr(kernel, "has_exact_rows", False):
        raise UnsupportedKernelError(f"{type(kernel).__name__} has no exact transition rows")
    if n < 0:
        raise ValueError("n must be nonnegative")
    if n == 0:
        return init
    p = np.zeros(kernel.states.size)
    for point, w in zip(init.support, init.weights):
        p[kernel.index_of(point)] += w
    for _ in range(n):
        p = p @ kernel.matrix
    p = np.clip(p, 0.0, None)
    return DiscreteDistribution(kernel.states, p / p.sum())
