"""Exact (Gillespie) simulation of the finite-N crowd process.

Random numbers come from ``numpy.random.Generator(numpy.random.Philox(seed))``,
a counter-based generator, so a trace is fixed by its :class:`RunConfig`.
Each event consumes two consecutive doubles from ``Generator.random``:

1. ``u1`` gives the holding time ``-log(1 - u1) / R``;
2. ``u2`` picks the move by inverse CDF on the rates ``n_i mu(n_i) Q[i, j]``
   flattened in row-major ``(i, j)`` order, at position ``u2 * R``.

Doubles are drawn in blocks; this does not change the stream.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .errors import CrowdModelError
from .fluid import Trajectory, integrate_flow

__all__ = [
    "GENERATOR_NAME",
    "RunConfig",
    "SimulationTrace",
    "ConvergenceRow",
    "make_rng",
    "gillespie_run",
    "sup_deviation",
    "lattice_state",
    "convergence_experiment",
    "EmpiricalDistribution",
    "empirical_stationary",
]

GENERATOR_NAME = "numpy.random.Philox(4x64-10) via numpy.random.Generator.random"
_BLOCK = 4096


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


@dataclass(frozen=True)
class RunConfig:
    """One simulation run: population, intensity, horizon, seed and start state."""

    population: int
    intensity: float
    horizon: float
    seed: int
    initial_state: tuple[int, ...]

    def __post_init__(self):
        state = tuple(int(n) for n in self.initial_state)
        object.__setattr__(self, "initial_state", state)
        if self.population < 1:
            raise ValueError("population must be positive")
        if not 0 <= self.intensity < self.population:
            raise ValueError(f"need 0 <= s < N, got s={self.intensity}, N={self.population}")
        if self.horizon <= 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if any(n < 0 for n in state) or sum(state) != self.population:
            raise ValueError(f"initial state {state} does not distribute N={self.population} people")


@dataclass(frozen=True, eq=False)
class SimulationTrace:
    """Jump times (starting at 0) and the count vector after each jump."""

    jump_times: np.ndarray
    states: np.ndarray
    population: int
    horizon: float

    @property
    def occupancy(self) -> np.ndarray:
        return self.states / float(self.population)

    @property
    def num_jumps(self) -> int:
        return self.jump_times.size - 1

    def state_at(self, t) -> np.ndarray:
        """Counts at time(s) ``t``; the path is right-continuous and piecewise constant."""
        idx = np.searchsorted(self.jump_times, t, side="right") - 1
        return self.states[idx]


class _Stream:
    """Sequential doubles from a generator, drawn in blocks."""

    def __init__(self, rng: np.random.Generator):
        self._rng = rng
        self._size = 64
        self._buf = rng.random(self._size)
        self._pos = 0

    def next(self) -> float:
        if self._pos == self._size:
            self._size = min(2 * self._size, _BLOCK)
            self._buf = self._rng.random(self._size)
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        return float(u)


def _events(N: int, s: float, Q, state: Sequence[int], seed: int) -> Iterator[tuple[float, int, int]]:
    """Yield ``(holding_time, i, j)`` for successive moves of one person from ``i`` to ``j``."""
    Q = np.asarray(Q, dtype=float)
    I = Q.shape[0]
    c = s / N
    pow_c = [0.0] + [(1.0 - c) ** (n - 1) for n in range(1, N + 1)]
    neighbours = []
    for i in range(I):
        js = [int(j) for j in np.flatnonzero(Q[i])]
        neighbours.append((js, [float(Q[i, j]) for j in js]))
    counts = list(state)
    dep = [n * pow_c[n] for n in counts]
    stream = _Stream(make_rng(seed))
    while True:
        total = math.fsum(dep)
        if total <= 0.0:
            raise CrowdModelError("total event rate vanished; population must be positive")
        u1 = stream.next()
        u2 = stream.next()
        hold = -math.log1p(-u1) / total
        target = u2 * total
        acc = 0.0
        chosen = last = None
        for i in range(I):
            d = dep[i]
            if d == 0.0:
                continue
            for j, q in zip(*neighbours[i]):
                acc += d * q
                last = (i, j)
                if target < acc:
                    chosen = last
                    break
            if chosen is not None:
                break
        # Roundoff can leave target just above the accumulated total.
        src, dst = chosen if chosen is not None else last
        counts[src] -= 1
        counts[dst] += 1
        dep[src] = counts[src] * pow_c[counts[src]]
        dep[dst] = counts[dst] * pow_c[counts[dst]]
        yield hold, src, dst


def gillespie_run(cfg: RunConfig, Q) -> SimulationTrace:
    """Simulate one path on ``[0, cfg.horizon]``."""
    Q = np.asarray(Q, dtype=float)
    if len(cfg.initial_state) != Q.shape[0]:
        raise ValueError("initial state and routing matrix disagree on the number of squares")
    state = list(cfg.initial_state)
    times = [0.0]
    states = [tuple(state)]
    t = 0.0
    for hold, i, j in _events(cfg.population, cfg.intensity, Q, state, cfg.seed):
        t += hold
        if t > cfg.horizon:
            break
        state[i] -= 1
        state[j] += 1
        times.append(t)
        states.append(tuple(state))
    return SimulationTrace(np.array(times), np.array(states, dtype=np.int64),
                           cfg.population, float(cfg.horizon))


def sup_deviation(trace: SimulationTrace, flow: Trajectory) -> float:
    """``max_t ||Y^N(t) - phi_t(y0)||_inf`` over the flow's time grid."""
    if trace.horizon < flow.horizon - 1e-12:
        raise ValueError(f"trace horizon {trace.horizon} is shorter than the flow horizon {flow.horizon}")
    if trace.states.shape[1] != flow.points.shape[1]:
        raise ValueError("trace and flow have different numbers of squares")
    occ = trace.state_at(flow.times) / float(trace.population)
    return float(np.max(np.abs(occ - flow.points)))


def lattice_state(y0, N: int, rounding: str = "error") -> tuple[int, ...]:
    """Counts ``N * y0``; off-lattice points raise or are rounded by largest remainder."""
    y0 = np.asarray(y0, dtype=float)
    raw = N * y0
    floor = np.floor(raw + 1e-9)
    if np.max(np.abs(raw - np.rint(raw))) <= 1e-9:
        return tuple(int(n) for n in np.rint(raw))
    if rounding == "error":
        raise ValueError(f"y0={y0.tolist()} is not on the 1/{N} lattice (N={N})")
    if rounding != "largest_remainder":
        raise ValueError(f"unknown rounding {rounding!r}")
    counts = floor.astype(np.int64)
    short = N - int(counts.sum())
    order = np.argsort(-(raw - floor), kind="stable")
    counts[order[:short]] += 1
    return tuple(int(n) for n in counts)


@dataclass(frozen=True)
class ConvergenceRow:
    N: int
    median_dev: float
    q25: float
    q75: float
    deviations: tuple[float, ...]


def convergence_experiment(N_list: Sequence[int], s: float, Q, y0, T: float, num_seeds: int,
                           base_seed: int = 0, dt: float = 1e-3,
                           rounding: str = "error") -> list[ConvergenceRow]:
    """Quartiles of the sup-deviation between simulated paths and the fluid path.

    The fluid path starts at ``y0``; each simulation starts at ``N * y0``
    (rounded by largest remainder when ``rounding="largest_remainder"``).
    Run ``k`` uses seed ``base_seed + k``.
    """
    if num_seeds < 3:
        raise ValueError(f"num_seeds must be at least 3, got {num_seeds}")
    Q = np.asarray(Q, dtype=float)
    starts = {N: lattice_state(y0, N, rounding) for N in N_list}
    flow = integrate_flow(y0, s, Q, T, dt)
    rows = []
    for N in sorted(N_list):
        devs = []
        for k in range(num_seeds):
            cfg = RunConfig(N, s, T, base_seed + k, starts[N])
            devs.append(sup_deviation(gillespie_run(cfg, Q), flow))
        q25, med, q75 = np.quantile(devs, [0.25, 0.5, 0.75])
        rows.append(ConvergenceRow(int(N), float(med), float(q25), float(q75), tuple(devs)))
    return rows


@dataclass(frozen=True, eq=False)
class EmpiricalDistribution:
    """Empirical occupancy measure: distinct count vectors and their frequencies."""

    states: np.ndarray
    probabilities: np.ndarray
    population: int

    @property
    def points(self) -> np.ndarray:
        return self.states / float(self.population)

    def aligned_with(self, states: np.ndarray) -> np.ndarray:
        """Probabilities re-indexed onto an enumerated state list (zeros elsewhere)."""
        lookup = {tuple(row): p for row, p in zip(self.states.tolist(), self.probabilities)}
        return np.array([lookup.get(tuple(row), 0.0) for row in states.tolist()])


def empirical_stationary(N: int, s: float, Q, burn_in: float | None = None,
                         sample_interval: float = 1.0, num_samples: int = 10_000,
                         seed: int = 0, initial_state=None) -> EmpiricalDistribution:
    """Sample one long path every ``sample_interval`` after ``burn_in``.

    ``burn_in`` defaults to ``10 * N`` time units. The path starts with
    everyone spread as evenly as possible unless ``initial_state`` is given.
    """
    Q = np.asarray(Q, dtype=float)
    I = Q.shape[0]
    if burn_in is None:
        burn_in = 10.0 * N
    if burn_in <= 0 or sample_interval <= 0:
        raise ValueError("burn_in and sample_interval must be positive")
    if num_samples < 1:
        raise ValueError("num_samples must be positive")
    if initial_state is None:
        initial_state = lattice_state(np.full(I, 1.0 / I), N, "largest_remainder")
    RunConfig(N, s, burn_in + sample_interval * num_samples, seed, tuple(initial_state))

    state = list(initial_state)
    counts: dict[tuple[int, ...], int] = {}
    next_sample = burn_in
    taken = 0
    t = 0.0
    for hold, i, j in _events(N, s, Q, state, seed):
        t_next = t + hold
        while next_sample < t_next and taken < num_samples:
            key = tuple(state)
            counts[key] = counts.get(key, 0) + 1
            taken += 1
            next_sample = burn_in + taken * sample_interval
        if taken == num_samples:
            break
        state[i] -= 1
        state[j] += 1
        t = t_next
    keys = sorted(counts)
    freq = np.array([counts[k] for k in keys], dtype=float)
    return EmpiricalDistribution(np.array(keys, dtype=np.int64), freq / freq.sum(), N)
