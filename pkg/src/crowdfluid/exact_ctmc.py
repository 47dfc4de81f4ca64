"""Exact finite-N analysis of the crowd process.

The state is the vector of counts ``(n_1, ..., n_I)`` summing to ``N``. A person
in square ``i`` leaves at rate ``(1 - c)**(n_i - 1)`` and moves along the routing
matrix, so the chain is a closed network of infinite-server stations with a
state-dependent rate. Two routes to the stationary law are provided:

* :func:`stationary_global_balance` solves ``pi G = 0`` directly;
* :func:`product_form_stationary` evaluates the closed product form.

The closed form uses the per-square factor
``f_i(n) = theta_i**n / (n! * prod_{m<=n} mu(m))``, i.e. the service-rate
product sits in the denominator. This is the placement that satisfies global
balance; the test suite pins it against the direct solve.

States are enumerated in lexicographic order of the count vectors, e.g. for
``N=2, I=2``: ``(0, 2), (1, 1), (2, 0)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import gammaln, logsumexp

from .errors import CapacityError, NumericalError
from .graph_model import MAX_EXACT_SQUARES

__all__ = [
    "MAX_STATES",
    "DENSE_SOLVE_LIMIT",
    "num_states",
    "enumerate_states",
    "SparseGenerator",
    "DiscreteDistribution",
    "SimplexDistribution",
    "build_generator",
    "stationary_global_balance",
    "product_form_stationary",
    "check_detailed_balance",
    "total_variation",
    "occupancy_pushforward",
    "distance_to_set",
    "concentration_mass",
]

MAX_STATES = 500_000
# Above this many states the global-balance solve switches to sparse LU.
DENSE_SOLVE_LIMIT = 3_000


def num_states(N: int, I: int) -> int:
    """Number of compositions of ``N`` into ``I`` nonnegative parts."""
    return math.comb(N + I - 1, I - 1)


def enumerate_states(N: int, I: int, max_states: int = MAX_STATES) -> np.ndarray:
    """All count vectors of ``N`` people over ``I`` squares, lexicographically ordered.

    Returns
    -------
    states : (M, I) ndarray of int64
        Row ``k`` is the state with index ``k``.
    """
    if N < 0 or I < 1:
        raise ValueError(f"need N >= 0 and I >= 1, got N={N}, I={I}")
    if I > MAX_EXACT_SQUARES:
        raise CapacityError(f"exact analysis supports at most {MAX_EXACT_SQUARES} squares, got {I}")
    count = num_states(N, I)
    if count > max_states:
        raise CapacityError(
            f"state space for N={N}, I={I} has {count} states, above the limit of {max_states}",
            count=count)
    if I == 1:
        return np.array([[N]], dtype=np.int64)
    # Stars and bars: bar positions in lexicographic order give states in
    # lexicographic order.
    slots = N + I - 1
    bars = np.fromiter(
        (b for combo in combinations(range(slots), I - 1) for b in combo),
        dtype=np.int64, count=count * (I - 1)).reshape(count, I - 1)
    edges = np.hstack([np.full((count, 1), -1, dtype=np.int64), bars,
                       np.full((count, 1), slots, dtype=np.int64)])
    return np.diff(edges, axis=1) - 1


class _StateIndex:
    """Map count vectors back to their enumeration index."""

    def __init__(self, states: np.ndarray, N: int):
        self.N = N
        I = states.shape[1]
        self._radix = N + 1
        if I * math.log2(self._radix) < 62:
            weights = self._radix ** np.arange(I - 1, -1, -1, dtype=np.int64)
            self._weights = weights
            self._keys = states @ weights  # ascending, since ordering is lexicographic
            self._dict = None
        else:
            self._weights = None
            self._dict = {tuple(row): k for k, row in enumerate(states.tolist())}

    def lookup(self, targets: np.ndarray) -> np.ndarray:
        if self._dict is None:
            keys = targets @ self._weights
            idx = np.searchsorted(self._keys, keys)
            if np.any(idx >= self._keys.size) or np.any(self._keys[idx] != keys):
                raise KeyError("state not in the enumerated space")
            return idx
        return np.array([self._dict[tuple(row)] for row in targets.tolist()], dtype=np.int64)


@dataclass(frozen=True, eq=False)
class SparseGenerator:
    """Off-diagonal transition rates of the finite-N chain.

    The diagonal is implied: ``G[k, k] = -sum of rates out of k``.
    """

    states: np.ndarray
    source: np.ndarray
    target: np.ndarray
    rates: np.ndarray
    population: int

    @property
    def num_states(self) -> int:
        return self.states.shape[0]

    def exit_rates(self) -> np.ndarray:
        return np.bincount(self.source, weights=self.rates, minlength=self.num_states)

    def rate_matrix(self) -> sp.csr_matrix:
        """Off-diagonal rates as a sparse matrix."""
        M = self.num_states
        return sp.csr_matrix((self.rates, (self.source, self.target)), shape=(M, M))

    def to_sparse(self) -> sp.csr_matrix:
        """Full generator ``G`` including the negative diagonal."""
        return (self.rate_matrix() - sp.diags(self.exit_rates())).tocsr()

    def to_dense(self) -> np.ndarray:
        return self.to_sparse().toarray()

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.to_sparse().sum(axis=1)).ravel()

    def index_of(self, state) -> int:
        index = _StateIndex(self.states, self.population)
        return int(index.lookup(np.asarray(state, dtype=np.int64)[None, :])[0])


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    """Probability vector aligned with an enumerated state space."""

    states: np.ndarray
    probabilities: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=float)
        if p.shape != (self.states.shape[0],):
            raise ValueError("probabilities must align with the state list")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-10:
            raise ValueError("probabilities must be nonnegative and sum to 1")
        object.__setattr__(self, "probabilities", p)

    @property
    def population(self) -> int:
        return int(self.states[0].sum())


@dataclass(frozen=True, eq=False)
class SimplexDistribution:
    """Finitely supported probability measure on the simplex."""

    points: np.ndarray
    probabilities: np.ndarray

    def mean_distance(self, point_set) -> float:
        return float(self.probabilities @ distance_to_set(self.points, point_set))


def build_generator(N: int, c: float, Q, max_states: int = MAX_STATES) -> SparseGenerator:
    """Generator of the count process.

    From each state ``n``, for every ``i`` with ``n_i > 0`` and ``j`` with
    ``Q[i, j] > 0``, there is a move to ``n - e_i + e_j`` at rate
    ``n_i * (1 - c)**(n_i - 1) * Q[i, j]``.
    """
    Q = np.asarray(Q, dtype=float)
    if not 0.0 <= c < 1.0:
        raise ValueError(f"chat probability must lie in [0, 1), got {c}")
    I = Q.shape[0]
    states = enumerate_states(N, I, max_states)
    index = _StateIndex(states, N)
    # departure[n] = n * (1 - c)**(n - 1); departure[0] = 0
    n_range = np.arange(N + 1, dtype=float)
    departure = np.where(n_range > 0, n_range * (1.0 - c) ** np.maximum(n_range - 1, 0), 0.0)

    src_parts, dst_parts, rate_parts = [], [], []
    for i, j in zip(*np.nonzero(Q)):
        if i == j:
            raise ValueError("routing matrix must have a zero diagonal")
        occupied = np.flatnonzero(states[:, i] > 0)
        if occupied.size == 0:
            continue
        moved = states[occupied].copy()
        moved[:, i] -= 1
        moved[:, j] += 1
        src_parts.append(occupied)
        dst_parts.append(index.lookup(moved))
        rate_parts.append(departure[states[occupied, i]] * Q[i, j])
    if src_parts:
        source = np.concatenate(src_parts)
        target = np.concatenate(dst_parts)
        rates = np.concatenate(rate_parts)
        order = np.lexsort((target, source))
        source, target, rates = source[order], target[order], rates[order]
    else:
        source = target = np.zeros(0, dtype=np.int64)
        rates = np.zeros(0)
    return SparseGenerator(states, source, target, rates, N)


def _residual(pi: np.ndarray, G: sp.spmatrix) -> float:
    return float(np.max(np.abs(G.T @ pi)))


def stationary_global_balance(gen: SparseGenerator, method: str = "auto",
                              tol: float = 1e-10, power_tol: float = 1e-12,
                              max_iter: int = 1_000_000) -> DiscreteDistribution:
    """Solve ``pi G = 0`` with ``sum(pi) = 1``.

    Parameters
    ----------
    gen : SparseGenerator
    method : {"auto", "dense", "sparse", "power"}
        ``dense`` replaces the last balance equation by the normalisation and
        uses LU with partial pivoting; ``sparse`` does the same with SuperLU;
        ``power`` iterates the uniformised chain. ``auto`` picks dense up to
        :data:`DENSE_SOLVE_LIMIT` states and sparse above.
    tol : float
        Maximum allowed ``||pi G||_inf``.
    """
    M = gen.num_states
    G = gen.to_sparse()
    if M == 1:
        pi = np.ones(1)
    else:
        if method == "auto":
            method = "dense" if M <= DENSE_SOLVE_LIMIT else "sparse"
        b = np.zeros(M)
        b[-1] = 1.0
        if method == "dense":
            A = G.T.toarray()
            A[-1, :] = 1.0
            try:
                pi = np.linalg.solve(A, b)
            except np.linalg.LinAlgError as exc:
                raise NumericalError(f"global balance system is singular: {exc}") from exc
        elif method == "sparse":
            A = G.T.tolil()
            A[-1, :] = np.ones(M)
            pi = spla.spsolve(A.tocsc(), b)
        elif method == "power":
            pi = _power_iteration(G, power_tol, max_iter)
        else:
            raise ValueError(f"unknown method {method!r}")
    if not np.all(np.isfinite(pi)):
        raise NumericalError("global balance solve produced non-finite values")
    residual = _residual(pi, G)
    # Roundoff can leave tiny negative entries on states with negligible mass.
    pi = np.clip(pi, 0.0, None)
    pi = pi / pi.sum()
    residual = max(residual, _residual(pi, G))
    if residual > tol:
        raise NumericalError(
            f"stationary solve residual {residual:.3e} exceeds tolerance {tol:.1e}; "
            "is the chain irreducible?", residual=residual)
    return DiscreteDistribution(gen.states, pi)


def _power_iteration(G: sp.csr_matrix, tol: float, max_iter: int) -> np.ndarray:
    M = G.shape[0]
    uniform_rate = 1.05 * float(np.max(-G.diagonal()))
    P = (sp.identity(M, format="csr") + G / uniform_rate).T.tocsr()
    pi = np.full(M, 1.0 / M)
    for _ in range(max_iter):
        nxt = P @ pi
        nxt /= nxt.sum()
        if np.abs(nxt - pi).sum() <= tol:
            return nxt
        pi = nxt
    raise NumericalError(f"power iteration did not converge in {max_iter} steps")


def _log_factor_table(N: int, theta: np.ndarray, c: float) -> np.ndarray:
    """``log f_i(n)`` for ``n = 0..N``, shape ``(N + 1, I)``."""
    n = np.arange(N + 1, dtype=float)
    # log prod_{m=1}^n (1 - c)**(m - 1) = n (n - 1) / 2 * log(1 - c)
    log_mu_prod = 0.5 * n * (n - 1) * math.log1p(-c) if c > 0 else np.zeros_like(n)
    with np.errstate(divide="ignore"):
        log_theta = np.log(theta)
    return n[:, None] * log_theta[None, :] - gammaln(n + 1)[:, None] - np.asarray(log_mu_prod)[:, None]


def product_form_stationary(N: int, theta, c: float, states: np.ndarray | None = None,
                            max_states: int = MAX_STATES) -> DiscreteDistribution:
    """Closed-form stationary law ``P(n) ∝ prod_i theta_i**n_i / (n_i! prod_{m<=n_i} mu(m))``.

    Evaluated in log space and normalised with log-sum-exp.
    """
    theta = np.asarray(theta, dtype=float)
    if not 0.0 <= c < 1.0:
        raise ValueError(f"chat probability must lie in [0, 1), got {c}")
    if states is None:
        states = enumerate_states(N, theta.size, max_states)
    table = _log_factor_table(N, theta, c)
    cols = np.arange(theta.size)
    logp = table[states, cols].sum(axis=1)
    logp -= logsumexp(logp)
    p = np.exp(logp)
    return DiscreteDistribution(states, p / p.sum())


def check_detailed_balance(dist: DiscreteDistribution, gen: SparseGenerator) -> float:
    """Largest ``|pi(a) q(a, b) - pi(b) q(b, a)|``, divided by the largest flow."""
    if dist.states.shape != gen.states.shape or not np.array_equal(dist.states, gen.states):
        raise ValueError("distribution and generator use different state spaces")
    if gen.rates.size == 0:
        return 0.0
    R = gen.rate_matrix()
    flow = sp.diags(dist.probabilities) @ R
    scale = float(flow.max())
    if scale == 0.0:
        return 0.0
    gap = abs(flow - flow.T)
    return float(gap.max()) / scale


def total_variation(p, q) -> float:
    """Total-variation distance between two aligned probability vectors."""
    p = getattr(p, "probabilities", p)
    q = getattr(q, "probabilities", q)
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def occupancy_pushforward(dist: DiscreteDistribution, N: int | None = None) -> SimplexDistribution:
    """Image of a count distribution under ``n -> n / N``."""
    if N is None:
        N = dist.population
    return SimplexDistribution(dist.states / float(N), dist.probabilities.copy())


def distance_to_set(points, point_set) -> np.ndarray:
    """l-infinity distance from each row of ``points`` to the nearest member of ``point_set``."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    targets = np.atleast_2d(np.asarray(getattr(point_set, "points", point_set), dtype=float))
    if targets.shape[0] == 0 or targets.size == 0:
        raise ValueError("point set is empty")
    best = np.full(pts.shape[0], np.inf)
    for t in targets:
        best = np.minimum(best, np.max(np.abs(pts - t), axis=1))
    return best


def concentration_mass(dist: SimplexDistribution, point_set, eps: float) -> float:
    """Probability mass within l-infinity distance ``eps`` of ``point_set``."""
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    d = distance_to_set(dist.points, point_set)
    # Lattice distances such as 3/30 vs 0.1 must not flip on roundoff.
    near = d <= eps + 1e-12
    return float(min(1.0, dist.probabilities[near].sum()))
