"""Deterministic side of the model: drift fields, the fluid ODE and its fixed points.

With ``g_i(y) = y_i exp(-s y_i)`` the limiting drift is

    V(y)_i = -g_i(y) + sum_j g_j(y) Q[j, i]

and the finite-N drift replaces ``exp(-s y_i)`` by ``(1 - s/N)**(N y_i - 1)``.
All distances on the simplex are l-infinity.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .errors import IntegrationError
from .exact_ctmc import enumerate_states
from .lambertw import phi_alpha

__all__ = [
    "Trajectory",
    "StationaryPointSet",
    "KurtzReport",
    "CriticalValue",
    "drift_limit",
    "drift_finite",
    "drift_jacobian",
    "integrate_flow",
    "drift_gap_bound",
    "kurtz_conditions_report",
    "critical_s",
    "find_stationary_points",
    "two_level_points",
    "ALPHA_MAX",
]

log = logging.getLogger(__name__)

ALPHA_MAX = 50.0
SIMPLEX_SLACK = 1e-9


def _as_point(y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.ndim != 1:
        raise ValueError(f"expected a 1-d occupancy vector, got shape {y.shape}")
    return y


def drift_limit(y, s: float, Q) -> np.ndarray:
    """Limiting drift ``V(y)``; its components sum to zero."""
    y = _as_point(y)
    g = y * np.exp(-s * y)
    return g @ Q - g


def drift_finite(y, N: int, s: float, Q) -> np.ndarray:
    """Drift of the occupancy process at population ``N`` for a lattice point ``y``."""
    y = _as_point(y)
    if s >= N:
        raise ValueError(f"need s < N, got s={s}, N={N}")
    counts = N * y
    if np.max(np.abs(counts - np.rint(counts))) > 1e-9:
        raise ValueError(f"y={y} is not on the 1/{N} lattice")
    counts = np.rint(counts)
    with np.errstate(divide="ignore"):
        rate = np.where(counts > 0, (1.0 - s / N) ** (counts - 1.0), 0.0)
    g = y * rate
    return g @ Q - g


def drift_jacobian(y, s: float, Q) -> np.ndarray:
    """Jacobian of :func:`drift_limit`, ``(Q^T - 1) diag(g')``."""
    y = _as_point(y)
    dg = np.exp(-s * y) * (1.0 - s * y)
    return (np.asarray(Q).T - np.eye(y.size)) * dg[None, :]


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Time grid and occupancy vectors of one fluid path."""

    times: np.ndarray
    points: np.ndarray

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def final(self) -> np.ndarray:
        return self.points[-1]

    def at(self, t: float) -> np.ndarray:
        """Point at the stored time closest to ``t``."""
        k = int(np.argmin(np.abs(self.times - t)))
        return self.points[k]


def _project(y: np.ndarray) -> tuple[np.ndarray, float]:
    clamped = np.maximum(y, 0.0)
    projected = clamped / clamped.sum()
    return projected, float(np.max(np.abs(projected - y)))


def integrate_flow(y0, s: float, Q, T: float, dt: float = 1e-3,
                   store_every: int = 1, max_dt: float | None = 0.01) -> Trajectory:
    """Classical fixed-step RK4 for ``dy/dt = V(y)``.

    After every step the state is clamped at zero and rescaled to unit mass; an
    adjustment larger than ``1e-9`` aborts with :class:`IntegrationError`. If
    ``T`` is not a multiple of ``dt`` the last step is shortened. Steps above
    ``max_dt`` are refused unless ``max_dt`` is None.
    """
    y = _as_point(y0).copy()
    Q = np.asarray(Q, dtype=float)
    if T <= 0 or dt <= 0:
        raise ValueError("T and dt must be positive")
    if dt > T:
        raise ValueError(f"dt={dt} exceeds the horizon T={T}")
    if max_dt is not None and dt > max_dt:
        raise ValueError(f"dt={dt} is above the allowed maximum {max_dt}")
    if np.any(y < -1e-12) or abs(y.sum() - 1.0) > SIMPLEX_SLACK:
        raise ValueError(f"initial point {y0} is not on the simplex")
    y, _ = _project(y)

    n_full = int(math.floor(T / dt + 1e-9))
    steps = [dt] * n_full
    rest = T - n_full * dt
    if rest > 1e-12 * max(1.0, T):
        steps.append(rest)

    QT = Q.T.copy()

    def f(v):
        g = v * np.exp(-s * v)
        return QT @ g - g

    times = [0.0]
    points = [y.copy()]
    t = 0.0
    for k, h in enumerate(steps, start=1):
        k1 = f(y)
        k2 = f(y + 0.5 * h * k1)
        k3 = f(y + 0.5 * h * k2)
        k4 = f(y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        y, adjust = _project(y)
        if adjust > SIMPLEX_SLACK:
            raise IntegrationError(
                f"step {k} left the simplex by {adjust:.2e}; try a smaller dt (now {dt})")
        t = n_full * dt + h if k > n_full else k * dt
        if k % store_every == 0 or k == len(steps):
            times.append(t)
            points.append(y.copy())
    return Trajectory(np.array(times), np.array(points))


def drift_gap_bound(N: int, s: float) -> float:
    """Uniform bound ``a_N(s)`` on ``|(1 - s/N)**(N y - 1) - exp(-s y)|`` over lattice ``y > 0``.

    ``a_N(s) = max(s/N, |(N - 1) log(1 - s/N) + s|)``
    """
    if s >= N:
        raise ValueError(f"need s < N, got s={s}, N={N}")
    if s < 0:
        raise ValueError(f"s must be nonnegative, got {s}")
    return max(s / N, abs((N - 1) * math.log1p(-s / N) + s))


@dataclass(frozen=True)
class KurtzReport:
    """Numerical check of the three conditions of Kurtz's theorem at one ``N``."""

    population: int
    intensity: float
    num_points: int
    drift_gap: float
    drift_gap_bound: float
    max_jump_rate: float
    jump_rate_bound: float
    delta: float
    large_jump_term: float

    @property
    def drift_gap_ok(self) -> bool:
        return self.drift_gap <= self.drift_gap_bound

    @property
    def jump_rate_ok(self) -> bool:
        return self.max_jump_rate <= self.jump_rate_bound

    @property
    def large_jump_ok(self) -> bool:
        return self.large_jump_term == 0.0

    @property
    def passed(self) -> bool:
        return self.drift_gap_ok and self.jump_rate_ok and self.large_jump_ok


def kurtz_conditions_report(N: int, s: float, Q, grid=None) -> KurtzReport:
    """Evaluate the three convergence conditions over lattice points.

    Parameters
    ----------
    grid : (K, I) array_like, optional
        Points of the ``1/N`` lattice. Defaults to the full lattice.

    Notes
    -----
    (i) ``sup ||V^N - V||_inf`` against ``a_N(s) * I``;
    (ii) the expected jump norm per unit time ``A^N(y)`` against ``I``;
    (iii) the rate of jumps longer than ``delta_N = 1/N``, which is zero
    because every jump has sup-norm exactly ``1/N``.
    """
    Q = np.asarray(Q, dtype=float)
    I = Q.shape[0]
    if grid is None:
        grid = enumerate_states(N, I) / float(N)
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    bound = drift_gap_bound(N, s)
    delta = 1.0 / N
    offdiag = Q * (1.0 - np.eye(I))
    jump_norm = np.where(offdiag > 0, 1.0, 0.0)  # ||-e_i + e_j||_inf = 1 for i != j
    long_jump = (jump_norm / N) > delta

    gap = 0.0
    max_rate = 0.0
    large = 0.0
    for y in grid:
        gap = max(gap, float(np.max(np.abs(drift_finite(y, N, s, Q) - drift_limit(y, s, Q)))))
        counts = np.rint(N * y)
        rate = y * np.where(counts > 0, (1.0 - s / N) ** np.maximum(counts - 1.0, 0.0), 0.0)
        per_pair = rate[:, None] * offdiag * jump_norm
        max_rate = max(max_rate, float(per_pair.sum()))
        large = max(large, float(per_pair[long_jump].sum()))
    return KurtzReport(N, float(s), grid.shape[0], gap, bound * I, max_rate, float(I),
                       delta, large)


@dataclass(frozen=True)
class CriticalValue:
    """Result of :func:`critical_s`."""

    value: float
    K: int
    alpha: float
    per_K: tuple[tuple[int, float, float], ...]

    @property
    def at_boundary(self) -> bool:
        """Whether the minimising ``alpha`` sits at the ``alpha -> 1`` boundary."""
        return self.alpha - 1.0 < 1e-6


def _two_level_objective(alpha: float, I: int, K: int) -> float:
    return (I - K) * alpha + K * phi_alpha(alpha)


def _minimize_objective(I: int, K: int, alpha_max: float, xtol: float) -> tuple[float, float]:
    """Bracket on a coarse grid, then refine with bounded Brent search."""
    grid = np.linspace(1.0, alpha_max, 2001)
    values = np.array([_two_level_objective(a, I, K) for a in grid])
    k = int(np.argmin(values))
    lo = grid[max(k - 1, 0)]
    hi = grid[min(k + 1, grid.size - 1)]
    res = minimize_scalar(_two_level_objective, bounds=(lo, hi), args=(I, K),
                          method="bounded", options={"xatol": xtol})
    best_a, best_v = float(res.x), float(res.fun)
    if values[k] < best_v:
        best_a, best_v = float(grid[k]), float(values[k])
    # phi is only accurate to ~1e-10 right next to alpha = 1, where the
    # objective equals I exactly; do not let that noise undercut the boundary.
    if best_a - 1.0 < 1e-3 and I <= best_v + 1e-9:
        best_a, best_v = 1.0, float(I)
    return best_a, best_v


def critical_s(I: int, alpha_max: float = ALPHA_MAX, xtol: float = 1e-10) -> CriticalValue:
    """Intensity above which non-uniform fixed points appear on a regular graph of ``I`` squares.

    ``s* = min over K in 1..I-1 of min over alpha > 1 of (I - K) alpha + K phi(alpha)``.
    Ties in the outer minimum go to the smallest ``K`` (within ``1e-9``).
    """
    if I < 2:
        raise ValueError(f"need at least 2 squares, got {I}")
    per_K = []
    for K in range(1, I):
        a, v = _minimize_objective(I, K, alpha_max, xtol)
        per_K.append((K, a, v))
    best_v = min(v for _, _, v in per_K)
    K, a, v = next(entry for entry in per_K if entry[2] <= best_v + 1e-9)
    return CriticalValue(v, K, a, tuple(per_K))


@dataclass(frozen=True, eq=False)
class StationaryPointSet:
    """Zeros of the limiting drift on the simplex."""

    points: np.ndarray
    residuals: np.ndarray
    warning: str | None = None

    def __len__(self):
        return self.points.shape[0]

    def __iter__(self):
        return iter(self.points)

    def contains(self, y, tol: float = 1e-8) -> bool:
        if len(self) == 0:
            return False
        return bool(np.min(np.max(np.abs(self.points - np.asarray(y)), axis=1)) <= tol)


def _colex_key(y: np.ndarray):
    return tuple(np.round(y, 8)[::-1])


def _dedupe(candidates, tol: float) -> list[np.ndarray]:
    ordered = sorted(candidates, key=_colex_key)
    kept: list[np.ndarray] = []
    for y in ordered:
        if all(np.max(np.abs(y - z)) >= tol for z in kept):
            kept.append(y)
    return kept


def _is_regular(Q: np.ndarray) -> bool:
    degrees = np.count_nonzero(Q, axis=1)
    return bool(np.all(degrees == degrees[0]))


def _alpha_roots(s: float, I: int, K: int, alpha_max: float) -> list[float]:
    """All ``alpha in (1, alpha_max]`` with ``(I - K) alpha + K phi(alpha) = s``."""
    def h(a):
        return _two_level_objective(a, I, K) - s

    a_min, _ = _minimize_objective(I, K, alpha_max, 1e-12)
    h_min = h(a_min)
    roots = []
    if h_min >= 0:
        return roots
    h_one = I - s
    if a_min > 1.0 and h_one > 0:
        roots.append(brentq(h, 1.0, a_min, xtol=1e-15, rtol=1e-15, maxiter=200))
    if h(alpha_max) > 0:
        roots.append(brentq(h, a_min, alpha_max, xtol=1e-15, rtol=1e-15, maxiter=200))
    return roots


def two_level_points(s: float, I: int, alpha_max: float = ALPHA_MAX,
                     max_points: int = 200_000) -> list[np.ndarray]:
    """Fixed points of a regular graph with two coordinate levels, plus the uniform point.

    On a regular graph ``V(y) = 0`` forces ``y_i exp(-s y_i)`` to be constant,
    so coordinates take at most two values: ``I - K`` squares at ``alpha / s``
    and ``K`` squares at ``phi(alpha) / s`` with
    ``(I - K) alpha + K phi(alpha) = s``.
    """
    points = [np.full(I, 1.0 / I)]
    if s <= 0:
        return points
    for K in range(1, I):
        for alpha in _alpha_roots(s, I, K, alpha_max):
            high, low = alpha / s, phi_alpha(alpha) / s
            n_perm = math.comb(I, K)
            if len(points) + n_perm > max_points:
                raise ValueError(f"too many stationary points to enumerate for I={I}")
            for lows in combinations(range(I), K):
                y = np.full(I, high)
                y[list(lows)] = low
                points.append(y / y.sum())
    return points


def _newton(y0: np.ndarray, s: float, Q: np.ndarray, max_iter: int = 100,
            max_halvings: int = 40) -> np.ndarray | None:
    """Damped Newton for ``V(y) = 0`` restricted to the simplex."""
    I = y0.size

    def residual_vec(y):
        F = drift_limit(y, s, Q)
        F[-1] = y.sum() - 1.0
        return F

    y = y0.copy()
    F = residual_vec(y)
    norm = float(np.max(np.abs(F)))
    for _ in range(max_iter):
        if norm <= 1e-12:
            return y
        J = drift_jacobian(y, s, Q)
        J[-1, :] = 1.0
        try:
            step = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(J, -F, rcond=None)[0]
        lam = 1.0
        for _ in range(max_halvings + 1):
            trial, _ = _project(y + lam * step)
            F_trial = residual_vec(trial)
            trial_norm = float(np.max(np.abs(F_trial)))
            if trial_norm < norm:
                break
            lam *= 0.5
        else:
            return y if norm <= 1e-12 else None
        moved = float(np.max(np.abs(trial - y)))
        y, F, norm = trial, F_trial, trial_norm
        if moved <= 1e-14:
            break
    return y if norm <= 1e-10 else None


def _polish(y: np.ndarray, s: float, Q: np.ndarray) -> np.ndarray:
    polished = _newton(y, s, Q, max_iter=5)
    return y if polished is None else polished


def find_stationary_points(s: float, Q, *, strategy: str = "auto", mesh: int = 7,
                           residual_tol: float = 1e-10, dedup_tol: float = 1e-8,
                           alpha_max: float = ALPHA_MAX) -> StationaryPointSet:
    """Zeros of the limiting drift on the simplex.

    Parameters
    ----------
    strategy : {"auto", "two_level", "newton", "both"}
        ``two_level`` uses the closed reduction valid on regular graphs;
        ``newton`` runs damped Newton from every point of the ``1/mesh``
        simplex lattice. ``auto`` picks ``two_level`` on regular graphs.
    """
    Q = np.asarray(Q, dtype=float)
    I = Q.shape[0]
    regular = _is_regular(Q)
    if strategy == "auto":
        strategy = "two_level" if regular else "newton"
    if strategy in ("two_level", "both") and not regular:
        raise ValueError("the two-level reduction needs a regular graph")

    candidates = []
    if strategy in ("two_level", "both"):
        for y in two_level_points(s, I, alpha_max):
            if np.max(np.abs(drift_limit(y, s, Q))) > residual_tol:
                y = _polish(y, s, Q)
            candidates.append(y)
    if strategy in ("newton", "both"):
        for start in enumerate_states(mesh, I) / float(mesh):
            y = _newton(start, s, Q)
            if y is not None:
                candidates.append(y)
    if strategy not in ("two_level", "newton", "both"):
        raise ValueError(f"unknown strategy {strategy!r}")

    good = []
    for y in candidates:
        r = float(np.max(np.abs(drift_limit(y, s, Q))))
        if r <= residual_tol and np.all(y >= -1e-12) and abs(y.sum() - 1.0) <= SIMPLEX_SLACK:
            good.append(y)
        else:
            log.debug("discarding candidate %s with residual %.3e", y, r)
    kept = _dedupe(good, dedup_tol)
    warning = None
    if not kept:
        warning = "no stationary point found; root finding may have failed"
        log.warning(warning)
    points = np.array(kept).reshape(len(kept), I)
    residuals = np.array([float(np.max(np.abs(drift_limit(y, s, Q)))) for y in kept])
    return StationaryPointSet(points, residuals, warning)
