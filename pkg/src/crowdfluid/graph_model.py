"""City graph, Markov routing and population parameters of the crowd model.

A city is an undirected connected graph whose vertices are squares. A person
leaving square ``i`` moves to a neighbour chosen uniformly at random, so the
routing matrix is ``Q[i, j] = 1 / d(i)`` on edges. Its stationary vector is
proportional to the degrees, and the pair satisfies detailed balance.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import ConnectivityError

__all__ = [
    "CityGraph",
    "ModelParams",
    "complete_graph",
    "cycle_graph",
    "path_graph",
    "graph_from_edges",
    "read_edge_list",
    "make_graph",
    "routing_matrix",
    "routing_stationary",
    "check_routing_detailed_balance",
    "service_rate",
    "MAX_EXACT_SQUARES",
]

# Exact-analysis paths refuse larger graphs; state enumeration explodes first.
MAX_EXACT_SQUARES = 64


@dataclass(frozen=True, eq=False)
class CityGraph:
    """Undirected, connected graph of squares without self-loops.

    Parameters
    ----------
    adjacency : (I, I) array_like of bool
        Symmetric adjacency relation with a zero diagonal.
    """

    adjacency: np.ndarray
    degrees: np.ndarray = field(init=False)

    def __post_init__(self):
        adj = np.asarray(self.adjacency, dtype=bool)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ValueError(f"adjacency must be square, got shape {adj.shape}")
        if adj.shape[0] < 2:
            raise ValueError("a city needs at least 2 squares")
        if not np.array_equal(adj, adj.T):
            raise ValueError("adjacency must be symmetric")
        if adj.diagonal().any():
            raise ValueError("self-loops are not allowed")
        adj = adj.copy()
        adj.setflags(write=False)
        deg = adj.sum(axis=1).astype(np.int64)
        deg.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "degrees", deg)
        if not _is_connected(adj):
            raise ConnectivityError("city graph is not connected")

    @property
    def num_squares(self) -> int:
        return self.adjacency.shape[0]

    @property
    def is_regular(self) -> bool:
        return bool(np.all(self.degrees == self.degrees[0]))

    def edges(self) -> list[tuple[int, int]]:
        """Undirected edges as ``(i, j)`` pairs with ``i < j``."""
        ii, jj = np.nonzero(np.triu(self.adjacency))
        return [(int(i), int(j)) for i, j in zip(ii, jj)]

    def __eq__(self, other):
        if not isinstance(other, CityGraph):
            return NotImplemented
        return np.array_equal(self.adjacency, other.adjacency)

    def __hash__(self):
        return hash(self.adjacency.tobytes())

    def __repr__(self):
        return f"CityGraph(num_squares={self.num_squares}, edges={len(self.edges())})"


def _is_connected(adj: np.ndarray) -> bool:
    n = adj.shape[0]
    seen = np.zeros(n, dtype=bool)
    seen[0] = True
    stack = [0]
    while stack:
        v = stack.pop()
        for w in np.flatnonzero(adj[v] & ~seen):
            seen[w] = True
            stack.append(int(w))
    return bool(seen.all())


def graph_from_edges(edges: Iterable[tuple[int, int]], num_squares: int | None = None) -> CityGraph:
    """Build a graph from 0-based undirected edges. Duplicate edges are merged."""
    edges = [(int(i), int(j)) for i, j in edges]
    if num_squares is None:
        if not edges:
            raise ValueError("cannot infer the number of squares from an empty edge list")
        num_squares = 1 + max(max(e) for e in edges)
    adj = np.zeros((num_squares, num_squares), dtype=bool)
    for i, j in edges:
        if i == j:
            raise ValueError(f"self-loop at square {i}")
        if not (0 <= i < num_squares and 0 <= j < num_squares):
            raise ValueError(f"edge ({i}, {j}) out of range for {num_squares} squares")
        adj[i, j] = adj[j, i] = True
    return CityGraph(adj)


def complete_graph(num_squares: int) -> CityGraph:
    """Complete graph on ``num_squares`` vertices; every degree is ``I - 1``."""
    if num_squares < 2:
        raise ValueError(f"complete graph needs at least 2 squares, got {num_squares}")
    adj = ~np.eye(num_squares, dtype=bool)
    return CityGraph(adj)


def cycle_graph(num_squares: int) -> CityGraph:
    if num_squares < 3:
        raise ValueError(f"cycle graph needs at least 3 squares, got {num_squares}")
    return graph_from_edges([(i, (i + 1) % num_squares) for i in range(num_squares)])


def path_graph(num_squares: int) -> CityGraph:
    if num_squares < 2:
        raise ValueError(f"path graph needs at least 2 squares, got {num_squares}")
    return graph_from_edges([(i, i + 1) for i in range(num_squares - 1)])


def read_edge_list(path: str | Path, num_squares: int | None = None) -> CityGraph:
    """Read a text file with one ``i j`` pair per line (0-based).

    Blank lines and lines starting with ``#`` are ignored.
    """
    edges = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'i j', got {line!r}")
            edges.append((int(parts[0]), int(parts[1])))
    return graph_from_edges(edges, num_squares)


_CONSTRUCTORS = {
    "complete": complete_graph,
    "cycle": cycle_graph,
    "path": path_graph,
}


def make_graph(kind: str, size: int | None = None, path: str | Path | None = None) -> CityGraph:
    """Build a graph by constructor name (``complete``, ``cycle``, ``path``) or from an edge list."""
    if kind == "edge_list":
        if path is None:
            raise ValueError("edge_list graphs need a path")
        return read_edge_list(path, size)
    try:
        ctor = _CONSTRUCTORS[kind]
    except KeyError:
        raise ValueError(f"unknown graph kind {kind!r}; expected one of "
                         f"{sorted(_CONSTRUCTORS) + ['edge_list']}") from None
    if size is None:
        raise ValueError(f"graph kind {kind!r} needs a size")
    return ctor(int(size))


def routing_matrix(g: CityGraph) -> np.ndarray:
    """Uniform-neighbour routing: ``Q[i, j] = 1/d(i)`` if ``(i, j)`` is an edge, else 0."""
    return g.adjacency / g.degrees[:, None].astype(float)


def routing_stationary(g: CityGraph) -> np.ndarray:
    """Stationary vector of the routing chain, ``theta_i = d(i) / sum_j d(j)``."""
    if not _is_connected(g.adjacency):
        raise ConnectivityError("routing chain of a disconnected graph has no unique stationary vector")
    d = g.degrees.astype(float)
    return d / d.sum()


def check_routing_detailed_balance(Q, theta) -> float:
    """Largest ``|theta_i Q_ij - theta_j Q_ji|`` over all pairs."""
    Q = np.asarray(Q, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if Q.shape != (theta.size, theta.size):
        raise ValueError(f"Q has shape {Q.shape} but theta has length {theta.size}")
    flow = theta[:, None] * Q
    return float(np.max(np.abs(flow - flow.T)))


def service_rate(n: int, c: float) -> float:
    """Per-person departure rate ``(1 - c)**(n - 1)`` at a square holding ``n`` people."""
    if n < 1:
        raise ValueError(f"service rate undefined for an empty square (n={n})")
    if not 0.0 <= c < 1.0:
        raise ValueError(f"chat probability must lie in [0, 1), got {c}")
    return (1.0 - c) ** (n - 1)


@dataclass(frozen=True)
class ModelParams:
    """Population ``N`` and intensity ``s``; the chat probability is ``c = s / N``."""

    population: int
    intensity: float

    def __post_init__(self):
        if int(self.population) != self.population or self.population < 1:
            raise ValueError(f"population must be a positive integer, got {self.population}")
        if self.intensity < 0:
            raise ValueError(f"intensity must be nonnegative, got {self.intensity}")
        if self.intensity >= self.population:
            raise ValueError(
                f"intensity s={self.intensity} must be below the population N={self.population} "
                "so that the chat probability s/N stays below 1")

    @property
    def chat_probability(self) -> float:
        return self.intensity / self.population
