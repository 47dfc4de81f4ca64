"""CSV export with a metadata header block.

Every file starts with ``# key: value`` lines (artifact version, generator,
seed, config echo), then a header row, then data. Floats are written with
``repr`` (shortest round-trip), separator ``,``, LF line endings.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from . import __version__
from .mc_sim import GENERATOR_NAME

__all__ = [
    "fmt",
    "run_metadata",
    "write_csv",
    "read_csv",
    "export_distribution",
    "export_generator",
    "export_trajectory",
    "export_stationary_points",
    "export_bifurcation",
    "export_trace",
]


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def run_metadata(config: dict | None = None, seed: int | None = None) -> dict[str, Any]:
    meta: dict[str, Any] = {"artifact": f"crowdfluid {__version__}", "generator": GENERATOR_NAME}
    if seed is not None:
        meta["seed"] = int(seed)
    if config is not None:
        meta["config"] = json.dumps(config, sort_keys=True, default=_json_default)
    return meta


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer, np.floating)):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"{type(obj).__name__} is not JSON serialisable")


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence], metadata: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if metadata is None:
        metadata = run_metadata()
    with open(path, "w", newline="") as fh:
        for key, value in metadata.items():
            fh.write(f"# {key}: {value}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])
    return path


def read_csv(path) -> tuple[dict[str, str], list[str], list[list[str]]]:
    """Return ``(metadata, header, rows)``; values stay strings."""
    meta = {}
    body = []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("# ") and not body:
                key, _, value = line[2:].rstrip("\n").partition(": ")
                meta[key] = value
            else:
                body.append(line)
    reader = csv.reader(body)
    header = next(reader)
    return meta, header, [row for row in reader]


def export_distribution(path, dist, metadata=None) -> Path:
    rows = (("-".join(str(int(n)) for n in state), p)
            for state, p in zip(dist.states, dist.probabilities))
    return write_csv(path, ["state", "probability"], rows, metadata)


def export_generator(path, gen, metadata=None) -> Path:
    rows = zip(gen.source, gen.target, gen.rates)
    return write_csv(path, ["from", "to", "rate"], rows, metadata)


def export_trajectory(path, traj, metadata=None) -> Path:
    I = traj.points.shape[1]
    header = ["t"] + [f"y_{i}" for i in range(I)]
    rows = ([t, *y] for t, y in zip(traj.times, traj.points))
    return write_csv(path, header, rows, metadata)


def export_stationary_points(path, point_set, metadata=None) -> Path:
    I = point_set.points.shape[1] if len(point_set) else 0
    header = ["point_id", "residual"] + [f"y_{i}" for i in range(I)]
    rows = ([k, r, *y] for k, (r, y) in enumerate(zip(point_set.residuals, point_set.points)))
    return write_csv(path, header, rows, metadata)


def export_bifurcation(path, sweep, metadata=None) -> Path:
    """``sweep`` is a sequence of ``(s, point_set)`` pairs."""
    rows = ([s, len(ps), json.dumps([[float(v) for v in y] for y in ps.points])]
            for s, ps in sweep)
    return write_csv(path, ["s", "num_points", "points_json"], rows, metadata)


def export_trace(path, trace, metadata=None) -> Path:
    I = trace.states.shape[1]
    header = ["t"] + [f"n_{i}" for i in range(I)]
    rows = ([t, *n] for t, n in zip(trace.jump_times, trace.states))
    return write_csv(path, header, rows, metadata)
