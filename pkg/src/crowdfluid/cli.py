"""Batch command line for the crowd model experiments.

Each subcommand reads one JSON config (``--config``), applies flag overrides,
writes CSV files into ``--out`` and exits with

* 0 when every check passed,
* 1 when checks ran but a tolerance was exceeded,
* 2 on configuration or capacity errors.
"""
from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import CapacityError, CrowdModelError
from .exact_ctmc import (
    build_generator,
    check_detailed_balance,
    concentration_mass,
    distance_to_set,
    occupancy_pushforward,
    product_form_stationary,
    stationary_global_balance,
    total_variation,
)
from .fluid import critical_s, find_stationary_points, integrate_flow, kurtz_conditions_report
from .graph_model import (
    ModelParams,
    check_routing_detailed_balance,
    make_graph,
    routing_matrix,
    routing_stationary,
)
from .io import (
    export_bifurcation,
    export_distribution,
    export_generator,
    export_stationary_points,
    export_trajectory,
    fmt,
    run_metadata,
    write_csv,
)
from .mc_sim import convergence_experiment

log = logging.getLogger("crowdfluid")

COMMANDS = ("verify", "fluid", "critical", "concentration", "convergence", "bifurcation")

DEFAULT_TOLERANCES = {
    "product_form_tv": 1e-10,
    "detailed_balance": 1e-12,
    "routing_detailed_balance": 1e-14,
    "generator_row_sum": 1e-12,
    "stationary_residual": 1e-10,
}

BASE_DEFAULTS = {
    "graph": {"kind": "complete", "size": 3, "path": None},
    "s": 2.0,
    "N": 6,
    "N_list": [15, 30, 60, 120],
    "T": 10.0,
    "dt": 1e-3,
    "store_every": 10,
    "epsilon": [0.1],
    "num_seeds": 20,
    "seed": 0,
    "y0": None,
    "rounding": "largest_remainder",
    "s_grid": {"start": 2.0, "stop": 3.5, "step": 0.01},
    "tolerances": DEFAULT_TOLERANCES,
    "out": "results",
}

COMMAND_DEFAULTS = {
    "verify": {},
    "fluid": {"T": 30.0, "y0": [0.8, 0.1, 0.1]},
    "critical": {},
    "concentration": {},
    "convergence": {"N_list": [100, 400, 1600]},
    "bifurcation": {},
}


class ConfigError(CrowdModelError, ValueError):
    """Invalid or inconsistent experiment configuration."""


def _merge(base: dict, update: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        if key not in out:
            raise ConfigError(f"unknown config key {path + key!r}")
        if isinstance(out[key], dict) and isinstance(value, dict):
            out[key] = _merge(out[key], value, f"{path}{key}.")
        else:
            out[key] = value
    return out


def load_config(command: str, args: argparse.Namespace) -> dict:
    cfg = _merge(BASE_DEFAULTS, COMMAND_DEFAULTS[command])
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        with open(path) as fh:
            doc = json.load(fh)
        experiment = doc.pop("experiment", command)
        if experiment != command:
            raise ConfigError(f"config is for experiment {experiment!r}, not {command!r}")
        cfg = _merge(cfg, doc)
    overrides: dict = {}
    for flag, key in (("s", "s"), ("N", "N"), ("N_list", "N_list"), ("T", "T"), ("dt", "dt"),
                      ("epsilon", "epsilon"), ("num_seeds", "num_seeds"), ("seed", "seed"),
                      ("y0", "y0"), ("out", "out")):
        value = getattr(args, flag)
        if value is not None:
            overrides[key] = value
    graph = {}
    if args.graph is not None:
        graph["kind"] = args.graph
    if args.size is not None:
        graph["size"] = args.size
    if args.edge_list is not None:
        graph.update(kind="edge_list", path=args.edge_list)
        # the default size belongs to the built-in graphs; an edge list sizes itself
        graph.setdefault("size", None)
    if graph:
        overrides["graph"] = graph
    cfg = _merge(cfg, overrides)
    for item in args.set or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        nested: dict = value
        for part in reversed(key.split(".")):
            nested = {part: nested}
        cfg = _merge(cfg, nested)
    if isinstance(cfg["epsilon"], (int, float)):
        cfg["epsilon"] = [cfg["epsilon"]]
    _validate(cfg)
    cfg["experiment"] = command
    return cfg


def _validate(cfg: dict) -> None:
    g = cfg["graph"]
    if g["kind"] == "edge_list":
        if not g.get("path") or not Path(g["path"]).exists():
            raise ConfigError(f"edge list file {g.get('path')!r} does not exist")
    if cfg["s"] < 0:
        raise ConfigError("s must be nonnegative")
    if cfg["dt"] <= 0 or cfg["T"] <= 0 or cfg["dt"] > cfg["T"]:
        raise ConfigError("need 0 < dt <= T")
    if any(e <= 0 for e in cfg["epsilon"]):
        raise ConfigError("epsilon values must be positive")
    if int(cfg["num_seeds"]) < 1:
        raise ConfigError("num_seeds must be positive")
    step = cfg["s_grid"]["step"]
    if step <= 0 or cfg["s_grid"]["stop"] < cfg["s_grid"]["start"]:
        raise ConfigError("s_grid needs step > 0 and stop >= start")


def _graph(cfg):
    g = cfg["graph"]
    return make_graph(g["kind"], g.get("size"), g.get("path"))


def _meta(cfg, **extra):
    meta = run_metadata(cfg, cfg.get("seed"))
    meta.update(extra)
    return meta


def _y0(cfg, I):
    if cfg["y0"] is None:
        return np.full(I, 1.0 / I)
    y0 = np.asarray(cfg["y0"], dtype=float)
    if y0.shape != (I,):
        raise ConfigError(f"y0 has {y0.size} entries but the graph has {I} squares")
    if np.any(y0 < 0) or abs(y0.sum() - 1.0) > 1e-9:
        raise ConfigError("y0 must lie on the simplex")
    return y0


def run_verify(cfg: dict, out: Path) -> int:
    """Product form vs global balance, detailed balance and Kurtz conditions at one ``N``."""
    tol = cfg["tolerances"]
    g = _graph(cfg)
    Q = routing_matrix(g)
    theta = routing_stationary(g)
    params = ModelParams(int(cfg["N"]), float(cfg["s"]))
    N, s, c = params.population, params.intensity, params.chat_probability

    gen = build_generator(N, c, Q)
    exact = stationary_global_balance(gen)
    closed = product_form_stationary(N, theta, c, states=gen.states)
    max_rate = float(gen.rates.max()) if gen.rates.size else 1.0
    row_sum = float(np.max(np.abs(gen.row_sums()))) / max_rate
    kurtz = kurtz_conditions_report(N, s, Q)

    checks = [
        ("generator_row_sum", row_sum, tol["generator_row_sum"]),
        ("product_form_tv", total_variation(exact, closed), tol["product_form_tv"]),
        ("detailed_balance", check_detailed_balance(exact, gen), tol["detailed_balance"]),
        ("routing_detailed_balance", check_routing_detailed_balance(Q, theta),
         tol["routing_detailed_balance"]),
        ("kurtz_drift_gap", kurtz.drift_gap, kurtz.drift_gap_bound),
        ("kurtz_jump_rate", kurtz.max_jump_rate, kurtz.jump_rate_bound),
        ("kurtz_large_jump", kurtz.large_jump_term, 0.0),
    ]
    rows = [(name, value, bound, value <= bound) for name, value, bound in checks]
    meta = _meta(cfg)
    write_csv(out / "verify.csv", ["check", "value", "tolerance", "passed"], rows, meta)
    export_distribution(out / "stationary.csv", closed, meta)
    export_generator(out / "generator.csv", gen, meta)
    for name, value, bound, ok in rows:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {value:.3e} (tolerance {bound:.3e})")
    return 0 if all(r[3] for r in rows) else 1


def _weighted_quantiles(values, weights, qs):
    order = np.argsort(values, kind="stable")
    v, w = values[order], weights[order]
    cum = np.cumsum(w)
    return [float(v[min(np.searchsorted(cum, q * cum[-1]), v.size - 1)]) for q in qs]


def run_concentration(cfg: dict, out: Path) -> int:
    """Mass of the exact stationary law near the fluid fixed points, per ``N``."""
    g = _graph(cfg)
    Q = routing_matrix(g)
    theta = routing_stationary(g)
    s = float(cfg["s"])
    points = find_stationary_points(s, Q, residual_tol=cfg["tolerances"]["stationary_residual"])
    meta = _meta(cfg)
    export_stationary_points(out / "stationary_points.csv", points, meta)
    if len(points) == 0:
        print("FAIL no stationary point found; root finding may have failed", file=sys.stderr)
        return 1
    rows = []
    for N in sorted(int(n) for n in cfg["N_list"]):
        params = ModelParams(N, s)
        dist = occupancy_pushforward(product_form_stationary(N, theta, params.chat_probability))
        d = distance_to_set(dist.points, points)
        mean_d = float(dist.probabilities @ d)
        q25, q50, q75 = _weighted_quantiles(d, dist.probabilities, (0.25, 0.5, 0.75))
        for eps in cfg["epsilon"]:
            mass = concentration_mass(dist, points, float(eps))
            rows.append((N, float(eps), mass, mean_d, q25, q50, q75))
            print(f"N={N} eps={eps}: mass near S {mass:.6f}, mean distance {mean_d:.6f}")
    write_csv(out / "concentration.csv",
              ["N", "epsilon", "mass_near_S", "mean_distance", "dist_q25", "dist_median", "dist_q75"],
              rows, meta)
    return 0


def s_grid(start: float, stop: float, step: float) -> np.ndarray:
    n = int(np.floor((stop - start) / step + 1e-9))
    return np.round(start + step * np.arange(n + 1), 12)


def bifurcation_sweep(Q, grid):
    return [(float(s), find_stationary_points(float(s), Q, strategy="two_level")) for s in grid]


def transition_bracket(sweep):
    """First ``(s_prev, s_next)`` where the fixed-point count rises above 1."""
    for (s0, p0), (s1, p1) in zip(sweep, sweep[1:]):
        if len(p0) <= 1 < len(p1):
            return s0, s1
    return None


def run_bifurcation(cfg: dict, out: Path) -> int:
    g = _graph(cfg)
    if not g.is_regular:
        raise ConfigError("the bifurcation sweep uses the two-level reduction and needs a regular graph")
    Q = routing_matrix(g)
    grid = s_grid(**cfg["s_grid"])
    sweep = bifurcation_sweep(Q, grid)
    bracket = transition_bracket(sweep)
    meta = _meta(cfg, bracket="none" if bracket is None else f"{bracket[0]!r},{bracket[1]!r}")
    export_bifurcation(out / "bifurcation.csv", sweep, meta)
    if bracket is None:
        print("no transition above one stationary point on this grid")
    else:
        print(f"stationary-point count first exceeds 1 between s={bracket[0]} and s={bracket[1]}")
    return 0


def run_fluid(cfg: dict, out: Path) -> int:
    g = _graph(cfg)
    Q = routing_matrix(g)
    y0 = _y0(cfg, g.num_squares)
    s = float(cfg["s"])
    traj = integrate_flow(y0, s, Q, float(cfg["T"]), float(cfg["dt"]),
                          store_every=int(cfg["store_every"]))
    points = find_stationary_points(s, Q, residual_tol=cfg["tolerances"]["stationary_residual"])
    meta = _meta(cfg)
    export_trajectory(out / "trajectory.csv", traj, meta)
    export_stationary_points(out / "stationary_points.csv", points, meta)
    final = ", ".join(f"{v:.10f}" for v in traj.final)
    print(f"y(T={traj.horizon}) = ({final})")
    if len(points):
        print(f"distance to nearest stationary point: {float(distance_to_set(traj.final, points)[0]):.3e}")
    return 0


def run_convergence(cfg: dict, out: Path) -> int:
    g = _graph(cfg)
    Q = routing_matrix(g)
    y0 = _y0(cfg, g.num_squares)
    rows = convergence_experiment([int(n) for n in cfg["N_list"]], float(cfg["s"]), Q, y0,
                                  float(cfg["T"]), int(cfg["num_seeds"]),
                                  base_seed=int(cfg["seed"]), dt=float(cfg["dt"]),
                                  rounding=cfg["rounding"])
    meta = _meta(cfg)
    write_csv(out / "convergence.csv", ["N", "median_dev", "q25", "q75"],
              [(r.N, r.median_dev, r.q25, r.q75) for r in rows], meta)
    write_csv(out / "convergence_runs.csv", ["N", "seed", "deviation"],
              [(r.N, int(cfg["seed"]) + k, d) for r in rows for k, d in enumerate(r.deviations)], meta)
    for r in rows:
        print(f"N={r.N}: median sup-deviation {r.median_dev:.5f} (IQR {r.q25:.5f}-{r.q75:.5f})")
    return 0


def run_critical(cfg: dict, out: Path) -> int:
    I = _graph(cfg).num_squares
    crit = critical_s(I)
    print(f"s* = {crit.value!r} (K={crit.K}, alpha={crit.alpha!r}"
          f"{', at alpha->1 boundary' if crit.at_boundary else ''})")
    header = ["I", "s_star", "K", "alpha", "at_boundary"]
    row = (I, crit.value, crit.K, crit.alpha, crit.at_boundary)
    print(",".join(header))
    print(",".join(fmt(v) for v in row))
    write_csv(out / "critical.csv", header, [row], _meta(cfg))
    return 0


RUNNERS = {
    "verify": run_verify,
    "fluid": run_fluid,
    "critical": run_critical,
    "concentration": run_concentration,
    "convergence": run_convergence,
    "bifurcation": run_bifurcation,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config document")
    common.add_argument("--out", help="output directory (default: results)")
    common.add_argument("--seed", type=int, help="base seed (u64)")
    common.add_argument("--graph", choices=["complete", "cycle", "path"], help="graph constructor")
    common.add_argument("--size", type=int, help="number of squares for the graph constructor")
    common.add_argument("--edge-list", dest="edge_list", help="edge-list file, one 'i j' per line")
    common.add_argument("--s", type=float, help="intensity s (chat probability s/N)")
    common.add_argument("--N", type=int, help="population for exact analysis")
    common.add_argument("--N-list", dest="N_list", type=int, nargs="+", help="populations to sweep")
    common.add_argument("--T", type=float, help="time horizon")
    common.add_argument("--dt", type=float, help="integration step")
    common.add_argument("--epsilon", type=float, nargs="+", help="concentration radii")
    common.add_argument("--num-seeds", dest="num_seeds", type=int, help="simulation runs per N")
    common.add_argument("--y0", type=float, nargs="+", help="initial occupancy vector")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override any config key (dotted for nested, JSON values)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="crowdfluid", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"crowdfluid {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "verify": "exact stationary law, reversibility and Kurtz-condition checks",
        "fluid": "integrate the fluid ODE and list its fixed points",
        "critical": "critical intensity s* for a regular graph",
        "concentration": "mass of the exact stationary law near the fixed points",
        "convergence": "simulated paths against the fluid path",
        "bifurcation": "count fixed points over an s grid",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.command, args)
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        return RUNNERS[args.command](cfg, out)
    except CapacityError as exc:
        print(f"error: {exc}. Reduce N, or use the 'convergence' simulation for large populations.",
              file=sys.stderr)
        return 2
    except (CrowdModelError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
