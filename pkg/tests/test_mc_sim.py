import math

import numpy as np
import pytest

from crowdfluid import (
    RunConfig,
    build_generator,
    complete_graph,
    convergence_experiment,
    empirical_stationary,
    gillespie_run,
    integrate_flow,
    path_graph,
    product_form_stationary,
    routing_matrix,
    routing_stationary,
    sup_deviation,
    total_variation,
)
from crowdfluid.fluid import Trajectory
from crowdfluid.mc_sim import SimulationTrace, lattice_state, make_rng

K2 = routing_matrix(complete_graph(2))
K3 = routing_matrix(complete_graph(3))


def check_trace(trace, Q):
    assert trace.jump_times[0] == 0.0
    assert np.all(np.diff(trace.jump_times) > 0)
    assert trace.jump_times[-1] <= trace.horizon
    assert np.all(trace.states.sum(axis=1) == trace.population)
    assert np.all(trace.states >= 0)
    diff = np.diff(trace.states, axis=0)
    assert np.all(np.abs(diff).sum(axis=1) == 2)
    src, dst = np.argmin(diff, axis=1), np.argmax(diff, axis=1)
    assert np.all(Q[src, dst] > 0)


def test_single_walker_alternates():
    trace = gillespie_run(RunConfig(1, 0.0, 50.0, 7, (1, 0)), K2)
    check_trace(trace, K2)
    expected = np.array([[1, 0], [0, 1]] * (trace.states.shape[0] // 2 + 1))[: trace.states.shape[0]]
    np.testing.assert_array_equal(trace.states, expected)


def test_single_walker_holding_times():
    trace = gillespie_run(RunConfig(1, 0.0, 20_000.0, 11, (1, 0)), K2)
    holds = np.diff(trace.jump_times)[:10_000]
    assert holds.size == 10_000
    se = 1.0 / math.sqrt(holds.size)
    assert abs(holds.mean() - 1.0) <= 3 * se


def test_same_seed_same_trace():
    cfg = RunConfig(50, 2.0, 5.0, 1234, (20, 20, 10))
    a, b = gillespie_run(cfg, K3), gillespie_run(cfg, K3)
    np.testing.assert_array_equal(a.jump_times, b.jump_times)
    np.testing.assert_array_equal(a.states, b.states)
    c = gillespie_run(RunConfig(50, 2.0, 5.0, 1235, (20, 20, 10)), K3)
    assert not np.array_equal(a.jump_times[:5], c.jump_times[:5])


def test_trace_structure_on_path_graph():
    Q = routing_matrix(path_graph(4))
    trace = gillespie_run(RunConfig(40, 3.0, 20.0, 3, (40, 0, 0, 0)), Q)
    check_trace(trace, Q)
    assert trace.num_jumps > 100


def test_documented_draw_order():
    """Re-derive the first events from the raw stream: (hold, pick) pairs, row-major rates."""
    N, s, seed = 12, 3.0, 99
    Q = routing_matrix(path_graph(3))
    state = np.array([5, 4, 3])
    trace = gillespie_run(RunConfig(N, s, 50.0, seed, tuple(state)), Q)
    u = make_rng(seed).random(40)
    t = 0.0
    for k in range(20):
        dep = state * np.where(state > 0, (1 - s / N) ** np.maximum(state - 1, 0), 0.0)
        flat = (dep[:, None] * Q).ravel()
        total = dep.sum()
        t += -math.log1p(-u[2 * k]) / total
        pick = int(np.searchsorted(np.cumsum(flat), u[2 * k + 1] * total, side="right"))
        i, j = divmod(pick, 3)
        state[i] -= 1
        state[j] += 1
        assert trace.jump_times[k + 1] == pytest.approx(t, rel=1e-12)
        np.testing.assert_array_equal(trace.states[k + 1], state)


def test_first_move_frequencies_match_generator():
    Q = routing_matrix(path_graph(3))
    N, s, start = 6, 2.0, (3, 2, 1)
    gen = build_generator(N, s / N, Q)
    src = gen.index_of(start)
    out = gen.source == src
    rates = gen.rates[out]
    expected = rates / rates.sum()
    targets = [tuple(gen.states[k]) for k in gen.target[out]]
    runs = 6000
    counts = dict.fromkeys(targets, 0)
    for seed in range(runs):
        trace = gillespie_run(RunConfig(N, s, 0.2, seed, start), Q)
        if trace.num_jumps:
            counts[tuple(trace.states[1])] += 1
    runs = sum(counts.values())
    freq = np.array([counts[t] for t in targets]) / runs
    se = np.sqrt(expected * (1 - expected) / runs)
    assert np.all(np.abs(freq - expected) <= 4 * se)


def test_run_config_validation():
    with pytest.raises(ValueError):
        RunConfig(3, 3.0, 1.0, 0, (1, 1, 1))
    with pytest.raises(ValueError):
        RunConfig(3, 1.0, 0.0, 0, (1, 1, 1))
    with pytest.raises(ValueError):
        RunConfig(3, 1.0, 1.0, 0, (1, 1, 2))


def test_sup_deviation_constant_case():
    trace = SimulationTrace(np.array([0.0]), np.array([[2, 2, 2]]), 6, 5.0)
    flow = integrate_flow(np.full(3, 1 / 3), 2.0, K3, 5.0)
    assert sup_deviation(trace, flow) <= 1e-15


def test_sup_deviation_piecewise_constant_lookup():
    trace = SimulationTrace(np.array([0.0, 1.0]), np.array([[2, 0], [1, 1]]), 2, 2.0)
    flow = Trajectory(np.array([0.0, 0.5, 1.0, 2.0]), np.full((4, 2), 0.5))
    # at t = 1.0 the trace has already jumped
    assert sup_deviation(trace, flow) == 0.5
    flow_early = Trajectory(np.array([0.0, 0.999]), np.full((2, 2), 0.5))
    assert sup_deviation(trace, flow_early) == 0.5
    flow_late = Trajectory(np.array([1.0, 2.0]), np.full((2, 2), 0.5))
    assert sup_deviation(trace, flow_late) == 0.0


def test_sup_deviation_bounds_and_errors():
    trace = gillespie_run(RunConfig(30, 2.0, 3.0, 5, (30, 0, 0)), K3)
    flow = integrate_flow([0.0, 0.0, 1.0], 2.0, K3, 3.0)
    assert 0.0 <= sup_deviation(trace, flow) <= 1.0
    long_flow = integrate_flow([0.0, 0.0, 1.0], 2.0, K3, 4.0)
    with pytest.raises(ValueError):
        sup_deviation(trace, long_flow)


def test_lattice_state():
    assert lattice_state([0.5, 0.25, 0.25], 8) == (4, 2, 2)
    with pytest.raises(ValueError, match="N=100"):
        lattice_state([1 / 3] * 3, 100)
    assert lattice_state([1 / 3] * 3, 100, "largest_remainder") == (34, 33, 33)
    assert sum(lattice_state([0.15, 0.15, 0.7], 7, "largest_remainder")) == 7


def test_convergence_experiment_rows():
    rows = convergence_experiment([60], 2.0, K3, [0.5, 0.25, 0.25], 2.0, 3, base_seed=10, dt=1e-2)
    assert len(rows) == 1
    row = rows[0]
    assert row.N == 60 and len(row.deviations) == 3
    assert all(0 <= d <= 1 for d in row.deviations)
    assert row.q25 <= row.median_dev <= row.q75


def test_convergence_experiment_sorted_and_validated():
    rows = convergence_experiment([80, 40], 2.0, K3, [0.5, 0.25, 0.25], 1.0, 3, dt=1e-2)
    assert [r.N for r in rows] == [40, 80]
    with pytest.raises(ValueError, match="N=10"):
        convergence_experiment([8, 10], 2.0, K3, [0.5, 0.25, 0.25], 1.0, 3)
    with pytest.raises(ValueError):
        convergence_experiment([8], 2.0, K3, [0.5, 0.25, 0.25], 1.0, 2)


def test_empirical_stationary_single_sample():
    emp = empirical_stationary(6, 2.0, K3, burn_in=1.0, num_samples=1, seed=3)
    assert emp.states.shape == (1, 3)
    assert emp.probabilities.tolist() == [1.0]


def test_empirical_stationary_matches_exact_law():
    N, s = 6, 2.0
    emp = empirical_stationary(N, s, K3, num_samples=100_000, seed=2024)
    assert emp.probabilities.sum() == pytest.approx(1.0, abs=1e-12)
    exact = product_form_stationary(N, routing_stationary(complete_graph(3)), s / N)
    assert total_variation(emp.aligned_with(exact.states), exact) <= 0.05


def test_empirical_stationary_validation():
    with pytest.raises(ValueError):
        empirical_stationary(6, 2.0, K3, burn_in=0.0)
    with pytest.raises(ValueError):
        empirical_stationary(6, 2.0, K3, num_samples=0)
