from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from omrr.hardness import HardnessParams, hardness_instance, uniform_lp_solution
from omrr.lp import (
    LpSolution,
    build_benchmark_lp,
    build_window_lp,
    check_solution,
    resource_load,
    solve_instance,
    solve_lp,
    write_lp_format,
)
from omrr.model import Instance, OccupationDistribution, fixture_two_by_three, single_edge_instance
from omrr.oracle import random_small_instance
from omrr.solvers import HighsSolver


def test_single_edge_rows_deterministic_two():
    lp = build_benchmark_lp(single_edge_instance(2, 2), compact=False)
    assert lp.primary_shape == (1, 2)
    coefs, rhs = lp.row("resource", 0, 1)
    assert coefs == {("x", 0, 0): 1.0, ("x", 0, 1): 1.0} and rhs == 1.0
    coefs, rhs = lp.row("arrival", 0, 1)
    assert coefs == {("x", 0, 1): 1.0} and rhs == 1.0


def test_single_edge_rows_deterministic_one():
    lp = build_benchmark_lp(single_edge_instance(2, 1), compact=False)
    coefs, rhs = lp.row("resource", 0, 1)
    assert coefs == {("x", 0, 1): 1.0} and rhs == 1.0


@pytest.mark.parametrize("c, expected", [(2, 1.0), (1, 2.0)])
def test_single_edge_objective(c, expected):
    sol = solve_instance(single_edge_instance(2, c))
    assert sol.objective == pytest.approx(expected, abs=1e-9)


def test_zero_rate_rows_still_emitted():
    inst = fixture_two_by_three()
    rates = inst.arrivals.matrix.copy()
    rates[0, 2] = 0.0
    lp = build_benchmark_lp(inst.with_arrivals(rates), compact=False)
    coefs, rhs = lp.row("arrival", 0, 2)
    assert rhs == 0.0 and coefs
    sol = solve_lp(lp)
    assert np.all(sol.x[inst.edges_of_type(0), 2] <= 1e-9)


def test_compact_and_plain_forms_agree(family):
    for inst in family[:20]:
        a = solve_lp(build_benchmark_lp(inst, compact=False)).objective
        b = solve_lp(build_benchmark_lp(inst, compact=True)).objective
        assert a == pytest.approx(b, abs=1e-7)


def test_solver_output_passes_residual_check(family):
    for inst in family[:30]:
        sol = solve_instance(inst)
        rep = check_solution(inst, sol)
        assert rep.passed, rep
        assert rep.objective == pytest.approx(sol.objective, abs=1e-7)
        assert sol.x.min() >= -1e-7 and sol.x.max() <= 1 + 1e-7


def test_all_ones_fails_reuse_row():
    inst = single_edge_instance(2, 2)
    rep = check_solution(inst, np.ones((1, 2)))
    assert not rep.passed
    assert rep.resource == pytest.approx(1.0)
    assert rep.worst["resource"]["round"] == 2


def test_zero_solution_passes():
    inst = fixture_two_by_three()
    rep = check_solution(inst, np.zeros((inst.n_edges, inst.horizon)))
    assert rep.passed and rep.objective == 0.0


def _direct_load(inst: Instance, x: np.ndarray) -> np.ndarray:
    # straight from the definition, one term at a time
    U, T = inst.n_resources, inst.horizon
    load = np.zeros((U, T))
    for e in range(inst.n_edges):
        u = inst.edge_u[e]
        for t in range(1, T + 1):
            load[u, t - 1] += x[e, t - 1]
            for t2 in range(1, t):
                load[u, t - 1] += x[e, t2 - 1] * inst.occupation(e, t2).tail(t - t2)
    return load


@given(st.integers(0, 10_000))
@settings(max_examples=25)
def test_resource_load_matches_definition(seed):
    rng = np.random.default_rng(seed)
    inst = random_small_instance(rng)
    x = rng.random((inst.n_edges, inst.horizon))
    np.testing.assert_allclose(resource_load(inst, x), _direct_load(inst, x), atol=1e-12)


def test_time_sensitive_constraint_uses_match_round_distribution():
    T = 3
    short = OccupationDistribution.point_mass(1, T)
    long = OccupationDistribution.point_mass(3, T)
    occ = {(("u", "v"), t): (long if t == 1 else short) for t in range(1, T + 1)}
    inst = Instance.from_edges(["u"], ["v"], {("u", "v"): 1.0}, T, np.ones((1, T)), occ)
    lp = build_benchmark_lp(inst, time_sensitive=True, compact=False)
    coefs, _ = lp.row("resource", 0, 2)
    assert coefs == {("x", 0, 0): 1.0, ("x", 0, 2): 1.0}
    with pytest.raises(ValueError):
        build_benchmark_lp(inst, time_sensitive=False)
    sol = solve_instance(inst)
    assert sol.time_sensitive
    assert check_solution(inst, sol).passed


@given(st.integers(0, 10_000), st.floats(0.1, 20.0))
@settings(max_examples=15)
def test_weight_scaling(seed, lam):
    inst = random_small_instance(np.random.default_rng(seed))
    base = solve_instance(inst).objective
    scaled = solve_instance(inst.with_weights(inst.weights * lam)).objective
    assert scaled == pytest.approx(lam * base, rel=1e-7, abs=1e-7)


@given(st.integers(0, 10_000), st.integers(0, 1000))
@settings(max_examples=15)
def test_rate_monotonicity(seed, which):
    rng = np.random.default_rng(seed)
    inst = random_small_instance(rng)
    rates = inst.arrivals.matrix.copy()
    v, t = np.unravel_index(which % rates.size, rates.shape)
    room = 1.0 - rates[:, t].sum()
    rates[v, t] += room * 0.9
    assert solve_instance(inst.with_arrivals(rates)).objective >= solve_instance(inst).objective - 1e-9


@pytest.mark.parametrize("K, n", [(1, 2), (2, 3), (2, 5), (3, 6)])
def test_hardness_lp_matches_window_form(K, n):
    """Rows t >= K coincide with the windows; earlier rows are implied by the first window."""
    bench = build_benchmark_lp(hardness_instance(HardnessParams(K, n)), compact=False)
    window = build_window_lp(K, n)
    for u in range(K):
        for l0 in range(n - K + 1):
            assert bench.row("resource", u, l0 + K - 1) == window.row("window", u, l0)
        first, _ = window.row("window", u, 0)
        for t0 in range(K - 1):
            coefs, _ = bench.row("resource", u, t0)
            assert set(coefs) <= set(first)
    for v in range(n * n):
        for t0 in range(n):
            assert bench.row("arrival", v, t0) == window.row("arrival", v, t0)
    a = solve_lp(bench).objective
    b = solve_lp(window).objective
    c = solve_lp(build_window_lp(K, n, lump_types=True)).objective
    assert a == pytest.approx(n, abs=1e-6) and b == pytest.approx(n, abs=1e-6) and c == pytest.approx(n, abs=1e-6)


def test_uniform_hardness_solution_is_feasible_and_optimal():
    p = HardnessParams(2, 10)
    inst = hardness_instance(p)
    sol = uniform_lp_solution(p)
    rep = check_solution(inst, sol)
    assert rep.passed
    assert rep.objective == pytest.approx(10.0)
    assert solve_instance(inst).objective == pytest.approx(10.0, abs=1e-6)


def test_solution_round_trip(tmp_path):
    sol = solve_instance(fixture_two_by_three())
    sol.save(tmp_path / "s.json")
    back = LpSolution.load(tmp_path / "s.json")
    np.testing.assert_array_equal(back.x, sol.x)
    assert back.objective == sol.objective


def test_lp_export_is_readable(tmp_path):
    lp = build_benchmark_lp(single_edge_instance(2, 2), compact=False)
    path = tmp_path / "m.lp"
    write_lp_format(lp, path)
    lines = [ln.strip() for ln in path.read_text().splitlines() if not ln.startswith("\\")]
    assert lines[0] == "Maximize" and lines[-1] == "End"
    assert "Subject To" in lines and "Bounds" in lines
    assert "r3: 1 x_0_0 + 1 x_0_1 <= 1" in lines


def test_injected_solver_is_used():
    calls = []

    class Recording(HighsSolver):
        def solve(self, lp):
            calls.append(lp.n_vars)
            return super().solve(lp)

    sol = solve_instance(single_edge_instance(2, 2), solver=Recording())
    assert calls == [2] and sol.objective == pytest.approx(1.0)
