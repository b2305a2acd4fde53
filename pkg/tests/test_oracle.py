from __future__ import annotations

import numpy as np
import pytest

from omrr.lp import solve_instance
from omrr.model import Instance, OccupationDistribution, fixture_two_by_three, single_edge_instance
from omrr.oracle import BudgetExceeded, SmallInstanceBound, offline_optimal, random_small_instance, small_family
from omrr.policies import make_policy
from omrr.sim import evaluate


@pytest.mark.parametrize("c, expected", [(2, 1.0), (1, 2.0)])
def test_single_edge_values(c, expected):
    assert offline_optimal(single_edge_instance(2, c)) == pytest.approx(expected)


def test_unit_occupation_closed_form():
    """With occupations <= 1 nothing is ever blocked: each round collects the best edge of its arrival."""
    rng = np.random.default_rng(4)
    for _ in range(10):
        inst = random_small_instance(rng)
        one = OccupationDistribution.point_mass(1, inst.horizon)
        inst = Instance.from_edges(
            list(inst.resources),
            list(inst.request_types),
            {inst.edge_label(e): float(inst.weights[e]) for e in range(inst.n_edges)},
            inst.horizon,
            inst.arrivals.matrix,
            one,
        )
        best = np.zeros(inst.n_types)
        np.maximum.at(best, inst.edge_v, inst.weights)
        expected = float((inst.arrivals.matrix * best[:, None]).sum())
        assert offline_optimal(inst) == pytest.approx(expected, abs=1e-12)


def test_two_resource_fixture_below_lp():
    base = fixture_two_by_three()
    T = 3
    inst = Instance.from_edges(
        ["u1", "u2"],
        ["a", "b"],
        {("u1", "a"): 3.0, ("u1", "b"): 1.0, ("u2", "b"): 2.0},
        T,
        base.arrivals.matrix[:2, :T],
        OccupationDistribution.from_mapping({1: 0.5, 2: 0.5}, T),
    )
    assert offline_optimal(inst) <= solve_instance(inst).objective + 1e-6


def test_deterministic_and_family_bounds():
    fam = small_family(8, seed=77)
    for inst in fam:
        a = offline_optimal(inst)
        assert a == offline_optimal(inst)
        assert a <= solve_instance(inst).objective + 1e-6


def test_no_online_policy_beats_offline():
    for inst in small_family(6, seed=3):
        opt = offline_optimal(inst)
        sol = solve_instance(inst)
        for name in ("greedy", "alg-lp"):
            rep = evaluate(inst, make_policy(name), 2000, seed=1, lp=sol)
            assert rep.mean_weight <= opt + 3 * rep.stderr + 1e-12


def test_budget_guard():
    inst = fixture_two_by_three()
    with pytest.raises(BudgetExceeded):
        offline_optimal(inst, SmallInstanceBound(max_types=2))
    with pytest.raises(BudgetExceeded):
        offline_optimal(inst, SmallInstanceBound(budget=10))
