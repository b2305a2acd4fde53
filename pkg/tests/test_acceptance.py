"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line."""

from __future__ import annotations

import time

import numpy as np
import pytest

from omrr.attenuation import beta_exact, beta_monte_carlo
from omrr.cli import main
from omrr.data import SCENARIOS, build_experiment_instance, parse_trips, split_days, synth_trips, train
from omrr.hardness import HardnessParams, hardness_bound, hardness_instance, hardness_lp_objective, optimal_alpha, recursion_evaluate
from omrr.lp import solve_instance
from omrr.model import Instance, OccupationDistribution
from omrr.oracle import offline_optimal
from omrr.policies import make_policy
from omrr.sim import edge_match_frequency, evaluate


@pytest.fixture
def report(capsys):
    def emit(n: int, title: str, passed: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\nACCEPTANCE {n} [{'PASS' if passed else 'FAIL'}] {title}: {detail}")
        assert passed, detail

    return emit


def test_1_lp_upper_bounds_offline_optimum(family, report):
    start = time.perf_counter()
    gaps = []
    for inst in family:
        assert inst.n_resources <= 2 and inst.n_types <= 3 and inst.horizon <= 5
        assert max(d.support().size for d in inst.occupations) <= 3
        gaps.append(solve_instance(inst).objective + 1e-6 - offline_optimal(inst))
    elapsed = time.perf_counter() - start
    ok = len(family) >= 50 and min(gaps) >= 0 and elapsed <= 120
    report(1, "offline optimum <= LP + 1e-6", ok,
           f"{len(family)} instances, min slack {min(gaps):.3g}, {elapsed:.1f}s (limit 120s)")


def test_2_adap_valid_at_half(family, report):
    start = time.perf_counter()
    S = 10_000
    worst_beta, worst_z = 1.0, 0.0
    for i, inst in enumerate(family):
        sol = solve_instance(inst)
        ex = beta_exact(inst, sol, gamma=0.5).beta
        mc = beta_monte_carlo(inst, sol, gamma=0.5, samples=S, seed=i).beta
        # binomial standard error at the exact value; the 1/S floor covers values within 1/S of 0 or 1
        se = np.sqrt(np.maximum(ex * (1 - ex), 1.0 / S) / S)
        worst_beta = min(worst_beta, float(ex.min()))
        worst_z = max(worst_z, float(np.max(np.abs(mc - ex) / se)))
    elapsed = time.perf_counter() - start
    ok = worst_beta >= 0.5 - 1e-12 and worst_z <= 4 and elapsed <= 300
    report(2, "beta_exact >= 1/2 and Monte-Carlo within 4 se", ok,
           f"min beta {worst_beta:.4f}, max |z| {worst_z:.2f}, {elapsed:.1f}s (limit 300s)")


def one_resource_fixture() -> Instance:
    T = 3
    rates = np.array([[0.5, 0.3, 0.6], [0.4, 0.5, 0.2]])
    occ = OccupationDistribution.from_mapping({1: 0.4, 2: 0.6}, T)
    return Instance.from_edges(["u"], ["a", "b"], {("u", "a"): 2.0, ("u", "b"): 1.0}, T, rates, occ, name="one-resource-T3")


def test_3_unconditional_sampling_rate(report):
    inst = one_resource_fixture()
    sol = solve_instance(inst)
    beta = beta_exact(inst, sol, gamma=0.5)
    n = 200_000
    freq = edge_match_frequency(inst, make_policy("adap", gamma=0.5), n, seed=17, lp=sol, beta=beta)
    target = 0.5 * sol.x
    se = np.sqrt(target * (1 - target) / n)
    z = np.where(target > 0, np.abs(freq - target) / np.where(se > 0, se, 1), np.where(freq > 0, np.inf, 0))
    ok = bool(np.all(z <= 4)) and np.count_nonzero(target) >= 3
    report(3, "ADAP match frequency = gamma * x*", ok,
           f"{np.count_nonzero(target)} positive (e,t) cells, max |z| {z.max():.2f} over {n} episodes")


def test_4_adap_ratio_at_desk_scale(family, report):
    worst = np.inf
    for i, inst in enumerate(family):
        sol = solve_instance(inst)
        beta = beta_exact(inst, sol, gamma=0.5)
        rep = evaluate(inst, make_policy("adap", gamma=0.5), 10_000, seed=100 + i, lp=sol, beta=beta)
        if sol.objective > 0:
            worst = min(worst, rep.mean_weight / sol.objective)
    ok = worst >= 0.48
    report(4, "ADAP(1/2) >= 0.48 LP OPT", ok, f"{len(family)} instances, worst ratio {worst:.4f}")


def test_5_hardness(report):
    start = time.perf_counter()
    n = 400
    lines, ok = [], True
    for K in (2, 3, 5, 8):
        p = HardnessParams(K, n)
        rec = recursion_evaluate(p, np.full(K, 1.0 / K)).objective
        bound = hardness_bound(K)
        lp_obj = hardness_lp_objective(p)
        rep = evaluate(hardness_instance(p), make_policy("nadap", alpha=optimal_alpha(p)), 10_000, seed=K, lp_opt=lp_obj)
        rel = abs(rep.ratio - rec) / rec
        ok &= abs(rec - bound) <= K / n + 1 / n and rel < 0.05 and abs(lp_obj - n) <= 1e-6
        lines.append(f"K={K}: recursion {rec:.4f} vs bound {bound:.4f}, NADAP {rep.ratio:.4f} (rel {rel:.3%}), LP {lp_obj:.6f}")
    elapsed = time.perf_counter() - start
    ok &= elapsed <= 600
    report(5, "non-adaptive hardness", ok, "; ".join(lines) + f"; {elapsed:.0f}s (limit 600s)")


def test_6_experiment_shape(report):
    episodes = 400
    lines, ok = [], True
    for name in ("peak", "offpeak"):
        scenario = SCENARIOS[name]
        parsed = parse_trips(synth_trips(scenario, seed=7), scenario.grid)
        train_days, _ = split_days(parsed.trips, 12, seed=0)
        model = train(parsed.trips, train_days, scenario.grid, n_cars=30, seed=0)
        means = {}
        for otd in ("normal", "power-law", "power-law-matched"):
            inst = build_experiment_instance(model, otd=otd)
            ok &= inst.n_resources == 30 and inst.n_types >= 200 and inst.horizon == 288
            sol = solve_instance(inst)
            reps = {p: evaluate(inst, make_policy(p), episodes, seed=1, lp=sol) for p in ("alg-lp", "alg-sc-lp", "ur-alg")}
            ur = reps["ur-alg"]
            for p in ("alg-lp", "alg-sc-lp"):
                r = reps[p]
                gap = r.mean_weight - ur.mean_weight
                ok &= gap > 3 * np.hypot(r.stderr, ur.stderr) and r.ratio >= 0.45
            means[otd] = reps["alg-lp"].mean_weight
            lines.append(f"{name}/{otd}: types {inst.n_types}, ALG-LP {reps['alg-lp'].ratio:.3f}, "
                         f"ALG-SC-LP {reps['alg-sc-lp'].ratio:.3f}, UR-ALG {ur.ratio:.3f}")
        shift = abs(means["power-law-matched"] - means["normal"]) / means["normal"]
        ok &= shift < 0.10
        lines.append(f"{name}: normal vs matched power law ALG-LP shift {shift:.2%}")
    report(6, "LP-based policies beat UR-ALG; OTD robustness", ok, "; ".join(lines))


def test_7_cli_determinism(tmp_path, report, capsys):
    commands = {
        "evaluate": ["evaluate", "--scenario", "offpeak", "--episodes", "5", "--n-partitions", "2",
                     "--policies", "alg-lp,alg-sc-lp,greedy,ur-alg,eps-greedy"],
        "simulate": ["simulate", "--fixture", "two-by-three", "--policy", "adap", "--episodes", "50",
                     "--attenuation", "mc", "--samples", "500"],
        "hardness": ["hardness", "--K", "2,3", "--n", "40", "--episodes", "50"],
        "synth": ["synth", "--scenario", "offpeak", "--days", "3", "--seed", "9"],
    }
    same = {}
    for name, argv in commands.items():
        outs = []
        for k in range(2):
            path = tmp_path / f"{name}{k}.csv"
            assert main(argv + ["--out", str(path)]) == 0
            outs.append(path.read_bytes())
        same[name] = outs[0] == outs[1] and len(outs[0]) > 0
    capsys.readouterr()
    report(7, "byte-identical CSV on rerun", all(same.values()), ", ".join(f"{k}={'same' if v else 'DIFF'}" for k, v in same.items()))
