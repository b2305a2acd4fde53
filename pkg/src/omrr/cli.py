"""Command-line front end.

Subcommands: ``synth``, ``train``, ``solve``, ``simulate``, ``evaluate`` and
``hardness``.  Tabular output is CSV preceded by ``#`` comment lines that echo
the full resolved configuration, so a file records how it was produced.
Exit status is 0 on success and 2 on any validation or validity error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import sys
from dataclasses import dataclass, field, fields
from datetime import date
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import data
from .attenuation import AttenuationTable, ValidityBreach, beta_exact, beta_monte_carlo
from .hardness import (
    HardnessParams,
    hardness_bound,
    hardness_instance,
    hardness_lp_objective,
    optimal_alpha,
    recursion_evaluate,
)
from .lp import LpDefect, LpSolution, build_benchmark_lp, check_solution, solve_instance, write_lp_format
from .model import Instance, InvalidInstance, fixture_two_by_three, load_instance, require_valid, save_instance, single_edge_instance
from .policies import POLICIES, Policy, check_alpha, make_policy, uniform_alpha
from .sim import EpisodeError, EvaluationReport, episodes_to_csv, evaluate, reports_to_csv

FIVE_ALGORITHMS = ["alg-lp", "alg-sc-lp", "greedy", "ur-alg", "eps-greedy"]
FIXTURES = {
    "single-edge": lambda: single_edge_instance(2, 2),
    "two-by-three": fixture_two_by_three,
}
SOURCES = ("synth", "model", "instance", "fixture", "hardness")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """Everything ``evaluate`` needs; every field has a default that is echoed in the output."""

    source: str = "synth"
    instance: str | None = None
    model: str | None = None
    trips: str | None = None
    fixture: str = "two-by-three"
    scenario: str = "peak"
    synth_seed: int = 0
    train_days: int = 12
    split_seed: int = 0
    cars: int = 30
    car_seed: int = 0
    arrival_mode: str = "kad"
    otd: str = "normal"
    weight_alpha: float = 0.5
    metric: str = "euclidean"
    K: int = 2
    n: int = 50
    policies: list[str] = field(default_factory=lambda: list(FIVE_ALGORITHMS))
    policy_params: dict[str, dict[str, Any]] = field(default_factory=dict)
    episodes: int = 100
    seed: int = 0
    partitions: str = "sampled"
    n_partitions: int | None = None
    attenuation: str = "exact"
    samples: int = 10_000
    gamma: float = 0.5
    time_sensitive: bool | None = None

    def validate(self) -> None:
        if self.source not in SOURCES:
            raise ConfigError(f"source must be one of {SOURCES}, got {self.source!r}")
        for key in ("instance", "model", "trips"):
            path = getattr(self, key)
            if path is not None and not Path(path).exists():
                raise ConfigError(f"{key} file {path} does not exist")
        if self.source == "instance" and self.instance is None:
            raise ConfigError("source 'instance' needs an instance path")
        if self.source == "model" and self.model is None:
            raise ConfigError("source 'model' needs a model path")
        if self.source == "fixture" and self.fixture not in FIXTURES:
            raise ConfigError(f"unknown fixture {self.fixture!r}; choose from {sorted(FIXTURES)}")
        if self.source == "synth" and self.scenario not in data.SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; choose from {sorted(data.SCENARIOS)}")
        if self.partitions not in ("sampled", "replay"):
            raise ConfigError("partitions must be 'sampled' or 'replay'")
        if self.partitions == "replay" and self.source not in ("synth", "model"):
            raise ConfigError("replay partitions need trip data (source 'synth' or 'model')")
        if self.partitions == "replay" and self.source == "model" and self.trips is None:
            raise ConfigError("replay partitions from a saved model need the trips file")
        if self.attenuation not in ("exact", "mc"):
            raise ConfigError("attenuation must be 'exact' or 'mc'")
        if self.episodes < 1:
            raise ConfigError("episodes must be >= 1")
        for name in self.policies:
            if name not in POLICIES:
                raise ConfigError(f"unknown policy {name!r}; choose from {sorted(POLICIES)}")
        for name, params in self.policy_params.items():
            if name not in POLICIES:
                raise ConfigError(f"parameters given for unknown policy {name!r}")
            allowed = set(POLICIES[name][3]) | ({"alpha"} if name == "nadap" else set())
            extra = set(params) - allowed
            if extra:
                raise ConfigError(f"unknown parameters for {name}: {sorted(extra)}")

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> ExperimentConfig:
        known = {f.name for f in fields(cls)}
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        return cls(**doc)

    @classmethod
    def load(cls, path: str | Path) -> ExperimentConfig:
        return cls.from_dict(json.loads(Path(path).read_text()))


def header(command: str, settings: dict[str, Any]) -> str:
    """Comment lines echoing the resolved settings."""
    return f"# omrr {command}\n# config: {json.dumps(settings, sort_keys=True)}\n"


# -- pipeline pieces shared by the commands ------------------------------------


@dataclass
class Prepared:
    instance: Instance
    lp: LpSolution
    partitions: list[tuple[str, list[tuple[int, int]] | None]]  # (label, replay sequence or None)
    notes: list[str] = field(default_factory=list)


def _trained_from_trips(cfg: ExperimentConfig, parsed: data.ParseResult, grid: data.GridSpec):
    train_days, test_days = data.split_days(parsed.trips, cfg.train_days, cfg.split_seed)
    model = data.train(parsed.trips, train_days, grid, n_cars=cfg.cars, seed=cfg.car_seed)
    return model, test_days


def prepare(cfg: ExperimentConfig) -> Prepared:
    """Build the instance, solve its LP and lay out the test partitions."""
    cfg.validate()
    notes: list[str] = []
    test_days: list[date] = []
    parsed = None
    model = None
    if cfg.source == "synth":
        scenario = data.SCENARIOS[cfg.scenario]
        parsed = data.parse_trips(data.synth_trips(scenario, cfg.synth_seed), scenario.grid)
        model, test_days = _trained_from_trips(cfg, parsed, scenario.grid)
    elif cfg.source == "model":
        model = data.TrainedModel.load(cfg.model)
        if cfg.trips is not None:
            with open(cfg.trips, newline="") as fh:
                parsed = data.parse_trips(fh, model.grid)
            trained = set(model.days)
            test_days = sorted({r.pickup_time.date() for r, _ in parsed.trips} - {date.fromisoformat(d) for d in trained})
    if model is not None:
        inst = data.build_experiment_instance(
            model, weight_alpha=cfg.weight_alpha, arrival_mode=cfg.arrival_mode, otd=cfg.otd, metric=cfg.metric
        )
        notes.append(f"types={len(model.types)} cars={len(model.cars)} rescaled_rounds={len(model.rescaled_rounds)}")
    elif cfg.source == "instance":
        inst = load_instance(cfg.instance)
    elif cfg.source == "fixture":
        inst = FIXTURES[cfg.fixture]()
    else:
        inst = hardness_instance(HardnessParams(cfg.K, cfg.n))
    require_valid(inst)
    lp = solve_instance(inst, time_sensitive=cfg.time_sensitive)

    if cfg.partitions == "replay":
        seqs, unseen = data.day_sequences(parsed.trips, test_days, model.types, model.horizon, model.step_seconds)
        if cfg.n_partitions is not None:
            seqs = dict(list(seqs.items())[: cfg.n_partitions])
        notes.append(f"replay_days={len(seqs)} unseen_type_requests={unseen}")
        partitions = [(day, seq) for day, seq in seqs.items()]
    else:
        count = cfg.n_partitions or (len(test_days) if test_days else 1)
        partitions = [(f"sample-{k + 1}", None) for k in range(count)]
    return Prepared(inst, lp, partitions, notes)


def _build_policy(name: str, params: dict[str, Any], inst: Instance) -> Policy:
    params = dict(params)
    if name == "nadap":
        alpha = params.get("alpha", "uniform")
        if isinstance(alpha, str):
            if alpha == "uniform":
                alpha = uniform_alpha(inst)
            elif alpha == "optimal" and "K" in inst.meta:
                alpha = optimal_alpha(HardnessParams(inst.meta["K"], inst.meta["n"]))
            else:
                raise ConfigError(f"unknown alpha rule {alpha!r}")
        alpha = np.asarray(alpha, dtype=float)
        check_alpha(inst, alpha)
        params["alpha"] = alpha
    return make_policy(name, **params)


def _attenuation(cfg: ExperimentConfig, inst: Instance, lp: LpSolution) -> AttenuationTable:
    if cfg.attenuation == "exact":
        return beta_exact(inst, lp, gamma=cfg.gamma)
    return beta_monte_carlo(inst, lp, gamma=cfg.gamma, samples=cfg.samples, seed=cfg.seed)


def run_evaluation(cfg: ExperimentConfig) -> tuple[list[EvaluationReport], list[str], Prepared]:
    """Evaluate every configured policy on every partition.

    Partition ``k`` uses base seed ``seed + k`` for all policies, so policies
    are compared on common random numbers.
    """
    prep = prepare(cfg)
    inst, lp = prep.instance, prep.lp
    beta = None
    if any(POLICIES[p][2] for p in cfg.policies):
        beta = _attenuation(cfg, inst, lp)
    policies = [_build_policy(p, cfg.policy_params.get(p, {}), inst) for p in cfg.policies]
    reports, labels = [], []
    for k, (label, seq) in enumerate(prep.partitions):
        for pol in policies:
            reports.append(
                evaluate(inst, pol, cfg.episodes, seed=cfg.seed + k, lp=lp, beta=beta, lp_opt=lp.objective, arrivals=seq)
            )
            labels.append(label)
    return reports, labels, prep


# -- commands ------------------------------------------------------------------


def _write(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _grid(args) -> data.GridSpec:
    return data.GridSpec(args.origin_lat, args.origin_lon, args.cell_size, args.n_lat, args.n_lon)


def cmd_synth(args) -> int:
    scenario = data.SCENARIOS[args.scenario]
    changes = {k: v for k, v in (("days", args.days), ("otd", args.otd)) if v is not None}
    scenario = dataclasses.replace(scenario, **changes)
    _write("\n".join(data.synth_trips(scenario, args.seed)) + "\n", args.out)
    return 0


def cmd_train(args) -> int:
    grid = _grid(args)
    with open(args.trips, newline="") as fh:
        parsed = data.parse_trips(fh, grid)
    train_days, _ = data.split_days(parsed.trips, args.train_days, args.split_seed)
    model = data.train(parsed.trips, train_days, grid, n_cars=args.cars, seed=args.car_seed)
    model.save(args.out)
    print(f"trips={len(parsed.trips)} malformed={parsed.malformed} out_of_bounds={parsed.out_of_bounds}")
    print(f"types={len(model.types)} cars={len(model.cars)} training_days={len(model.days)}")
    print(f"rescaled_rounds={len(model.rescaled_rounds)} truncated_trips={model.truncated}")
    print(f"occupation mean={model.length_mean:.4f} std={model.length_std:.4f} power_exponent={model.power_exponent:.4f}")
    if args.instance_out:
        inst = data.build_experiment_instance(
            model, weight_alpha=args.weight_alpha, arrival_mode=args.arrival_mode, otd=args.otd, metric=args.metric
        )
        save_instance(inst, args.instance_out)
        print(f"instance edges={inst.n_edges} written to {args.instance_out}")
    return 0


def _load_source(args) -> Instance:
    if args.instance:
        inst = load_instance(args.instance)
    else:
        inst = FIXTURES[args.fixture]()
    require_valid(inst)
    return inst


def cmd_solve(args) -> int:
    inst = _load_source(args)
    ts = True if args.time_sensitive else None
    sol = solve_instance(inst, time_sensitive=ts)
    report = check_solution(inst, sol)
    if args.out:
        sol.save(args.out)
    if args.lp_out:
        write_lp_format(build_benchmark_lp(inst, time_sensitive=ts, compact=False), args.lp_out)
    print(f"objective {sol.objective!r}")
    print(f"status {sol.status} max_residual {report.max_residual:.3g}")
    return 0 if report.passed else 2


def _parse_params(items: Sequence[str]) -> dict[str, Any]:
    out = {}
    for item in items or ():
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"parameter {item!r} is not key=value")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def cmd_simulate(args) -> int:
    inst = _load_source(args)
    lp = LpSolution.load(args.solution) if args.solution else solve_instance(inst)
    params = _parse_params(args.param)
    cfg = ExperimentConfig(attenuation=args.attenuation, samples=args.samples, seed=args.seed, gamma=params.get("gamma", 0.5))
    policy = _build_policy(args.policy, params, inst)
    beta = _attenuation(cfg, inst, lp) if policy.needs_beta else None
    if beta is not None and args.beta_out:
        Path(args.beta_out).write_text(beta.to_csv(inst.resources))
    report = evaluate(inst, policy, args.episodes, seed=args.seed, lp=lp, beta=beta, lp_opt=lp.objective)
    settings = {"instance": inst.name, "policy": policy.describe(), "episodes": args.episodes, "seed": args.seed,
                "attenuation": args.attenuation, "samples": args.samples}
    _write(header("simulate", settings) + episodes_to_csv([report]), args.out)
    return 0


def cmd_evaluate(args) -> int:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    overrides = {f.name: getattr(args, f.name) for f in fields(ExperimentConfig) if getattr(args, f.name, None) is not None}
    cfg = dataclasses.replace(cfg, **overrides)
    reports, labels, prep = run_evaluation(cfg)
    text = header("evaluate", cfg.to_dict()) + "".join(f"# {n}\n" for n in prep.notes) + reports_to_csv(reports, labels)
    _write(text, args.out)
    return 0


HARDNESS_COLUMNS = ["K", "n", "bound", "recursion_objective", "nadap_ratio", "nadap_stderr", "lp_objective"]


def hardness_rows(Ks: Sequence[int], n: int, episodes: int, seed: int) -> list[list[Any]]:
    rows = []
    for K in Ks:
        params = HardnessParams(K, n)
        rec = recursion_evaluate(params, np.full(K, 1.0 / K))
        lp_obj = hardness_lp_objective(params)
        ratio = stderr = None
        if episodes > 0:
            rep = evaluate(hardness_instance(params), make_policy("nadap", alpha=optimal_alpha(params)), episodes,
                           seed=seed, lp_opt=lp_obj)
            ratio, stderr = rep.ratio, rep.ratio_stderr
        rows.append([K, n, hardness_bound(K), rec.objective, ratio, stderr, lp_obj])
    return rows


def _cell(x: float | None) -> str:
    return "" if x is None else repr(float(x))


def cmd_hardness(args) -> int:
    Ks = [int(k) for k in args.K.split(",")]
    rows = hardness_rows(Ks, args.n, args.episodes, args.seed)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HARDNESS_COLUMNS)
    for K, n, bound, rec, ratio, stderr, lp_obj in rows:
        w.writerow([K, n, f"{bound:.4f}", repr(rec), _cell(ratio), _cell(stderr), repr(lp_obj)])
    settings = {"K": Ks, "n": args.n, "episodes": args.episodes, "seed": args.seed}
    _write(header("hardness", settings) + buf.getvalue(), args.out)
    return 0


# -- argument parsing ------------------------------------------------------------


def _add_grid(p: argparse.ArgumentParser) -> None:
    g = data.GridSpec()
    p.add_argument("--origin-lat", type=float, default=g.origin_lat)
    p.add_argument("--origin-lon", type=float, default=g.origin_lon)
    p.add_argument("--cell-size", type=float, default=g.cell_size)
    p.add_argument("--n-lat", type=int, default=None)
    p.add_argument("--n-lon", type=int, default=None)


def _add_source(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group()
    src.add_argument("--instance", help="instance document (JSON)")
    src.add_argument("--fixture", choices=sorted(FIXTURES), default="single-edge")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    for f in fields(ExperimentConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.name == "policies":
            p.add_argument(flag, type=lambda s: s.split(","), default=None, help="comma-separated policy names")
        elif f.name == "policy_params":
            p.add_argument(flag, type=json.loads, default=None, help="JSON object: policy -> parameters")
        elif f.name == "time_sensitive":
            p.add_argument(flag, action="store_true", default=None)
        else:
            kind = {"int": int, "float": float}.get(str(f.type).split(" ")[0], str)
            p.add_argument(flag, dest=f.name, type=kind, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="omrr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic trip file")
    p.add_argument("--scenario", choices=sorted(data.SCENARIOS), default="peak")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--days", type=int, default=None)
    p.add_argument("--otd", choices=["normal", "power-law"], default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="estimate a model from a trip file")
    p.add_argument("--trips", required=True)
    _add_grid(p)
    p.add_argument("--train-days", type=int, default=12)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--cars", type=int, default=30)
    p.add_argument("--car-seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--instance-out", default=None)
    p.add_argument("--arrival-mode", choices=["kad", "kiid"], default="kad")
    p.add_argument("--otd", choices=["normal", "power-law", "power-law-matched"], default="normal")
    p.add_argument("--weight-alpha", type=float, default=0.5)
    p.add_argument("--metric", choices=["euclidean", "manhattan"], default="euclidean")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("solve", help="solve the benchmark LP")
    _add_source(p)
    p.add_argument("--time-sensitive", action="store_true")
    p.add_argument("--out", default=None, help="solution document (JSON)")
    p.add_argument("--lp-out", default=None, help="write the LP in CPLEX LP format")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("simulate", help="run one policy and emit per-episode weights")
    _add_source(p)
    p.add_argument("--solution", default=None)
    p.add_argument("--policy", choices=sorted(POLICIES), default="adap")
    p.add_argument("--param", action="append", help="policy parameter key=value (repeatable)")
    p.add_argument("--episodes", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--attenuation", choices=["exact", "mc"], default="exact")
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--beta-out", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", help="evaluate policies per test partition")
    p.add_argument("--config", default=None, help="ExperimentConfig document (JSON)")
    _add_config_flags(p)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("hardness", help="bound vs recursion vs simulated non-adaptive ratio")
    p.add_argument("--K", default="2,3,5,8", help="comma-separated K values")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--episodes", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_hardness)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InvalidInstance, ValidityBreach, EpisodeError, LpDefect, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
