"""Episode engine and batch evaluation.

An episode seed is split into three independent substreams: arrivals,
occupation draws and policy randomness.  Different policies run with the
same seed therefore face the same arrival sequence, which makes paired
comparisons meaningful.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .attenuation import AttenuationTable
from .lp import LpSolution
from .model import Instance, available_from, require_valid
from .policies import Policy, PolicyContext

SeedLike = int | np.random.SeedSequence


class EpisodeError(RuntimeError):
    """A policy failed inside an episode; ``round`` says where."""

    def __init__(self, round: int, cause: Exception):
        self.round = round
        self.cause = cause
        super().__init__(f"round {round}: {cause}")


@dataclass
class EpisodeResult:
    total_weight: float
    matches: list[tuple[int, int, int]]  # (round, edge, realized occupation)
    rejects: int
    no_arrivals: int
    seed: object = None


def _streams(seed: SeedLike) -> list[np.random.Generator]:
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.Generator(np.random.PCG64(s)) for s in ss.spawn(3)]


def sample_arrivals(inst: Instance, rng: np.random.Generator) -> np.ndarray:
    """One uniform per round against the cumulative rates in type order.

    Returns the arriving type per round, ``-1`` for no arrival.
    """
    u = rng.random(inst.horizon)
    V = inst.n_types
    cum = inst.arrivals.cumulative
    if inst.arrivals.stationary:
        v = cum.searchsorted(u, side="right")
    else:
        v = (cum <= u[None, :]).sum(axis=0)
    return np.where(v < V, v, -1)


def run_episode(
    inst: Instance,
    policy: Policy,
    seed: SeedLike = 0,
    lp: LpSolution | None = None,
    beta: AttenuationTable | None = None,
    validate: bool = True,
) -> EpisodeResult:
    """Simulate one pass over the horizon with arrivals drawn from the instance."""
    arr_rng, occ_rng, pol_rng = _streams(seed)
    arrivals = sample_arrivals(inst, arr_rng)
    rounds = np.flatnonzero(arrivals >= 0)
    seq = zip((rounds + 1).tolist(), arrivals[rounds].tolist())
    return _play(inst, policy, seq, occ_rng, pol_rng, seed, lp, beta, validate)


def run_sequence(
    inst: Instance,
    policy: Policy,
    arrivals: Sequence[tuple[int, int]],
    seed: SeedLike = 0,
    lp: LpSolution | None = None,
    beta: AttenuationTable | None = None,
    validate: bool = True,
) -> EpisodeResult:
    """Replay a fixed list of ``(round, type)`` arrivals in order.

    Several arrivals may share a round; they are served one after another and
    each sees the availability left by the previous one.  The arrival
    substream of ``seed`` is left unused, so occupation and policy draws match
    :func:`run_episode` under the same seed.
    """
    _, occ_rng, pol_rng = _streams(seed)
    seq = sorted(((int(t), int(v)) for t, v in arrivals), key=lambda a: a[0])
    for t, v in seq:
        if not (1 <= t <= inst.horizon and 0 <= v < inst.n_types):
            raise ValueError(f"arrival ({t}, {v}) outside the instance")
    return _play(inst, policy, seq, occ_rng, pol_rng, seed, lp, beta, validate)


def _play(
    inst: Instance,
    policy: Policy,
    seq: Iterable[tuple[int, int]],
    occ_rng: np.random.Generator,
    pol_rng: np.random.Generator,
    seed: SeedLike,
    lp: LpSolution | None,
    beta: AttenuationTable | None,
    validate: bool,
) -> EpisodeResult:
    if validate:
        require_valid(inst)
    if policy.needs_lp and lp is None:
        raise ValueError(f"policy {policy.name} needs an LP solution")
    if policy.needs_beta and beta is None:
        raise ValueError(f"policy {policy.name} needs a safety table")
    free_at = np.ones(inst.n_resources, dtype=np.int64)
    edge_u = inst.edge_u
    weights = inst.weights
    matches: list[tuple[int, int, int]] = []
    total = 0.0
    rejects = 0
    busy_rounds = set()
    ptr, order = inst.type_incidence
    seq = list(seq)
    vs = np.fromiter((v for _, v in seq), dtype=np.int64, count=len(seq))
    # slice bounds for the arriving types only; converting all of ``ptr`` is costly for large V
    starts, stops = ptr[vs].tolist(), ptr[vs + 1].tolist()
    for (t, v), lo, hi in zip(seq, starts, stops):
        busy_rounds.add(t)
        inc = order[lo:hi]
        safe = free_at[edge_u[inc]] <= t
        ctx = PolicyContext(t, v, inc, safe, inst, pol_rng, lp, beta)
        try:
            e = policy(ctx)
        except Exception as exc:
            raise EpisodeError(t, exc) from exc
        if e is None:
            rejects += 1
            continue
        u = int(edge_u[e])
        if free_at[u] > t or inst.edge_v[e] != v:
            raise EpisodeError(t, RuntimeError(f"policy chose edge {e}, which is not a safe edge"))
        c = inst.occupation(e, t).sample(occ_rng.random())
        free_at[u] = available_from(t, c)
        total += float(weights[e])
        matches.append((t, int(e), int(c)))
    return EpisodeResult(total, matches, rejects, inst.horizon - len(busy_rounds), seed)


@dataclass
class EvaluationReport:
    policy: str
    instance: str
    episodes: int
    mean_weight: float
    stderr: float | None  # None when a single episode gives no estimate
    lp_opt: float | None
    weights: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))
    seed: int = 0

    @property
    def ratio(self) -> float | None:
        if self.lp_opt is None or self.lp_opt <= 0:
            return None
        return self.mean_weight / self.lp_opt

    @property
    def ratio_stderr(self) -> float | None:
        if self.ratio is None or self.stderr is None:
            return None
        return self.stderr / self.lp_opt


def episode_seed(seed: int, i: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(i,))


def evaluate(
    inst: Instance,
    policy: Policy,
    episodes: int,
    seed: int = 0,
    lp: LpSolution | None = None,
    beta: AttenuationTable | None = None,
    lp_opt: float | None = None,
    arrivals: Sequence[tuple[int, int]] | None = None,
) -> EvaluationReport:
    """Run ``episodes`` independent episodes and aggregate their weights.

    Episode ``i`` uses ``SeedSequence(seed, spawn_key=(i,))``.  With
    ``arrivals`` every episode replays that sequence and only occupation and
    policy draws vary.  The LP optimum is taken from ``lp`` when ``lp_opt`` is
    not given.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    require_valid(inst)
    weights = np.empty(episodes)
    for i in range(episodes):
        if arrivals is None:
            res = run_episode(inst, policy, episode_seed(seed, i), lp=lp, beta=beta, validate=False)
        else:
            res = run_sequence(inst, policy, arrivals, episode_seed(seed, i), lp=lp, beta=beta, validate=False)
        weights[i] = res.total_weight
    mean = float(weights.mean())
    stderr = float(weights.std(ddof=1) / math.sqrt(episodes)) if episodes > 1 else None
    if lp_opt is None and lp is not None:
        lp_opt = lp.objective
    return EvaluationReport(
        policy=policy.describe(),
        instance=inst.name,
        episodes=episodes,
        mean_weight=mean,
        stderr=stderr,
        lp_opt=lp_opt,
        weights=weights,
        seed=seed,
    )


def edge_match_frequency(
    inst: Instance,
    policy: Policy,
    episodes: int,
    seed: int = 0,
    lp: LpSolution | None = None,
    beta: AttenuationTable | None = None,
) -> np.ndarray:
    """Fraction of episodes in which each (edge, round) was matched, shape ``(E, T)``."""
    counts = np.zeros((inst.n_edges, inst.horizon))
    for i in range(episodes):
        res = run_episode(inst, policy, episode_seed(seed, i), lp=lp, beta=beta, validate=False)
        for t, e, _ in res.matches:
            counts[e, t - 1] += 1
    return counts / episodes


def _fmt(x: float | None) -> str:
    return "" if x is None else repr(float(x))


REPORT_COLUMNS = ["policy", "instance", "partition", "episodes", "seed", "mean_weight", "stderr", "lp_opt", "ratio"]


def reports_to_csv(reports: list[EvaluationReport], partitions: list[str] | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for i, r in enumerate(reports):
        part = partitions[i] if partitions else ""
        w.writerow(
            [r.policy, r.instance, part, r.episodes, r.seed, _fmt(r.mean_weight), _fmt(r.stderr), _fmt(r.lp_opt), _fmt(r.ratio)]
        )
    return buf.getvalue()


def episodes_to_csv(reports: list[EvaluationReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["policy", "instance", "episode", "weight"])
    for r in reports:
        for i, x in enumerate(r.weights):
            w.writerow([r.policy, r.instance, i, repr(float(x))])
    return buf.getvalue()
