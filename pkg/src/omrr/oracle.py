"""Exact expected offline optimum for small instances.

The offline player sees the whole arrival sequence in advance but not the
occupation realizations: those are drawn when a match is made, exactly as
online.  For each arrival sequence the best expected weight is found by
backward induction over the per-resource busy counters, and the results are
averaged with the sequence probabilities.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .model import Instance, OccupationDistribution, require_valid


class BudgetExceeded(ValueError):
    pass


@dataclass(frozen=True)
class SmallInstanceBound:
    max_resources: int = 3
    max_types: int = 4
    horizon_cap: int = 6
    occupation_support_cap: int = 6
    budget: float = 5e7

    def state_space(self, inst: Instance) -> float:
        cap = max((int(d.support().max(initial=0)) for d in inst.occupations), default=0)
        cap = min(cap, inst.horizon)
        return float((cap + 1) ** inst.n_resources * inst.horizon * (inst.n_types + 1) ** inst.horizon)

    def check(self, inst: Instance) -> None:
        problems = []
        if inst.n_resources > self.max_resources:
            problems.append(f"{inst.n_resources} resources > {self.max_resources}")
        if inst.n_types > self.max_types:
            problems.append(f"{inst.n_types} types > {self.max_types}")
        if inst.horizon > self.horizon_cap:
            problems.append(f"horizon {inst.horizon} > {self.horizon_cap}")
        support = max((d.support().size for d in inst.occupations), default=0)
        if support > self.occupation_support_cap:
            problems.append(f"occupation support {support} > {self.occupation_support_cap}")
        size = self.state_space(inst)
        if size > self.budget:
            problems.append(f"state space {size:.3g} > budget {self.budget:.3g}")
        if problems:
            raise BudgetExceeded("instance too large for exact offline optimum: " + "; ".join(problems))


def offline_optimal(inst: Instance, bound: SmallInstanceBound | None = None) -> float:
    """Expected weight of the best policy that knows all arrivals up front."""
    require_valid(inst)
    (bound or SmallInstanceBound()).check(inst)
    U, V, T = inst.n_resources, inst.n_types, inst.horizon
    rates = np.asarray(inst.arrivals.matrix)
    none_prob = np.clip(1.0 - rates.sum(axis=0), 0.0, 1.0)
    edges_by_type = [inst.edges_of_type(v).tolist() for v in range(V)]
    edge_u = inst.edge_u.tolist()
    weights = inst.weights.tolist()

    def outcomes(dist: OccupationDistribution) -> list[tuple[int, float]]:
        # next-round busy counter after a match with occupation c is max(c, 1) - 1
        out: dict[int, float] = {}
        for c in dist.support():
            k = max(int(c), 1) - 1
            out[k] = out.get(k, 0.0) + float(dist.pmf[c])
        return sorted(out.items())

    occ_outcomes = {id(d): outcomes(d) for d in inst.occupations}
    memo: dict[tuple, float] = {}

    def value(suffix: tuple[int, ...], busy: tuple[int, ...]) -> float:
        if not suffix:
            return 0.0
        key = (suffix, busy)
        hit = memo.get(key)
        if hit is not None:
            return hit
        t = T - len(suffix) + 1
        rest = suffix[1:]
        nxt = tuple(max(b - 1, 0) for b in busy)
        best = value(rest, nxt)
        v = suffix[0]
        if v >= 0:
            for e in edges_by_type[v]:
                u = edge_u[e]
                if busy[u]:
                    continue
                gain = weights[e]
                for k, pk in occ_outcomes[id(inst.occupation(e, t))]:
                    after = nxt[:u] + (k,) + nxt[u + 1 :]
                    gain += pk * value(rest, after)
                if gain > best:
                    best = gain
        memo[key] = best
        return best

    choices = [[-1] + [v for v in range(V) if rates[v, t] > 0] for t in range(T)]
    start = (0,) * U
    total = 0.0
    for seq in itertools.product(*choices):
        prob = 1.0
        for t, v in enumerate(seq):
            prob *= none_prob[t] if v < 0 else rates[v, t]
            if prob == 0.0:
                break
        if prob == 0.0:
            continue
        total += prob * value(seq, start)
    return float(total)


def random_small_instance(
    rng: np.random.Generator,
    max_resources: int = 2,
    max_types: int = 3,
    max_horizon: int = 5,
    support_cap: int = 3,
    name: str = "",
) -> Instance:
    """Random instance from the small family used by the exact checks."""
    U = int(rng.integers(1, max_resources + 1))
    V = int(rng.integers(1, max_types + 1))
    T = int(rng.integers(2, max_horizon + 1))
    pairs = [(u, v) for u in range(U) for v in range(V)]
    keep = rng.random(len(pairs)) < 0.75
    if not keep.any():
        keep[int(rng.integers(len(pairs)))] = True
    edges = {(f"u{u}", f"v{v}"): float(np.round(rng.uniform(0.1, 5.0), 3)) for (u, v), k in zip(pairs, keep) if k}

    raw = rng.random((V, T)) * (rng.random((V, T)) < 0.85)
    mass = rng.uniform(0.3, 1.0, size=T)
    col = raw.sum(axis=0)
    col[col == 0] = 1.0
    rates = raw / col * mass

    dists = {}
    for e in edges:
        k = int(rng.integers(1, support_cap + 1))
        support = rng.choice(np.arange(0, T + 1), size=min(k, T + 1), replace=False)
        probs = rng.dirichlet(np.ones(support.size))
        dists[e] = OccupationDistribution.from_mapping(dict(zip(support.tolist(), probs.tolist())), T)
    return Instance.from_edges(
        [f"u{u}" for u in range(U)], [f"v{v}" for v in range(V)], edges, T, rates, dists, name=name
    )


def small_family(count: int, seed: int = 0, **kwargs) -> list[Instance]:
    ss = np.random.SeedSequence(seed)
    return [
        random_small_instance(np.random.Generator(np.random.PCG64(s)), name=f"small-{seed}-{i}", **kwargs)
        for i, s in enumerate(ss.spawn(count))
    ]
