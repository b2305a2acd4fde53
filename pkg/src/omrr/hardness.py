"""The hard instance for non-adaptive policies.

``K`` resources, ``n**2`` request types, ``n`` rounds, uniform arrivals
``1/n**2``, deterministic occupation ``K`` and unit weights.  The benchmark LP
value is ``n``.  A non-adaptive policy that matches resource ``u`` with
probability ``beta_u`` whenever it is free has availability ``gamma[u, t]``
given by

    gamma[u, t] + beta_u * sum_{max(1, t-K+1) <= t' < t} gamma[u, t'] = 1,

and its ratio to the LP is ``sum_u sum_t beta_u gamma[u, t] / n``, which
tends to at most ``1 / (2 - 1/K)``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .lp import LpSolution, build_window_lp, solve_lp
from .model import ArrivalProcess, Instance, OccupationDistribution


@dataclass(frozen=True)
class HardnessParams:
    K: int
    n: int

    def __post_init__(self) -> None:
        if self.K < 1 or self.n < self.K:
            raise ValueError(f"need K >= 1 and n >= K, got K={self.K}, n={self.n}")

    @property
    def n_types(self) -> int:
        return self.n * self.n


def hardness_instance(params: HardnessParams) -> Instance:
    """Complete bipartite instance; edge ``u * n**2 + v`` joins resource ``u`` and type ``v``."""
    K, n = params.K, params.n
    V = params.n_types
    e = np.arange(K * V)
    return Instance(
        resources=tuple(range(K)),
        request_types=tuple(range(V)),
        edge_u=e // V,
        edge_v=e % V,
        weights=np.ones(K * V),
        horizon=n,
        arrivals=ArrivalProcess(np.full(V, 1.0 / V), n),
        occupations=(OccupationDistribution.point_mass(K, n),),
        occupation_index=np.zeros(K * V, dtype=np.int64),
        name=f"hardness-K{K}-n{n}",
        meta={"K": K, "n": n},
    )


def uniform_lp_solution(params: HardnessParams) -> LpSolution:
    """``x[e, t] = 1 / (n**2 K)`` for every edge and round; objective ``n``."""
    K, n = params.K, params.n
    x = np.full((K * params.n_types, n), 1.0 / (params.n_types * K))
    return LpSolution(x=x, objective=float(x.sum()))


def hardness_lp_objective(params: HardnessParams, lump_types: bool = True, solver=None) -> float:
    return solve_lp(build_window_lp(params.K, params.n, lump_types=lump_types), solver=solver).objective


@dataclass
class RecursionTable:
    gamma: np.ndarray  # (K, n) availability probabilities
    beta_u: np.ndarray  # (K,) per-round match probability of a free resource

    @property
    def objective(self) -> float:
        n = self.gamma.shape[1]
        return float((self.beta_u[:, None] * self.gamma).sum() / n)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["resource", "round", "beta_u", "gamma"])
        for u in range(self.gamma.shape[0]):
            for t in range(self.gamma.shape[1]):
                w.writerow([u, t + 1, repr(float(self.beta_u[u])), repr(float(self.gamma[u, t]))])
        return buf.getvalue()


def recursion_evaluate(params: HardnessParams, beta_u) -> RecursionTable:
    """Fill the availability recursion forward from ``gamma[u, 1] = 1``."""
    K, n = params.K, params.n
    beta = np.broadcast_to(np.asarray(beta_u, dtype=float), (K,)).copy()
    if np.any(beta < 0) or beta.sum() > 1 + 1e-12:
        raise ValueError("need beta_u >= 0 and sum_u beta_u <= 1")
    gamma = np.zeros((K, n))
    window = np.zeros(K)  # sum of gamma over rounds max(1, t-K+1) .. t-1
    for t in range(n):
        gamma[:, t] = 1.0 - beta * window
        window += gamma[:, t]
        if t - K + 1 >= 0:
            window -= gamma[:, t - K + 1]
    return RecursionTable(gamma=gamma, beta_u=beta)


def g(x, K: int):
    """Per-resource limiting rate ``x / (1 + x (K - 1))``; concave in ``x`` for ``K >= 2``."""
    x = np.asarray(x, dtype=float)
    return x / (1.0 + x * (K - 1))


def summed_gamma_bound(n: int, K: int, beta: float) -> float:
    """Upper bound ``n / (1 + beta (K-1)) + 1/beta`` on ``sum_t gamma[u, t]``."""
    return n / (1.0 + beta * (K - 1)) + 1.0 / beta


def hardness_bound(K: int) -> float:
    """Limit of the best non-adaptive ratio, ``1 / (2 - 1/K)``."""
    if K < 1:
        raise ValueError("K must be >= 1")
    return 1.0 / (2.0 - 1.0 / K)


def alpha_for_beta(params: HardnessParams, beta_u) -> np.ndarray:
    """Edge-indexed ``alpha`` giving per-round match rate ``beta_u`` to each free resource.

    Every type uses the same split, so ``alpha[(u, v)] = beta_u``.
    """
    beta = np.broadcast_to(np.asarray(beta_u, dtype=float), (params.K,))
    if beta.sum() > 1 + 1e-12:
        raise ValueError("sum_u beta_u must be <= 1")
    return np.repeat(beta, params.n_types)


def optimal_alpha(params: HardnessParams) -> np.ndarray:
    return alpha_for_beta(params, np.full(params.K, 1.0 / params.K))
