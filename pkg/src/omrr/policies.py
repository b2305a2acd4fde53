"""Online decision rules.

Every rule takes a :class:`PolicyContext` describing the current round and
arrival and returns the chosen edge index, or ``None`` to reject.  All
randomness comes from ``ctx.rng``; each rule draws at most two uniforms per
decision, so a fixed stream gives a fixed decision sequence.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .attenuation import AttenuationTable, ValidityBreach
from .lp import LpSolution
from .model import Instance

EPS_GREEDY_DEFAULT = 0.1
MASS_TOL = 1e-9

Decision = int | None


@dataclass(slots=True)
class PolicyContext:
    round: int
    arrival: int | None
    incident: np.ndarray  # edges of the arriving type, ordered by resource index
    safe: np.ndarray  # mask over ``incident``: resource free at this round
    instance: Instance
    rng: np.random.Generator
    lp: LpSolution | None = None
    beta: AttenuationTable | None = None

    @property
    def safe_edges(self) -> np.ndarray:
        return self.incident[self.safe]

    @property
    def rate(self) -> float:
        return self.instance.arrivals.rate(self.arrival, self.round)


def _draw(probs: np.ndarray, u: float) -> int | None:
    """Index ``i`` with probability ``probs[i]``; ``None`` for the residual mass."""
    i = int(probs.cumsum().searchsorted(u, side="right"))
    return i if i < probs.size else None


def _lp_x(ctx: PolicyContext, edges: np.ndarray) -> np.ndarray:
    if ctx.lp is None:
        raise ValueError("policy needs an LP solution")
    return ctx.lp.x[edges, ctx.round - 1]


def adap_decide(ctx: PolicyContext, gamma: float = 0.5) -> Decision:
    """Attenuated LP sampling: safe ``e`` w.p. ``(x[e,t] / p[v,t]) * (gamma / beta[u,t])``."""
    if ctx.arrival is None:
        return None
    safe = ctx.safe_edges
    if safe.size == 0:
        return None
    if ctx.beta is None:
        raise ValueError("adaptive policy needs a safety table")
    p = ctx.rate
    if p <= 0:
        return None
    t = ctx.round
    u = ctx.instance.edge_u[safe]
    beta = ctx.beta.beta[u, t - 1]
    x = _lp_x(ctx, safe)
    with np.errstate(divide="ignore", invalid="ignore"):
        probs = np.where(x > 0, x / p * gamma / beta, 0.0)
    total = probs.sum()
    if total > 1 + MASS_TOL:
        j = int(np.argmin(beta))
        raise ValidityBreach(int(u[j]), t, float(beta[j]), gamma, f"sampling mass {total:.6g} exceeds 1")
    i = _draw(probs, ctx.rng.random())
    return None if i is None else int(safe[i])


def alg_lp_decide(ctx: PolicyContext) -> Decision:
    """Sample any neighbor w.p. ``x[e,t] / p[v,t]``; reject if it is busy."""
    if ctx.arrival is None or ctx.incident.size == 0:
        return None
    p = ctx.rate
    if p <= 0:
        return None
    probs = _lp_x(ctx, ctx.incident) / p
    i = _draw(probs, ctx.rng.random())
    if i is None or not ctx.safe[i]:
        return None
    return int(ctx.incident[i])


def alg_sc_lp_decide(ctx: PolicyContext) -> Decision:
    """Sample a safe neighbor proportionally to ``x[e,t]`` among safe edges."""
    if ctx.arrival is None:
        return None
    safe = ctx.safe_edges
    if safe.size == 0:
        return None
    x = _lp_x(ctx, safe)
    total = x.sum()
    if total <= 0:
        return None
    i = int(np.searchsorted(np.cumsum(x), ctx.rng.random() * total, side="right"))
    # rounding can push the draw past the end; it belongs to the last positive edge
    i = min(i, int(np.flatnonzero(x > 0)[-1]))
    return int(safe[i])


def greedy_decide(ctx: PolicyContext) -> Decision:
    """Heaviest safe edge; ties go to the smallest resource index."""
    if ctx.arrival is None:
        return None
    safe = ctx.safe_edges
    if safe.size == 0:
        return None
    return int(safe[np.argmax(ctx.instance.weights[safe])])


def ur_decide(ctx: PolicyContext) -> Decision:
    """Uniformly random safe edge."""
    if ctx.arrival is None:
        return None
    safe = ctx.safe_edges
    if safe.size == 0:
        return None
    i = min(int(ctx.rng.random() * safe.size), safe.size - 1)
    return int(safe[i])


def eps_greedy_decide(ctx: PolicyContext, eps: float = EPS_GREEDY_DEFAULT, lp_branch: str = "alg-lp") -> Decision:
    """Greedy with probability ``eps``, otherwise the LP rule named by ``lp_branch``."""
    if ctx.arrival is None:
        return None
    if ctx.rng.random() < eps:
        return greedy_decide(ctx)
    if lp_branch == "alg-lp":
        return alg_lp_decide(ctx)
    if lp_branch == "alg-sc-lp":
        return alg_sc_lp_decide(ctx)
    raise ValueError(f"unknown LP branch {lp_branch!r}")


def nadap_decide(ctx: PolicyContext, alpha: np.ndarray) -> Decision:
    """Non-adaptive rule: sample neighbor ``u`` w.p. ``alpha[(u, v)]`` and match if free.

    ``alpha`` is indexed by edge.
    """
    if ctx.arrival is None or ctx.incident.size == 0:
        return None
    i = _draw(alpha[ctx.incident], ctx.rng.random())
    if i is None or not ctx.safe[i]:
        return None
    return int(ctx.incident[i])


def uniform_alpha(inst: Instance) -> np.ndarray:
    """``alpha[(u, v)] = 1 / deg(v)``: spread every type evenly over its neighbors."""
    deg = np.bincount(inst.edge_v, minlength=inst.n_types)
    return 1.0 / deg[inst.edge_v]


def check_alpha(inst: Instance, alpha: np.ndarray) -> None:
    if alpha.shape != (inst.n_edges,) or np.any(alpha < 0):
        raise ValueError("alpha must be a nonnegative vector indexed by edge")
    per_type = np.bincount(inst.edge_v, weights=alpha, minlength=inst.n_types)
    if np.any(per_type > 1 + MASS_TOL):
        raise ValueError(f"alpha sums to {per_type.max():.6g} > 1 for some request type")


@dataclass
class Policy:
    """A named decision rule with its parameters bound."""

    name: str
    decide: Callable[..., Decision]
    params: dict[str, Any] = field(default_factory=dict)
    needs_lp: bool = False
    needs_beta: bool = False

    def __call__(self, ctx: PolicyContext) -> Decision:
        return self.decide(ctx, **self.params)

    def describe(self) -> str:
        if not self.params:
            return self.name
        inner = ",".join(f"{k}={v}" for k, v in sorted(self.params.items()) if k != "alpha")
        return f"{self.name}({inner})" if inner else self.name


POLICIES: dict[str, tuple[Callable[..., Decision], bool, bool, dict[str, Any]]] = {
    # name: (rule, needs_lp, needs_beta, default params)
    "adap": (adap_decide, True, True, {"gamma": 0.5}),
    "alg-lp": (alg_lp_decide, True, False, {}),
    "alg-sc-lp": (alg_sc_lp_decide, True, False, {}),
    "greedy": (greedy_decide, False, False, {}),
    "ur-alg": (ur_decide, False, False, {}),
    "eps-greedy": (eps_greedy_decide, True, False, {"eps": EPS_GREEDY_DEFAULT, "lp_branch": "alg-lp"}),
    "nadap": (nadap_decide, False, False, {}),
}


def make_policy(name: str, **params: Any) -> Policy:
    key = name.lower().replace("_", "-")
    if key not in POLICIES:
        raise ValueError(f"unknown policy {name!r}; choose from {sorted(POLICIES)}")
    rule, needs_lp, needs_beta, defaults = POLICIES[key]
    merged = {**defaults, **params}
    if key == "nadap" and "alpha" not in merged:
        raise ValueError("nadap needs an 'alpha' vector")
    unknown = set(merged) - set(defaults) - ({"alpha"} if key == "nadap" else set())
    if unknown:
        raise ValueError(f"unknown parameters for {key}: {sorted(unknown)}")
    return Policy(key, rule, merged, needs_lp, needs_beta)
