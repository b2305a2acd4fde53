"""Safety probabilities for the attenuated adaptive policy.

``beta[u, t]`` is the probability that resource ``u`` is free at the start
of round ``t`` when the adaptive policy with scale ``gamma`` runs.  While the
policy is valid (``beta >= gamma`` in all earlier rounds) every edge is used
in round ``t'`` with probability exactly ``gamma * x[e, t']``, and the events
"matched in ``t'`` and still busy at ``t``" are disjoint over ``t'``, so

    1 - beta[u, t] = gamma * sum_{t' < t} sum_{e in d(u)} x[e, t'] Pr[C_e > t - t'].

:func:`beta_exact` evaluates this identity; :func:`beta_monte_carlo`
estimates the same quantities by simulating the policy.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .lp import LpSolution, resource_load
from .model import Instance

DEFAULT_SAMPLES = 10_000
BREACH_SIGMAS = 4.0


class ValidityBreach(RuntimeError):
    """The attenuated policy would need ``beta < gamma`` somewhere."""

    def __init__(self, resource: int, round: int, beta: float, gamma: float, detail: str = ""):
        self.resource = resource
        self.round = round
        self.beta = beta
        self.gamma = gamma
        msg = f"validity breach at resource {resource}, round {round}: beta={beta:.6g} < gamma={gamma:.6g}"
        super().__init__(msg + (f" ({detail})" if detail else ""))


@dataclass
class AttenuationTable:
    beta: np.ndarray  # (U, T)
    gamma: float
    method: str  # "exact" | "monte-carlo"
    samples: int = 0
    stderr: np.ndarray | None = None
    breaches: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.stderr is None:
            self.stderr = np.zeros_like(self.beta)

    def at(self, u: int, t: int) -> float:
        return float(self.beta[u, t - 1])

    def to_csv(self, resources=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["resource", "round", "beta", "stderr"])
        U, T = self.beta.shape
        for u in range(U):
            label = resources[u] if resources is not None else u
            for t in range(T):
                w.writerow([label, t + 1, repr(float(self.beta[u, t])), repr(float(self.stderr[u, t]))])
        return buf.getvalue()


def _carried_load(inst: Instance, x: np.ndarray) -> np.ndarray:
    incidence = sp.csr_matrix(
        (np.ones(inst.n_edges), (inst.edge_u, np.arange(inst.n_edges))),
        shape=(inst.n_resources, inst.n_edges),
    )
    return resource_load(inst, x) - incidence @ x


def beta_exact(inst: Instance, sol: LpSolution, gamma: float = 0.5, strict: bool = True) -> AttenuationTable:
    """Closed-form safety probabilities.

    Entries with ``beta < gamma`` are collected in ``breaches``; with
    ``strict`` the first one (in round order) raises :class:`ValidityBreach`.
    Later rounds after a breach are still filled in by the same formula, but
    no longer describe the policy exactly.
    """
    if not 0 < gamma <= 1:
        raise ValueError("gamma must lie in (0, 1]")
    beta = 1.0 - gamma * _carried_load(inst, sol.x)
    beta = np.clip(beta, 0.0, 1.0)
    bad = beta < gamma - 1e-12
    breaches = sorted(((int(u), int(t) + 1) for u, t in zip(*np.nonzero(bad))), key=lambda p: (p[1], p[0]))
    if strict and breaches:
        u, t = breaches[0]
        raise ValidityBreach(u, t, float(beta[u, t - 1]), gamma)
    return AttenuationTable(beta=beta, gamma=gamma, method="exact", breaches=breaches)


def _padded_incidence(inst: Instance) -> np.ndarray:
    deg = np.bincount(inst.edge_v, minlength=inst.n_types)
    D = max(int(deg.max(initial=0)), 1)
    pad = np.full((inst.n_types, D), -1, dtype=np.int64)
    for v in range(inst.n_types):
        es = inst.edges_of_type(v)
        pad[v, : es.size] = es
    return pad


def simulate_adap_availability(
    inst: Instance,
    x: np.ndarray,
    beta: np.ndarray,
    gamma: float,
    rounds: int,
    samples: int,
    rng: np.random.Generator,
    pad: np.ndarray | None = None,
) -> np.ndarray:
    """Run ``samples`` independent copies of the adaptive policy for ``rounds`` rounds.

    Returns the ``(samples, U)`` matrix of the first round at which each
    resource is free again.  Only ``beta[:, :rounds]`` is read.
    """
    U, V, T = inst.n_resources, inst.n_types, inst.horizon
    if pad is None:
        pad = _padded_incidence(inst)
    rates = inst.arrivals.matrix
    cum_rates = np.cumsum(rates, axis=0)
    cdf = np.cumsum(np.array([d.pmf for d in inst.occupations]), axis=1)
    occ = inst.occupation_matrix
    free_at = np.ones((samples, U), dtype=np.int64)
    rows = np.arange(samples)
    for r in range(1, rounds + 1):
        col = r - 1
        v = np.searchsorted(cum_rates[:, col], rng.random(samples), side="right")
        pick = rng.random(samples)
        occ_u = rng.random(samples)
        live = np.flatnonzero(v < V)
        if live.size == 0:
            continue
        vl = v[live]
        inc = pad[vl]
        present = inc >= 0
        e = np.where(present, inc, 0)
        uu = inst.edge_u[e]
        safe = present & (free_at[live[:, None], uu] <= r)
        p = rates[vl, col]
        b = beta[uu, col]
        with np.errstate(divide="ignore", invalid="ignore"):
            prob = np.where(safe, x[e, col] / p[:, None] * gamma / b, 0.0)
        prob[np.isnan(prob)] = 0.0
        total = prob.sum(axis=1)
        if np.any(total > 1 + 1e-9):
            i = int(np.argmax(total))
            j = int(np.argmin(np.where(safe[i], b[i], np.inf)))
            raise ValidityBreach(
                int(uu[i, j]), r, float(b[i, j]), gamma, f"sampling mass {total[i]:.6g} exceeds 1"
            )
        choice = (np.cumsum(prob, axis=1) <= pick[live, None]).sum(axis=1)
        hit = choice < inc.shape[1]
        if not hit.any():
            continue
        who = live[hit]
        edges = e[hit, choice[hit]]
        k = occ[edges, col]
        c = (cdf[k] <= (occ_u[who] * cdf[k, -1])[:, None]).sum(axis=1)
        c = np.minimum(c, T)
        free_at[rows[who], inst.edge_u[edges]] = r + np.maximum(c, 1)
    return free_at


def beta_monte_carlo(
    inst: Instance,
    sol: LpSolution,
    gamma: float = 0.5,
    samples: int = DEFAULT_SAMPLES,
    seed: int = 0,
    strict: bool = True,
) -> AttenuationTable:
    """Estimate the safety table round by round by simulation.

    Round ``t`` draws a fresh pool of ``samples`` runs over rounds
    ``1..t-1`` that use the entries already estimated for earlier rounds; the
    pool is shared by all resources.  An estimate below ``gamma`` is recorded
    as a breach; with ``strict`` a breach that is significant at
    ``BREACH_SIGMAS`` standard errors raises, as does any round where the
    sampling probabilities would exceed one.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if not 0 < gamma <= 1:
        raise ValueError("gamma must lie in (0, 1]")
    U, T = inst.n_resources, inst.horizon
    beta = np.ones((U, T))
    stderr = np.zeros((U, T))
    breaches: list[tuple[int, int]] = []
    pad = _padded_incidence(inst)
    streams = np.random.SeedSequence(seed).spawn(T)
    for t in range(2, T + 1):
        rng = np.random.Generator(np.random.PCG64(streams[t - 1]))
        free_at = simulate_adap_availability(inst, sol.x, beta, gamma, t - 1, samples, rng, pad)
        est = (free_at <= t).mean(axis=0)
        beta[:, t - 1] = est
        stderr[:, t - 1] = np.sqrt(est * (1 - est) / samples)
        for u in np.flatnonzero(est < gamma):
            breaches.append((int(u), t))
            if strict and est[u] + BREACH_SIGMAS * max(stderr[u, t - 1], 1 / samples) < gamma:
                raise ValidityBreach(int(u), t, float(est[u]), gamma, "significant at the configured level")
    return AttenuationTable(
        beta=beta, gamma=gamma, method="monte-carlo", samples=samples, stderr=stderr, breaches=breaches
    )
