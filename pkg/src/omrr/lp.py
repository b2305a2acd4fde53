"""Benchmark LP construction, solving and solution checking.

Variables ``x[e, t]`` are the probabilities that edge ``e`` is used in round
``t``.  The program maximizes the expected matched weight subject to

* one arrival per round: ``sum_{e in d(v)} x[e, t] <= p[v, t]``;
* resource reuse: ``sum_{t' < t} sum_{e in d(u)} x[e, t'] Pr[C_e > t - t']
  + sum_{e in d(u)} x[e, t] <= 1``, with ``C_{e,t'}`` in time-sensitive mode;
* ``0 <= x <= 1``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import scipy.sparse as sp

from .model import Instance, require_valid

TAIL_CUTOFF = 1e-12
SOLUTION_FORMAT = "omrr-lpsolution/1"


@dataclass
class LinearProgram:
    """A maximization LP in matrix form with labelled row and column blocks.

    The first ``prod(primary_shape)`` columns are the primary variables
    (``x[e, t]`` flattened row-major for the benchmark LP).  ``row_blocks``
    maps a constraint family to ``(start, shape)`` within ``A_ub`` and
    ``eq_blocks`` does the same for ``A_eq``.
    """

    objective: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    A_ub: sp.csr_matrix
    b_ub: np.ndarray
    primary_shape: tuple[int, ...]
    row_blocks: dict[str, tuple[int, tuple[int, ...]]]
    A_eq: sp.csr_matrix | None = None
    b_eq: np.ndarray | None = None
    eq_blocks: dict[str, tuple[int, tuple[int, ...]]] = field(default_factory=dict)
    var_blocks: dict[str, tuple[int, tuple[int, ...]]] = field(default_factory=dict)
    name: str = ""

    @property
    def n_vars(self) -> int:
        return self.objective.size

    @property
    def n_primary(self) -> int:
        return int(np.prod(self.primary_shape))

    def row_index(self, family: str, *key: int) -> int:
        start, shape = self.row_blocks[family]
        return start + int(np.ravel_multi_index(key, shape))

    def row(self, family: str, *key: int) -> tuple[dict[tuple, float], float]:
        """Nonzero coefficients (by variable label) and right side of one row.

        Keys use 0-based positions, e.g. ``lp.row("resource", u, t - 1)``.
        """
        i = self.row_index(family, *key)
        r = self.A_ub.getrow(i)
        coefs = {self.var_label(j): float(a) for j, a in zip(r.indices, r.data) if a != 0}
        return coefs, float(self.b_ub[i])

    def var_label(self, j: int) -> tuple:
        for name, (start, shape) in self.var_blocks.items():
            stop = start + int(np.prod(shape))
            if start <= j < stop:
                idx = np.unravel_index(j - start, shape)
                return (name, *(int(i) for i in idx))
        raise IndexError(j)


@dataclass
class LpSolution:
    """Fractional allocation plus objective and solver status."""

    x: np.ndarray
    objective: float
    status: str = "optimal"
    time_sensitive: bool = False

    def to_dict(self) -> dict:
        return {
            "format": SOLUTION_FORMAT,
            "status": self.status,
            "objective": self.objective,
            "time_sensitive": self.time_sensitive,
            "x": self.x.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> LpSolution:
        if doc.get("format") != SOLUTION_FORMAT:
            raise ValueError(f"unsupported solution format {doc.get('format')!r}")
        return cls(
            x=np.asarray(doc["x"], dtype=float),
            objective=float(doc["objective"]),
            status=doc["status"],
            time_sensitive=bool(doc.get("time_sensitive", False)),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> LpSolution:
        return cls.from_dict(json.loads(Path(path).read_text()))


class LpDefect(RuntimeError):
    """Solver reported infeasibility or failed numerically."""


def _resolve_time_sensitive(inst: Instance, time_sensitive: bool | None) -> bool:
    if time_sensitive is None:
        return inst.time_indexed
    if time_sensitive and not inst.time_indexed:
        raise ValueError("time-sensitive LP needs an occupation distribution for every (edge, round)")
    if not time_sensitive and inst.time_indexed:
        raise ValueError("instance has round-dependent occupation; build with time_sensitive=True")
    return time_sensitive


def _arrival_block(inst: Instance) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    E, T = inst.n_edges, inst.horizon
    ts = np.arange(T)
    rows = (inst.edge_v[:, None] * T + ts[None, :]).ravel()
    cols = (np.arange(E)[:, None] * T + ts[None, :]).ravel()
    return rows, cols, np.ones(rows.size)


def _lag_terms(occ: np.ndarray, tails: np.ndarray, cutoff: float):
    """Yield ``(lag, source_rows, source_rounds, coef)`` for tail terms above ``cutoff``.

    ``occ`` is an ``(N, T)`` distribution-index matrix; ``source_rounds`` are
    0-based rounds ``t'`` whose allocation reaches round ``t' + lag``.
    """
    N, T = occ.shape
    for lag in range(1, T):
        if tails[:, lag].max(initial=0.0) <= cutoff:
            continue
        coef = tails[occ[:, : T - lag], lag]
        mask = coef > cutoff
        if not mask.any():
            continue
        src, rnd = np.nonzero(mask)
        yield lag, src, rnd, coef[mask]


def build_benchmark_lp(
    inst: Instance,
    time_sensitive: bool | None = None,
    compact: bool | None = None,
    tail_cutoff: float = TAIL_CUTOFF,
) -> LinearProgram:
    """Assemble the benchmark LP for ``inst``.

    ``compact`` introduces one auxiliary variable per (resource, occupation
    group, round) equal to the group's total allocation, so the reuse rows
    carry ``O(groups * T^2)`` instead of ``O(E * T^2)`` nonzeros.  Both forms
    have the same optimal ``x``-projection.  ``None`` picks the compact form
    when it saves at least half of the edges.
    """
    require_valid(inst)
    ts_mode = _resolve_time_sensitive(inst, time_sensitive)
    E, U, V, T = inst.n_edges, inst.n_resources, inst.n_types, inst.horizon
    occ = inst.occupation_matrix
    tails = inst.tail_table

    # grouping for the compact form
    key = np.column_stack([inst.edge_u, occ if ts_mode else occ[:, :1]])
    groups, group_of_edge = np.unique(key, axis=0, return_inverse=True)
    group_of_edge = group_of_edge.ravel()
    G = groups.shape[0]
    if compact is None:
        compact = 2 * G <= E
    n_x = E * T
    n_vars = n_x + (G * T if compact else 0)

    a_rows, a_cols, a_vals = _arrival_block(inst)
    arrival_rhs = np.ascontiguousarray(inst.arrivals.matrix).ravel()

    ts = np.arange(T)
    r_rows: list[np.ndarray] = []
    r_cols: list[np.ndarray] = []
    r_vals: list[np.ndarray] = []
    eq = None
    if not compact:
        # current-round term
        r_rows.append((inst.edge_u[:, None] * T + ts[None, :]).ravel())
        r_cols.append((np.arange(E)[:, None] * T + ts[None, :]).ravel())
        r_vals.append(np.ones(E * T))
        for lag, src, rnd, coef in _lag_terms(np.asarray(occ), tails, tail_cutoff):
            r_rows.append(inst.edge_u[src] * T + rnd + lag)
            r_cols.append(src * T + rnd)
            r_vals.append(coef)
    else:
        g_u = groups[:, 0]
        g_occ = groups[:, 1:] if ts_mode else np.broadcast_to(groups[:, 1:2], (G, T))
        y0 = n_x
        r_rows.append((g_u[:, None] * T + ts[None, :]).ravel())
        r_cols.append(y0 + (np.arange(G)[:, None] * T + ts[None, :]).ravel())
        r_vals.append(np.ones(G * T))
        for lag, src, rnd, coef in _lag_terms(np.asarray(g_occ), tails, tail_cutoff):
            r_rows.append(g_u[src] * T + rnd + lag)
            r_cols.append(y0 + src * T + rnd)
            r_vals.append(coef)
        # y[g, t] - sum_{e in g} x[e, t] = 0
        e_rows = (group_of_edge[:, None] * T + ts[None, :]).ravel()
        e_cols = (np.arange(E)[:, None] * T + ts[None, :]).ravel()
        y_idx = np.arange(G * T)
        eq = sp.csr_matrix(
            (
                np.concatenate([-np.ones(e_rows.size), np.ones(G * T)]),
                (np.concatenate([e_rows, y_idx]), np.concatenate([e_cols, y0 + y_idx])),
            ),
            shape=(G * T, n_vars),
        )

    rows = np.concatenate([a_rows, V * T + np.concatenate(r_rows)])
    cols = np.concatenate([a_cols, np.concatenate(r_cols)])
    vals = np.concatenate([a_vals, np.concatenate(r_vals)])
    A_ub = sp.csr_matrix((vals, (rows, cols)), shape=(V * T + U * T, n_vars))
    A_ub.sum_duplicates()
    b_ub = np.concatenate([arrival_rhs, np.ones(U * T)])

    objective = np.zeros(n_vars)
    objective[:n_x] = np.repeat(inst.weights, T)
    lower = np.zeros(n_vars)
    upper = np.ones(n_vars)
    var_blocks = {"x": (0, (E, T))}
    eq_blocks: dict[str, tuple[int, tuple[int, ...]]] = {}
    if compact:
        upper[n_x:] = np.inf
        var_blocks["y"] = (n_x, (G, T))
        eq_blocks["aggregate"] = (0, (G, T))
    return LinearProgram(
        objective=objective,
        lower=lower,
        upper=upper,
        A_ub=A_ub,
        b_ub=b_ub,
        primary_shape=(E, T),
        row_blocks={"arrival": (0, (V, T)), "resource": (V * T, (U, T))},
        A_eq=eq,
        b_eq=np.zeros(G * T) if compact else None,
        eq_blocks=eq_blocks,
        var_blocks=var_blocks,
        name=f"benchmark[{inst.name}]" + ("[time-sensitive]" if ts_mode else ""),
    )


def build_window_lp(K: int, n: int, lump_types: bool = False) -> LinearProgram:
    """The benchmark LP of the hardness construction in its window form.

    Complete graph with ``K`` resources and ``n**2`` types (edge ``u * n**2 + v``),
    ``n`` rounds, arrival rate ``1/n**2``, deterministic occupation ``K``.
    Reuse rows are the windows ``W_l = {l, ..., l + K - 1}``.

    With ``lump_types`` the exchangeable types are aggregated into one
    variable ``z[u, t] = sum_v x[(u, v), t]``; the aggregated arrival row is
    ``sum_u z[u, t] <= 1``.  Splitting ``z`` evenly over types recovers a
    feasible ``x`` with the same objective, so both optima coincide.
    """
    if K < 1 or n < K:
        raise ValueError("need K >= 1 and n >= K")
    T = n
    W = n - K + 1
    if lump_types:
        cols_per_u = 1
        V = 1
        rhs_arrival = 1.0
    else:
        cols_per_u = n * n
        V = n * n
        rhs_arrival = 1.0 / (n * n)
    E = K * cols_per_u
    ts = np.arange(T)
    e_idx = np.arange(E)
    e_u = e_idx // cols_per_u
    e_v = e_idx % cols_per_u

    a_rows = (e_v[:, None] * T + ts[None, :]).ravel()
    a_cols = (e_idx[:, None] * T + ts[None, :]).ravel()

    w_rows, w_cols = [], []
    for off in range(K):
        # window l (0-based) covers rounds l .. l + K - 1
        ell = np.arange(W)
        rnd = ell + off
        w_rows.append((e_u[:, None] * W + ell[None, :]).ravel())
        w_cols.append((e_idx[:, None] * T + rnd[None, :]).ravel())
    rows = np.concatenate([a_rows, V * T + np.concatenate(w_rows)])
    cols = np.concatenate([a_cols, np.concatenate(w_cols)])
    A_ub = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(V * T + K * W, E * T))
    b_ub = np.concatenate([np.full(V * T, rhs_arrival), np.ones(K * W)])
    var_name = "z" if lump_types else "x"
    return LinearProgram(
        objective=np.ones(E * T),
        lower=np.zeros(E * T),
        upper=np.ones(E * T),
        A_ub=A_ub,
        b_ub=b_ub,
        primary_shape=(E, T),
        row_blocks={"arrival": (0, (V, T)), "window": (V * T, (K, W))},
        var_blocks={var_name: (0, (E, T))},
        name=f"hardness-window[K={K},n={n}]" + ("[lumped]" if lump_types else ""),
    )


def solve_lp(lp: LinearProgram, solver=None, time_sensitive: bool = False) -> LpSolution:
    """Solve ``lp`` with ``solver`` (default backend when ``None``).

    Raises :class:`LpDefect` if the solver does not reach optimality.
    """
    if solver is None:
        from .solvers import default_solver

        solver = default_solver()
    out = solver.solve(lp)
    if out.status != "optimal" or out.values is None:
        raise LpDefect(f"{lp.name}: solver status {out.status}: {out.message}")
    x = np.clip(out.values[: lp.n_primary], 0.0, None).reshape(lp.primary_shape)
    return LpSolution(x=x, objective=float(out.objective), status=out.status, time_sensitive=time_sensitive)


def solve_instance(inst: Instance, time_sensitive: bool | None = None, solver=None) -> LpSolution:
    ts_mode = _resolve_time_sensitive(inst, time_sensitive)
    return solve_lp(build_benchmark_lp(inst, ts_mode), solver=solver, time_sensitive=ts_mode)


# -- independent re-evaluation ---------------------------------------------


@dataclass
class ResidualReport:
    bounds: float
    arrival: float
    resource: float
    objective: float
    tol: float
    worst: dict[str, Any] = field(default_factory=dict)

    @property
    def max_residual(self) -> float:
        return max(self.bounds, self.arrival, self.resource)

    @property
    def passed(self) -> bool:
        return self.max_residual <= self.tol


def resource_load(inst: Instance, x: np.ndarray) -> np.ndarray:
    """Left side of every reuse constraint, shape ``(U, T)``."""
    E, U, T = inst.n_edges, inst.n_resources, inst.horizon
    occ = inst.occupation_matrix
    tails = inst.tail_table
    incidence = sp.csr_matrix((np.ones(E), (inst.edge_u, np.arange(E))), shape=(U, E))
    load = incidence @ x
    for lag in range(1, T):
        if tails[:, lag].max(initial=0.0) == 0.0:
            continue
        carried = x[:, : T - lag] * tails[occ[:, : T - lag], lag]
        load[:, lag:] += incidence @ carried
    return np.asarray(load)


def check_solution(inst: Instance, sol: LpSolution | np.ndarray, tol: float = 1e-6) -> ResidualReport:
    """Re-evaluate every constraint family from the instance, not from an LP matrix."""
    x = sol.x if isinstance(sol, LpSolution) else np.asarray(sol, dtype=float)
    E, V, T = inst.n_edges, inst.n_types, inst.horizon
    if x.shape != (E, T):
        raise ValueError(f"solution shape {x.shape} does not cover ({E}, {T}) edge-rounds")
    bounds = float(max(np.max(-x, initial=0.0), np.max(x - 1.0, initial=0.0), 0.0)) + 0.0

    per_type = np.zeros((V, T))
    np.add.at(per_type, inst.edge_v, x)
    arr_excess = per_type - inst.arrivals.matrix
    load = resource_load(inst, x)
    res_excess = load - 1.0
    worst: dict[str, Any] = {}
    if arr_excess.size and arr_excess.max() > 0:
        v, t = np.unravel_index(np.argmax(arr_excess), arr_excess.shape)
        worst["arrival"] = {"type": int(v), "round": int(t) + 1}
    if res_excess.size and res_excess.max() > 0:
        u, t = np.unravel_index(np.argmax(res_excess), res_excess.shape)
        worst["resource"] = {"resource": int(u), "round": int(t) + 1}
    return ResidualReport(
        bounds=bounds,
        arrival=float(max(arr_excess.max(initial=0.0), 0.0)),
        resource=float(max(res_excess.max(initial=0.0), 0.0)),
        objective=float(np.sum(inst.weights[:, None] * x)),
        tol=tol,
        worst=worst,
    )


# -- export ----------------------------------------------------------------


def _lp_name(label: tuple) -> str:
    return "_".join(str(p) for p in label)


def write_lp_format(lp: LinearProgram, path: str | Path) -> None:
    """Write ``lp`` in CPLEX LP text format."""

    def terms(coefs) -> str:
        parts = []
        for j, a in coefs:
            sign = "-" if a < 0 else "+"
            parts.append(f"{sign} {abs(a):.17g} {_lp_name(lp.var_label(j))}")
        text = " ".join(parts) or "0"
        return text[2:] if text.startswith("+ ") else text

    lines = ["\\ " + (lp.name or "omrr"), "Maximize"]
    nz = np.flatnonzero(lp.objective)
    lines.append(" obj: " + terms(zip(nz, lp.objective[nz])))
    lines.append("Subject To")
    A = lp.A_ub.tocsr()
    for i in range(A.shape[0]):
        lo, hi = A.indptr[i], A.indptr[i + 1]
        lines.append(f" r{i}: {terms(zip(A.indices[lo:hi], A.data[lo:hi]))} <= {lp.b_ub[i]:.17g}")
    if lp.A_eq is not None:
        B = lp.A_eq.tocsr()
        for i in range(B.shape[0]):
            lo, hi = B.indptr[i], B.indptr[i + 1]
            lines.append(f" q{i}: {terms(zip(B.indices[lo:hi], B.data[lo:hi]))} = {lp.b_eq[i]:.17g}")
    lines.append("Bounds")
    for j in range(lp.n_vars):
        hi = "+inf" if np.isinf(lp.upper[j]) else f"{lp.upper[j]:.17g}"
        lines.append(f" {lp.lower[j]:.17g} <= {_lp_name(lp.var_label(j))} <= {hi}")
    lines.append("End")
    Path(path).write_text("\n".join(lines) + "\n")
