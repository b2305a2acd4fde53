"""Concrete LP backends.

The ``lp`` module only relies on the :class:`LpSolver` protocol; this module
supplies the default backend (HiGHS through :func:`scipy.optimize.linprog`).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Protocol

import numpy as np
from scipy.optimize import linprog

if TYPE_CHECKING:
    from .lp import LinearProgram


@dataclass
class SolverOutput:
    status: str  # "optimal" | "infeasible" | "numerical-trouble"
    values: np.ndarray | None
    objective: float
    message: str = ""


class LpSolver(Protocol):
    def solve(self, lp: LinearProgram) -> SolverOutput: ...


_STATUS = {0: "optimal", 2: "infeasible", 3: "unbounded"}


def _forced_zero_columns(lp: LinearProgram) -> np.ndarray:
    """Columns that a nonnegative row with right-hand side 0 pins to zero."""
    A = lp.A_ub.tocsr()
    if A.shape[0] == 0 or np.any(lp.lower < 0):
        return np.zeros(lp.n_vars, dtype=bool)
    row_min = np.full(A.shape[0], np.inf)
    nnz_rows = np.repeat(np.arange(A.shape[0]), np.diff(A.indptr))
    if A.nnz:
        np.minimum.at(row_min, nnz_rows, A.data)
    pinning = (lp.b_ub <= 0) & (row_min > 0) & np.isfinite(row_min)
    forced = np.zeros(lp.n_vars, dtype=bool)
    if pinning.any():
        sub = A[np.flatnonzero(pinning)]
        forced[np.unique(sub.indices)] = True
    forced |= lp.upper <= 0
    return forced


@dataclass
class HighsSolver:
    """Dual simplex / IPM via HiGHS; deterministic for a fixed configuration."""

    method: str = "highs"
    tolerance: float = 1e-9
    presolve_zeros: bool = True

    def solve(self, lp: LinearProgram) -> SolverOutput:
        keep = np.ones(lp.n_vars, dtype=bool)
        if self.presolve_zeros:
            keep &= ~_forced_zero_columns(lp)
        cols = np.flatnonzero(keep)
        A_ub = lp.A_ub.tocsc()[:, cols].tocsr()
        b_ub = lp.b_ub
        live = np.diff(A_ub.indptr) > 0
        A_ub, b_ub = A_ub[live], b_ub[live]
        A_eq = b_eq = None
        if lp.A_eq is not None and lp.A_eq.shape[0]:
            A_eq = lp.A_eq.tocsc()[:, cols].tocsr()
            b_eq = lp.b_eq
            live_eq = np.diff(A_eq.indptr) > 0
            if np.any(np.abs(b_eq[~live_eq]) > 0):
                return SolverOutput("infeasible", None, float("nan"), "empty equality row with nonzero rhs")
            A_eq, b_eq = A_eq[live_eq], b_eq[live_eq]
            if A_eq.shape[0] == 0:
                A_eq = b_eq = None
        values = np.zeros(lp.n_vars)
        if cols.size == 0:
            return SolverOutput("optimal", values, 0.0)
        res = linprog(
            -lp.objective[cols],
            A_ub=A_ub if A_ub.shape[0] else None,
            b_ub=b_ub if A_ub.shape[0] else None,
            A_eq=A_eq,
            b_eq=b_eq,
            bounds=np.column_stack([lp.lower[cols], lp.upper[cols]]),
            method=self.method,
            options={
                "primal_feasibility_tolerance": self.tolerance,
                "dual_feasibility_tolerance": self.tolerance,
                "presolve": True,
            },
        )
        status = _STATUS.get(res.status, "numerical-trouble")
        if res.x is None:
            return SolverOutput(status, None, float("nan"), res.message)
        values[cols] = res.x
        return SolverOutput(status, values, float(lp.objective @ values), res.message)


def default_solver() -> LpSolver:
    return HighsSolver()

