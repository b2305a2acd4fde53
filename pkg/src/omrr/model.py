"""Instances of online matching with reusable resources.

An instance is a bipartite graph between offline resources and online
request types, a horizon of ``T`` rounds, per-round arrival probabilities and
an occupation-time distribution per edge (optionally per edge and round).

Rounds are numbered ``1..T`` everywhere in the public API.  Arrays indexed by
round use column ``t - 1``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Hashable, Mapping, Sequence

import numpy as np

PROB_TOL = 1e-9
INSTANCE_FORMAT = "omrr-instance/1"


def available_from(match_round: int, occupation: int) -> int:
    """First round at which a resource matched at ``match_round`` is free again.

    Occupations 0 and 1 behave identically: only one arrival exists per
    round, so reuse inside the matching round is unobservable.
    """
    return match_round + max(int(occupation), 1)


def is_blocked(match_round: int, occupation: int, t: int) -> bool:
    """Whether a match at ``match_round`` with ``occupation`` blocks round ``t``.

    For ``t > match_round`` this is exactly the indicator ``occupation > t - match_round``
    used in the resource constraint of the benchmark LP.
    """
    return match_round < t < available_from(match_round, occupation)


@dataclass(frozen=True, eq=False)
class OccupationDistribution:
    """Distribution of an integral occupation time over ``{0, ..., T}``."""

    pmf: np.ndarray

    def __post_init__(self) -> None:
        pmf = np.asarray(self.pmf, dtype=float)
        if pmf.ndim != 1 or pmf.size == 0:
            raise ValueError("pmf must be a non-empty 1-d array indexed by duration")
        pmf.setflags(write=False)
        object.__setattr__(self, "pmf", pmf)

    @classmethod
    def point_mass(cls, duration: int, horizon: int) -> OccupationDistribution:
        if not 0 <= duration <= horizon:
            raise ValueError(f"duration {duration} outside 0..{horizon}")
        pmf = np.zeros(horizon + 1)
        pmf[duration] = 1.0
        return cls(pmf)

    @classmethod
    def from_mapping(
        cls, probs: Mapping[int, float], horizon: int, normalize: bool = False
    ) -> OccupationDistribution:
        pmf = np.zeros(horizon + 1)
        for d, p in probs.items():
            if not 0 <= int(d) <= horizon:
                raise ValueError(f"duration {d} outside 0..{horizon}")
            pmf[int(d)] += p
        return cls(pmf).normalized() if normalize else cls(pmf)

    def normalized(self) -> OccupationDistribution:
        total = self.pmf.sum()
        if total <= 0:
            raise ValueError("cannot normalize a pmf with no mass")
        return OccupationDistribution(self.pmf / total)

    @property
    def horizon(self) -> int:
        return self.pmf.size - 1

    @cached_property
    def tails(self) -> np.ndarray:
        """``tails[d] = Pr[C > d]`` for ``d = 0..T``."""
        # reverse cumulative sum, shifted by one
        rev = np.cumsum(self.pmf[::-1])[::-1]
        out = np.empty_like(self.pmf)
        out[:-1] = rev[1:]
        out[-1] = 0.0
        np.clip(out, 0.0, None, out=out)
        out.setflags(write=False)
        return out

    @cached_property
    def cdf(self) -> np.ndarray:
        out = np.cumsum(self.pmf)
        out.setflags(write=False)
        return out

    def tail(self, d: int) -> float:
        """``Pr[C > d]``; zero for ``d >= T``."""
        if d < 0:
            return float(self.pmf.sum())
        if d >= self.horizon:
            return 0.0
        return float(self.tails[d])

    def mean(self) -> float:
        return float(np.dot(np.arange(self.pmf.size), self.pmf))

    def support(self) -> np.ndarray:
        return np.flatnonzero(self.pmf > 0)

    def sample(self, u: float) -> int:
        """Inverse-CDF draw from a uniform ``u`` in ``[0, 1)``."""
        idx = int(self.cdf.searchsorted(u * self._mass, side="right"))
        return min(idx, self.horizon)

    @cached_property
    def _mass(self) -> float:
        return float(self.cdf[-1])


@dataclass(frozen=True, eq=False)
class ArrivalProcess:
    """Arrival probabilities ``p[v, t]``.

    ``rates`` is either a ``(V, T)`` matrix or a length-``V`` vector for
    stationary (KIID) arrivals, which is broadcast over rounds without copying.
    """

    rates: np.ndarray
    horizon: int

    def __post_init__(self) -> None:
        rates = np.asarray(self.rates, dtype=float)
        if rates.ndim not in (1, 2):
            raise ValueError("rates must be (V,) or (V, T)")
        if rates.ndim == 2 and rates.shape[1] != self.horizon:
            raise ValueError(f"rates has {rates.shape[1]} rounds, horizon is {self.horizon}")
        rates.setflags(write=False)
        object.__setattr__(self, "rates", rates)

    @property
    def stationary(self) -> bool:
        return self.rates.ndim == 1

    @property
    def n_types(self) -> int:
        return self.rates.shape[0]

    @property
    def matrix(self) -> np.ndarray:
        """Read-only ``(V, T)`` view of the rates."""
        if self.stationary:
            return np.broadcast_to(self.rates[:, None], (self.n_types, self.horizon))
        return self.rates

    def rate(self, v: int, t: int) -> float:
        if self.stationary:
            return float(self.rates[v])
        return float(self.rates[v, t - 1])

    @cached_property
    def cumulative(self) -> np.ndarray:
        """Cumulative rates over types in type order, ``(V,)`` or ``(V, T)``."""
        out = np.cumsum(self.rates, axis=0)
        out.setflags(write=False)
        return out

    def round_mass(self) -> np.ndarray:
        """Total arrival probability per round, length ``T``."""
        if self.stationary:
            return np.full(self.horizon, self.rates.sum())
        return self.rates.sum(axis=0)


@dataclass(frozen=True, eq=False)
class Instance:
    """An instance with resources, request types, weighted edges and distributions.

    Edges are stored as parallel index arrays.  ``occupation_index`` maps each
    edge (shape ``(E,)``) or each edge and round (shape ``(E, T)``) to an
    entry of ``occupations``.
    """

    resources: tuple[Hashable, ...]
    request_types: tuple[Hashable, ...]
    edge_u: np.ndarray
    edge_v: np.ndarray
    weights: np.ndarray
    horizon: int
    arrivals: ArrivalProcess
    occupations: tuple[OccupationDistribution, ...]
    occupation_index: np.ndarray
    name: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        for attr, dtype in (
            ("edge_u", np.int64),
            ("edge_v", np.int64),
            ("weights", float),
            ("occupation_index", np.int64),
        ):
            arr = np.asarray(getattr(self, attr), dtype=dtype)
            arr.setflags(write=False)
            object.__setattr__(self, attr, arr)
        object.__setattr__(self, "resources", tuple(self.resources))
        object.__setattr__(self, "request_types", tuple(self.request_types))
        if not (self.edge_u.shape == self.edge_v.shape == self.weights.shape):
            raise ValueError("edge arrays must have equal length")
        if self.horizon < 1:
            raise ValueError("horizon must be a positive integer")

    @classmethod
    def from_edges(
        cls,
        resources: Sequence[Hashable],
        request_types: Sequence[Hashable],
        edges: Mapping[tuple[Hashable, Hashable], float],
        horizon: int,
        rates: Any,
        occupation: (
            OccupationDistribution
            | Mapping[tuple[Hashable, Hashable], OccupationDistribution]
            | Mapping[tuple[tuple[Hashable, Hashable], int], OccupationDistribution]
        ),
        name: str = "",
    ) -> Instance:
        """Build an instance from labelled edges.

        ``rates`` is a ``(V, T)`` array, a ``(V,)`` array, or a mapping
        ``(type, round) -> p``.  ``occupation`` is one distribution shared by
        all edges, a mapping ``edge -> dist``, or a time-indexed mapping
        ``(edge, round) -> dist``.  Missing time-indexed entries are left as
        ``-1`` so that validation can report them.
        """
        u_pos = {u: i for i, u in enumerate(resources)}
        v_pos = {v: i for i, v in enumerate(request_types)}
        keys = list(edges)
        edge_u = np.array([u_pos.get(u, -1) for u, _ in keys], dtype=np.int64)
        edge_v = np.array([v_pos.get(v, -1) for _, v in keys], dtype=np.int64)
        weights = np.array([edges[k] for k in keys], dtype=float)

        if isinstance(rates, Mapping):
            mat = np.zeros((len(request_types), horizon))
            for (v, t), p in rates.items():
                mat[v_pos[v], t - 1] = p
            rates = mat
        arrivals = ArrivalProcess(np.asarray(rates, dtype=float), horizon)

        dists: list[OccupationDistribution] = []
        ids: dict[int, int] = {}

        def intern(d: OccupationDistribution) -> int:
            if id(d) not in ids:
                ids[id(d)] = len(dists)
                dists.append(d)
            return ids[id(d)]

        if isinstance(occupation, OccupationDistribution):
            occ_idx = np.full(len(keys), intern(occupation), dtype=np.int64)
        else:
            time_indexed = any(
                isinstance(k, tuple) and len(k) == 2 and isinstance(k[0], tuple)
                for k in occupation
            )
            if time_indexed:
                occ_idx = np.full((len(keys), horizon), -1, dtype=np.int64)
                pos = {k: i for i, k in enumerate(keys)}
                for (e, t), d in occupation.items():
                    occ_idx[pos[e], t - 1] = intern(d)
            else:
                occ_idx = np.array(
                    [intern(occupation[k]) if k in occupation else -1 for k in keys],
                    dtype=np.int64,
                )
        return cls(
            resources=tuple(resources),
            request_types=tuple(request_types),
            edge_u=edge_u,
            edge_v=edge_v,
            weights=weights,
            horizon=horizon,
            arrivals=arrivals,
            occupations=tuple(dists),
            occupation_index=occ_idx,
            name=name,
        )

    @property
    def n_resources(self) -> int:
        return len(self.resources)

    @property
    def n_types(self) -> int:
        return len(self.request_types)

    @property
    def n_edges(self) -> int:
        return int(self.edge_u.size)

    @property
    def time_indexed(self) -> bool:
        return self.occupation_index.ndim == 2

    def occupation(self, e: int, t: int | None = None) -> OccupationDistribution:
        """Occupation distribution of edge ``e`` (for a match in round ``t``)."""
        if self.time_indexed:
            if t is None:
                raise ValueError("time-indexed occupation needs a round")
            return self.occupations[self.occupation_index[e, t - 1]]
        return self.occupations[self.occupation_index[e]]

    @cached_property
    def occupation_matrix(self) -> np.ndarray:
        """Occupation index per (edge, round) as a read-only ``(E, T)`` view."""
        if self.time_indexed:
            return self.occupation_index
        return np.broadcast_to(self.occupation_index[:, None], (self.n_edges, self.horizon))

    @cached_property
    def tail_table(self) -> np.ndarray:
        """``tail_table[k, d] = Pr[C > d]`` for distribution ``k`` and ``d = 0..T``."""
        table = np.zeros((len(self.occupations), self.horizon + 1))
        for k, dist in enumerate(self.occupations):
            tails = dist.tails[: self.horizon + 1]
            table[k, : tails.size] = tails
        table.setflags(write=False)
        return table

    @cached_property
    def type_incidence(self) -> tuple[np.ndarray, np.ndarray]:
        """CSR-style ``(ptr, order)``: edges of type ``v`` are ``order[ptr[v]:ptr[v+1]]``."""
        order = np.lexsort((self.edge_u, self.edge_v))
        counts = np.bincount(self.edge_v, minlength=self.n_types)
        ptr = np.concatenate([[0], np.cumsum(counts)])
        return ptr, order

    @cached_property
    def _by_resource(self) -> tuple[np.ndarray, np.ndarray]:
        order = np.lexsort((self.edge_v, self.edge_u))
        counts = np.bincount(self.edge_u, minlength=self.n_resources)
        ptr = np.concatenate([[0], np.cumsum(counts)])
        return ptr, order

    def edges_of_type(self, v: int) -> np.ndarray:
        """Edge indices incident to type ``v``, ordered by resource index."""
        ptr, order = self.type_incidence
        return order[ptr[v] : ptr[v + 1]]

    def edges_of_resource(self, u: int) -> np.ndarray:
        ptr, order = self._by_resource
        return order[ptr[u] : ptr[u + 1]]

    def edge_label(self, e: int) -> tuple[Hashable, Hashable]:
        return self.resources[self.edge_u[e]], self.request_types[self.edge_v[e]]

    def with_weights(self, weights: np.ndarray) -> Instance:
        return _replace(self, weights=np.asarray(weights, dtype=float))

    def with_arrivals(self, rates: np.ndarray) -> Instance:
        return _replace(self, arrivals=ArrivalProcess(rates, self.horizon))


def _replace(inst: Instance, **changes: Any) -> Instance:
    kwargs = {
        name: getattr(inst, name)
        for name in (
            "resources",
            "request_types",
            "edge_u",
            "edge_v",
            "weights",
            "horizon",
            "arrivals",
            "occupations",
            "occupation_index",
            "name",
            "meta",
        )
    }
    kwargs.update(changes)
    return Instance(**kwargs)


@dataclass(frozen=True)
class Violation:
    field: str
    message: str
    where: Any = None

    def __str__(self) -> str:
        loc = f" at {self.where}" if self.where is not None else ""
        return f"{self.field}{loc}: {self.message}"


def validate_instance(inst: Instance, tol: float = PROB_TOL) -> list[Violation]:
    """Check every structural and probabilistic invariant of ``inst``.

    Returns the list of violations; an empty list means the instance is valid.
    """
    out: list[Violation] = []
    U, V, T = inst.n_resources, inst.n_types, inst.horizon

    bad_u = np.flatnonzero((inst.edge_u < 0) | (inst.edge_u >= U))
    bad_v = np.flatnonzero((inst.edge_v < 0) | (inst.edge_v >= V))
    for e in bad_u:
        out.append(Violation("edges", "resource endpoint not in resources", int(e)))
    for e in bad_v:
        out.append(Violation("edges", "request-type endpoint not in request_types", int(e)))
    if inst.n_edges and not (bad_u.size or bad_v.size):
        keys = inst.edge_u * max(V, 1) + inst.edge_v
        if np.unique(keys).size != keys.size:
            out.append(Violation("edges", "duplicate edge"))

    for e in np.flatnonzero(~np.isfinite(inst.weights) | (inst.weights < 0)):
        out.append(Violation("weights", f"weight {inst.weights[e]} not finite and >= 0", int(e)))

    rates = inst.arrivals.rates
    if inst.arrivals.n_types != V:
        out.append(Violation("arrivals", f"rates cover {inst.arrivals.n_types} types, expected {V}"))
    elif inst.arrivals.horizon != T:
        out.append(Violation("arrivals", f"rates cover {inst.arrivals.horizon} rounds, expected {T}"))
    else:
        if not np.all(np.isfinite(rates)):
            out.append(Violation("arrivals", "non-finite arrival probability"))
        for idx in zip(*np.nonzero((rates < -tol) | (rates > 1 + tol))):
            out.append(Violation("arrivals", "probability outside [0, 1]", tuple(int(i) for i in idx)))
        mass = inst.arrivals.round_mass()
        for t in np.flatnonzero(mass > 1 + tol):
            out.append(
                Violation("arrivals", f"total arrival mass {mass[t]:.12g} exceeds 1", {"round": int(t) + 1})
            )

    for k, dist in enumerate(inst.occupations):
        pmf = dist.pmf
        if pmf.size != T + 1:
            out.append(Violation("occupation", f"support length {pmf.size - 1} differs from horizon {T}", k))
        if np.any(pmf < -tol) or not np.all(np.isfinite(pmf)):
            out.append(Violation("occupation", "negative or non-finite probability", k))
        if abs(pmf.sum() - 1.0) > tol:
            out.append(Violation("occupation", f"pmf sums to {pmf.sum():.12g}", k))

    idx = inst.occupation_index
    expected = (inst.n_edges, T) if inst.time_indexed else (inst.n_edges,)
    if idx.shape != expected:
        out.append(Violation("occupation", f"index shape {idx.shape}, expected {expected}"))
    else:
        missing = (idx < 0) | (idx >= len(inst.occupations))
        for pos in zip(*np.nonzero(missing)):
            if inst.time_indexed:
                where = {"edge": int(pos[0]), "round": int(pos[1]) + 1}
            else:
                where = {"edge": int(pos[0])}
            out.append(Violation("occupation", "no distribution for edge", where))
    return out


class InvalidInstance(ValueError):
    def __init__(self, violations: list[Violation]):
        self.violations = violations
        lines = "\n".join(f"  - {v}" for v in violations[:20])
        more = f"\n  ... {len(violations) - 20} more" if len(violations) > 20 else ""
        super().__init__(f"instance has {len(violations)} violation(s):\n{lines}{more}")


def require_valid(inst: Instance) -> None:
    problems = validate_instance(inst)
    if problems:
        raise InvalidInstance(problems)


# -- serialization ---------------------------------------------------------


def _label(x: Any) -> Any:
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, tuple):
        return [_label(i) for i in x]
    return x


def _unlabel(x: Any) -> Hashable:
    if isinstance(x, list):
        return tuple(_unlabel(i) for i in x)
    return x


def instance_to_dict(inst: Instance) -> dict:
    return {
        "format": INSTANCE_FORMAT,
        "name": inst.name,
        "horizon": inst.horizon,
        "resources": [_label(u) for u in inst.resources],
        "request_types": [_label(v) for v in inst.request_types],
        "edges": {
            "resource": inst.edge_u.tolist(),
            "type": inst.edge_v.tolist(),
            "weight": inst.weights.tolist(),
        },
        "arrivals": {
            "stationary": inst.arrivals.stationary,
            "rates": inst.arrivals.rates.tolist(),
        },
        "occupations": [d.pmf.tolist() for d in inst.occupations],
        "occupation_index": inst.occupation_index.tolist(),
        "meta": inst.meta,
    }


def instance_from_dict(doc: Mapping[str, Any]) -> Instance:
    fmt = doc.get("format")
    if fmt != INSTANCE_FORMAT:
        raise ValueError(f"unsupported instance format {fmt!r}, expected {INSTANCE_FORMAT!r}")
    T = int(doc["horizon"])
    return Instance(
        resources=tuple(_unlabel(u) for u in doc["resources"]),
        request_types=tuple(_unlabel(v) for v in doc["request_types"]),
        edge_u=np.asarray(doc["edges"]["resource"], dtype=np.int64),
        edge_v=np.asarray(doc["edges"]["type"], dtype=np.int64),
        weights=np.asarray(doc["edges"]["weight"], dtype=float),
        horizon=T,
        arrivals=ArrivalProcess(np.asarray(doc["arrivals"]["rates"], dtype=float), T),
        occupations=tuple(OccupationDistribution(np.asarray(p)) for p in doc["occupations"]),
        occupation_index=np.asarray(doc["occupation_index"], dtype=np.int64),
        name=doc.get("name", ""),
        meta=dict(doc.get("meta", {})),
    )


def save_instance(inst: Instance, path: str | Path) -> None:
    Path(path).write_text(json.dumps(instance_to_dict(inst)) + "\n")


def load_instance(path: str | Path) -> Instance:
    return instance_from_dict(json.loads(Path(path).read_text()))


def single_edge_instance(
    horizon: int,
    occupation: int | OccupationDistribution,
    rate: float = 1.0,
    weight: float = 1.0,
) -> Instance:
    """One resource, one request type, one edge; the workhorse test fixture."""
    dist = (
        occupation
        if isinstance(occupation, OccupationDistribution)
        else OccupationDistribution.point_mass(occupation, horizon)
    )
    return Instance.from_edges(
        ["u"], ["v"], {("u", "v"): weight}, horizon, np.full((1, horizon), rate), dist,
        name=f"single-edge-T{horizon}",
    )


def fixture_two_by_three() -> Instance:
    """Two resources, three request types, four rounds; satisfies every invariant."""
    T = 4
    occ_a = OccupationDistribution.from_mapping({1: 0.5, 2: 0.3, 3: 0.2}, T)
    occ_b = OccupationDistribution.from_mapping({0: 0.2, 2: 0.8}, T)
    edges = {
        ("u1", "a"): 3.0,
        ("u1", "b"): 1.0,
        ("u2", "b"): 2.0,
        ("u2", "c"): 4.0,
        ("u1", "c"): 0.5,
    }
    rates = np.array(
        [
            [0.5, 0.2, 0.3, 0.1],
            [0.3, 0.3, 0.3, 0.6],
            [0.1, 0.4, 0.2, 0.3],
        ]
    )
    occupation = {e: (occ_a if e[0] == "u1" else occ_b) for e in edges}
    return Instance.from_edges(["u1", "u2"], ["a", "b", "c"], edges, T, rates, occupation, name="fixture-2x3")
