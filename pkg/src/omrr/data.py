"""Taxi-trip ingestion, training estimators and experiment instances.

Input records follow the column order of the 2013 NYC yellow-cab trip files::

    medallion, hack_license, vendor_id, rate_code, store_and_fwd_flag,
    pickup_datetime, dropoff_datetime, passenger_count, trip_time_in_secs,
    trip_distance, pickup_longitude, pickup_latitude, dropoff_longitude,
    dropoff_latitude

A request type is a (pickup cell, dropoff cell) pair on a regular
latitude/longitude grid.  A day is split into ``T`` rounds of ``step_seconds``.
"""

from __future__ import annotations

import csv
import json
import math
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from datetime import date, datetime, timedelta
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .model import Instance, OccupationDistribution

NYC_COLUMNS = (
    "medallion",
    "hack_license",
    "vendor_id",
    "rate_code",
    "store_and_fwd_flag",
    "pickup_datetime",
    "dropoff_datetime",
    "passenger_count",
    "trip_time_in_secs",
    "trip_distance",
    "pickup_longitude",
    "pickup_latitude",
    "dropoff_longitude",
    "dropoff_latitude",
)
DEFAULT_STEP_SECONDS = 300
DEFAULT_HORIZON = 24 * 60 * 60 // DEFAULT_STEP_SECONDS  # 288
TRAINED_FORMAT = "omrr-trained/1"

Cell = tuple[int, int]
TripType = tuple[Cell, Cell]


@dataclass(frozen=True)
class GridSpec:
    origin_lat: float = 40.5
    origin_lon: float = -74.3
    cell_size: float = 0.15
    n_lat: int | None = None  # bounding box in cells; None = unbounded
    n_lon: int | None = None

    def __post_init__(self) -> None:
        if not self.cell_size > 0:
            raise ValueError("cell_size must be positive")

    def cell(self, lat: float, lon: float) -> Cell:
        # half-open cells; the tiny offset keeps exact boundaries in the upper cell
        i = math.floor((lat - self.origin_lat) / self.cell_size + 1e-9)
        j = math.floor((lon - self.origin_lon) / self.cell_size + 1e-9)
        return i, j

    def inside(self, c: Cell) -> bool:
        i, j = c
        if i < 0 or j < 0:
            return False
        if self.n_lat is not None and i >= self.n_lat:
            return False
        if self.n_lon is not None and j >= self.n_lon:
            return False
        return True


@dataclass(frozen=True)
class TripRecord:
    license: str
    pickup_time: datetime
    dropoff_time: datetime
    trip_seconds: float
    pickup_lat: float
    pickup_lon: float
    dropoff_lat: float
    dropoff_lon: float


@dataclass
class ParseResult:
    trips: list[tuple[TripRecord, TripType]]
    malformed: int = 0
    out_of_bounds: int = 0

    @property
    def types(self) -> set[TripType]:
        return {v for _, v in self.trips}


def _parse_row(row: Sequence[str]) -> TripRecord:
    col = {name: row[i].strip() for i, name in enumerate(NYC_COLUMNS)}
    pickup = datetime.fromisoformat(col["pickup_datetime"])
    dropoff = datetime.fromisoformat(col["dropoff_datetime"])
    if dropoff < pickup:
        raise ValueError("dropoff before pickup")
    secs = float(col["trip_time_in_secs"]) if col["trip_time_in_secs"] else (dropoff - pickup).total_seconds()
    return TripRecord(
        license=col["hack_license"],
        pickup_time=pickup,
        dropoff_time=dropoff,
        trip_seconds=secs,
        pickup_lat=float(col["pickup_latitude"]),
        pickup_lon=float(col["pickup_longitude"]),
        dropoff_lat=float(col["dropoff_latitude"]),
        dropoff_lon=float(col["dropoff_longitude"]),
    )


def parse_trips(source: Iterable[str], grid: GridSpec) -> ParseResult:
    """Parse delimiter-separated trip lines; a header row is skipped if present."""
    out = ParseResult([])
    for row in csv.reader(source, skipinitialspace=True):
        if not row or (row[0].strip().lower() == "medallion"):
            continue
        try:
            rec = _parse_row(row)
        except (ValueError, IndexError):
            out.malformed += 1
            continue
        a = grid.cell(rec.pickup_lat, rec.pickup_lon)
        b = grid.cell(rec.dropoff_lat, rec.dropoff_lon)
        if not (grid.inside(a) and grid.inside(b)):
            out.out_of_bounds += 1
            continue
        out.trips.append((rec, (a, b)))
    return out


def trip_round(ts: datetime, step_seconds: int = DEFAULT_STEP_SECONDS) -> int:
    """1-based round of a timestamp within its day."""
    secs = ts.hour * 3600 + ts.minute * 60 + ts.second
    return secs // step_seconds + 1


def trip_length_rounds(rec: TripRecord, horizon: int, step_seconds: int = DEFAULT_STEP_SECONDS) -> int:
    """Occupation in rounds: started rounds of the trip, at least 1, at most ``horizon``."""
    return int(min(max(math.ceil(rec.trip_seconds / step_seconds), 1), horizon))


@dataclass
class ArrivalEstimate:
    types: list[TripType]
    counts: np.ndarray  # (V, T) appearances over the training days
    days: int
    kad: np.ndarray  # (V, T)
    kiid: np.ndarray  # (V,)
    rescaled_rounds: list[tuple[int, float]] = field(default_factory=list)  # (round, original mass)


def estimate_arrivals(
    trips: Iterable[tuple[TripRecord, TripType]],
    days: int,
    horizon: int = DEFAULT_HORIZON,
    step_seconds: int = DEFAULT_STEP_SECONDS,
    types: Sequence[TripType] | None = None,
) -> ArrivalEstimate:
    """KAD rates ``c[v, t] / D`` and KIID rates ``(sum_t c[v, t] / D) / T``.

    A round whose total KAD mass exceeds one is scaled down proportionally and
    reported.  KIID rates are flattened from the rescaled KAD rates, so their
    total never exceeds one.
    """
    if days < 1:
        raise ValueError("need at least one training day")
    trips = list(trips)
    if types is None:
        types = sorted({v for _, v in trips})
    pos = {v: i for i, v in enumerate(types)}
    counts = np.zeros((len(types), horizon))
    for rec, v in trips:
        if v not in pos:
            continue
        t = trip_round(rec.pickup_time, step_seconds)
        if t <= horizon:
            counts[pos[v], t - 1] += 1
    kad = counts / days
    rescaled = []
    mass = kad.sum(axis=0)
    for t in np.flatnonzero(mass > 1.0):
        rescaled.append((int(t) + 1, float(mass[t])))
        kad[:, t] /= mass[t]
    # flattened from the (possibly rescaled) KAD rates so per-type totals agree exactly
    kiid = kad.sum(axis=1) / horizon
    return ArrivalEstimate(list(types), counts, days, kad, kiid, rescaled)


# -- occupation-time fitting ------------------------------------------------


def discretized_normal(mu: float, sigma: float, horizon: int) -> OccupationDistribution:
    """Normal density evaluated on ``{1..T}`` and renormalized; point mass if ``sigma == 0``."""
    pmf = np.zeros(horizon + 1)
    if sigma <= 0 or not np.isfinite(sigma):
        pmf[int(min(max(round(mu), 1), horizon))] = 1.0
        return OccupationDistribution(pmf)
    d = np.arange(1, horizon + 1)
    logd = -0.5 * ((d - mu) / sigma) ** 2
    dens = np.exp(logd - logd.max())
    pmf[1:] = dens / dens.sum()
    return OccupationDistribution(pmf)


def power_law(exponent: float, horizon: int) -> OccupationDistribution:
    """``pmf(d) ∝ d ** -exponent`` on ``{1..T}``."""
    d = np.arange(1, horizon + 1, dtype=float)
    w = d ** (-exponent)
    pmf = np.zeros(horizon + 1)
    pmf[1:] = w / w.sum()
    return OccupationDistribution(pmf)


def power_law_mle(lengths: np.ndarray, horizon: int) -> float:
    """Maximum-likelihood exponent of a power law truncated to ``{1..T}``."""
    x = np.clip(np.rint(np.asarray(lengths, dtype=float)), 1, horizon)
    n = x.size
    if n == 0:
        raise ValueError("no lengths to fit")
    s = np.log(x).sum()
    logd = np.log(np.arange(1, horizon + 1, dtype=float))

    def nll(a: float) -> float:
        lz = np.logaddexp.reduce(-a * logd)
        return a * s + n * lz

    res = minimize_scalar(nll, bounds=(-10.0, 50.0), method="bounded", options={"xatol": 1e-10})
    return float(res.x)


def power_law_exponent_for_mean(mean: float, horizon: int) -> float:
    """Exponent whose truncated power law on ``{1..T}`` has the given mean."""
    d = np.arange(1, horizon + 1, dtype=float)

    def gap(a: float) -> float:
        w = d ** (-a)
        return float((d * w).sum() / w.sum()) - mean

    if not 1.0 < mean < (horizon + 1) / 2:
        raise ValueError(f"mean {mean} not reachable by a decreasing power law on 1..{horizon}")
    return float(brentq(gap, 0.0, 50.0, xtol=1e-12))


def fit_otd(lengths: Sequence[float], family: str, horizon: int) -> OccupationDistribution:
    """Fit an occupation distribution to trip lengths measured in rounds."""
    x = np.asarray(lengths, dtype=float)
    if x.size == 0:
        raise ValueError("no trip lengths")
    if family == "normal":
        sigma = float(x.std(ddof=1)) if x.size > 1 else 0.0
        return discretized_normal(float(x.mean()), sigma, horizon)
    if family in ("power-law", "powerlaw", "power_law"):
        return power_law(power_law_mle(x, horizon), horizon)
    raise ValueError(f"unknown OTD family {family!r}")


# -- training ----------------------------------------------------------------


def docking_positions(trips: Iterable[tuple[TripRecord, TripType]]) -> dict[str, Cell]:
    """Most frequent pickup cell per car; ties go to the lexicographically smallest cell."""
    by_car: dict[str, Counter] = defaultdict(Counter)
    for rec, (a, _) in trips:
        by_car[rec.license][a] += 1
    out = {}
    for car, cnt in by_car.items():
        top = max(cnt.values())
        out[car] = min(c for c, k in cnt.items() if k == top)
    return out


@dataclass
class TrainedModel:
    grid: GridSpec
    horizon: int
    step_seconds: int
    days: list[str]
    types: list[TripType]
    counts: np.ndarray
    kad: np.ndarray
    kiid: np.ndarray
    length_mean: float
    length_std: float
    power_exponent: float
    docking: dict[str, Cell]
    cars: list[str]
    rescaled_rounds: list[tuple[int, float]] = field(default_factory=list)
    truncated: int = 0

    def otd(self, family: str) -> OccupationDistribution:
        if family == "normal":
            return discretized_normal(self.length_mean, self.length_std, self.horizon)
        if family in ("power-law", "powerlaw"):
            return power_law(self.power_exponent, self.horizon)
        if family in ("power-law-matched", "powerlaw-matched"):
            # power law with the same mean as the fitted normal
            mean = discretized_normal(self.length_mean, self.length_std, self.horizon).mean()
            return power_law(power_law_exponent_for_mean(mean, self.horizon), self.horizon)
        raise ValueError(f"unknown OTD family {family!r}")

    def to_dict(self) -> dict:
        return {
            "format": TRAINED_FORMAT,
            "grid": asdict(self.grid),
            "horizon": self.horizon,
            "step_seconds": self.step_seconds,
            "days": self.days,
            "types": [[list(a), list(b)] for a, b in self.types],
            "counts": self.counts.tolist(),
            "kad": self.kad.tolist(),
            "kiid": self.kiid.tolist(),
            "length_mean": self.length_mean,
            "length_std": self.length_std,
            "power_exponent": self.power_exponent,
            "docking": {k: list(v) for k, v in self.docking.items()},
            "cars": self.cars,
            "rescaled_rounds": [list(r) for r in self.rescaled_rounds],
            "truncated": self.truncated,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> TrainedModel:
        if doc.get("format") != TRAINED_FORMAT:
            raise ValueError(f"unsupported model format {doc.get('format')!r}")
        return cls(
            grid=GridSpec(**doc["grid"]),
            horizon=int(doc["horizon"]),
            step_seconds=int(doc["step_seconds"]),
            days=list(doc["days"]),
            types=[(tuple(a), tuple(b)) for a, b in doc["types"]],
            counts=np.asarray(doc["counts"], dtype=float),
            kad=np.asarray(doc["kad"], dtype=float),
            kiid=np.asarray(doc["kiid"], dtype=float),
            length_mean=float(doc["length_mean"]),
            length_std=float(doc["length_std"]),
            power_exponent=float(doc["power_exponent"]),
            docking={k: tuple(v) for k, v in doc["docking"].items()},
            cars=list(doc["cars"]),
            rescaled_rounds=[tuple(r) for r in doc.get("rescaled_rounds", [])],
            truncated=int(doc.get("truncated", 0)),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> TrainedModel:
        return cls.from_dict(json.loads(Path(path).read_text()))


def split_days(trips: Sequence[tuple[TripRecord, TripType]], n_train: int, seed: int) -> tuple[list[date], list[date]]:
    """Random train/test partition of the distinct pickup days."""
    all_days = sorted({rec.pickup_time.date() for rec, _ in trips})
    if n_train > len(all_days):
        raise ValueError(f"asked for {n_train} training days, data has {len(all_days)}")
    rng = np.random.default_rng(seed)
    pick = set(rng.choice(len(all_days), size=n_train, replace=False).tolist())
    train = [d for i, d in enumerate(all_days) if i in pick]
    test = [d for i, d in enumerate(all_days) if i not in pick]
    return train, test


def train(
    trips: Sequence[tuple[TripRecord, TripType]],
    train_days: Sequence[date],
    grid: GridSpec,
    horizon: int = DEFAULT_HORIZON,
    step_seconds: int = DEFAULT_STEP_SECONDS,
    n_cars: int = 30,
    seed: int = 0,
) -> TrainedModel:
    """Estimate rates, occupation parameters, docking cells and pick the car set."""
    wanted = set(train_days)
    subset = [(rec, v) for rec, v in trips if rec.pickup_time.date() in wanted]
    if not subset:
        raise ValueError("no trips fall on the training days")
    est = estimate_arrivals(subset, len(wanted), horizon, step_seconds)
    lengths = np.array([trip_length_rounds(rec, horizon, step_seconds) for rec, _ in subset], dtype=float)
    truncated = sum(1 for rec, _ in subset if rec.dropoff_time.date() > rec.pickup_time.date())
    docking = docking_positions(subset)
    licenses = sorted(docking)
    rng = np.random.default_rng(seed)
    k = min(n_cars, len(licenses))
    cars = sorted(licenses[i] for i in rng.choice(len(licenses), size=k, replace=False))
    return TrainedModel(
        grid=grid,
        horizon=horizon,
        step_seconds=step_seconds,
        days=[d.isoformat() for d in sorted(wanted)],
        types=est.types,
        counts=est.counts,
        kad=est.kad,
        kiid=est.kiid,
        length_mean=float(lengths.mean()),
        length_std=float(lengths.std(ddof=1)) if lengths.size > 1 else 0.0,
        power_exponent=power_law_mle(lengths, horizon),
        docking=docking,
        cars=cars,
        rescaled_rounds=est.rescaled_rounds,
        truncated=truncated,
    )


def cell_distance(a: Cell, b: Cell, metric: str = "euclidean") -> float:
    """Distance between cell centers in cell units."""
    di, dj = a[0] - b[0], a[1] - b[1]
    if metric == "euclidean":
        return math.hypot(di, dj)
    if metric == "manhattan":
        return float(abs(di) + abs(dj))
    raise ValueError(f"unknown metric {metric!r}")


def edge_weight(trip_distance: float, docking_distance: float, alpha: float = 0.5) -> float:
    """Profit ``max(L1 - alpha * L2, 0)``."""
    return max(trip_distance - alpha * docking_distance, 0.0)


def build_experiment_instance(
    trained: TrainedModel,
    cars: Sequence[str] | None = None,
    weight_alpha: float = 0.5,
    arrival_mode: str = "kad",
    otd: str = "normal",
    metric: str = "euclidean",
    name: str | None = None,
) -> Instance:
    """Instance with every selected car connected to every type of positive weight."""
    cars = list(trained.cars if cars is None else cars)
    missing = [c for c in cars if c not in trained.docking]
    if missing:
        raise ValueError(f"no docking position for cars {missing[:5]}")
    T = trained.horizon
    edges: dict[tuple[str, str], float] = {}
    type_ids = [f"{a[0]},{a[1]}>{b[0]},{b[1]}" for a, b in trained.types]
    for car in cars:
        dock = trained.docking[car]
        for (a, b), tid in zip(trained.types, type_ids):
            w = edge_weight(cell_distance(a, b, metric), cell_distance(dock, a, metric), weight_alpha)
            if w > 0:
                edges[(car, tid)] = w
    if arrival_mode == "kad":
        rates = trained.kad
    elif arrival_mode == "kiid":
        rates = trained.kiid
    else:
        raise ValueError(f"unknown arrival mode {arrival_mode!r}")
    inst = Instance.from_edges(
        cars, type_ids, edges, T, rates, trained.otd(otd),
        name=name or f"taxi-{arrival_mode}-{otd}",
    )
    inst.meta.update({"arrival_mode": arrival_mode, "otd": otd, "weight_alpha": weight_alpha, "metric": metric})
    return inst


# -- synthetic trips -----------------------------------------------------------


@dataclass(frozen=True)
class SynthScenario:
    """Synthetic city: a grid of cells, a pool of cars and a daily intensity profile.

    Intensities are expected trips per round.  ``peaks`` lists
    ``(center_hour, width_hours, height)`` bumps added to ``off_peak``.
    """

    days: int = 31
    start: str = "2013-01-01"
    grid: GridSpec = GridSpec(n_lat=6, n_lon=6)
    n_cars: int = 60
    off_peak: float = 0.05
    peaks: tuple[tuple[float, float, float], ...] = ((8.5, 1.5, 0.35), (13.0, 3.0, 0.8), (18.5, 1.5, 0.45))
    max_intensity: float = 0.95
    popularity_skew: float = 1.1
    home_share: float = 0.7
    otd: str = "normal"
    mean_seconds: float = 900.0
    std_seconds: float = 420.0
    power_exponent: float = 2.2
    step_seconds: int = DEFAULT_STEP_SECONDS

    def intensity(self) -> np.ndarray:
        """Expected trips per round over one day."""
        T = 24 * 3600 // self.step_seconds
        hours = (np.arange(T) + 0.5) * self.step_seconds / 3600
        lam = np.full(T, self.off_peak)
        for center, width, height in self.peaks:
            lam += height * np.exp(-0.5 * ((hours - center) / width) ** 2)
        return np.minimum(lam, self.max_intensity)


SCENARIOS = {
    "peak": SynthScenario(),
    "offpeak": SynthScenario(off_peak=0.03, peaks=((13.0, 4.0, 0.3),)),
}


def _synth_world(scenario: SynthScenario, rng: np.random.Generator):
    """Cells, cell popularity and car home cells; the first draws of every synthetic stream."""
    g = scenario.grid
    n_lat, n_lon = g.n_lat or 6, g.n_lon or 6
    cells = [(i, j) for i in range(n_lat) for j in range(n_lon)]
    pop = 1.0 / np.arange(1, len(cells) + 1) ** scenario.popularity_skew
    pop = pop[rng.permutation(len(cells))]
    pop /= pop.sum()
    homes = rng.choice(len(cells), size=scenario.n_cars, p=pop)
    return cells, pop, homes


def synth_ground_truth(scenario: SynthScenario, seed: int = 0) -> tuple[list[TripType], np.ndarray]:
    """Every possible type and its true per-round rate ``intensity[t] * pop(a) * pop(b)``."""
    cells, pop, _ = _synth_world(scenario, np.random.default_rng(seed))
    types = [(a, b) for a in cells for b in cells]
    joint = np.outer(pop, pop).ravel()
    return types, joint[:, None] * scenario.intensity()[None, :]


def synth_rows(scenario: SynthScenario, seed: int = 0) -> Iterator[list[str]]:
    """Generate trip rows in the NYC column order; deterministic given ``seed``."""
    rng = np.random.default_rng(seed)
    g = scenario.grid
    cells, pop, homes = _synth_world(scenario, rng)
    cars = [f"CAR{k:04d}" for k in range(scenario.n_cars)]
    medallions = [f"MED{k:04d}" for k in range(scenario.n_cars)]
    cars_at = defaultdict(list)
    for k, h in enumerate(homes):
        cars_at[int(h)].append(k)
    lam = scenario.intensity()
    T = lam.size
    step = scenario.step_seconds
    start = datetime.fromisoformat(scenario.start)
    d_round = np.arange(1, T + 1, dtype=float)
    pl = d_round ** (-scenario.power_exponent)
    pl /= pl.sum()

    def coord(c: int) -> tuple[float, float]:
        i, j = cells[c]
        lat = g.origin_lat + (i + rng.uniform(0.02, 0.98)) * g.cell_size
        lon = g.origin_lon + (j + rng.uniform(0.02, 0.98)) * g.cell_size
        return lat, lon

    for day in range(scenario.days):
        base = start + timedelta(days=day)
        counts = rng.poisson(lam)
        for t in np.flatnonzero(counts):
            for _ in range(int(counts[t])):
                offset = (t + rng.random()) * step
                a = int(rng.choice(len(cells), p=pop))
                b = int(rng.choice(len(cells), p=pop))
                if cars_at[a] and rng.random() < scenario.home_share:
                    k = int(rng.choice(cars_at[a]))
                else:
                    k = int(rng.integers(scenario.n_cars))
                if scenario.otd == "normal":
                    secs = max(rng.normal(scenario.mean_seconds, scenario.std_seconds), 60.0)
                else:
                    secs = (rng.choice(T, p=pl) + rng.uniform(0.05, 0.95)) * step
                secs = float(round(secs))
                pickup = base + timedelta(seconds=float(np.floor(offset)))
                dropoff = pickup + timedelta(seconds=secs)
                plat, plon = coord(a)
                dlat, dlon = coord(b)
                yield [
                    medallions[k],
                    cars[k],
                    "VTS",
                    "1",
                    "N",
                    pickup.isoformat(sep=" "),
                    dropoff.isoformat(sep=" "),
                    "1",
                    str(int(secs)),
                    f"{cell_distance(cells[a], cells[b]) * 10:.2f}",
                    f"{plon:.6f}",
                    f"{plat:.6f}",
                    f"{dlon:.6f}",
                    f"{dlat:.6f}",
                ]


def synth_trips(scenario: SynthScenario, seed: int = 0, header: bool = True) -> list[str]:
    """Synthetic trip file contents as a list of CSV lines."""
    lines = [",".join(NYC_COLUMNS)] if header else []
    lines.extend(",".join(row) for row in synth_rows(scenario, seed))
    return lines


def day_sequences(
    trips: Iterable[tuple[TripRecord, TripType]],
    days: Sequence[date],
    types: Sequence[TripType],
    horizon: int = DEFAULT_HORIZON,
    step_seconds: int = DEFAULT_STEP_SECONDS,
) -> tuple[dict[str, list[tuple[int, int]]], int]:
    """Per-day ``(round, type index)`` request lists for replay.

    Requests of types never seen in training have no edges and are dropped;
    their number is returned alongside the sequences.
    """
    pos = {v: i for i, v in enumerate(types)}
    wanted = {d.isoformat() for d in days}
    out: dict[str, list[tuple[int, int]]] = {d: [] for d in sorted(wanted)}
    unseen = 0
    for rec, v in sorted(trips, key=lambda tv: tv[0].pickup_time):
        d = rec.pickup_time.date().isoformat()
        if d not in wanted:
            continue
        if v not in pos:
            unseen += 1
            continue
        t = trip_round(rec.pickup_time, step_seconds)
        if t <= horizon:
            out[d].append((t, pos[v]))
    return out, unseen
