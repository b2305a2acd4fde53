from __future__ import annotations

import dataclasses
from datetime import datetime, timedelta

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from omrr.data import (
    NYC_COLUMNS,
    SCENARIOS,
    GridSpec,
    TrainedModel,
    TripRecord,
    build_experiment_instance,
    cell_distance,
    day_sequences,
    discretized_normal,
    docking_positions,
    edge_weight,
    estimate_arrivals,
    fit_otd,
    parse_trips,
    power_law,
    power_law_exponent_for_mean,
    power_law_mle,
    split_days,
    synth_ground_truth,
    synth_trips,
    train,
)
from omrr.model import validate_instance

GRID = GridSpec(40.0, -74.0, 0.15)


def row(pickup: str, secs: int, plat=40.01, plon=-73.99, dlat=40.2, dlon=-73.8, lic="L1") -> str:
    t0 = datetime.fromisoformat(pickup)
    t1 = t0 + timedelta(seconds=secs)
    vals = ["M", lic, "VTS", "1", "N", str(t0), str(t1), "1", str(secs), "1.0", str(plon), str(plat), str(dlon), str(dlat)]
    return ",".join(vals)


def rec(pickup: datetime, lic="L1", secs=300.0) -> TripRecord:
    return TripRecord(lic, pickup, pickup + timedelta(seconds=secs), secs, 40.01, -73.99, 40.2, -73.8)


def test_cells_half_open():
    assert GRID.cell(40.0, -74.0) == (0, 0)
    assert GRID.cell(40.15, -74.0) == (1, 0)
    assert GRID.cell(40.3, -73.85) == (2, 1)
    assert GRID.cell(40.1499, -74.0001) == (0, -1)
    with pytest.raises(ValueError):
        GridSpec(cell_size=0)


def test_parse_header_malformed_and_bounds():
    lines = [
        ",".join(NYC_COLUMNS),
        row("2013-01-01 00:07:00", 600),
        "garbage,line",
        row("2013-01-01 00:09:00", 60, plat=10.0),
        row("2013-01-01 00:03:00", 600).replace("2013-01-01 00:13:00", "2012-12-31 23:00:00"),
    ]
    bounded = GridSpec(40.0, -74.0, 0.15, n_lat=4, n_lon=4)
    out = parse_trips(lines, bounded)
    assert len(out.trips) == 1 and out.malformed == 2 and out.out_of_bounds == 1
    rec0, v = out.trips[0]
    assert v == ((0, 0), (1, 1)) and rec0.trip_seconds == 600


def test_type_count_is_distinct_cell_pairs():
    scenario = dataclasses.replace(SCENARIOS["peak"], days=12)
    lines = synth_trips(scenario, seed=3)[:1001]
    out = parse_trips(lines, scenario.grid)
    assert len(out.trips) == 1000
    pairs = {(scenario.grid.cell(r.pickup_lat, r.pickup_lon), scenario.grid.cell(r.dropoff_lat, r.dropoff_lon)) for r, _ in out.trips}
    assert len(out.types) == len(pairs)


def test_kad_rate_formula_and_unseen_types():
    v = ((0, 0), (1, 1))
    unseen = ((3, 3), (0, 0))
    trips = [(rec(datetime(2013, 1, d, 10, 2)), v) for d in range(1, 7)]
    est = estimate_arrivals(trips, days=12, types=[v, unseen])
    t = 10 * 12 + 1
    assert est.kad[0, t - 1] == pytest.approx(0.5)
    assert est.kad[0].sum() == pytest.approx(0.5)
    np.testing.assert_array_equal(est.kad[1], 0.0)
    assert est.kiid[0] == pytest.approx(0.5 / 288)
    assert est.rescaled_rounds == []


def test_overflow_is_rescaled_and_reported():
    a, b = ((0, 0), (0, 1)), ((1, 0), (1, 1))
    ts = datetime(2013, 1, 1, 0, 0, 30)
    trips = [(rec(ts), a)] * 3 + [(rec(ts), b)]
    est = estimate_arrivals(trips, days=2)
    assert est.rescaled_rounds == [(1, 2.0)]
    np.testing.assert_allclose(est.kad[:, 0], [0.75, 0.25])
    assert est.kad.sum(axis=0).max() <= 1 + 1e-12


@given(st.integers(0, 10_000))
@settings(max_examples=20)
def test_kiid_preserves_per_type_mass(seed):
    rng = np.random.default_rng(seed)
    types = [((0, i), (1, i)) for i in range(4)]
    trips = []
    for _ in range(int(rng.integers(1, 60))):
        t = datetime(2013, 1, int(rng.integers(1, 4)), int(rng.integers(0, 24)), int(rng.integers(0, 60)))
        trips.append((rec(t), types[int(rng.integers(4))]))
    est = estimate_arrivals(trips, days=3)
    np.testing.assert_allclose(est.kiid * 288, est.kad.sum(axis=1), rtol=0, atol=1e-12)


@pytest.mark.slow
def test_round_trip_recovers_synthetic_rates():
    D = 200
    scenario = dataclasses.replace(SCENARIOS["peak"], days=D)
    parsed = parse_trips(synth_trips(scenario, seed=12), scenario.grid)
    types, truth = synth_ground_truth(scenario, seed=12)
    est = estimate_arrivals(parsed.trips, D, types=types)
    raw = est.counts / D
    # Poisson counts: the estimator's standard error is sqrt(rate / D)
    per_round = truth.sum(axis=0)
    assert np.all(np.abs(raw.sum(axis=0) - per_round) <= 4 * np.sqrt(per_round / D))
    per_type = truth.sum(axis=1)
    seen = per_type > 0.05
    assert np.all(np.abs(raw.sum(axis=1)[seen] - per_type[seen]) <= 4 * np.sqrt(per_type[seen] / D))


def test_normal_fit_degenerate_and_shape():
    d = fit_otd([2, 2, 2, 2], "normal", 10)
    assert d.pmf[2] == 1.0
    n = discretized_normal(2.5, 1.0, 10)
    assert set(np.argsort(n.pmf)[-2:]) == {2, 3}
    grid = np.arange(1, 11)
    dens = np.exp(-0.5 * (grid - 2.5) ** 2)
    dens /= dens.sum()
    direct = [dens[grid > k].sum() for k in range(11)]
    np.testing.assert_allclose(n.tails, direct, atol=1e-12)
    assert n.pmf[0] == 0.0


def test_power_law_formula():
    d = power_law(2.0, 4)
    w = np.array([1, 1 / 4, 1 / 9, 1 / 16])
    np.testing.assert_allclose(d.pmf[1:], w / w.sum())


def test_normal_fit_recovers_mean():
    truth = discretized_normal(7.3, 2.1, 40)
    rng = np.random.default_rng(0)
    sample = np.array([truth.sample(u) for u in rng.random(5000)])
    fitted = fit_otd(sample, "normal", 40)
    se = sample.std(ddof=1) / np.sqrt(sample.size)
    assert abs(sample.mean() - truth.mean()) <= 3 * se
    assert abs(fitted.mean() - truth.mean()) <= 3 * se + 0.05


def test_power_law_mle_recovers_exponent():
    truth = power_law(1.8, 50)
    rng = np.random.default_rng(1)
    sample = np.array([truth.sample(u) for u in rng.random(20_000)])
    assert power_law_mle(sample, 50) == pytest.approx(1.8, abs=0.05)


def test_power_law_matched_mean():
    a = power_law_exponent_for_mean(4.0, 288)
    assert power_law(a, 288).mean() == pytest.approx(4.0, rel=1e-9)
    with pytest.raises(ValueError):
        power_law_exponent_for_mean(0.5, 288)


def test_weight_formula():
    assert edge_weight(4, 2, 0.5) == 3
    assert edge_weight(1, 4, 0.5) == 0
    assert edge_weight(3.5, 100, 0.0) == 3.5
    assert cell_distance((0, 0), (3, 4)) == 5.0
    assert cell_distance((0, 0), (3, 4), "manhattan") == 7.0


def test_docking_majority_and_ties():
    a, b = (2, 1), (1, 5)
    t = datetime(2013, 1, 1, 8)
    trips = [(rec(t, "X"), (a, b)), (rec(t, "X"), (b, a)), (rec(t, "Y"), (a, b)), (rec(t, "Y"), (a, a))]
    dock = docking_positions(trips)
    assert dock == {"X": (1, 5), "Y": (2, 1)}


@pytest.fixture(scope="module")
def trained():
    scenario = SCENARIOS["peak"]
    parsed = parse_trips(synth_trips(scenario, seed=7), scenario.grid)
    tr, te = split_days(parsed.trips, 12, seed=0)
    return parsed, train(parsed.trips, tr, scenario.grid, seed=0), te


def test_training_summary(trained):
    parsed, model, test_days = trained
    assert len(model.days) == 12 and len(test_days) == 19
    assert len(model.cars) == 30 and len(model.types) >= 200
    assert model.kad.shape == (len(model.types), 288)
    assert model.kad.sum(axis=0).max() <= 1 + 1e-12


def test_experiment_instance(trained):
    _, model, _ = trained
    inst = build_experiment_instance(model)
    assert validate_instance(inst) == []
    assert inst.n_resources == 30 and inst.horizon == 288
    assert inst.weights.min() > 0
    e = 0
    u, v = inst.edge_label(e)
    k = inst.request_types.index(v)
    a, b = model.types[k]
    expected = max(cell_distance(a, b) - 0.5 * cell_distance(model.docking[u], a), 0)
    assert inst.weights[e] == pytest.approx(expected)
    plain = build_experiment_instance(model, weight_alpha=0.0)
    assert plain.n_edges >= inst.n_edges
    kiid = build_experiment_instance(model, arrival_mode="kiid")
    assert kiid.arrivals.stationary


def test_model_round_trip(trained, tmp_path):
    _, model, _ = trained
    model.save(tmp_path / "m.json")
    back = TrainedModel.load(tmp_path / "m.json")
    assert back.types == model.types and back.docking == model.docking and back.cars == model.cars
    np.testing.assert_array_equal(back.kad, model.kad)
    for family in ("normal", "power-law", "power-law-matched"):
        np.testing.assert_array_equal(back.otd(family).pmf, model.otd(family).pmf)


def test_matched_power_law_has_normal_mean(trained):
    _, model, _ = trained
    assert model.otd("power-law-matched").mean() == pytest.approx(model.otd("normal").mean(), rel=1e-9)


def test_day_sequences(trained):
    parsed, model, test_days = trained
    seqs, unseen = day_sequences(parsed.trips, test_days[:2], model.types)
    assert list(seqs) == [d.isoformat() for d in test_days[:2]]
    for seq in seqs.values():
        assert seq == sorted(seq, key=lambda a: a[0])
        assert all(0 <= v < len(model.types) for _, v in seq)
    assert unseen >= 0


def test_synth_deterministic_and_split_reproducible():
    s = dataclasses.replace(SCENARIOS["offpeak"], days=3)
    assert synth_trips(s, seed=5) == synth_trips(s, seed=5)
    assert synth_trips(s, seed=5) != synth_trips(s, seed=6)
    parsed = parse_trips(synth_trips(s, seed=5), s.grid)
    assert split_days(parsed.trips, 2, seed=1) == split_days(parsed.trips, 2, seed=1)


def test_peak_profile_shape():
    lam = SCENARIOS["peak"].intensity()
    assert lam.size == 288 and lam.max() <= 0.95
    assert lam[13 * 12] > 5 * lam[3 * 12]
