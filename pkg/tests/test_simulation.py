import json

import numpy as np
import pytest

from fterm.dade import DadeConfig
from fterm.forecaster import NetworkLayout
from fterm.reports import CSV_FILES, emit_reports, render
from fterm.simulation import (SCENARIOS, SimConfig, Simulation, SimulationError, compute_prediction_accuracy,
                              run_simulation)
from fterm.trace import SyntheticSpec, generate_synthetic_trace, serialize_canonical

CONSTANT = {"pattern": "noisy_constant", "amplitude": 0.0, "base_range": [0.5, 0.7]}


def small(**changes):
    base = SimConfig(n_vms=24, horizon=20, warmup=8, history_span=16, window_minutes=25.0,
                     layout=NetworkLayout(l=3, h=3, n_hidden_layers=1),
                     dade=DadeConfig(population_size=8, max_generations=10), retrain_every=10, train_vms=8)
    return base.replace(**changes)


def test_config_validation_and_round_trip():
    with pytest.raises(SimulationError):
        SimConfig(scenario="magic")
    with pytest.raises(SimulationError):
        SimConfig(warmup=3)
    with pytest.raises(SimulationError):
        SimConfig.from_dict({"n_vms": 10, "colour": "red"})
    with pytest.raises(SimulationError):
        SimConfig(synthetic=None)
    cfg = small(seed=4)
    back = SimConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert back == cfg


def test_accuracy_counting():
    pairs = [(True, True)] * 3 + [(False, False)] * 6 + [(True, False)]
    assert compute_prediction_accuracy(pairs) == 90.0
    with pytest.raises(SimulationError):
        compute_prediction_accuracy([])


def test_same_seed_same_files():
    a = render(run_simulation(small(seed=7)))
    b = render(run_simulation(small(seed=7)))
    assert a == b
    assert render(run_simulation(small(seed=8)))["summary.json"] != a["summary.json"]


@pytest.mark.parametrize("scenario", SCENARIOS)
def test_constant_demand_has_full_availability(scenario):
    rep = run_simulation(small(scenario=scenario, synthetic=CONSTANT))
    assert rep.migrations == 0
    assert rep.ledger.downtime_min == 0
    assert rep.ha.availability_pct == 100.0
    assert rep.ha.a_offered == 1.0
    assert rep.prediction_accuracy == 100.0


@pytest.mark.parametrize("scenario", SCENARIOS)
def test_accounting_reconstructs(scenario):
    sim = Simulation(small(scenario=scenario, seed=2))
    rep = sim.run()
    cfg = rep.config
    total = cfg.n_vms * cfg.horizon * cfg.interval_minutes
    assert rep.ledger.uptime_min + rep.ledger.downtime_min == pytest.approx(total)
    assert rep.ledger.downtime_min == pytest.approx(sum(r.downtime_min for r in rep.series))
    assert rep.ledger.downtime_min >= 0.21 * rep.migrations - 1e-9
    assert rep.ledger.migrations == rep.migrations == sum(r.migrations for r in rep.series)
    assert sum(w.migrations for w in rep.windows) == rep.migrations
    assert rep.ledger.failures == sum(r.downtime_min > 0 for r in rep.series)
    share = 100.0 * rep.ledger.uptime_min / total
    assert abs(rep.ha.availability_pct - share) <= 1e-6
    assert abs(rep.ha_pooled.availability_pct - share) <= 1e-6
    assert len(rep.windows) == 4 and rep.windows[-1].window_min == 100.0
    # every VM stays hosted and no server is over-allocated
    sim.dc.check_capacity()
    assert sorted(sim.dc.location) == sorted(sim.vm_ids)
    if scenario == "no_ft_erm":
        assert all(e.kind == "reactive" for e in rep.events)


@pytest.mark.parametrize("scenario", SCENARIOS)
def test_allocations_never_drop_below_contract(scenario):
    sim = Simulation(small(scenario=scenario, n_vms=40, horizon=30, seed=1))
    sim.run()
    for vm in sim.vm_ids:
        alloc, contract = np.asarray(sim.dc.allocation_of(vm)), np.asarray(sim.contract[vm])
        assert np.all(alloc >= contract - 1e-9)
        if scenario != "ft_erm":
            assert np.allclose(alloc, contract)


def test_trace_file_input(tmp_path):
    rows = generate_synthetic_trace(SyntheticSpec(n_vms=24, n_intervals=28, pattern="step_burst", seed=3))
    path = tmp_path / "trace.csv"
    path.write_text(serialize_canonical(rows))
    rep = run_simulation(small().replace(synthetic=None, trace_path=str(path)))
    assert rep.config.trace_path == str(path) and len(rep.series) == 20
    with pytest.raises(SimulationError):
        run_simulation(small(n_vms=30).replace(synthetic=None, trace_path=str(path)))
    with pytest.raises(SimulationError):
        run_simulation(small(horizon=40).replace(synthetic=None, trace_path=str(path)))


def test_reports_on_disk(tmp_path):
    rep = run_simulation(small(seed=5))
    written = emit_reports(rep, tmp_path / "json_only", ["json"])
    assert [p.name for p in written] == ["summary.json"]
    written = emit_reports(rep, tmp_path / "all")
    assert sorted(p.name for p in written) == sorted(CSV_FILES + ("summary.json",))
    avail = (tmp_path / "all" / "availability.csv").read_text().splitlines()
    assert avail[0] == "vm_count,window_min,mttr,mtbf,availability_pct,pred_accuracy,predicted_failures,migrations"
    assert len(avail) == 1 + 4
    summary = json.loads((tmp_path / "all" / "summary.json").read_text())
    assert summary["migrations"] == rep.migrations
    series = (tmp_path / "all" / "power_temp_util.csv").read_text().splitlines()
    assert len(series) == 1 + 20
    with pytest.raises(ValueError):
        emit_reports(rep, tmp_path / "x", ["xml"])


def test_power_and_temperature_series_are_physical():
    rep = run_simulation(small(seed=6))
    for r in rep.series:
        assert r.power_w > 0 and 20.0 <= r.mean_temperature_c <= r.max_temperature_c <= 20 + 1 / 0.13 + 1e-9
        assert 0 < r.active_servers
    assert np.isfinite([r.utilization_pct for r in rep.series]).all()
