"""Scenario orchestration: the interval loop that wires trace, forecaster,
outage prediction, fault tolerance and availability accounting together.

Scenarios:

``ft_erm``
    Proactive relocation of failure-prone VMs into Safe-Box reservations;
    realised overloads are also recovered through the FTU, sized on the
    realised demand.  A reservation is released back to the contracted
    allocation once the VM's predicted demand fits the contract again.
``ft_erm_no_sbox``
    Proactive migration of failure-prone VMs at their contracted allocation
    to the energy-efficient server; realised overloads are handled as in
    ``no_ft_erm``.
``no_ft_erm``
    No prediction-driven action.  A server whose realised demand exceeds
    capacity evicts its largest VMs (by dominant share) until it fits.

Usage fractions from the trace are fractions of each VM's *envelope*, its
contracted allocation divided by ``allocation_share``; a fraction above
``allocation_share`` is demand beyond the contract.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .dade import DadeConfig, TrainReport, train
from .datacenter import (MIGRATION_DOWNTIME_MIN, SERVER_MODELS, VM_TYPES, Datacenter, Havn, MigrationEvent,
                         VmSpec, build_fleet, check_havns_disjoint, datacenter_power, datacenter_utilization,
                         load_inventory, select_energy_efficient_server)
from .fault_tolerance import run_ftu
from .forecaster import NetworkGenome, NetworkLayout, forecast_many
from .metrics import (DEFAULT_GUARANTEED_AVAILABILITY, AvailabilityLedger, HaReport, availability, ha_report,
                      mtbf, mttr)
from .outage import assess_servers, classify_predictions, journal_rows, refine_classification
from .resources import ResourceVector
from .trace import (SyntheticSpec, VmSeries, aggregate_per_interval, build_windows, normalize_minmax,
                    parse_trace, stack_windows, synthetic_matrix)

log = logging.getLogger(__name__)

SCENARIOS = ("ft_erm", "ft_erm_no_sbox", "no_ft_erm")


class SimulationError(ValueError):
    pass


def _default_synthetic() -> dict:
    # bursts frequent and high enough that packed servers can overload
    return {"pattern": "step_burst", "base_range": [0.5, 0.75], "burst_probability": 0.05}


@dataclass(frozen=True)
class SimConfig:
    scenario: str = "ft_erm"
    n_vms: int = 100
    vm_server_ratio: float = 2.0
    user_fraction: float = 0.6
    max_vms_per_user: int = 10
    interval_seconds: int = 300
    horizon: int = 80
    warmup: int = 24
    history_span: int = 48
    window_minutes: float = 100.0
    layout: NetworkLayout = field(default_factory=NetworkLayout)
    dade: DadeConfig = field(default_factory=lambda: DadeConfig(population_size=20, max_generations=60))
    retrain_every: int = 20
    train_vms: int = 32
    max_train_windows: int = 400
    allocation_share: float = 0.8
    t_thr: float = 26.0
    a_guaranteed: float = DEFAULT_GUARANTEED_AVAILABILITY
    conventional_offered: bool = False
    k_max: int = 10
    reactive_passes: int = 3
    server_models: tuple[str, ...] = ("S1", "S2", "S3")
    inventory: str | None = None
    synthetic: dict | None = field(default_factory=_default_synthetic)
    trace_path: str | None = None
    trace_format: str = "canonical_csv"
    seed: int = 0

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise SimulationError(f"unknown scenario {self.scenario!r}; expected one of {SCENARIOS}")
        for name in ("n_vms", "interval_seconds", "horizon", "retrain_every", "train_vms",
                     "max_train_windows", "reactive_passes", "k_max", "max_vms_per_user"):
            if getattr(self, name) < 1:
                raise SimulationError(f"{name} must be positive")
        if self.vm_server_ratio <= 0 or not 0 < self.user_fraction <= 1:
            raise SimulationError("vm_server_ratio must be > 0 and user_fraction in (0, 1]")
        if not 0 < self.allocation_share <= 1:
            raise SimulationError("allocation_share must lie in (0, 1]")
        if self.warmup < self.layout.l + 1:
            raise SimulationError(f"warmup must be at least l + 1 = {self.layout.l + 1}")
        if self.window_minutes <= 0:
            raise SimulationError("window_minutes must be positive")
        if (self.synthetic is None) == (self.trace_path is None):
            raise SimulationError("exactly one of synthetic and trace_path must be set")

    @property
    def interval_minutes(self) -> float:
        return self.interval_seconds / 60.0

    @property
    def n_intervals(self) -> int:
        return self.warmup + self.horizon

    def replace(self, **changes) -> "SimConfig":
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data.update(changes)
        return SimConfig(**data)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["layout"] = asdict(self.layout)
        d["dade"] = asdict(self.dade)
        d["server_models"] = list(self.server_models)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        data = dict(data)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise SimulationError(f"unknown config keys: {sorted(unknown)}")
        if "layout" in data and isinstance(data["layout"], dict):
            data["layout"] = NetworkLayout(**data["layout"])
        if "dade" in data and isinstance(data["dade"], dict):
            data["dade"] = DadeConfig.from_dict(data["dade"])
        if "server_models" in data:
            data["server_models"] = tuple(data["server_models"])
        if "trace_path" in data and "synthetic" not in data:
            data["synthetic"] = None
        return cls(**data)


@dataclass(frozen=True)
class IntervalRecord:
    interval: int
    power_w: float
    mean_temperature_c: float
    max_temperature_c: float
    utilization_pct: float
    active_servers: int
    migrations: int
    downtime_min: float
    failure_prone: int
    overloaded_servers: int


@dataclass(frozen=True)
class WindowRow:
    vm_count: int
    window_min: float
    mttr: float
    mtbf: float
    availability_pct: float
    pred_accuracy: float
    predicted_failures: int
    migrations: int


@dataclass
class ScenarioReport:
    config: SimConfig
    ha: HaReport
    ha_pooled: HaReport
    ledger: AvailabilityLedger
    windows: list[WindowRow]
    series: list[IntervalRecord]
    events: list[MigrationEvent]
    journal: list[tuple]
    clusters: list[tuple]
    trainings: list[tuple[int, TrainReport]]
    prediction_accuracy: float | None
    placement_failures: int
    havn_ledgers: dict[str, AvailabilityLedger]

    @property
    def migrations(self) -> int:
        return len(self.events)

    def summary(self) -> dict:
        power = [r.power_w for r in self.series]
        temps = [r.mean_temperature_c for r in self.series]
        util = [r.utilization_pct for r in self.series]
        havn_avail = {h: availability(mtbf(l), mttr(l)) for h, l in sorted(self.havn_ledgers.items())}
        return {
            "scenario": self.config.scenario,
            "seed": self.config.seed,
            "n_vms": self.config.n_vms,
            "horizon_intervals": self.config.horizon,
            "migrations": self.migrations,
            "placement_failures": self.placement_failures,
            "failure_episodes": self.ledger.failures,
            "uptime_min": self.ledger.uptime_min,
            "downtime_min": self.ledger.downtime_min,
            "ha": self.ha.to_dict(),
            "ha_pooled": self.ha_pooled.to_dict(),
            "prediction_accuracy_pct": self.prediction_accuracy,
            "mean_power_w": float(np.mean(power)) if power else 0.0,
            "mean_temperature_c": float(np.mean(temps)) if temps else 0.0,
            "mean_utilization_pct": float(np.mean(util)) if util else 0.0,
            "min_havn_availability_pct": min(havn_avail.values()) if havn_avail else 100.0,
            "trainings": len(self.trainings),
            "config": self.config.to_dict(),
        }


def compute_prediction_accuracy(outcomes) -> float:
    """Percentage of (predicted_failure, realised_failure) pairs that agree."""
    pairs = list(outcomes)
    if not pairs:
        raise SimulationError("no classified intervals with realised outcomes")
    hits = sum(1 for p, r in pairs if bool(p) == bool(r))
    return 100.0 * hits / len(pairs)


def _load_trace(config: SimConfig) -> tuple[list[str], np.ndarray]:
    """Usage fractions of shape (n_vms, n_intervals, 3) and the VM ids."""
    T = config.n_intervals
    if config.synthetic is not None:
        spec = SyntheticSpec.from_dict({**config.synthetic, "n_vms": config.n_vms, "n_intervals": T,
                                        "seed": config.synthetic.get("seed", config.seed),
                                        "interval_seconds": config.interval_seconds})
        values = synthetic_matrix(spec)
        width = max(4, len(str(config.n_vms - 1)))
        return [f"vm{v:0{width}d}" for v in range(config.n_vms)], values
    raw = Path(config.trace_path).read_bytes()
    rows = parse_trace(config.trace_format, raw)
    series = aggregate_per_interval(rows, config.interval_seconds)
    ids = sorted(series)
    if len(ids) < config.n_vms:
        raise SimulationError(f"trace has {len(ids)} VMs, config asks for {config.n_vms}")
    ids = ids[:config.n_vms]
    length = min(len(series[v]) for v in ids)
    if length < T:
        raise SimulationError(f"trace supplies {length} intervals; warmup + horizon needs {T}")
    return ids, np.stack([series[v].values[:T] for v in ids])


def _assign_users(vm_ids, config: SimConfig, rng) -> list[Havn]:
    n_users = max(1, round(config.user_fraction * len(vm_ids)))
    owners: list[list[str]] = [[] for _ in range(n_users)]
    pool = list(vm_ids)
    cursor = 0
    for u in range(n_users):
        want = int(rng.integers(0, config.max_vms_per_user + 1))
        take = min(want, len(pool) - cursor)
        owners[u].extend(pool[cursor:cursor + take])
        cursor += take
    for i, vm in enumerate(pool[cursor:]):
        owners[i % n_users].append(vm)
    width = max(3, len(str(n_users - 1)))
    return [Havn(f"h{u:0{width}d}", f"u{u:0{width}d}", tuple(vms)) for u, vms in enumerate(owners) if vms]


class Simulation:
    """One scenario run; construct, then call :meth:`run`."""

    def __init__(self, config: SimConfig):
        self.config = config
        ss = np.random.SeedSequence(config.seed)
        place_ss, train_ss = ss.spawn(2)
        self.rng_setup = np.random.default_rng(place_ss)
        self.rng_train = np.random.default_rng(train_ss)

        if config.inventory:
            server_models, vm_types = load_inventory(config.inventory)
        else:
            server_models, vm_types = SERVER_MODELS, VM_TYPES
        self.vm_ids, self.usage = _load_trace(config)
        self.havns = _assign_users(self.vm_ids, config, self.rng_setup)
        check_havns_disjoint(self.havns)
        self.havn_of = {vm: h.havn_id for h in self.havns for vm in h.vm_ids}
        user_of = {vm: h.user_id for h in self.havns for vm in h.vm_ids}

        type_names = sorted(vm_types)
        types = self.rng_setup.integers(0, len(type_names), size=len(self.vm_ids))
        vms = [VmSpec.of_type(vm, type_names[k], user_of[vm], self.havn_of[vm], vm_types)
               for vm, k in zip(self.vm_ids, types)]
        self.contract = {v.id: v.allocated for v in vms}
        self.envelope = {v.id: v.allocated.scale(1.0 / config.allocation_share) for v in vms}
        self.reference = ResourceVector.of(np.max([e.array() for e in self.envelope.values()], axis=0))

        n_servers = max(1, math.ceil(len(self.vm_ids) / config.vm_server_ratio))
        fleet = build_fleet(n_servers, config.server_models, server_models)
        self.dc = Datacenter(fleet, vms, t_thr=config.t_thr)
        for v in vms:
            dest = select_energy_efficient_server(self.dc, v.allocated)
            if dest is None:
                raise SimulationError(f"initial placement failed for {v.id}: fleet too small")
            self.dc.place(v.id, dest)

        self.genome: NetworkGenome | None = None
        self.trainings: list[tuple[int, TrainReport]] = []
        self.series: list[IntervalRecord] = []
        self.journal: list[tuple] = []
        self.clusters: list[tuple] = []
        self.placement_failures = 0
        self.interval_ledgers: list[AvailabilityLedger] = []
        self.havn_downtime = {h.havn_id: 0.0 for h in self.havns}
        self.havn_episodes = {h.havn_id: 0 for h in self.havns}
        self.outcomes: list[tuple[int, bool, bool]] = []

    # -- helpers -------------------------------------------------------------

    def demand_at(self, t: int) -> dict[str, ResourceVector]:
        return {vm: ResourceVector.of(self.usage[i, t] * self.envelope[vm].array())
                for i, vm in enumerate(self.vm_ids)}

    def _history(self, i: int, t: int) -> np.ndarray:
        start = max(0, t + 1 - self.config.history_span)
        return self.usage[i, start:t + 1]

    def _retrain(self, t: int) -> None:
        cfg = self.config
        n_pick = min(cfg.train_vms, len(self.vm_ids))
        picked = np.sort(self.rng_train.choice(len(self.vm_ids), size=n_pick, replace=False))
        sets = []
        for i in picked:
            hist = self._history(int(i), t)
            if len(hist) < cfg.layout.l + 1:
                continue
            scaled, _ = normalize_minmax(VmSeries(self.vm_ids[i], hist))
            sets.append(build_windows(scaled, cfg.layout.l))
        windows = stack_windows(sets)
        if len(windows) > cfg.max_train_windows:
            keep = np.sort(self.rng_train.choice(len(windows), size=cfg.max_train_windows, replace=False))
            windows = type(windows)(windows.l, windows.inputs[keep], windows.targets[keep])
        dade = cfg.dade.__class__(**{**asdict(cfg.dade), "seed": int(self.rng_train.integers(2**31))})
        report = train(windows, cfg.layout, dade, initial=self.genome)
        self.genome = report.best
        self.trainings.append((t, report))

    def _evict_largest(self, t: int) -> None:
        """Reactive recovery without reservations, cascading up to
        ``reactive_passes`` sweeps over the fleet."""
        for _ in range(self.config.reactive_passes):
            overloaded = [s for s in self.dc.servers.values() if s.is_overloaded()]
            if not overloaded:
                return
            for state in overloaded:
                cap = np.asarray(state.spec.capacity)
                order = sorted(state.hosted, key=lambda vm: (-float(np.max(np.asarray(state.usage.get(
                    vm, state.hosted[vm])) / cap)), vm))
                for vm in order:
                    if not state.is_overloaded():
                        break
                    dest = select_energy_efficient_server(self.dc, state.hosted[vm], exclude_vm=vm,
                                                          skip={state.id})
                    if dest is None:
                        self.placement_failures += 1
                        continue
                    self.dc.apply_migration(state.id, dest, vm, time=t, kind="reactive")

    def _ftu_reactive(self, t: int, demand: dict[str, ResourceVector]) -> None:
        for _ in range(self.config.reactive_passes):
            overloaded = [s for s in self.dc.servers.values() if s.is_overloaded()]
            if not overloaded:
                return
            contended = [vm for s in overloaded for vm in s.hosted if demand[vm].exceeds(s.hosted[vm])]
            if not contended:
                return
            result = run_ftu(self.dc, contended, demand, self.reference, time=t, k_max=self.config.k_max,
                             seed=self._ftu_seed(t, 1), kind="reactive")
            self.placement_failures += len(result.failures)
            self.clusters.extend(result.report_rows(t))

    def _ftu_seed(self, t: int, salt: int) -> int:
        return (self.config.seed * 1_000_003 + t * 7 + salt) % (2**31)

    def _predict(self, t: int):
        histories = {vm: self._history(i, t) for i, vm in enumerate(self.vm_ids)}
        predictions = forecast_many(self.genome, histories)
        allocations = {vm: self.dc.allocation_of(vm) for vm in self.vm_ids}
        raw = classify_predictions(predictions, allocations, self.envelope, t)
        risks = assess_servers(self.dc, raw)
        refined = refine_classification(self.dc, raw, risks)
        return raw, refined, risks, allocations

    def _release_reservations(self, raw) -> None:
        for vm in self.vm_ids:
            contract = self.contract[vm]
            if self.dc.allocation_of(vm) != contract and not raw.demands[vm].exceeds(contract):
                self.dc.resize(vm, contract)

    def _proactive(self, t: int, raw, refined) -> None:
        scenario = self.config.scenario
        if scenario == "ft_erm":
            self._release_reservations(raw)
            result = run_ftu(self.dc, refined.failure_prone, raw.demands, self.reference, time=t,
                             k_max=self.config.k_max, seed=self._ftu_seed(t, 2))
            self.placement_failures += len(result.failures)
            self.clusters.extend(result.report_rows(t))
        elif scenario == "ft_erm_no_sbox":
            for vm in sorted(refined.failure_prone):
                src = self.dc.host_of(vm)
                alloc = self.dc.allocation_of(vm)
                dest = select_energy_efficient_server(self.dc, alloc, exclude_vm=vm, skip={src})
                if dest is None:
                    self.placement_failures += 1
                    continue
                self.dc.apply_migration(src, dest, vm, time=t)

    # -- main loop -----------------------------------------------------------

    def run(self) -> ScenarioReport:
        cfg = self.config
        minutes = cfg.interval_minutes
        pending: dict[str, tuple[bool, ResourceVector]] | None = None
        for step in range(cfg.horizon):
            t = cfg.warmup + step
            if step % cfg.retrain_every == 0:
                self._retrain(t)
            demand = self.demand_at(t)
            self.dc.set_usage(demand)
            if pending is not None:
                for vm, (flag, alloc) in pending.items():
                    self.outcomes.append((t - 1, flag, demand[vm].exceeds(alloc)))
            n_events = len(self.dc.events)

            if cfg.scenario == "ft_erm":
                self._ftu_reactive(t, demand)
            else:
                self._evict_largest(t)

            overloaded = [s for s in self.dc.servers.values() if s.is_overloaded()]
            stranded = [vm for s in overloaded for vm in s.hosted]

            raw, refined, risks, allocations = self._predict(t)
            self.journal.extend(journal_rows(self.dc, refined, risks))
            pending = {vm: (vm in raw.failure_prone, allocations[vm]) for vm in self.vm_ids
                       if not raw.predictions[vm].insufficient_history}
            if cfg.scenario != "no_ft_erm":
                self._proactive(t, raw, refined)

            new_events = self.dc.events[n_events:]
            downtime = MIGRATION_DOWNTIME_MIN * len(new_events) + minutes * len(stranded)
            hit: dict[str, float] = {}
            for ev in new_events:
                hit[self.havn_of[ev.vm_id]] = hit.get(self.havn_of[ev.vm_id], 0.0) + ev.downtime_min
            for vm in stranded:
                hit[self.havn_of[vm]] = hit.get(self.havn_of[vm], 0.0) + minutes
            for h, dt in hit.items():
                self.havn_downtime[h] += dt
                self.havn_episodes[h] += 1
            uptime = len(self.vm_ids) * minutes - downtime
            self.interval_ledgers.append(AvailabilityLedger(uptime, downtime, int(downtime > 0), len(new_events)))

            states = self.dc.states()
            active = [s for s in states if s.active]
            temps = [s.temperature for s in active] or [self.dc.servers[next(iter(self.dc.servers))].t_in]
            self.series.append(IntervalRecord(
                t, datacenter_power(states), float(np.mean(temps)), float(np.max(temps)),
                datacenter_utilization(states).overall_pct, len(active), len(new_events), downtime,
                len(refined.failure_prone), len(overloaded)))
        return self._report()

    def _report(self) -> ScenarioReport:
        cfg = self.config
        ledger = AvailabilityLedger()
        for l in self.interval_ledgers:
            ledger = ledger + l
        per_window = max(1, round(cfg.window_minutes / cfg.interval_minutes))
        windows = []
        for w0 in range(0, cfg.horizon, per_window):
            chunk = self.interval_ledgers[w0:w0 + per_window]
            wl = AvailabilityLedger()
            for l in chunk:
                wl = wl + l
            t_lo, t_hi = cfg.warmup + w0, cfg.warmup + w0 + len(chunk)
            outs = [(p, r) for (t, p, r) in self.outcomes if t_lo <= t < t_hi]
            acc = compute_prediction_accuracy(outs) if outs else float("nan")
            predicted = sum(1 for (t, p, _) in self.outcomes if t_lo <= t < t_hi and p)
            m, r = mtbf(wl), mttr(wl)
            windows.append(WindowRow(len(self.vm_ids), (w0 + len(chunk)) * cfg.interval_minutes, r, m,
                                     availability(m, r), acc, predicted, wl.migrations))
        havn_ledgers = {}
        for h in self.havns:
            dt = self.havn_downtime[h.havn_id]
            ut = len(h.vm_ids) * cfg.interval_minutes * cfg.horizon - dt
            havn_ledgers[h.havn_id] = AvailabilityLedger(ut, dt, self.havn_episodes[h.havn_id])
        accuracy = compute_prediction_accuracy([(p, r) for _, p, r in self.outcomes]) if self.outcomes else None
        return ScenarioReport(
            cfg, ha_report(ledger, cfg.a_guaranteed, cfg.conventional_offered),
            ha_report(ledger.pooled(), cfg.a_guaranteed, cfg.conventional_offered), ledger, windows,
            self.series, list(self.dc.events), self.journal, self.clusters, self.trainings, accuracy,
            self.placement_failures, havn_ledgers)


def run_simulation(config: SimConfig) -> ScenarioReport:
    return Simulation(config).run()
