"""Per-interval outage prediction.

Every VM's next-step demand is forecast and compared with its current
allocation; servers whose aggregated predicted demand breaks capacity or
the thermal threshold are flagged, and VMs on servers that stay safe are
cleared from the failure-prone set.

Usage histories are fractions of a VM's *envelope* (its largest possible
demand); absolute demand is ``fraction * envelope``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .datacenter import Datacenter, server_power, server_temperature
from .forecaster import NetworkGenome, Prediction, forecast_many
from .resources import ResourceVector, vsum

log = logging.getLogger(__name__)

JOURNAL_HEADER = ("interval", "vm_id", "predicted_cpu", "predicted_mem", "predicted_bw",
                  "class", "server", "risk_flags")


@dataclass(frozen=True)
class VmClassification:
    interval: int
    failure_prone: frozenset[str]
    normal: frozenset[str]
    predictions: dict[str, Prediction]
    demands: dict[str, ResourceVector] = field(default_factory=dict)

    @property
    def insufficient_history(self) -> frozenset[str]:
        return frozenset(vm for vm, p in self.predictions.items() if p.insufficient_history)

    def with_failure_prone(self, failure_prone) -> "VmClassification":
        fp = frozenset(failure_prone)
        universe = self.failure_prone | self.normal
        return VmClassification(self.interval, fp, universe - fp, self.predictions, self.demands)


@dataclass(frozen=True)
class ServerRisk:
    server_id: str
    aggregated_demand: ResourceVector
    temperature: float
    thermal_unsafe: bool
    capacity_exceeded: bool

    @property
    def overloaded(self) -> bool:
        return self.capacity_exceeded or self.thermal_unsafe


@dataclass(frozen=True)
class IntervalOutcome:
    classification: VmClassification
    raw_classification: VmClassification
    risks: list[ServerRisk]


def classify_predictions(predictions: dict[str, Prediction], allocations: dict[str, ResourceVector],
                         envelopes: dict[str, ResourceVector], interval: int = 0) -> VmClassification:
    """Failure-prone iff predicted demand exceeds the allocation in any resource.

    VMs flagged with insufficient history are normal by default.
    """
    prone, normal, demands = set(), set(), {}
    for vm_id, pred in predictions.items():
        demand = ResourceVector.of(np.multiply(pred.denormalized, envelopes[vm_id]))
        demands[vm_id] = demand
        if not pred.insufficient_history and demand.exceeds(allocations[vm_id]):
            prone.add(vm_id)
        else:
            normal.add(vm_id)
    return VmClassification(interval, frozenset(prone), frozenset(normal), dict(predictions), demands)


def classify_vms(havns, series_map: dict[str, np.ndarray], genome: NetworkGenome,
                 allocations: dict[str, ResourceVector], envelopes: dict[str, ResourceVector],
                 interval: int = 0) -> VmClassification:
    """Forecast every HAVN member from its usage history and classify it."""
    vm_ids = sorted({vm for h in havns for vm in h.vm_ids})
    histories = {vm: series_map[vm] for vm in vm_ids}
    predictions = forecast_many(genome, histories)
    return classify_predictions(predictions, allocations, envelopes, interval)


def assess_servers(fleet: Datacenter, classification: VmClassification) -> list[ServerRisk]:
    """Aggregate predicted demand per server and test capacity and temperature.

    A server is safe when its capacity covers the aggregate in every resource
    and its predicted temperature is at most the threshold.
    """
    risks = []
    for state in fleet.servers.values():
        total = vsum(classification.demands[vm] for vm in state.hosted if vm in classification.demands)
        spec = state.spec
        if state.hosted:
            ru = min(1.0, total.cpu / spec.capacity.cpu)
            temperature = server_temperature(spec, server_power(spec, ru), state.t_in)
        else:
            temperature = state.t_in
        exceeded = total.exceeds(spec.capacity)
        risks.append(ServerRisk(state.id, total, temperature, temperature > state.t_thr, exceeded))
    return risks


def refine_classification(fleet: Datacenter, classification: VmClassification,
                          risks: list[ServerRisk]) -> VmClassification:
    """Clear failure-prone VMs hosted on servers assessed safe."""
    safe = {r.server_id for r in risks if not r.overloaded}
    keep = {vm for vm in classification.failure_prone if fleet.host_of(vm) not in safe}
    return classification.with_failure_prone(keep)


def run_interval(fleet: Datacenter, histories: dict[str, np.ndarray], genome: NetworkGenome,
                 envelopes: dict[str, ResourceVector], t: int, havns=None,
                 journal: list | None = None) -> IntervalOutcome:
    """Classify, assess and refine for interval ``t``.

    ``histories`` hold usage up to and including ``t``.  VMs without any
    history are given a zero row and logged as a gap.
    """
    if havns is None:
        vm_ids = sorted(fleet.location)
    else:
        vm_ids = sorted({vm for h in havns for vm in h.vm_ids})
    series = {}
    for vm in vm_ids:
        values = histories.get(vm)
        if values is None or len(values) == 0:
            log.warning("no usage for VM %s at interval %d; assuming zero", vm, t)
            values = np.zeros((1, 3))
        series[vm] = values
    allocations = {vm: fleet.allocation_of(vm) for vm in vm_ids}
    raw = classify_predictions(forecast_many(genome, series), allocations, envelopes, t)
    risks = assess_servers(fleet, raw)
    refined = refine_classification(fleet, raw, risks)
    if journal is not None:
        journal.extend(journal_rows(fleet, refined, risks))
    return IntervalOutcome(refined, raw, risks)


def journal_rows(fleet: Datacenter, classification: VmClassification, risks) -> list[tuple]:
    flags = {}
    for r in risks:
        parts = [name for name, on in (("capacity", r.capacity_exceeded), ("thermal", r.thermal_unsafe)) if on]
        flags[r.server_id] = "|".join(parts)
    rows = []
    for vm in sorted(classification.demands):
        d = classification.demands[vm]
        cls = "failure_prone" if vm in classification.failure_prone else "normal"
        server = fleet.host_of(vm) or ""
        rows.append((classification.interval, vm, round(d.cpu, 6), round(d.mem, 6), round(d.bw, 6),
                     cls, server, flags.get(server, "")))
    return rows
