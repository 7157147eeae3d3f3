"""Servers, VMs and the power, thermal and utilization analysers.

Capacities are absolute: cpu in MIPS, memory in GB and bandwidth in
Mbit/s.  A server's cpu capacity is ``pe_count * mips_per_pe``; a VM type's
cpu allocation is its MIPS rating taken as a total.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .resources import RESOURCES, ResourceVector, vsum

INLET_TEMPERATURE_C = 20.0
THERMAL_SLOPE = 1.0 / 0.130  # degrees per unit of normalised power
DEFAULT_T_THR_C = 26.0
DEFAULT_SERVER_BW_MBPS = 1000.0
MIGRATION_DOWNTIME_MIN = 0.21
CAPACITY_TOLERANCE = 1e-9


class DomainError(ValueError):
    pass


class PlacementError(RuntimeError):
    pass


class IntegrityError(KeyError):
    pass


class Status(str, Enum):
    SAFE = "Safe"
    UNSAFE = "Unsafe"


@dataclass(frozen=True)
class ServerSpec:
    id: str
    pe_count: int
    mips_per_pe: float
    ram_gb: float
    storage_gb: float
    pw_max: float
    pw_min: float
    pw_idle: float
    bw_mbps: float = DEFAULT_SERVER_BW_MBPS
    model: str = ""

    def __post_init__(self):
        if not self.pw_max > self.pw_idle >= 0:
            raise DomainError(f"server {self.id}: need pw_max > pw_idle >= 0")
        if min(self.pe_count, self.mips_per_pe, self.ram_gb, self.bw_mbps) <= 0:
            raise DomainError(f"server {self.id}: capacities must be positive")

    @property
    def capacity(self) -> ResourceVector:
        return ResourceVector(self.pe_count * self.mips_per_pe, self.ram_gb, self.bw_mbps)

    def renamed(self, server_id: str) -> "ServerSpec":
        d = self.__dict__.copy()
        d["id"] = server_id
        return ServerSpec(**d)


@dataclass(frozen=True)
class VmType:
    name: str
    pe_count: int
    mips: float
    ram_gb: float
    storage_gb: float
    bw_mbps: float

    @property
    def allocation(self) -> ResourceVector:
        return ResourceVector(self.mips, self.ram_gb, self.bw_mbps)


# Server models S1-S3 (pw_min equals pw_idle for every model)
SERVER_MODELS = {
    "S1": ServerSpec("S1", 2, 2660, 4, 160, 135.0, 93.7, 93.7, model="S1"),
    "S2": ServerSpec("S2", 4, 3067, 8, 250, 113.0, 42.3, 42.3, model="S2"),
    "S3": ServerSpec("S3", 12, 3067, 16, 500, 222.0, 58.4, 58.4, model="S3"),
}

# VM catalogue; the bandwidth column is a local choice
VM_TYPES = {
    "small": VmType("small", 1, 500, 0.5, 40, 25.0),
    "medium": VmType("medium", 2, 1000, 1.0, 60, 50.0),
    "large": VmType("large", 3, 1500, 2.0, 80, 100.0),
    "xlarge": VmType("xlarge", 4, 2000, 3.0, 100, 150.0),
}


@dataclass(frozen=True)
class VmSpec:
    id: str
    type: str
    allocated: ResourceVector
    owner_user: str = ""
    havn_id: str = ""

    @classmethod
    def of_type(cls, vm_id: str, type_name: str, owner_user: str = "", havn_id: str = "",
                catalog: dict[str, VmType] | None = None) -> "VmSpec":
        catalog = catalog or VM_TYPES
        if type_name not in catalog:
            raise DomainError(f"unknown VM type {type_name!r}")
        return cls(vm_id, type_name, catalog[type_name].allocation, owner_user, havn_id)


@dataclass(frozen=True)
class Havn:
    havn_id: str
    user_id: str
    vm_ids: tuple[str, ...]


def check_havns_disjoint(havns) -> None:
    seen: dict[str, str] = {}
    for h in havns:
        for vm in h.vm_ids:
            if vm in seen:
                raise IntegrityError(f"VM {vm} belongs to both {seen[vm]} and {h.havn_id}")
            seen[vm] = h.havn_id


def server_power(spec: ServerSpec, ru: float) -> float:
    """Power draw of an active server at CPU utilisation ``ru``."""
    if not 0.0 <= ru <= 1.0:
        raise DomainError(f"utilisation {ru} outside [0, 1]")
    return (spec.pw_max - spec.pw_min) * ru + spec.pw_idle


def server_temperature(spec: ServerSpec, power: float, t_in: float = INLET_TEMPERATURE_C) -> float:
    if not spec.pw_idle - 1e-12 <= power <= spec.pw_max + 1e-12:
        raise DomainError(f"power {power} W outside [{spec.pw_idle}, {spec.pw_max}]")
    frac = (power - spec.pw_idle) / (spec.pw_max - spec.pw_idle)
    return THERMAL_SLOPE * min(max(frac, 0.0), 1.0) + t_in


def server_status(temperature: float, t_thr: float = DEFAULT_T_THR_C) -> Status:
    return Status.SAFE if temperature < t_thr else Status.UNSAFE


@dataclass
class ServerState:
    """Mutable view of one server.

    ``hosted`` maps VM id to its current allocation (reservations included).
    ``usage`` optionally maps VM id to the realised absolute demand for the
    current interval; utilisation, power and temperature use it when set and
    fall back to the allocation otherwise.
    """

    spec: ServerSpec
    hosted: dict[str, ResourceVector] = field(default_factory=dict)
    usage: dict[str, ResourceVector] = field(default_factory=dict)
    t_in: float = INLET_TEMPERATURE_C
    t_thr: float = DEFAULT_T_THR_C

    @property
    def id(self) -> str:
        return self.spec.id

    @property
    def hosted_vm_ids(self) -> tuple[str, ...]:
        return tuple(sorted(self.hosted))

    @property
    def active(self) -> bool:
        return bool(self.hosted)

    def allocated(self, exclude: str | None = None) -> ResourceVector:
        return vsum(a for vm, a in self.hosted.items() if vm != exclude)

    def demand(self) -> ResourceVector:
        return vsum(self.usage.get(vm, a) for vm, a in self.hosted.items())

    @property
    def cpu_util(self) -> float:
        if not self.hosted:
            return 0.0
        return min(1.0, self.demand().cpu / self.spec.capacity.cpu)

    @property
    def power(self) -> float:
        return server_power(self.spec, self.cpu_util) if self.active else 0.0

    @property
    def temperature(self) -> float:
        if not self.active:
            return self.t_in
        return server_temperature(self.spec, self.power, self.t_in)

    @property
    def status(self) -> Status:
        return server_status(self.temperature, self.t_thr)

    def is_overloaded(self) -> bool:
        """Realised demand above capacity in some resource."""
        return self.demand().exceeds(np.asarray(self.spec.capacity) + CAPACITY_TOLERANCE)


def datacenter_power(states) -> float:
    return float(sum(s.power for s in states if s.active))


@dataclass(frozen=True)
class Utilization:
    per_resource: dict[str, float]
    overall_pct: float
    no_active_servers: bool = False


def datacenter_utilization(states, demands=None) -> Utilization:
    """Summed per-server demand/capacity ratios, averaged over resources and
    active servers, as a percentage.

    ``demands`` maps VM id to a ResourceVector or VmSpec; by default each
    server's own usage (or allocation) is used.
    """
    states = list(states)
    per = np.zeros(len(RESOURCES))
    n_active = 0
    for s in states:
        if not s.active:
            continue
        n_active += 1
        if demands is None:
            total = s.demand()
        else:
            vecs = []
            for vm in s.hosted:
                if vm not in demands:
                    raise IntegrityError(f"hosted VM {vm} on {s.id} has no demand entry")
                d = demands[vm]
                vecs.append(d.allocated if isinstance(d, VmSpec) else d)
            total = vsum(vecs)
        per += np.asarray(total) / np.asarray(s.spec.capacity)
    per_resource = dict(zip(RESOURCES, per.tolist()))
    if n_active == 0:
        return Utilization(per_resource, 0.0, True)
    return Utilization(per_resource, float(100.0 * per.sum() / (len(RESOURCES) * n_active)))


def _demand_of(vm) -> ResourceVector:
    return vm.allocated if isinstance(vm, VmSpec) else ResourceVector.of(vm)


def can_place(server_state: ServerState, vm_spec, pending=(), exclude: str | None = None) -> bool:
    """True when hosted + pending + candidate fits the server in every resource.

    ``exclude`` drops one hosted VM from the sum (used when the candidate is
    that VM being resized or moved).
    """
    total = np.asarray(server_state.allocated(exclude)) + np.asarray(_demand_of(vm_spec))
    for p in pending:
        total = total + np.asarray(_demand_of(p))
    return bool(np.all(total <= np.asarray(server_state.spec.capacity) + CAPACITY_TOLERANCE))


def marginal_power(state: ServerState, demand, exclude: str | None = None) -> float:
    """Increase in datacenter power from adding ``demand`` to ``state``,
    judged on allocated CPU.  Waking an empty server costs its idle power."""
    spec = state.spec
    base = state.allocated(exclude)
    base_active = any(vm != exclude for vm in state.hosted)
    cap = spec.capacity.cpu
    ru_new = min(1.0, (base.cpu + ResourceVector.of(demand).cpu) / cap)
    after = server_power(spec, ru_new)
    before = server_power(spec, min(1.0, base.cpu / cap)) if base_active else 0.0
    return after - before


def select_energy_efficient_server(fleet, vm_spec, exclude_vm: str | None = None,
                                   skip: frozenset[str] | set[str] = frozenset()) -> str | None:
    """Feasible, Safe server with the smallest power increase, or None.

    Ties (within 1e-9 W) prefer servers that are already active, then the
    lowest id.  ``exclude_vm`` is the VM being moved, whose current
    allocation is not counted on its own host; ``skip`` removes servers from
    consideration.
    """
    demand = _demand_of(vm_spec)
    states = fleet.servers.values() if isinstance(fleet, Datacenter) else fleet
    best_key, best_id = None, None
    for s in states:
        if s.id in skip or s.status is not Status.SAFE:
            continue
        if not can_place(s, demand, exclude=exclude_vm):
            continue
        delta = marginal_power(s, demand, exclude_vm)
        wakes = not any(vm != exclude_vm for vm in s.hosted)
        key = (delta, wakes, s.id)
        if best_key is None or _better(key, best_key):
            best_key, best_id = key, s.id
    return best_id


def _better(a, b) -> bool:
    if a[0] < b[0] - 1e-9:
        return True
    if a[0] > b[0] + 1e-9:
        return False
    return (a[1], a[2]) < (b[1], b[2])


@dataclass(frozen=True)
class MigrationEvent:
    time: int
    vm_id: str
    source: str
    dest: str
    downtime_min: float = MIGRATION_DOWNTIME_MIN
    kind: str = "proactive"


class Datacenter:
    """Fleet plus VM catalogue; the only mutator of placement state."""

    def __init__(self, servers, vms=(), t_in: float = INLET_TEMPERATURE_C,
                 t_thr: float = DEFAULT_T_THR_C):
        self.servers: dict[str, ServerState] = {}
        for spec in servers:
            if spec.id in self.servers:
                raise IntegrityError(f"duplicate server id {spec.id}")
            self.servers[spec.id] = ServerState(spec, t_in=t_in, t_thr=t_thr)
        self.vms: dict[str, VmSpec] = {v.id: v for v in vms}
        self.location: dict[str, str] = {}
        self.events: list[MigrationEvent] = []

    def states(self) -> list[ServerState]:
        return list(self.servers.values())

    def host_of(self, vm_id: str) -> str | None:
        return self.location.get(vm_id)

    def allocation_of(self, vm_id: str) -> ResourceVector:
        return self.servers[self.location[vm_id]].hosted[vm_id]

    def add_vm(self, vm: VmSpec) -> None:
        self.vms[vm.id] = vm

    def place(self, vm_id: str, server_id: str, allocation=None) -> None:
        if vm_id not in self.vms:
            raise IntegrityError(f"unknown VM {vm_id}")
        if vm_id in self.location:
            raise PlacementError(f"VM {vm_id} is already hosted on {self.location[vm_id]}")
        alloc = ResourceVector.of(allocation) if allocation is not None else self.vms[vm_id].allocated
        state = self.servers[server_id]
        if not can_place(state, alloc):
            raise PlacementError(f"VM {vm_id} does not fit on {server_id}")
        state.hosted[vm_id] = alloc
        self.location[vm_id] = server_id

    def resize(self, vm_id: str, allocation) -> None:
        """Change a VM's allocation in place; fails without change if it no longer fits."""
        sid = self.location[vm_id]
        alloc = ResourceVector.of(allocation)
        if not can_place(self.servers[sid], alloc, exclude=vm_id):
            raise PlacementError(f"resizing {vm_id} overflows {sid}")
        self.servers[sid].hosted[vm_id] = alloc

    def apply_migration(self, source: str, dest: str, vm_id: str, *, time: int = 0,
                        allocation=None, kind: str = "proactive") -> MigrationEvent:
        if source == dest:
            raise PlacementError(f"self-migration of {vm_id} on {source}")
        src = self.servers[source]
        if vm_id not in src.hosted:
            raise PlacementError(f"VM {vm_id} is not hosted on {source}")
        alloc = ResourceVector.of(allocation) if allocation is not None else src.hosted[vm_id]
        dst = self.servers[dest]
        if not can_place(dst, alloc):
            raise PlacementError(f"VM {vm_id} does not fit on {dest}")
        del src.hosted[vm_id]
        usage = src.usage.pop(vm_id, None)
        dst.hosted[vm_id] = alloc
        if usage is not None:
            dst.usage[vm_id] = usage
        self.location[vm_id] = dest
        event = MigrationEvent(time, vm_id, source, dest, kind=kind)
        self.events.append(event)
        return event

    def set_usage(self, usage: dict[str, ResourceVector]) -> None:
        for s in self.servers.values():
            s.usage = {vm: usage[vm] for vm in s.hosted if vm in usage}

    def check_capacity(self) -> None:
        for s in self.servers.values():
            if not can_place(s, ResourceVector.zero()):
                raise IntegrityError(f"allocations on {s.id} exceed capacity")


def build_fleet(n_servers: int, models=("S1", "S2", "S3"), catalog=None,
                bw_mbps: float = DEFAULT_SERVER_BW_MBPS) -> list[ServerSpec]:
    """``n_servers`` servers cycling through ``models`` with ids s000, s001, ..."""
    catalog = catalog or SERVER_MODELS
    width = max(3, len(str(n_servers - 1)))
    fleet = []
    for i in range(n_servers):
        base = catalog[models[i % len(models)]]
        d = base.__dict__.copy()
        d.update(id=f"s{i:0{width}d}", bw_mbps=bw_mbps, model=base.model or base.id)
        fleet.append(ServerSpec(**d))
    return fleet


def load_inventory(path) -> tuple[dict[str, ServerSpec], dict[str, VmType]]:
    """Read server models and VM types from a JSON inventory.

    Layout: {"servers": {name: {pe_count, mips_per_pe, ram_gb, storage_gb,
    pw_max, pw_min, pw_idle[, bw_mbps]}}, "vm_types": {name: {pe_count, mips,
    ram_gb, storage_gb, bw_mbps}}}.  Missing sections keep the defaults.
    """
    data = json.loads(Path(path).read_text())
    servers = dict(SERVER_MODELS)
    for name, fields in data.get("servers", {}).items():
        servers[name] = ServerSpec(id=name, model=name, **fields)
    types = dict(VM_TYPES)
    for name, fields in data.get("vm_types", {}).items():
        types[name] = VmType(name=name, **fields)
    return servers, types
