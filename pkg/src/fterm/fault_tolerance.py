"""Failure tolerance: cluster failure-prone VMs, size Safe-Boxes, relocate.

Failure-prone VMs are clustered on their predicted demand (scaled by a
reference capacity into [0, 1]) with k-means, K picked by the elbow of the
inertia curve.  Each cluster's Safe-Box is the per-resource maximum of its
members' demand; every member gets a reservation of that size on the
energy-efficient server and is moved there (or resized in place when that
server is its current host).
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .datacenter import Datacenter, MigrationEvent, PlacementError, can_place, select_energy_efficient_server
from .resources import ResourceVector

DEFAULT_K_MAX = 10
DEFAULT_RESTARTS = 10
MAX_ITERATIONS = 100


@dataclass(frozen=True)
class DemandPoint:
    vm_id: str
    predicted: ResourceVector

    def __post_init__(self):
        if not all(0.0 <= v <= 1.0 for v in self.predicted):
            raise ValueError(f"demand of {self.vm_id} must be scaled into [0, 1]")


@dataclass(frozen=True)
class Clustering:
    k: int
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    vm_ids: tuple[str, ...] = ()

    @property
    def assignments(self) -> dict[str, int]:
        return {vm: int(c) for vm, c in zip(self.vm_ids, self.labels)}

    def members(self, cluster: int) -> list[int]:
        return [i for i, c in enumerate(self.labels) if c == cluster]


@dataclass(frozen=True)
class SafeBox:
    cluster: int
    reserve: ResourceVector
    member_count: int


@dataclass(frozen=True)
class Placement:
    vm_id: str
    cluster: int
    source: str
    dest: str | None
    reservation: ResourceVector


def inertia_of(points, labels, centroids) -> float:
    X = np.asarray(points, dtype=float)
    return float(np.sum((X - np.asarray(centroids)[labels]) ** 2))


def _assign(X, C):
    d2 = ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1), d2


def _plus_plus(X, k, rng):
    n = X.shape[0]
    centres = [X[rng.integers(n)]]
    closest = ((X - centres[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centres.append(X[idx])
        closest = np.minimum(closest, ((X - X[idx]) ** 2).sum(axis=1))
    return np.array(centres)


def lloyd(points, centroids, max_iter: int = MAX_ITERATIONS):
    """Lloyd iterations from the given centroids.

    Returns (labels, centroids, inertia history).  A cluster left empty is
    moved onto the point farthest from its current centroid.
    """
    X = np.asarray(points, dtype=float)
    C = np.array(centroids, dtype=float)
    k = C.shape[0]
    labels, d2 = _assign(X, C)
    history = [float(d2[np.arange(len(X)), labels].sum())]
    for _ in range(max_iter):
        for j in range(k):
            if not np.any(labels == j):
                # take the farthest point from a cluster that can spare one
                counts = np.bincount(labels, minlength=k)
                dist = np.where(counts[labels] > 1, d2[np.arange(len(X)), labels], -1.0)
                labels[int(np.argmax(dist))] = j
        C = np.array([X[labels == j].mean(axis=0) for j in range(k)])
        new_labels, d2 = _assign(X, C)
        history.append(float(d2[np.arange(len(X)), new_labels].sum()))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return labels, C, history


def kmeans(points, k: int, seed: int = 0, restarts: int = DEFAULT_RESTARTS,
           max_iter: int = MAX_ITERATIONS, vm_ids=()) -> Clustering:
    """Best-of-``restarts`` k-means with k-means++ seeding."""
    X = np.atleast_2d(np.asarray(points, dtype=float))
    n = X.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} outside [1, {n}]")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, restarts)):
        labels, C, _ = lloyd(X, _plus_plus(X, k, rng), max_iter)
        err = inertia_of(X, labels, C)
        if best is None or err < best[0] - 1e-15:
            best = (err, labels, C)
    return Clustering(k, best[1], best[2], best[0], tuple(vm_ids))


def inertia_curve(points, k_max: int, seed: int = 0, restarts: int = DEFAULT_RESTARTS) -> list[float]:
    X = np.atleast_2d(np.asarray(points, dtype=float))
    top = min(k_max, X.shape[0])
    return [kmeans(X, k, seed, restarts).inertia for k in range(1, top + 1)]


def elbow_from_curve(curve) -> int:
    """K at the largest second difference of the inertia curve (1-based)."""
    curve = list(curve)
    if len(curve) <= 1 or curve[0] <= 1e-12:
        return 1
    if len(curve) == 2:
        return 2 if curve[1] < curve[0] else 1
    d2 = [curve[i - 1] - 2 * curve[i] + curve[i + 1] for i in range(1, len(curve) - 1)]
    best = int(np.argmax(d2))
    return best + 2 if d2[best] > 0 else 1


def choose_k_elbow(points, k_max: int = DEFAULT_K_MAX, seed: int = 0,
                   restarts: int = DEFAULT_RESTARTS) -> int:
    X = np.atleast_2d(np.asarray(points, dtype=float))
    if X.shape[0] == 0:
        raise ValueError("no points to cluster")
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    if X.shape[0] <= 2:
        return 1
    return elbow_from_curve(inertia_curve(X, k_max, seed, restarts))


def build_decision_matrix(members) -> np.ndarray:
    """Rows are resources, columns are member VMs in input order."""
    cols = [np.asarray(m.predicted if isinstance(m, DemandPoint) else m, dtype=float) for m in members]
    if not cols:
        raise ValueError("empty cluster")
    return np.column_stack(cols)


def derive_safe_box(matrix, cluster: int = 0) -> SafeBox:
    M = np.asarray(matrix, dtype=float)
    if M.size == 0:
        raise ValueError("empty decision matrix")
    return SafeBox(cluster, ResourceVector.of(M.max(axis=1)), M.shape[1])


@dataclass
class FtuResult:
    clustering: Clustering | None = None
    boxes: list[SafeBox] = field(default_factory=list)
    placements: list[Placement] = field(default_factory=list)
    events: list[MigrationEvent] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)

    def report_rows(self, interval: int) -> list[tuple]:
        rows = []
        for box in self.boxes:
            placed = sum(1 for p in self.placements if p.cluster == box.cluster and p.dest is not None)
            r = box.reserve
            rows.append((interval, box.cluster, box.member_count, round(r.cpu, 6), round(r.mem, 6),
                         round(r.bw, 6), placed))
        return rows


def allocate_safe_boxes(boxes: list[SafeBox], clustering: Clustering, fleet: Datacenter,
                        reference, floor: dict[str, ResourceVector] | None = None) -> list[Placement]:
    """Plan one reservation per cluster member.

    Reservations are the Safe-Box (scaled back by ``reference``), never below
    the member's allocation in ``floor``.  Planning runs on a scratch copy of
    the fleet so later members see earlier reservations.
    """
    shadow = copy.deepcopy(fleet)
    ref = np.asarray(reference, dtype=float)
    plans = []
    for box in boxes:
        base = np.asarray(box.reserve) * ref
        for i in clustering.members(box.cluster):
            vm = clustering.vm_ids[i]
            source = shadow.host_of(vm)
            want = base if floor is None else np.maximum(base, floor[vm])
            want = ResourceVector.of(want)
            dest = select_energy_efficient_server(shadow, want, exclude_vm=vm)
            if dest is not None:
                if dest == source:
                    shadow.resize(vm, want)
                else:
                    shadow.apply_migration(source, dest, vm, allocation=want)
            plans.append(Placement(vm, box.cluster, source, dest, want))
    return plans


def deploy_replicas(placements: list[Placement], fleet: Datacenter, time: int = 0,
                    kind: str = "proactive") -> tuple[list[MigrationEvent], list[str]]:
    """Move each VM into its planned reservation.

    A plan that no longer fits is re-planned once; a VM that still cannot be
    placed is returned in the failure list.  Plans on the current host resize
    in place and emit no event.
    """
    events, failures = [], []
    for p in placements:
        source = fleet.host_of(p.vm_id)
        dest = p.dest
        if dest is None:
            failures.append(p.vm_id)
            continue
        for attempt in range(2):
            try:
                if dest == source:
                    fleet.resize(p.vm_id, p.reservation)
                else:
                    events.append(fleet.apply_migration(source, dest, p.vm_id, time=time,
                                                        allocation=p.reservation, kind=kind))
                break
            except PlacementError:
                if attempt == 1:
                    failures.append(p.vm_id)
                    break
                dest = select_energy_efficient_server(fleet, p.reservation, exclude_vm=p.vm_id)
                if dest is None:
                    failures.append(p.vm_id)
                    break
    return events, failures


def run_ftu(fleet: Datacenter, vm_ids, demands: dict[str, ResourceVector], reference, time: int = 0,
            k_max: int = DEFAULT_K_MAX, seed: int = 0, kind: str = "proactive") -> FtuResult:
    """Cluster ``vm_ids`` on demand/reference, size Safe-Boxes and relocate them."""
    vm_ids = sorted(vm_ids)
    result = FtuResult()
    if not vm_ids:
        return result
    ref = np.asarray(reference, dtype=float)
    X = np.array([np.clip(np.asarray(demands[vm]) / ref, 0.0, 1.0) for vm in vm_ids])
    k = choose_k_elbow(X, k_max, seed)
    clustering = kmeans(X, k, seed, vm_ids=vm_ids)
    result.clustering = clustering
    for c in range(k):
        idx = clustering.members(c)
        if idx:
            result.boxes.append(derive_safe_box(build_decision_matrix(X[idx]), c))
    floor = {vm: fleet.allocation_of(vm) for vm in vm_ids}
    result.placements = allocate_safe_boxes(result.boxes, clustering, fleet, ref, floor)
    result.events, result.failures = deploy_replicas(result.placements, fleet, time, kind)
    return result


def fits_everywhere(fleet: Datacenter) -> bool:
    return all(can_place(s, ResourceVector.zero()) for s in fleet.servers.values())
