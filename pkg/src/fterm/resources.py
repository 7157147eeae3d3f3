"""Multi-resource vectors shared by every module.

All usage math is done over the fixed resource order (cpu, mem, bw).
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

RESOURCES = ("cpu", "mem", "bw")
N_RESOURCES = len(RESOURCES)


class ResourceVector(NamedTuple):
    cpu: float
    mem: float
    bw: float

    @classmethod
    def of(cls, values) -> "ResourceVector":
        cpu, mem, bw = (float(v) for v in values)
        return cls(cpu, mem, bw)

    @classmethod
    def zero(cls) -> "ResourceVector":
        return cls(0.0, 0.0, 0.0)

    def array(self) -> np.ndarray:
        return np.array(self, dtype=float)

    def __add__(self, other):  # type: ignore[override]
        return ResourceVector.of(np.add(self, other))

    def __sub__(self, other):
        return ResourceVector.of(np.subtract(self, other))

    def scale(self, factor) -> "ResourceVector":
        return ResourceVector.of(np.multiply(self, factor))

    def fits_within(self, capacity) -> bool:
        return bool(np.all(np.asarray(self) <= np.asarray(capacity)))

    def exceeds(self, other) -> bool:
        """True when any component is strictly greater than ``other``."""
        return bool(np.any(np.asarray(self) > np.asarray(other)))


def vmax(a, b) -> ResourceVector:
    return ResourceVector.of(np.maximum(a, b))


def vsum(vectors) -> ResourceVector:
    total = np.zeros(N_RESOURCES)
    for v in vectors:
        total += np.asarray(v, dtype=float)
    return ResourceVector.of(total)
