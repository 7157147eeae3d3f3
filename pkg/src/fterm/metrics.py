"""Availability accounting: MTBF, MTTR, average and offered availability,
HA-score.

Uptime and downtime are in minutes.  ``failures`` counts failure episodes;
MTBF and MTTR divide the totals by it, so their ratio (and therefore the
average availability) is the plain uptime share whatever the episode count.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

DEFAULT_GUARANTEED_AVAILABILITY = 0.9995


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class AvailabilityLedger:
    uptime_min: float = 0.0
    downtime_min: float = 0.0
    failures: int = 0
    migrations: int = 0

    def __post_init__(self):
        if min(self.uptime_min, self.downtime_min, self.failures, self.migrations) < 0:
            raise MetricsError("ledger entries must be non-negative")

    def __add__(self, other: "AvailabilityLedger") -> "AvailabilityLedger":
        return AvailabilityLedger(self.uptime_min + other.uptime_min, self.downtime_min + other.downtime_min,
                                  self.failures + other.failures, self.migrations + other.migrations)

    def pooled(self) -> "AvailabilityLedger":
        """Same totals counted as a single failure episode (when any occurred)."""
        return AvailabilityLedger(self.uptime_min, self.downtime_min,
                                  min(self.failures, 1), self.migrations)


def mtbf(ledger: AvailabilityLedger) -> float:
    """Mean uptime per failure; ``inf`` when nothing failed."""
    if ledger.failures == 0:
        return math.inf
    return ledger.uptime_min / ledger.failures


def mttr(ledger: AvailabilityLedger) -> float:
    if ledger.failures == 0:
        return 0.0
    return ledger.downtime_min / ledger.failures


def availability(mtbf_min: float, mttr_min: float) -> float:
    """Average availability in percent."""
    if mtbf_min < 0 or mttr_min < 0:
        raise MetricsError("mtbf and mttr must be non-negative")
    if math.isinf(mtbf_min):
        return 100.0
    if mtbf_min + mttr_min == 0:
        raise MetricsError("availability undefined when mtbf and mttr are both zero")
    return 100.0 * (mtbf_min / (mtbf_min + mttr_min))


def offered_availability(uptime_min: float, downtime_min: float, conventional: bool = False) -> float:
    """Offered availability as a fraction.

    The default is ``1 - downtime/uptime``; ``conventional=True`` uses
    ``1 - downtime/(uptime + downtime)``.
    """
    denom = uptime_min + downtime_min if conventional else uptime_min
    if denom <= 0:
        if downtime_min == 0:
            return 1.0
        raise MetricsError("offered availability undefined with zero uptime")
    return 1.0 - downtime_min / denom


def ha_score(a_guaranteed: float, a_offered: float) -> float:
    """Shortfall of offered from guaranteed availability, in percent of the
    guarantee (positive means the guarantee was missed)."""
    if a_guaranteed <= 0:
        raise MetricsError("guaranteed availability must be positive")
    return (a_guaranteed - a_offered) / a_guaranteed * 100.0


@dataclass(frozen=True)
class HaReport:
    mtbf: float
    mttr: float
    availability_pct: float
    ha_score: float
    a_offered: float
    a_guaranteed: float

    def to_dict(self) -> dict:
        d = asdict(self)
        if math.isinf(d["mtbf"]):
            d["mtbf"] = None
        return d


def ha_report(ledger: AvailabilityLedger, a_guaranteed: float = DEFAULT_GUARANTEED_AVAILABILITY,
              conventional_offered: bool = False) -> HaReport:
    m, r = mtbf(ledger), mttr(ledger)
    a_o = offered_availability(ledger.uptime_min, ledger.downtime_min, conventional_offered)
    return HaReport(m, r, availability(m, r), ha_score(a_guaranteed, a_o), a_o, a_guaranteed)


def uptime_share_pct(uptime_min: float, downtime_min: float) -> float:
    total = uptime_min + downtime_min
    return 100.0 if total == 0 else 100.0 * uptime_min / total
