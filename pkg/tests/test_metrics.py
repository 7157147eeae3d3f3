import math

import pytest
from hypothesis import assume, given, settings, strategies as st

from fterm.metrics import (AvailabilityLedger, MetricsError, availability, ha_report, ha_score, mtbf, mttr,
                           offered_availability, uptime_share_pct)


def test_mtbf_and_mttr_examples():
    assert mtbf(AvailabilityLedger(19300.0, 0.0, 7)) == pytest.approx(2757.14, abs=5e-3)
    assert mtbf(AvailabilityLedger(100.0, 0.0, 4)) == 25.0
    assert mtbf(AvailabilityLedger(100.0, 0.0, 0)) == math.inf
    # each migration costs 0.21 minutes
    assert mttr(AvailabilityLedger(500.0, 0.21 * 7, 1, migrations=7)) == pytest.approx(1.47)
    assert mttr(AvailabilityLedger(500.0, 0.21 * 21, 1, migrations=21)) == pytest.approx(4.41)
    assert mttr(AvailabilityLedger(500.0, 0.0, 0)) == 0.0


def test_availability_examples():
    assert availability(1804.76, 4.41) == pytest.approx(99.76, abs=0.01)
    # 99.9958 truncated to two decimals
    assert availability(9900.0, 0.42) == pytest.approx(99.99, abs=0.01)
    assert availability(1234.0, 0.0) == 100.0
    assert availability(math.inf, 0.0) == 100.0
    with pytest.raises(MetricsError):
        availability(0.0, 0.0)
    with pytest.raises(MetricsError):
        availability(-1.0, 1.0)


def test_offered_availability_and_score():
    assert offered_availability(1000.0, 0.0) == 1.0
    assert offered_availability(1000.0, 10.0) == pytest.approx(0.99)
    assert offered_availability(990.0, 10.0, conventional=True) == pytest.approx(0.99)
    assert offered_availability(0.0, 0.0) == 1.0
    with pytest.raises(MetricsError):
        offered_availability(0.0, 5.0)
    assert ha_score(0.9995, 0.9975) == pytest.approx(0.2001, abs=5e-5)
    assert ha_score(0.9995, 0.9995) == 0.0
    assert ha_score(0.9995, 1.0) < 0
    with pytest.raises(MetricsError):
        ha_score(0.0, 1.0)


def test_ledger_arithmetic_and_validation():
    a = AvailabilityLedger(10.0, 1.0, 1, 2) + AvailabilityLedger(5.0, 2.0, 3, 1)
    assert a == AvailabilityLedger(15.0, 3.0, 4, 3)
    assert a.pooled().failures == 1 and AvailabilityLedger().pooled().failures == 0
    with pytest.raises(MetricsError):
        AvailabilityLedger(-1.0)


def test_report_dict_handles_no_failures():
    rep = ha_report(AvailabilityLedger(800.0, 0.0, 0))
    d = rep.to_dict()
    assert d["mtbf"] is None and d["availability_pct"] == 100.0 and d["a_offered"] == 1.0


ledgers = st.builds(AvailabilityLedger, st.floats(1, 1e6), st.floats(0, 1e4), st.integers(1, 500))


@settings(max_examples=200, deadline=None)
@given(ledgers)
def test_availability_is_uptime_share(ledger):
    got = availability(mtbf(ledger), mttr(ledger))
    assert got == pytest.approx(uptime_share_pct(ledger.uptime_min, ledger.downtime_min), rel=1e-9)
    assert 0 <= got <= 100


@settings(max_examples=200, deadline=None)
@given(st.floats(0.1, 1e5), st.floats(0, 1e3), st.floats(0, 1e3))
def test_availability_monotone(m, r, step):
    assume(step > 1e-6)
    assert availability(m + step, r) >= availability(m, r) - 1e-9
    assert availability(m, r + step) <= availability(m, r) + 1e-9


@settings(max_examples=200, deadline=None)
@given(st.floats(1, 1e6), st.floats(0, 1e4), st.floats(0, 1e4))
def test_more_downtime_never_helps(up, down, extra):
    assert offered_availability(up, down + extra) <= offered_availability(up, down)
    assert ha_score(0.9995, offered_availability(up, down + extra)) >= ha_score(0.9995, offered_availability(up, down))
