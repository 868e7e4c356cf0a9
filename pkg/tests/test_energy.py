import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from uavpsr.energy import (BatteryLedger, BatteryStateError, InfeasibleMoveError, level_power,
                           power_unit, slot_energy)
from uavpsr.scenario import PhysicalConstants

import oracles


def test_hover_power_anchor(consts):
    assert level_power(0.0, consts) == pytest.approx(9.428, abs=1e-3)
    assert power_unit(consts) == level_power(0.0, consts)


@given(st.floats(0, 30))
@settings(max_examples=100, deadline=None)
def test_level_power_matches_formula(v):
    consts = PhysicalConstants()
    assert level_power(v, consts) == pytest.approx(oracles.flight_power(v, consts), rel=1e-12)


def test_level_power_decreases_with_speed(consts):
    vs = np.linspace(0, 20, 50)
    p = [level_power(v, consts) for v in vs]
    assert np.all(np.diff(p) < 0)
    with pytest.raises(ValueError):
        level_power(-1.0, consts)


def test_slot_energy_reference_values(consts):
    assert slot_energy(0.0, consts) == pytest.approx(10.0, abs=1e-12)
    assert slot_energy(100.0, consts) == pytest.approx(7.51, abs=0.01)
    # manual: 9 s at 40 km/h then 1 s hover, in hover units
    v = 40 / 3.6
    manual = (oracles.flight_power(v, consts) * 9 + oracles.flight_power(0, consts) * 1) / 9.428090415820632
    assert slot_energy(100.0, consts) == pytest.approx(manual, rel=1e-9)


def test_slot_energy_extra_terms():
    consts = PhysicalConstants(e_tx=0.5, c_op=0.1)
    assert slot_energy(0.0, consts) == pytest.approx(10.0 + 0.5 + 1.0)
    raw = PhysicalConstants(power_unit=1.0)
    assert slot_energy(0.0, raw) == pytest.approx(94.28090415820632)


@pytest.mark.parametrize("d", [-1.0, 100.01])
def test_infeasible_moves(consts, d):
    with pytest.raises(InfeasibleMoveError):
        slot_energy(d, consts)


@given(st.floats(0, 100))
@settings(max_examples=60, deadline=None)
def test_slot_energy_linear_in_distance(d):
    consts = PhysicalConstants()
    e0, e100 = slot_energy(0.0, consts), slot_energy(100.0, consts)
    assert slot_energy(d, consts) == pytest.approx(e0 + (e100 - e0) * d / 100.0, rel=1e-12)


def test_ledger_quit_at_threshold():
    ledger = BatteryLedger([160.0, 1500.0], threshold=150.0)
    assert ledger.apply_drain(0, 5.0) is False
    assert ledger.apply_drain(0, 5.0) is True  # 150 <= 150
    assert ledger.level[0] == 150.0
    with pytest.raises(BatteryStateError):
        ledger.apply_drain(0, 1.0)
    assert ledger.apply_drain(1, 10.0) is False


def test_ledger_copy_is_independent():
    a = BatteryLedger([500.0])
    b = a.copy()
    b.apply_drain(0, 100.0)
    assert a.level[0] == 500.0 and b.level[0] == 400.0
    assert BatteryLedger([100.0]).quit[0]


def test_hover_lifetime_from_full_battery(consts):
    ledger = BatteryLedger([1500.0], consts.e_thre)
    steps = 0
    while not ledger.quit[0]:
        ledger.apply_drain(0, slot_energy(0.0, consts))
        steps += 1
    assert steps == math.ceil((1500 - 150) / 10)
