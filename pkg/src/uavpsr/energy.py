"""Rotor power model, per-slot energy and the battery ledger.

Energies are in unit*s where one power unit is the hover power of the
rotor model (9.428 W with the default airframe).
"""
from __future__ import annotations

import math

import numpy as np

from .scenario import PhysicalConstants


class InfeasibleMoveError(ValueError):
    pass


class BatteryStateError(RuntimeError):
    pass


def induced_hover_velocity(consts: PhysicalConstants) -> float:
    return math.sqrt(consts.weight / (2 * consts.air_density * consts.rotor_area))


def level_power(v: float, consts: PhysicalConstants) -> float:
    """Level-flight power at speed ``v`` (m/s); equals the hover value at v = 0."""
    if v < 0:
        raise ValueError("speed must be nonnegative")
    vh = induced_hover_velocity(consts)
    k = consts.weight / (math.sqrt(2) * consts.air_density * consts.rotor_area)
    return k / math.sqrt(v ** 2 + math.sqrt(v ** 4 + 4 * vh ** 4))


def power_unit(consts: PhysicalConstants) -> float:
    return consts.power_unit if consts.power_unit is not None else level_power(0.0, consts)


def slot_energy(d: float, consts: PhysicalConstants) -> float:
    """Energy (unit*s) for one slot: fly ``d`` meters at level speed, hover the rest."""
    v = consts.level_speed
    if d < 0 or d > v * consts.flight_s + 1e-9:
        raise InfeasibleMoveError(f"cannot fly {d} m within {consts.flight_s} s")
    t_fly = d / v
    e_flt = level_power(v, consts) * t_fly + level_power(0.0, consts) * (consts.slot_s - t_fly)
    return e_flt / power_unit(consts) + consts.e_tx + consts.c_op * consts.slot_s


class BatteryLedger:
    def __init__(self, initial, threshold: float = 150.0):
        self.initial = np.asarray(initial, dtype=float).copy()
        self.level = self.initial.copy()
        self.threshold = threshold
        self.quit = self.level <= threshold

    def apply_drain(self, uav: int, energy: float) -> bool:
        """Debit ``energy`` from ``uav``; returns True when this drain triggers the quit."""
        if self.quit[uav]:
            raise BatteryStateError(f"UAV {uav} has already quit")
        self.level[uav] -= energy
        if self.level[uav] <= self.threshold:
            self.quit[uav] = True
        return bool(self.quit[uav])

    def copy(self) -> BatteryLedger:
        other = BatteryLedger(self.initial, self.threshold)
        other.level = self.level.copy()
        other.quit = self.quit.copy()
        return other
