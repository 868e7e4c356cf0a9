"""Coverage, path loss, SINR and resource-block association for one time slot."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .scenario import PhysicalConstants

SPEED_OF_LIGHT = 3e8
_COVER_TOL = 1e-9  # meters


class NoCoverageError(ValueError):
    pass


def coverage_radius(altitude: float, aperture: float) -> float:
    """Ground radius (m) of the disk under a UAV at ``altitude`` with full aperture angle ``aperture`` (rad)."""
    if not 0 < aperture < math.pi:
        raise ValueError("aperture must lie in (0, pi)")
    return altitude * math.tan(aperture / 2)


def path_loss_db(d, f_c: float = 2e9, eta: float = 1.0):
    """Free-space loss plus the excess LoS loss ``eta``; ``d`` in meters."""
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("path loss needs a positive distance")
    out = 20 * np.log10(4 * np.pi * f_c * d / SPEED_OF_LIGHT) + eta
    return float(out) if out.ndim == 0 else out


def dbm_to_watts(dbm: float) -> float:
    return 10 ** ((dbm - 30) / 10)


def link_gain(pl_db, divisor: float = 20.0):
    return 10 ** (-np.asarray(pl_db, dtype=float) / divisor)


def _links(users_m: np.ndarray, uavs_m: np.ndarray, consts: PhysicalConstants):
    """Coverage mask and received psd, both shaped (..., N, U)."""
    dh = np.linalg.norm(uavs_m[..., :, None, :] - users_m[None, :, :], axis=-1)
    r = coverage_radius(consts.altitude, consts.aperture)
    covered = dh <= r + _COVER_TOL
    d3 = np.sqrt(dh ** 2 + consts.altitude ** 2)
    pl = 20 * np.log10(4 * np.pi * consts.carrier_hz * d3 / SPEED_OF_LIGHT) + consts.eta_db
    rx = dbm_to_watts(consts.tx_psd_dbm) * link_gain(pl, consts.gain_divisor)
    return covered, np.where(covered, rx, 0.0)


def sinr_matrix(users: np.ndarray, uavs: np.ndarray, participating: np.ndarray,
                consts: PhysicalConstants, unit_length: float = 100.0):
    """Covered mask and SINR per (UAV, user); positions in area units.

    Only participating UAVs (active at serving altitude) serve or interfere.
    """
    users = np.asarray(users, dtype=float).reshape(-1, 2)
    uavs = np.asarray(uavs, dtype=float).reshape(-1, 2)
    part = np.asarray(participating, dtype=bool)
    covered, rx = _links(users * unit_length, uavs * unit_length, consts)
    covered &= part[:, None]
    rx = np.where(covered, rx, 0.0)
    total = rx.sum(axis=0, keepdims=True)
    n0 = dbm_to_watts(consts.noise_psd_dbm)
    sinr = np.where(covered, rx / (n0 + total - rx), 0.0)
    return covered, sinr


def sinr(user: int, serving: int, users: np.ndarray, uavs: np.ndarray,
         participating: np.ndarray, consts: PhysicalConstants,
         unit_length: float = 100.0) -> float:
    covered, s = sinr_matrix(users, uavs, participating, consts, unit_length)
    if not covered[serving, user]:
        raise NoCoverageError(f"user {user} is outside the disk of UAV {serving}")
    return float(s[serving, user])


def rbs_needed(sinr_values, consts: PhysicalConstants):
    """Smallest RB count with ``k * W_rb * log2(1 + SINR) >= R_u`` (a huge sentinel if SINR is 0)."""
    s = np.asarray(sinr_values, dtype=float)
    rate = consts.rb_hz * np.log2(1.0 + s)
    with np.errstate(divide="ignore", invalid="ignore"):
        k = np.where(rate > 0, np.ceil(consts.rate_bps / np.where(rate > 0, rate, 1.0)), np.inf)
    # undo ceil overshoot from rounding at exact multiples
    km1 = np.where(np.isfinite(k), k - 1, 0.0)
    over = np.isfinite(k) & (k > 1) & (km1 * rate >= consts.rate_bps)
    k = np.where(over, k - 1, k)
    return np.minimum(k, 1e9).astype(np.int64)


@dataclass
class AssociationMap:
    serving: np.ndarray  # (U,) UAV index or -1
    rbs: np.ndarray  # (U,) allocated RBs
    served: np.ndarray  # (U,) bool X_u
    remaining: np.ndarray  # (N,) RBs left per UAV
    sinr: np.ndarray  # (N, U)
    covered: np.ndarray  # (N, U)

    @property
    def n_served(self) -> int:
        return int(self.served.sum())

    def rows(self):
        """(user id, uav id, RBs, served) tuples for CSV export."""
        return [(u, int(self.serving[u]), int(self.rbs[u]), int(self.served[u]))
                for u in range(len(self.served))]


def associate_and_allocate(users: np.ndarray, uavs: np.ndarray, participating: np.ndarray,
                           consts: PhysicalConstants, unit_length: float = 100.0) -> AssociationMap:
    """Greedy highest-SINR association under the per-UAV RB budget.

    Users are processed by descending best SINR (ties by user index); each
    takes the best covering UAV that still has enough RBs for it.
    """
    covered, s = sinr_matrix(users, uavs, participating, consts, unit_length)
    n_uav, n_user = s.shape
    need = rbs_needed(s, consts)
    remaining = np.full(n_uav, consts.n_rb, dtype=np.int64)
    serving = np.full(n_user, -1, dtype=np.int64)
    rbs = np.zeros(n_user, dtype=np.int64)
    best = s.max(axis=0) if n_uav else np.zeros(n_user)
    for u in np.lexsort((np.arange(n_user), -best)):
        if best[u] <= 0:
            continue
        for i in np.lexsort((np.arange(n_uav), -s[:, u])):
            if not covered[i, u]:
                break
            if need[i, u] <= remaining[i]:
                remaining[i] -= need[i, u]
                serving[u] = i
                rbs[u] = need[i, u]
                break
    return AssociationMap(serving, rbs, serving >= 0, remaining, s, covered)


def served_counts_batch(users: np.ndarray, placements: np.ndarray, consts: PhysicalConstants,
                        unit_length: float = 100.0) -> np.ndarray:
    """Served-user counts for many fleets at once; ``placements`` is (M, N, 2) in units.

    Same rules as :func:`associate_and_allocate` with every UAV participating.
    """
    users = np.asarray(users, dtype=float).reshape(-1, 2)
    placements = np.asarray(placements, dtype=float)
    m, n, _ = placements.shape
    n_user = len(users)
    if n_user == 0 or n == 0:
        return np.zeros(m, dtype=np.int64)
    covered, rx = _links(users * unit_length, placements * unit_length, consts)
    total = rx.sum(axis=1, keepdims=True)
    n0 = dbm_to_watts(consts.noise_psd_dbm)
    s = np.where(covered, rx / (n0 + total - rx), 0.0)
    need = np.where(covered, rbs_needed(s, consts), np.iinfo(np.int64).max)
    best = s.max(axis=1)  # (M, U)
    user_order = np.argsort(-best, axis=1, kind="stable")
    uav_order = np.argsort(-s, axis=1, kind="stable")  # (M, N, U)
    remaining = np.full((m, n), consts.n_rb, dtype=np.int64)
    count = np.zeros(m, dtype=np.int64)
    rows = np.arange(m)
    for k in range(n_user):
        u = user_order[:, k]
        pending = best[rows, u] > 0
        for j in range(n):
            i = uav_order[rows, j, u]
            nd = need[rows, i, u]
            ok = pending & (nd <= remaining[rows, i])
            remaining[rows[ok], i[ok]] -= nd[ok]
            count += ok
            pending &= ~ok
            if not pending.any():
                break
    return count


def us_score(served, beta: float = 2.0) -> float:
    """User-satisfaction score: (number served) ** beta."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    n = served.n_served if isinstance(served, AssociationMap) else served
    return float(n) ** beta
