"""Episodic UAV network environment: state encoding, transitions and reward."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .energy import BatteryLedger, slot_energy
from .radio import AssociationMap, associate_and_allocate
from .scenario import ConfigError, ScenarioConfig, snapshot_at

ACTIVE = "active"
QUIT = "quit"
PRE_TAKEOFF = "pre-takeoff"
ELEVATING = "elevating"

ANGLE_HIGH = math.nextafter(2 * math.pi, 0.0)


class EpisodeError(RuntimeError):
    pass


@dataclass
class FleetState:
    x: np.ndarray
    y: np.ndarray
    energy: np.ndarray
    altitude: np.ndarray
    status: list[str]

    def copy(self) -> FleetState:
        return FleetState(self.x.copy(), self.y.copy(), self.energy.copy(),
                          self.altitude.copy(), list(self.status))

    @property
    def positions(self) -> np.ndarray:
        return np.column_stack([self.x, self.y])

    def serving_mask(self) -> np.ndarray:
        return np.array([s == ACTIVE for s in self.status])


@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    terminal: bool


def encode_state(fleet: FleetState, t: int, mode: str = "quit", with_time: bool = False) -> np.ndarray:
    """[x_1..x_N, y_1..y_N, E_1..E_N] (quit) or [.., H_1..H_N] (join), optionally followed by t."""
    third = {"quit": fleet.energy, "join": fleet.altitude}.get(mode)
    if third is None:
        raise ConfigError(f"unknown state mode {mode!r}")
    parts = [fleet.x, fleet.y, third]
    if with_time:
        parts.append([float(t)])
    return np.concatenate(parts).astype(float)


def decode_state(vec: np.ndarray, n: int, with_time: bool = False):
    """Inverse of :func:`encode_state`: (x, y, E-or-H, t-or-None)."""
    vec = np.asarray(vec, dtype=float)
    if len(vec) != 3 * n + int(with_time):
        raise ValueError(f"state length {len(vec)} does not match {n} UAVs")
    t = vec[3 * n] if with_time else None
    return vec[:n], vec[n:2 * n], vec[2 * n:3 * n], t


def encode_action(alpha, d) -> np.ndarray:
    return np.concatenate([np.asarray(alpha, float), np.asarray(d, float)])


def decode_action(raw, n: int, d_max: float):
    """Split and clip an action vector into directions in [0, 2pi) and distances in [0, d_max]."""
    raw = np.asarray(raw, dtype=float)
    if raw.shape != (2 * n,):
        raise ValueError(f"action length {raw.size} does not match {n} UAVs")
    if not np.all(np.isfinite(raw)):
        raise ValueError("non-finite action")
    return np.clip(raw[:n], 0.0, ANGLE_HIGH), np.clip(raw[n:], 0.0, d_max)


class UAVNetworkEnv:
    """One independent copy of the network environment.

    Steps are numbered 1..N_T; ``step`` executes the action of the current
    step, returns the next state, the reward earned in this step and the
    terminal flag.
    """

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.consts = cfg.constants
        self.n = cfg.n_uavs
        self.size = cfg.area.size
        self.unit = cfg.area.unit_length
        self.d_max = self.consts.d_max_m / self.unit
        self.n_steps = cfg.horizon.n_steps
        self.mode = cfg.mode
        self.with_time = cfg.time_in_state
        self.action_low = np.zeros(2 * self.n)
        self.action_high = np.concatenate([np.full(self.n, ANGLE_HIGH), np.full(self.n, self.d_max)])
        self._takeoff = {e.uav_index: e for e in cfg.join_events()}
        self._snapshots: dict[int, np.ndarray] = {}
        self.t = 1
        self.done = True
        self.fleet: FleetState | None = None
        self.ledger: BatteryLedger | None = None
        self.last_assoc: AssociationMap | None = None

    @property
    def state_dim(self) -> int:
        return 3 * self.n + int(self.with_time)

    @property
    def action_dim(self) -> int:
        return 2 * self.n

    @property
    def n_users(self) -> int:
        return self.cfg.users.count

    def state_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-component domain bounds used for input normalization."""
        pos_lo, pos_hi = np.zeros(2 * self.n), np.full(2 * self.n, self.size)
        if self.mode == "quit":
            lo3 = np.full(self.n, self.consts.e_thre)
            hi3 = np.maximum(self.cfg.initial_battery, self.consts.e_thre)
        else:
            lo3 = np.full(self.n, self.consts.min_altitude)
            hi3 = np.full(self.n, self.consts.altitude)
        lo, hi = np.concatenate([pos_lo, lo3]), np.concatenate([pos_hi, hi3])
        if self.with_time:
            lo, hi = np.append(lo, 1.0), np.append(hi, float(self.n_steps))
        return lo, hi

    def users_at(self, t: int) -> np.ndarray:
        seg = self.cfg.horizon.segment_of(t)
        if self.cfg.static_users:
            seg = 1
        if seg not in self._snapshots:
            self._snapshots[seg] = snapshot_at(self.cfg.users, self.cfg.area, t,
                                               self.cfg.user_seed, self.cfg.horizon)
        return self._snapshots[seg]

    def initial_fleet(self, seed: int | None = None) -> FleetState:
        pos = self.cfg.placement.positions(self.n)
        if seed is not None and self.cfg.placement.jitter > 0:
            rng = np.random.default_rng(seed)
            pos = pos + rng.uniform(-1, 1, pos.shape) * self.cfg.placement.jitter
        pos = np.clip(pos, 0.0, self.size)
        status = [ACTIVE] * self.n
        alt = np.full(self.n, self.consts.altitude)
        for i, ev in self._takeoff.items():
            pos[i] = ev.takeoff_point
            alt[i] = self.consts.min_altitude
            status[i] = PRE_TAKEOFF
        if np.any((pos < 0) | (pos > self.size)):
            raise ConfigError("initial placement outside the area")
        energy = self.cfg.initial_battery.copy()
        for i in range(self.n):
            if energy[i] <= self.consts.e_thre:
                status[i] = QUIT
        return FleetState(pos[:, 0].copy(), pos[:, 1].copy(), energy, alt, status)

    def reset(self, seed: int | None = None, fleet: FleetState | None = None) -> np.ndarray:
        self.fleet = fleet.copy() if fleet is not None else self.initial_fleet(seed)
        self.ledger = BatteryLedger(self.fleet.energy, self.consts.e_thre)
        self.t = 1
        self.done = False
        self.last_assoc = None
        return self.state()

    def state(self) -> np.ndarray:
        return encode_state(self.fleet, self.t, self.mode, self.with_time)

    def evaluate(self, fleet: FleetState, t: int, participants: np.ndarray | None = None):
        """Association and served count of ``fleet`` against the users of step ``t``."""
        if participants is None:
            participants = fleet.serving_mask()
        assoc = associate_and_allocate(self.users_at(t), fleet.positions, participants,
                                       self.consts, self.unit)
        return assoc

    def reward_from_count(self, served: int) -> float:
        if self.n_users == 0:
            return 0.0
        return (served / self.n_users) ** self.consts.beta

    def step(self, action):
        if self.done:
            raise EpisodeError("step called on a finished episode; call reset()")
        alpha, dist = decode_action(action, self.n, self.d_max)
        f = self.fleet
        t = self.t
        participants = f.serving_mask()
        h_serve = self.consts.altitude
        cancelled = np.zeros(self.n, dtype=bool)
        quits = []
        for i in range(self.n):
            st = f.status[i]
            if st == QUIT:
                continue
            if st == PRE_TAKEOFF:
                if t < self._takeoff[i].takeoff_step:
                    continue
                f.status[i] = st = ELEVATING
            if st == ELEVATING:
                f.altitude[i] = min(f.altitude[i] + self.consts.elevation_per_slot, h_serve)
            nx = f.x[i] + dist[i] * math.cos(alpha[i])
            ny = f.y[i] + dist[i] * math.sin(alpha[i])
            if st == ACTIVE and self.ledger.apply_drain(i, slot_energy(dist[i] * self.unit, self.consts)):
                quits.append(i)
            if not (0.0 <= nx <= self.size and 0.0 <= ny <= self.size):
                cancelled[i] = True
            else:
                f.x[i], f.y[i] = nx, ny
        f.energy = self.ledger.level.copy()
        assoc = self.evaluate(f, t, participants)
        served = assoc.n_served
        reward = self.reward_from_count(served)
        for i in quits:
            f.status[i] = QUIT
        for i in range(self.n):
            if f.status[i] == ELEVATING and f.altitude[i] >= h_serve:
                f.status[i] = ACTIVE
        terminal = bool(cancelled.any()) or t >= self.n_steps
        self.done = terminal
        self.t = t + 1
        self.last_assoc = assoc
        info = {"t": t, "served": served, "us_score": float(served) ** self.consts.beta,
                "cancelled": cancelled, "quits": quits, "participants": participants}
        return self.state(), reward, terminal, info


TRAJECTORY_FIELDS = ["episode", "step", "uav", "x", "y", "energy", "altitude", "status",
                     "served", "reward"]


class TrajectoryRecorder:
    """Collects one row per (episode, step, UAV) for CSV export."""

    def __init__(self):
        self.rows: list[dict] = []

    def record(self, episode: int, step: int, fleet: FleetState, served: int, reward: float):
        for i in range(len(fleet.x)):
            self.rows.append({"episode": episode, "step": step, "uav": i,
                              "x": float(fleet.x[i]), "y": float(fleet.y[i]),
                              "energy": float(fleet.energy[i]),
                              "altitude": float(fleet.altitude[i]), "status": fleet.status[i],
                              "served": served, "reward": reward})

    def write_csv(self, path: str | Path):
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=TRAJECTORY_FIELDS)
            w.writeheader()
            w.writerows(self.rows)
