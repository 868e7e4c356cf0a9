"""Scenario description: the static world and the scripted dynamics.

Horizontal positions are expressed in area units (``AreaSpec.unit_length``
meters each); altitudes, distances fed to the radio model and flight
distances are in meters.  Everything here is a pure function of the
configuration and a seed.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np


class ConfigError(ValueError):
    """Raised for malformed or inconsistent scenario configuration."""


@dataclass(frozen=True)
class AreaSpec:
    side_length: float = 1000.0  # meters
    unit_length: float = 100.0  # meters per area unit

    def __post_init__(self):
        if self.side_length <= 0 or self.unit_length <= 0:
            raise ConfigError("area side and unit length must be positive")

    @property
    def size(self) -> float:
        """Side length in area units."""
        return self.side_length / self.unit_length


@dataclass(frozen=True)
class PhysicalConstants:
    altitude: float = 300.0  # serving altitude H, m
    min_altitude: float = 0.0  # charging point altitude H_min, m
    aperture_deg: float = 60.0
    level_speed_kmh: float = 40.0
    elevation_speed_kmh: float = 14.4
    mass: float = 4.0
    gravity: float = 9.8
    air_density: float = 1.225
    rotor_area: float = 0.18
    carrier_hz: float = 2e9
    bandwidth_hz: float = 4.5e6
    rb_hz: float = 180e3
    tx_psd_dbm: float = -49.5  # per Hz
    noise_psd_dbm: float = -174.0  # per Hz
    rate_bps: float = 250e3
    eta_db: float = 1.0
    slot_s: float = 10.0
    flight_s: float = 9.0
    d_max_m: float = 100.0
    beta: float = 2.0
    e_thre: float = 150.0  # unit*s
    # None means "hover power from the rotor model", i.e. 9.428 W for the defaults
    power_unit: float | None = None
    e_tx: float = 0.0  # unit*s per slot
    c_op: float = 0.0  # power units drawn by operations
    # 20 reproduces G = 10^(-PL/20) literally; 10 is the usual power-ratio convention
    gain_divisor: float = 20.0

    def __post_init__(self):
        positive = ("altitude", "aperture_deg", "level_speed_kmh", "elevation_speed_kmh",
                    "mass", "gravity", "air_density", "rotor_area", "carrier_hz",
                    "bandwidth_hz", "rb_hz", "rate_bps", "slot_s", "flight_s",
                    "d_max_m", "beta", "gain_divisor")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not 0 < self.aperture_deg < 180:
            raise ConfigError("aperture must lie in (0, 180) degrees")
        if self.flight_s > self.slot_s:
            raise ConfigError("flight time cannot exceed the slot duration")
        if self.d_max_m > self.level_speed * self.flight_s + 1e-9:
            raise ConfigError("d_max is not reachable within the flight time")
        if not self.min_altitude < self.altitude:
            raise ConfigError("charging altitude must lie below the serving altitude")

    @property
    def level_speed(self) -> float:
        """Level flight speed in m/s."""
        return self.level_speed_kmh / 3.6

    @property
    def elevation_per_slot(self) -> float:
        """Climb per time slot in meters (40 m for the defaults)."""
        return self.elevation_speed_kmh / 3.6 * self.slot_s

    @property
    def weight(self) -> float:
        return self.mass * self.gravity

    @property
    def aperture(self) -> float:
        return math.radians(self.aperture_deg)

    @property
    def n_rb(self) -> int:
        return int(round(self.bandwidth_hz / self.rb_hz))


@dataclass(frozen=True)
class HotspotTrace:
    """Piecewise-constant path of one hotspot center.

    ``waypoints`` holds ``(segment, (x, y))`` pairs with 1-based segment
    indices; the center moves to the given point at the start of that segment
    and stays there until the next waypoint.
    """

    start: tuple[float, float]
    waypoints: tuple[tuple[int, tuple[float, float]], ...] = ()
    spread: float = 0.7
    weight: float = 1.0

    def center_at_segment(self, segment: int) -> tuple[float, float]:
        center = self.start
        for seg, point in sorted(self.waypoints, key=lambda w: w[0]):
            if seg <= segment:
                center = point
        return (float(center[0]), float(center[1]))


def _corner_hotspots() -> tuple[HotspotTrace, ...]:
    return tuple(HotspotTrace(start=p) for p in ((1.0, 1.0), (9.0, 1.0), (1.0, 9.0), (9.0, 9.0)))


@dataclass(frozen=True)
class UserDistributionSpec:
    count: int = 100
    hotspot_fraction: float = 0.8
    hotspots: tuple[HotspotTrace, ...] = field(default_factory=_corner_hotspots)
    uniform_remainder: bool = True

    def __post_init__(self):
        if self.count < 0:
            raise ConfigError("user count must be nonnegative")
        if not 0.0 <= self.hotspot_fraction <= 1.0:
            raise ConfigError("hotspot_fraction must lie in [0, 1]")
        if self.hotspot_fraction > 0 and not self.hotspots:
            raise ConfigError("hotspot_fraction > 0 but no hotspots configured")

    def hotspot_counts(self) -> list[int]:
        """Users attached to each hotspot (largest-remainder split by weight)."""
        if not self.hotspots:
            return []
        n_hot = int(round(self.hotspot_fraction * self.count))
        if not self.uniform_remainder:
            n_hot = self.count
        w = np.array([h.weight for h in self.hotspots], dtype=float)
        if np.any(w < 0) or w.sum() <= 0:
            raise ConfigError("hotspot weights must be nonnegative with a positive sum")
        raw = n_hot * w / w.sum()
        counts = np.floor(raw).astype(int)
        short = n_hot - counts.sum()
        for k in np.argsort(-(raw - counts), kind="stable")[:short]:
            counts[k] += 1
        return counts.tolist()


@dataclass(frozen=True)
class LineupEvent:
    kind: str  # "quit" or "join"
    uav_index: int
    takeoff_step: int | None = None
    takeoff_point: tuple[float, float] | None = None

    def __post_init__(self):
        if self.kind not in ("quit", "join"):
            raise ConfigError(f"unknown lineup event kind {self.kind!r}")
        if self.kind == "join" and (self.takeoff_step is None or self.takeoff_point is None):
            raise ConfigError("a join event needs takeoff_step and takeoff_point")


@dataclass(frozen=True)
class Placement:
    kind: str = "circle"  # "circle" or "points"
    center: tuple[float, float] = (5.0, 5.0)
    radius: float = 1.0
    points: tuple[tuple[float, float], ...] = ()
    jitter: float = 0.0  # uniform +/- jitter (units) applied on seeded resets

    def positions(self, n: int) -> np.ndarray:
        if self.kind == "circle":
            ang = 2 * np.pi * np.arange(n) / max(n, 1)
            return np.column_stack([self.center[0] + self.radius * np.cos(ang),
                                    self.center[1] + self.radius * np.sin(ang)])
        if self.kind == "points":
            pts = np.asarray(self.points, dtype=float).reshape(-1, 2)
            if len(pts) != n:
                raise ConfigError(f"placement lists {len(pts)} points for {n} UAVs")
            return pts.copy()
        raise ConfigError(f"unknown placement kind {self.kind!r}")


@dataclass(frozen=True)
class Horizon:
    n_steps: int = 100
    segments: int = 10

    def __post_init__(self):
        if self.n_steps < 1 or self.segments < 1 or self.segments > self.n_steps:
            raise ConfigError("need 1 <= segments <= n_steps")

    def segment_of(self, t: int) -> int:
        """1-based segment containing step ``t``."""
        if not 1 <= t <= self.n_steps:
            raise ConfigError(f"step {t} outside 1..{self.n_steps}")
        return (t - 1) * self.segments // self.n_steps + 1


@dataclass(frozen=True)
class RLConfig:
    actor_hidden: tuple[int, ...] = (400, 300)
    critic_hidden: tuple[int, ...] = (400, 300)
    lr_actor: float = 1e-4
    lr_critic: float = 1e-4
    l2: float = 1e-4
    preact_penalty: float = 0.0  # c in c * mean ||z||^2 on the actor's tanh pre-activations
    gamma: float = 0.9
    tau: float = 0.001
    batch_size: int = 512
    noise_var: float = 0.6
    noise_decay: float = 0.9995
    workers: int = 4
    episodes: int = 2500  # per worker
    updates_per_step: float = 1.0
    continuous: bool = False
    checkpoint_keep: int = 5
    smooth_window: int = 100
    ordered: bool = False  # host handles uploads in round-robin worker order (reproducible with K > 1)
    eval_every: int = 0  # greedy rollout of the current actor every this many episodes; 0 = off


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "reference"
    area: AreaSpec = field(default_factory=AreaSpec)
    constants: PhysicalConstants = field(default_factory=PhysicalConstants)
    users: UserDistributionSpec = field(default_factory=UserDistributionSpec)
    user_seed: int = 0
    n_uavs: int = 5
    placement: Placement = field(default_factory=Placement)
    battery: tuple[float, ...] = ()  # E_0 per UAV (unit*s); empty -> 1500 each
    events: tuple[LineupEvent, ...] = ()
    horizon: Horizon = field(default_factory=Horizon)
    mode: str = "quit"  # which per-UAV scalar enters the state: "quit" -> E, "join" -> H
    time_in_state: bool = False
    rl: RLConfig = field(default_factory=RLConfig)

    def __post_init__(self):
        if self.n_uavs < 1:
            raise ConfigError("need at least one UAV")
        if self.mode not in ("quit", "join"):
            raise ConfigError(f"unknown state mode {self.mode!r}")
        if self.battery and len(self.battery) != self.n_uavs:
            raise ConfigError("battery list length must equal n_uavs")
        for ev in self.events:
            if not 0 <= ev.uav_index < self.n_uavs:
                raise ConfigError(f"event refers to UAV {ev.uav_index}")
            if ev.kind == "join" and not 1 <= ev.takeoff_step <= self.horizon.n_steps:
                raise ConfigError("join takeoff step outside the horizon")
        size = self.area.size
        for h in self.users.hotspots:
            pts = [h.start] + [p for _, p in h.waypoints]
            if any(not (0 <= x <= size and 0 <= y <= size) for x, y in pts):
                raise ConfigError("hotspot centers must lie inside the area")

    @property
    def initial_battery(self) -> np.ndarray:
        if self.battery:
            return np.asarray(self.battery, dtype=float)
        return np.full(self.n_uavs, 1500.0)

    @property
    def static_users(self) -> bool:
        return all(not h.waypoints for h in self.users.hotspots)

    def join_events(self) -> list[LineupEvent]:
        return [e for e in self.events if e.kind == "join"]

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ScenarioConfig:
        try:
            return _build(cls, data)
        except (TypeError, KeyError) as exc:
            raise ConfigError(f"malformed scenario: {exc}") from exc

    def with_overrides(self, **kw) -> ScenarioConfig:
        return replace(self, **kw)


_NESTED = {
    "area": AreaSpec, "constants": PhysicalConstants, "users": UserDistributionSpec,
    "placement": Placement, "horizon": Horizon, "rl": RLConfig,
}


def _tuplify(value):
    if isinstance(value, list):
        return tuple(_tuplify(v) for v in value)
    return value


def _build(cls, data: dict[str, Any]):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys for {cls.__name__}: {sorted(unknown)}")
    kw = {}
    for key, value in data.items():
        if cls is ScenarioConfig and key in _NESTED:
            kw[key] = _build(_NESTED[key], value)
        elif cls is ScenarioConfig and key == "events":
            kw[key] = tuple(_build(LineupEvent, e) for e in value)
        elif cls is UserDistributionSpec and key == "hotspots":
            kw[key] = tuple(_build(HotspotTrace, h) for h in value)
        else:
            kw[key] = _tuplify(value)
    return cls(**kw)


def load_scenario(path: str | Path) -> ScenarioConfig:
    """Load a JSON scenario file; bare names resolve to the bundled scenarios."""
    p = Path(path)
    if not p.exists():
        bundled = Path(__file__).parent / "scenarios" / f"{p.stem}.json"
        if not bundled.exists():
            raise ConfigError(f"no scenario file {path}")
        p = bundled
    return ScenarioConfig.from_dict(json.loads(p.read_text()))


def save_scenario(cfg: ScenarioConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2))


def disperse_gather_traces(size: float = 10.0, corner_inset: float = 1.0,
                           stop_distance: float = 1.0,
                           order: Sequence[int] = (1, 2, 3, 4, 4, 4, 4, 3, 2, 1),
                           spread: float = 0.7) -> tuple[HotspotTrace, ...]:
    """Four corner hotspots that gather toward the middle and disperse again.

    Snapshot ``k`` of ``K`` places each center on the straight line from its
    corner to the point ``stop_distance`` away from the area center, a
    fraction ``(k - 1) / (K - 1)`` of the way along; ``order`` lists the
    snapshot used by each segment.
    """
    n_snap = max(order)
    mid = size / 2
    traces = []
    for sx, sy in ((-1, -1), (1, -1), (-1, 1), (1, 1)):
        corner = np.array([mid + sx * (mid - corner_inset), mid + sy * (mid - corner_inset)])
        stop = np.array([mid, mid]) + stop_distance * np.array([sx, sy]) / math.sqrt(2)
        snaps = [corner + (k / max(n_snap - 1, 1)) * (stop - corner) for k in range(n_snap)]
        waypoints = tuple((seg, (float(snaps[k - 1][0]), float(snaps[k - 1][1])))
                          for seg, k in enumerate(order, start=1))
        traces.append(HotspotTrace(start=(float(corner[0]), float(corner[1])),
                                   waypoints=waypoints, spread=spread))
    return tuple(traces)


def hotspot_center_at(trace: HotspotTrace, t: int, horizon: Horizon) -> np.ndarray:
    return np.array(trace.center_at_segment(horizon.segment_of(t)))


def generate_population(spec: UserDistributionSpec, area: AreaSpec,
                        seed: int) -> tuple[np.ndarray, np.ndarray]:
    """User positions at the traces' start points, plus hotspot labels (-1 = uniform)."""
    rng = np.random.default_rng(seed)
    size = area.size
    pos, labels = [], []
    for k, (trace, n) in enumerate(zip(spec.hotspots, spec.hotspot_counts())):
        pts = _truncated_scatter(rng, np.asarray(trace.start, float), trace.spread, n, size)
        pos.append(pts)
        labels.append(np.full(n, k))
    n_uniform = spec.count - sum(len(p) for p in pos)
    pos.append(rng.uniform(0.0, size, size=(n_uniform, 2)))
    labels.append(np.full(n_uniform, -1))
    return np.concatenate(pos), np.concatenate(labels)


def _truncated_scatter(rng, center, spread, n, size):
    out = center + spread * rng.standard_normal((n, 2))
    for _ in range(1000):
        bad = np.any((out < 0) | (out > size), axis=1)
        if not bad.any():
            return out
        out[bad] = center + spread * rng.standard_normal((bad.sum(), 2))
    return np.clip(out, 0.0, size)


def generate_users(spec: UserDistributionSpec, area: AreaSpec, seed: int) -> np.ndarray:
    return generate_population(spec, area, seed)[0]


def snapshot_at(spec: UserDistributionSpec, area: AreaSpec, t: int, seed: int,
                horizon: Horizon) -> np.ndarray:
    """User positions during step ``t``.

    Hotspot users are translated with their center at segment boundaries;
    uniform users never move.
    """
    segment = horizon.segment_of(t)
    pos, labels = generate_population(spec, area, seed)
    for k, trace in enumerate(spec.hotspots):
        shift = np.subtract(trace.center_at_segment(segment), trace.start)
        if np.any(shift):
            pos[labels == k] += shift
    return np.clip(pos, 0.0, area.size)


def scenario_snapshot(cfg: ScenarioConfig, t: int = 1) -> np.ndarray:
    return snapshot_at(cfg.users, cfg.area, t, cfg.user_seed, cfg.horizon)
