"""Greedy rollouts, the passive-reaction baseline, transition gains and a placement oracle."""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .ddpg import ActorPolicy
from .env import ACTIVE, QUIT, FleetState, TrajectoryRecorder, UAVNetworkEnv, encode_state
from .radio import served_counts_batch
from .scenario import PhysicalConstants, ScenarioConfig


class IntractableError(ValueError):
    pass


def smooth_curve(values, window: int = 100) -> np.ndarray:
    """Trailing moving average; the first ``window - 1`` points average the available prefix."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("empty series")
    if window < 1:
        raise ValueError("window must be positive")
    c = np.concatenate([[0.0], np.cumsum(v)])
    idx = np.arange(1, len(v) + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


# ---------------------------------------------------------------- controllers

Controller = Callable[[UAVNetworkEnv], np.ndarray]


def hold_still(env: UAVNetworkEnv) -> np.ndarray:
    return np.zeros(env.action_dim)


class ActorController:
    """Drive a subset of the fleet with an actor trained on a fleet of that size.

    The actor sees the selected UAVs' coordinates plus E or H (its own training
    mode).  Battery readings are shifted by the difference between the actor's
    training E_0 and this scenario's E_0, so a battery-blind actor sees the
    same drain timeline it was trained on.  Unselected UAVs get d = 0.
    """

    def __init__(self, policy: ActorPolicy, indices: Sequence[int] | None = None):
        self.policy = policy
        self.indices = None if indices is None else list(indices)

    def __call__(self, env: UAVNetworkEnv) -> np.ndarray:
        idx = list(range(env.n)) if self.indices is None else self.indices
        meta = self.policy.meta
        n_agent = meta.get("n_uavs", len(idx))
        if n_agent != len(idx) or self.policy.state_dim != 3 * len(idx) + int(meta.get("time_in_state", False)):
            raise ValueError(f"actor expects {n_agent} UAVs, got {len(idx)}")
        f = env.fleet
        energy = f.energy[idx]
        if "battery" in meta:
            energy = energy + (np.asarray(meta["battery"], float) - env.cfg.initial_battery[idx])
        sub = FleetState(f.x[idx], f.y[idx], energy, f.altitude[idx], [f.status[i] for i in idx])
        state = encode_state(sub, env.t, meta.get("mode", env.mode), meta.get("time_in_state", False))
        a = self.policy(state)
        k = len(idx)
        action = np.zeros(env.action_dim)
        action[idx] = a[:k]
        action[[env.n + i for i in idx]] = a[k:]
        return action


# ---------------------------------------------------------------- traces

@dataclass
class StepRecord:
    t: int
    fleet: FleetState  # after the step
    served: int
    score: float
    reward: float


@dataclass
class EpisodeTrace:
    scenario: str
    policy: str
    n_steps: int
    n_users: int
    beta: float
    initial: FleetState | None = None
    steps: list[StepRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.steps)

    @property
    def served(self) -> np.ndarray:
        return np.array([s.served for s in self.steps])

    @property
    def scores(self) -> np.ndarray:
        return np.array([s.score for s in self.steps])

    @property
    def rewards(self) -> np.ndarray:
        return np.array([s.reward for s in self.steps])

    def padded_scores(self) -> np.ndarray:
        """Scores over the full horizon, zero after an early termination."""
        out = np.zeros(self.n_steps)
        out[:len(self.steps)] = self.scores
        return out

    def positions(self) -> np.ndarray:
        return np.array([s.fleet.positions for s in self.steps])

    def first_status_change(self) -> int | None:
        """First step after which some UAV quit or started serving."""
        def key(fleet):
            return tuple((st == QUIT, st == ACTIVE) for st in fleet.status)

        prev = key(self.initial) if self.initial is not None else None
        for rec in self.steps:
            cur = key(rec.fleet)
            if prev is not None and cur != prev:
                return rec.t
            prev = cur
        return None

    def recorder(self, episode: int = 0) -> TrajectoryRecorder:
        rec = TrajectoryRecorder()
        for s in self.steps:
            rec.record(episode, s.t, s.fleet, s.served, s.reward)
        return rec

    def write_csv(self, path: str | Path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "served", "us_score", "reward"])
            for s in self.steps:
                w.writerow([s.t, s.served, s.score, repr(s.reward)])


def steady_state_score(trace: EpisodeTrace, tail: int = 5) -> float:
    return float(np.mean(trace.padded_scores()[-tail:]))


def run_policy(controller: Controller, cfg: ScenarioConfig, seed: int | None = None,
               fleet: FleetState | None = None, policy_id: str = "policy") -> EpisodeTrace:
    """Noise-free rollout until a terminal state (at most N_T steps)."""
    env = UAVNetworkEnv(cfg)
    env.reset(seed=seed, fleet=fleet)
    trace = EpisodeTrace(cfg.name, policy_id, env.n_steps, env.n_users, cfg.constants.beta,
                         env.fleet.copy())
    while not env.done:
        t = env.t
        _, r, _, info = env.step(controller(env))
        trace.steps.append(StepRecord(t, env.fleet.copy(), info["served"], info["us_score"], r))
    return trace


def select_checkpoint(cfg: ScenarioConfig, paths: Sequence[str | Path], by: str = "steady"
                      ) -> tuple[Path, ActorPolicy, EpisodeTrace]:
    """Greedy-roll every checkpoint on ``cfg`` and keep the best.

    ``by="steady"`` ranks by steady-state score, ties by episode reward;
    ``by="return"`` ranks by episode reward, ties by steady-state score.
    """
    if by not in ("steady", "return"):
        raise ValueError(f"unknown selection key {by!r}")
    if not paths:
        raise ValueError("no checkpoints to choose from")
    best, best_key = None, None
    for p in paths:
        policy = ActorPolicy.load(p)
        trace = run_policy(ActorController(policy), cfg, policy_id=Path(p).stem)
        key = (steady_state_score(trace), float(trace.rewards.sum()))
        if by == "return":
            key = key[::-1]
        if best_key is None or key > best_key:
            best, best_key = (Path(p), policy, trace), key
    return best


class PassiveController:
    """Reacts to a lineup change only after it has happened.

    Quit: the pre-change actor drives the fleet until a UAV is observed to
    have quit, the fleet holds for one step, then the post-change actor drives
    the remaining UAVs.  Join: every UAV holds position (the newcomer climbs
    straight up at its takeoff point); once it serves, the post-change actor
    drives everyone.
    """

    def __init__(self, cfg: ScenarioConfig, pre: ActorPolicy, post: ActorPolicy | None):
        self.joining = [e.uav_index for e in cfg.join_events()]
        self.pre = None if self.joining else ActorController(pre)
        self.post_policy = post
        self.post: ActorController | None = None

    def __call__(self, env: UAVNetworkEnv) -> np.ndarray:
        if self.post is not None:
            return self.post(env)
        status = env.fleet.status
        quit_seen = any(s == QUIT for s in status)
        joined = bool(self.joining) and all(status[i] == ACTIVE for i in self.joining)
        if quit_seen or joined:
            if self.post_policy is None:
                raise ValueError("a post-change agent is required once the lineup changes")
            live = [i for i, s in enumerate(status) if s != QUIT]
            self.post = ActorController(self.post_policy, live)
            # the quit is noticed this step; the survivors only start moving next step
            return hold_still(env) if quit_seen else self.post(env)
        return hold_still(env) if self.pre is None else self.pre(env)


def passive_baseline(cfg: ScenarioConfig, pre_agent: ActorPolicy, post_agent: ActorPolicy | None,
                     seed: int | None = None, fleet: FleetState | None = None) -> EpisodeTrace:
    if pre_agent is None:
        raise ValueError("passive baseline needs the pre-change agent")
    return run_policy(PassiveController(cfg, pre_agent, post_agent), cfg, seed, fleet, "passive")


# ---------------------------------------------------------------- transition gain

@dataclass(frozen=True)
class GainReport:
    window: tuple[int, int]
    accumulated_psr: float
    accumulated_baseline: float
    gain_pct: float
    min_served_psr: int
    min_served_baseline: int

    def as_dict(self) -> dict:
        return {"window_start": self.window[0], "window_end": self.window[1],
                "accumulated_psr": self.accumulated_psr,
                "accumulated_baseline": self.accumulated_baseline, "gain_pct": self.gain_pct,
                "min_served_psr": self.min_served_psr,
                "min_served_baseline": self.min_served_baseline}


def steady_state_count(served: np.ndarray, start: int, run: int = 3) -> int:
    """Served count at the first ``run`` equal consecutive values at or after index ``start``."""
    for k in range(start, len(served) - run + 1):
        if np.all(served[k:k + run] == served[k]):
            return int(served[k])
    return int(served[-1])


def _settle_index(served: np.ndarray, start: int, level: int) -> int:
    for k in range(start, len(served)):
        if np.all(np.abs(served[k:] - level) <= 1):
            return k
    return len(served) - 1


def detect_window(psr: EpisodeTrace, base: EpisodeTrace, tol: float = 1e-9) -> tuple[int, int]:
    """[first divergence of the fleets, first step both traces sit within 1 user of steady state]."""
    n = min(len(psr), len(base))
    if n == 0:
        raise ValueError("empty trace")
    changes = [c for c in (psr.first_status_change(), base.first_status_change()) if c is not None]
    change = min(changes) if changes else psr.steps[0].t
    ci = next((k for k in range(n) if psr.steps[k].t >= change), n - 1)
    diverge = None
    for k in range(n):
        a, b = psr.steps[k].fleet, base.steps[k].fleet
        if np.max(np.abs(a.positions - b.positions)) > tol:
            diverge = k
            break
    sp, sb = psr.served[:n], base.served[:n]
    end = max(_settle_index(sp, ci, steady_state_count(sp, ci)),
              _settle_index(sb, ci, steady_state_count(sb, ci)))
    start = min(ci, end) if diverge is None else min(diverge, end)
    return psr.steps[start].t, psr.steps[end].t


def transition_gain(psr: EpisodeTrace, base: EpisodeTrace,
                    window: tuple[int, int] | None = None) -> GainReport:
    """Accumulated US score of both traces over the window and the PSR gain in percent."""
    if window is None:
        window = detect_window(psr, base)
    a, b = window
    horizon = max(psr.n_steps, base.n_steps)
    if not 1 <= a <= b <= horizon:
        raise ValueError(f"window {window} outside the horizon 1..{horizon}")
    pa, pb = psr.padded_scores()[a - 1:b], base.padded_scores()[a - 1:b]
    acc_p, acc_b = float(pa.sum()), float(pb.sum())
    if acc_b == 0:
        gain = 0.0 if acc_p == 0 else math.inf
    else:
        gain = (acc_p - acc_b) / acc_b * 100.0

    def _min_served(tr):
        s = np.zeros(tr.n_steps, dtype=int)
        s[:len(tr)] = tr.served
        return int(s[a - 1:b].min())

    return GainReport((a, b), acc_p, acc_b, gain, _min_served(psr), _min_served(base))


# ---------------------------------------------------------------- oracle

@dataclass(frozen=True)
class PlacementResult:
    positions: np.ndarray
    served: int
    score: float
    evaluated: int


def brute_force_placement(users: np.ndarray, n_uavs: int, grid_step: float, size: float,
                          consts: PhysicalConstants = PhysicalConstants(), unit_length: float = 100.0,
                          refine: bool = True, max_evals: int = 3_000_000,
                          chunk: int = 20000) -> PlacementResult:
    """Exhaustive grid search over static placements, then local coordinate refinement.

    Grid points that cover no user are collapsed to a single idle point.
    Raises IntractableError when the enumeration would exceed ``max_evals``.
    """
    users = np.asarray(users, dtype=float).reshape(-1, 2)
    ticks = np.arange(0.0, size + 1e-9, grid_step)
    grid = np.array([(x, y) for x in ticks for y in ticks])
    r = math.tan(consts.aperture / 2) * consts.altitude / unit_length
    if len(users):
        reach = np.linalg.norm(grid[:, None, :] - users[None, :, :], axis=-1) <= r + 1e-12
        useful = reach.any(axis=1)
    else:
        useful = np.zeros(len(grid), dtype=bool)
    points = grid[useful]
    if (~useful).any():
        points = np.vstack([points, grid[~useful][:1]])
    total = math.comb(len(points) + n_uavs - 1, n_uavs)
    if total > max_evals:
        raise IntractableError(f"{total} placements on a {grid_step}-unit grid exceed {max_evals}; "
                               "use a coarser grid or fewer UAVs")
    best_count, best_pos = -1, None
    combos = itertools.combinations_with_replacement(range(len(points)), n_uavs)
    while True:
        block = np.array(list(itertools.islice(combos, chunk)), dtype=int)
        if block.size == 0:
            break
        counts = served_counts_batch(users, points[block], consts, unit_length)
        k = int(np.argmax(counts))
        if counts[k] > best_count:
            best_count, best_pos = int(counts[k]), points[block[k]].copy()
    evaluated = total
    if refine and n_uavs and len(users):
        step = grid_step / 2
        moves = np.array([(dx, dy) for dx in (-1, 0, 1) for dy in (-1, 0, 1) if dx or dy], float)
        while step >= grid_step / 8:
            improved = True
            while improved:
                improved = False
                cands = []
                for i in range(n_uavs):
                    for mv in moves:
                        c = best_pos.copy()
                        c[i] = np.clip(c[i] + step * mv, 0.0, size)
                        cands.append(c)
                cands = np.array(cands)
                counts = served_counts_batch(users, cands, consts, unit_length)
                evaluated += len(cands)
                k = int(np.argmax(counts))
                if counts[k] > best_count:
                    best_count, best_pos, improved = int(counts[k]), cands[k], True
            step /= 2
    return PlacementResult(best_pos, best_count, float(best_count) ** consts.beta, evaluated)
