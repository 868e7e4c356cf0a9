"""Asynchronous parallel training: one host owning the networks, K workers sharing its policy.

Workers run whole episodes on their own environment copy with the latest
actor parameters they received, upload the episode's transitions and block
until the host replies with a fresh parameter snapshot.  The host stores the
experience, replies, and keeps training the unified networks.
"""
from __future__ import annotations

import csv
import heapq
import logging
import queue
import threading
import traceback
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .ddpg import ActorPolicy, DDPGAgent, NoiseState, ReplayBuffer, explore_action
from .env import Transition, UAVNetworkEnv
from .evaluation import ActorController, run_policy, smooth_curve, steady_state_score
from .scenario import ScenarioConfig

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class WorkerMessage:
    worker_id: int
    episode: int
    transitions: tuple[Transition, ...] = ()
    noise_var: float = 0.0
    done: bool = False
    error: str | None = None

    @property
    def reward(self) -> float:
        return float(sum(t.reward for t in self.transitions))


@dataclass(frozen=True)
class HostReply:
    params: tuple[np.ndarray, ...]
    version: int


def _frozen(params) -> tuple[np.ndarray, ...]:
    out = []
    for p in params:
        p = p.copy()
        p.flags.writeable = False
        out.append(p)
    return tuple(out)


def rollout_episode(env: UAVNetworkEnv, policy: ActorPolicy, noise: NoiseState | None,
                    rng: np.random.Generator, reset_seed: int | None = None) -> list[Transition]:
    s = env.reset(seed=reset_seed)
    out = []
    while True:
        if noise is None:
            a = policy(s)
        else:
            a = explore_action(policy.actor, policy.normalizer(s), noise, rng)
        s2, r, term, _ = env.step(a)
        out.append(Transition(s, a, r, s2, term))
        s = s2
        if term:
            return out


def worker_loop(worker_id: int, env: UAVNetworkEnv, template: ActorPolicy, episodes: int,
                up: queue.Queue, down: queue.Queue, seed, noise_var: float = 0.6,
                noise_decay: float = 0.9995):
    """Run ``episodes`` episodes, uploading each and waiting for the parameter reply."""
    rng = np.random.default_rng(seed)
    noise = NoiseState(noise_var, noise_decay)
    try:
        reply = down.get()
        for ep in range(episodes):
            policy = ActorPolicy.from_params(template, reply.params)
            reset_seed = int(rng.integers(2 ** 31))
            transitions = rollout_episode(env, policy, noise, rng, reset_seed)
            up.put(WorkerMessage(worker_id, ep, tuple(transitions), noise.variance))
            reply = down.get()
    except Exception:  # reported to the host, which carries on without this worker
        up.put(WorkerMessage(worker_id, -1, done=True, error=traceback.format_exc()))
        return
    up.put(WorkerMessage(worker_id, episodes, done=True))


@dataclass
class TrainingResult:
    agent: DDPGAgent
    episode_rewards: list[float] = field(default_factory=list)
    episode_workers: list[int] = field(default_factory=list)
    episode_lengths: list[int] = field(default_factory=list)
    update_log: list[tuple[int, float, float, float]] = field(default_factory=list)
    checkpoints: list[tuple[float, int, str]] = field(default_factory=list)
    n_messages: int = 0
    failures: list[str] = field(default_factory=list)
    buffer_size: int = 0
    smooth_window: int = 100
    eval_log: list[tuple[int, float, float]] = field(default_factory=list)
    eval_checkpoints: list[str] = field(default_factory=list)

    @property
    def smoothed(self) -> np.ndarray:
        return smooth_curve(self.episode_rewards, self.smooth_window)

    def best_checkpoints(self) -> list[str]:
        return [p for _, _, p in sorted(self.checkpoints, reverse=True)]

    def candidates(self) -> list[str]:
        """Top-k checkpoints plus the best greedy-evaluation snapshots."""
        return self.best_checkpoints() + list(self.eval_checkpoints)


class Host:
    def __init__(self, agent: DDPGAgent, template: ActorPolicy, n_workers: int, rng,
                 updates_per_step: float = 1.0, continuous: bool = False,
                 checkpoint_dir: str | Path | None = None, keep: int = 5,
                 smooth_window: int = 100, checkpoint_metric: str = "smoothed",
                 meta: dict | None = None, ordered: bool = False,
                 eval_cfg: ScenarioConfig | None = None, eval_every: int = 0):
        self.agent = agent
        self.template = template
        self.n_workers = n_workers
        self.rng = rng
        self.updates_per_step = updates_per_step
        self.continuous = continuous
        self.checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else None
        self.keep = keep
        self.smooth_window = smooth_window
        self.checkpoint_metric = checkpoint_metric
        self.meta = meta or {}
        self.ordered = ordered
        self.eval_cfg = eval_cfg
        self.eval_every = eval_every if eval_cfg is not None else 0
        self._eval_best: dict[str, tuple[float, float]] = {}
        self.buffer = ReplayBuffer(agent.state_dim, len(agent.actor.low))
        self.version = 0
        self._sent: dict[int, tuple[np.ndarray, ...]] = {}
        self._last_var = 0.0
        self._heap: list[tuple[float, int, str]] = []

    def _reply(self, down: queue.Queue, worker_id: int):
        snap = HostReply(_frozen(self.agent.actor.mlp.params()), self.version)
        self._sent[worker_id] = snap.params
        down.put(snap)

    def _train_once(self, result: TrainingResult):
        out = self.agent.train_step(self.buffer, self.rng)
        if out is not None:
            self.version += 1
            result.update_log.append((self.agent.n_updates, out[0], out[1], self._last_var))
        return out

    def _checkpoint(self, msg: WorkerMessage, params, result: TrainingResult):
        if self.checkpoint_dir is None or self.keep <= 0:
            return
        if self.checkpoint_metric == "raw":
            score = msg.reward
        else:
            score = float(np.mean(result.episode_rewards[-self.smooth_window:]))
        idx = len(result.episode_rewards)
        if len(self._heap) >= self.keep and (score, idx) < self._heap[0][:2]:
            return
        path = self.checkpoint_dir / f"ckpt_{idx:06d}.npz"
        policy = ActorPolicy.from_params(self.template, params)
        policy.meta = {**self.meta, "episode": idx, "score": score}
        policy.save(path)
        heapq.heappush(self._heap, (score, idx, str(path)))
        if len(self._heap) > self.keep:
            _, _, old = heapq.heappop(self._heap)
            Path(old).unlink(missing_ok=True)

    def _handle(self, msg: WorkerMessage, downs, result: TrainingResult) -> bool:
        """Process one upload; returns False when the message retires a worker."""
        if msg.done:
            if msg.error:
                log.error("worker %d failed:\n%s", msg.worker_id, msg.error)
                result.failures.append(msg.error)
            return False
        self.buffer.extend(msg.transitions)
        self._last_var = msg.noise_var
        producer = self._sent[msg.worker_id]  # the actor that generated this episode
        self._reply(downs[msg.worker_id], msg.worker_id)
        result.n_messages += 1
        result.episode_rewards.append(msg.reward)
        result.episode_workers.append(msg.worker_id)
        result.episode_lengths.append(len(msg.transitions))
        smoothed = float(np.mean(result.episode_rewards[-self.smooth_window:]))
        log.info("worker %d episode %d reward %.4f smoothed %.4f",
                 msg.worker_id, msg.episode, msg.reward, smoothed)
        self._checkpoint(msg, producer, result)
        return True

    def _evaluate(self, result: TrainingResult):
        """Greedy rollout of the current actor; keeps the best snapshot per ranking key."""
        n = len(result.episode_rewards)
        if not self.eval_every or n % self.eval_every:
            return
        policy = ActorPolicy.from_params(self.template, self.agent.actor.mlp.params())
        policy.meta = {**self.meta, "episode": n}
        trace = run_policy(ActorController(policy), self.eval_cfg)
        ret, steady = float(trace.rewards.sum()), steady_state_score(trace)
        result.eval_log.append((n, ret, steady))
        for name, key in (("steady", (steady, ret)), ("return", (ret, steady))):
            if name in self._eval_best and key <= self._eval_best[name]:
                continue
            self._eval_best[name] = key
            if self.checkpoint_dir is not None:
                path = self.checkpoint_dir / f"eval_best_{name}.npz"
                policy.save(path)
                if str(path) not in result.eval_checkpoints:
                    result.eval_checkpoints.append(str(path))

    def _next_ordered(self, up: queue.Queue, turn: deque, pending: dict) -> WorkerMessage:
        k = turn[0]
        while k not in pending:
            m = up.get()
            pending[m.worker_id] = m
        turn.rotate(-1)
        return pending.pop(k)

    def run(self, up: queue.Queue, downs: list[queue.Queue]) -> TrainingResult:
        result = TrainingResult(self.agent, smooth_window=self.smooth_window)
        for k, down in enumerate(downs):
            self._reply(down, k)
        live = self.n_workers
        turn, pending = deque(range(self.n_workers)), {}
        while live:
            if self.continuous:
                try:
                    msg = up.get_nowait()
                except queue.Empty:
                    if self._train_once(result) is None:
                        try:
                            msg = up.get(timeout=0.05)
                        except queue.Empty:
                            continue
                    else:
                        continue
                if not self._handle(msg, downs, result):
                    live -= 1
                else:
                    self._evaluate(result)
                continue
            msg = self._next_ordered(up, turn, pending) if self.ordered else up.get()
            if not self._handle(msg, downs, result):
                live -= 1
                if self.ordered:
                    turn.remove(msg.worker_id)
                continue
            for _ in range(int(round(self.updates_per_step * len(msg.transitions)))):
                self._train_once(result)
            self._evaluate(result)
        result.buffer_size = len(self.buffer)
        result.checkpoints = sorted(self._heap, reverse=True)
        return result


def host_loop(host: Host, up: queue.Queue, downs: list[queue.Queue]) -> TrainingResult:
    return host.run(up, downs)


def policy_meta(cfg: ScenarioConfig) -> dict:
    return {"scenario": cfg.name, "mode": cfg.mode, "n_uavs": cfg.n_uavs,
            "time_in_state": cfg.time_in_state, "battery": cfg.initial_battery.tolist(),
            "n_steps": cfg.horizon.n_steps}


def make_agent(cfg: ScenarioConfig, seed) -> DDPGAgent:
    env = UAVNetworkEnv(cfg)
    lo, hi = env.state_bounds()
    high = env.action_high.copy()
    high[:env.n] = 2 * np.pi
    return DDPGAgent(lo, hi, env.action_low, high, cfg.rl, seed=seed, clip_high=env.action_high)


def run_training(cfg: ScenarioConfig, workers: int | None = None, episodes: int | None = None,
                 seed: int = 0, out_dir: str | Path | None = None,
                 checkpoint_metric: str = "smoothed") -> TrainingResult:
    """Train a DDPG agent on ``cfg`` with ``workers`` parallel workers of ``episodes`` each."""
    rl = cfg.rl
    workers = rl.workers if workers is None else workers
    episodes = rl.episodes if episodes is None else episodes
    cfg = replace(cfg, rl=replace(rl, workers=workers, episodes=episodes))
    seqs = np.random.SeedSequence(seed).spawn(workers + 2)
    agent = make_agent(cfg, np.random.default_rng(seqs[0]))
    meta = policy_meta(cfg)
    template = ActorPolicy(agent.normalizer, agent.actor.copy(), meta)
    out = Path(out_dir) if out_dir else None
    ckpt_dir = None
    if out is not None:
        ckpt_dir = out / "checkpoints"
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    host = Host(agent, template, workers, np.random.default_rng(seqs[1]), rl.updates_per_step,
                rl.continuous, ckpt_dir, rl.checkpoint_keep, rl.smooth_window,
                checkpoint_metric, meta, rl.ordered, cfg, rl.eval_every)
    up: queue.Queue = queue.Queue(maxsize=4 * workers)
    downs = [queue.Queue(maxsize=2) for _ in range(workers)]
    threads = [threading.Thread(target=worker_loop, daemon=True, name=f"worker-{k}",
                                args=(k, UAVNetworkEnv(cfg), template, episodes, up, downs[k],
                                      seqs[2 + k], rl.noise_var, rl.noise_decay))
               for k in range(workers)]
    for th in threads:
        th.start()
    result = host.run(up, downs)
    for th in threads:
        th.join()
    if out is not None:
        write_training_logs(result, out)
        agent.save(out / "agent_final.npz", meta)
        ActorPolicy(agent.normalizer, agent.actor.copy(), meta).save(out / "actor_final.npz")
    return result


def write_training_logs(result: TrainingResult, out: Path):
    smoothed = result.smoothed if result.episode_rewards else []
    with open(out / "episodes.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "worker", "length", "reward", "smoothed"])
        for k, (wid, n, r) in enumerate(zip(result.episode_workers, result.episode_lengths,
                                            result.episode_rewards)):
            w.writerow([k, wid, n, repr(r), repr(float(smoothed[k]))])
    with open(out / "updates.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["update", "critic_loss", "actor_grad_norm", "noise_var"])
        w.writerows(result.update_log)
    if result.eval_log:
        with open(out / "evals.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["episode", "greedy_return", "steady_state_score"])
            w.writerows((n, repr(r), repr(sc)) for n, r, sc in result.eval_log)
