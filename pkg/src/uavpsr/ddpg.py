"""DDPG agent: replay buffer, exploration noise, critic/actor updates and target tracking."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .neural import (Adam, ActorNet, CriticNet, Normalizer, load_arrays, mlp_from_arrays,
                     mlp_to_arrays, save_arrays)
from .scenario import RLConfig

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Batch:
    state: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    next_state: np.ndarray
    terminal: np.ndarray

    def __len__(self):
        return len(self.reward)


class ReplayBuffer:
    """Append-only experience store; grows instead of evicting."""

    def __init__(self, state_dim: int, action_dim: int, capacity: int = 4096):
        self.state_dim, self.action_dim = state_dim, action_dim
        self._s = np.zeros((capacity, state_dim))
        self._a = np.zeros((capacity, action_dim))
        self._r = np.zeros(capacity)
        self._s2 = np.zeros((capacity, state_dim))
        self._d = np.zeros(capacity, dtype=bool)
        self.size = 0

    def __len__(self):
        return self.size

    def _grow(self, need):
        cap = len(self._r)
        if need <= cap:
            return
        while cap < need:
            cap *= 2
        for name in ("_s", "_a", "_r", "_s2", "_d"):
            old = getattr(self, name)
            new = np.zeros((cap,) + old.shape[1:], dtype=old.dtype)
            new[:self.size] = old[:self.size]
            setattr(self, name, new)

    def add(self, state, action, reward, next_state, terminal):
        self._grow(self.size + 1)
        k = self.size
        self._s[k], self._a[k], self._r[k] = state, action, reward
        self._s2[k], self._d[k] = next_state, terminal
        self.size += 1

    def extend(self, transitions):
        for tr in transitions:
            self.add(tr.state, tr.action, tr.reward, tr.next_state, tr.terminal)

    def get(self, idx) -> Batch:
        return Batch(self._s[idx], self._a[idx], self._r[idx], self._s2[idx], self._d[idx])

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        """Uniform sample without replacement."""
        if self.size < batch_size:
            raise ValueError(f"buffer holds {self.size} < {batch_size} transitions")
        return self.get(rng.choice(self.size, size=batch_size, replace=False))


class NoiseState:
    """Zero-mean Gaussian exploration noise whose variance decays geometrically per step."""

    def __init__(self, variance: float = 0.6, decay: float = 0.9995):
        self.variance0 = variance
        self.decay = decay
        self.steps = 0

    @property
    def variance(self) -> float:
        return self.variance0 * self.decay ** self.steps

    def sample(self, rng: np.random.Generator, dim: int) -> np.ndarray:
        out = rng.standard_normal(dim) * np.sqrt(self.variance)
        self.steps += 1
        return out


def explore_action(actor: ActorNet, state_norm, noise: NoiseState, rng: np.random.Generator):
    """mu(s) plus noise, perturbed in the actor's [-1, 1] output space and clipped to bounds."""
    u = actor.mlp(state_norm)
    eps = noise.sample(rng, len(u))
    return actor.scale(np.clip(u + eps, -1.0, 1.0))


def soft_update(main_params, target_params, tau: float):
    """target <- tau * main + (1 - tau) * target, in place."""
    for p, q in zip(main_params, target_params):
        if p.shape != q.shape:
            raise ValueError("soft update shape mismatch")
        q *= 1.0 - tau
        q += tau * p


class DDPGAgent:
    def __init__(self, state_low, state_high, action_low, action_high, rl: RLConfig = RLConfig(),
                 seed: int | None = 0, clip_high=None):
        rng = np.random.default_rng(seed)
        self.rl = rl
        self.normalizer = Normalizer(state_low, state_high)
        state_dim = len(self.normalizer.low)
        self.actor = ActorNet.create(state_dim, action_low, action_high, rl.actor_hidden, rng, clip_high)
        self.critic = CriticNet.create(state_dim, action_low, action_high, rl.critic_hidden, rng)
        self.actor_target = self.actor.copy()
        self.critic_target = self.critic.copy()
        self.actor_opt = Adam(self.actor.mlp.params(), rl.lr_actor, rl.l2,
                              decay_mask=self.actor.mlp.decay_mask())
        self.critic_opt = Adam(self.critic.mlp.params(), rl.lr_critic, rl.l2,
                               decay_mask=self.critic.mlp.decay_mask())
        self.n_updates = 0
        self.target_queries = 0  # rows evaluated by the target nets

    @property
    def state_dim(self) -> int:
        return len(self.normalizer.low)

    def act(self, state) -> np.ndarray:
        return self.actor(self.normalizer(state))

    def labels(self, batch: Batch) -> np.ndarray:
        y = batch.reward.astype(float).copy()
        live = ~batch.terminal
        if live.any() and self.rl.gamma != 0:
            s2 = self.normalizer(batch.next_state[live])
            self.target_queries += int(live.sum())
            q2 = self.critic_target(s2, self.actor_target(s2))
            y[live] += self.rl.gamma * q2
        return y

    def critic_update(self, batch: Batch) -> float:
        y = self.labels(batch)
        q, cache = self.critic.forward(self.normalizer(batch.state), batch.action)
        err = q - y
        grads, _, _ = self.critic.backward(cache, 2.0 * err / len(err))
        self.critic_opt.step(self.critic.mlp.params(), grads)
        return float(np.mean(err ** 2))

    def actor_gradient(self, batch: Batch):
        """Parameter gradient of -mean Q(s, mu(s)) + c * mean ||z||^2 (descent direction).

        ``z`` is the tanh head's pre-activation and ``c`` is ``rl.preact_penalty``.
        """
        s = self.normalizer(batch.state)
        a, a_cache = self.actor.forward(s)
        _, q_cache = self.critic.forward(s, a)
        _, _, da = self.critic.backward(q_cache, np.full(len(s), -1.0 / len(s)))
        pre = None
        if self.rl.preact_penalty:
            pre = 2.0 * self.rl.preact_penalty * a_cache["z"][-1] / len(s)
        grads, _ = self.actor.backward(a_cache, da, pre)
        return grads

    def actor_update(self, batch: Batch) -> float:
        grads = self.actor_gradient(batch)
        self.actor_opt.step(self.actor.mlp.params(), grads)
        return float(np.sqrt(sum(np.sum(g * g) for g in grads)))

    def soft_update(self, tau: float | None = None):
        tau = self.rl.tau if tau is None else tau
        soft_update(self.critic.mlp.params(), self.critic_target.mlp.params(), tau)
        soft_update(self.actor.mlp.params(), self.actor_target.mlp.params(), tau)

    def train_step(self, buffer: ReplayBuffer, rng: np.random.Generator):
        """sample -> critic -> actor -> targets; None while the buffer is smaller than a batch."""
        if len(buffer) < self.rl.batch_size:
            return None
        batch = buffer.sample(self.rl.batch_size, rng)
        loss = self.critic_update(batch)
        gnorm = self.actor_update(batch)
        self.soft_update()
        self.n_updates += 1
        return loss, gnorm

    def actor_params(self) -> list[np.ndarray]:
        return [p.copy() for p in self.actor.mlp.params()]

    def save(self, path: str | Path, meta: dict | None = None):
        arrays = {}
        arrays.update(mlp_to_arrays("actor", self.actor.mlp))
        arrays.update(mlp_to_arrays("critic", self.critic.mlp))
        arrays.update(mlp_to_arrays("actor_target", self.actor_target.mlp))
        arrays.update(mlp_to_arrays("critic_target", self.critic_target.mlp))
        arrays.update(policy_arrays(self.normalizer, self.actor))
        info = {"actor_acts": self.actor.mlp.activations, "critic_acts": self.critic.mlp.activations,
                "rl": {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(self.rl).items()},
                "n_updates": self.n_updates}
        info.update(meta or {})
        save_arrays(path, arrays, info)

    @classmethod
    def load(cls, path: str | Path) -> tuple[DDPGAgent, dict]:
        arrays, meta = load_arrays(path)
        rl = RLConfig(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in meta["rl"].items()})
        agent = cls(arrays["state_low"], arrays["state_high"], arrays["action_low"],
                    arrays["action_high"], rl, seed=None, clip_high=arrays["action_clip"])
        for name, acts in (("actor", meta["actor_acts"]), ("critic", meta["critic_acts"])):
            getattr(agent, name).mlp = mlp_from_arrays(name, arrays, acts)
            getattr(agent, name + "_target").mlp = mlp_from_arrays(name + "_target", arrays, acts)
        agent.actor_opt = Adam(agent.actor.mlp.params(), rl.lr_actor, rl.l2,
                               decay_mask=agent.actor.mlp.decay_mask())
        agent.critic_opt = Adam(agent.critic.mlp.params(), rl.lr_critic, rl.l2,
                                decay_mask=agent.critic.mlp.decay_mask())
        agent.n_updates = meta.get("n_updates", 0)
        return agent, meta


def policy_arrays(normalizer: Normalizer, actor: ActorNet) -> dict[str, np.ndarray]:
    return {"state_low": normalizer.low, "state_high": normalizer.high,
            "action_low": actor.low, "action_high": actor.high, "action_clip": actor.clip_high}


class ActorPolicy:
    """Greedy actor with its input normalization; a value snapshot safe to share."""

    def __init__(self, normalizer: Normalizer, actor: ActorNet, meta: dict | None = None):
        self.normalizer = normalizer
        self.actor = actor
        self.meta = meta or {}

    def __call__(self, state) -> np.ndarray:
        return self.actor(self.normalizer(state))

    @property
    def state_dim(self) -> int:
        return len(self.normalizer.low)

    def save(self, path: str | Path):
        arrays = mlp_to_arrays("actor", self.actor.mlp)
        arrays.update(policy_arrays(self.normalizer, self.actor))
        save_arrays(path, arrays, {"actor_acts": self.actor.mlp.activations, **self.meta})

    @classmethod
    def load(cls, path: str | Path) -> ActorPolicy:
        arrays, meta = load_arrays(path)
        mlp = mlp_from_arrays("actor", arrays, meta["actor_acts"])
        actor = ActorNet(mlp, arrays["action_low"], arrays["action_high"], arrays["action_clip"])
        return cls(Normalizer(arrays["state_low"], arrays["state_high"]), actor, meta)

    @classmethod
    def from_params(cls, template: ActorPolicy, params) -> ActorPolicy:
        actor = template.actor.copy()
        actor.mlp.set_params(params)
        return cls(template.normalizer, actor, template.meta)
