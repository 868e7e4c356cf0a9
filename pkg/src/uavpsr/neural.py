"""Small fully connected networks with hand-written backpropagation.

Layers compute ``act(x @ W.T + b)`` with ``W`` shaped (out, in).  Batches are
rows; a 1-D input is treated as a batch of one and returned 1-D.
"""
from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "linear":
        return z
    raise ValueError(f"unknown activation {name!r}")


def _act_grad(name, z, a):
    if name == "relu":
        return (z > 0).astype(z.dtype)
    if name == "tanh":
        return 1.0 - a * a
    return np.ones_like(z)


class MLP:
    def __init__(self, weights, biases, activations):
        self.weights = [np.asarray(w, dtype=float) for w in weights]
        self.biases = [np.asarray(b, dtype=float) for b in biases]
        self.activations = list(activations)
        for k in range(1, len(self.weights)):
            if self.weights[k].shape[1] != self.weights[k - 1].shape[0]:
                raise ValueError("layer shapes do not chain")

    @classmethod
    def create(cls, sizes, hidden_act="relu", out_act="linear", rng=None,
               final_scale: float | None = 3e-3) -> MLP:
        """Fan-in uniform init; the last layer uses +/- ``final_scale`` when given."""
        rng = rng if rng is not None else np.random.default_rng()
        ws, bs = [], []
        for k, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = k == len(sizes) - 2
            lim = final_scale if (last and final_scale) else 1.0 / np.sqrt(n_in)
            ws.append(rng.uniform(-lim, lim, (n_out, n_in)))
            bs.append(rng.uniform(-lim, lim, n_out))
        acts = [hidden_act] * (len(sizes) - 2) + [out_act]
        return cls(ws, bs, acts)

    @property
    def n_in(self) -> int:
        return self.weights[0].shape[1]

    @property
    def n_out(self) -> int:
        return self.weights[-1].shape[0]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def decay_mask(self) -> list[bool]:
        return [True, False] * len(self.weights)

    def set_params(self, params):
        for k in range(len(self.weights)):
            if params[2 * k].shape != self.weights[k].shape or params[2 * k + 1].shape != self.biases[k].shape:
                raise ValueError("parameter shapes do not match")
            self.weights[k] = np.array(params[2 * k], dtype=float)
            self.biases[k] = np.array(params[2 * k + 1], dtype=float)

    def copy(self) -> MLP:
        return MLP([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.activations)

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        a = x[None, :] if single else x
        if a.shape[1] != self.n_in:
            raise ValueError(f"input width {a.shape[1]} != {self.n_in}")
        if not np.all(np.isfinite(a)):
            raise ValueError("non-finite network input")
        cache = {"single": single, "inputs": [], "z": [], "a": []}
        for w, b, name in zip(self.weights, self.biases, self.activations):
            cache["inputs"].append(a)
            z = a @ w.T + b
            a = _act(name, z)
            cache["z"].append(z)
            cache["a"].append(a)
        return (a[0] if single else a), cache

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, upstream, pre_upstream=None):
        """Gradients of ``sum(upstream * output) + sum(pre_upstream * z_out)``.

        ``z_out`` is the last layer's pre-activation.  Returns (param grads in
        ``params()`` order, input grad).
        """
        g = np.asarray(upstream, dtype=float)
        if cache["single"]:
            g = g[None, :]
        if g.shape != cache["a"][-1].shape:
            raise ValueError("upstream gradient shape mismatch")
        grads = [None] * (2 * len(self.weights))
        last = len(self.weights) - 1
        for k in reversed(range(len(self.weights))):
            g = g * _act_grad(self.activations[k], cache["z"][k], cache["a"][k])
            if k == last and pre_upstream is not None:
                g = g + np.asarray(pre_upstream, dtype=float).reshape(g.shape)
            grads[2 * k] = g.T @ cache["inputs"][k]
            grads[2 * k + 1] = g.sum(axis=0)
            g = g @ self.weights[k]
        return grads, (g[0] if cache["single"] else g)


class Normalizer:
    """Affine map of each component from [low, high] onto [-1, 1]."""

    def __init__(self, low, high):
        self.low = np.asarray(low, dtype=float)
        self.high = np.asarray(high, dtype=float)
        span = self.high - self.low
        self._flat = span == 0
        self._span = np.where(self._flat, 1.0, span)

    def __call__(self, x):
        out = 2.0 * (np.asarray(x, dtype=float) - self.low) / self._span - 1.0
        return np.where(self._flat, 0.0, out)

    def inverse(self, z):
        z = np.asarray(z, dtype=float)
        return np.where(self._flat, self.low, self.low + (z + 1.0) * self._span / 2.0)


def normalize(x, low, high):
    return Normalizer(low, high)(x)


class ActorNet:
    """Policy network: ReLU hidden layers, tanh head scaled onto [low, high] per channel."""

    def __init__(self, mlp: MLP, action_low, action_high, clip_high=None):
        self.mlp = mlp
        self.low = np.asarray(action_low, dtype=float)
        self.high = np.asarray(action_high, dtype=float)
        self.clip_high = self.high if clip_high is None else np.asarray(clip_high, dtype=float)

    @classmethod
    def create(cls, state_dim, action_low, action_high, hidden=(400, 300), rng=None, clip_high=None):
        mlp = MLP.create([state_dim, *hidden, len(action_low)], "relu", "tanh", rng)
        return cls(mlp, action_low, action_high, clip_high)

    def scale(self, u):
        return np.minimum(self.low + (u + 1.0) * (self.high - self.low) / 2.0, self.clip_high)

    def unscale(self, a):
        return 2.0 * (np.asarray(a) - self.low) / (self.high - self.low) - 1.0

    def forward(self, s):
        u, cache = self.mlp.forward(s)
        return self.scale(u), cache

    def __call__(self, s):
        return self.forward(s)[0]

    def backward(self, cache, grad_action, grad_preact=None):
        return self.mlp.backward(cache, np.asarray(grad_action) * (self.high - self.low) / 2.0,
                                 grad_preact)

    def copy(self) -> ActorNet:
        return ActorNet(self.mlp.copy(), self.low, self.high, self.clip_high)


class CriticNet:
    """Q network over the concatenated (normalized state, normalized action) input."""

    def __init__(self, mlp: MLP, state_dim, action_low, action_high):
        self.mlp = mlp
        self.state_dim = state_dim
        self.low = np.asarray(action_low, dtype=float)
        self.high = np.asarray(action_high, dtype=float)

    @classmethod
    def create(cls, state_dim, action_low, action_high, hidden=(400, 300), rng=None):
        mlp = MLP.create([state_dim + len(action_low), *hidden, 1], "relu", "linear", rng)
        return cls(mlp, state_dim, action_low, action_high)

    def _input(self, s, a):
        a_norm = 2.0 * (np.asarray(a, float) - self.low) / (self.high - self.low) - 1.0
        return np.concatenate([np.asarray(s, float), a_norm], axis=-1)

    def forward(self, s, a):
        q, cache = self.mlp.forward(self._input(s, a))
        return q[..., 0], cache

    def __call__(self, s, a):
        return self.forward(s, a)[0]

    def backward(self, cache, grad_q):
        """Returns (param grads, dQ/dstate, dQ/daction)."""
        g = np.asarray(grad_q, dtype=float)[..., None]
        grads, dx = self.mlp.backward(cache, g)
        ds = dx[..., :self.state_dim]
        da = dx[..., self.state_dim:] * 2.0 / (self.high - self.low)
        return grads, ds, da

    def copy(self) -> CriticNet:
        return CriticNet(self.mlp.copy(), self.state_dim, self.low, self.high)


class Adam:
    """Adam with an L2 penalty ``l2 * w`` added to the gradient of decayed parameters."""

    def __init__(self, params, lr=1e-4, l2=1e-4, beta1=0.9, beta2=0.999, eps=1e-8, decay_mask=None):
        self.lr, self.l2, self.beta1, self.beta2, self.eps = lr, l2, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.decay_mask = list(decay_mask) if decay_mask is not None else [True] * len(params)
        self.t = 0
        self.skipped = 0

    def step(self, params, grads) -> bool:
        """Update ``params`` in place; non-finite gradients skip the step and return False."""
        if not all(np.all(np.isfinite(g)) for g in grads):
            self.skipped += 1
            log.warning("skipping optimizer step with non-finite gradients (%d so far)", self.skipped)
            return False
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for p, g, m, v, decay in zip(params, grads, self.m, self.v, self.decay_mask):
            if decay and self.l2:
                g = g + self.l2 * p
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return True

    def state_arrays(self) -> list[np.ndarray]:
        return self.m + self.v


def optimizer_step(net: MLP, grads, opt: Adam) -> bool:
    return opt.step(net.params(), grads)


def numerical_gradient(fun, array: np.ndarray, eps: float = 1e-5, order: int = 2) -> np.ndarray:
    """Central differences of scalar ``fun()`` w.r.t. every entry of ``array`` (perturbed in place).

    ``order=2`` is the 2-point stencil, ``order=4`` the 4-point stencil with
    O(eps^4) truncation error.
    """
    if order not in (2, 4):
        raise ValueError("order must be 2 or 4")
    grad = np.zeros_like(array)
    flat, gflat = array.reshape(-1), grad.reshape(-1)

    def at(k, x):
        flat[k] = x
        return fun()

    for k in range(flat.size):
        old = flat[k]
        if order == 2:
            gflat[k] = (at(k, old + eps) - at(k, old - eps)) / (2 * eps)
        else:
            gflat[k] = (8 * (at(k, old + eps) - at(k, old - eps))
                        - (at(k, old + 2 * eps) - at(k, old - 2 * eps))) / (12 * eps)
        flat[k] = old
    return grad


def relative_error(a, b, floor: float = 1e-6) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def save_arrays(path: str | Path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    """Versioned ``.npz`` checkpoint: named float64 arrays plus JSON metadata."""
    payload = {k: np.asarray(v) for k, v in arrays.items()}
    payload["__meta__"] = np.array(json.dumps({"version": CHECKPOINT_VERSION, **meta}))
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_arrays(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        arrays = {k: data[k].copy() for k in data.files if k != "__meta__"}
    return arrays, meta


def mlp_to_arrays(prefix: str, net: MLP) -> dict[str, np.ndarray]:
    return {f"{prefix}.{k}": p for k, p in enumerate(net.params())}


def mlp_from_arrays(prefix: str, arrays: dict[str, np.ndarray], activations) -> MLP:
    n = len(activations)
    ps = [arrays[f"{prefix}.{k}"] for k in range(2 * n)]
    return MLP(ps[0::2], ps[1::2], activations)
