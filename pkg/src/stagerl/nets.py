"""Small MLP policy/value networks with handwritten reverse-mode gradients.

Everything runs in float64 numpy so the analytic gradients can be checked
against central finite differences to tight tolerance.  Layers cache their
forward activations; call backward immediately after the matching forward.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


def orthogonal_init(shape, gain, rng) -> np.ndarray:
    """Orthogonal weight matrix of the given (out, in) shape, scaled by gain."""
    rows, cols = shape
    n = max(rows, cols)
    a = rng.standard_normal((n, min(rows, cols)))
    q, r = np.linalg.qr(a)
    # fix the sign ambiguity so the init is deterministic given the rng draw
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return np.ascontiguousarray(gain * q[:rows, :cols])


class Linear:
    def __init__(self, in_dim: int, out_dim: int, gain: float, rng):
        self.W = orthogonal_init((out_dim, in_dim), gain, rng)
        self.b = np.zeros(out_dim)
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)
        self._x: Optional[np.ndarray] = None

    def forward(self, x):
        self._x = x
        return x @ self.W.T + self.b

    def backward(self, dy):
        self.dW += dy.T @ self._x
        self.db += dy.sum(axis=0)
        return dy @ self.W

    def params(self):
        return [self.W, self.b]

    def grads(self):
        return [self.dW, self.db]


class Tanh:
    def __init__(self):
        self._y: Optional[np.ndarray] = None

    def forward(self, x):
        self._y = np.tanh(x)
        return self._y

    def backward(self, dy):
        return dy * (1.0 - self._y * self._y)

    def params(self):
        return []

    def grads(self):
        return []


class MLP:
    """Alternating Linear/Tanh stack; the caller appends its own heads."""

    def __init__(self, in_dim, hidden: Sequence[int], rng, gain=np.sqrt(2.0)):
        self.layers = []
        d = in_dim
        for h in hidden:
            self.layers.append(Linear(d, h, gain, rng))
            self.layers.append(Tanh())
            d = h
        self.out_dim = d

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def params(self):
        return [p for l in self.layers for p in l.params()]

    def grads(self):
        return [g for l in self.layers for g in l.grads()]


@dataclass
class PolicyConfig:
    obs_dim: int
    critic_obs_dim: int
    act_dim: int = 7
    hidden: tuple = (64, 64)
    log_std_init: float = -0.5
    log_std_min: float = -5.0
    log_std_max: float = 2.0
    head_gain: float = 0.01
    value_gain: float = 1.0


class ActorNet:
    """Trunk feeding a Gaussian mean head, a grip logit head, and a shared
    state-independent log-std vector (clipped at use)."""

    def __init__(self, cfg: PolicyConfig, rng):
        self.cfg = cfg
        self.trunk = MLP(cfg.obs_dim, cfg.hidden, rng)
        self.mean_head = Linear(self.trunk.out_dim, cfg.act_dim, cfg.head_gain, rng)
        self.logit_head = Linear(self.trunk.out_dim, 1, cfg.head_gain, rng)
        self.log_std = np.full(cfg.act_dim, cfg.log_std_init)
        self.dlog_std = np.zeros_like(self.log_std)

    def forward(self, obs):
        h = self.trunk.forward(obs)
        mean = self.mean_head.forward(h)
        logit = self.logit_head.forward(h)[:, 0]
        log_std = np.clip(self.log_std, self.cfg.log_std_min, self.cfg.log_std_max)
        return mean, log_std, logit

    def backward(self, dmean, dlogit, dlog_std=None):
        if dlog_std is not None:
            # clip passes gradient only on the interior
            mask = (self.log_std > self.cfg.log_std_min) & (self.log_std < self.cfg.log_std_max)
            g = dlog_std.sum(axis=0) if dlog_std.ndim == 2 else dlog_std
            self.dlog_std += np.where(mask, g, 0.0)
        dh = self.mean_head.backward(dmean)
        dh += self.logit_head.backward(dlogit[:, None])
        return self.trunk.backward(dh)

    def params(self):
        return self.trunk.params() + self.mean_head.params() + self.logit_head.params() \
            + [self.log_std]

    def grads(self):
        return self.trunk.grads() + self.mean_head.grads() + self.logit_head.grads() \
            + [self.dlog_std]


class CriticNet:
    def __init__(self, cfg: PolicyConfig, rng):
        self.trunk = MLP(cfg.critic_obs_dim, cfg.hidden, rng)
        self.head = Linear(self.trunk.out_dim, 1, cfg.value_gain, rng)

    def forward(self, obs):
        return self.head.forward(self.trunk.forward(obs))[:, 0]

    def backward(self, dv):
        return self.trunk.backward(self.head.backward(dv[:, None]))

    def params(self):
        return self.trunk.params() + self.head.params()

    def grads(self):
        return self.trunk.grads() + self.head.grads()


class Policy:
    def __init__(self, cfg: PolicyConfig, seed=0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.actor = ActorNet(cfg, rng)
        self.critic = CriticNet(cfg, rng)

    def params(self):
        return self.actor.params() + self.critic.params()

    def grads(self):
        return self.actor.grads() + self.critic.grads()

    def zero_grads(self):
        for g in self.grads():
            g[...] = 0.0

    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params()])

    def set_flat(self, vec: np.ndarray):
        if vec.size != self.n_params():
            raise ValueError(f"expected {self.n_params()} params, got {vec.size}")
        i = 0
        for p in self.params():
            p[...] = vec[i:i + p.size].reshape(p.shape)
            i += p.size


def global_grad_norm(grads) -> float:
    total = 0.0
    for g in grads:
        total += float(np.sum(g * g))
    return float(np.sqrt(total))


def clip_grads_(grads, max_norm: float) -> float:
    """Scale grads in place so their joint norm is at most max_norm.

    Returns the pre-clip norm."""
    norm = global_grad_norm(grads)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for g in grads:
            g *= scale
    return norm


class Adam:
    def __init__(self, params, lr=3e-4, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        b1t = 1.0 - self.b1 ** self.t
        b2t = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)
