"""Policy-gradient training stack: PPO with handwritten gradients plus
teacher-to-student distillation.

All randomness flows through explicitly seeded generators so that two runs
with the same seed produce bitwise-identical learning curves.  The policy
head is a diagonal Gaussian over the continuous command plus an independent
Bernoulli for the gripper bit; both log-probabilities go through the single
``log_prob`` below so sampling and update paths cannot drift apart.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from .nets import Adam, Policy, clip_grads_, global_grad_norm

LOG_2PI = float(np.log(2.0 * np.pi))


class NonFiniteGradError(RuntimeError):
    pass


def softplus(x):
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)


def sigmoid(x):
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def log_prob(mean, log_std, logit, act, bit):
    """Joint log-density of a continuous action and a gripper bit."""
    z = (act - mean) / np.exp(log_std)
    lp = -0.5 * np.sum(z * z, axis=1) - np.sum(log_std) \
        - 0.5 * mean.shape[1] * LOG_2PI
    lp_bit = bit * logit - softplus(logit)
    return lp + lp_bit


def sample_actions(mean, log_std, logit, rng):
    std = np.exp(log_std)
    act = mean + std * rng.standard_normal(mean.shape)
    p = sigmoid(logit)
    bit = (rng.random(logit.shape) < p).astype(float)
    return act, bit, log_prob(mean, log_std, logit, act, bit)


def dist_entropy(log_std, logit):
    """Per-row entropy of the joint action distribution."""
    h_gauss = np.sum(log_std) + 0.5 * log_std.size * (1.0 + LOG_2PI)
    p = sigmoid(logit)
    h_bit = softplus(logit) - logit * p
    return h_gauss + h_bit


def gaussian_kl(mean_p, log_std_p, mean_q, log_std_q):
    """KL(p || q) for diagonal Gaussians, summed over the last axis."""
    var_p = np.exp(2.0 * log_std_p)
    var_q = np.exp(2.0 * log_std_q)
    d = mean_p - mean_q
    return np.sum(log_std_q - log_std_p + (var_p + d * d) / (2.0 * var_q) - 0.5,
                  axis=-1)


def bernoulli_kl(logit_p, logit_q):
    p = sigmoid(logit_p)
    log_p1, log_p0 = -softplus(-logit_p), -softplus(logit_p)
    log_q1, log_q0 = -softplus(-logit_q), -softplus(logit_q)
    return p * (log_p1 - log_q1) + (1.0 - p) * (log_p0 - log_q0)


def compute_gae(rewards, values, dones, last_values, gamma, lam):
    """Generalized advantage estimates over (T, rows) arrays.

    ``dones[t]`` marks rows whose episode ended at step t; the value beyond
    a boundary is masked out, including the bootstrap column."""
    T = rewards.shape[0]
    adv = np.zeros_like(rewards)
    gae = np.zeros(rewards.shape[1])
    for t in range(T - 1, -1, -1):
        next_v = last_values if t == T - 1 else values[t + 1]
        nonterm = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_v * nonterm - values[t]
        gae = delta + gamma * lam * nonterm * gae
        adv[t] = gae
    return adv, adv + values


class ValueNormalizer:
    """Debiased EMA of return mean/variance; the critic regresses in the
    normalized space while the world keeps its raw reward scale."""

    def __init__(self, beta=0.995):
        self.beta = beta
        self._m = 0.0
        self._q = 0.0
        self._w = 0.0

    def update(self, x):
        b = self.beta
        self._m = b * self._m + (1.0 - b) * float(np.mean(x))
        self._q = b * self._q + (1.0 - b) * float(np.mean(x * x))
        self._w = b * self._w + (1.0 - b)

    @property
    def ready(self) -> bool:
        return self._w > 0.0

    def _stats(self):
        mean = self._m / self._w
        var = max(self._q / self._w - mean * mean, 1e-8)
        return mean, np.sqrt(var)

    def normalize(self, x):
        if not self.ready:
            return x
        mean, std = self._stats()
        return (x - mean) / std

    def denormalize(self, x):
        if not self.ready:
            return x
        mean, std = self._stats()
        return x * std + mean


@dataclass
class TrainConfig:
    iterations: int = 300
    n_envs: int = 64
    horizon: int = 64
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    lr: float = 3e-4
    epochs: int = 4
    minibatches: int = 4
    ent_coef: float = 0.005
    # the open/close bit gets its own entropy weight: the continuous head
    # needs to anneal toward precision while the bit must keep exploring
    # until grasping pays, and one shared coefficient cannot do both
    ent_coef_bit: Optional[float] = None
    vf_coef: float = 0.5
    max_grad_norm: float = 0.5
    adv_norm: bool = True
    value_norm_beta: float = 0.995
    seed: int = 0


@dataclass
class RolloutBatch:
    obs: np.ndarray
    critic_obs: np.ndarray
    act: np.ndarray
    bit: np.ndarray
    logp: np.ndarray
    adv: np.ndarray
    returns: np.ndarray

    def __len__(self):
        return self.obs.shape[0]


class VecRunner:
    """Steps a list of identical envs in lockstep and assembles batches."""

    def __init__(self, envs):
        self.envs = list(envs)
        self.n_agents = self.envs[0].n_agents
        self.obs = np.stack([e.reset() for e in self.envs])

    def collect(self, policy: Policy, horizon: int, rng, vnorm: ValueNormalizer):
        N, nag = len(self.envs), self.n_agents
        rows = N * nag
        do = self.envs[0].obs_dim
        dc = self.envs[0].critic_obs_dim
        adim = policy.cfg.act_dim

        obs_buf = np.empty((horizon, rows, do))
        cobs_buf = np.empty((horizon, rows, dc))
        act_buf = np.empty((horizon, rows, adim))
        bit_buf = np.empty((horizon, rows))
        logp_buf = np.empty((horizon, rows))
        val_buf = np.empty((horizon, rows))
        rew_buf = np.empty((horizon, rows))
        done_buf = np.zeros((horizon, rows))
        ep_infos = []

        for t in range(horizon):
            flat_obs = self.obs.reshape(rows, do)
            cobs = np.concatenate(
                [e.critic_obs(self.obs[k]) for k, e in enumerate(self.envs)])
            mean, log_std, logit = policy.actor.forward(flat_obs)
            act, bit, logp = sample_actions(mean, log_std, logit, rng)
            values = vnorm.denormalize(policy.critic.forward(cobs))

            obs_buf[t] = flat_obs
            cobs_buf[t] = cobs
            act_buf[t] = act
            bit_buf[t] = bit
            logp_buf[t] = logp
            val_buf[t] = values

            p = sigmoid(logit)
            actions = np.concatenate(
                [act, bit[:, None], p[:, None]], axis=1).reshape(N, nag, adim + 2)
            for k, env in enumerate(self.envs):
                nobs, rew, done, info = env.step(actions[k])
                self.obs[k] = nobs
                r0, r1 = k * nag, (k + 1) * nag
                rew_buf[t, r0:r1] = rew
                if done:
                    done_buf[t, r0:r1] = 1.0
                    rec = dict(info["episode"])
                    rec["env"] = k
                    ep_infos.append(rec)

        flat_obs = self.obs.reshape(rows, do)
        cobs = np.concatenate(
            [e.critic_obs(self.obs[k]) for k, e in enumerate(self.envs)])
        last_values = vnorm.denormalize(policy.critic.forward(cobs))
        return (obs_buf, cobs_buf, act_buf, bit_buf, logp_buf, val_buf,
                rew_buf, done_buf, last_values), ep_infos


def ppo_update(policy: Policy, opt: Adam, batch: RolloutBatch, cfg: TrainConfig,
               rng) -> dict:
    M = len(batch)
    adv = batch.adv
    if cfg.adv_norm:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)

    stats = {"pg_loss": 0.0, "v_loss": 0.0, "entropy": 0.0, "approx_kl": 0.0,
             "clip_frac": 0.0, "grad_norm": 0.0}
    n_updates = 0
    mb_size = M // cfg.minibatches
    for _ in range(cfg.epochs):
        perm = rng.permutation(M)
        for start in range(0, mb_size * cfg.minibatches, mb_size):
            idx = perm[start:start + mb_size]
            m = len(idx)
            mean, log_std, logit = policy.actor.forward(batch.obs[idx])
            lp = log_prob(mean, log_std, logit, batch.act[idx], batch.bit[idx])
            ratio = np.exp(lp - batch.logp[idx])
            a = adv[idx]
            s1 = ratio * a
            s2 = np.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * a
            pg_loss = -np.mean(np.minimum(s1, s2))

            # gradient flows through the ratio only where the unclipped
            # branch is the active minimum
            live = (s1 <= s2).astype(float)
            dlp = -(live * a * ratio) / m

            std2 = np.exp(2.0 * log_std)
            z = batch.act[idx] - mean
            dmean = dlp[:, None] * z / std2
            dlog_std_rows = dlp[:, None] * (z * z / std2 - 1.0)
            p = sigmoid(logit)
            dlogit = dlp * (batch.bit[idx] - p)

            # entropy bonus
            ent = dist_entropy(log_std, logit)
            ent_bit = cfg.ent_coef if cfg.ent_coef_bit is None else cfg.ent_coef_bit
            dlog_std_rows += -cfg.ent_coef / m
            dlogit += ent_bit * logit * p * (1.0 - p) / m

            v = policy.critic.forward(batch.critic_obs[idx])
            verr = v - batch.returns[idx]
            v_loss = 0.5 * float(np.mean(verr * verr))
            dv = cfg.vf_coef * verr / m

            policy.zero_grads()
            policy.actor.backward(dmean, dlogit, dlog_std_rows)
            policy.critic.backward(dv)
            grads = policy.grads()
            norm = clip_grads_(grads, cfg.max_grad_norm)
            if not np.isfinite(norm):
                raise NonFiniteGradError(f"gradient norm {norm}")
            opt.step(grads)

            stats["pg_loss"] += pg_loss
            stats["v_loss"] += v_loss
            stats["entropy"] += float(np.mean(ent))
            stats["approx_kl"] += float(np.mean(batch.logp[idx] - lp))
            stats["clip_frac"] += float(np.mean(np.abs(ratio - 1.0) > cfg.clip_eps))
            stats["grad_norm"] += norm
            n_updates += 1
    for k in stats:
        stats[k] /= max(n_updates, 1)
    return stats


@dataclass
class TrainResult:
    policy: Policy
    logs: List[dict]
    episodes: List[dict]
    transitions: List[tuple]


def train(envs, policy: Policy, cfg: TrainConfig,
          callback: Optional[Callable[[int, dict], None]] = None) -> TrainResult:
    runner = VecRunner(envs)
    opt = Adam(policy.params(), lr=cfg.lr)
    vnorm = ValueNormalizer(cfg.value_norm_beta)
    samp_rng = np.random.default_rng([cfg.seed, 7])
    mb_rng = np.random.default_rng([cfg.seed, 11])

    logs: List[dict] = []
    episodes: List[dict] = []
    transitions: List[tuple] = []
    recent: List[dict] = []

    for it in range(cfg.iterations):
        t0 = time.perf_counter()
        raw, ep_infos = runner.collect(policy, cfg.horizon, samp_rng, vnorm)
        (obs_buf, cobs_buf, act_buf, bit_buf, logp_buf, val_buf,
         rew_buf, done_buf, last_values) = raw
        adv, returns = compute_gae(rew_buf, val_buf, done_buf, last_values,
                                   cfg.gamma, cfg.gae_lambda)
        vnorm.update(returns)
        T, rows = rew_buf.shape
        batch = RolloutBatch(
            obs=obs_buf.reshape(T * rows, -1),
            critic_obs=cobs_buf.reshape(T * rows, -1),
            act=act_buf.reshape(T * rows, -1),
            bit=bit_buf.reshape(T * rows),
            logp=logp_buf.reshape(T * rows),
            adv=adv.reshape(T * rows),
            returns=vnorm.normalize(returns).reshape(T * rows),
        )
        stats = ppo_update(policy, opt, batch, cfg, mb_rng)

        episodes.extend(ep_infos)
        recent.extend(ep_infos)
        del recent[:-200]
        for k, env in enumerate(runner.envs):
            if env.transitions:
                transitions.extend((k,) + tr for tr in env.transitions)
                env.transitions.clear()

        row = {
            "iteration": it,
            "env_steps": (it + 1) * cfg.horizon * len(envs),
            "mean_reward": float(np.mean(rew_buf)),
            "episodes": len(ep_infos),
            "success_rate": float(np.mean([e["success"] for e in recent]))
            if recent else 0.0,
            "mean_final_stage": float(np.mean(
                [s for e in recent for s in e.get("final_stages", [])]))
            if recent and "final_stages" in recent[0] else 0.0,
            "mean_max_stage": float(np.mean(
                [s for e in recent for s in e.get("max_stages", [])]))
            if recent and "max_stages" in recent[0] else 0.0,
            "seconds": time.perf_counter() - t0,
        }
        row.update(stats)
        logs.append(row)
        if callback is not None:
            callback(it, row)
    return TrainResult(policy, logs, episodes, transitions)


@dataclass
class DistillConfig:
    iterations: int = 200
    horizon: int = 64
    lr: float = 1e-3
    max_grad_norm: float = 0.5
    seed: int = 0


def distill(teacher: Policy, student: Policy, envs, cfg: DistillConfig,
            callback: Optional[Callable[[int, dict], None]] = None):
    """On-policy distillation: the student drives, the teacher labels.

    Envs must be student-mode; the teacher is queried on its own view of the
    same underlying states via ``observe_as``.  Returns (logs, episodes)."""
    runner = VecRunner(envs)
    opt = Adam(student.actor.params(), lr=cfg.lr)
    rng = np.random.default_rng([cfg.seed, 13])

    N, nag = len(runner.envs), runner.n_agents
    rows = N * nag
    logs, episodes = [], []

    for it in range(cfg.iterations):
        s_obs = np.empty((cfg.horizon, rows, runner.envs[0].obs_dim))
        t_obs = np.empty((cfg.horizon, rows, teacher.cfg.obs_dim))
        for t in range(cfg.horizon):
            flat = runner.obs.reshape(rows, -1)
            tob = np.concatenate([e.observe_as_teacher() for e in runner.envs])
            s_obs[t] = flat
            t_obs[t] = tob
            mean, log_std, logit = student.actor.forward(flat)
            act, bit, _ = sample_actions(mean, log_std, logit, rng)
            p = sigmoid(logit)
            actions = np.concatenate(
                [act, bit[:, None], p[:, None]], axis=1).reshape(N, nag, -1)
            for k, env in enumerate(runner.envs):
                nobs, _, done, info = env.step(actions[k])
                runner.obs[k] = nobs
                if done:
                    rec = dict(info["episode"])
                    rec["env"] = k
                    episodes.append(rec)

        flat_s = s_obs.reshape(cfg.horizon * rows, -1)
        flat_t = t_obs.reshape(cfg.horizon * rows, -1)
        mt, lst, lt = teacher.actor.forward(flat_t)
        ms, lss, ls = student.actor.forward(flat_s)
        m = flat_s.shape[0]

        kl = gaussian_kl(mt, lst, ms, lss) + bernoulli_kl(lt, ls)
        loss = float(np.mean(kl))

        var_s = np.exp(2.0 * lss)
        d = ms - mt
        dmean = d / var_s / m
        dlog_std_rows = (1.0 - (np.exp(2.0 * lst) + d * d) / var_s) / m
        dlogit = (sigmoid(ls) - sigmoid(lt)) / m

        student.zero_grads()
        student.actor.backward(dmean, dlogit, dlog_std_rows)
        grads = student.actor.grads()
        norm = clip_grads_(grads, cfg.max_grad_norm)
        if not np.isfinite(norm):
            raise NonFiniteGradError(f"gradient norm {norm}")
        opt.step(grads)

        row = {"iteration": it, "kl": loss, "grad_norm": norm}
        logs.append(row)
        if callback is not None:
            callback(it, row)
    return logs, episodes
