"""Evaluation artifacts: saliency maps, stage histograms, success metrics,
and scripted-disturbance trials.

Saliency follows the gradient of the l2 norm of the deterministic action
vector with respect to each observation entry; the gripper bit enters the
vector as 2p-1 so it lives on the same scale as the clipped means.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .nets import Policy
from .trainer import sigmoid
from .world import (
    ObsLayout,
    obs_layout,
    teleport_box,
)


@dataclass
class SaliencyRecord:
    label: str
    entries: np.ndarray
    blocks: Dict[str, float]
    action_norm: float
    degenerate: bool = False


def action_vector(mean_row: np.ndarray, p: float) -> np.ndarray:
    return np.concatenate([mean_row, [2.0 * p - 1.0]])


def saliency_map(policy: Policy, obs: np.ndarray, layout: Optional[ObsLayout] = None,
                 label: str = "") -> SaliencyRecord:
    """Entry-wise |d ||a|| / d obs| at the deterministic action."""
    row = np.asarray(obs, dtype=float).reshape(1, -1)
    mean, _, logit = policy.actor.forward(row)
    p = float(sigmoid(logit)[0])
    a = action_vector(mean[0], p)
    norm = float(np.linalg.norm(a))
    if norm < 1e-12:
        entries = np.zeros(row.shape[1])
        degenerate = True
    else:
        policy.zero_grads()
        dmean = (mean / norm)
        dlogit = np.array([(2.0 * p - 1.0) / norm * 2.0 * p * (1.0 - p)])
        dobs = policy.actor.backward(dmean, dlogit, None)
        entries = np.abs(dobs[0])
        degenerate = False
    blocks = {}
    if layout is not None:
        blocks = {name: float(np.sum(entries[sl]))
                  for name, sl in layout.blocks.items()}
    return SaliencyRecord(label=label, entries=entries, blocks=blocks,
                          action_norm=norm, degenerate=degenerate)


def stage_histogram(final_stages: Sequence[Sequence[int]], n_stages: int) -> np.ndarray:
    """Rows of end-of-episode stage fractions, one row per window.

    ``final_stages[w]`` holds the final stage of every episode that ended in
    window w; empty windows produce an all-zero row."""
    out = np.zeros((len(final_stages), n_stages))
    for w, stages in enumerate(final_stages):
        for s in stages:
            if not 0 <= s < n_stages:
                raise ValueError(f"stage {s} outside 0..{n_stages - 1}")
            out[w, s] += 1.0
        total = out[w].sum()
        if total > 0:
            out[w] /= total
    return out


def histogram_from_episodes(episodes: List[dict], n_stages: int,
                            n_windows: int) -> np.ndarray:
    """Bucket episode records (in completion order) into equal windows."""
    stages = [s for e in episodes for s in e.get("final_stages", [])]
    if not stages:
        return np.zeros((n_windows, n_stages))
    per = max(1, math.ceil(len(stages) / n_windows))
    windows = [stages[i * per:(i + 1) * per] for i in range(n_windows)]
    return stage_histogram(windows, n_stages)


def deterministic_actions(policy: Policy, obs: np.ndarray) -> np.ndarray:
    """Head means plus thresholded gripper bit; last column is the prob."""
    mean, _, logit = policy.actor.forward(obs)
    p = sigmoid(logit)
    bit = (p > 0.5).astype(float)
    return np.concatenate([mean, bit[:, None], p[:, None]], axis=1)


def as_controller(policy):
    """Normalize a Policy or an (env, obs) -> actions callable."""
    if isinstance(policy, Policy):
        return lambda env, obs: deterministic_actions(policy, obs)
    return policy


def oracle_controller(oracle):
    return lambda env, obs: np.array(
        [oracle.act(env.world, i) for i in range(env.n_agents)])


@dataclass
class EvalResult:
    n_trials: int
    successes: int
    times: List[float] = field(default_factory=list)
    episodes: List[dict] = field(default_factory=list)

    @property
    def success_rate(self) -> float:
        return self.successes / self.n_trials if self.n_trials else 0.0

    @property
    def mean_time(self) -> float:
        return float(np.mean(self.times)) if self.times else float("nan")

    @property
    def std_time(self) -> float:
        return float(np.std(self.times)) if self.times else float("nan")

    def table_row(self) -> str:
        """Success-rate / completion-time summary, e.g. '93.6 / 10.78 ± 0.34'."""
        if not self.times:
            return f"{100.0 * self.success_rate:.1f} / - ± -"
        return (f"{100.0 * self.success_rate:.1f} / "
                f"{self.mean_time:.2f} ± {self.std_time:.2f}")


def evaluate_policy(policy, env, n_trials: int) -> EvalResult:
    """Deterministic rollouts; completion time counted over successes only."""
    act = as_controller(policy)
    result = EvalResult(n_trials=n_trials, successes=0)
    obs = env.reset()
    done_count = 0
    while done_count < n_trials:
        actions = act(env, obs)
        obs, _, done, info = env.step(actions)
        if done:
            done_count += 1
            rec = info["episode"]
            result.episodes.append(rec)
            if rec["success"]:
                result.successes += 1
                if rec.get("success_time") is not None:
                    result.times.append(rec["success_time"])
    return result


@dataclass
class DisturbanceTrial:
    triggered: bool
    trigger_step: Optional[int]
    min_stage_after: Optional[int]
    reentered_low: bool
    regrasped: bool
    succeeded_after: bool
    final_stages: List[int]


def run_disturbance_trial(policy: Policy, env, trigger_stage: int, rng,
                          min_goal_dist: float = 1.5,
                          max_goal_dist: float = 3.0) -> DisturbanceTrial:
    """One episode; when any agent first reaches trigger_stage the box is
    teleported to a fresh spot away from the goal.

    Records whether the agent fell back to an early stage (S0..S2), grasped
    again, and still delivered before the clock ran out."""
    act = as_controller(policy)
    obs = env.reset()
    triggered = False
    trigger_step = None
    min_after: Optional[int] = None
    regrasped = False
    success_before = False
    while True:
        w = env.world
        if not triggered and any(a.stage.index >= trigger_stage for a in w.agents):
            ang = rng.uniform(-math.pi, math.pi)
            r = rng.uniform(min_goal_dist, max_goal_dist)
            teleport_box(w, w.goal[0] + r * math.cos(ang),
                         w.goal[1] + r * math.sin(ang))
            triggered = True
            trigger_step = w.steps
            success_before = w.first_success_time is not None
        actions = act(env, obs)
        obs, _, done, info = env.step(actions)
        if triggered and not done:
            min_now = min(a.stage.index for a in env.world.agents)
            min_after = min_now if min_after is None else min(min_after, min_now)
            if env.world.n_grasps > 0:
                regrasped = True
        if done:
            rec = info["episode"]
            succeeded_after = bool(rec["success"]) and triggered and \
                not success_before and rec.get("success_time") is not None and \
                rec["success_time"] > (trigger_step or 0) * env.cfg.dt
            return DisturbanceTrial(
                triggered=triggered,
                trigger_step=trigger_step,
                min_stage_after=min_after,
                reentered_low=min_after is not None and min_after <= 2,
                regrasped=regrasped,
                succeeded_after=succeeded_after,
                final_stages=rec["final_stages"],
            )


def saliency_phase_snapshots(policy: Policy, env, phases=None,
                             max_steps: int = 2000, driver=None):
    """Capture one observation per task phase along a rollout.

    Phases are (label, stage) pairs; the snapshot is taken the first time
    any agent enters that stage.  ``driver`` optionally supplies the actions
    (e.g. a scripted controller) while saliency is still taken through
    ``policy``; phases the rollout never reaches are absent from the
    result."""
    if phases is None:
        phases = [("A-approach", 0), ("B-ready", 1), ("C-lift", 2),
                  ("D-transport", 3), ("E-place", 4)]
    act = as_controller(policy if driver is None else driver)
    layout = obs_layout(env.mode, env.cfg.history_len)
    wanted = dict((stage, label) for label, stage in phases)
    snaps: Dict[str, SaliencyRecord] = {}
    obs = env.reset()
    for _ in range(max_steps):
        for i, a in enumerate(env.world.agents):
            label = wanted.get(a.stage.index)
            if label is not None and label not in snaps:
                snaps[label] = saliency_map(policy, obs[i], layout, label=label)
        if len(snaps) == len(phases):
            break
        actions = act(env, obs)
        obs, _, done, _ = env.step(actions)
        if done:
            break
    return [snaps[label] for label, _ in phases if label in snaps]
