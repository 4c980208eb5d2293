"""Fixed-scale gated reward baselines and the waypoint tracking task.

The gated scheme replaces the adaptive per-episode scales with constants and
instead masks terms by stage membership: terms of completed stages either
keep paying their supremum (optimistic variant) or pay nothing (pessimistic
variant), the current stage's terms pay live values, future stages pay
nothing.  Stage completion latches for the remainder of the run, not just
the episode.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .curriculum import CurriculumConfig, RewardTermSpec
from .rewards import RewardError
from .stages import StageId, TransitionRuleSet, allocate_stage
from .world import TEACHER

COMPLETED_MAX = "max"
COMPLETED_MIN = "min"


class GatingState:
    """Per-agent record of which stages have ever been completed this run."""

    def __init__(self, n_stages: int):
        self.n_stages = n_stages
        self.completed = set()

    def observe_stage(self, stage: int):
        # entering stage k means 0..k-1 are done; latch them
        for s in range(stage):
            self.completed.add(s)

    def is_completed(self, stage: int) -> bool:
        return stage in self.completed


def gated_term_value(spec: RewardTermSpec, live_value: float, current_stage: int,
                     gating: GatingState, variant: str) -> float:
    """Value a single term contributes under the gated baseline."""
    if spec.stage < current_stage or gating.is_completed(spec.stage):
        if variant == COMPLETED_MAX:
            return spec.sup_value
        if variant == COMPLETED_MIN:
            return 0.0
        raise RewardError(f"unknown gating variant {variant!r}")
    if spec.stage == current_stage:
        return live_value
    return 0.0


class GatedAssembler:
    """Drop-in replacement for the dynamic assembler with frozen scales.

    Scales are pinned at the caps; what varies is which terms count, driven
    by each agent's stage and the run-lifetime completion latch."""

    def __init__(self, cur_cfg: CurriculumConfig, n_agents: int,
                 variant: str = COMPLETED_MAX):
        if variant not in (COMPLETED_MAX, COMPLETED_MIN):
            raise RewardError(f"unknown gating variant {variant!r}")
        self.cfg = cur_cfg
        self.variant = variant
        self.name = f"gated-{variant}"
        self.gating = [GatingState(cur_cfg.n_stages) for _ in range(n_agents)]
        self._stages = [0] * n_agents

    def note_stage(self, agent: int, stage: int):
        self._stages[agent] = stage
        self.gating[agent].observe_stage(stage)

    def reward(self, agent: int, fixed: float, terms: Dict[str, float]) -> float:
        total = fixed
        cur = self._stages[agent]
        g = self.gating[agent]
        for spec in self.cfg.terms:
            try:
                live = terms[spec.term_id]
            except KeyError:
                raise RewardError(f"missing term {spec.term_id!r}")
            total += spec.cap * gated_term_value(spec, live, cur, g, self.variant)
        return total

    def episode_end(self, final_stages):
        # the completion latch survives episode boundaries by design
        pass

    def scales(self, agent: int) -> Dict[str, float]:
        return {t.term_id: t.cap for t in self.cfg.terms}

    def frozen(self, agent: int) -> bool:
        return True


@dataclass
class TrackingConfig:
    """Waypoint course: visit each waypoint in order, then hold the last."""

    waypoints: Tuple[Tuple[float, float], ...] = (
        (1.5, 0.0), (1.5, 1.5), (0.0, 1.5), (0.0, 0.0))
    reach_tol: float = 0.1
    dt: float = 0.1
    vel_limit: float = 1.5
    timeout: float = 30.0
    term_cap: float = 50.0
    dist_gain: float = 3.0

    def __post_init__(self):
        if len(self.waypoints) < 1:
            raise ValueError("need at least one waypoint")
        if self.reach_tol <= 0:
            raise ValueError("reach_tol must be positive")

    @property
    def n_stages(self) -> int:
        return len(self.waypoints) + 1

    @property
    def timeout_steps(self) -> int:
        return int(round(self.timeout / self.dt))


def tracking_stages(cfg: TrackingConfig):
    names = [f"ToWaypoint{k}" for k in range(len(cfg.waypoints))] + ["CourseDone"]
    return tuple(StageId(i, n) for i, n in enumerate(names))


def tracking_rules(cfg: TrackingConfig) -> TransitionRuleSet:
    """Forward-only progression; waypoints never un-complete."""

    def advance(k):
        wx, wy = cfg.waypoints[k]
        def pred(world, agent):
            x, y = world  # world here is the env's (x, y) tuple
            return (x - wx) ** 2 + (y - wy) ** 2 < cfg.reach_tol ** 2
        return pred

    forward = tuple(advance(k) for k in range(len(cfg.waypoints)))
    return TransitionRuleSet(stages=tracking_stages(cfg), forward=forward,
                             backward=(), mode=TEACHER)


def tracking_terms(cfg: TrackingConfig):
    """One shaping term per waypoint stage; the terminal stage pays nothing."""
    return tuple(
        RewardTermSpec(term_id=f"track_{k}", stage=k, cap=cfg.term_cap,
                       sup_value=1.0)
        for k in range(len(cfg.waypoints)))


def tracking_curriculum(cfg: TrackingConfig, **overrides) -> CurriculumConfig:
    return CurriculumConfig(terms=tracking_terms(cfg),
                            n_stages=cfg.n_stages, **overrides)


class TrackingEnv:
    """Planar point agent on a fixed waypoint course.

    Same step contract as the pick-and-place env so the trainer and the
    assemblers plug in unchanged; stages are waypoint indices."""

    def __init__(self, cfg: Optional[TrackingConfig] = None, assembler=None,
                 seed: int = 0):
        self.cfg = cfg or TrackingConfig()
        self.rules = tracking_rules(self.cfg)
        from .envs import DynamicAssembler
        self.assembler = assembler if assembler is not None else \
            DynamicAssembler(tracking_curriculum(self.cfg), 1)
        self.rng = np.random.default_rng([int(seed), 404])
        self.obs_dim = 4 + 2 * len(self.cfg.waypoints)
        self.critic_obs_dim = self.obs_dim
        self.act_dim = 2
        self.episode_idx = -1
        self.transitions = []

    @property
    def n_agents(self) -> int:
        return 1

    def reset(self) -> np.ndarray:
        self.x = float(self.rng.uniform(-0.5, 0.5))
        self.y = float(self.rng.uniform(-0.5, 0.5))
        self.vx = 0.0
        self.vy = 0.0
        self.stage = self.rules.stages[0]
        self.steps = 0
        self._return = 0.0
        self.episode_idx += 1
        return self._obs()

    def _obs(self) -> np.ndarray:
        parts = [self.vx, self.vy]
        for wx, wy in self.cfg.waypoints:
            parts.extend([0.3 * (wx - self.x), 0.3 * (wy - self.y)])
        k = min(self.stage.index, len(self.cfg.waypoints) - 1)
        parts.extend([self.stage.index / len(self.cfg.waypoints), float(k)])
        return np.array([parts])

    def critic_obs(self, obs: np.ndarray) -> np.ndarray:
        return obs

    def term_values(self) -> Dict[str, float]:
        vals = {}
        for k, (wx, wy) in enumerate(self.cfg.waypoints):
            d = np.hypot(wx - self.x, wy - self.y)
            vals[f"track_{k}"] = float(np.exp(-self.cfg.dist_gain * d))
        return vals

    def step(self, actions: np.ndarray):
        a = actions[0]
        self.vx = float(np.clip(a[0], -self.cfg.vel_limit, self.cfg.vel_limit))
        self.vy = float(np.clip(a[1], -self.cfg.vel_limit, self.cfg.vel_limit))
        self.x += self.vx * self.cfg.dt
        self.y += self.vy * self.cfg.dt
        self.steps += 1

        src = self.stage.index
        self.stage = allocate_stage((self.x, self.y), 0, self.stage, self.rules)
        if self.stage.index != src:
            self.transitions.append(
                (self.episode_idx, self.steps, 0, src, self.stage.index))
        if hasattr(self.assembler, "note_stage"):
            self.assembler.note_stage(0, self.stage.index)

        reward = self.assembler.reward(0, 0.0, self.term_values())
        self._return += reward
        done = self.steps >= self.cfg.timeout_steps
        info = {"stages": [self.stage.index], "status": "running"}
        if done:
            info["episode"] = {
                "index": self.episode_idx,
                "length": self.steps,
                "success": self.stage.index == self.cfg.n_stages - 1,
                "final_stages": [self.stage.index],
                "max_stages": [self.stage.index],
                "returns": [self._return],
            }
            self.assembler.episode_end([self.stage.index])
            obs = self.reset()
        else:
            obs = self._obs()
        return obs, np.array([reward]), done, info
