"""Gym-style wrappers tying the world, rewards and curriculum together.

An env instance owns one world plus the per-agent reward bookkeeping.  The
action array handed to ``step`` has one row per agent laid out as

    [a0..a6, grip_bit, grip_prob]

where a0..a2 are base velocities, a3..a5 the arm offset around the default
pose, a6 the gripper yaw, grip_bit the sampled open/close bit and grip_prob
the probability it was sampled from (the grasp-action shaping terms read the
probability, the world only sees the bit).
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .curriculum import (
    CurriculumConfig,
    composite_reward,
    init_state,
    update_scales,
)
from .rewards import (
    FixedRewardWeights,
    eval_all_terms,
    eval_fixed,
    make_context,
    term_specs,
)
from .world import (
    FAILURE,
    STUDENT,
    TEACHER,
    EpisodeConfig,
    World,
    obs_layout,
    observe,
    reset_episode,
    step,
)


def pnp_curriculum(cfg: EpisodeConfig, **overrides) -> CurriculumConfig:
    return CurriculumConfig(terms=term_specs(cfg), n_stages=7, **overrides)


def action_to_command(cfg: EpisodeConfig, action) -> tuple:
    """Map a policy action row to a raw world command (pre-clip)."""
    ox, oy, oz = cfg.default_offset
    return (
        float(action[0]), float(action[1]), float(action[2]),
        ox + float(action[3]), oy + float(action[4]), oz + float(action[5]),
        float(action[6]),
        1.0 if action[7] >= 0.5 else 0.0,
    )


class DynamicAssembler:
    """Per-agent dynamic reward scales, updated from episode outcomes."""

    name = "dynamic"

    def __init__(self, cur_cfg: CurriculumConfig, n_agents: int):
        self.cfg = cur_cfg
        self.states = [init_state(cur_cfg) for _ in range(n_agents)]

    def reward(self, agent: int, fixed: float, terms: dict) -> float:
        return composite_reward(fixed, terms, self.states[agent])

    def episode_end(self, final_stages):
        self.states = [update_scales(s, f, self.cfg)
                       for s, f in zip(self.states, final_stages)]

    def scales(self, agent: int) -> dict:
        return dict(self.states[agent].scales)

    def frozen(self, agent: int) -> bool:
        return self.states[agent].frozen


class PnPEnv:
    """Single pick-and-place world with auto-reset on episode end.

    ``step`` returns (obs, rewards, done, info).  ``done`` covers both
    failure modes and the running-out of the clock; delivery itself never
    cuts an episode short, it is reported through the episode record.
    """

    def __init__(self, cfg: Optional[EpisodeConfig] = None, mode: str = TEACHER,
                 assembler=None, seed: int = 0, noise_sigma: Optional[float] = None):
        self.cfg = cfg or EpisodeConfig()
        self.mode = mode
        self.rng = np.random.default_rng([int(seed), 101])
        self.noise_rng = np.random.default_rng([int(seed), 202])
        if noise_sigma is None:
            noise_sigma = self.cfg.obs_noise_sigma if mode == STUDENT else 0.0
        self.noise_sigma = noise_sigma
        self.fixed_weights = FixedRewardWeights()
        self.assembler = assembler if assembler is not None else DynamicAssembler(
            pnp_curriculum(self.cfg), self.cfg.n_agents)
        layout = obs_layout(mode, self.cfg.history_len)
        self.obs_dim = layout.dim
        self.critic_obs_dim = 2 * layout.dim
        self.act_dim = 7
        self.world: Optional[World] = None
        self.episode_idx = -1
        self.transitions = []  # (episode, step, agent, src, dst)
        self._prev_commands = None
        self._returns = None
        self._max_stage = None

    @property
    def n_agents(self) -> int:
        return self.cfg.n_agents

    def reset(self) -> np.ndarray:
        self.world = reset_episode(self.cfg, self.rng, self.mode)
        self.episode_idx += 1
        self._prev_commands = [None] * self.n_agents
        self._returns = np.zeros(self.n_agents)
        self._max_stage = [0] * self.n_agents
        return self._obs()

    def _obs(self) -> np.ndarray:
        return np.array([
            observe(self.world, i, self.mode, self.noise_rng, self.noise_sigma)
            for i in range(self.n_agents)
        ])

    def observe_as_teacher(self) -> np.ndarray:
        """Noise-free staged view of the current state (distillation labels)."""
        return np.array([
            observe(self.world, i, TEACHER, None, 0.0)
            for i in range(self.n_agents)
        ])

    def critic_obs(self, obs: np.ndarray) -> np.ndarray:
        """Ego-first joint observation, zero padded when there is no partner."""
        out = np.zeros((self.n_agents, self.critic_obs_dim))
        d = self.obs_dim
        for i in range(self.n_agents):
            out[i, :d] = obs[i]
            if self.n_agents == 2:
                out[i, d:] = obs[1 - i]
        return out

    def step(self, actions: np.ndarray):
        w = self.world
        cfg = self.cfg
        commands = [action_to_command(cfg, actions[i]) for i in range(self.n_agents)]
        src_stages = [a.stage.index for a in w.agents]
        step(w, commands)

        rewards = np.zeros(self.n_agents)
        for i in range(self.n_agents):
            dst = w.agents[i].stage.index
            if hasattr(self.assembler, "note_stage"):
                self.assembler.note_stage(i, dst)
            ctx = make_context(w, i, grasp_prob=float(actions[i][8]))
            terms = eval_all_terms(ctx)
            fixed = eval_fixed(w, i, self._prev_commands[i], commands[i],
                               self.fixed_weights)
            rewards[i] = self.assembler.reward(i, fixed, terms)
            self._prev_commands[i] = commands[i]
            if dst != src_stages[i]:
                self.transitions.append(
                    (self.episode_idx, w.steps, i, src_stages[i], dst))
            if dst > self._max_stage[i]:
                self._max_stage[i] = dst
        self._returns += rewards

        done = w.status == FAILURE or w.clock >= cfg.timeout - 1e-9
        info = {"stages": [a.stage.index for a in w.agents], "status": w.status}
        if done:
            final = [a.stage.index for a in w.agents]
            info["episode"] = {
                "index": self.episode_idx,
                "length": w.steps,
                "success": w.first_success_time is not None,
                "success_time": w.first_success_time,
                "final_stages": final,
                "max_stages": list(self._max_stage),
                "returns": self._returns.tolist(),
                "failure_reason": w.failure_reason,
                "scales_frozen": [self.assembler.frozen(i)
                                  for i in range(self.n_agents)]
                if hasattr(self.assembler, "frozen") else None,
            }
            self.assembler.episode_end(final)
            obs = self.reset()
        else:
            obs = self._obs()
        return obs, rewards, done, info


class PointReachEnv:
    """Tiny kinematic nav task for exercising the trainer end to end.

    A point base drives toward a target drawn on a ring; reward is a dense
    shaping term plus a bonus while parked inside the target radius.
    """

    dt = 0.1
    vel_limit = 1.5
    target_radius = 0.25
    timeout_steps = 150

    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng([int(seed), 303])
        self.obs_dim = 6
        self.critic_obs_dim = 6
        self.act_dim = 2
        self.episode_idx = -1
        self.transitions = []

    @property
    def n_agents(self) -> int:
        return 1

    def reset(self) -> np.ndarray:
        self.x = 0.0
        self.y = 0.0
        self.vx = 0.0
        self.vy = 0.0
        ang = self.rng.uniform(-math.pi, math.pi)
        r = self.rng.uniform(2.0, 5.0)
        self.tx = r * math.cos(ang)
        self.ty = r * math.sin(ang)
        self.d0 = r
        self.steps = 0
        self.reached = False
        self._return = 0.0
        self.episode_idx += 1
        return self._obs()

    def _obs(self) -> np.ndarray:
        dx, dy = self.tx - self.x, self.ty - self.y
        d = math.hypot(dx, dy)
        return np.array([[self.vx, self.vy, 0.3 * dx, 0.3 * dy,
                          d / self.d0, 1.0 if d < self.target_radius else 0.0]])

    def critic_obs(self, obs: np.ndarray) -> np.ndarray:
        return obs

    def step(self, actions: np.ndarray):
        a = actions[0]
        self.vx = float(np.clip(a[0], -self.vel_limit, self.vel_limit))
        self.vy = float(np.clip(a[1], -self.vel_limit, self.vel_limit))
        self.x += self.vx * self.dt
        self.y += self.vy * self.dt
        self.steps += 1
        d = math.hypot(self.tx - self.x, self.ty - self.y)
        inside = d < self.target_radius
        if inside:
            self.reached = True
        reward = math.exp(-d) + (5.0 if inside else 0.0)
        self._return += reward
        done = self.steps >= self.timeout_steps
        info = {"status": "running"}
        if done:
            info["episode"] = {
                "index": self.episode_idx,
                "length": self.steps,
                "success": self.reached,
                "returns": [self._return],
            }
            obs = self.reset()
        else:
            obs = self._obs()
        return obs, np.array([reward]), done, info


class ScriptedOracle:
    """Hand-written staged controller; exists to prove the world is solvable
    and to give tests a cheap competent agent."""

    standoff = 0.42

    def __init__(self, cfg: EpisodeConfig):
        self.cfg = cfg

    def act(self, world: World, agent: int) -> np.ndarray:
        cfg = self.cfg
        a = world.agents[agent]
        box = world.box
        stage = a.stage.index
        handle = a.grasped_handle or a.assigned_handle or a.candidate_handle or \
            (agent + 1 if cfg.n_agents == 2 else 1)
        hx, hy, hz, hyaw = world.handle_world[handle]
        gx0, gy0 = world.goal

        if stage == 6:
            return np.zeros(9)

        if (cfg.n_agents == 2 and a.grasped_handle is not None
                and world.n_grasps == 1 and stage <= 2):
            # solo grasp cannot lift; freeze so the box is not dragged
            # around while the partner closes in
            ox, oy, oz = cfg.default_offset
            return np.array([0.0, 0.0, 0.0, a.dx - ox, a.dy - oy, a.dz - oz,
                             a.gyaw, 1.0, 1.0])

        if stage >= 3 and stage <= 4:
            # carrying: pull the handle so the box centre lands on the goal
            thx = gx0 + (hx - box.x)
            thy = gy0 + (hy - box.y)
        else:
            thx, thy = hx, hy

        # lift/carry heights leave margin over the stage thresholds for the
        # tallest box asset
        if stage == 0:
            tz, grip = hz + 0.06, 0.0
        elif stage == 1:
            tz, grip = hz, 1.0
        elif stage == 2:
            tz, grip = 0.55, 1.0
        elif stage == 3:
            tz, grip = 0.50, 1.0
        elif stage == 4:
            tz, grip = max(0.0, hz - box.height), 1.0
        else:  # stage 5: let go and lift clear
            tz, grip = hz + 0.2, 0.0

        # base holds a spot outboard of the handle so the arm covers it
        ux, uy = self._unit(hx - box.x, hy - box.y)
        bx = thx + self.standoff * ux
        by = thy + self.standoff * uy
        wvx = np.clip(2.0 * (bx - a.x), -cfg.base_vel_limit, cfg.base_vel_limit)
        wvy = np.clip(2.0 * (by - a.y), -cfg.base_vel_limit, cfg.base_vel_limit)
        ch, sh = math.cos(a.heading), math.sin(a.heading)
        bvx = ch * wvx + sh * wvy
        bvy = -sh * wvx + ch * wvy

        rx, ry = thx - a.x, thy - a.y
        dx = ch * rx + sh * ry
        dy = -sh * rx + ch * ry
        # chasing the handle yaw while holding it feeds back into the box
        # pose; freeze the wrist once latched
        gyaw = a.gyaw if a.grasped_handle else self._wrap(hyaw - a.heading)

        ox, oy, oz = cfg.default_offset
        return np.array([bvx, bvy, 0.0, dx - ox, dy - oy, tz - oz,
                         gyaw, grip, grip])

    @staticmethod
    def _unit(x, y):
        n = math.hypot(x, y)
        if n < 1e-9:
            return 1.0, 0.0
        return x / n, y / n

    @staticmethod
    def _wrap(v):
        while v > math.pi:
            v -= 2 * math.pi
        while v < -math.pi:
            v += 2 * math.pi
        return v
