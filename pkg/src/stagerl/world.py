"""Planar 2.5-D kinematic manipulation world.

One or two mobile bases with reach-limited grippers, a two-handled box, and a
goal region on the ground plane.  No forces or contact dynamics: commands are
velocity / position targets integrated with explicit Euler at a fixed dt,
grasps latch kinematically, and a grasped box is pinned to the gripper(s).

Conventions:
  * world frame: x right, y up (top-down view); yaw counter-clockwise
  * base pose (x, y, heading); gripper offset (dx, dy, dz) in the base frame
  * gripper world z equals the offset dz (the base rides on the ground)
  * box pose (x, y, yaw) of the center plus height of the box bottom
  * handles 1 and 2 sit at the centers of the +x / -x faces at half height

A command per agent is 8 numbers: base velocity (vx, vy, yaw rate) in the
base frame, gripper target (x, y, z, yaw) in the base frame, and a binary
close bit.  Components are clipped to configured limits before integration.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .stages import (
    PNP_STAGES,
    STUDENT,
    TEACHER,
    BackwardEdge,
    StageId,
    TransitionRuleSet,
    allocate_stage,
)

RUNNING = "running"
SUCCESS = "success"
FAILURE = "failure"

TWO_PI = 2.0 * math.pi

# planar positions are multiplied by this inside observations so that arena
# scale coordinates land in a tanh-friendly range
POS_SCALE = 0.3


class WorldError(ValueError):
    pass


class MalformedCommandError(WorldError):
    pass


class PlacementError(WorldError):
    pass


class WorldTerminalError(WorldError):
    """Raised when stepping a world whose episode already failed."""


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    a = math.fmod(a + math.pi, TWO_PI)
    if a <= 0.0:
        a += TWO_PI
    return a - math.pi


@dataclass(frozen=True)
class EpisodeConfig:
    """World geometry, limits and episode rules.  Lengths m, times s."""

    n_agents: int = 1
    dt: float = 0.1
    timeout: float = 45.0
    success_radius: float = 0.5
    init_distance_range: tuple[float, float] = (0.6, 5.0)
    box_scale_range: tuple[float, float] = (0.8, 1.2)
    # (mass, (edge_x, edge_y, edge_z)) full edge lengths before scaling
    box_assets: tuple[tuple[float, tuple[float, float, float]], ...] = (
        (1.0, (0.34, 0.26, 0.24)),
        (1.15, (0.22, 0.22, 0.22)),
        (1.3, (0.45, 0.30, 0.26)),
    )
    arena_half: float = 8.0

    # agent kinematics
    base_vel_limit: float = 1.5
    yaw_rate_limit: float = 1.5
    reach_radius: float = 0.8
    reach_height: float = 0.6
    gripper_rate: float = 1.0
    gripper_yaw_rate: float = 2.0
    grasp_tol: float = 0.03
    default_offset: tuple[float, float, float] = (0.45, 0.0, 0.35)
    agent_radius: float = 0.3
    min_spawn_sep: float = 0.9
    fall_rate: float = 2.5

    # stage predicate thresholds
    ready_xy: float = 0.10
    ready_cos: float = 0.9
    ready_above: float = 0.05
    lift_height: float = 0.20
    carried_height: float = 0.10
    place_height: float = 0.05
    lost_dist: float = 1.0

    # student observation model
    history_len: int = 5
    obs_noise_sigma: float = 0.02

    def __post_init__(self):
        if self.n_agents not in (1, 2):
            raise WorldError("n_agents must be 1 or 2")
        lo, hi = self.init_distance_range
        if not (0.0 < lo <= hi):
            raise WorldError("bad init_distance_range")
        if not self.box_assets:
            raise WorldError("need at least one box asset")
        if self.history_len < 1:
            raise WorldError("history_len must be >= 1")


@dataclass
class AgentState:
    x: float
    y: float
    heading: float
    # realized base-frame velocity of the last step
    vx: float = 0.0
    vy: float = 0.0
    wz: float = 0.0
    dx: float = 0.45
    dy: float = 0.0
    dz: float = 0.35
    gyaw: float = 0.0
    gripper_closed: bool = False
    grasped_handle: int | None = None
    assigned_handle: int | None = None
    candidate_handle: int = 1
    stage: StageId = PNP_STAGES[0]
    prev_command: tuple | None = None
    # (dx, dy, dz, cos gyaw, sin gyaw) per step, oldest first
    offset_history: list = field(default_factory=list)

    def gripper_world(self) -> tuple[float, float, float]:
        c = math.cos(self.heading)
        s = math.sin(self.heading)
        return (self.x + c * self.dx - s * self.dy,
                self.y + s * self.dx + c * self.dy,
                self.dz)

    def gripper_world_yaw(self) -> float:
        return wrap_angle(self.heading + self.gyaw)


@dataclass
class BoxState:
    x: float
    y: float
    yaw: float
    height: float
    ex: float  # half extents
    ey: float
    ez: float
    mass: float
    h_peak: float = 0.0
    prev_goal_dist: float = 0.0
    goal_vel: float = 0.0
    yaw_offsets: dict = field(default_factory=dict)


def handle_pose(box: BoxState, handle: int) -> tuple[float, float, float, float]:
    """World pose (x, y, z, yaw) of handle 1 (+x face) or 2 (-x face)."""
    if handle == 1:
        c = math.cos(box.yaw)
        s = math.sin(box.yaw)
        return (box.x + box.ex * c, box.y + box.ex * s, box.height + box.ez, box.yaw)
    if handle == 2:
        c = math.cos(box.yaw)
        s = math.sin(box.yaw)
        return (box.x - box.ex * c, box.y - box.ex * s, box.height + box.ez,
                wrap_angle(box.yaw + math.pi))
    raise WorldError(f"unknown handle {handle}")


class World:
    """Mutable episode state; single writer.  Step returns self for chaining."""

    def __init__(self, cfg: EpisodeConfig, rules: TransitionRuleSet,
                 agents: list[AgentState], box: BoxState, goal: tuple[float, float]):
        self.cfg = cfg
        self.rules = rules
        self.agents = agents
        self.box = box
        self.goal = goal
        self.steps = 0
        self.status = RUNNING
        self.failure_reason = ""
        self.first_success_time: float | None = None
        self.d0 = math.hypot(box.x - goal[0], box.y - goal[1])
        box.prev_goal_dist = self.d0
        self.box_goal_dist = self.d0
        self._refresh_handles()

    @property
    def clock(self) -> float:
        return self.steps * self.cfg.dt

    @property
    def n_grasps(self) -> int:
        return sum(1 for a in self.agents if a.grasped_handle is not None)

    def _refresh_handles(self):
        self.handle_world = {1: handle_pose(self.box, 1), 2: handle_pose(self.box, 2)}

    def grasped_by_other(self, handle: int, agent: int) -> bool:
        for j, a in enumerate(self.agents):
            if j != agent and a.grasped_handle == handle:
                return True
        return False

    def snapshot(self) -> tuple:
        """Hashable state tuple for replay / determinism checks."""
        ag = tuple(
            (a.x, a.y, a.heading, a.vx, a.vy, a.wz, a.dx, a.dy, a.dz, a.gyaw,
             a.gripper_closed, a.grasped_handle, a.assigned_handle, a.stage.index)
            for a in self.agents
        )
        b = self.box
        return (ag, (b.x, b.y, b.yaw, b.height, b.h_peak), self.steps, self.status)


def _assets_min_ez(cfg: EpisodeConfig) -> float:
    return min(a[1][2] for a in cfg.box_assets) * 0.5 * cfg.box_scale_range[0]


def reset_episode(cfg: EpisodeConfig, rng, mode: str = TEACHER) -> World:
    """Sample a fresh episode layout around the goal at the origin.

    Agents and the box land at distances in init_distance_range from the
    goal; overlapping placements are re-drawn, with a hard attempt cap.
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    goal = (0.0, 0.0)

    mass, edges = cfg.box_assets[int(rng.integers(len(cfg.box_assets)))]
    scale = float(rng.uniform(*cfg.box_scale_range))
    ex, ey, ez = (e * scale * 0.5 for e in edges)

    def draw_point():
        r = float(rng.uniform(*cfg.init_distance_range))
        th = float(rng.uniform(0.0, TWO_PI))
        return goal[0] + r * math.cos(th), goal[1] + r * math.sin(th)

    bx, by = draw_point()
    byaw = float(rng.uniform(-math.pi, math.pi))
    box = BoxState(x=bx, y=by, yaw=byaw, height=0.0, ex=ex, ey=ey, ez=ez, mass=mass)

    box_clear = max(ex, ey) + cfg.agent_radius + 0.1
    agents: list[AgentState] = []
    for _ in range(cfg.n_agents):
        for attempt in range(100):
            ax, ay = draw_point()
            if math.hypot(ax - bx, ay - by) < box_clear:
                continue
            if any(math.hypot(ax - o.x, ay - o.y) < cfg.min_spawn_sep for o in agents):
                continue
            break
        else:
            raise PlacementError("could not place agent after 100 attempts")
        heading = float(rng.uniform(-math.pi, math.pi))
        a = AgentState(x=ax, y=ay, heading=heading,
                       dx=cfg.default_offset[0], dy=cfg.default_offset[1],
                       dz=cfg.default_offset[2])
        entry = (a.dx, a.dy, a.dz, math.cos(a.gyaw), math.sin(a.gyaw))
        a.offset_history = [entry] * cfg.history_len
        agents.append(a)

    rules = pnp_transition_rules(cfg, mode)
    return World(cfg, rules, agents, box, goal)


def _clip(v: float, lo: float, hi: float) -> float:
    return lo if v < lo else hi if v > hi else v


def clip_command(cmd, cfg: EpisodeConfig) -> tuple:
    """Validate one 8-component command and clip it to the configured limits."""
    if len(cmd) != 8:
        raise MalformedCommandError(f"command needs 8 components, got {len(cmd)}")
    vals = [float(c) for c in cmd]
    if any(math.isnan(c) or math.isinf(c) for c in vals):
        raise MalformedCommandError("command contains non-finite components")
    vl, yl, rr, rh = (cfg.base_vel_limit, cfg.yaw_rate_limit,
                      cfg.reach_radius, cfg.reach_height)
    return (
        _clip(vals[0], -vl, vl),
        _clip(vals[1], -vl, vl),
        _clip(vals[2], -yl, yl),
        _clip(vals[3], -rr, rr),
        _clip(vals[4], -rr, rr),
        _clip(vals[5], 0.0, rh),
        _clip(vals[6], -math.pi, math.pi),
        1.0 if vals[7] >= 0.5 else 0.0,
    )


def track_gripper(dx, dy, dz, gyaw, tx, ty, tz, tyaw, cfg: EpisodeConfig, dt):
    """Rate-limited first-order tracking of the gripper target, then projection
    into the reach envelope (cylinder radius reach_radius, height reach_height)."""
    ddx, ddy, ddz = tx - dx, ty - dy, tz - dz
    dist = math.sqrt(ddx * ddx + ddy * ddy + ddz * ddz)
    max_step = cfg.gripper_rate * dt
    if dist > max_step:
        f = max_step / dist
        ddx *= f
        ddy *= f
        ddz *= f
    dx += ddx
    dy += ddy
    dz += ddz
    dyaw = _clip(tyaw - gyaw, -cfg.gripper_yaw_rate * dt, cfg.gripper_yaw_rate * dt)
    gyaw = _clip(gyaw + dyaw, -math.pi, math.pi)
    r = math.hypot(dx, dy)
    if r > cfg.reach_radius:
        f = cfg.reach_radius / r
        dx *= f
        dy *= f
    dz = _clip(dz, 0.0, cfg.reach_height)
    return dx, dy, dz, gyaw


def step(world: World, commands: Sequence, dt: float | None = None):
    """Advance one tick; returns (world, stages, status).

    Integration order: bases, grippers, grasp events, box, stages, status.
    Raises WorldTerminalError on a failed world; Success does not block
    stepping (delivery is a recorded status, the episode runs to timeout).
    """
    cfg = world.cfg
    if world.status == FAILURE:
        raise WorldTerminalError("stepping a failed world")
    if len(commands) != len(world.agents):
        raise MalformedCommandError(
            f"expected {len(world.agents)} commands, got {len(commands)}")
    dt = cfg.dt if dt is None else dt

    box = world.box
    clipped = [clip_command(c, cfg) for c in commands]

    for a, cmd in zip(world.agents, clipped):
        vx, vy, wz, tx, ty, tz, tyaw, grip = cmd
        c = math.cos(a.heading)
        s = math.sin(a.heading)
        a.x += dt * (vx * c - vy * s)
        a.y += dt * (vx * s + vy * c)
        a.heading = wrap_angle(a.heading + dt * wz)
        a.vx, a.vy, a.wz = vx, vy, wz
        a.dx, a.dy, a.dz, a.gyaw = track_gripper(
            a.dx, a.dy, a.dz, a.gyaw, tx, ty, tz, tyaw, cfg, dt)
        a.prev_command = cmd

    # gripper events: open releases, closed within tolerance of a free handle
    # latches (nearest first)
    for i, (a, cmd) in enumerate(zip(world.agents, clipped)):
        closed = cmd[7] >= 0.5
        if not closed:
            a.grasped_handle = None
            a.gripper_closed = False
            continue
        a.gripper_closed = True
        if a.grasped_handle is not None:
            continue
        gx, gy, gz = a.gripper_world()
        best, best_d = None, cfg.grasp_tol
        for h in (1, 2):
            if world.grasped_by_other(h, i):
                continue
            hx, hy, hz, _ = world.handle_world[h]
            d = math.sqrt((gx - hx) ** 2 + (gy - hy) ** 2 + (gz - hz) ** 2)
            if d <= best_d:
                best, best_d = h, d
        if best is not None:
            had_grasp = world.n_grasps > 0
            a.grasped_handle = best
            if a.assigned_handle != best:
                a.assigned_handle = best
                for j, other in enumerate(world.agents):
                    if j != i and other.assigned_handle == best:
                        other.assigned_handle = None
            box.yaw_offsets[best] = a.gripper_world_yaw() - box.yaw
            if not had_grasp:
                box.h_peak = box.height

    _update_box(world, dt)
    world._refresh_handles()

    if world.n_grasps > 0 and box.height > box.h_peak:
        box.h_peak = box.height

    gx0, gy0 = world.goal
    d = math.hypot(box.x - gx0, box.y - gy0)
    box.goal_vel = (box.prev_goal_dist - d) / dt
    box.prev_goal_dist = d
    world.box_goal_dist = d

    world.steps += 1

    # stage allocation, agents in index order so assignment ties resolve by index
    stages = []
    for i, a in enumerate(world.agents):
        a.candidate_handle = _candidate_handle(world, i)
        new = allocate_stage(world, i, a.stage, world.rules)
        if new.index == 1 and a.stage.index == 0 and a.assigned_handle is None:
            a.assigned_handle = a.candidate_handle
        a.stage = new
        stages.append(new)
        entry = (a.dx, a.dy, a.dz, math.cos(a.gyaw), math.sin(a.gyaw))
        a.offset_history.append(entry)
        if len(a.offset_history) > cfg.history_len:
            a.offset_history.pop(0)

    world.status = episode_status(world)
    if world.status == SUCCESS and world.first_success_time is None:
        world.first_success_time = world.clock
    return world, stages, world.status


def _update_box(world: World, dt: float):
    """Resolve the box pose from current grasps (pin / fit / fall)."""
    cfg = world.cfg
    box = world.box
    holders = [(i, a.grasped_handle) for i, a in enumerate(world.agents)
               if a.grasped_handle is not None]

    if not holders:
        if box.height > 0.0:
            box.height = max(0.0, box.height - cfg.fall_rate * dt)
        return

    if len(holders) == 1:
        ai, h = holders[0]
        a = world.agents[ai]
        gx, gy, gz = a.gripper_world()
        byaw = wrap_angle(a.gripper_world_yaw() - box.yaw_offsets.get(h, 0.0))
        sign = 1.0 if h == 1 else -1.0
        box.x = gx - sign * box.ex * math.cos(byaw)
        box.y = gy - sign * box.ex * math.sin(byaw)
        box.yaw = byaw
        if cfg.n_agents == 1:
            # full pin; the box floor-constrains the gripper instead of
            # breaking the grasp
            himp = gz - box.ez
            if himp <= 0.0:
                box.height = 0.0
                a.dz = box.ez
            else:
                box.height = himp
        else:
            # a single holder in dual mode drags the box on the ground; the
            # box is too heavy to lift one-handed, the gripper rides at
            # handle height
            if box.height > 0.0:
                box.height = max(0.0, box.height - cfg.fall_rate * dt)
            a.dz = box.height + box.ez
    else:
        byi = next(i for i, h in holders if h == 1)
        byj = next(i for i, h in holders if h == 2)
        a1 = world.agents[byi]
        a2 = world.agents[byj]
        g1 = a1.gripper_world()
        g2 = a2.gripper_world()
        box.x = 0.5 * (g1[0] + g2[0])
        box.y = 0.5 * (g1[1] + g2[1])
        box.yaw = math.atan2(g1[1] - g2[1], g1[0] - g2[0])
        himp = 0.5 * (g1[2] + g2[2]) - box.ez
        if himp <= 0.0:
            box.height = 0.0
            if a1.dz < box.ez:
                a1.dz = box.ez
            if a2.dz < box.ez:
                a2.dz = box.ez
        else:
            box.height = himp

    for i, h in holders:
        box.yaw_offsets[h] = world.agents[i].gripper_world_yaw() - box.yaw


def _candidate_handle(world: World, agent: int) -> int:
    """Handle the agent currently targets: its grasp, then its assignment,
    then the nearest free handle not assigned to someone else."""
    a = world.agents[agent]
    if a.grasped_handle is not None:
        return a.grasped_handle
    if a.assigned_handle is not None and not world.grasped_by_other(a.assigned_handle, agent):
        return a.assigned_handle
    gx, gy, gz = a.gripper_world()
    best, best_d = None, math.inf
    for h in (1, 2):
        if world.grasped_by_other(h, agent):
            continue
        if any(o.assigned_handle == h for j, o in enumerate(world.agents) if j != agent):
            continue
        hx, hy, hz, _ = world.handle_world[h]
        d = (gx - hx) ** 2 + (gy - hy) ** 2 + (gz - hz) ** 2
        if d < best_d:
            best, best_d = h, d
    return best if best is not None else (a.assigned_handle or 1)


def episode_status(world: World) -> str:
    """Pure classification of the current state."""
    cfg = world.cfg
    box = world.box
    if (world.box_goal_dist < cfg.success_radius and box.height <= 1e-9
            and world.n_grasps == 0):
        return SUCCESS
    for a in world.agents:
        if abs(a.x) > cfg.arena_half or abs(a.y) > cfg.arena_half:
            world.failure_reason = "out_of_arena"
            return FAILURE
    if world.clock >= cfg.timeout - 1e-9:
        world.failure_reason = "timeout"
        return FAILURE
    return RUNNING


def teleport_box(world: World, x: float, y: float, yaw: float | None = None):
    """Scripted disturbance: move the box, clearing every grasp.

    The goal-velocity bookkeeping is re-anchored so the jump does not show
    up as a spurious approach/retreat velocity.
    """
    box = world.box
    box.x = x
    box.y = y
    if yaw is not None:
        box.yaw = yaw
    box.height = 0.0
    box.h_peak = 0.0
    for a in world.agents:
        a.grasped_handle = None
    d = math.hypot(x - world.goal[0], y - world.goal[1])
    box.prev_goal_dist = d
    box.goal_vel = 0.0
    world.box_goal_dist = d
    world._refresh_handles()


# -- transition rules --------------------------------------------------------


def pnp_transition_rules(cfg: EpisodeConfig, mode: str = TEACHER) -> TransitionRuleSet:
    """Build the 7-stage manipulation rule set for one allocation mode.

    Teacher mode has backward edges {1->0, 2->0, 3->2, 5->4} and, by
    construction, no way back to S0 from S4 on.  Student mode adds 4->0 and
    5->0 on a box-lost predicate so a displaced object restarts the chain.
    """

    def _ready(world, i):
        a = world.agents[i]
        hx, hy, hz, hyaw = world.handle_world[a.candidate_handle]
        gx, gy, gz = a.gripper_world()
        if math.hypot(gx - hx, gy - hy) >= cfg.ready_xy:
            return False
        if abs(math.cos(a.gripper_world_yaw() - hyaw)) <= cfg.ready_cos:
            return False
        return gz - hz >= cfg.ready_above

    def _aligned(world, i):
        a = world.agents[i]
        hx, hy, hz, hyaw = world.handle_world[a.candidate_handle]
        gx, gy, gz = a.gripper_world()
        return (math.hypot(gx - hx, gy - hy) < cfg.ready_xy
                and abs(math.cos(a.gripper_world_yaw() - hyaw)) > cfg.ready_cos)

    def _grasped(world, i):
        return world.agents[i].grasped_handle is not None

    def _required_grasps(world, i):
        if world.cfg.n_agents == 1:
            return world.agents[i].grasped_handle is not None
        got = {a.grasped_handle for a in world.agents if a.grasped_handle}
        return got == {1, 2}

    def f01(world, i):
        return _ready(world, i)

    def f12(world, i):
        return _grasped(world, i)

    def f23(world, i):
        return world.box.height > cfg.lift_height and _required_grasps(world, i)

    def f34(world, i):
        return (world.box_goal_dist < cfg.success_radius
                and world.box.height > cfg.carried_height)

    def f45(world, i):
        return (world.box.height < cfg.place_height
                and world.box_goal_dist < cfg.success_radius
                and _grasped(world, i))

    def f56(world, i):
        return world.n_grasps == 0 and world.box_goal_dist < cfg.success_radius

    def b10(world, i):
        return not _aligned(world, i)

    def b20(world, i):
        return not _grasped(world, i)

    def b32(world, i):
        # object no longer lifted: slipped down or grasp lost entirely
        return (world.box.height < cfg.carried_height
                or not _required_grasps(world, i))

    def b54(world, i):
        return world.box.height >= cfg.carried_height

    backward = [
        BackwardEdge(1, 0, b10),
        BackwardEdge(2, 0, b20),
        BackwardEdge(3, 2, b32),
        BackwardEdge(5, 4, b54),
    ]

    if mode == STUDENT:
        def box_lost(world, i):
            return (world.n_grasps == 0 and world.box.height <= 1e-9
                    and world.box_goal_dist > cfg.lost_dist)

        backward.append(BackwardEdge(4, 0, box_lost))
        backward.append(BackwardEdge(5, 0, box_lost))

    return TransitionRuleSet(
        stages=PNP_STAGES,
        forward=(f01, f12, f23, f34, f45, f56),
        backward=tuple(backward),
        mode=mode,
    )


# -- observations ------------------------------------------------------------


@dataclass(frozen=True)
class ObsLayout:
    mode: str
    dim: int
    blocks: dict  # name -> slice


def obs_layout(mode: str, history_len: int = 5) -> ObsLayout:
    if mode == TEACHER:
        sizes = [("o_ego", 10), ("o_goal", 5), ("o_object", 16),
                 ("o_neighbor", 10), ("stage", 7)]
    elif mode == STUDENT:
        sizes = [("o_ego", 5 + 5 * history_len), ("o_goal", 5),
                 ("o_object", 16), ("o_neighbor", 10)]
    else:
        raise WorldError(f"unknown observation mode {mode}")
    blocks = {}
    at = 0
    for name, n in sizes:
        blocks[name] = slice(at, at + n)
        at += n
    return ObsLayout(mode=mode, dim=at, blocks=blocks)


def observe(world: World, agent: int, mode: str = TEACHER,
            noise_rng=None, noise_sigma: float = 0.0) -> np.ndarray:
    """Per-agent observation vector; see obs_layout for the block layout.

    Teacher: exact features plus a stage one-hot.  Student: no stage block,
    the instantaneous gripper entries are replaced by a short history window,
    and Gaussian noise (noise_sigma) corrupts the goal / object / neighbor
    blocks.
    """
    cfg = world.cfg
    a = world.agents[agent]
    c = math.cos(a.heading)
    s = math.sin(a.heading)
    ax, ay = a.x, a.y

    def to_base(px, py):
        rx, ry = px - ax, py - ay
        return (c * rx + s * ry, -s * rx + c * ry)

    out = []
    if mode == TEACHER:
        out.extend((a.vx, a.vy, a.wz, a.dx, a.dy, a.dz,
                    math.cos(a.gyaw), math.sin(a.gyaw),
                    1.0 if a.gripper_closed else 0.0,
                    1.0 if a.grasped_handle is not None else 0.0))
    else:
        out.extend((a.vx, a.vy, a.wz,
                    1.0 if a.gripper_closed else 0.0,
                    1.0 if a.grasped_handle is not None else 0.0))
        for entry in a.offset_history:
            out.extend(entry)

    box = world.box
    gx0, gy0 = world.goal
    gbx, gby = to_base(gx0, gy0)
    d_bg = world.box_goal_dist
    if d_bg > 1e-9:
        uxw = (gx0 - box.x) / d_bg
        uyw = (gy0 - box.y) / d_bg
        ubx, uby = c * uxw + s * uyw, -s * uxw + c * uyw
    else:
        ubx = uby = 0.0
    out.extend((gbx * POS_SCALE, gby * POS_SCALE, d_bg / max(world.d0, 1e-9), ubx, uby))

    bx, by = to_base(box.x, box.y)
    byaw_rel = box.yaw - a.heading
    target = a.candidate_handle
    other = 2 if target == 1 else 1
    thx, thy, thz, thyaw = world.handle_world[target]
    ohx, ohy, ohz, _ = world.handle_world[other]
    tbx, tby = to_base(thx, thy)
    obx, oby = to_base(ohx, ohy)
    gwx, gwy, gwz = a.gripper_world()
    dyaw = a.gripper_world_yaw() - thyaw
    dxh, dyh = to_base(thx - gwx + ax, thy - gwy + ay)  # delta rotated to base
    out.extend((bx * POS_SCALE, by * POS_SCALE, box.height,
                math.cos(byaw_rel), math.sin(byaw_rel),
                tbx * POS_SCALE, tby * POS_SCALE, thz,
                obx * POS_SCALE, oby * POS_SCALE, ohz,
                dxh * POS_SCALE, dyh * POS_SCALE, thz - gwz,
                math.cos(dyaw), math.sin(dyaw)))

    if len(world.agents) > 1:
        n = world.agents[1 - agent]
        nx, ny = to_base(n.x, n.y)
        dh = n.heading - a.heading
        cn = math.cos(n.heading)
        sn = math.sin(n.heading)
        nvxw = cn * n.vx - sn * n.vy
        nvyw = sn * n.vx + cn * n.vy
        nvx, nvy = c * nvxw + s * nvyw, -s * nvxw + c * nvyw
        ngx, ngy, ngz = n.gripper_world()
        nbx, nby = to_base(ngx, ngy)
        out.extend((nx * POS_SCALE, ny * POS_SCALE, math.cos(dh), math.sin(dh),
                    nvx, nvy, nbx * POS_SCALE, nby * POS_SCALE, ngz,
                    1.0 if n.grasped_handle is not None else 0.0))
    else:
        out.extend((0.0,) * 10)

    obs = np.array(out, dtype=np.float64)

    if mode == STUDENT and noise_sigma > 0.0 and noise_rng is not None:
        lo = 5 + 5 * cfg.history_len  # start of o_goal
        obs[lo:] += noise_rng.normal(0.0, noise_sigma, size=obs.size - lo)
        return obs

    if mode == TEACHER:
        onehot = np.zeros(7)
        onehot[a.stage.index] = 1.0
        obs = np.concatenate([obs, onehot])
    return obs
