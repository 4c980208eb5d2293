"""Stage reward terms and fixed penalties for the manipulation task.

Each term is registered with the stage it belongs to, a scale cap for the
adaptive curriculum, and its supremum over reachable contexts (consumed by
the gated baselines).  Terms are cheap pure functions of a RewardContext;
every registered term is evaluated every step, the curriculum scales decide
how much each one matters.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .curriculum import RewardTermSpec
from .world import EpisodeConfig, World, _assets_min_ez

# object_height saturates here; also the target the lift stage aims for
LIFT_REWARD_CEIL = 0.3


class RewardError(ValueError):
    pass


@dataclass
class RewardContext:
    """Everything a term may read, frozen for one (step, agent) evaluation."""

    world: World
    agent: int
    handle: int
    grasp_prob: float
    d0: float
    h_peak: float
    stage: int


def make_context(world: World, agent: int, grasp_prob: float) -> RewardContext:
    a = world.agents[agent]
    return RewardContext(
        world=world,
        agent=agent,
        handle=a.candidate_handle,
        grasp_prob=grasp_prob,
        d0=world.d0,
        h_peak=world.box.h_peak,
        stage=a.stage.index,
    )


def _gripper_handle(ctx):
    a = ctx.world.agents[ctx.agent]
    hx, hy, hz, hyaw = ctx.world.handle_world[ctx.handle]
    gx, gy, gz = a.gripper_world()
    return a, gx, gy, gz, hx, hy, hz, hyaw


def gripper_ready_pose(ctx: RewardContext) -> float:
    a, gx, gy, gz, hx, hy, hz, hyaw = _gripper_handle(ctx)
    d_xy = math.hypot(gx - hx, gy - hy)
    return math.exp(-3.0 * d_xy) * abs(math.cos(a.gripper_world_yaw() - hyaw))


def gripper_grasp_pose(ctx: RewardContext) -> float:
    a, gx, gy, gz, hx, hy, hz, hyaw = _gripper_handle(ctx)
    d_z = abs(gz - hz)
    return math.exp(-10.0 * d_z) * abs(math.cos(a.gripper_world_yaw() - hyaw))


def object_grabbed(ctx: RewardContext) -> float:
    return 1.0 if ctx.world.agents[ctx.agent].grasped_handle is not None else 0.0


def grab_action(ctx: RewardContext) -> float:
    p = ctx.grasp_prob
    if ctx.world.agents[ctx.agent].grasped_handle is not None:
        return p
    return 1.0 - p


def object_height(ctx: RewardContext) -> float:
    return min(ctx.world.box.height, LIFT_REWARD_CEIL)


def object_to_goal_vel(ctx: RewardContext) -> float:
    return 1.0 - math.exp(-2.0 * ctx.world.box.goal_vel)


def object_to_goal_dist(ctx: RewardContext) -> float:
    return math.exp(-2.0 * ctx.world.box_goal_dist / max(ctx.d0, 1e-9))


def object_drop(ctx: RewardContext) -> float:
    return max(0.0, ctx.h_peak - ctx.world.box.height)


def grab_action_in_range(ctx: RewardContext) -> float:
    if ctx.stage < 5:
        return 0.0
    return max(0.0, 0.5 - ctx.grasp_prob)


def released_in_goal(ctx: RewardContext) -> float:
    w = ctx.world
    if (w.box_goal_dist < w.cfg.success_radius and w.box.height <= 1e-9
            and w.agents[ctx.agent].grasped_handle is None):
        return 1.0
    return 0.0


def stage_progress(ctx: RewardContext) -> float:
    return float(ctx.stage)


def arm_default_pose(ctx: RewardContext) -> float:
    a = ctx.world.agents[ctx.agent]
    d0x, d0y, d0z = ctx.world.cfg.default_offset
    d = math.sqrt((a.dx - d0x) ** 2 + (a.dy - d0y) ** 2 + (a.dz - d0z) ** 2)
    return math.exp(-2.0 * d)


_TERM_FNS = {
    "gripper_ready_pose": gripper_ready_pose,
    "gripper_grasp_pose": gripper_grasp_pose,
    "object_grabbed": object_grabbed,
    "grab_action": grab_action,
    "object_height": object_height,
    "object_to_goal_vel": object_to_goal_vel,
    "object_to_goal_dist": object_to_goal_dist,
    "object_drop": object_drop,
    "grab_action_in_range": grab_action_in_range,
    "released_in_goal": released_in_goal,
    "stage_progress": stage_progress,
    "arm_default_pose": arm_default_pose,
}

# (stage, cap) per term
_TERM_TABLE = {
    "gripper_ready_pose": (0, 2.0),
    "gripper_grasp_pose": (1, 20.0),
    "object_grabbed": (1, 10.0),
    "grab_action": (1, 0.2),
    "object_height": (2, 100.0),
    "object_to_goal_vel": (3, 50.0),
    "object_to_goal_dist": (3, 50.0),
    "object_drop": (4, 100.0),
    "grab_action_in_range": (5, 100.0),
    "released_in_goal": (6, 100.0),
    "stage_progress": (6, 2.0),
    "arm_default_pose": (6, 20.0),
}


def max_carry_speed(cfg: EpisodeConfig) -> float:
    """Upper bound on how fast a carried box can approach the goal."""
    return cfg.base_vel_limit + cfg.gripper_rate


def term_specs(cfg: EpisodeConfig) -> tuple[RewardTermSpec, ...]:
    """Registry with caps and configuration-dependent suprema."""
    sups = {
        "gripper_ready_pose": 1.0,
        "gripper_grasp_pose": 1.0,
        "object_grabbed": 1.0,
        "grab_action": 1.0,
        "object_height": LIFT_REWARD_CEIL,
        "object_to_goal_vel": 1.0 - math.exp(-2.0 * max_carry_speed(cfg)),
        "object_to_goal_dist": 1.0,
        "object_drop": cfg.reach_height - _assets_min_ez(cfg),
        "grab_action_in_range": 0.5,
        "released_in_goal": 1.0,
        "stage_progress": 6.0,
        "arm_default_pose": 1.0,
    }
    return tuple(
        RewardTermSpec(term_id=tid, stage=stage, cap=cap, sup_value=sups[tid])
        for tid, (stage, cap) in _TERM_TABLE.items()
    )


def eval_stage_term(term_id: str, ctx: RewardContext) -> float:
    try:
        fn = _TERM_FNS[term_id]
    except KeyError:
        raise RewardError(f"unknown reward term {term_id}") from None
    return fn(ctx)


def eval_all_terms(ctx: RewardContext) -> dict:
    """Every registered term for one (step, agent); dict keyed by term id."""
    return {tid: fn(ctx) for tid, fn in _TERM_FNS.items()}


@dataclass(frozen=True)
class FixedRewardWeights:
    action_reg: float = 0.01   # squared command-delta penalty
    collision: float = 1.0     # overlap indicator penalty
    out_of_reach: float = 0.1  # gripper target outside the reach envelope


def eval_fixed(world: World, agent: int, prev_command, command,
               weights: FixedRewardWeights = FixedRewardWeights()) -> float:
    """Stage-independent penalties: action smoothness, overlap, infeasible
    gripper targets.  Commands are post-clip vectors; the out-of-reach part
    measures how far the xy target pokes outside the cylindrical envelope
    (box-clipped corners can still do that)."""
    cfg = world.cfg
    total = 0.0

    if prev_command is not None and weights.action_reg != 0.0:
        d = 0.0
        for a, b in zip(command, prev_command):
            d += (a - b) ** 2
        total -= weights.action_reg * d

    if weights.collision != 0.0 and _overlapping(world, agent):
        total -= weights.collision

    if weights.out_of_reach != 0.0:
        r = math.hypot(command[3], command[4])
        excess = max(0.0, r - cfg.reach_radius)
        excess += max(0.0, command[5] - cfg.reach_height) + max(0.0, -command[5])
        if excess > 0.0:
            total -= weights.out_of_reach * excess
    return total


def _overlapping(world: World, agent: int) -> bool:
    cfg = world.cfg
    a = world.agents[agent]
    for j, o in enumerate(world.agents):
        if j == agent:
            continue
        if math.hypot(a.x - o.x, a.y - o.y) < 2.0 * cfg.agent_radius:
            return True
    box = world.box
    # coarse footprint check in the box frame
    cb = math.cos(-box.yaw)
    sb = math.sin(-box.yaw)
    rx, ry = a.x - box.x, a.y - box.y
    lx = cb * rx - sb * ry
    ly = sb * rx + cb * ry
    return (abs(lx) < box.ex + cfg.agent_radius * 0.5
            and abs(ly) < box.ey + cfg.agent_radius * 0.5
            and box.height < 0.3)
