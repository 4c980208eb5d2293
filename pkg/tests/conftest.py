from __future__ import annotations

import math

import numpy as np
import pytest

from stagerl.world import EpisodeConfig, World, reset_episode


def make_world(n_agents=1, mode="teacher", seed=0, **cfg_kw) -> World:
    cfg = EpisodeConfig(n_agents=n_agents, **cfg_kw)
    return reset_episode(cfg, np.random.default_rng(seed), mode=mode)


def place_agent(world: World, i: int, x, y, heading=0.0, dx=0.45, dy=0.0, dz=0.35,
                gyaw=0.0):
    a = world.agents[i]
    a.x, a.y, a.heading = x, y, heading
    a.dx, a.dy, a.dz, a.gyaw = dx, dy, dz, gyaw
    world._refresh_handles()
    return a


def place_box(world: World, x, y, yaw=0.0, height=0.0):
    b = world.box
    b.x, b.y, b.yaw, b.height = x, y, yaw, height
    world.box_goal_dist = math.hypot(x - world.goal[0], y - world.goal[1])
    b.prev_goal_dist = world.box_goal_dist
    world._refresh_handles()
    return b


def hover_pose(world: World, i: int, handle: int, above=0.06):
    """Move agent i's gripper right above the handle, aligned in yaw."""
    hx, hy, hz, hyaw = world.handle_world[handle]
    a = world.agents[i]
    # base one reach-third away from the handle, gripper offset makes up the rest
    a.x, a.y, a.heading = hx - 0.4, hy, 0.0
    a.dx, a.dy, a.dz = 0.4, 0.0, hz + above
    a.gyaw = hyaw
    return a


@pytest.fixture
def world():
    return make_world()
