from __future__ import annotations

import math

import numpy as np
import pytest

from stagerl.world import (
    FAILURE,
    RUNNING,
    SUCCESS,
    BoxState,
    EpisodeConfig,
    MalformedCommandError,
    PlacementError,
    WorldError,
    WorldTerminalError,
    clip_command,
    episode_status,
    handle_pose,
    obs_layout,
    observe,
    reset_episode,
    step,
    teleport_box,
)

from conftest import hover_pose, make_world, place_agent, place_box

HOLD = (0.0, 0.0, 0.0, 0.45, 0.0, 0.35, 0.0, 0.0)


def cmd(vx=0.0, vy=0.0, wz=0.0, ex=0.45, ey=0.0, ez=0.35, eyaw=0.0, grip=0.0):
    return (vx, vy, wz, ex, ey, ez, eyaw, grip)


class TestHandlePose:
    def test_axis_aligned(self):
        b = BoxState(x=0, y=0, yaw=0.0, height=0.0, ex=0.2, ey=0.15, ez=0.1, mass=1.0)
        assert handle_pose(b, 1) == pytest.approx((0.2, 0.0, 0.1, 0.0))
        x, y, z, yaw = handle_pose(b, 2)
        assert (x, y, z) == pytest.approx((-0.2, 0.0, 0.1))
        assert abs(yaw) == pytest.approx(math.pi)

    def test_yawed_pi(self):
        b = BoxState(x=0, y=0, yaw=math.pi, height=0.0, ex=0.2, ey=0.15, ez=0.1, mass=1.0)
        x, y, z, yaw = handle_pose(b, 1)
        assert x == pytest.approx(-0.2)
        assert y == pytest.approx(0.0, abs=1e-12)
        assert z == pytest.approx(0.1)
        assert abs(yaw) == pytest.approx(math.pi)

    def test_height_offsets_z(self):
        b = BoxState(x=0, y=0, yaw=0.0, height=0.3, ex=0.2, ey=0.15, ez=0.1, mass=1.0)
        assert handle_pose(b, 1)[2] == pytest.approx(0.4)

    def test_unknown_handle(self):
        b = BoxState(x=0, y=0, yaw=0.0, height=0.0, ex=0.2, ey=0.15, ez=0.1, mass=1.0)
        with pytest.raises(WorldError):
            handle_pose(b, 3)


class TestReset:
    def test_deterministic(self):
        a = make_world(seed=7)
        b = make_world(seed=7)
        assert a.snapshot() == b.snapshot()
        assert a.d0 == b.d0

    def test_seed_changes_layout(self):
        assert make_world(seed=1).snapshot() != make_world(seed=2).snapshot()

    def test_distances_within_range(self):
        for seed in range(30):
            w = make_world(seed=seed, n_agents=2)
            lo, hi = w.cfg.init_distance_range
            assert lo <= math.hypot(w.box.x, w.box.y) <= hi
            for a in w.agents:
                assert lo <= math.hypot(a.x, a.y) <= hi + 1e-9

    def test_box_scale_applied(self):
        seen = set()
        for seed in range(40):
            w = make_world(seed=seed)
            seen.add(round(w.box.ex, 4))
        assert len(seen) > 10  # scales vary per episode

    def test_impossible_placement_raises(self):
        cfg_kw = dict(init_distance_range=(0.6, 0.6), min_spawn_sep=3.0)
        with pytest.raises(PlacementError):
            make_world(n_agents=2, seed=0, **cfg_kw)

    def test_agents_not_inside_box(self):
        for seed in range(30):
            w = make_world(seed=seed, n_agents=2)
            for a in w.agents:
                d = math.hypot(a.x - w.box.x, a.y - w.box.y)
                assert d >= max(w.box.ex, w.box.ey) + w.cfg.agent_radius


class TestCommands:
    def test_clipping(self):
        cfg = EpisodeConfig()
        out = clip_command((9, -9, 9, 9, -9, 9, 9, 0.7), cfg)
        assert out == (1.5, -1.5, 1.5, 0.8, -0.8, 0.6, math.pi, 1.0)

    def test_grip_threshold(self):
        cfg = EpisodeConfig()
        assert clip_command(cmd(grip=0.49), cfg)[7] == 0.0
        assert clip_command(cmd(grip=0.5), cfg)[7] == 1.0

    def test_arity_rejected(self, world):
        with pytest.raises(MalformedCommandError):
            step(world, [(0.0,) * 7])

    def test_non_finite_rejected(self, world):
        bad = list(HOLD)
        bad[0] = float("nan")
        with pytest.raises(MalformedCommandError):
            step(world, [tuple(bad)])

    def test_command_count_must_match_agents(self, world):
        with pytest.raises(MalformedCommandError):
            step(world, [HOLD, HOLD])


class TestKinematics:
    def test_base_integration_in_base_frame(self, world):
        a = place_agent(world, 0, 0.0, -3.0, heading=math.pi / 2)
        step(world, [cmd(vx=1.0)])
        # +x in the base frame points along world +y at heading pi/2
        assert a.x == pytest.approx(0.0, abs=1e-12)
        assert a.y == pytest.approx(-2.9)

    def test_gripper_rate_limit(self, world):
        a = world.agents[0]
        start = (a.dx, a.dy, a.dz)
        step(world, [cmd(ex=0.8, ey=0.0, ez=0.6)])
        moved = math.dist(start, (a.dx, a.dy, a.dz))
        assert moved <= world.cfg.gripper_rate * world.cfg.dt + 1e-12

    def test_reach_envelope_respected_under_fuzz(self):
        w = make_world(seed=3)
        rng = np.random.default_rng(0)
        for _ in range(300):
            c = tuple(rng.uniform(-3, 3, size=8))
            step(w, [c])
            a = w.agents[0]
            assert math.hypot(a.dx, a.dy) <= w.cfg.reach_radius + 1e-9
            assert -1e-12 <= a.dz <= w.cfg.reach_height + 1e-9
            if w.status == FAILURE:
                break

    def test_clock_advances_in_steps(self, world):
        step(world, [HOLD])
        step(world, [HOLD])
        assert world.steps == 2
        assert world.clock == pytest.approx(0.2)


def grasp_single(world, handle=1):
    """Drive agent 0 into a latched grasp of the given handle."""
    hover_pose(world, 0, handle, above=0.0)
    a = world.agents[0]
    hx, hy, hz, hyaw = world.handle_world[handle]
    step(world, [cmd(ex=a.dx, ey=a.dy, ez=a.dz, eyaw=a.gyaw, grip=1.0)])
    return a


class TestGrasp:
    def test_latch_within_tolerance(self, world):
        a = grasp_single(world)
        assert a.grasped_handle == 1
        assert a.assigned_handle == 1

    def test_no_latch_when_open(self, world):
        hover_pose(world, 0, 1, above=0.0)
        a = world.agents[0]
        step(world, [cmd(ex=a.dx, ey=a.dy, ez=a.dz, grip=0.0)])
        assert a.grasped_handle is None

    def test_no_latch_outside_tolerance(self, world):
        hover_pose(world, 0, 1, above=0.2)
        a = world.agents[0]
        step(world, [cmd(ex=a.dx, ey=a.dy, ez=a.dz, grip=1.0)])
        assert a.grasped_handle is None

    def test_open_releases(self, world):
        a = grasp_single(world)
        step(world, [cmd(ex=a.dx, ey=a.dy, ez=a.dz, grip=0.0)])
        assert a.grasped_handle is None
        assert not a.gripper_closed

    def test_grasp_rigidity_under_motion(self, world):
        a = grasp_single(world)
        rng = np.random.default_rng(1)
        for _ in range(120):
            c = (rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1),
                 rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8),
                 rng.uniform(0, 0.6), rng.uniform(-3, 3), 1.0)
            step(world, [c])
            if world.status == FAILURE:
                break
            assert a.grasped_handle == 1
            hx, hy, hz, _ = world.handle_world[1]
            gx, gy, gz = a.gripper_world()
            assert math.dist((gx, gy, gz), (hx, hy, hz)) <= 1e-9

    def test_lift_follows_gripper(self, world):
        a = grasp_single(world)
        for _ in range(10):
            step(world, [cmd(ex=a.dx, ey=a.dy, ez=0.55, grip=1.0)])
        assert world.box.height == pytest.approx(0.55 - world.box.ez)
        assert world.box.h_peak == pytest.approx(world.box.height)

    def test_push_through_floor_constrains_gripper(self, world):
        a = grasp_single(world)
        for _ in range(10):
            step(world, [cmd(ex=a.dx, ey=a.dy, ez=0.0, grip=1.0)])
        assert world.box.height == 0.0
        assert a.dz == pytest.approx(world.box.ez)
        assert a.grasped_handle == 1

    def test_released_box_falls(self, world):
        a = grasp_single(world)
        for _ in range(10):
            step(world, [cmd(ex=a.dx, ey=a.dy, ez=0.55, grip=1.0)])
        step(world, [cmd(ex=a.dx, ey=a.dy, ez=0.55, grip=0.0)])
        h1 = world.box.height
        step(world, [cmd(ex=a.dx, ey=a.dy, ez=0.55, grip=0.0)])
        assert world.box.height < h1
        for _ in range(5):
            step(world, [cmd(ex=a.dx, ey=a.dy, ez=0.55, grip=0.0)])
        assert world.box.height == 0.0

    def test_yawing_gripper_rotates_box(self, world):
        a = grasp_single(world)
        yaw0 = world.box.yaw
        for _ in range(4):
            step(world, [cmd(ex=a.dx, ey=a.dy, ez=a.dz, eyaw=a.gyaw + 0.5, grip=1.0)])
        assert abs(world.box.yaw - yaw0) > 0.05


class TestDualGrasp:
    def make_held(self):
        w = make_world(n_agents=2, seed=11)
        place_box(w, 2.0, 0.0, yaw=0.0)
        b = w.box
        h1 = w.handle_world[1]
        h2 = w.handle_world[2]
        place_agent(w, 0, h1[0] + 0.4, h1[1], heading=math.pi, dx=0.4, dy=0.0, dz=h1[2])
        w.agents[0].gyaw = -math.pi  # world yaw 0 after composing with heading
        place_agent(w, 1, h2[0] - 0.4, h2[1], heading=0.0, dx=0.4, dy=0.0, dz=h2[2])
        hold0 = cmd(ex=0.4, ey=0.0, ez=h1[2], eyaw=w.agents[0].gyaw, grip=1.0)
        hold1 = cmd(ex=0.4, ey=0.0, ez=h2[2], eyaw=0.0, grip=1.0)
        step(w, [hold0, hold1])
        return w, hold0, hold1

    def test_both_latch_distinct_handles(self):
        w, *_ = self.make_held()
        got = {w.agents[0].grasped_handle, w.agents[1].grasped_handle}
        assert got == {1, 2}

    def test_solo_grasp_cannot_lift(self):
        w = make_world(n_agents=2, seed=11)
        place_box(w, 2.0, 0.0, yaw=0.0)
        h1 = w.handle_world[1]
        place_agent(w, 0, h1[0] + 0.4, h1[1], heading=math.pi, dx=0.4, dy=0.0, dz=h1[2])
        w.agents[0].gyaw = -math.pi
        far = cmd(ex=0.1, ey=0.0, ez=0.5)
        hold = cmd(ex=0.4, ey=0.0, ez=h1[2], eyaw=-math.pi, grip=1.0)
        step(w, [hold, far])
        assert w.agents[0].grasped_handle == 1
        for _ in range(8):
            step(w, [cmd(ex=0.4, ey=0.0, ez=0.6, eyaw=-math.pi, grip=1.0), far])
        assert w.box.height == 0.0
        # the gripper rides at handle height instead of lifting
        assert w.agents[0].dz == pytest.approx(w.box.ez)

    def test_solo_grasp_drags_planar(self):
        w = make_world(n_agents=2, seed=11)
        place_box(w, 2.0, 0.0, yaw=0.0)
        h1 = w.handle_world[1]
        place_agent(w, 0, h1[0] + 0.4, h1[1], heading=math.pi, dx=0.4, dy=0.0, dz=h1[2])
        w.agents[0].gyaw = -math.pi
        far = cmd(ex=0.1, ey=0.0, ez=0.5)
        hold = cmd(ex=0.4, ey=0.0, ez=h1[2], eyaw=-math.pi, grip=1.0)
        step(w, [hold, far])
        bx0 = w.box.x
        for _ in range(5):
            step(w, [cmd(vx=-1.0, ex=0.4, ey=0.0, ez=h1[2], eyaw=-math.pi, grip=1.0), far])
        assert w.box.x != pytest.approx(bx0)
        assert w.box.height == 0.0

    def test_dual_lift_averages_heights(self):
        w, hold0, hold1 = self.make_held()
        up0 = list(hold0)
        up0[5] = 0.5
        up1 = list(hold1)
        up1[5] = 0.4
        for _ in range(8):
            step(w, [tuple(up0), tuple(up1)])
        expect = 0.5 * (w.agents[0].dz + w.agents[1].dz) - w.box.ez
        assert w.box.height == pytest.approx(expect)
        assert w.box.height > 0.1

    def test_dual_fit_reconstructs_handles(self):
        w, hold0, hold1 = self.make_held()
        for _ in range(6):
            step(w, [hold0, hold1])
        for i, h in ((0, 1), (1, 2)):
            hx, hy, hz, _ = w.handle_world[h]
            gx, gy, gz = w.agents[i].gripper_world()
            assert math.hypot(gx - hx, gy - hy) <= 1e-6
        # coordinated symmetric hold: z residual zero as well
        assert abs(w.agents[0].gripper_world()[2]
                   - w.handle_world[1][2]) <= 1e-6


class TestStatus:
    def test_running_initially(self, world):
        assert world.status == RUNNING

    def test_success_when_grounded_released_in_goal(self, world):
        place_box(world, 0.49, 0.0, height=0.0)
        step(world, [HOLD])
        assert world.status == SUCCESS
        assert world.first_success_time == pytest.approx(world.clock)

    def test_not_success_outside_radius(self, world):
        place_box(world, 0.51, 0.0, height=0.0)
        step(world, [HOLD])
        assert world.status == RUNNING

    def test_not_success_while_grasped(self, world):
        place_box(world, 0.2, 0.0, height=0.0)
        a = grasp_single(world)
        assert world.status == RUNNING

    def test_timeout_failure(self):
        w = make_world(timeout=0.3)
        step(w, [HOLD])
        step(w, [HOLD])
        assert w.status == RUNNING
        step(w, [HOLD])
        assert w.status == FAILURE
        assert w.failure_reason == "timeout"

    def test_out_of_arena_failure(self, world):
        place_agent(world, 0, world.cfg.arena_half - 0.05, 0.0)
        step(world, [cmd(vx=1.0)])
        assert world.status == FAILURE
        assert world.failure_reason == "out_of_arena"

    def test_stepping_failed_world_raises(self):
        w = make_world(timeout=0.1)
        step(w, [HOLD])
        assert w.status == FAILURE
        with pytest.raises(WorldTerminalError):
            step(w, [HOLD])

    def test_success_does_not_block_stepping(self, world):
        place_box(world, 0.2, 0.0, height=0.0)
        step(world, [HOLD])
        assert world.status == SUCCESS
        t0 = world.first_success_time
        step(world, [HOLD])
        assert world.first_success_time == t0

    def test_success_at_timeout_reports_success(self):
        w = make_world(timeout=0.1)
        place_box(w, 0.2, 0.0, height=0.0)
        step(w, [HOLD])
        assert w.status == SUCCESS


class TestReplay:
    def test_same_commands_same_trajectory(self):
        rng = np.random.default_rng(5)
        cmds = [tuple(rng.uniform(-2, 2, size=8)) for _ in range(60)]
        snaps = []
        for _ in range(2):
            w = make_world(seed=9)
            for c in cmds:
                if w.status == FAILURE:
                    break
                step(w, [c])
            snaps.append(w.snapshot())
        assert snaps[0] == snaps[1]

    def test_d0_constant_within_episode(self, world):
        d0 = world.d0
        for _ in range(20):
            step(world, [cmd(vx=0.5)])
        assert world.d0 == d0


class TestTeleport:
    def test_clears_grasps_and_resets_peak(self, world):
        a = grasp_single(world)
        for _ in range(8):
            step(world, [cmd(ex=a.dx, ey=a.dy, ez=0.5, grip=1.0)])
        assert world.box.h_peak > 0.1
        teleport_box(world, 4.0, 4.0)
        assert a.grasped_handle is None
        assert world.box.height == 0.0
        assert world.box.h_peak == 0.0
        assert world.box_goal_dist == pytest.approx(math.hypot(4, 4))

    def test_no_velocity_spike(self, world):
        teleport_box(world, 5.0, 0.0)
        step(world, [HOLD])
        assert abs(world.box.goal_vel) < 1e-9


class TestObservations:
    def test_layout_dims(self):
        t = obs_layout("teacher")
        s = obs_layout("student", history_len=5)
        assert t.dim == 48
        assert s.dim == 61
        assert t.blocks["stage"] == slice(41, 48)
        assert "stage" not in s.blocks

    def test_obs_matches_layout_dim(self, world):
        obs = observe(world, 0, "teacher")
        assert obs.shape == (obs_layout("teacher").dim,)
        obs_s = observe(world, 0, "student")
        assert obs_s.shape == (obs_layout("student", world.cfg.history_len).dim,)

    def test_single_agent_neighbor_block_zero(self, world):
        layout = obs_layout("teacher")
        obs = observe(world, 0, "teacher")
        assert np.all(obs[layout.blocks["o_neighbor"]] == 0.0)

    def test_dual_neighbor_block_nonzero(self):
        w = make_world(n_agents=2, seed=4)
        layout = obs_layout("teacher")
        obs = observe(w, 0, "teacher")
        assert np.any(obs[layout.blocks["o_neighbor"]] != 0.0)

    def test_stage_onehot_tracks_stage(self, world):
        layout = obs_layout("teacher")
        hover_pose(world, 0, 1)
        a = world.agents[0]
        step(world, [cmd(ex=a.dx, ey=a.dy, ez=a.dz, eyaw=a.gyaw)])
        obs = observe(world, 0, "teacher")
        onehot = obs[layout.blocks["stage"]]
        assert onehot.sum() == 1.0
        assert onehot[world.agents[0].stage.index] == 1.0

    def test_student_equals_teacher_on_shared_blocks(self, world):
        t_layout = obs_layout("teacher")
        s_layout = obs_layout("student", world.cfg.history_len)
        t = observe(world, 0, "teacher")
        s = observe(world, 0, "student")
        for block in ("o_goal", "o_object", "o_neighbor"):
            assert np.array_equal(t[t_layout.blocks[block]], s[s_layout.blocks[block]])
        # ego: shared scalars present, instantaneous gripper entries replaced
        assert np.array_equal(s[:3], t[:3])          # base velocity
        assert np.array_equal(s[3:5], t[8:10])       # closed / grasped bits
        hist = s[5:5 + 5 * world.cfg.history_len].reshape(world.cfg.history_len, 5)
        assert np.array_equal(hist[-1, :3], t[3:6])  # newest entry = current offset

    def test_student_noise_applied_beyond_ego(self, world):
        rng1 = np.random.default_rng(0)
        noisy = observe(world, 0, "student", noise_rng=rng1, noise_sigma=0.05)
        clean = observe(world, 0, "student")
        lo = 5 + 5 * world.cfg.history_len
        assert np.array_equal(noisy[:lo], clean[:lo])
        assert not np.array_equal(noisy[lo:], clean[lo:])

    def test_noise_deterministic_given_rng(self, world):
        a = observe(world, 0, "student", noise_rng=np.random.default_rng(3), noise_sigma=0.02)
        b = observe(world, 0, "student", noise_rng=np.random.default_rng(3), noise_sigma=0.02)
        assert np.array_equal(a, b)

    def test_history_window_rolls(self, world):
        for k in range(8):
            step(world, [cmd(ex=0.8, ey=0.3, ez=0.5)])
        s = observe(world, 0, "student")
        hist = s[5:5 + 25].reshape(5, 5)
        assert not np.array_equal(hist[0], hist[-1])
        a = world.agents[0]
        assert hist[-1, 0] == pytest.approx(a.dx)
