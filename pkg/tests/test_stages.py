from __future__ import annotations

import pytest

from stagerl.stages import (
    PNP_STAGES,
    BackwardEdge,
    StageGraphError,
    StageId,
    TransitionRuleSet,
    allocate_stage,
    allowed_transitions,
)
from stagerl.world import pnp_transition_rules

from conftest import hover_pose, make_world, place_box


def const(v):
    return lambda world, agent: v


def chain(n, forward_true=(), backward=()):
    stages = tuple(StageId(i, f"n{i}") for i in range(n))
    fwd = tuple(const(i in forward_true) for i in range(n - 1))
    return TransitionRuleSet(stages=stages, forward=fwd, backward=tuple(backward))


class TestAllocator:
    def test_forward_fires(self):
        rules = chain(3, forward_true={0})
        assert allocate_stage(None, 0, rules.stages[0], rules).index == 1

    def test_holds_when_nothing_fires(self):
        rules = chain(3)
        assert allocate_stage(None, 0, rules.stages[1], rules).index == 1

    def test_terminal_absorbing(self):
        rules = chain(3, forward_true={0, 1}, backward=[BackwardEdge(2, 0, const(True))])
        # backward edge out of the terminal stage never fires: absorbing wins
        assert allocate_stage(None, 0, rules.stages[2], rules).index == 2

    def test_forward_checked_before_backward(self):
        rules = chain(4, forward_true={1}, backward=[BackwardEdge(1, 0, const(True))])
        assert allocate_stage(None, 0, rules.stages[1], rules).index == 2

    def test_at_most_one_step_forward(self):
        rules = chain(4, forward_true={0, 1, 2})
        assert allocate_stage(None, 0, rules.stages[0], rules).index == 1

    def test_backward_edge_fires(self):
        rules = chain(4, backward=[BackwardEdge(2, 0, const(True))])
        assert allocate_stage(None, 0, rules.stages[2], rules).index == 0

    def test_backward_scan_order(self):
        rules = chain(4, backward=[BackwardEdge(2, 1, const(True)),
                                   BackwardEdge(2, 0, const(True))])
        assert allocate_stage(None, 0, rules.stages[2], rules).index == 1


class TestRuleSetValidation:
    def test_teacher_cannot_restart_from_late_stages(self):
        stages = tuple(StageId(i, f"n{i}") for i in range(7))
        fwd = tuple(const(False) for _ in range(6))
        with pytest.raises(StageGraphError):
            TransitionRuleSet(stages=stages, forward=fwd,
                              backward=(BackwardEdge(4, 0, const(True)),))

    def test_student_may_restart_from_late_stages(self):
        stages = tuple(StageId(i, f"n{i}") for i in range(7))
        fwd = tuple(const(False) for _ in range(6))
        rules = TransitionRuleSet(stages=stages, forward=fwd,
                                  backward=(BackwardEdge(4, 0, const(True)),),
                                  mode="student")
        assert allocate_stage(None, 0, rules.stages[4], rules).index == 0

    def test_forward_arity_checked(self):
        stages = tuple(StageId(i, f"n{i}") for i in range(3))
        with pytest.raises(StageGraphError):
            TransitionRuleSet(stages=stages, forward=(const(True),), backward=())

    def test_malformed_backward_edge(self):
        stages = tuple(StageId(i, f"n{i}") for i in range(3))
        fwd = tuple(const(False) for _ in range(2))
        with pytest.raises(StageGraphError):
            TransitionRuleSet(stages=stages, forward=fwd,
                              backward=(BackwardEdge(1, 1, const(True)),))


class TestAllowedTransitions:
    def test_teacher_edge_set(self):
        w = make_world()
        edges = {(a.index, b.index) for a, b in allowed_transitions(w.rules)}
        for i in range(6):
            assert (i, i + 1) in edges
        assert (1, 0) in edges
        assert (2, 0) in edges
        assert (3, 2) in edges
        assert (5, 4) in edges
        assert (4, 0) not in edges
        assert (5, 0) not in edges
        assert len(edges) == 10

    def test_student_edge_set_adds_restarts(self):
        w = make_world(mode="student")
        edges = {(a.index, b.index) for a, b in allowed_transitions(w.rules)}
        assert (4, 0) in edges
        assert (5, 0) in edges
        assert len(edges) == 12

    def test_stable_order(self):
        w = make_world()
        assert allowed_transitions(w.rules) == allowed_transitions(w.rules)


class TestPnpPredicates:
    def test_ready_pose_advances(self):
        w = make_world()
        hover_pose(w, 0, 1)
        w.agents[0].candidate_handle = 1
        assert allocate_stage(w, 0, PNP_STAGES[0], w.rules).index == 1

    def test_ready_needs_clearance_above(self):
        w = make_world()
        a = hover_pose(w, 0, 1, above=0.01)
        w.agents[0].candidate_handle = 1
        assert allocate_stage(w, 0, PNP_STAGES[0], w.rules).index == 0

    def test_grasp_lost_falls_back_to_idle(self):
        w = make_world()
        w.agents[0].grasped_handle = None
        assert allocate_stage(w, 0, PNP_STAGES[2], w.rules).index == 0

    def test_descending_gripper_stays_ready(self):
        # alignment holds while the clearance condition no longer does
        w = make_world()
        hover_pose(w, 0, 1, above=0.005)
        w.agents[0].candidate_handle = 1
        assert allocate_stage(w, 0, PNP_STAGES[1], w.rules).index == 1

    def test_transport_drop_funnels_down(self):
        w = make_world()
        place_box(w, 2.0, 0.0, height=0.0)
        w.agents[0].grasped_handle = None
        assert allocate_stage(w, 0, PNP_STAGES[3], w.rules).index == 2
        assert allocate_stage(w, 0, PNP_STAGES[2], w.rules).index == 0

    def test_teacher_stuck_at_s4_when_box_lost(self):
        # object dropped far from the goal at S4: teacher has no edge, holds
        w = make_world()
        place_box(w, 3.0, 0.0, height=0.0)
        w.agents[0].grasped_handle = None
        assert allocate_stage(w, 0, PNP_STAGES[4], w.rules).index == 4

    def test_student_restarts_when_box_lost(self):
        w = make_world(mode="student")
        place_box(w, 3.0, 0.0, height=0.0)
        w.agents[0].grasped_handle = None
        assert allocate_stage(w, 0, PNP_STAGES[4], w.rules).index == 0

    def test_student_holds_s4_when_box_still_near_goal(self):
        w = make_world(mode="student")
        place_box(w, 0.4, 0.0, height=0.0)
        w.agents[0].grasped_handle = None
        assert allocate_stage(w, 0, PNP_STAGES[4], w.rules).index == 4

    def test_lift_requires_both_handles_in_dual(self):
        w = make_world(n_agents=2)
        place_box(w, 1.0, 0.0, height=0.25)
        w.agents[0].grasped_handle = 1
        w.agents[1].grasped_handle = None
        assert allocate_stage(w, 0, PNP_STAGES[2], w.rules).index == 2
        w.agents[1].grasped_handle = 2
        assert allocate_stage(w, 0, PNP_STAGES[2], w.rules).index == 3

    def test_release_in_goal_reaches_terminal(self):
        w = make_world()
        place_box(w, 0.2, 0.0, height=0.0)
        w.agents[0].grasped_handle = None
        assert allocate_stage(w, 0, PNP_STAGES[5], w.rules).index == 6

    def test_replaced_object_relifts_to_s4(self):
        w = make_world()
        place_box(w, 0.2, 0.0, height=0.15)
        w.agents[0].grasped_handle = 1
        assert allocate_stage(w, 0, PNP_STAGES[5], w.rules).index == 4
