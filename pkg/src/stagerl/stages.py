"""Stage graphs and per-step stage allocation.

A task is decomposed into an ordered chain of stages.  Forward edges advance
one stage at a time when their predicate fires; an explicit set of backward
edges handles regressions (lost grasp, dropped object).  Forward progress is
checked before backward, at most one transition happens per step, and the
last stage is absorbing within an episode.

Predicates are closures over whatever world representation the task uses, so
the same allocator drives both the 7-stage manipulation graph and the 5-node
waypoint-tracking graph.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence


class StageGraphError(ValueError):
    pass


@dataclass(frozen=True)
class StageId:
    index: int
    label: str

    def __repr__(self):
        return f"S{self.index}:{self.label}"


# Canonical labels for the manipulation chain.
PNP_STAGES: tuple[StageId, ...] = (
    StageId(0, "Idle"),
    StageId(1, "GripperReady"),
    StageId(2, "ObjectGrabbed"),
    StageId(3, "ObjectLifted"),
    StageId(4, "ObjectOnGoal"),
    StageId(5, "ObjectPlaced"),
    StageId(6, "Released"),
)

TEACHER = "teacher"
STUDENT = "student"

# predicate(world, agent_index) -> bool
Predicate = Callable[[object, int], bool]


@dataclass(frozen=True)
class BackwardEdge:
    src: int
    dst: int
    predicate: Predicate


@dataclass(frozen=True)
class TransitionRuleSet:
    """Forward chain plus backward edges for one allocation mode."""

    stages: tuple[StageId, ...]
    forward: tuple[Predicate, ...]
    backward: tuple[BackwardEdge, ...]
    mode: str = TEACHER

    def __post_init__(self):
        n = len(self.stages)
        if n < 1:
            raise StageGraphError("need at least one stage")
        if len(self.forward) != n - 1:
            raise StageGraphError(
                f"{n} stages need {n - 1} forward predicates, got {len(self.forward)}"
            )
        if self.mode not in (TEACHER, STUDENT):
            raise StageGraphError(f"unknown mode {self.mode!r}")
        for e in self.backward:
            if not (0 <= e.dst < e.src < n):
                raise StageGraphError(f"backward edge {e.src}->{e.dst} malformed")
            # teacher mode must not be able to restart from late stages:
            # no backward edge out of S4 or later into S0
            if self.mode == TEACHER and e.src >= 4 and e.dst == 0:
                raise StageGraphError(
                    f"teacher rules cannot contain {e.src}->0"
                )

    @property
    def n_stages(self) -> int:
        return len(self.stages)

    @property
    def terminal(self) -> StageId:
        return self.stages[-1]


def allocate_stage(world, agent: int, current: StageId, rules: TransitionRuleSet) -> StageId:
    """One allocation step: forward first, then backward, else hold.

    The terminal stage is absorbing.  Exactly one transition can happen per
    call; backward edges are scanned in registration order.
    """
    i = current.index
    if not (0 <= i < rules.n_stages):
        raise StageGraphError(f"current stage {i} outside graph")
    if i == rules.n_stages - 1:
        return current
    if rules.forward[i](world, agent):
        return rules.stages[i + 1]
    for e in rules.backward:
        if e.src == i and e.predicate(world, agent):
            return rules.stages[e.dst]
    return current


def allowed_transitions(rules: TransitionRuleSet) -> list[tuple[StageId, StageId]]:
    """Stable enumeration of every edge the allocator can take."""
    out = [
        (rules.stages[i], rules.stages[i + 1])
        for i in range(rules.n_stages - 1)
    ]
    out.extend((rules.stages[e.src], rules.stages[e.dst]) for e in rules.backward)
    return out
