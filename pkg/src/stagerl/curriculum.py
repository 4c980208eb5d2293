"""Per-episode multiplicative reward-scale adaptation.

Every stage reward term j carries a scale rho_j that multiplies its raw value
inside the composite reward

    R = R_fixed + sum_j rho_j * r_j .

Scales are constant within an episode.  At each episode boundary the terms
belonging to the stage the episode ended in are reinforced multiplicatively,
everything else is damped:

    active:   rho_j <- min(K * rho_j, cap_j)
    inactive: rho_j <- max(rho_j / K, mu_min)

so emphasis follows the frontier of what the policy can currently reach.  Once
an environment ends `freeze_threshold` consecutive episodes in the terminal
stage, its scales are frozen to a fixed vector and never adapted again.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence


class CurriculumError(ValueError):
    """Base class for curriculum misuse."""


class UnknownStageError(CurriculumError):
    pass


class UnknownTermError(CurriculumError):
    pass


@dataclass(frozen=True)
class RewardTermSpec:
    """Registration record for one stage reward term.

    cap is the ceiling for the adaptive scale; sup_value is the supremum of
    the raw term value over reachable contexts (used by the gated baselines).
    """

    term_id: str
    stage: int
    cap: float
    sup_value: float

    def __post_init__(self):
        if not self.term_id:
            raise CurriculumError("term_id must be non-empty")
        if self.stage < 0:
            raise UnknownStageError(f"term {self.term_id}: negative stage {self.stage}")
        if not (self.cap > 0.0):
            raise CurriculumError(f"term {self.term_id}: cap must be positive")
        if not (self.sup_value >= 0.0):
            raise CurriculumError(f"term {self.term_id}: sup_value must be >= 0")


@dataclass(frozen=True)
class CurriculumConfig:
    """Adaptation constants plus the term registry.

    frozen_scales: scale vector installed at freeze time; None means
    "freeze at each term's cap".
    """

    terms: tuple[RewardTermSpec, ...]
    n_stages: int
    k: float = 1.2
    mu_min: float = 0.01
    rho_init: float = 0.01
    freeze_threshold: int = 5
    frozen_scales: Mapping[str, float] | None = None

    def __post_init__(self):
        if self.k <= 1.0:
            raise CurriculumError("k must be > 1")
        if self.mu_min <= 0.0:
            raise CurriculumError("mu_min must be positive")
        if self.n_stages < 1:
            raise CurriculumError("n_stages must be >= 1")
        if self.freeze_threshold < 1:
            raise CurriculumError("freeze_threshold must be >= 1")
        ids = [t.term_id for t in self.terms]
        if len(set(ids)) != len(ids):
            raise CurriculumError("duplicate term ids in registry")
        for t in self.terms:
            if t.stage >= self.n_stages:
                raise UnknownStageError(
                    f"term {t.term_id}: stage {t.stage} outside 0..{self.n_stages - 1}"
                )
            if not (self.mu_min <= self.rho_init <= t.cap):
                raise CurriculumError(
                    f"term {t.term_id}: rho_init {self.rho_init} outside [mu_min, cap]"
                )
        if self.frozen_scales is not None:
            for t in self.terms:
                if t.term_id not in self.frozen_scales:
                    raise UnknownTermError(f"frozen_scales missing term {t.term_id}")
                v = self.frozen_scales[t.term_id]
                if not (self.mu_min <= v <= t.cap):
                    raise CurriculumError(
                        f"frozen_scales[{t.term_id}] = {v} outside [mu_min, cap]"
                    )

    @property
    def final_stage(self) -> int:
        return self.n_stages - 1

    def term(self, term_id: str) -> RewardTermSpec:
        for t in self.terms:
            if t.term_id == term_id:
                return t
        raise UnknownTermError(f"unregistered term {term_id}")


@dataclass
class CurriculumState:
    """Per-environment (and per-agent) adaptation state."""

    scales: dict[str, float]
    last_final_stage: int = 0
    consecutive_completions: int = 0
    frozen: bool = False


def init_state(cfg: CurriculumConfig) -> CurriculumState:
    return CurriculumState(scales={t.term_id: cfg.rho_init for t in cfg.terms})


def update_scales(state: CurriculumState, final_stage: int, cfg: CurriculumConfig) -> CurriculumState:
    """Apply one episode-boundary adaptation; returns a new state.

    Frozen states pass through untouched.  Terms whose stage equals
    final_stage are reinforced toward their caps, all others damped toward
    mu_min.  Reaching the terminal stage freeze_threshold times in a row
    freezes the state with cfg.frozen_scales (caps when unset).
    """
    if not (0 <= final_stage < cfg.n_stages):
        raise UnknownStageError(f"final_stage {final_stage} outside 0..{cfg.n_stages - 1}")
    if state.frozen:
        return state

    scales = {}
    for t in cfg.terms:
        rho = state.scales[t.term_id]
        if t.stage == final_stage:
            scales[t.term_id] = min(cfg.k * rho, t.cap)
        else:
            scales[t.term_id] = max(rho / cfg.k, cfg.mu_min)

    if final_stage == cfg.final_stage:
        streak = state.consecutive_completions + 1
    else:
        streak = 0

    frozen = streak >= cfg.freeze_threshold
    if frozen:
        if cfg.frozen_scales is not None:
            scales = dict(cfg.frozen_scales)
        else:
            scales = {t.term_id: t.cap for t in cfg.terms}

    return CurriculumState(
        scales=scales,
        last_final_stage=final_stage,
        consecutive_completions=streak,
        frozen=frozen,
    )


def composite_reward(fixed_reward: float, term_values: Mapping[str, float], state: CurriculumState) -> float:
    """R_fixed plus the scale-weighted sum over all registered term values."""
    total = fixed_reward
    scales = state.scales
    for term_id, value in term_values.items():
        try:
            total += scales[term_id] * value
        except KeyError:
            raise UnknownTermError(f"term {term_id} has no registered scale") from None
    return total


def scale_bounds_ok(state: CurriculumState, cfg: CurriculumConfig) -> bool:
    """True when every scale lies inside [mu_min, cap]. Diagnostic helper."""
    return all(cfg.mu_min <= state.scales[t.term_id] <= t.cap for t in cfg.terms)
