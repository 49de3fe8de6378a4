"""CoT-shortening strategies and their composition with the reward ensemble."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING

from shortcot_lab.core.env import (
    ALIGNMENT_RANGE,
    DETECTION_RANGE,
    PREFERENCE_RANGE,
    VOCAB,
    RewardBreakdown,
)
from shortcot_lab.core.errors import ConfigError, ContractError

if TYPE_CHECKING:
    from shortcot_lab.core.policy import Rollout

STRATEGIES: tuple[str, ...] = ("none", "cap", "target", "hard", "soft")

DEFAULT_ALPHA: dict[str, float] = {
    "none": 0.0,
    "cap": 0.0,
    "target": 5e-4,
    "hard": 1e-3,
    "soft": 5e-4,
}
DEFAULT_TARGET_LENGTH = 35
DEFAULT_CAP_LENGTH = 35
# Midpoints of the detection, alignment and preference intervals.
DEFAULT_THRESHOLDS = (0.8, 0.5, 0.29)


@dataclass(frozen=True)
class PenaltyConfig:
    """Strategy choice and its coefficients.

    ``alpha=None`` resolves to the strategy's default coefficient.
    """

    strategy: str = "none"
    alpha: float | None = None
    target_length: int = DEFAULT_TARGET_LENGTH
    cap_length: int = DEFAULT_CAP_LENGTH
    hard_thresholds: tuple[float, float, float] = field(default=DEFAULT_THRESHOLDS)

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ConfigError(
                f"Unknown strategy {self.strategy!r}; valid strategies: {', '.join(STRATEGIES)}"
            )
        if self.alpha is not None and self.alpha < 0:
            raise ConfigError(f"penalty.alpha must be >= 0, got {self.alpha}")
        if self.strategy == "cap" and self.cap_length < 1:
            raise ConfigError(f"penalty.cap_length must be >= 1, got {self.cap_length}")
        if self.strategy == "target" and self.target_length < 0:
            raise ConfigError(f"penalty.target_length must be >= 0, got {self.target_length}")
        if self.strategy == "hard":
            ranges = (DETECTION_RANGE, ALIGNMENT_RANGE, PREFERENCE_RANGE)
            for name, t, (lo, hi) in zip(
                ("detection", "alignment", "preference"), self.hard_thresholds, ranges,
                strict=True,
            ):
                if not lo <= t <= hi:
                    raise ConfigError(
                        f"Hard threshold for {name} must lie in [{lo}, {hi}], got {t}"
                    )

    @property
    def resolved_alpha(self) -> float:
        return DEFAULT_ALPHA[self.strategy] if self.alpha is None else self.alpha

    def resolved(self) -> PenaltyConfig:
        """Copy with ``alpha`` made explicit."""
        return replace(self, alpha=self.resolved_alpha)

    @property
    def effective_cap(self) -> int | None:
        return self.cap_length if self.strategy == "cap" else None


def cot_length(rollout: Rollout) -> int:
    """Semantic tokens excluding the end-of-CoT marker."""
    return semantic_length(rollout.semantic_tokens)


def semantic_length(semantic_tokens: Sequence[int]) -> int:
    n = len(semantic_tokens)
    return n - 1 if n and semantic_tokens[-1] == VOCAB.eoc_id else n


def apply_cap(semantic_tokens: Sequence[int], n: int) -> tuple[int, ...]:
    """Keep the first *n* content tokens and close the CoT with end-of-CoT."""
    if n < 1:
        raise ContractError(f"Cap length must be >= 1, got {n}")
    tokens = tuple(semantic_tokens)
    if semantic_length(tokens) <= n:
        return tokens
    return (*tokens[:n], VOCAB.eoc_id)


def penalty_target(length: int, target_length: int, alpha: float) -> float:
    return -alpha * max(0, length - target_length)


def penalty_hard(
    breakdown: RewardBreakdown,
    thresholds: tuple[float, float, float],
    length: int,
    alpha: float,
) -> float:
    """``-alpha * L`` only when every scorer strictly exceeds its threshold."""
    t_det, t_align, t_pref = thresholds
    easy = (
        breakdown.detection > t_det
        and breakdown.alignment > t_align
        and breakdown.preference > t_pref
    )
    return -alpha * length if easy else 0.0


def penalty_soft(model_sum: float, length: int, alpha: float) -> float:
    """``-alpha * (R_models - 1) * L``; larger summed reward penalises length harder."""
    if model_sum < 1.0:
        raise ContractError(f"model_sum {model_sum} is below the offset baseline 1")
    return -alpha * (model_sum - 1.0) * length


def length_penalty(breakdown: RewardBreakdown, length: int, config: PenaltyConfig) -> float:
    alpha = config.resolved_alpha
    match config.strategy:
        case "none" | "cap":
            return 0.0
        case "target":
            return penalty_target(length, config.target_length, alpha)
        case "hard":
            return penalty_hard(breakdown, config.hard_thresholds, length, alpha)
        case "soft":
            return penalty_soft(breakdown.model_sum, length, alpha)
        case other:
            raise ConfigError(f"Unknown strategy {other!r}")


def total_reward(
    breakdown: RewardBreakdown,
    rollout: Rollout,
    config: PenaltyConfig,
) -> RewardBreakdown:
    """Attach the strategy's penalty; ``total = model_sum + length_penalty``."""
    penalty = length_penalty(breakdown, cot_length(rollout), config)
    penalty += 0.0  # no -0.0 in logs
    return replace(breakdown, length_penalty=penalty, total=breakdown.model_sum + penalty)
