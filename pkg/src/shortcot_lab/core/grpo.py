"""Group-relative policy optimisation: advantages, clipped surrogate, KL and Adam."""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from shortcot_lab.core.env import PromptSpec, RewardBreakdown
from shortcot_lab.core.errors import ConfigError, ContractError, DimensionError, NumericError
from shortcot_lab.core.policy import (
    PolicyParams,
    Rollout,
    backward,
    forward_sequence,
    kl_dlogits,
    kl_values,
    logprob_dlogits,
)

logger = logging.getLogger(__name__)

DEGENERATE_STD = 1e-12


@dataclass(frozen=True)
class GrpoConfig:
    """Surrogate and optimiser hyper-parameters."""

    group_size: int = 4
    clip_epsilon: float = 0.2
    kl_beta: float = 0.01
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.group_size < 2:
            raise ConfigError(f"grpo.group_size must be >= 2, got {self.group_size}")
        if not 0.0 < self.clip_epsilon < 1.0:
            raise ConfigError(f"grpo.epsilon must lie in (0, 1), got {self.clip_epsilon}")
        if self.kl_beta < 0:
            raise ConfigError(f"grpo.beta must be >= 0, got {self.kl_beta}")
        if self.learning_rate <= 0:
            raise ConfigError(f"grpo.learning_rate must be > 0, got {self.learning_rate}")


@dataclass
class GroupBatch:
    """G rollouts for one prompt with their rewards and advantages."""

    spec: PromptSpec
    rollouts: list[Rollout]
    rewards: list[RewardBreakdown]
    advantages: np.ndarray

    def __post_init__(self) -> None:
        if not self.rollouts:
            raise ContractError("Group batch holds no rollouts")
        n = len(self.rollouts)
        if len(self.rewards) != n or len(self.advantages) != n:
            raise ContractError(
                f"Group of {n} rollouts has {len(self.rewards)} rewards "
                f"and {len(self.advantages)} advantages"
            )
        prompts = {r.prompt_tokens for r in self.rollouts}
        if len(prompts) != 1:
            raise ContractError("Rollouts in one group condition on different prompts")

    @property
    def token_count(self) -> int:
        return sum(r.length for r in self.rollouts)


def compute_advantages(totals: Sequence[float]) -> np.ndarray:
    """``(R - mean) / std`` with population std; all zero when std < 1e-12."""
    rewards = np.asarray(totals, dtype=float)
    if rewards.ndim != 1 or rewards.size < 2:
        raise ContractError(f"Advantages need a group of at least 2 rewards, got {rewards.size}")
    if not np.isfinite(rewards).all():
        raise NumericError("Non-finite reward in group")
    std = rewards.std()
    if std < DEGENERATE_STD:
        return np.zeros_like(rewards)
    return (rewards - rewards.mean()) / std


def compute_ratios(logprob_new: np.ndarray, logprob_old: np.ndarray) -> np.ndarray:
    new = np.asarray(logprob_new, dtype=float)
    old = np.asarray(logprob_old, dtype=float)
    if new.shape != old.shape:
        raise ContractError(f"Log-probability lengths differ: {new.shape} vs {old.shape}")
    if not (np.isfinite(new).all() and np.isfinite(old).all()):
        raise NumericError("Non-finite log-probability in ratio")
    ratios = np.exp(new - old)
    if not np.isfinite(ratios).all():
        raise NumericError("Probability ratio overflowed")
    return ratios


def clipped_term(ratios: npt.ArrayLike, advantage: float, epsilon: float) -> np.ndarray:
    """``min(r * A, clip(r, 1 - eps, 1 + eps) * A)``, elementwise."""
    r = np.asarray(ratios, dtype=np.float64)
    return np.minimum(r * advantage, np.clip(r, 1.0 - epsilon, 1.0 + epsilon) * advantage)


def clipped_weights(ratios: np.ndarray, advantage: float, epsilon: float) -> np.ndarray:
    """Per-position ``d term / d log pi_new``.

    ``r * A`` where the unclipped branch is selected (ties included), 0 where
    the clipped branch wins.
    """
    unclipped = ratios * advantage
    clipped = np.clip(ratios, 1.0 - epsilon, 1.0 + epsilon) * advantage
    return np.where(unclipped <= clipped, unclipped, 0.0)


@dataclass(frozen=True)
class ObjectiveResult:
    objective: float
    gradient: PolicyParams
    surrogate: float
    mean_kl: float
    max_ratio_deviation: float
    clip_fraction: float


def grpo_objective(
    batch: GroupBatch,
    params: PolicyParams,
    ref_params: PolicyParams,
    config: GrpoConfig,
) -> ObjectiveResult:
    """Token-normalised clipped surrogate minus ``beta`` times the mean per-position KL.

    The gradient is an ascent direction with the shape of *params*.
    Contributions are accumulated in rollout order.
    """
    if params.header != ref_params.header:
        raise DimensionError(f"Reference layout {ref_params.header} != {params.header}")
    n_tokens = batch.token_count
    eps, beta = config.clip_epsilon, config.kl_beta

    surrogate = 0.0
    kl_total = 0.0
    max_dev = 0.0
    clipped_positions = 0
    gradient = params.zeros_like()
    for rollout, advantage in zip(batch.rollouts, batch.advantages, strict=True):
        if rollout.logprob_old is None or rollout.logprob_ref is None:
            raise ContractError("Rollout is missing old or reference log-probabilities")
        args = (rollout.prompt_tokens, rollout.semantic_tokens, rollout.scene_tokens)
        cache = forward_sequence(params, *args)
        ref_cache = forward_sequence(ref_params, *args)

        ratios = compute_ratios(cache.token_logp, rollout.logprob_old)
        a = float(advantage)
        surrogate += float(clipped_term(ratios, a, eps).sum())
        weights = clipped_weights(ratios, a, eps)
        clipped_positions += int(np.count_nonzero((weights == 0.0) & (ratios * a != 0.0)))
        max_dev = max(max_dev, float(np.abs(ratios - 1.0).max()))

        kl = kl_values(cache, ref_cache)
        kl_total += float(kl.sum())

        dlogits = logprob_dlogits(cache, weights / n_tokens)
        if beta:
            dlogits -= kl_dlogits(cache, ref_cache, np.full(len(kl), beta / n_tokens))
        gradient = gradient + backward(params, cache, dlogits)

    surrogate /= n_tokens
    mean_kl = kl_total / n_tokens
    objective = surrogate - beta * mean_kl
    if not np.isfinite(objective):
        raise NumericError(f"Non-finite objective {objective}")
    return ObjectiveResult(
        objective=objective,
        gradient=gradient,
        surrogate=surrogate,
        mean_kl=mean_kl,
        max_ratio_deviation=max_dev,
        clip_fraction=clipped_positions / n_tokens,
    )


# ---------------------------------------------------------------------------
# Optimiser
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AdamState:
    """Adam moment estimates and the number of steps taken."""

    step: int
    first_moment: PolicyParams
    second_moment: PolicyParams

    @classmethod
    def zeros(cls, params: PolicyParams) -> AdamState:
        return cls(0, params.zeros_like(), params.zeros_like())

    def equals(self, other: AdamState) -> bool:
        return (
            self.step == other.step
            and self.first_moment.equals(other.first_moment)
            and self.second_moment.equals(other.second_moment)
        )


def update_step(
    params: PolicyParams,
    gradient: PolicyParams,
    state: AdamState,
    config: GrpoConfig,
) -> tuple[PolicyParams, AdamState]:
    """One bias-corrected Adam ascent step."""
    if gradient.header != params.header or state.first_moment.header != params.header:
        raise DimensionError("Gradient or optimizer state does not match the parameters")
    g = gradient.flatten()
    if not np.isfinite(g).all():
        raise NumericError("Non-finite gradient; refusing to update parameters")

    b1, b2 = config.adam_beta1, config.adam_beta2
    step = state.step + 1
    m = b1 * state.first_moment.flatten() + (1.0 - b1) * g
    v = b2 * state.second_moment.flatten() + (1.0 - b2) * g * g
    m_hat = m / (1.0 - b1**step)
    v_hat = v / (1.0 - b2**step)
    theta = params.flatten() + config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_eps)

    new_params = params.with_flat(theta, version=params.version + 1)
    return new_params, AdamState(step, params.with_flat(m), params.with_flat(v))


def update_norm(before: PolicyParams, after: PolicyParams) -> float:
    return float(np.linalg.norm(after.flatten() - before.flatten()))
