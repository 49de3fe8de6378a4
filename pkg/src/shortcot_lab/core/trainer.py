"""Verbose-CoT pretraining and the length-penalised GRPO training loop."""

from __future__ import annotations

import logging
import re
import time
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from shortcot_lab.core.checkpoint import Checkpoint, load_checkpoint, save_checkpoint, save_policy
from shortcot_lab.core.env import (
    CATEGORIES,
    PromptSpec,
    RewardBreakdown,
    decode_scene,
    encode_prompt,
    generate_prompt,
    reference_layout,
    reward_ensemble,
    verbose_cot,
)
from shortcot_lab.core.errors import ConfigError, ContractError, NumericError
from shortcot_lab.core.execution import (
    STREAM_INIT,
    STREAM_PRETRAIN,
    STREAM_PROMPT,
    STREAM_ROLLOUT,
    ProgressCallbacks,
    derive_seed,
    ordered_map,
    rng_for,
)
from shortcot_lab.core.grpo import (
    AdamState,
    GroupBatch,
    GrpoConfig,
    compute_advantages,
    grpo_objective,
    update_norm,
    update_step,
)
from shortcot_lab.core.penalties import PenaltyConfig, cot_length, total_reward
from shortcot_lab.core.policy import (
    PolicyParams,
    Rollout,
    backward,
    check_vocabulary,
    forward_sequence,
    init_for_vocab,
    logprob_dlogits,
    logprob_sequence,
    sample_rollout,
)
from shortcot_lab.core.run_dir import RunDirectory
from shortcot_lab.core.run_log import RolloutStats, RunLogWriter, StepRecord, truncate_after

logger = logging.getLogger(__name__)

# ---------------------------------------------------------------------------
# Rollout schedule
# ---------------------------------------------------------------------------

_STAGE_RE = re.compile(r"(\d+)-(\d+):(\d+)")


@dataclass(frozen=True)
class RolloutStage:
    """Group size used for the inclusive epoch range ``first..last``."""

    first: int
    last: int
    group_size: int

    def __str__(self) -> str:
        return f"{self.first}-{self.last}:{self.group_size}"


def parse_stage(entry: str) -> RolloutStage:
    """Parse one ``FIRST-LAST:G`` entry without checking the group size."""
    m = _STAGE_RE.fullmatch(str(entry).strip())
    if not m:
        raise ConfigError(f"Malformed schedule entry {entry!r}; expected FIRST-LAST:G")
    first, last, g = (int(x) for x in m.groups())
    return RolloutStage(first, last, g)


def parse_schedule(entries: Sequence[str] | str) -> tuple[RolloutStage, ...]:
    """Parse ``"1-600:4 601-800:3"`` style entries."""
    if isinstance(entries, str):
        entries = entries.split()
    stages = []
    for entry in entries:
        stage = parse_stage(entry)
        if stage.group_size < 2:
            raise ConfigError(
                f"Schedule entry {entry!r} has group size {stage.group_size} < 2"
            )
        stages.append(stage)
    if not stages:
        raise ConfigError("Rollout schedule is empty")
    return tuple(stages)


def check_schedule(stages: Sequence[RolloutStage], epochs: int) -> None:
    """Raise unless *stages* partition ``1..epochs`` in order."""
    expected = 1
    for stage in stages:
        if stage.first != expected or stage.last < stage.first:
            raise ConfigError(
                f"Schedule stage {stage} does not continue at epoch {expected}; "
                f"stages must partition 1..{epochs}"
            )
        expected = stage.last + 1
    if expected != epochs + 1:
        raise ConfigError(f"Schedule covers 1..{expected - 1} but training runs 1..{epochs}")


def group_size_for(stages: Sequence[RolloutStage], epoch: int) -> int:
    for stage in stages:
        if stage.first <= epoch <= stage.last:
            return stage.group_size
    raise ContractError(f"Epoch {epoch} is outside the rollout schedule")


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PretrainConfig:
    steps: int = 2000
    batch_size: int = 4
    learning_rate: float = 1e-2


@dataclass(frozen=True)
class TrainConfig:
    """Every tunable of a training run, built from resolved parameters."""

    epochs: int = 800
    schedule: tuple[RolloutStage, ...] = (RolloutStage(1, 600, 4), RolloutStage(601, 800, 3))
    prompts_per_epoch: int = 24
    seed: int = 1
    grpo: GrpoConfig = field(default_factory=GrpoConfig)
    penalty: PenaltyConfig = field(default_factory=PenaltyConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    checkpoint_interval: int = 50
    output_dir: Path = Path("runs/default")
    embed_dim: int = 16
    hidden_dim: int = 32
    workers: int = 1
    init_checkpoint: str = ""
    fresh_start: bool = False
    resume_from: str = ""

    def __post_init__(self) -> None:
        check_schedule(self.schedule, self.epochs)
        if self.prompts_per_epoch < 1:
            raise ConfigError("train.prompts_per_epoch must be >= 1")

    @staticmethod
    def from_parameters(params: Mapping[str, Any]) -> TrainConfig:
        """Build from a resolved parameter mapping (see ``config_schema.resolve_parameters``)."""
        thresholds = params["penalty.thresholds"]
        return TrainConfig(
            epochs=params["train.epochs"],
            schedule=parse_schedule(params["train.schedule"]),
            prompts_per_epoch=params["train.prompts_per_epoch"],
            seed=params["run.seed"],
            grpo=GrpoConfig(
                group_size=params["grpo.group_size"],
                clip_epsilon=params["grpo.epsilon"],
                kl_beta=params["grpo.beta"],
                learning_rate=params["grpo.learning_rate"],
                adam_beta1=params["grpo.adam_beta1"],
                adam_beta2=params["grpo.adam_beta2"],
                adam_eps=params["grpo.adam_eps"],
            ),
            penalty=PenaltyConfig(
                strategy=params["penalty.strategy"],
                alpha=params["penalty.alpha"],
                target_length=params["penalty.target_length"],
                cap_length=params["penalty.cap_length"],
                hard_thresholds=(thresholds[0], thresholds[1], thresholds[2]),
            ),
            pretrain=PretrainConfig(
                steps=params["pretrain.steps"],
                batch_size=params["pretrain.batch_size"],
                learning_rate=params["pretrain.learning_rate"],
            ),
            checkpoint_interval=params["train.checkpoint_interval"],
            output_dir=Path(params["run.output_dir"]),
            embed_dim=params["policy.embed_dim"],
            hidden_dim=params["policy.hidden_dim"],
            workers=params["run.workers"],
            init_checkpoint=params["policy.init_checkpoint"],
            fresh_start=params["policy.fresh_start"],
            resume_from=params["train.resume_from"],
        )


def initial_params(config: TrainConfig) -> PolicyParams:
    return init_for_vocab(derive_seed(config.seed, STREAM_INIT),
                          embed_dim=config.embed_dim, hidden_dim=config.hidden_dim)


# ---------------------------------------------------------------------------
# Pretraining
# ---------------------------------------------------------------------------


def pretrain_verbose(
    params: PolicyParams,
    steps: int,
    rng: np.random.Generator,
    *,
    batch_size: int = 4,
    learning_rate: float = 1e-2,
    progress: ProgressCallbacks | None = None,
) -> PolicyParams:
    """Maximum-likelihood steps on verbose CoTs followed by reference layouts.

    Each step draws *batch_size* random prompts; the loss is the token-mean
    log-likelihood of ``verbose_cot(spec) + reference_layout(spec)``.
    """
    if steps < 0:
        raise ContractError(f"Pretraining steps must be >= 0, got {steps}")
    check_vocabulary(params)
    opt_config = GrpoConfig(learning_rate=learning_rate)
    state = AdamState.zeros(params)
    for step in range(1, steps + 1):
        targets = []
        for _ in range(batch_size):
            category = CATEGORIES[int(rng.integers(len(CATEGORIES)))]
            spec = generate_prompt(category, rng, prompt_id=f"pretrain-{step}")
            targets.append((encode_prompt(spec), verbose_cot(spec, rng), reference_layout(spec)))
        n_tokens = sum(len(s) + len(t) for _, s, t in targets)
        gradient = params.zeros_like()
        for prompt, s, t in targets:
            cache = forward_sequence(params, prompt, s, t)
            weights = np.full(len(cache.tokens), 1.0 / n_tokens)
            gradient = gradient + backward(params, cache, logprob_dlogits(cache, weights))
        params, state = update_step(params, gradient, state, opt_config)
        if progress is not None:
            progress.on_step(step, steps)
    return params


def run_pretrain(
    config: TrainConfig,
    run: RunDirectory,
    *,
    progress: ProgressCallbacks | None = None,
) -> PolicyParams:
    """Pretrain from the init checkpoint or a seeded init; saves ``pretrained.bin``."""
    if config.init_checkpoint:
        params = load_checkpoint(config.init_checkpoint).params
        check_vocabulary(params)
    else:
        params = initial_params(config)
    pre = config.pretrain
    params = pretrain_verbose(params, pre.steps, rng_for(config.seed, STREAM_PRETRAIN),
                              batch_size=pre.batch_size, learning_rate=pre.learning_rate,
                              progress=progress)
    save_policy(params, run.pretrained_path)
    return params


# ---------------------------------------------------------------------------
# GRPO training
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TrainResult:
    params: PolicyParams
    optimizer: AdamState
    final_path: Path
    run_dir: RunDirectory
    steps: int


def _rollout_stats(rollout: Rollout, reward: RewardBreakdown) -> RolloutStats:
    return RolloutStats(
        cot_length=cot_length(rollout),
        detection=reward.detection,
        alignment=reward.alignment,
        preference=reward.preference,
        model_sum=reward.model_sum,
        length_penalty=reward.length_penalty,
        total=reward.total,
        semantic_tokens=rollout.semantic_tokens,
        scene_tokens=rollout.scene_tokens,
    )


def epoch_prompt(seed: int, epoch: int, index: int) -> PromptSpec:
    """The *index*-th prompt of *epoch*; categories cycle in catalog order."""
    category = CATEGORIES[index % len(CATEGORIES)]
    return generate_prompt(category, rng_for(seed, STREAM_PROMPT, epoch, index),
                           prompt_id=f"e{epoch}-p{index}")


def sample_group(
    old: PolicyParams,
    ref: PolicyParams,
    spec: PromptSpec,
    config: TrainConfig,
    epoch: int,
    index: int,
    group_size: int,
) -> GroupBatch:
    """Sample, score and normalise one rollout group from the *old* snapshot."""
    prompt = encode_prompt(spec)
    cap = config.penalty.effective_cap

    def _sample(i: int) -> Rollout:
        seed = derive_seed(config.seed, STREAM_ROLLOUT, epoch, index, i)
        rollout = sample_rollout(old, prompt, np.random.default_rng(seed), seed=seed,
                                 cap_length=cap)
        # Scored by the sampling snapshot itself, so old == new exactly.
        rollout.logprob_old = rollout.logprob_new.copy()
        rollout.logprob_ref = logprob_sequence(ref, prompt, rollout.semantic_tokens,
                                               rollout.scene_tokens)
        return rollout

    rollouts = ordered_map(_sample, range(group_size), config.workers)
    rewards = [
        total_reward(reward_ensemble(decode_scene(r.scene_tokens), spec), r, config.penalty)
        for r in rollouts
    ]
    advantages = compute_advantages([b.total for b in rewards])
    return GroupBatch(spec, rollouts, rewards, advantages)


def _load_start(config: TrainConfig, run: RunDirectory) -> tuple[
    PolicyParams, PolicyParams, AdamState, int
]:
    """Return ``(params, ref_params, optimizer, first_epoch)``."""
    if config.resume_from:
        ckpt = load_checkpoint(config.resume_from)
        if ckpt.ref_params is None or ckpt.optimizer is None:
            raise ConfigError(f"{config.resume_from} is not a training checkpoint")
        check_vocabulary(ckpt.params)
        truncate_after(run.log_path, ckpt.epoch, run.timing_path)
        logger.info("Resuming from %s at epoch %d", config.resume_from, ckpt.epoch + 1)
        return ckpt.params, ckpt.ref_params, ckpt.optimizer, ckpt.epoch + 1

    if config.init_checkpoint:
        params = load_checkpoint(config.init_checkpoint).params
        check_vocabulary(params)
    elif config.fresh_start:
        params = initial_params(config)
    else:
        raise ConfigError(
            "No starting policy: set policy.init_checkpoint or policy.fresh_start = true"
        )
    for path in (run.log_path, run.timing_path):
        path.unlink(missing_ok=True)
    return params, params.copy(), AdamState.zeros(params), 1


def train(
    config: TrainConfig,
    run: RunDirectory,
    *,
    progress: ProgressCallbacks | None = None,
) -> TrainResult:
    """Run GRPO epochs, logging one record per prompt group.

    The reference policy is the starting policy and never changes. A
    non-finite objective or update aborts the run after writing the state at
    the end of the last completed epoch to ``last_good.bin``, so resuming from
    it replays the failed epoch from its first prompt.
    """
    params, ref, opt, first_epoch = _load_start(config, run)
    grpo_config = config.grpo
    strategy = config.penalty.strategy
    ppe = config.prompts_per_epoch
    steps = 0

    with RunLogWriter(run.log_path, run.timing_path) as writer:
        for epoch in range(first_epoch, config.epochs + 1):
            group_size = group_size_for(config.schedule, epoch)
            # State at the end of the previous epoch, the resumable point on abort.
            epoch_params, epoch_opt = params, opt
            lengths: list[float] = []
            sums: list[float] = []
            for index in range(ppe):
                started = time.perf_counter()
                step = (epoch - 1) * ppe + index + 1
                spec = epoch_prompt(config.seed, epoch, index)
                batch = sample_group(params, ref, spec, config, epoch, index, group_size)
                try:
                    result = grpo_objective(batch, params, ref, grpo_config)
                    if result.max_ratio_deviation != 0.0:
                        raise ContractError(
                            f"Step {step}: ratios at the sampling snapshot deviate from 1 "
                            f"by {result.max_ratio_deviation}"
                        )
                    new_params, opt_next = update_step(params, result.gradient, opt, grpo_config)
                    if not new_params.is_finite():
                        raise NumericError(f"Step {step}: update produced non-finite parameters")
                except NumericError:
                    save_checkpoint(Checkpoint(epoch_params, epoch - 1, ref, epoch_opt),
                                    run.last_good_path)
                    logger.error("Aborting at epoch %d step %d; last good state kept in %s",
                                 epoch, step, run.last_good_path)
                    raise
                norm = update_norm(params, new_params)
                params, opt = new_params, opt_next
                steps += 1

                stats = tuple(
                    _rollout_stats(r, b) for r, b in zip(batch.rollouts, batch.rewards,
                                                         strict=True)
                )
                totals = np.array([b.total for b in batch.rewards])
                writer.append(StepRecord(
                    epoch=epoch,
                    step=step,
                    prompt_id=spec.id,
                    category=spec.category,
                    strategy=strategy,
                    group_size=group_size,
                    rollouts=stats,
                    advantage_mean=float(batch.advantages.mean()),
                    advantage_std=float(batch.advantages.std()),
                    objective=result.objective,
                    mean_kl=result.mean_kl,
                    update_norm=norm,
                    max_ratio_deviation=result.max_ratio_deviation,
                    clip_fraction=result.clip_fraction,
                    wall_time_ms=(time.perf_counter() - started) * 1000.0,
                ))
                lengths.extend(s.cot_length for s in stats)
                sums.extend(s.model_sum for s in stats)
                logger.debug("epoch %d step %d: objective=%.6f total_mean=%.4f", epoch, step,
                             result.objective, float(totals.mean()))

            summary = {"cot_length": float(np.mean(lengths)), "model_sum": float(np.mean(sums))}
            logger.info("epoch %d: mean CoT length %.2f, mean model_sum %.4f",
                        epoch, summary["cot_length"], summary["model_sum"])
            if progress is not None:
                progress.on_epoch(epoch, summary)
            if config.checkpoint_interval and epoch % config.checkpoint_interval == 0:
                save_checkpoint(Checkpoint(params, epoch, ref, opt), run.checkpoint_path(epoch))

    final = save_checkpoint(Checkpoint(params, config.epochs, ref, opt), run.final_path)
    return TrainResult(params, opt, final, run, steps)
