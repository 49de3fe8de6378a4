"""Builders shared by the test modules."""

from __future__ import annotations

from collections.abc import Callable

import numpy as np

from shortcot_lab.core.env import SCENE_CELLS, VOCAB
from shortcot_lab.core.policy import PolicyParams, init_for_vocab
from shortcot_lab.core.run_log import RolloutStats, StepRecord

SMALL_EMBED = 3
SMALL_HIDDEN = 4


def small_policy(seed: int = 0, scale: float = 1.0) -> PolicyParams:
    """Task-vocabulary policy with tiny hidden sizes; *scale* sharpens its distributions."""
    params = init_for_vocab(seed, embed_dim=SMALL_EMBED, hidden_dim=SMALL_HIDDEN)
    return params * scale


def random_sequence(
    rng: np.random.Generator, content: int
) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """A CoT of *content* non-marker tokens plus end-of-CoT, and a random scene."""
    semantic = [t for t in VOCAB.semantic_range if t != VOCAB.eoc_id]
    s = (*(int(x) for x in rng.choice(semantic, size=content)), VOCAB.eoc_id)
    t = tuple(int(x) for x in rng.choice(list(VOCAB.scene_range), size=SCENE_CELLS))
    return s, t


def directional_fd(
    f: Callable[[PolicyParams], float],
    params: PolicyParams,
    direction: np.ndarray,
    h: float = 1e-5,
) -> float:
    """Central difference of scalar *f* along *direction* in flattened space."""
    flat = params.flatten()
    up = f(params.with_flat(flat + h * direction))
    down = f(params.with_flat(flat - h * direction))
    return (up - down) / (2 * h)


def relative_error(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def make_record(
    epoch: int,
    step: int = 0,
    lengths: tuple[int, ...] = (40, 30),
    *,
    strategy: str = "none",
    model_sum: float = 1.5,
) -> StepRecord:
    """A log record whose rollouts share *model_sum* and differ in CoT length."""
    rollouts = tuple(
        RolloutStats(cot_length=n, detection=0.8, alignment=0.5, preference=model_sum - 1.3,
                     model_sum=model_sum, length_penalty=0.0, total=model_sum)
        for n in lengths
    )
    return StepRecord(
        epoch=epoch, step=step, prompt_id=f"p{step}", category="colors", strategy=strategy,
        group_size=len(lengths), rollouts=rollouts, advantage_mean=0.0, advantage_std=0.0,
        objective=0.0, mean_kl=0.0, update_norm=0.0, max_ratio_deviation=0.0,
        clip_fraction=0.0,
    )
