"""Deterministic work scheduling: seed splitting, ordered thread pools, progress hooks."""

from __future__ import annotations

import logging
from collections.abc import Callable, Iterable
from concurrent.futures import ThreadPoolExecutor
from typing import Protocol, TypeVar

import numpy as np

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

# ---------------------------------------------------------------------------
# Seed splitting
# ---------------------------------------------------------------------------

# Stream tags keep the run → epoch → prompt → rollout tree disjoint per purpose.
STREAM_INIT = 0
STREAM_PRETRAIN = 1
STREAM_PROMPT = 2
STREAM_ROLLOUT = 3
STREAM_EVAL = 4


def derive_seed(*path: int) -> int:
    """Map an integer path such as ``(seed, stream, epoch, prompt, rollout)`` to a 63-bit seed.

    Pure function of *path*; sibling paths give independent streams.
    """
    if any(p < 0 for p in path):
        raise ValueError(f"Seed path entries must be non-negative: {path}")
    state = np.random.SeedSequence(list(path)).generate_state(1, dtype=np.uint64)
    return int(state[0] >> np.uint64(1))


def rng_for(*path: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*path))


# ---------------------------------------------------------------------------
# Ordered map
# ---------------------------------------------------------------------------


def ordered_map(fn: Callable[[T], R], items: Iterable[T], workers: int = 1) -> list[R]:
    """Apply *fn* to every item and return the results in input order.

    ``workers <= 1`` runs in-process. *fn* must be pure for results to be
    independent of the worker count.
    """
    seq = list(items)
    if workers <= 1 or len(seq) <= 1:
        return [fn(item) for item in seq]
    with ThreadPoolExecutor(max_workers=min(workers, len(seq))) as pool:
        return list(pool.map(fn, seq))


# ---------------------------------------------------------------------------
# Progress callbacks
# ---------------------------------------------------------------------------


class ProgressCallbacks(Protocol):
    """Callback interface for long-running stages."""

    def on_step(self, step: int, total: int) -> None: ...
    def on_epoch(self, epoch: int, summary: dict[str, float]) -> None: ...


class LoggingProgress:
    """Report progress through the module logger."""

    def __init__(self, stage: str, every: int = 100) -> None:
        self._stage = stage
        self._every = max(1, every)

    def on_step(self, step: int, total: int) -> None:
        if step % self._every == 0 or step == total:
            logger.info("%s: step %d/%d", self._stage, step, total)

    def on_epoch(self, epoch: int, summary: dict[str, float]) -> None:
        logger.info(
            "%s: epoch %d %s",
            self._stage,
            epoch,
            " ".join(f"{k}={v:.4f}" for k, v in summary.items()),
        )
