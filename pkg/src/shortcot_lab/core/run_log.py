"""Structured run logs: one JSON record per optimisation step."""

from __future__ import annotations

import json
import logging
from collections import OrderedDict
from collections.abc import Iterable, Iterator
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, TextIO

import numpy as np

from shortcot_lab.core.errors import DataError
from shortcot_lab.core.export import atomic_write_text

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RolloutStats:
    """Per-rollout reward breakdown as logged."""

    cot_length: int
    detection: float
    alignment: float
    preference: float
    model_sum: float
    length_penalty: float
    total: float
    semantic_tokens: tuple[int, ...] = ()
    scene_tokens: tuple[int, ...] = ()


@dataclass(frozen=True)
class StepRecord:
    """Everything logged for one prompt group / optimisation step."""

    epoch: int
    step: int
    prompt_id: str
    category: str
    strategy: str
    group_size: int
    rollouts: tuple[RolloutStats, ...]
    advantage_mean: float
    advantage_std: float
    objective: float
    mean_kl: float
    update_norm: float
    max_ratio_deviation: float
    clip_fraction: float
    wall_time_ms: float | None = field(default=None, compare=False)

    @property
    def mean_cot_length(self) -> float:
        return float(np.mean([r.cot_length for r in self.rollouts]))

    def mean_of(self, name: str) -> float:
        return float(np.mean([getattr(r, name) for r in self.rollouts]))

    def to_json(self) -> str:
        """Deterministic one-line encoding; wall time is kept out of the log."""
        data = asdict(self)
        data.pop("wall_time_ms")
        return json.dumps(data, separators=(",", ":"))

    @staticmethod
    def from_dict(d: dict[str, Any]) -> StepRecord:
        try:
            rollouts = tuple(
                RolloutStats(
                    **{
                        **r,
                        "semantic_tokens": tuple(r.get("semantic_tokens", ())),
                        "scene_tokens": tuple(r.get("scene_tokens", ())),
                    }
                )
                for r in d["rollouts"]
            )
            return StepRecord(**{**d, "rollouts": rollouts})
        except (KeyError, TypeError) as exc:
            raise DataError(f"Malformed run-log record: {exc}") from None


ROLLOUT_FIELDS = ("cot_length", "detection", "alignment", "preference", "model_sum",
                  "length_penalty", "total")


# ---------------------------------------------------------------------------
# Writing
# ---------------------------------------------------------------------------


class RunLogWriter:
    """Single writer appending records to ``log.jsonl`` and wall times to ``timing.jsonl``."""

    def __init__(self, log_path: str | Path, timing_path: str | Path | None = None) -> None:
        self._log_path = Path(log_path)
        self._timing_path = Path(timing_path) if timing_path is not None else None
        self._log: TextIO | None = None
        self._timing: TextIO | None = None

    def __enter__(self) -> RunLogWriter:
        self._log = self._log_path.open("a")
        if self._timing_path is not None:
            self._timing = self._timing_path.open("a")
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()

    def append(self, record: StepRecord) -> None:
        if self._log is None:
            raise RuntimeError("RunLogWriter used outside its context")
        self._log.write(record.to_json() + "\n")
        self._log.flush()
        if self._timing is not None and record.wall_time_ms is not None:
            self._timing.write(json.dumps(
                {"epoch": record.epoch, "step": record.step, "wall_time_ms": record.wall_time_ms},
                separators=(",", ":"),
            ) + "\n")
            self._timing.flush()

    def close(self) -> None:
        for fh in (self._log, self._timing):
            if fh is not None:
                fh.close()
        self._log = self._timing = None


def _read_jsonl(path: Path) -> Iterator[dict[str, Any]]:
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError:
                # A crash can leave a partial last line.
                logger.warning("Skipping unparsable line %d of %s", lineno, path)


def _truncate_file(path: Path, epoch: int) -> int:
    kept: list[str] = []
    with path.open() as fh:
        for line in fh:
            try:
                if json.loads(line)["epoch"] <= epoch:
                    kept.append(line if line.endswith("\n") else line + "\n")
            except (json.JSONDecodeError, KeyError):
                continue
    atomic_write_text(path, "".join(kept))
    return len(kept)


def truncate_after(log_path: str | Path, epoch: int, timing_path: str | Path | None = None) -> int:
    """Drop lines of epochs after *epoch*; returns the number of log records kept."""
    kept = 0
    if Path(log_path).exists():
        kept = _truncate_file(Path(log_path), epoch)
    if timing_path is not None and Path(timing_path).exists():
        _truncate_file(Path(timing_path), epoch)
    logger.info("Truncated %s after epoch %d (%d records kept)", log_path, epoch, kept)
    return kept


def read_records(log_path: str | Path, timing_path: str | Path | None = None) -> list[StepRecord]:
    """Read every record, joining wall times from *timing_path* when present."""
    path = Path(log_path)
    if not path.is_file():
        raise DataError(f"Run log not found: {path}")
    timings: dict[tuple[int, int], float] = {}
    if timing_path is not None and Path(timing_path).is_file():
        for d in _read_jsonl(Path(timing_path)):
            timings[(d["epoch"], d["step"])] = d["wall_time_ms"]
    records = []
    for d in _read_jsonl(path):
        d["wall_time_ms"] = timings.get((d.get("epoch", -1), d.get("step", -1)))
        records.append(StepRecord.from_dict(d))
    return records


# ---------------------------------------------------------------------------
# Reader
# ---------------------------------------------------------------------------


class RunLogReader:
    """Curves and summaries over one run's records."""

    def __init__(self, records: Iterable[StepRecord]) -> None:
        self._records = list(records)
        if not self._records:
            raise DataError("Run log holds no records")
        steps = [(r.epoch, r.step) for r in self._records]
        if steps != sorted(steps) or len(set(steps)) != len(steps):
            raise DataError("Run-log records are not strictly increasing in (epoch, step)")

    @staticmethod
    def from_run_dir(root: str | Path) -> RunLogReader:
        root = Path(root)
        return RunLogReader(read_records(root / "log.jsonl", root / "timing.jsonl"))

    @property
    def records(self) -> list[StepRecord]:
        return list(self._records)

    @property
    def strategy(self) -> str:
        strategies = {r.strategy for r in self._records}
        if len(strategies) != 1:
            raise DataError(f"Run log mixes strategies: {sorted(strategies)}")
        return strategies.pop()

    def epochs(self) -> list[int]:
        return sorted({r.epoch for r in self._records})

    def group_sizes(self) -> dict[int, int]:
        """Epoch → group size; a mixed epoch is a schedule violation."""
        sizes: dict[int, set[int]] = {}
        for r in self._records:
            sizes.setdefault(r.epoch, set()).add(r.group_size)
        bad = {e: s for e, s in sizes.items() if len(s) != 1}
        if bad:
            raise DataError(f"Epochs with mixed group sizes: {sorted(bad)}")
        return {e: s.pop() for e, s in sizes.items()}

    def rollouts(self, epochs: Iterable[int] | None = None) -> list[RolloutStats]:
        wanted = None if epochs is None else set(epochs)
        return [
            ro for r in self._records if wanted is None or r.epoch in wanted for ro in r.rollouts
        ]

    def epoch_curve(self) -> list[OrderedDict[str, float]]:
        """Per-epoch means of every rollout field plus objective and KL."""
        rows: list[OrderedDict[str, float]] = []
        by_epoch: dict[int, list[StepRecord]] = {}
        for r in self._records:
            by_epoch.setdefault(r.epoch, []).append(r)
        for epoch in sorted(by_epoch):
            recs = by_epoch[epoch]
            ros = [ro for r in recs for ro in r.rollouts]
            row: OrderedDict[str, float] = OrderedDict(epoch=epoch)
            for name in ROLLOUT_FIELDS:
                row[name] = float(np.mean([getattr(ro, name) for ro in ros]))
            row["objective"] = float(np.mean([r.objective for r in recs]))
            row["mean_kl"] = float(np.mean([r.mean_kl for r in recs]))
            rows.append(row)
        return rows

    def final_window(self, window: int) -> dict[str, float]:
        """Means over the rollouts of the last *window* epochs."""
        epochs = self.epochs()[-window:]
        ros = self.rollouts(epochs)
        summary = {name: float(np.mean([getattr(ro, name) for ro in ros]))
                   for name in ROLLOUT_FIELDS}
        summary["first_epoch"] = float(epochs[0])
        summary["last_epoch"] = float(epochs[-1])
        return summary

    def max_ratio_deviation(self) -> float:
        return max(r.max_ratio_deviation for r in self._records)
