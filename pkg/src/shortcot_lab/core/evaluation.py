"""Benchmark evaluation, length statistics, correlations, CoT necessity and cost."""

from __future__ import annotations

import logging
from collections import OrderedDict
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from shortcot_lab.core.env import (
    CATEGORIES,
    MODEL_SUM_RANGE,
    SCENE_CELLS,
    PromptSpec,
    decode_scene,
    encode_prompt,
    reward_ensemble,
)
from shortcot_lab.core.errors import ContractError
from shortcot_lab.core.execution import STREAM_EVAL, ordered_map, rng_for
from shortcot_lab.core.penalties import cot_length
from shortcot_lab.core.policy import S_MAX, PolicyParams, check_vocabulary, sample_rollout

logger = logging.getLogger(__name__)

DEFAULT_SEEDS = (1, 2, 3, 4)
ALL_FAVOR_COT = "all-favor-CoT"
NO_DECISIVE_PAIRS = "n/a"


def task_score(model_sum: float) -> float:
    """Map ``model_sum`` from [1.06, 2.12] onto [0, 1]."""
    lo, hi = MODEL_SUM_RANGE
    return float(min(1.0, max(0.0, (model_sum - lo) / (hi - lo))))


# ---------------------------------------------------------------------------
# Per-sample records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EvalRecord:
    """One rollout of one prompt under one seed."""

    prompt_id: str
    category: str
    seed: int
    use_cot: bool
    cot_length: int
    detection: float
    alignment: float
    preference: float
    model_sum: float
    score: float

    @property
    def total_tokens(self) -> int:
        """Generated tokens for the image: CoT, its end marker, and the scene."""
        return self.cot_length + 1 + SCENE_CELLS


RECORD_COLUMNS = ("prompt_id", "category", "seed", "use_cot", "cot_length", "detection",
                  "alignment", "preference", "model_sum", "score")


@dataclass(frozen=True)
class CategoryStats:
    category: str
    prompts: int
    samples: int
    score_mean: float
    score_std: float
    best_of_seeds: float
    cot_length_mean: float
    cot_length_std: float
    model_sum_mean: float
    semantic_tokens: int
    scene_tokens: int


CATEGORY_COLUMNS = ("category", "prompts", "samples", "score_mean", "score_std",
                    "best_of_seeds", "cot_length_mean", "cot_length_std", "model_sum_mean",
                    "semantic_tokens", "scene_tokens")
OVERALL = "overall"


def _category_stats(name: str, records: Sequence[EvalRecord]) -> CategoryStats:
    scores = np.array([r.score for r in records])
    lengths = np.array([r.cot_length for r in records], dtype=float)
    best: dict[str, float] = {}
    for r in records:
        best[r.prompt_id] = max(best.get(r.prompt_id, 0.0), r.score)
    return CategoryStats(
        category=name,
        prompts=len(best),
        samples=len(records),
        score_mean=float(scores.mean()),
        score_std=float(scores.std()),
        best_of_seeds=float(np.mean(list(best.values()))),
        cot_length_mean=float(lengths.mean()),
        cot_length_std=float(lengths.std()),
        model_sum_mean=float(np.mean([r.model_sum for r in records])),
        semantic_tokens=int(sum(r.cot_length + 1 for r in records)),
        scene_tokens=SCENE_CELLS * len(records),
    )


@dataclass(frozen=True)
class EvalReport:
    """Aggregates over a suite x seeds evaluation (population statistics)."""

    records: tuple[EvalRecord, ...]
    seeds: tuple[int, ...]
    use_cot: bool
    categories: tuple[CategoryStats, ...] = field(init=False)
    overall: CategoryStats = field(init=False)

    def __post_init__(self) -> None:
        if not self.records:
            raise ContractError("Evaluation produced no records")
        present = [c for c in CATEGORIES if any(r.category == c for r in self.records)]
        cats = tuple(
            _category_stats(c, [r for r in self.records if r.category == c]) for c in present
        )
        object.__setattr__(self, "categories", cats)
        object.__setattr__(self, "overall", _category_stats(OVERALL, self.records))

    @property
    def prompt_ids(self) -> tuple[str, ...]:
        return tuple(OrderedDict.fromkeys(r.prompt_id for r in self.records))

    @property
    def mean_cot_length(self) -> float:
        return self.overall.cot_length_mean

    @property
    def mean_total_tokens(self) -> float:
        return float(np.mean([r.total_tokens for r in self.records]))

    def category_rows(self) -> list[dict[str, object]]:
        """One row per category plus the overall row, in :data:`CATEGORY_COLUMNS` order."""
        return [
            {col: getattr(c, col) for col in CATEGORY_COLUMNS}
            for c in (*self.categories, self.overall)
        ]

    def record_rows(self) -> list[dict[str, object]]:
        return [{col: getattr(r, col) for col in RECORD_COLUMNS} for r in self.records]

    def summary(self) -> dict[str, object]:
        return {
            "seeds": list(self.seeds),
            "use_cot": self.use_cot,
            "prompts": len(self.prompt_ids),
            "samples": len(self.records),
            "score_mean": self.overall.score_mean,
            "best_of_seeds": self.overall.best_of_seeds,
            "model_sum_mean": self.overall.model_sum_mean,
            "cot_length_mean": self.overall.cot_length_mean,
            "cot_length_std": self.overall.cot_length_std,
            "semantic_tokens": self.overall.semantic_tokens,
            "scene_tokens": self.overall.scene_tokens,
            "mean_total_tokens": self.mean_total_tokens,
        }


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def evaluate(
    params: PolicyParams,
    suite: Sequence[PromptSpec],
    seeds: Sequence[int] = DEFAULT_SEEDS,
    *,
    use_cot: bool = True,
    cap_length: int | None = None,
    workers: int = 1,
) -> EvalReport:
    """One rollout per prompt and seed, scored by the reward ensemble.

    The rollout rng depends only on ``(seed, prompt position)``, so the
    with-CoT and without-CoT arms share the scene-phase stream.
    """
    if not suite:
        raise ContractError("Evaluation suite is empty")
    if not seeds:
        raise ContractError("Evaluation needs at least one seed")
    check_vocabulary(params)

    def _one(item: tuple[int, PromptSpec]) -> list[EvalRecord]:
        index, spec = item
        prompt = encode_prompt(spec)
        out = []
        for seed in seeds:
            rollout = sample_rollout(params, prompt, rng_for(seed, STREAM_EVAL, index),
                                     seed=seed, cap_length=cap_length, use_cot=use_cot)
            reward = reward_ensemble(decode_scene(rollout.scene_tokens), spec)
            out.append(EvalRecord(
                prompt_id=spec.id,
                category=spec.category,
                seed=seed,
                use_cot=use_cot,
                cot_length=cot_length(rollout),
                detection=reward.detection,
                alignment=reward.alignment,
                preference=reward.preference,
                model_sum=reward.model_sum,
                score=task_score(reward.model_sum),
            ))
        return out

    per_prompt = ordered_map(_one, list(enumerate(suite)), workers)
    records = tuple(r for group in per_prompt for r in group)
    logger.info("Evaluated %d prompts x %d seeds (use_cot=%s)", len(suite), len(seeds), use_cot)
    return EvalReport(records, tuple(seeds), use_cot)


# ---------------------------------------------------------------------------
# Length histogram
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LengthHistogram:
    """Unit-width bins ``0..S_MAX`` with moment statistics."""

    counts: tuple[int, ...]
    mean: float
    median: float
    skewness: float

    def rows(self) -> list[dict[str, object]]:
        return [{"length": i, "count": c} for i, c in enumerate(self.counts)]


def length_histogram(lengths: Iterable[int]) -> LengthHistogram:
    """Bin CoT lengths; a point mass has skewness 0."""
    values = np.asarray(list(lengths), dtype=float)
    if values.size == 0:
        raise ContractError("Length histogram needs at least one record")
    if values.min() < 0 or values.max() > S_MAX:
        raise ContractError(f"CoT lengths must lie in [0, {S_MAX}]")
    counts = np.bincount(values.astype(int), minlength=S_MAX + 1)
    skewness = 0.0 if np.ptp(values) == 0 else float(stats.skew(values, bias=True))
    return LengthHistogram(
        counts=tuple(int(c) for c in counts),
        mean=float(values.mean()),
        median=float(np.median(values)),
        skewness=skewness,
    )


# ---------------------------------------------------------------------------
# Correlations
# ---------------------------------------------------------------------------

CORRELATION_VARIABLES = ("length_avg", "length_std", "score_avg", "score_std")


@dataclass(frozen=True)
class PromptStats:
    """Per-prompt mean and std of CoT length and task score across seeds."""

    prompt_id: str
    category: str
    length_avg: float
    length_std: float
    score_avg: float
    score_std: float


def prompt_statistics(report: EvalReport) -> list[PromptStats]:
    grouped: OrderedDict[str, list[EvalRecord]] = OrderedDict()
    for r in report.records:
        grouped.setdefault(r.prompt_id, []).append(r)
    out = []
    for pid, recs in grouped.items():
        lengths = np.array([r.cot_length for r in recs], dtype=float)
        scores = np.array([r.score for r in recs])
        out.append(PromptStats(pid, recs[0].category, float(lengths.mean()),
                               float(lengths.std()), float(scores.mean()), float(scores.std())))
    return out


@dataclass(frozen=True, eq=False)
class CorrelationMatrix:
    """Symmetric Pearson matrix with unit diagonal.

    Entries involving a zero-variance variable are 0 and the variable is
    listed in ``degenerate``.
    """

    variables: tuple[str, ...]
    values: np.ndarray
    degenerate: tuple[str, ...] = ()

    def get(self, a: str, b: str) -> float:
        return float(self.values[self.variables.index(a), self.variables.index(b)])

    def rows(self) -> list[dict[str, object]]:
        return [
            {"variable": name, **{other: float(self.values[i, j])
                                  for j, other in enumerate(self.variables)}}
            for i, name in enumerate(self.variables)
        ]


def pearson_matrix(prompt_stats: Sequence[PromptStats]) -> CorrelationMatrix:
    """Pairwise Pearson coefficients over prompts."""
    if len(prompt_stats) < 3:
        raise ContractError(f"Pearson matrix needs at least 3 prompts, got {len(prompt_stats)}")
    columns = np.array(
        [[getattr(p, v) for v in CORRELATION_VARIABLES] for p in prompt_stats], dtype=float
    ).T
    n = len(CORRELATION_VARIABLES)
    constant = [bool(np.ptp(col) == 0) for col in columns]
    values = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            if constant[i] or constant[j]:
                r = 0.0
            else:
                r = float(np.clip(stats.pearsonr(columns[i], columns[j])[0], -1.0, 1.0))
            values[i, j] = values[j, i] = r
    degenerate = tuple(v for v, c in zip(CORRELATION_VARIABLES, constant, strict=True) if c)
    if degenerate:
        logger.warning("Zero-variance variables in correlation: %s", ", ".join(degenerate))
    return CorrelationMatrix(CORRELATION_VARIABLES, values, degenerate)


# ---------------------------------------------------------------------------
# CoT necessity
# ---------------------------------------------------------------------------


def prompt_attributes(spec: PromptSpec) -> list[str]:
    """Attribute tags used to slice necessity ratios."""
    tags = [f"category:{spec.category}"]
    if any(o.color is not None for o in spec.objects):
        tags.append("colored")
    if spec.relation is not None:
        tags.append("relation")
    if any(o.count > 1 for o in spec.objects):
        tags.append("counted")
    tags.extend(f"kind:{o.kind}" for o in spec.objects)
    return list(OrderedDict.fromkeys(tags))


@dataclass(frozen=True)
class NecessityRow:
    attribute: str
    cot_wins: int
    no_cot_wins: int
    ties: int

    @property
    def ratio(self) -> float | str:
        """``cot_wins / no_cot_wins``; a zero denominator yields a marker."""
        if self.no_cot_wins == 0:
            return ALL_FAVOR_COT if self.cot_wins else NO_DECISIVE_PAIRS
        return self.cot_wins / self.no_cot_wins


NECESSITY_COLUMNS = ("attribute", "cot_wins", "no_cot_wins", "ties", "ratio")


def necessity_table(
    suite: Sequence[PromptSpec],
    with_cot: EvalReport,
    without_cot: EvalReport,
) -> list[NecessityRow]:
    """Compare seed-paired totals of the two arms per attribute; ties count for neither."""
    if not (with_cot.use_cot and not without_cot.use_cot):
        raise ContractError("Necessity needs a with-CoT and a without-CoT report")
    paired = {(r.prompt_id, r.seed): r.model_sum for r in without_cot.records}
    if set(paired) != {(r.prompt_id, r.seed) for r in with_cot.records}:
        raise ContractError("With-CoT and without-CoT reports cover different samples")
    specs = {s.id: s for s in suite}
    tallies: OrderedDict[str, list[int]] = OrderedDict()
    for r in with_cot.records:
        other = paired[(r.prompt_id, r.seed)]
        outcome = 0 if r.model_sum > other else 1 if other > r.model_sum else 2
        for tag in prompt_attributes(specs[r.prompt_id]):
            tallies.setdefault(tag, [0, 0, 0])[outcome] += 1
    return [NecessityRow(tag, *counts) for tag, counts in sorted(tallies.items())]


def cot_necessity(
    params: PolicyParams,
    suite: Sequence[PromptSpec],
    seeds: Sequence[int] = DEFAULT_SEEDS,
    *,
    cap_length: int | None = None,
    workers: int = 1,
) -> list[NecessityRow]:
    with_cot = evaluate(params, suite, seeds, use_cot=True, cap_length=cap_length,
                        workers=workers)
    without = evaluate(params, suite, seeds, use_cot=False, workers=workers)
    return necessity_table(suite, with_cot, without)


# ---------------------------------------------------------------------------
# Cost accounting
# ---------------------------------------------------------------------------


def reduction_pct(baseline: float, treated: float) -> float:
    """``(1 - treated / baseline) * 100``; 0 when both are 0."""
    if baseline == 0:
        if treated == 0:
            return 0.0
        raise ContractError("Reduction against a zero baseline is undefined")
    return (1.0 - treated / baseline) * 100.0


@dataclass(frozen=True)
class CostReport:
    baseline_cot_length: float
    treated_cot_length: float
    baseline_tokens_per_image: float
    treated_tokens_per_image: float

    @property
    def cot_reduction_pct(self) -> float:
        return reduction_pct(self.baseline_cot_length, self.treated_cot_length)

    @property
    def token_reduction_pct(self) -> float:
        return reduction_pct(self.baseline_tokens_per_image, self.treated_tokens_per_image)

    def summary(self) -> dict[str, float]:
        return {
            "baseline_cot_length": self.baseline_cot_length,
            "treated_cot_length": self.treated_cot_length,
            "cot_reduction_pct": self.cot_reduction_pct,
            "baseline_tokens_per_image": self.baseline_tokens_per_image,
            "treated_tokens_per_image": self.treated_tokens_per_image,
            "token_reduction_pct": self.token_reduction_pct,
        }


def cost_from_lengths(baseline_cot: float, treated_cot: float) -> CostReport:
    """Cost report from mean CoT lengths; tokens per image add the end marker and scene."""
    return CostReport(
        baseline_cot, treated_cot,
        baseline_cot + 1 + SCENE_CELLS, treated_cot + 1 + SCENE_CELLS,
    )


def cost_report(baseline: EvalReport, treated: EvalReport) -> CostReport:
    """Token-cost reduction of *treated* relative to *baseline* on the same samples."""
    if baseline.prompt_ids != treated.prompt_ids or baseline.seeds != treated.seeds:
        raise ContractError("Cost reports must cover the same suite and seeds")
    return CostReport(
        baseline.mean_cot_length, treated.mean_cot_length,
        baseline.mean_total_tokens, treated.mean_total_tokens,
    )
