"""Cross-run analysis: training curves, strategy summaries, cost and checkpoint studies."""

from __future__ import annotations

import logging
from collections import Counter, OrderedDict
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from shortcot_lab.core.checkpoint import load_checkpoint
from shortcot_lab.core.config_diff import format_diff, unexpected_differences
from shortcot_lab.core.env import PromptSpec, benchmark_suite, uniform_counts
from shortcot_lab.core.errors import ContractError
from shortcot_lab.core.evaluation import (
    CATEGORY_COLUMNS,
    DEFAULT_SEEDS,
    NECESSITY_COLUMNS,
    CostReport,
    EvalReport,
    cost_from_lengths,
    evaluate,
    length_histogram,
    necessity_table,
    pearson_matrix,
    prompt_statistics,
)
from shortcot_lab.core.export import export_json, write_csv
from shortcot_lab.core.run_dir import RunDirectory
from shortcot_lab.core.run_log import ROLLOUT_FIELDS, RunLogReader

logger = logging.getLogger(__name__)

BASELINE_STRATEGY = "none"

LENGTH_CURVE_COLUMNS = ("epoch", "cot_length", "length_penalty")
REWARD_CURVE_COLUMNS = ("epoch", "detection", "alignment", "preference", "model_sum",
                        "length_penalty", "total", "objective", "mean_kl")
SUMMARY_COLUMNS = ("label", "strategy", "seed", "first_epoch", "last_epoch", "cot_length",
                   "model_sum", "length_penalty", "total", "initial_cot_length",
                   "length_reduction_pct")
COST_COLUMNS = ("label", "strategy", "baseline", "baseline_cot_length", "treated_cot_length",
                "cot_reduction_pct", "baseline_tokens_per_image", "treated_tokens_per_image",
                "token_reduction_pct", "baseline_model_sum", "treated_model_sum")
HISTOGRAM_COLUMNS = ("length", "count")


# ---------------------------------------------------------------------------
# Loaded runs
# ---------------------------------------------------------------------------


@dataclass
class LoadedRun:
    """A run directory with its log and resolved configuration."""

    label: str
    run: RunDirectory
    log: RunLogReader
    params: OrderedDict[str, Any]

    @property
    def strategy(self) -> str:
        return self.log.strategy

    @property
    def seed(self) -> int:
        return int(self.params["run.seed"])


def load_runs(paths: Sequence[str | Path]) -> list[LoadedRun]:
    """Open each run directory; labels are strategies, disambiguated by directory name."""
    if not paths:
        raise ContractError("Analysis needs at least one run directory")
    loaded = []
    for path in paths:
        run = RunDirectory.open(path)
        loaded.append(LoadedRun("", run, RunLogReader.from_run_dir(run.root),
                                run.load_parameters()))
    counts = Counter(r.strategy for r in loaded)
    seen: set[str] = set()
    for r in loaded:
        label = r.strategy if counts[r.strategy] == 1 else f"{r.strategy}-{r.run.root.name}"
        while label in seen:
            label += "_"
        seen.add(label)
        r.label = label
    return loaded


# ---------------------------------------------------------------------------
# Summaries from logs
# ---------------------------------------------------------------------------


def strategy_summary(runs: Sequence[LoadedRun], window: int) -> list[dict[str, Any]]:
    """Final-window means per run, with the reduction against each run's first epoch."""
    rows = []
    for r in runs:
        final = r.log.final_window(window)
        initial = r.log.epoch_curve()[0]["cot_length"]
        reduction = 0.0 if initial == 0 else (1.0 - final["cot_length"] / initial) * 100.0
        rows.append({
            "label": r.label,
            "strategy": r.strategy,
            "seed": r.seed,
            "first_epoch": int(final["first_epoch"]),
            "last_epoch": int(final["last_epoch"]),
            "cot_length": final["cot_length"],
            "model_sum": final["model_sum"],
            "length_penalty": final["length_penalty"],
            "total": final["total"],
            "initial_cot_length": initial,
            "length_reduction_pct": reduction,
        })
    return rows


def _pick_baseline(run: LoadedRun, baselines: Sequence[LoadedRun]) -> LoadedRun:
    for b in baselines:
        if b.seed == run.seed:
            return b
    return baselines[0]


def cost_summary(runs: Sequence[LoadedRun], window: int) -> list[dict[str, Any]] | None:
    """Final-window cost of every run against the ``none`` run of the same seed.

    Returns ``None`` (with a warning) when no baseline run is among *runs*.
    """
    baselines = [r for r in runs if r.strategy == BASELINE_STRATEGY]
    if not baselines:
        logger.warning("No '%s' run among the inputs; cost summary omitted", BASELINE_STRATEGY)
        return None
    rows = []
    for r in runs:
        base = _pick_baseline(r, baselines)
        diffs = unexpected_differences(base.params, r.params)
        if diffs:
            logger.warning("Runs %s and %s differ beyond the penalty settings:\n%s",
                           base.label, r.label, format_diff(diffs))
        b_final = base.log.final_window(window)
        t_final = r.log.final_window(window)
        report: CostReport = cost_from_lengths(b_final["cot_length"], t_final["cot_length"])
        rows.append({
            "label": r.label,
            "strategy": r.strategy,
            "baseline": base.label,
            **report.summary(),
            "baseline_model_sum": b_final["model_sum"],
            "treated_model_sum": t_final["model_sum"],
        })
    return rows


# ---------------------------------------------------------------------------
# Checkpoint studies
# ---------------------------------------------------------------------------


@dataclass
class CheckpointStudy:
    """With- and without-CoT evaluations of one run's final policy."""

    label: str
    with_cot: EvalReport
    without_cot: EvalReport
    suite: list[PromptSpec] = field(repr=False)


def study_checkpoint(
    run: LoadedRun,
    suite: list[PromptSpec],
    seeds: Sequence[int],
    *,
    workers: int = 1,
) -> CheckpointStudy | None:
    if not run.run.final_path.is_file():
        logger.warning("Run %s has no %s; checkpoint studies skipped",
                       run.label, run.run.final_path.name)
        return None
    params = load_checkpoint(run.run.final_path).params
    cap = run.params["penalty.cap_length"] if run.strategy == "cap" else None
    with_cot = evaluate(params, suite, seeds, use_cot=True, cap_length=cap, workers=workers)
    without = evaluate(params, suite, seeds, use_cot=False, workers=workers)
    return CheckpointStudy(run.label, with_cot, without, suite)


# ---------------------------------------------------------------------------
# Bundle
# ---------------------------------------------------------------------------


@dataclass
class AnalysisResult:
    out_dir: Path
    files: list[Path]
    summary: dict[str, Any]


def analyze_runs(
    paths: Sequence[str | Path],
    out_dir: str | Path,
    *,
    window: int | None = None,
    seeds: Sequence[int] = DEFAULT_SEEDS,
    suite_seed: int = 0,
    per_category: int = 20,
    suite: list[PromptSpec] | None = None,
    workers: int = 1,
) -> AnalysisResult:
    """Write the analysis bundle for *paths* into *out_dir*.

    Per run: length and reward curves from the log, then histogram,
    correlation and necessity tables from its final checkpoint. Across runs:
    a strategy summary and, when a ``none`` run is present, a cost summary.
    """
    runs = load_runs(paths)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if window is None:
        window = int(runs[0].params["analyze.window"])
    if window < 1:
        raise ContractError(f"Analysis window must be >= 1, got {window}")
    if suite is None:
        suite = benchmark_suite(uniform_counts(per_category), suite_seed)

    files: list[Path] = []
    summary: dict[str, Any] = OrderedDict(window=window, seeds=list(seeds), runs={})

    for r in runs:
        curve = r.log.epoch_curve()
        files.append(write_csv(out / f"length_curve_{r.label}.csv", LENGTH_CURVE_COLUMNS, curve))
        files.append(write_csv(out / f"reward_curve_{r.label}.csv", REWARD_CURVE_COLUMNS, curve))
        run_summary: dict[str, Any] = OrderedDict(
            run_dir=str(r.run.root), strategy=r.strategy,
            final_window={k: v for k, v in r.log.final_window(window).items()
                          if k in ROLLOUT_FIELDS},
        )

        study = study_checkpoint(r, suite, seeds, workers=workers)
        if study is not None:
            hist = length_histogram(rec.cot_length for rec in study.with_cot.records)
            files.append(write_csv(out / f"histogram_{r.label}.csv", HISTOGRAM_COLUMNS,
                                   hist.rows()))
            files.append(write_csv(out / f"eval_{r.label}.csv", CATEGORY_COLUMNS,
                                   study.with_cot.category_rows()))
            run_summary["histogram"] = {"mean": hist.mean, "median": hist.median,
                                        "skewness": hist.skewness}
            run_summary["eval"] = study.with_cot.summary()
            try:
                corr = pearson_matrix(prompt_statistics(study.with_cot))
            except ContractError as exc:
                logger.warning("Correlation for %s skipped: %s", r.label, exc)
            else:
                files.append(write_csv(out / f"correlation_{r.label}.csv",
                                       ("variable", *corr.variables), corr.rows()))
                run_summary["score_vs_length"] = corr.get("score_avg", "length_avg")
                run_summary["degenerate"] = list(corr.degenerate)
            necessity = necessity_table(suite, study.with_cot, study.without_cot)
            files.append(write_csv(
                out / f"necessity_{r.label}.csv", NECESSITY_COLUMNS,
                [{c: getattr(row, c) for c in NECESSITY_COLUMNS} for row in necessity],
            ))
        summary["runs"][r.label] = run_summary

    files.append(write_csv(out / "strategy_summary.csv", SUMMARY_COLUMNS,
                           strategy_summary(runs, window)))
    costs = cost_summary(runs, window)
    if costs is not None:
        files.append(write_csv(out / "cost_summary.csv", COST_COLUMNS, costs))
        summary["cost"] = {row["label"]: row["cot_reduction_pct"] for row in costs}

    files.append(export_json(summary, out / "analysis.json"))
    logger.info("Wrote %d analysis files to %s", len(files), out)
    return AnalysisResult(out, files, summary)

