"""Command-line interface: pretrain, train, eval, analyze, sweep and presets."""

from __future__ import annotations

import argparse
import logging
import sys
from collections import OrderedDict
from collections.abc import Sequence
from pathlib import Path
from typing import Any

from shortcot_lab import __version__
from shortcot_lab.app import configure_logging
from shortcot_lab.core.analysis import analyze_runs
from shortcot_lab.core.checkpoint import load_checkpoint
from shortcot_lab.core.config_file import parse_config_file, parse_override
from shortcot_lab.core.config_schema import coerce_value, get_parameter, resolve_parameters
from shortcot_lab.core.env import PromptSpec, benchmark_suite, read_suite, uniform_counts
from shortcot_lab.core.errors import ConfigError, ShortCotError
from shortcot_lab.core.evaluation import (
    CATEGORY_COLUMNS,
    RECORD_COLUMNS,
    evaluate,
    length_histogram,
    pearson_matrix,
    prompt_statistics,
)
from shortcot_lab.core.execution import LoggingProgress
from shortcot_lab.core.export import export_json, write_csv
from shortcot_lab.core.presets import list_presets, preset_parameters
from shortcot_lab.core.run_dir import RunDirectory
from shortcot_lab.core.sweep import SweepAxis, SweepConfig, generate_sweep_inputs
from shortcot_lab.core.trainer import TrainConfig, run_pretrain, train
from shortcot_lab.core.validator import raise_for_errors, validate

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Configuration layers
# ---------------------------------------------------------------------------


def _parse_seeds(text: str) -> list[int]:
    try:
        return [int(s) for s in text.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"--seeds expects comma-separated integers, got {text!r}") from None


def config_layers(args: argparse.Namespace) -> list[dict[str, Any]]:
    """Preset < config file < ``--set`` < dedicated flags."""
    layers: list[dict[str, Any]] = []
    if args.preset:
        layers.append(preset_parameters(args.preset))
    if args.config:
        layers.append(dict(parse_config_file(args.config)))
    overrides: dict[str, Any] = {}
    for text in args.set or []:
        key, value = parse_override(text)
        overrides[key] = value
    flags = {
        "run.seed": getattr(args, "seed", None),
        "run.output_dir": getattr(args, "out", None),
        "penalty.strategy": getattr(args, "strategy", None),
        "policy.init_checkpoint": getattr(args, "checkpoint", None),
        "train.resume_from": getattr(args, "resume", None),
        "eval.suite_seed": getattr(args, "suite_seed", None),
        "eval.suite_file": getattr(args, "suite_file", None),
        "eval.per_category": getattr(args, "per_category", None),
    }
    if getattr(args, "fresh_start", False):
        flags["policy.fresh_start"] = True
    if getattr(args, "seeds", None):
        flags["eval.seeds"] = _parse_seeds(args.seeds)
    overrides.update({k: v for k, v in flags.items() if v is not None})
    layers.append(overrides)
    return layers


def resolve_args(
    args: argparse.Namespace, *, require_policy: bool = False
) -> OrderedDict[str, Any]:
    params = resolve_parameters(*config_layers(args))
    messages = validate(params, require_policy=require_policy)
    for m in messages:
        if m.level != "error":
            logger.warning("[%s] %s", m.rule_id, m.message)
    raise_for_errors(messages)
    return params


def load_suite(params: dict[str, Any]) -> list[PromptSpec]:
    if params["eval.suite_file"]:
        path = Path(params["eval.suite_file"])
        if not path.is_file():
            raise ConfigError(f"Suite file not found: {path}")
        return read_suite(path)
    return benchmark_suite(uniform_counts(params["eval.per_category"]), params["eval.suite_seed"])


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_pretrain(args: argparse.Namespace) -> int:
    params = resolve_args(args)
    config = TrainConfig.from_parameters(params)
    run = RunDirectory.create(params["run.output_dir"], params, command="pretrain")
    run.mark("running")
    try:
        run_pretrain(config, run, progress=LoggingProgress("pretrain", every=100))
    except BaseException:
        run.mark("failed")
        raise
    run.mark("completed")
    print(run.pretrained_path)
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    params = resolve_args(args, require_policy=True)
    config = TrainConfig.from_parameters(params)
    run = RunDirectory.create(params["run.output_dir"], params, command="train")
    run.mark("running")
    try:
        result = train(config, run, progress=LoggingProgress("train"))
    except BaseException as exc:
        run.mark("failed", note=str(exc) or type(exc).__name__)
        raise
    run.mark("completed", note=f"{result.steps} optimisation steps")
    print(run.root)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    if not args.checkpoint:
        raise ConfigError("eval needs --checkpoint")
    if not args.out:
        args.out = str(Path(args.checkpoint).parent / ("eval_nocot" if args.no_cot else "eval"))
    params = resolve_args(args)
    checkpoint = Path(params["policy.init_checkpoint"])
    policy = load_checkpoint(checkpoint).params
    suite = load_suite(params)
    seeds = params["eval.seeds"]
    use_cot = not args.no_cot
    cap = params["penalty.cap_length"] if params["penalty.strategy"] == "cap" else None

    report = evaluate(policy, suite, seeds, use_cot=use_cot, cap_length=cap,
                      workers=params["run.workers"])

    run = RunDirectory.create(params["run.output_dir"], params, command="eval")
    prefix = "eval" if use_cot else "eval_nocot"
    out = run.root
    write_csv(out / f"{prefix}_categories.csv", CATEGORY_COLUMNS, report.category_rows())
    write_csv(out / f"{prefix}_records.csv", RECORD_COLUMNS, report.record_rows())
    summary: dict[str, Any] = OrderedDict(checkpoint=str(checkpoint), **report.summary())
    if use_cot:
        hist = length_histogram(r.cot_length for r in report.records)
        write_csv(out / f"{prefix}_histogram.csv", ("length", "count"), hist.rows())
        summary["histogram"] = {"mean": hist.mean, "median": hist.median,
                                "skewness": hist.skewness}
        stats = prompt_statistics(report)
        if len(stats) >= 3:
            corr = pearson_matrix(stats)
            write_csv(out / f"{prefix}_correlation.csv", ("variable", *corr.variables),
                      corr.rows())
            summary["score_vs_length"] = corr.get("score_avg", "length_avg")
    export_json(summary, out / f"{prefix}_summary.json")
    run.mark("completed")
    print(out)
    return 0


def cmd_analyze(args: argparse.Namespace) -> int:
    seeds = _parse_seeds(args.seeds) if args.seeds else get_parameter("eval.seeds").default
    result = analyze_runs(
        args.runs,
        args.out,
        window=args.window,
        seeds=seeds,
        suite_seed=args.suite_seed,
        per_category=args.per_category,
        workers=args.workers,
    )
    for path in result.files:
        print(path)
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    axes = [SweepAxis.parse(text) for text in args.axis]
    base: OrderedDict[str, Any] = OrderedDict()
    for layer in config_layers(args):
        for key, value in layer.items():
            base[key] = coerce_value(get_parameter(key), value)
    out = Path(args.out or base.get("run.output_dir") or "runs/sweep")
    base.pop("run.output_dir", None)
    generated = generate_sweep_inputs(SweepConfig(base, axes, out, name_template=args.name))
    failures: list[tuple[str, int]] = []
    for name, config_path in generated:
        print(config_path)
        if not args.run:
            continue
        try:
            _run_sweep_config(name, config_path)
        except ShortCotError as exc:
            logger.error("Sweep run %s (%s) failed with exit code %d: %s",
                         name, config_path, exc.exit_code, exc)
            failures.append((name, exc.exit_code))
    if failures:
        listing = ", ".join(f"{name} (exit {code})" for name, code in failures)
        print(f"shortcot-lab: error: {len(failures)} sweep run(s) failed: {listing}",
              file=sys.stderr)
        return max(code for _, code in failures)
    return 0


def _run_sweep_config(name: str, config_path: Path) -> None:
    logger.info("Sweep run %s", name)
    params = resolve_parameters(dict(parse_config_file(config_path)))
    raise_for_errors(validate(params, require_policy=True))
    run = RunDirectory.create(params["run.output_dir"], params, command="sweep")
    run.mark("running")
    try:
        train(TrainConfig.from_parameters(params), run, progress=LoggingProgress(name))
    except BaseException as exc:
        run.mark("failed", note=str(exc) or type(exc).__name__)
        raise
    run.mark("completed")


def cmd_presets(args: argparse.Namespace) -> int:
    for preset in list_presets():
        print(f"{preset['file'].removesuffix('.json'):<16} {preset['description']}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_config_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--preset", help="bundled preset used as the base configuration")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one configuration key (repeatable)")
    p.add_argument("--seed", type=int, help="master seed (run.seed)")
    p.add_argument("--out", help="output directory (run.output_dir)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shortcot-lab",
        description="Length-penalised GRPO experiments on a toy two-phase generator.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", help="overrides SHORTCOT_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="verbose-CoT supervised pretraining")
    _add_config_options(p)
    p.add_argument("--checkpoint", help="start from this policy instead of a seeded init")
    p.set_defaults(handler=cmd_pretrain)

    p = sub.add_parser("train", help="GRPO fine-tuning with a length-penalty strategy")
    _add_config_options(p)
    p.add_argument("--strategy", help="none, cap, target, hard or soft")
    p.add_argument("--checkpoint", help="starting policy (policy.init_checkpoint)")
    p.add_argument("--fresh-start", action="store_true", help="start from a seeded init")
    p.add_argument("--resume", help="training checkpoint to resume from")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on the benchmark suite")
    _add_config_options(p)
    p.add_argument("--checkpoint", help="policy checkpoint to evaluate")
    p.add_argument("--suite-seed", type=int, help="seed of the generated suite")
    p.add_argument("--suite-file", help="read prompts from a suite file instead")
    p.add_argument("--per-category", type=int, help="prompts per category in the suite")
    p.add_argument("--seeds", help="comma-separated evaluation seeds (default 1,2,3,4)")
    p.add_argument("--no-cot", action="store_true", help="force an empty CoT")
    p.add_argument("--strategy", help="apply this strategy's cap during sampling")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("analyze", help="curves, summaries and studies across run directories")
    p.add_argument("--runs", nargs="+", required=True, help="run directories")
    p.add_argument("--out", required=True, help="analysis output directory")
    p.add_argument("--window", type=int, help="final-window epochs (default analyze.window)")
    p.add_argument("--seeds", help="comma-separated evaluation seeds")
    p.add_argument("--suite-seed", type=int, default=0)
    p.add_argument("--per-category", type=int, default=20)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(handler=cmd_analyze)

    p = sub.add_parser("sweep", help="write (and optionally run) one config per combination")
    _add_config_options(p)
    p.add_argument("--axis", action="append", required=True, metavar="KEY=V1,V2",
                   help="sweep axis: KEY=V1,V2,... or KEY=START:END:STEP (repeatable)")
    p.add_argument("--name", default="", help="run name template, e.g. '{penalty.strategy}'")
    p.add_argument("--run", action="store_true", help="train every generated config")
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("presets", help="list bundled presets")
    p.set_defaults(handler=cmd_presets)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """Run one subcommand and return its exit code.

    0 success, 2 configuration error, 3 data or dimension error, 4 numeric
    failure.
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)
    try:
        return int(args.handler(args))
    except ShortCotError as exc:
        print(f"shortcot-lab: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"shortcot-lab: error: {exc}", file=sys.stderr)
        return ConfigError.exit_code
