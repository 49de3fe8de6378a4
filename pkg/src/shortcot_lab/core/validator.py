"""Cross-parameter validation rules for resolved configurations."""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Any, Literal

from shortcot_lab.core.env import ALIGNMENT_RANGE, DETECTION_RANGE, PREFERENCE_RANGE
from shortcot_lab.core.errors import ConfigError
from shortcot_lab.core.trainer import RolloutStage, check_schedule, parse_stage


@dataclass(frozen=True)
class ValidationMessage:
    """A single validation finding."""

    level: Literal["error", "warning", "info"]
    message: str
    parameter_keys: list[str] = field(default_factory=list)
    rule_id: str = ""


# ---------------------------------------------------------------------------
# Individual rule implementations
# ---------------------------------------------------------------------------

_THRESHOLD_RANGES = (
    ("detection", DETECTION_RANGE),
    ("alignment", ALIGNMENT_RANGE),
    ("preference", PREFERENCE_RANGE),
)


def _stages(params: Mapping[str, Any]) -> list[RolloutStage] | None:
    try:
        return [parse_stage(entry) for entry in params.get("train.schedule") or []]
    except ConfigError:
        return None


def _r001_schedule_partitions_epochs(params: Mapping[str, Any]) -> list[ValidationMessage]:
    """Schedule stages must cover 1..train.epochs contiguously."""
    epochs = params.get("train.epochs")
    stages = _stages(params)
    keys = ["train.schedule", "train.epochs"]
    if stages is None:
        return [ValidationMessage("error", "train.schedule has a malformed entry "
                                  "(expected FIRST-LAST:G).", keys, "R001")]
    if not stages or epochs is None:
        return []
    try:
        check_schedule(stages, epochs)
    except ConfigError as exc:
        return [ValidationMessage("error", f"{exc}.", keys, "R001")]
    return []


def _r002_group_sizes(params: Mapping[str, Any]) -> list[ValidationMessage]:
    """Every group needs at least two rollouts to normalise rewards."""
    msgs = []
    g = params.get("grpo.group_size")
    if g is not None and g < 2:
        msgs.append(ValidationMessage("error", f"grpo.group_size is {g}; must be >= 2.",
                                      ["grpo.group_size"], "R002"))
    for stage in _stages(params) or []:
        if stage.group_size < 2:
            msgs.append(ValidationMessage(
                "error",
                f"Schedule stage {stage} has group size {stage.group_size}; must be >= 2.",
                ["train.schedule"], "R002",
            ))
    return msgs


def _r003_clip_and_kl(params: Mapping[str, Any]) -> list[ValidationMessage]:
    msgs = []
    eps = params.get("grpo.epsilon")
    if eps is not None and not 0.0 < eps < 1.0:
        msgs.append(ValidationMessage("error", f"grpo.epsilon is {eps}; must lie in (0, 1).",
                                      ["grpo.epsilon"], "R003"))
    beta = params.get("grpo.beta")
    if beta is not None and beta < 0:
        msgs.append(ValidationMessage("error", f"grpo.beta is {beta}; must be >= 0.",
                                      ["grpo.beta"], "R003"))
    return msgs


def _r004_thresholds_in_range(params: Mapping[str, Any]) -> list[ValidationMessage]:
    """Hard-gate thresholds only make sense inside their reward intervals."""
    if params.get("penalty.strategy") != "hard":
        return []
    thresholds = params.get("penalty.thresholds")
    if not isinstance(thresholds, list) or len(thresholds) != 3:
        return []
    msgs = []
    for t, (name, (lo, hi)) in zip(thresholds, _THRESHOLD_RANGES, strict=True):
        if not lo <= t <= hi:
            msgs.append(ValidationMessage(
                "error",
                f"{name} threshold {t} lies outside the reward range [{lo}, {hi}].",
                ["penalty.thresholds"], "R004",
            ))
    return msgs


def _r005_alpha_unused(params: Mapping[str, Any]) -> list[ValidationMessage]:
    strategy = params.get("penalty.strategy")
    alpha = params.get("penalty.alpha")
    if strategy in ("none", "cap") and alpha:
        return [ValidationMessage(
            "warning",
            f"penalty.alpha = {alpha} has no effect with strategy {strategy!r}.",
            ["penalty.alpha", "penalty.strategy"], "R005",
        )]
    return []


def _r006_start_policy(params: Mapping[str, Any]) -> list[ValidationMessage]:
    """Training needs a pretrained checkpoint, a resume point, or an explicit fresh start."""
    init = params.get("policy.init_checkpoint")
    fresh = params.get("policy.fresh_start")
    resume = params.get("train.resume_from")
    keys = ["policy.init_checkpoint", "policy.fresh_start"]
    if init and fresh:
        return [ValidationMessage(
            "warning", "policy.fresh_start is ignored because policy.init_checkpoint is set.",
            keys, "R006",
        )]
    if not (init or fresh or resume):
        return [ValidationMessage(
            "error",
            "No starting policy: set policy.init_checkpoint or policy.fresh_start = true.",
            keys, "R006",
        )]
    return []


def _r007_window_le_epochs(params: Mapping[str, Any]) -> list[ValidationMessage]:
    window = params.get("analyze.window")
    epochs = params.get("train.epochs")
    if window is not None and epochs is not None and window > epochs:
        return [ValidationMessage(
            "warning",
            f"analyze.window ({window}) exceeds train.epochs ({epochs}); "
            "the whole run will be averaged.",
            ["analyze.window", "train.epochs"], "R007",
        )]
    return []


def _r008_eval_seeds(params: Mapping[str, Any]) -> list[ValidationMessage]:
    seeds = params.get("eval.seeds")
    if seeds is None:
        return []
    if not seeds:
        return [ValidationMessage("error", "eval.seeds is empty.", ["eval.seeds"], "R008")]
    if len(set(seeds)) != len(seeds):
        return [ValidationMessage("warning", f"eval.seeds has duplicates: {seeds}.",
                                  ["eval.seeds"], "R008")]
    return []


def _r009_learning_rates(params: Mapping[str, Any]) -> list[ValidationMessage]:
    msgs = []
    for key in ("grpo.learning_rate", "pretrain.learning_rate"):
        lr = params.get(key)
        if lr is not None and lr <= 0:
            msgs.append(ValidationMessage("error", f"{key} is {lr}; must be > 0.", [key], "R009"))
    return msgs


def _r010_adam_betas(params: Mapping[str, Any]) -> list[ValidationMessage]:
    msgs = []
    for key in ("grpo.adam_beta1", "grpo.adam_beta2"):
        b = params.get(key)
        if b is not None and not 0.0 <= b < 1.0:
            msgs.append(ValidationMessage("error", f"{key} is {b}; must lie in [0, 1).",
                                          [key], "R010"))
    return msgs


def _r011_length_bounds(params: Mapping[str, Any]) -> list[ValidationMessage]:
    msgs = []
    cap = params.get("penalty.cap_length")
    if params.get("penalty.strategy") == "cap" and cap is not None and cap < 1:
        msgs.append(ValidationMessage("error", f"penalty.cap_length is {cap}; must be >= 1.",
                                      ["penalty.cap_length"], "R011"))
    target = params.get("penalty.target_length")
    if target is not None and target < 0:
        msgs.append(ValidationMessage("error",
                                      f"penalty.target_length is {target}; must be >= 0.",
                                      ["penalty.target_length"], "R011"))
    return msgs


_RULES = [
    _r001_schedule_partitions_epochs,
    _r002_group_sizes,
    _r003_clip_and_kl,
    _r004_thresholds_in_range,
    _r005_alpha_unused,
    _r007_window_le_epochs,
    _r008_eval_seeds,
    _r009_learning_rates,
    _r010_adam_betas,
    _r011_length_bounds,
]


def validate(
    params: Mapping[str, Any], *, require_policy: bool = False
) -> list[ValidationMessage]:
    """Run all validation rules against *params* and return findings.

    ``require_policy`` adds the starting-policy rule used before training.
    """
    messages: list[ValidationMessage] = []
    for rule in _RULES:
        messages.extend(rule(params))
    if require_policy:
        messages.extend(_r006_start_policy(params))
    return messages


def raise_for_errors(messages: list[ValidationMessage]) -> None:
    """Raise :class:`ConfigError` listing every error-level message."""
    errors = [m for m in messages if m.level == "error"]
    if errors:
        raise ConfigError("; ".join(f"[{m.rule_id}] {m.message}" for m in errors))
