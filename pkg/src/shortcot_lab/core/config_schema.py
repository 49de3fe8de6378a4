"""Configuration schema: the single source of truth for every run parameter."""

from __future__ import annotations

from collections import OrderedDict
from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Any, Literal

from shortcot_lab import __version__
from shortcot_lab.core.errors import ConfigError
from shortcot_lab.core.penalties import DEFAULT_ALPHA, STRATEGIES


@dataclass(frozen=True)
class ConfigParameter:
    """Definition of a single configuration key."""

    key: str
    label: str
    description: str
    group: str

    dtype: Literal["int", "float", "bool", "string", "enum", "float_vec3", "int_list",
                   "string_list"]
    default: Any

    min_value: float | None = None
    max_value: float | None = None
    enum_options: list[str] | None = field(default=None)


PARAMETER_GROUPS: list[str] = ["run", "policy", "pretrain", "train", "grpo", "penalty", "eval",
                               "analyze"]

_RUN_PARAMS: list[ConfigParameter] = [
    ConfigParameter(
        key="run.seed",
        label="Master Seed",
        description="Root of every random stream (run → epoch → prompt → rollout).",
        group="run",
        dtype="int",
        default=1,
        min_value=0,
    ),
    ConfigParameter(
        key="run.output_dir",
        label="Output Directory",
        description="Run directory receiving the snapshot, logs and checkpoints.",
        group="run",
        dtype="string",
        default="runs/default",
    ),
    ConfigParameter(
        key="run.workers",
        label="Workers",
        description="Threads used for rollout sampling and evaluation (1 = in-process).",
        group="run",
        dtype="int",
        default=1,
        min_value=1,
    ),
    ConfigParameter(
        key="run.tool_version",
        label="Tool Version",
        description="Version of shortcot-lab that resolved this configuration.",
        group="run",
        dtype="string",
        default=__version__,
    ),
]

_POLICY_PARAMS: list[ConfigParameter] = [
    ConfigParameter(
        key="policy.embed_dim",
        label="Embedding Size",
        description="Token embedding dimension d.",
        group="policy",
        dtype="int",
        default=16,
        min_value=1,
    ),
    ConfigParameter(
        key="policy.hidden_dim",
        label="Hidden Units",
        description="Hidden layer width h.",
        group="policy",
        dtype="int",
        default=32,
        min_value=1,
    ),
    ConfigParameter(
        key="policy.init_checkpoint",
        label="Initial Checkpoint",
        description="Pretrained checkpoint to start RL from (empty: fresh parameters).",
        group="policy",
        dtype="string",
        default="",
    ),
    ConfigParameter(
        key="policy.fresh_start",
        label="Fresh Start",
        description="Allow training from freshly initialised parameters without a checkpoint.",
        group="policy",
        dtype="bool",
        default=False,
    ),
]

_PRETRAIN_PARAMS: list[ConfigParameter] = [
    ConfigParameter(
        key="pretrain.steps",
        label="Pretraining Steps",
        description="Supervised steps on verbose-CoT targets.",
        group="pretrain",
        dtype="int",
        default=2000,
        min_value=0,
    ),
    ConfigParameter(
        key="pretrain.batch_size",
        label="Pretraining Batch",
        description="Templated targets per supervised step.",
        group="pretrain",
        dtype="int",
        default=4,
        min_value=1,
    ),
    ConfigParameter(
        key="pretrain.learning_rate",
        label="Pretraining Learning Rate",
        description="Adam step size of the supervised stage.",
        group="pretrain",
        dtype="float",
        default=1e-2,
        min_value=0.0,
    ),
]

_TRAIN_PARAMS: list[ConfigParameter] = [
    ConfigParameter(
        key="train.epochs",
        label="Epochs",
        description="Number of RL epochs; one epoch is one pass over the prompt budget.",
        group="train",
        dtype="int",
        default=800,
        min_value=1,
    ),
    ConfigParameter(
        key="train.schedule",
        label="Rollout Schedule",
        description=(
            "Group size per epoch range, e.g. '1-600:4 601-800:3'. "
            "Empty: grpo.group_size for every epoch."
        ),
        group="train",
        dtype="string_list",
        default=[],
    ),
    ConfigParameter(
        key="train.prompts_per_epoch",
        label="Prompts per Epoch",
        description="Prompt groups (optimisation steps) per epoch, cycling categories.",
        group="train",
        dtype="int",
        default=24,
        min_value=1,
    ),
    ConfigParameter(
        key="train.checkpoint_interval",
        label="Checkpoint Interval",
        description="Write ckpt_<epoch>.bin every N epochs (0 disables).",
        group="train",
        dtype="int",
        default=50,
        min_value=0,
    ),
    ConfigParameter(
        key="train.resume_from",
        label="Resume From",
        description="Training checkpoint to resume from.",
        group="train",
        dtype="string",
        default="",
    ),
]

_GRPO_PARAMS: list[ConfigParameter] = [
    ConfigParameter(
        key="grpo.group_size",
        label="Group Size",
        description="Rollouts per prompt when no schedule is given.",
        group="grpo",
        dtype="int",
        default=4,
        min_value=2,
    ),
    ConfigParameter(
        key="grpo.epsilon",
        label="Clip Epsilon",
        description="Ratio clipping half-width.",
        group="grpo",
        dtype="float",
        default=0.2,
        min_value=0.0,
        max_value=1.0,
    ),
    ConfigParameter(
        key="grpo.beta",
        label="KL Coefficient",
        description="Weight of the mean per-position KL to the reference policy.",
        group="grpo",
        dtype="float",
        default=0.01,
        min_value=0.0,
    ),
    ConfigParameter(
        key="grpo.learning_rate",
        label="Learning Rate",
        description="Adam step size of the RL stage.",
        group="grpo",
        dtype="float",
        default=1e-3,
        min_value=0.0,
    ),
    ConfigParameter(
        key="grpo.adam_beta1",
        label="Adam beta1",
        description="First-moment decay rate.",
        group="grpo",
        dtype="float",
        default=0.9,
        min_value=0.0,
        max_value=1.0,
    ),
    ConfigParameter(
        key="grpo.adam_beta2",
        label="Adam beta2",
        description="Second-moment decay rate.",
        group="grpo",
        dtype="float",
        default=0.999,
        min_value=0.0,
        max_value=1.0,
    ),
    ConfigParameter(
        key="grpo.adam_eps",
        label="Adam epsilon",
        description="Denominator stabiliser.",
        group="grpo",
        dtype="float",
        default=1e-8,
        min_value=0.0,
    ),
]

_PENALTY_PARAMS: list[ConfigParameter] = [
    ConfigParameter(
        key="penalty.strategy",
        label="Strategy",
        description="CoT-shortening strategy.",
        group="penalty",
        dtype="enum",
        default="none",
        enum_options=list(STRATEGIES),
    ),
    ConfigParameter(
        key="penalty.alpha",
        label="Alpha",
        description="Penalty coefficient (empty: strategy default).",
        group="penalty",
        dtype="float",
        default=None,
        min_value=0.0,
    ),
    ConfigParameter(
        key="penalty.target_length",
        label="Target Length",
        description="L_T of the target strategy.",
        group="penalty",
        dtype="int",
        default=35,
        min_value=0,
    ),
    ConfigParameter(
        key="penalty.cap_length",
        label="Cap Length",
        description="N of the cap strategy.",
        group="penalty",
        dtype="int",
        default=35,
        min_value=1,
    ),
    ConfigParameter(
        key="penalty.thresholds",
        label="Hard Thresholds",
        description="Detection, alignment and preference thresholds of the hard gate.",
        group="penalty",
        dtype="float_vec3",
        default=[0.8, 0.5, 0.29],
    ),
]

_EVAL_PARAMS: list[ConfigParameter] = [
    ConfigParameter(
        key="eval.seeds",
        label="Evaluation Seeds",
        description="Sampling seeds; one rollout per prompt and seed.",
        group="eval",
        dtype="int_list",
        default=[1, 2, 3, 4],
    ),
    ConfigParameter(
        key="eval.suite_seed",
        label="Suite Seed",
        description="Seed of the generated benchmark suite.",
        group="eval",
        dtype="int",
        default=0,
        min_value=0,
    ),
    ConfigParameter(
        key="eval.per_category",
        label="Prompts per Category",
        description="Size of the generated suite per category.",
        group="eval",
        dtype="int",
        default=20,
        min_value=1,
    ),
    ConfigParameter(
        key="eval.suite_file",
        label="Suite File",
        description="Prompt suite file; overrides the generated suite.",
        group="eval",
        dtype="string",
        default="",
    ),
]

_ANALYZE_PARAMS: list[ConfigParameter] = [
    ConfigParameter(
        key="analyze.window",
        label="Final Window",
        description="Trailing epochs averaged in strategy summaries.",
        group="analyze",
        dtype="int",
        default=50,
        min_value=1,
    ),
]

PARAMETER_SCHEMA: dict[str, list[ConfigParameter]] = {
    "run": _RUN_PARAMS,
    "policy": _POLICY_PARAMS,
    "pretrain": _PRETRAIN_PARAMS,
    "train": _TRAIN_PARAMS,
    "grpo": _GRPO_PARAMS,
    "penalty": _PENALTY_PARAMS,
    "eval": _EVAL_PARAMS,
    "analyze": _ANALYZE_PARAMS,
}

_BY_KEY: dict[str, ConfigParameter] = {
    p.key: p for params in PARAMETER_SCHEMA.values() for p in params
}


def get_parameter(key: str) -> ConfigParameter:
    """Look up a parameter by its key. Raises ConfigError naming unknown keys."""
    try:
        return _BY_KEY[key]
    except KeyError:
        raise ConfigError(f"Unknown config key: {key!r}") from None


def get_group(name: str) -> list[ConfigParameter]:
    if name not in PARAMETER_SCHEMA:
        raise ConfigError(f"Unknown group: {name!r}")
    return PARAMETER_SCHEMA[name]


def get_defaults() -> dict[str, Any]:
    """Return a dict mapping every parameter key to its default value."""
    return {key: (list(p.default) if isinstance(p.default, list) else p.default)
            for key, p in _BY_KEY.items()}


# ---------------------------------------------------------------------------
# Coercion and resolution
# ---------------------------------------------------------------------------


def _as_list(value: Any) -> list[Any]:
    if value == "" or value is None:
        return []
    return list(value) if isinstance(value, (list, tuple)) else [value]


def coerce_value(param: ConfigParameter, value: Any) -> Any:
    """Convert a parsed value to the parameter's type and check its bounds."""
    key = param.key
    try:
        match param.dtype:
            case "int":
                if isinstance(value, bool) or (isinstance(value, float)
                                               and not value.is_integer()):
                    raise TypeError
                result: Any = int(value)
            case "float":
                if value is None or value == "":
                    if param.default is None:
                        return None
                    raise TypeError
                if isinstance(value, bool):
                    raise TypeError
                result = float(value)
            case "bool":
                if not isinstance(value, bool):
                    raise TypeError
                result = value
            case "string":
                result = str(value)
            case "enum":
                result = str(value)
                if param.enum_options and result not in param.enum_options:
                    raise ConfigError(
                        f"{key} = {result!r} is not one of: {', '.join(param.enum_options)}"
                    )
            case "float_vec3":
                items = _as_list(value)
                if len(items) != 3 or any(isinstance(v, bool) for v in items):
                    raise TypeError
                result = [float(v) for v in items]
            case "int_list":
                items = _as_list(value)
                if any(isinstance(v, bool) or not isinstance(v, int) for v in items):
                    raise TypeError
                result = items
            case _:
                result = [str(v) for v in _as_list(value)]
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{key} expects {param.dtype}, got {value!r}") from None

    if isinstance(result, (int, float)) and not isinstance(result, bool):
        if param.min_value is not None and result < param.min_value:
            raise ConfigError(f"{key} = {result} is below the minimum {param.min_value}")
        if param.max_value is not None and result > param.max_value:
            raise ConfigError(f"{key} = {result} is above the maximum {param.max_value}")
    return result


def resolve_parameters(*layers: Mapping[str, Any]) -> OrderedDict[str, Any]:
    """Merge *layers* over the schema defaults, later layers winning.

    Every key is checked against the schema and coerced. The result is fully
    explicit: strategy-dependent ``penalty.alpha`` is filled in and
    ``run.tool_version`` is stamped.
    """
    merged: OrderedDict[str, Any] = OrderedDict(get_defaults())
    for layer in layers:
        for key, value in layer.items():
            merged[key] = coerce_value(get_parameter(key), value)
    if merged["penalty.alpha"] is None:
        merged["penalty.alpha"] = DEFAULT_ALPHA[merged["penalty.strategy"]]
    if not merged["train.schedule"]:
        merged["train.schedule"] = [f"1-{merged['train.epochs']}:{merged['grpo.group_size']}"]
    merged["run.tool_version"] = __version__
    return merged
