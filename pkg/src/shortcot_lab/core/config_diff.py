"""Parameter diff logic for comparing two run configurations."""

from __future__ import annotations

from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from typing import Any, Literal

# Keys that legitimately differ between runs compared in a strategy sweep.
SWEEP_KEYS: tuple[str, ...] = (
    "penalty.",
    "run.output_dir",
    "run.tool_version",
    "train.resume_from",
)


@dataclass(frozen=True)
class DiffEntry:
    """A single difference between two parameter sets."""

    key: str
    kind: Literal["added", "removed", "changed"]
    value_a: Any = None
    value_b: Any = None


def diff_parameters(
    params_a: Mapping[str, Any],
    params_b: Mapping[str, Any],
) -> list[DiffEntry]:
    """Compare two parameter dicts and return a sorted list of differences.

    - ``added``: key exists in *params_b* but not *params_a*
    - ``removed``: key exists in *params_a* but not *params_b*
    - ``changed``: key exists in both but values differ
    """
    diffs: list[DiffEntry] = []
    all_keys = set(params_a) | set(params_b)

    for key in all_keys:
        in_a = key in params_a
        in_b = key in params_b

        if in_a and not in_b:
            diffs.append(DiffEntry(key=key, kind="removed", value_a=params_a[key]))
        elif in_b and not in_a:
            diffs.append(DiffEntry(key=key, kind="added", value_b=params_b[key]))
        elif params_a[key] != params_b[key]:
            diffs.append(
                DiffEntry(
                    key=key, kind="changed", value_a=params_a[key], value_b=params_b[key]
                )
            )

    diffs.sort(key=lambda d: d.key)
    return diffs


def _ignored(key: str, ignore: Iterable[str]) -> bool:
    return any(key.startswith(p) if p.endswith(".") else key == p for p in ignore)


def unexpected_differences(
    params_a: Mapping[str, Any],
    params_b: Mapping[str, Any],
    ignore: Iterable[str] = SWEEP_KEYS,
) -> list[DiffEntry]:
    """Differences outside *ignore* (exact keys, or prefixes ending in ``.``)."""
    ignore = tuple(ignore)
    return [d for d in diff_parameters(params_a, params_b) if not _ignored(d.key, ignore)]


def format_diff(diffs: Iterable[DiffEntry]) -> str:
    """One line per difference, e.g. ``run.seed: 1 -> 2``."""
    lines = []
    for d in diffs:
        match d.kind:
            case "added":
                lines.append(f"{d.key}: (unset) -> {d.value_b!r}")
            case "removed":
                lines.append(f"{d.key}: {d.value_a!r} -> (unset)")
            case _:
                lines.append(f"{d.key}: {d.value_a!r} -> {d.value_b!r}")
    return "\n".join(lines)
