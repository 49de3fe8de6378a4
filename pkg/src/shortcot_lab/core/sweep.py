"""Parameter sweep logic: generate one config file per combination of axis values."""

from __future__ import annotations

import itertools
import re
from collections import OrderedDict
from collections.abc import Mapping
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from shortcot_lab.core.config_file import parse_value_text, write_config_file
from shortcot_lab.core.config_schema import coerce_value, get_parameter
from shortcot_lab.core.errors import ConfigError

CONFIG_NAME = "config.cfg"

_UNSAFE = re.compile(r"[^A-Za-z0-9_.-]+")


@dataclass
class SweepAxis:
    """One config key to sweep over."""

    key: str
    start: float | None = None
    end: float | None = None
    step: float | None = None
    explicit: list[Any] | None = None

    def values(self) -> list[Any]:
        """Return the list of values for this axis."""
        if self.explicit is not None:
            return list(self.explicit)
        if self.start is not None and self.end is not None and self.step is not None:
            if self.step <= 0:
                raise ConfigError(f"Sweep axis {self.key!r} needs a positive step")
            vals: list[float] = []
            v = self.start
            while v <= self.end + self.step * 1e-9:  # tolerance for float rounding
                vals.append(v)
                v += self.step
            return vals
        raise ConfigError(
            f"Sweep axis {self.key!r} must specify either range (start/end/step) "
            f"or explicit values."
        )

    @staticmethod
    def parse(text: str) -> SweepAxis:
        """Parse ``key=v1,v2,...`` or ``key=start:end:step``."""
        key, sep, rest = text.partition("=")
        key = key.strip()
        if not sep or not key or not rest.strip():
            raise ConfigError(f"Malformed sweep axis {text!r}; expected KEY=V1,V2 or KEY=A:B:STEP")
        param = get_parameter(key)
        rest = rest.strip()
        if rest.count(":") == 2 and "," not in rest and param.dtype in ("int", "float"):
            start, end, step = (float(x) for x in rest.split(":"))
            axis = SweepAxis(key, start, end, step)
            return SweepAxis(key, explicit=[coerce_value(param, v) for v in axis.values()])
        return SweepAxis(key, explicit=[coerce_value(param, parse_value_text(v))
                                        for v in rest.split(",")])


@dataclass
class SweepConfig:
    """Configuration for a parameter sweep."""

    base_params: Mapping[str, Any]
    axes: list[SweepAxis]
    output_dir: Path
    name_template: str = ""
    header_comment: str = "Generated by shortcot-lab parameter sweep"


def generate_sweep_combinations(axes: list[SweepAxis]) -> list[dict[str, Any]]:
    """Compute the Cartesian product of all sweep axes.

    Returns a list of dicts, each mapping parameter key → value for one run.
    """
    if not axes:
        return [{}]

    keys = [a.key for a in axes]
    if len(set(keys)) != len(keys):
        raise ConfigError(f"Sweep axes repeat a key: {keys}")
    value_lists = [a.values() for a in axes]

    return [
        dict(zip(keys, combo, strict=True))
        for combo in itertools.product(*value_lists)
    ]


def default_run_name(overrides: Mapping[str, Any]) -> str:
    """``strategy-soft_seed-2`` style name from the last component of each key."""
    if not overrides:
        return "base"
    parts = [f"{k.rsplit('.', 1)[-1]}-{v}" for k, v in overrides.items()]
    return _UNSAFE.sub("_", "_".join(parts))


def generate_sweep_inputs(
    config: SweepConfig,
) -> list[tuple[str, Path]]:
    """Write a config file for every combination in the sweep.

    Each run directory's ``run.output_dir`` points at itself. Returns a list of
    ``(run_name, config_path)`` tuples.
    """
    combos = generate_sweep_combinations(config.axes)
    results: list[tuple[str, Path]] = []
    names: set[str] = set()

    for overrides in combos:
        merged = OrderedDict(config.base_params)
        merged.update(overrides)

        if config.name_template:
            name = config.name_template
            for key, val in overrides.items():
                name = name.replace(f"{{{key}}}", str(val))
        else:
            name = default_run_name(overrides)
        if name in names:
            raise ConfigError(f"Sweep produces duplicate run name {name!r}")
        names.add(name)

        run_dir = config.output_dir / name
        run_dir.mkdir(parents=True, exist_ok=True)
        merged["run.output_dir"] = str(run_dir)
        config_path = run_dir / CONFIG_NAME
        write_config_file(merged, config_path, header_comment=config.header_comment)
        results.append((name, config_path))

    return results
