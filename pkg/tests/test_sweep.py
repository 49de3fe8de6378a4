"""Tests for parameter sweep logic."""

from __future__ import annotations

from collections import OrderedDict
from pathlib import Path

import pytest

from shortcot_lab.core.config_file import parse_config_file
from shortcot_lab.core.errors import ConfigError
from shortcot_lab.core.sweep import (
    CONFIG_NAME,
    SweepAxis,
    SweepConfig,
    default_run_name,
    generate_sweep_combinations,
    generate_sweep_inputs,
)


class TestSweepAxis:
    """Test SweepAxis range and explicit value modes."""

    def test_range_values(self) -> None:
        axis = SweepAxis(key="grpo.beta", start=0.0, end=0.04, step=0.01)
        assert axis.values() == pytest.approx([0.0, 0.01, 0.02, 0.03, 0.04])

    def test_range_excludes_overshoot(self) -> None:
        axis = SweepAxis(key="run.seed", start=1.0, end=3.5, step=1.0)
        assert axis.values() == pytest.approx([1.0, 2.0, 3.0])

    def test_explicit_takes_priority_over_range(self) -> None:
        axis = SweepAxis(key="x", start=0.0, end=10.0, step=1.0, explicit=[5, 10, 15])
        assert axis.values() == [5, 10, 15]

    def test_range_requires_start_end_step(self) -> None:
        with pytest.raises(ConfigError, match=r"range.*or explicit"):
            SweepAxis(key="x").values()

    def test_non_positive_step(self) -> None:
        with pytest.raises(ConfigError, match="positive step"):
            SweepAxis(key="x", start=0.0, end=1.0, step=0.0).values()


class TestParseAxis:
    def test_explicit_strategies(self) -> None:
        axis = SweepAxis.parse("penalty.strategy=none,hard,soft")
        assert axis.key == "penalty.strategy"
        assert axis.values() == ["none", "hard", "soft"]

    def test_int_range_coerced(self) -> None:
        assert SweepAxis.parse("run.seed=1:3:1").values() == [1, 2, 3]

    def test_values_checked_against_schema(self) -> None:
        with pytest.raises(ConfigError, match="not one of"):
            SweepAxis.parse("penalty.strategy=none,shorter")

    def test_unknown_key(self) -> None:
        with pytest.raises(ConfigError, match="Unknown config key"):
            SweepAxis.parse("train.lr=1,2")

    def test_malformed(self) -> None:
        with pytest.raises(ConfigError, match="Malformed sweep axis"):
            SweepAxis.parse("run.seed")


class TestGenerateSweepCombinations:
    def test_two_axes_cartesian_product(self) -> None:
        axes = [
            SweepAxis(key="penalty.strategy", explicit=["none", "soft"]),
            SweepAxis(key="run.seed", explicit=[1, 2]),
        ]
        combos = generate_sweep_combinations(axes)
        assert len(combos) == 4
        assert combos[0] == {"penalty.strategy": "none", "run.seed": 1}
        assert {"penalty.strategy": "soft", "run.seed": 2} in combos

    def test_empty_axes_returns_single_empty(self) -> None:
        assert generate_sweep_combinations([]) == [{}]

    def test_repeated_key(self) -> None:
        axes = [SweepAxis(key="run.seed", explicit=[1]), SweepAxis(key="run.seed", explicit=[2])]
        with pytest.raises(ConfigError, match="repeat"):
            generate_sweep_combinations(axes)


class TestDefaultRunName:
    def test_last_key_component(self) -> None:
        name = default_run_name({"penalty.strategy": "soft", "run.seed": 2})
        assert name == "strategy-soft_seed-2"

    def test_unsafe_characters(self) -> None:
        assert default_run_name({"train.schedule": ["1-6:4", "7-8:3"]}) == (
            "schedule-_1-6_4_7-8_3_"
        )

    def test_empty(self) -> None:
        assert default_run_name({}) == "base"


class TestGenerateSweepInputs:
    def _config(self, tmp_path: Path, **kwargs: str) -> SweepConfig:
        return SweepConfig(
            base_params=OrderedDict([("train.epochs", 8), ("penalty.strategy", "none")]),
            axes=[SweepAxis(key="penalty.strategy", explicit=["none", "hard", "soft"])],
            output_dir=tmp_path,
            **kwargs,
        )

    def test_generates_files(self, tmp_path: Path) -> None:
        results = generate_sweep_inputs(self._config(tmp_path))
        assert [name for name, _ in results] == ["strategy-none", "strategy-hard",
                                                 "strategy-soft"]
        for name, path in results:
            assert path == tmp_path / name / CONFIG_NAME
            params = parse_config_file(path)
            assert params["train.epochs"] == 8
            assert params["run.output_dir"] == str(tmp_path / name)

    def test_overrides_base_params(self, tmp_path: Path) -> None:
        results = generate_sweep_inputs(self._config(tmp_path))
        assert parse_config_file(results[2][1])["penalty.strategy"] == "soft"

    def test_header_comment(self, tmp_path: Path) -> None:
        results = generate_sweep_inputs(self._config(tmp_path))
        assert results[0][1].read_text().startswith("# Generated by shortcot-lab")

    def test_name_template_substitution(self, tmp_path: Path) -> None:
        results = generate_sweep_inputs(
            self._config(tmp_path, name_template="desk_{penalty.strategy}")
        )
        assert [name for name, _ in results] == ["desk_none", "desk_hard", "desk_soft"]

    def test_duplicate_names(self, tmp_path: Path) -> None:
        with pytest.raises(ConfigError, match="duplicate run name"):
            generate_sweep_inputs(self._config(tmp_path, name_template="same"))
