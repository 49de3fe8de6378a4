"""Tests for the shortcot-lab command line."""

from __future__ import annotations

import json
import logging
from pathlib import Path

import pytest

from shortcot_lab import __version__
from shortcot_lab.app import LOG_LEVEL_ENV, configure_logging
from shortcot_lab.cli import build_parser, config_layers, main
from shortcot_lab.core.checkpoint import load_checkpoint
from shortcot_lab.core.run_log import RunLogReader
from shortcot_lab.core.sweep import CONFIG_NAME

TINY = [
    "--preset", "schedule_audit",
    "--set", "policy.embed_dim=3",
    "--set", "policy.hidden_dim=4",
    "--set", "pretrain.steps=0",
    "--set", "train.prompts_per_epoch=2",
]


def _train(out: Path, *extra: str) -> int:
    return main(["train", *TINY, "--out", str(out), *extra])


# ---------------------------------------------------------------------------
# Configuration layering
# ---------------------------------------------------------------------------


class TestConfigLayers:
    def test_flags_override_set(self) -> None:
        args = build_parser().parse_args(
            ["train", "--set", "run.seed=4", "--seed", "9", "--strategy", "soft"]
        )
        top = config_layers(args)[-1]
        assert top["run.seed"] == 9
        assert top["penalty.strategy"] == "soft"

    def test_preset_is_lowest(self) -> None:
        args = build_parser().parse_args(["train", "--preset", "desk", "--set", "train.epochs=3"])
        layers = config_layers(args)
        assert len(layers) == 2
        assert layers[-1]["train.epochs"] == 3

    def test_eval_seeds(self) -> None:
        args = build_parser().parse_args(["eval", "--seeds", "1,3"])
        assert config_layers(args)[-1]["eval.seeds"] == [1, 3]


# ---------------------------------------------------------------------------
# Exit codes
# ---------------------------------------------------------------------------


class TestExitCodes:
    def test_version(self, capsys: pytest.CaptureFixture[str]) -> None:
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0
        assert __version__ in capsys.readouterr().out

    def test_missing_config(self, tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
        assert main(["train", "--config", str(tmp_path / "missing.cfg")]) == 2
        assert "not found" in capsys.readouterr().err

    def test_unknown_strategy(self, tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
        assert _train(tmp_path / "run", "--strategy", "shorter") == 2
        assert "shortcot-lab: error:" in capsys.readouterr().err

    def test_unknown_key(self, tmp_path: Path) -> None:
        assert _train(tmp_path / "run", "--set", "train.epochz=3") == 2

    def test_invalid_schedule(self, tmp_path: Path) -> None:
        assert _train(tmp_path / "run", "--set", "train.schedule=1-4:4") == 2

    def test_eval_needs_checkpoint(self) -> None:
        assert main(["eval"]) == 2

    def test_corrupt_checkpoint(self, tmp_path: Path) -> None:
        bad = tmp_path / "bad.bin"
        bad.write_bytes(b"not a checkpoint")
        assert main(["eval", "--checkpoint", str(bad), "--per-category", "1"]) == 3


class TestPresetsCommand:
    def test_lists_bundled(self, capsys: pytest.CaptureFixture[str]) -> None:
        assert main(["presets"]) == 0
        names = [line.split()[0] for line in capsys.readouterr().out.splitlines()]
        assert names == ["desk", "full", "schedule_audit"]


# ---------------------------------------------------------------------------
# End to end
# ---------------------------------------------------------------------------


class TestEndToEnd:
    def test_train_eval_analyze(
        self, tmp_path: Path, capsys: pytest.CaptureFixture[str]
    ) -> None:
        base = tmp_path / "none"
        soft = tmp_path / "soft"
        assert _train(base) == 0
        assert _train(soft, "--strategy", "soft") == 0
        assert capsys.readouterr().out.splitlines() == [str(base), str(soft)]

        log = RunLogReader.from_run_dir(soft)
        assert log.strategy == "soft"
        assert log.group_sizes() == {1: 4, 2: 4, 3: 4, 4: 4, 5: 4, 6: 4, 7: 3, 8: 3}
        assert load_checkpoint(soft / "final.bin").params.version == 16
        metadata = json.loads((soft / "metadata.json").read_text())
        assert metadata["status"] == "completed"

        out = tmp_path / "eval"
        assert main(["eval", "--checkpoint", str(soft / "final.bin"), "--per-category", "1",
                     "--seeds", "1,2", "--out", str(out)]) == 0
        summary = json.loads((out / "eval_summary.json").read_text())
        assert summary["samples"] == 12
        assert (out / "eval_records.csv").is_file()

        analysis = tmp_path / "analysis"
        assert main(["analyze", "--runs", str(base), str(soft), "--out", str(analysis),
                     "--per-category", "1", "--seeds", "1"]) == 0
        result = json.loads((analysis / "analysis.json").read_text())
        assert set(result["runs"]) == {"none", "soft"}
        assert "soft" in result["cost"]

    def test_eval_without_cot(self, tmp_path: Path) -> None:
        run = tmp_path / "run"
        assert _train(run) == 0
        assert main(["eval", "--checkpoint", str(run / "final.bin"), "--per-category", "1",
                     "--seeds", "1", "--no-cot"]) == 0
        summary = json.loads((run / "eval_nocot" / "eval_nocot_summary.json").read_text())
        assert summary["use_cot"] is False
        assert summary["cot_length_mean"] == 0.0

    def test_same_seed_same_log(self, tmp_path: Path) -> None:
        assert _train(tmp_path / "a", "--seed", "3") == 0
        assert _train(tmp_path / "b", "--seed", "3") == 0
        assert (tmp_path / "a" / "log.jsonl").read_bytes() == (
            tmp_path / "b" / "log.jsonl"
        ).read_bytes()


class TestSweepCommand:
    def test_failed_run_does_not_stop_the_sweep(
        self, tmp_path: Path, capsys: pytest.CaptureFixture[str]
    ) -> None:
        out = tmp_path / "sweep"
        # Five epochs do not match the eight-epoch schedule.
        code = main(["sweep", *TINY, "--out", str(out), "--axis", "train.epochs=5,8",
                     "--name", "epochs_{train.epochs}", "--run"])
        assert code == 2
        captured = capsys.readouterr()
        assert captured.out.splitlines() == [
            str(out / "epochs_5" / CONFIG_NAME), str(out / "epochs_8" / CONFIG_NAME),
        ]
        assert "1 sweep run(s) failed: epochs_5 (exit 2)" in captured.err
        assert (out / "epochs_8" / "final.bin").is_file()
        metadata = json.loads((out / "epochs_8" / "metadata.json").read_text())
        assert metadata["status"] == "completed"


# ---------------------------------------------------------------------------
# Logging setup
# ---------------------------------------------------------------------------


class TestConfigureLogging:
    def test_default_warning(self, monkeypatch: pytest.MonkeyPatch) -> None:
        monkeypatch.delenv(LOG_LEVEL_ENV, raising=False)
        assert configure_logging() == logging.WARNING

    def test_environment(self, monkeypatch: pytest.MonkeyPatch) -> None:
        monkeypatch.setenv(LOG_LEVEL_ENV, "debug")
        assert configure_logging() == logging.DEBUG

    def test_argument_wins(self, monkeypatch: pytest.MonkeyPatch) -> None:
        monkeypatch.setenv(LOG_LEVEL_ENV, "debug")
        assert configure_logging("info") == logging.INFO

    def test_unknown_level(self, monkeypatch: pytest.MonkeyPatch) -> None:
        monkeypatch.delenv(LOG_LEVEL_ENV, raising=False)
        assert configure_logging("chatty") == logging.WARNING
