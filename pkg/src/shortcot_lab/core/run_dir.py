"""Run directory layout and metadata persistence."""

from __future__ import annotations

import json
import re
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Literal

from shortcot_lab import __version__
from shortcot_lab.core.config_file import parse_config_file, write_config_string
from shortcot_lab.core.errors import DataError
from shortcot_lab.core.export import atomic_write_text

SNAPSHOT_NAME = "config.snapshot"
LOG_NAME = "log.jsonl"
TIMING_NAME = "timing.jsonl"
METADATA_NAME = "metadata.json"
FINAL_NAME = "final.bin"
LAST_GOOD_NAME = "last_good.bin"
PRETRAINED_NAME = "pretrained.bin"

_CKPT_RE = re.compile(r"ckpt_(\d+)\.bin")

RunStatus = Literal["created", "running", "completed", "failed"]


# ---------------------------------------------------------------------------
# RunMetadata
# ---------------------------------------------------------------------------


@dataclass
class RunMetadata:
    """Wall-clock facts about a run; the only non-reproducible file in a run directory."""

    command: str
    created_at: datetime
    tool_version: str = __version__
    status: RunStatus = "created"
    started_at: datetime | None = None
    completed_at: datetime | None = None
    notes: list[str] = field(default_factory=list)


def _json_default(obj: object) -> str:
    if isinstance(obj, datetime):
        return obj.isoformat()
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")


def _parse_datetime(value: str | None) -> datetime | None:
    if value is None:
        return None
    return datetime.fromisoformat(value)


def _metadata_from_dict(d: dict[str, Any]) -> RunMetadata:
    return RunMetadata(
        command=d.get("command", ""),
        created_at=_parse_datetime(d["created_at"]),  # type: ignore[arg-type]
        tool_version=d.get("tool_version", ""),
        status=d.get("status", "created"),
        started_at=_parse_datetime(d.get("started_at")),
        completed_at=_parse_datetime(d.get("completed_at")),
        notes=d.get("notes", []),
    )


# ---------------------------------------------------------------------------
# RunDirectory
# ---------------------------------------------------------------------------


@dataclass
class RunDirectory:
    """Paths and snapshot of one run.

    Layout::

        config.snapshot   resolved configuration
        metadata.json     timestamps, status, tool version
        log.jsonl         one record per optimisation step
        timing.jsonl      wall time per step
        ckpt_<epoch>.bin  periodic training checkpoints
        pretrained.bin    policy written by the pretrain command
        final.bin         final training checkpoint
    """

    root: Path

    # ------------------------------------------------------------------
    # Factories
    # ------------------------------------------------------------------

    @staticmethod
    def create(root: str | Path, params: dict[str, Any], *, command: str) -> RunDirectory:
        """Create *root* and write the snapshot and fresh metadata."""
        run = RunDirectory(Path(root))
        run.root.mkdir(parents=True, exist_ok=True)
        atomic_write_text(
            run.snapshot_path,
            write_config_string(
                params,
                header_comment=f"shortcot-lab {__version__} resolved configuration ({command})",
            ),
        )
        run.save_metadata(RunMetadata(command=command, created_at=datetime.now(timezone.utc)))
        return run

    @staticmethod
    def open(root: str | Path) -> RunDirectory:
        """Open an existing run directory; it must hold a snapshot."""
        run = RunDirectory(Path(root))
        if not run.snapshot_path.is_file():
            raise DataError(f"Not a run directory (no {SNAPSHOT_NAME}): {run.root}")
        return run

    # ------------------------------------------------------------------
    # Paths
    # ------------------------------------------------------------------

    @property
    def snapshot_path(self) -> Path:
        return self.root / SNAPSHOT_NAME

    @property
    def log_path(self) -> Path:
        return self.root / LOG_NAME

    @property
    def timing_path(self) -> Path:
        return self.root / TIMING_NAME

    @property
    def metadata_path(self) -> Path:
        return self.root / METADATA_NAME

    @property
    def final_path(self) -> Path:
        return self.root / FINAL_NAME

    @property
    def last_good_path(self) -> Path:
        return self.root / LAST_GOOD_NAME

    @property
    def pretrained_path(self) -> Path:
        return self.root / PRETRAINED_NAME

    def checkpoint_path(self, epoch: int) -> Path:
        return self.root / f"ckpt_{epoch}.bin"

    def checkpoints(self) -> list[tuple[int, Path]]:
        """Periodic checkpoints sorted by epoch."""
        found = []
        for path in self.root.glob("ckpt_*.bin"):
            m = _CKPT_RE.fullmatch(path.name)
            if m:
                found.append((int(m.group(1)), path))
        return sorted(found)

    # ------------------------------------------------------------------
    # Persistence
    # ------------------------------------------------------------------

    def load_parameters(self) -> OrderedDict[str, Any]:
        return parse_config_file(self.snapshot_path)

    def load_metadata(self) -> RunMetadata:
        if not self.metadata_path.is_file():
            raise DataError(f"Missing {METADATA_NAME} in {self.root}")
        return _metadata_from_dict(json.loads(self.metadata_path.read_text()))

    def save_metadata(self, metadata: RunMetadata) -> Path:
        return atomic_write_text(
            self.metadata_path,
            json.dumps(asdict(metadata), default=_json_default, indent=2) + "\n",
        )

    def mark(self, status: RunStatus, note: str | None = None) -> RunMetadata:
        """Update the run status and its timestamps."""
        meta = self.load_metadata()
        now = datetime.now(timezone.utc)
        meta.status = status
        if status == "running":
            meta.started_at = now
        elif status in ("completed", "failed"):
            meta.completed_at = now
        if note:
            meta.notes.append(note)
        self.save_metadata(meta)
        return meta
