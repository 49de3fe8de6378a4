"""Preset library: bundled run configurations."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

from shortcot_lab.core.config_schema import coerce_value, get_parameter
from shortcot_lab.core.errors import ConfigError

_PRESETS_DIR = Path(__file__).resolve().parent.parent / "presets"


def list_presets() -> list[dict[str, Any]]:
    """Return metadata for all bundled presets (sorted by name)."""
    presets: list[dict[str, Any]] = []
    for path in sorted(_PRESETS_DIR.glob("*.json")):
        data = json.loads(path.read_text())
        presets.append({
            "name": data["name"],
            "description": data["description"],
            "category": data.get("category", ""),
            "file": path.name,
        })
    return presets


def load_preset(name: str) -> dict[str, Any]:
    """Load a preset by filename (e.g. ``"desk.json"``) or stem (``"desk"``).

    Returns the full preset dict including ``name``, ``description``,
    ``category``, and ``parameters``.
    """
    stem = name.removesuffix(".json")
    path = _PRESETS_DIR / f"{stem}.json"
    if not path.exists():
        known = ", ".join(p.stem for p in sorted(_PRESETS_DIR.glob("*.json")))
        raise ConfigError(f"Preset not found: {name!r} (available: {known})")
    return json.loads(path.read_text())  # type: ignore[no-any-return]


def preset_parameters(name: str) -> dict[str, Any]:
    """The preset's parameter layer, checked against the schema."""
    params = load_preset(name).get("parameters", {})
    return {key: coerce_value(get_parameter(key), value) for key, value in params.items()}
