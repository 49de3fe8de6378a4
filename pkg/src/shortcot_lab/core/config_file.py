"""Parse and write flat ``key = value`` run configuration files."""

from __future__ import annotations

import re
from collections import OrderedDict
from collections.abc import Mapping
from pathlib import Path
from typing import Any

from shortcot_lab.core.errors import ConfigError


def _parse_value(raw: str) -> Any:
    """Convert a single whitespace-trimmed value token to a Python type.

    Order of detection: bool → int → float → string.
    """
    if raw == "true":
        return True
    if raw == "false":
        return False
    if re.fullmatch(r"[+-]?\d+", raw):
        return int(raw)
    try:
        return float(raw)
    except ValueError:
        return raw


def _strip_quotes(s: str) -> str:
    if len(s) >= 2 and s[0] == '"' and s[-1] == '"':
        return s[1:-1]
    return s


def _strip_inline_comment(value_part: str) -> str:
    """Remove an inline ``# comment``; a ``#`` inside quotes is kept."""
    in_quotes = False
    for i, ch in enumerate(value_part):
        if ch == '"':
            in_quotes = not in_quotes
        elif ch == "#" and not in_quotes:
            return value_part[:i]
    return value_part


def parse_value_text(value_part: str) -> Any:
    """Parse the right-hand side of one assignment.

    A single quoted string stays one value; otherwise whitespace-separated
    tokens become a list.
    """
    value_part = value_part.strip()
    if not value_part:
        return ""
    if value_part.startswith('"') and value_part.endswith('"') and value_part.count('"') == 2:
        return _strip_quotes(value_part)
    tokens = [_strip_quotes(t) for t in value_part.split()]
    if len(tokens) == 1:
        return _parse_value(tokens[0])
    return [_parse_value(t) for t in tokens]


def parse_config_string(text: str, *, source: str = "<string>") -> OrderedDict[str, Any]:
    """Parse configuration text, preserving key order.

    Lines that are neither blank, comments nor assignments are errors.
    """
    result: OrderedDict[str, Any] = OrderedDict()

    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {stripped!r}")
        key_part, value_part = stripped.split("=", 1)
        key = key_part.strip()
        if not key:
            raise ConfigError(f"{source}:{lineno}: missing key before '='")
        result[key] = parse_value_text(_strip_inline_comment(value_part))

    return result


def parse_config_file(path: str | Path) -> OrderedDict[str, Any]:
    """Parse a configuration file; a missing file is a configuration error."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"Config file not found: {p}")
    return parse_config_string(p.read_text(), source=str(p))


def parse_override(text: str) -> tuple[str, Any]:
    """Parse one ``key=value`` command-line override."""
    if "=" not in text:
        raise ConfigError(f"Override must look like key=value, got {text!r}")
    key, value = text.split("=", 1)
    if not key.strip():
        raise ConfigError(f"Override has an empty key: {text!r}")
    return key.strip(), parse_value_text(value)


# ---------------------------------------------------------------------------
# Writer
# ---------------------------------------------------------------------------


def format_value(value: Any) -> str:
    """Format a Python value back to config syntax; floats round-trip exactly."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, int):
        return str(value)
    if isinstance(value, (list, tuple)):
        return " ".join(format_value(v) for v in value)
    text = str(value)
    if not text or any(ch.isspace() for ch in text) or "#" in text:
        return f'"{text}"'
    return text


def write_config_string(
    params: Mapping[str, Any],
    *,
    header_comment: str | None = None,
) -> str:
    """Serialize a parameter dict, grouped by namespace with a comment per group."""
    groups: OrderedDict[str, list[str]] = OrderedDict()
    for key in params:
        prefix = key.split(".")[0]
        groups.setdefault(prefix, []).append(key)

    lines: list[str] = []

    if header_comment is not None:
        for comment_line in header_comment.splitlines():
            lines.append(f"# {comment_line}" if comment_line else "#")
        lines.append("")

    first_group = True
    for prefix, keys in groups.items():
        section_lines = [
            f"{key} = {format_value(params[key])}"
            for key in keys
            if params[key] is not None and params[key] != []
        ]
        if not section_lines:
            continue
        if not first_group:
            lines.append("")
        lines.append(f"# {prefix}")
        lines.extend(section_lines)
        first_group = False

    lines.append("")
    return "\n".join(lines)


def write_config_file(
    params: Mapping[str, Any],
    path: str | Path,
    *,
    header_comment: str | None = None,
) -> None:
    Path(path).write_text(write_config_string(params, header_comment=header_comment))
