"""shortcot-lab: length-penalised GRPO on a synthetic text-to-scene task."""

__version__ = "0.1.0"
