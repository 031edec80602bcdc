"""Structured world-state engine for counterfactual indoor scene data."""
from __future__ import annotations

__version__ = "0.1.0"
ENGINE_VERSION = f"cfworld-{__version__}"
