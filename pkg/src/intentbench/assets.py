"""Loaders for the shipped data assets (catalog, templates, noise banks, lexicons)."""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources
from pathlib import Path


def _load_resource(name: str):
    ref = resources.files("intentbench.data").joinpath(name)
    return json.loads(ref.read_text(encoding="utf-8"))


@lru_cache(maxsize=None)
def default_catalog_raw() -> tuple:
    """Raw catalog entries as shipped, as an immutable tuple of dicts."""
    return tuple(_load_resource("catalog.json"))


@lru_cache(maxsize=None)
def default_templates() -> dict:
    """Template bank keyed by language code, then action."""
    return _load_resource("templates.json")


@lru_cache(maxsize=None)
def default_noise_banks() -> dict:
    """Slang/greeting/emoji/brand/code-switch banks keyed by language code."""
    return _load_resource("noise_banks.json")


@lru_cache(maxsize=None)
def default_lexicons() -> dict:
    """Per-language add/remove verb lists and number-word tables."""
    return _load_resource("lexicons.json")


def load_json_file(path: str | Path):
    """Load a user-supplied JSON file (catalog or template bank override)."""
    return json.loads(Path(path).read_text(encoding="utf-8"))
