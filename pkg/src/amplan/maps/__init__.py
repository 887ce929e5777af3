"""Bundled fixture maps.

Each map ships as a plain-text occupancy document next to this module.
`load_map` accepts either a bundled id or a filesystem path, so CLI flags
and scenario files can name maps both ways.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from ..env import Environment

MAP_IDS = ("corridor10", "empty", "corridor", "maze", "office", "bugtrap")


def map_ids() -> tuple[str, ...]:
    return MAP_IDS


def map_text(map_id: str) -> str:
    if map_id not in MAP_IDS:
        raise KeyError(f"unknown map {map_id!r}; bundled: {', '.join(MAP_IDS)}")
    return (resources.files(__name__) / f"{map_id}.map").read_text()


def scenario_doc(map_id: str) -> dict:
    """Bundled tour scenario for a map: start, ordered goals, and any
    per-map planner overrides."""
    if map_id not in MAP_IDS:
        raise KeyError(f"unknown map {map_id!r}; bundled: {', '.join(MAP_IDS)}")
    import json
    return json.loads(
        (resources.files(__name__) / f"{map_id}.scenario.json").read_text())


def load_map(spec: str | Path) -> Environment:
    """Load a bundled map by id, or any map document by path."""
    if isinstance(spec, str) and spec in MAP_IDS:
        return Environment.from_text(map_text(spec))
    path = Path(spec)
    if not path.exists():
        raise KeyError(
            f"{spec!r} is neither a bundled map id nor an existing file")
    return Environment.from_text(path.read_text())
