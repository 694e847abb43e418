"""Local persistence: JSON manifests and sidecars, CSV tables, cache directory."""

import csv
import json
import os
from datetime import datetime, timezone
from pathlib import Path

CACHE_ENV = "ODF_CACHE_DIR"
DEFAULT_CACHE_DIR = Path.home() / ".cache" / "odf-cli"


def cache_dir() -> Path:
    """Return the cache directory ($ODF_CACHE_DIR or ~/.cache/odf-cli), creating it."""
    path = Path(os.environ.get(CACHE_ENV) or DEFAULT_CACHE_DIR).expanduser()
    path.mkdir(parents=True, exist_ok=True)
    return path


def _ensure_parent(path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)


def load_json(path: str | Path) -> dict:
    """Load a JSON document; a missing file reads as {}."""
    path = Path(path)
    if not path.exists():
        return {}
    with open(path) as f:
        return json.load(f)


def save_json(path: str | Path, data: dict):
    """Save a JSON document with stable key order."""
    path = Path(path)
    _ensure_parent(path)
    with open(path, "w") as f:
        json.dump(data, f, indent=2, sort_keys=True, ensure_ascii=False)


def sidecar_path(path: str | Path, suffix: str = ".json") -> Path:
    """`mesh.obj` -> `mesh.obj.json`."""
    path = Path(path)
    return path.with_name(path.name + suffix)


def write_csv(path: str | Path, rows: list[dict], columns: list[str] | None = None):
    """Write dict rows as CSV; columns default to the first row's keys."""
    path = Path(path)
    _ensure_parent(path)
    columns = columns or (list(rows[0].keys()) if rows else [])
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=columns, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def timestamp() -> str:
    """Return current UTC timestamp as ISO string."""
    return datetime.now(timezone.utc).isoformat(timespec="seconds")
