"""On-disk cache location for neighbor lists and ground-truth distances."""

from __future__ import annotations

import os
from pathlib import Path

ENV_VAR = "EDIT_EMBED_CACHE"


def cache_dir() -> Path:
    root = os.environ.get(ENV_VAR)
    path = Path(root) if root else Path.home() / ".cache" / "edit-embed"
    path.mkdir(parents=True, exist_ok=True)
    return path


def cache_path(kind: str, name: str) -> Path:
    sub = cache_dir() / kind
    sub.mkdir(exist_ok=True)
    return sub / name
