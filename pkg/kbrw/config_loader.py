from __future__ import annotations

import json
import os
from typing import Any, Dict

from .config import Config


def load_json(relative_path: str) -> Dict[str, Any]:
    try:
        path = relative_path
        if not os.path.isabs(path):
            path = os.path.join(os.getcwd(), relative_path)
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except Exception:
        return {}


def load_config() -> Dict[str, Any]:
    """Load all configuration files."""
    base = Config.CONFIG_DIR
    return {
        "caps": load_json(os.path.join(base, "caps.json")),
        "solver": load_json(os.path.join(base, "solver.json")),
        "acceptance": load_json(os.path.join(base, "acceptance.json")),
    }


def section(name: str, defaults: Dict[str, Any]) -> Dict[str, Any]:
    """Return one config section layered over coded defaults."""
    merged = dict(defaults)
    merged.update(load_config().get(name, {}) or {})
    return merged
