from __future__ import annotations

import json
import logging
import os
import sys
from datetime import datetime
from typing import Any, Dict, Optional

from .config import Config


class RunLogger:
    """Emit simulation and solver events as one JSON object per record."""

    def __init__(self, name: str = "kbrw"):
        self.logger = logging.getLogger(name)
        self.logger.setLevel(getattr(logging, Config.LOG_LEVEL.upper(), logging.INFO))
        self.logger.propagate = False

        # Create handlers if not exists
        if not self.logger.handlers:
            formatter = logging.Formatter('%(asctime)s - %(levelname)s - %(message)s')
            stream = logging.StreamHandler(sys.stderr)
            stream.setFormatter(formatter)
            self.logger.addHandler(stream)
            if Config.LOG_FILE:
                directory = os.path.dirname(Config.LOG_FILE)
                if directory:
                    os.makedirs(directory, exist_ok=True)
                handler = logging.FileHandler(Config.LOG_FILE)
                handler.setFormatter(formatter)
                self.logger.addHandler(handler)

    def _emit(self, level: int, kind: str, payload: Dict[str, Any]) -> None:
        record = {"type": kind, "timestamp": datetime.now().isoformat()}
        record.update(payload)
        self.logger.log(level, json.dumps(record, default=str, sort_keys=True))

    def log_run_start(self, command: str, seed: Optional[int], config_hash: str, workers: int):
        self._emit(logging.INFO, "run_start", {
            "command": command,
            "seed": seed,
            "config_hash": config_hash,
            "workers": workers,
        })

    def log_run_end(self, command: str, exit_code: int, runtime: float):
        self._emit(logging.INFO, "run_end", {
            "command": command,
            "exit_code": exit_code,
            "runtime_seconds": round(runtime, 6),
        })

    def log_censoring(self, what: str, censored: int, total: int, reason: str = ""):
        """Log censored walks or trees; above one percent this is a warning."""
        fraction = censored / total if total else 0.0
        level = logging.WARNING if fraction > 0.01 else logging.DEBUG
        self._emit(level, "censoring", {
            "what": what,
            "censored": censored,
            "total": total,
            "fraction": fraction,
            "reason": reason,
        })

    def log_solver(self, solver: str, **details: Any):
        self._emit(logging.DEBUG, "solver", {"solver": solver, **details})

    def log_artifact(self, path: str, kind: str, rows: int):
        self._emit(logging.INFO, "artifact", {"path": path, "kind": kind, "rows": rows})

    def log_warning(self, message: str, **details: Any):
        self._emit(logging.WARNING, "warning", {"message": message, **details})


# Global instance
run_logger = RunLogger()
