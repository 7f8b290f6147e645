"""
Run logging
===========
Structured JSON-lines event log and reproducibility manifest for every
command run.
"""

import os
import sys
import json
import logging
import platform
import threading
from enum import Enum
from dataclasses import dataclass, asdict
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional

import numpy as np
import torch

from .. import __version__

RUN_LOG_NAME = "run_log.jsonl"
MANIFEST_NAME = "manifest.json"


class RunEventType(Enum):
    RUN_START = "run_start"
    EPOCH = "epoch"
    STAGE = "stage"
    ITERATION = "iteration"
    SEQUENCE = "sequence"
    RUN_END = "run_end"
    ERROR = "error"


@dataclass
class RunEvent:
    event_id: str
    event_type: str
    timestamp: str
    command: str
    details: Dict[str, Any]


class RunLogger:
    """Appends one JSON object per event to <output>/run_log.jsonl."""

    def __init__(self, output_dir: str, command: str):
        self.output_dir = output_dir
        self.command = command
        self.log_file = os.path.join(output_dir, RUN_LOG_NAME)
        self.event_counter = 0
        self._lock = threading.Lock()
        self._setup_logging()

    def _setup_logging(self):
        os.makedirs(self.output_dir, exist_ok=True)
        self.logger = logging.getLogger(f"groundmotion.run.{os.path.abspath(self.output_dir)}")
        self.logger.setLevel(logging.INFO)
        self.logger.propagate = False

        if not self.logger.handlers:
            handler = logging.FileHandler(self.log_file, mode="a")
            handler.setLevel(logging.INFO)
            handler.setFormatter(logging.Formatter("%(message)s"))
            self.logger.addHandler(handler)
        self.handler = self.logger.handlers[0]

    def log_event(self, event_type: RunEventType, **details):
        # fits run in worker threads; ids must stay unique
        with self._lock:
            self.event_counter += 1
            event = RunEvent(
                event_id=f"{self.command}-{self.event_counter:06d}",
                event_type=event_type.value,
                timestamp=datetime.now(timezone.utc).isoformat(),
                command=self.command,
                details=details,
            )
            self.logger.info(json.dumps(asdict(event), default=_jsonable))

    def close(self):
        for handler in list(self.logger.handlers):
            handler.close()
            self.logger.removeHandler(handler)


def _jsonable(value):
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, (np.ndarray, torch.Tensor)):
        return value.tolist()
    return str(value)


def environment_versions() -> Dict[str, str]:
    return {
        "groundmotion": __version__,
        "python": sys.version.split()[0],
        "platform": platform.platform(),
        "numpy": np.__version__,
        "torch": torch.__version__,
    }


def write_manifest(output_dir: str, command: str, seed: int, config: Dict, files: List[str],
                   extra: Optional[Dict] = None) -> str:
    """Writes manifest.json with everything needed to rerun the command."""
    manifest = {
        "command": command,
        "seed": seed,
        "created": datetime.now(timezone.utc).isoformat(),
        "versions": environment_versions(),
        "config": config,
        "files": sorted(files),
        **(extra or {}),
    }
    path = os.path.join(output_dir, MANIFEST_NAME)
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True, default=_jsonable)
    return path
