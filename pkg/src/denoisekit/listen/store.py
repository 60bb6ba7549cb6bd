"""Append-only JSON-lines event log, fsynced per write.

The log is the source of truth: results are a pure fold over it, and
replaying it reproduces identical statistics. One appender lock per
experiment serializes writers; readers see immutable prefixes.
"""

from __future__ import annotations

import json
import os
import threading
from pathlib import Path


class EventLog:
    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def append(self, event: dict) -> None:
        line = json.dumps(event, separators=(",", ":"))
        with self._lock:
            with open(self.path, "a") as f:
                f.write(line + "\n")
                f.flush()
                os.fsync(f.fileno())

    def replay(self) -> list:
        if not self.path.exists():
            return []
        events = []
        with open(self.path) as f:
            for line in f:
                line = line.strip()
                if line:
                    events.append(json.loads(line))
        return events
