"""Append-only JSON-lines journal.

One record per mutation, ``{"op": ..., "data": {...}}``. Records are flushed
to the OS on every append, so a killed process loses nothing that was
acknowledged. A final line without its newline is a torn write from a crash
and is dropped on replay; any other unparsable line is corruption.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from pathlib import Path
from typing import Iterator

from .errors import JournalCorrupt, JournalError

log = logging.getLogger(__name__)

JOURNAL_NAME = "journal.jsonl"


class Journal:
    def __init__(self, path: str | os.PathLike):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._fh = None
        self.failed: str | None = None

    @classmethod
    def in_dir(cls, data_dir: str | os.PathLike) -> "Journal":
        return cls(Path(data_dir) / JOURNAL_NAME)

    def replay(self) -> Iterator[tuple[int, str, dict]]:
        """Yield ``(line_no, op, data)`` for every intact record."""
        if not self.path.exists():
            return
        with open(self.path, "rb") as fh:
            raw = fh.read()
        lines = raw.split(b"\n")
        torn = lines.pop()  # b"" when the file ends with a newline
        for n, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                op, data = rec["op"], rec["data"]
                if not isinstance(op, str) or not isinstance(data, dict):
                    raise TypeError("op/data have wrong types")
            except (ValueError, KeyError, TypeError) as exc:
                raise JournalCorrupt(n, str(exc)) from None
            yield n, op, data
        if torn:
            log.warning("dropping torn journal tail (%d bytes)", len(torn))
            with open(self.path, "r+b") as fh:
                fh.truncate(len(raw) - len(torn))

    def open(self) -> None:
        if self._fh is None:
            self._fh = open(self.path, "a", encoding="utf-8")

    def append(self, op: str, data: dict) -> None:
        line = json.dumps({"op": op, "data": data}, separators=(",", ":"))
        with self._lock:
            try:
                self.open()
                self._fh.write(line + "\n")
                self._fh.flush()
            except (OSError, ValueError) as exc:
                self.failed = str(exc)
                raise JournalError(f"journal write failed: {exc}") from exc

    def writable(self) -> bool:
        with self._lock:
            if self.failed is not None:
                return False
            try:
                self.open()
                self._fh.flush()
            except (OSError, ValueError) as exc:
                self.failed = str(exc)
                return False
            return os.access(self.path, os.W_OK)

    def close(self) -> None:
        with self._lock:
            if self._fh is not None and not self._fh.closed:
                self._fh.close()
            self._fh = None
