"""Wires the tag store, job manager and ingestion together around one journal."""

from __future__ import annotations

import logging
import os
from pathlib import Path
from typing import Optional

from . import errors
from .ingest import SubscriptionManager, http_delete, http_post_json
from .jobs import JobManager
from .journal import Journal
from .tagstore import TagStore

log = logging.getLogger(__name__)


class Service:
    """All service state. ``data_dir=None`` keeps everything in memory."""

    def __init__(self, data_dir: Optional[str | os.PathLike] = None,
                 callback_url: str = "http://127.0.0.1:8080/v1/notify",
                 broker_post=http_post_json, broker_delete=http_delete, clock=None):
        self.data_dir = Path(data_dir) if data_dir is not None else None
        self.journal = Journal.in_dir(self.data_dir) if self.data_dir is not None else None
        self.store = TagStore(self.journal)
        self.jobs = JobManager(self.store, self.journal,
                               None if self.data_dir is None else self.data_dir / "models")
        kwargs = {} if clock is None else {"clock": clock}
        self.subscriptions = SubscriptionManager(callback_url, self.journal,
                                                 broker_post, broker_delete, **kwargs)
        if self.journal is not None:
            self._restore()
            self.journal.open()

    def _restore(self) -> None:
        parts = (self.store, self.jobs, self.subscriptions)
        count = 0
        for line, op, data in self.journal.replay():
            try:
                handled = any(p.apply(op, data) for p in parts)
            except (KeyError, TypeError, ValueError, errors.JamaicaError) as exc:
                raise errors.JournalCorrupt(line, f"cannot apply {op}: {exc!r}") from None
            if not handled:
                raise errors.JournalCorrupt(line, f"unknown op {op!r}")
            count += 1
        self.jobs.finish_restore()
        if count:
            log.info("restored %d journal records from %s", count, self.journal.path)

    def healthy(self) -> bool:
        return self.journal is None or self.journal.writable()

    def close(self) -> None:
        self.subscriptions.close()
        if self.journal is not None:
            self.journal.close()
