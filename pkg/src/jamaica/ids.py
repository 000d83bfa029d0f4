"""Sortable identifiers and canonical timestamps.

Identifiers are 26-character ULIDs (48-bit millisecond clock + 80 random
bits, Crockford base32). Generation is monotonic per process: ids minted in
the same millisecond increment the random part, so lexicographic order
equals creation order.

Timestamps travel as RFC 3339 UTC strings with millisecond precision and are
held internally as integer milliseconds since the epoch.
"""

from __future__ import annotations

import os
import re
import threading
import time
from datetime import datetime, timezone

_CROCKFORD = "0123456789ABCDEFGHJKMNPQRSTVWXYZ"
_RANDOM_BITS = 80


def _encode(value: int, length: int) -> str:
    out = []
    for _ in range(length):
        out.append(_CROCKFORD[value & 31])
        value >>= 5
    return "".join(reversed(out))


class UlidGenerator:
    def __init__(self, clock=None):
        self._clock = clock or (lambda: int(time.time() * 1000))
        self._lock = threading.Lock()
        self._last_ms = -1
        self._last_rand = 0

    def new(self) -> str:
        with self._lock:
            ms = self._clock()
            if ms <= self._last_ms:
                ms = self._last_ms
                rand = self._last_rand + 1
                if rand >> _RANDOM_BITS:
                    ms += 1
                    rand = int.from_bytes(os.urandom(10), "big") >> 1
            else:
                # top bit cleared leaves headroom for increments within one ms
                rand = int.from_bytes(os.urandom(10), "big") >> 1
            self._last_ms, self._last_rand = ms, rand
            return _encode(ms, 10) + _encode(rand, 16)

    def observe(self, ulid: str) -> None:
        """Advance past an existing id so later ids sort after it."""
        ms, rand = decode_ulid(ulid)
        with self._lock:
            if (ms, rand) > (self._last_ms, self._last_rand):
                self._last_ms, self._last_rand = ms, rand


def decode_ulid(ulid: str) -> tuple[int, int]:
    value = 0
    for ch in ulid.upper():
        value = (value << 5) | _CROCKFORD.index(ch)
    return value >> _RANDOM_BITS, value & ((1 << _RANDOM_BITS) - 1)


_default = UlidGenerator()


def new_id() -> str:
    return _default.new()


def observe_id(ulid: str) -> None:
    _default.observe(ulid)


_RFC3339 = re.compile(
    r"^\d{4}-\d{2}-\d{2}[Tt ]\d{2}:\d{2}:\d{2}(\.\d+)?([Zz]|[+-]\d{2}:\d{2})$"
)


def parse_ts(text: str) -> int:
    """RFC 3339 string -> integer epoch milliseconds (sub-ms digits truncated)."""
    if not isinstance(text, str) or not _RFC3339.match(text):
        raise ValueError(f"not an RFC 3339 timestamp: {text!r}")
    head, frac, tz = text, "", ""
    if text[-1] in "Zz":
        head, tz = text[:-1], "+00:00"
    else:
        head, tz = text[:-6], text[-6:]
    if "." in head:
        head, frac = head.split(".", 1)
    dt = datetime.fromisoformat(head.replace("t", "T").replace(" ", "T") + tz)
    ms = (frac + "000")[:3]
    return int(dt.timestamp()) * 1000 + int(ms)


def format_ts(ms: int) -> str:
    secs, rem = divmod(int(ms), 1000)
    dt = datetime.fromtimestamp(secs, tz=timezone.utc)
    return dt.strftime("%Y-%m-%dT%H:%M:%S") + f".{rem:03d}Z"


def now_ms() -> int:
    return int(time.time() * 1000)
