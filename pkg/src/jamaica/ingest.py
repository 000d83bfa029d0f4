"""NGSI-lite ingestion: notifications, direct submissions, subscriptions, replay.

Wire format shared by broker notifications and direct submissions::

    {"subscriptionId": "<optional>",
     "data": [{"id": "...", "type": "...",
               "attributes": [{"name": "PM10", "type": "Number", "value": 23.4,
                               "timestamp": "2016-06-01T00:00:00.000Z",
                               "location": {"lat": 51.5, "lon": -0.12}}]}]}

Outbound subscription request::

    {"entities": [{"idPattern": "<glob>", "type": "<optional>"}],
     "attributes": ["<name>"], "callback": "<url>"}

and the broker answers ``{"subscriptionId": "<id>"}``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import threading
import time
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Optional

from . import errors
from .ids import format_ts, new_id, now_ms, observe_id, parse_ts
from .jobs import JobManager, Observation, QueryContext
from .journal import Journal

log = logging.getLogger(__name__)

CSV_HEADER = ["entity_id", "entity_type", "attribute", "value", "timestamp", "lat", "lon"]
BACKOFF_CAP_S = 60.0


# -- parsing -----------------------------------------------------------------

def _reject_constant(name):
    raise ValueError(f"{name} is not valid JSON")


def load_json(body: bytes | str):
    try:
        if isinstance(body, bytes):
            body = body.decode("utf-8")
        return json.loads(body, parse_constant=_reject_constant)
    except (UnicodeDecodeError, ValueError) as exc:
        raise errors.MalformedJson(f"body is not valid UTF-8 JSON: {exc}") from None


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _location(raw, where: str) -> Optional[tuple[float, float]]:
    if raw is None:
        return None
    if not isinstance(raw, dict) or not _is_number(raw.get("lat")) \
            or not _is_number(raw.get("lon")):
        raise errors.SchemaViolation(f"{where}: location needs numeric lat and lon")
    lat, lon = float(raw["lat"]), float(raw["lon"])
    if not (-90 <= lat <= 90 and -180 <= lon <= 180):
        raise errors.SchemaViolation(f"{where}: location out of range")
    return lat, lon


def parse_notification(body: bytes | str, received_at: Optional[int] = None) -> list[Observation]:
    """Parse a notification/direct body into observations.

    Non-numeric attributes come back as observations with ``value=None``;
    callers count them as skipped.
    """
    doc = load_json(body)
    if not isinstance(doc, dict) or not isinstance(doc.get("data"), list):
        raise errors.SchemaViolation("body must be an object with a 'data' array")
    if "subscriptionId" in doc and not isinstance(doc["subscriptionId"], str):
        raise errors.SchemaViolation("subscriptionId must be a string")
    received = now_ms() if received_at is None else received_at
    out = []
    for i, ent in enumerate(doc["data"]):
        where = f"data[{i}]"
        if not isinstance(ent, dict):
            raise errors.SchemaViolation(f"{where} must be an object")
        eid, etype, attrs = ent.get("id"), ent.get("type"), ent.get("attributes")
        if not isinstance(eid, str) or not eid or not isinstance(etype, str) or not etype:
            raise errors.SchemaViolation(f"{where} needs non-empty id and type")
        if not isinstance(attrs, list):
            raise errors.SchemaViolation(f"{where} needs an attributes array")
        seen = set()
        for j, attr in enumerate(attrs):
            aw = f"{where}.attributes[{j}]"
            if not isinstance(attr, dict):
                raise errors.SchemaViolation(f"{aw} must be an object")
            name, atype, value = attr.get("name"), attr.get("type"), attr.get("value")
            if not isinstance(name, str) or not name:
                raise errors.SchemaViolation(f"{aw} needs a name")
            if name in seen:
                raise errors.SchemaViolation(f"{aw}: duplicate attribute {name!r}")
            seen.add(name)
            if atype not in ("Number", "Text"):
                raise errors.SchemaViolation(f"{aw}: type must be Number or Text")
            if "value" not in attr or isinstance(value, (dict, list)):
                raise errors.SchemaViolation(f"{aw}: value must be a JSON scalar")
            ts = received
            if attr.get("timestamp") is not None:
                try:
                    ts = parse_ts(attr["timestamp"])
                except ValueError:
                    raise errors.SchemaViolation(f"{aw}: bad timestamp") from None
            loc = _location(attr.get("location"), aw)
            numeric = atype == "Number" and _is_number(value)
            out.append(Observation(eid, name, float(value) if numeric else None, ts, loc, etype))
    return out


def serialize_observations(observations: Iterable[Observation]) -> bytes:
    """Canonical NGSI-lite body for numeric observations (consecutive runs of one entity share an entry)."""
    data: list[dict] = []
    for o in observations:
        if not o.numeric:
            continue
        attr = {"name": o.attribute, "type": "Number", "value": o.value,
                "timestamp": format_ts(o.timestamp)}
        if o.location is not None:
            attr["location"] = {"lat": o.location[0], "lon": o.location[1]}
        last = data[-1] if data else None
        if last and last["id"] == o.entity_id and last["type"] == (o.entity_type or "Thing") \
                and all(a["name"] != o.attribute for a in last["attributes"]):
            last["attributes"].append(attr)
        else:
            data.append({"id": o.entity_id, "type": o.entity_type or "Thing",
                         "attributes": [attr]})
    return json.dumps({"data": data}, separators=(",", ":")).encode("utf-8")


@dataclass(frozen=True)
class IngestResult:
    accepted: int
    skipped: int

    def to_dict(self) -> dict:
        return {"accepted": self.accepted, "skipped": self.skipped}


def ingest_direct(body: bytes | str, jobs: JobManager,
                  received_at: Optional[int] = None) -> IngestResult:
    """Parse the whole body first, then dispatch: a bad body dispatches nothing."""
    observations = parse_notification(body, received_at)
    jobs.handle_observations(observations)
    accepted = sum(1 for o in observations if o.numeric)
    return IngestResult(accepted, len(observations) - accepted)


# -- subscriptions -------------------------------------------------------------

PENDING, ACTIVE, FAILED = "pending", "active", "failed"


@dataclass
class Subscription:
    id: str
    broker_url: str
    query: QueryContext
    callback_url: str
    status: str = PENDING
    last_error: Optional[str] = None
    broker_subscription_id: Optional[str] = None
    attempts: int = 0
    next_retry_at: Optional[float] = None  # seconds on the manager's clock

    def to_dict(self) -> dict:
        return {"id": self.id, "broker_url": self.broker_url, "query": self.query.to_dict(),
                "callback_url": self.callback_url, "status": self.status,
                "last_error": self.last_error,
                "broker_subscription_id": self.broker_subscription_id,
                "attempts": self.attempts}

    def request_body(self) -> dict:
        ent = {"idPattern": self.query.id_pattern}
        if self.query.entity_type is not None:
            ent["type"] = self.query.entity_type
        return {"entities": [ent], "attributes": [self.query.attribute],
                "callback": self.callback_url}


def backoff_delay(attempts: int) -> float:
    """Delay after the ``attempts``-th consecutive failure: 1, 2, 4, ... capped at 60 s."""
    # exponent clamped so long outages cannot overflow the float
    return min(BACKOFF_CAP_S, 2.0 ** min(max(0, attempts - 1), 16))


def http_post_json(url: str, payload: dict, timeout: float = 5.0) -> dict:
    import requests

    try:
        resp = requests.post(url, json=payload, timeout=timeout)
    except requests.RequestException as exc:
        raise errors.BrokerUnreachable(f"{url}: {exc}") from None
    if resp.status_code // 100 != 2:
        raise errors.BrokerUnreachable(f"{url}: HTTP {resp.status_code}")
    try:
        return resp.json()
    except ValueError:
        raise errors.BrokerUnreachable(f"{url}: reply is not JSON") from None


def http_delete(url: str, timeout: float = 5.0) -> None:
    import requests

    try:
        requests.delete(url, timeout=timeout)
    except requests.RequestException as exc:
        log.warning("broker unsubscribe failed: %s", exc)


class SubscriptionManager:
    """Outbound broker subscriptions with capped exponential retry.

    ``post``/``delete`` are injectable transports; ``clock`` returns seconds.
    Retries run from ``tick()``, driven either by tests or by the background
    thread from ``start()``.
    """

    def __init__(self, callback_url: str, journal: Optional[Journal] = None,
                 post: Callable[[str, dict], dict] = http_post_json,
                 delete: Callable[[str], None] = http_delete,
                 clock: Callable[[], float] = time.monotonic):
        self.callback_url = callback_url
        self.journal = journal
        self._post, self._delete, self._clock = post, delete, clock
        self._lock = threading.RLock()
        self._subs: dict[str, Subscription] = {}
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None
        self.attempt_log: list[tuple[str, float]] = []  # (subscription id, clock time)

    def _log(self, op: str, data: dict) -> None:
        if self.journal is not None:
            self.journal.append(op, data)

    def apply(self, op: str, data: dict) -> bool:
        if op == "put_subscription":
            sub = Subscription(data["id"], data["broker_url"],
                               QueryContext.from_dict(data["query"]), data["callback_url"],
                               data["status"], data.get("last_error"),
                               data.get("broker_subscription_id"), data.get("attempts", 0))
            if sub.status != ACTIVE:
                sub.next_retry_at = self._clock()
            self._subs[sub.id] = sub
            observe_id(sub.id)
        elif op == "delete_subscription":
            self._subs.pop(data["id"], None)
        else:
            return False
        return True

    def _attempt(self, sub: Subscription) -> None:
        sub.attempts += 1
        self.attempt_log.append((sub.id, self._clock()))
        try:
            reply = self._post(sub.broker_url, sub.request_body())
            bid = reply.get("subscriptionId") if isinstance(reply, dict) else None
            if not isinstance(bid, str) or not bid:
                raise errors.BrokerUnreachable("broker reply lacks subscriptionId")
        except errors.BrokerUnreachable as exc:
            sub.status, sub.last_error = FAILED, exc.message
            sub.next_retry_at = self._clock() + backoff_delay(sub.attempts)
            log.info("subscription %s failed (%s); retry in %.0fs", sub.id, exc.message,
                     backoff_delay(sub.attempts))
        else:
            sub.status, sub.last_error, sub.broker_subscription_id = ACTIVE, None, bid
            sub.next_retry_at = None
        self._log("put_subscription", sub.to_dict())

    def subscribe(self, broker_url: str, query: QueryContext) -> Subscription:
        if not isinstance(broker_url, str) or not broker_url.startswith(("http://", "https://")):
            raise errors.InvalidConfig("broker_url must be an http(s) URL")
        with self._lock:
            for sub in self._subs.values():
                if sub.broker_url == broker_url and sub.query == query:
                    return replace(sub)
            sub = Subscription(new_id(), broker_url, query, self.callback_url)
            self._subs[sub.id] = sub
            self._attempt(sub)
            return replace(sub)

    def find(self, broker_url: str, query: QueryContext) -> Optional[Subscription]:
        with self._lock:
            for sub in self._subs.values():
                if sub.broker_url == broker_url and sub.query == query:
                    return replace(sub)
        return None

    def get(self, sub_id: str) -> Subscription:
        with self._lock:
            try:
                return replace(self._subs[sub_id])
            except KeyError:
                raise errors.UnknownSubscription(f"no subscription {sub_id!r}") from None

    def list(self) -> list[Subscription]:
        with self._lock:
            return [replace(s) for _, s in sorted(self._subs.items())]

    def delete(self, sub_id: str) -> None:
        with self._lock:
            sub = self._subs.get(sub_id)
            if sub is None:
                raise errors.UnknownSubscription(f"no subscription {sub_id!r}")
            self._log("delete_subscription", {"id": sub_id})
            del self._subs[sub_id]
        if sub.status == ACTIVE and sub.broker_subscription_id:
            self._delete(f"{sub.broker_url.rstrip('/')}/{sub.broker_subscription_id}")

    def next_due(self) -> Optional[float]:
        with self._lock:
            due = [s.next_retry_at for s in self._subs.values() if s.next_retry_at is not None]
        return min(due) if due else None

    def tick(self) -> int:
        """Retry every subscription whose backoff has elapsed; returns attempts made."""
        now = self._clock()
        made = 0
        with self._lock:
            for sub in list(self._subs.values()):
                if sub.status != ACTIVE and sub.next_retry_at is not None \
                        and sub.next_retry_at <= now:
                    self._attempt(sub)
                    made += 1
        return made

    def start(self, poll_s: float = 0.25) -> None:
        if self._thread is not None:
            return
        self._stop.clear()

        def loop():
            while not self._stop.wait(poll_s):
                try:
                    self.tick()
                except Exception:  # keep retrying; failures are recorded per subscription
                    log.exception("subscription retry loop")

        self._thread = threading.Thread(target=loop, name="subscription-retry", daemon=True)
        self._thread.start()

    def close(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=2)
            self._thread = None


# -- archives and replay --------------------------------------------------------

def write_archive(path: str | Path, observations: Iterable[Observation]) -> int:
    n = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for o in observations:
            lat, lon = ("", "") if o.location is None \
                else (repr(float(o.location[0])), repr(float(o.location[1])))
            w.writerow([o.entity_id, o.entity_type or "", o.attribute, repr(float(o.value)),
                        format_ts(o.timestamp), lat, lon])
            n += 1
    return n


def read_archive(path: str | Path) -> list[Observation]:
    """Parse a replay CSV. Any bad row raises ``BadRow`` with its file line number."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return out
        if header != CSV_HEADER:
            raise errors.BadRow(1, f"header must be {','.join(CSV_HEADER)}")
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(CSV_HEADER):
                raise errors.BadRow(line, f"expected {len(CSV_HEADER)} columns, got {len(row)}")
            eid, etype, attr, value, ts, lat, lon = row
            if not eid or not attr:
                raise errors.BadRow(line, "entity_id and attribute are required")
            try:
                v = float(value)
            except ValueError:
                raise errors.BadRow(line, f"value {value!r} is not a number") from None
            if not math.isfinite(v):
                raise errors.BadRow(line, "value must be finite")
            try:
                t = parse_ts(ts)
            except ValueError:
                raise errors.BadRow(line, f"bad timestamp {ts!r}") from None
            loc = None
            if lat or lon:
                try:
                    loc = (float(lat), float(lon))
                except ValueError:
                    raise errors.BadRow(line, "lat/lon must both be numbers") from None
                if not (-90 <= loc[0] <= 90 and -180 <= loc[1] <= 180):
                    raise errors.BadRow(line, "lat/lon out of range")
            out.append(Observation(eid, attr, v, t, loc, etype or None))
    return out


@dataclass(frozen=True)
class ReplaySpec:
    source_path: str
    rate: float = 0.0  # observations per second, 0 = unpaced
    time_compression: Optional[float] = None  # archive seconds per wall second

    def __post_init__(self):
        if self.rate < 0:
            raise errors.InvalidConfig("rate must be >= 0")
        if self.time_compression is not None and self.time_compression <= 0:
            raise errors.InvalidConfig("time_compression must be > 0")


@dataclass
class ReplayReport:
    observations: int
    duration_s: float
    annotations: dict[str, int] = field(default_factory=dict)
    mean_interarrival_s: Optional[float] = None

    def to_dict(self) -> dict:
        return {"observations": self.observations, "duration_s": self.duration_s,
                "annotations": dict(sorted(self.annotations.items())),
                "mean_interarrival_s": self.mean_interarrival_s}


def mean_interarrival(observations: list[Observation]) -> Optional[float]:
    if len(observations) < 2:
        return None
    return (observations[-1].timestamp - observations[0].timestamp) / 1000.0 / (len(observations) - 1)


def replay(spec: ReplaySpec, dispatch: Callable[[list[Observation]], list],
           batch_size: int = 500, tag_label: Callable[[str], str] = lambda t: t,
           sleep: Callable[[float], None] = time.sleep,
           clock: Callable[[], float] = time.monotonic) -> ReplayReport:
    """Stream an archive through ``dispatch`` in timestamp order."""
    observations = read_archive(spec.source_path)
    observations.sort(key=lambda o: o.timestamp)
    counts: Counter = Counter()
    start = clock()
    t0 = observations[0].timestamp if observations else 0
    i = 0
    while i < len(observations):
        step = batch_size
        if spec.rate > 0:
            step = max(1, min(batch_size, int(spec.rate)))
            due = start + i / spec.rate
        elif spec.time_compression is not None:
            due = start + (observations[i].timestamp - t0) / 1000.0 / spec.time_compression
        else:
            due = None
        if due is not None:
            wait = due - clock()
            if wait > 0:
                sleep(wait)
        batch = observations[i:i + step]
        if spec.time_compression is not None and spec.rate == 0:
            # one archive instant per dispatch so pacing follows archive time
            batch = [o for o in batch if o.timestamp == batch[0].timestamp]
        for ann in dispatch(batch) or ():
            counts[tag_label(ann.tag_id)] += 1
        i += len(batch)
    return ReplayReport(len(observations), clock() - start, dict(counts),
                        mean_interarrival(observations))
