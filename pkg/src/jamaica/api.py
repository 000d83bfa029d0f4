"""REST surface.

``App.handle`` maps one request to one ``Response`` without touching
sockets, which keeps handlers testable; ``make_server`` puts it behind the
stdlib threaded HTTP server. Errors always use the envelope
``{"status": <int>, "code": "<machine code>", "message": "<text>"}``.
"""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable, Optional
from urllib.parse import parse_qs, urlsplit

from . import errors
from .ids import parse_ts
from .ingest import Subscription, ingest_direct, load_json
from .jobs import AnnotationJob, QueryContext, TrainingSample
from .service import Service
from .tagstore import (
    Annotation,
    AnnotationFilter,
    Annotator,
    BoundingBox,
    Clause,
    Tag,
    TagDomain,
    TimeWindow,
)

log = logging.getLogger(__name__)

DEFAULT_LIMIT, MAX_LIMIT = 100, 1000


@dataclass
class Response:
    status: int
    body: Optional[object] = None
    headers: dict = field(default_factory=dict)

    def encoded(self) -> bytes:
        if self.body is None:
            return b""
        return json.dumps(self.body, separators=(",", ":")).encode("utf-8")

    def json(self):
        return self.body


class ApiError(errors.JamaicaError):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status, self.code = status, code


def error_body(status: int, code: str, message: str) -> dict:
    return {"status": status, "code": code, "message": message}


# -- request parsing helpers ----------------------------------------------------

class Request:
    def __init__(self, method: str, target: str, headers: Optional[dict] = None,
                 body: bytes = b""):
        parts = urlsplit(target)
        self.method = method.upper()
        self.path = parts.path.rstrip("/") or "/"
        self.params = {k: v[-1] for k, v in parse_qs(parts.query, keep_blank_values=True).items()}
        self.headers = {k.lower(): v for k, v in (headers or {}).items()}
        self.body = body or b""

    def json(self):
        return load_json(self.body)

    def object(self) -> dict:
        doc = self.json()
        if not isinstance(doc, dict):
            raise errors.SchemaViolation("request body must be a JSON object")
        return doc

    def int_param(self, name: str, default: int, lo: int, hi: Optional[int] = None) -> int:
        raw = self.params.get(name)
        if raw is None or raw == "":
            return default
        try:
            val = int(raw)
        except ValueError:
            raise ApiError(422, "invalid_parameter", f"{name} must be an integer") from None
        if val < lo:
            raise ApiError(422, "invalid_parameter", f"{name} must be >= {lo}")
        return val if hi is None else min(val, hi)


def _page(req: Request, items: list) -> dict:
    offset = req.int_param("offset", 0, 0)
    limit = req.int_param("limit", DEFAULT_LIMIT, 1, MAX_LIMIT)
    return {"items": items[offset:offset + limit], "total": len(items),
            "offset": offset, "limit": limit}


def _ts_param(req: Request, name: str) -> Optional[int]:
    raw = req.params.get(name)
    if not raw:
        return None
    try:
        return parse_ts(raw)
    except ValueError:
        raise errors.MalformedFilter(f"{name} must be an RFC 3339 timestamp") from None


def _bbox_param(req: Request) -> Optional[BoundingBox]:
    raw = req.params.get("bbox")
    if not raw:
        return None
    try:
        vals = [float(x) for x in raw.split(",")]
    except ValueError:
        raise errors.MalformedFilter("bbox must be minLon,minLat,maxLon,maxLat") from None
    if len(vals) != 4:
        raise errors.MalformedFilter("bbox must be minLon,minLat,maxLon,maxLat")
    return BoundingBox(*vals)


def _window(req: Request) -> Optional[TimeWindow]:
    start, end = _ts_param(req, "from"), _ts_param(req, "to")
    return None if start is None and end is None else TimeWindow(start, end)


def _ids(raw: Optional[str]) -> list[str]:
    return [s for s in (raw or "").split(",") if s]


def _opt_number(doc: dict, key: str) -> Optional[float]:
    val = doc.get(key)
    if val is None:
        return None
    if isinstance(val, bool) or not isinstance(val, (int, float)) or not math.isfinite(val):
        raise errors.InvalidValue(f"{key} must be a number")
    return float(val)


def _required_str(doc: dict, key: str) -> str:
    val = doc.get(key)
    if not isinstance(val, str) or not val:
        raise errors.InvalidValue(f"{key} must be a non-empty string")
    return val


# -- serializers ------------------------------------------------------------------

def domain_json(dom: TagDomain, tags: list[Tag]) -> dict:
    d = dom.to_dict()
    d["tags"] = [t.to_dict() for t in tags]
    return d


def job_json(job: AnnotationJob) -> dict:
    return job.to_dict()


def subscription_json(sub: Subscription) -> dict:
    return sub.to_dict()


# -- application ------------------------------------------------------------------

Route = tuple[str, "re.Pattern[str]", Callable]


class App:
    def __init__(self, service: Service):
        self.service = service
        self.routes: list[Route] = []
        r = self._route
        r("GET", r"/v1/health", self.health)
        r("GET", r"/v1/metrics", self.metrics)
        r("POST", r"/v1/jobs", self.create_job)
        r("GET", r"/v1/jobs", self.list_jobs)
        r("GET", r"/v1/jobs/(?P<id>[^/]+)", self.get_job)
        r("PUT", r"/v1/jobs/(?P<id>[^/]+)", self.update_job)
        r("DELETE", r"/v1/jobs/(?P<id>[^/]+)", self.delete_job)
        r("POST", r"/v1/jobs/(?P<id>[^/]+)/train", self.train_job)
        r("POST", r"/v1/jobs/(?P<id>[^/]+)/start", self.start_job)
        r("POST", r"/v1/jobs/(?P<id>[^/]+)/stop", self.stop_job)
        r("POST", r"/v1/tagdomains", self.create_domain)
        r("GET", r"/v1/tagdomains", self.list_domains)
        r("GET", r"/v1/tagdomains/(?P<id>[^/]+)", self.get_domain)
        r("POST", r"/v1/tagdomains/(?P<id>[^/]+)/tags", self.add_tag)
        r("GET", r"/v1/tagdomains/(?P<id>[^/]+)/suggest", self.suggest)
        r("POST", r"/v1/tags/relate", self.relate)
        r("GET", r"/v1/tags/(?P<id>[^/]+)", self.get_tag)
        r("POST", r"/v1/annotations", self.post_annotation)
        r("GET", r"/v1/annotations", self.query_annotations)
        r("GET", r"/v1/annotations/entities", self.entities)
        r("GET", r"/v1/annotations/(?P<id>[^/]+)", self.get_annotation)
        r("POST", r"/v1/notify", self.notify)
        r("POST", r"/v1/observations", self.observations)
        r("POST", r"/v1/subscriptions", self.subscribe)
        r("GET", r"/v1/subscriptions", self.list_subscriptions)
        r("GET", r"/v1/subscriptions/(?P<id>[^/]+)", self.get_subscription)
        r("DELETE", r"/v1/subscriptions/(?P<id>[^/]+)", self.delete_subscription)

    def _route(self, method: str, pattern: str, handler: Callable) -> None:
        self.routes.append((method, re.compile(pattern + r"\Z"), handler))

    def handle(self, method: str, target: str, headers: Optional[dict] = None,
               body: bytes = b"") -> Response:
        try:
            req = Request(method, target, headers, body)
            allowed = []
            for m, rx, handler in self.routes:
                match = rx.match(req.path)
                if match is None:
                    continue
                if m != req.method:
                    allowed.append(m)
                    continue
                resp = handler(req, **match.groupdict())
                resp.headers.setdefault("Content-Type", "application/json")
                return resp
            if allowed:
                raise ApiError(405, "method_not_allowed",
                               f"{req.method} not allowed; use {', '.join(sorted(set(allowed)))}")
            raise ApiError(404, "not_found", f"no route for {req.path}")
        except errors.JamaicaError as exc:
            status, code = exc.status, exc.code
            if status >= 500 and code == "internal_error":
                log.error("internal error: %s", exc.message)
            return Response(status, error_body(status, code, exc.message),
                            {"Content-Type": "application/json"})
        except Exception:
            log.exception("unhandled error for %s %s", method, target)
            return Response(500, error_body(500, "internal_error", "internal server error"),
                            {"Content-Type": "application/json"})

    # -- ops --------------------------------------------------------------------

    def health(self, req):
        if not self.service.healthy():
            return Response(503, error_body(503, "journal_unavailable",
                                            "journal is not writable"))
        return Response(200, {"status": "ok"})

    def metrics(self, req):
        return Response(200, self.service.jobs.metrics())

    # -- jobs -------------------------------------------------------------------

    def create_job(self, req):
        job = self.service.jobs.create_job(req.object())
        return Response(201, job_json(job), {"Location": f"/v1/jobs/{job.id}"})

    def list_jobs(self, req):
        return Response(200, _page(req, [job_json(j) for j in self.service.jobs.list_jobs()]))

    def get_job(self, req, id):
        return Response(200, job_json(self.service.jobs.get_job(id)))

    def update_job(self, req, id):
        return Response(200, job_json(self.service.jobs.update_job(id, req.object())))

    def delete_job(self, req, id):
        self.service.jobs.delete_job(id)
        return Response(204)

    def train_job(self, req, id):
        doc = req.object()
        raw = doc.get("samples")
        if not isinstance(raw, list):
            raise errors.SchemaViolation("body needs a 'samples' array")
        samples = []
        for i, s in enumerate(raw):
            if not isinstance(s, dict):
                raise errors.SchemaViolation(f"samples[{i}] must be an object")
            value = s.get("value")
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise errors.SchemaViolation(f"samples[{i}].value must be a number")
            label = s.get("label")
            if label is not None and not isinstance(label, str):
                raise errors.SchemaViolation(f"samples[{i}].label must be a string")
            ts = s.get("timestamp")
            try:
                ts = None if ts is None else parse_ts(ts)
            except ValueError:
                raise errors.SchemaViolation(f"samples[{i}].timestamp is not RFC 3339") from None
            samples.append(TrainingSample(float(value), label, ts))
        return Response(200, job_json(self.service.jobs.submit_training(id, samples)))

    def start_job(self, req, id):
        return Response(200, job_json(self.service.jobs.start_job(id)))

    def stop_job(self, req, id):
        return Response(200, job_json(self.service.jobs.stop_job(id)))

    # -- tags -------------------------------------------------------------------

    def _domain(self, domain_id: str) -> dict:
        store = self.service.store
        return domain_json(store.get_domain(domain_id), store.domain_tags(domain_id))

    def create_domain(self, req):
        doc = req.object()
        tags = doc.get("tags", [])
        desc = doc.get("description", "")
        if not isinstance(tags, list) or not isinstance(desc, str):
            raise errors.InvalidValue("tags must be an array and description a string")
        dom = self.service.store.create_tag_domain(doc.get("name"), desc, tags)
        return Response(201, self._domain(dom.id), {"Location": f"/v1/tagdomains/{dom.id}"})

    def list_domains(self, req):
        store = self.service.store
        items = [domain_json(d, store.domain_tags(d.id)) for d in store.list_domains()]
        return Response(200, _page(req, items))

    def get_domain(self, req, id):
        return Response(200, self._domain(id))

    def add_tag(self, req, id):
        tag = self.service.store.add_tag(id, req.object().get("name"))
        return Response(201, tag.to_dict(), {"Location": f"/v1/tags/{tag.id}"})

    def suggest(self, req, id):
        tags = self.service.store.suggest_tags(id, _ids(req.params.get("seeds")))
        return Response(200, _page(req, [t.to_dict() for t in tags]))

    def relate(self, req):
        doc = req.object()
        a, b = doc.get("a"), doc.get("b")
        if not isinstance(a, str) or not isinstance(b, str):
            raise errors.InvalidValue("relate needs tag ids 'a' and 'b'")
        store = self.service.store
        store.relate_tags(a, b)
        return Response(200, {"a": store.get_tag(a).to_dict(), "b": store.get_tag(b).to_dict()})

    def get_tag(self, req, id):
        return Response(200, self.service.store.get_tag(id).to_dict())

    # -- annotations --------------------------------------------------------------

    def post_annotation(self, req):
        doc = req.object()
        try:
            time_from = parse_ts(doc.get("time_from"))
            time_to = parse_ts(doc["time_to"]) if doc.get("time_to") is not None else time_from
        except ValueError:
            raise errors.InvalidValue("time_from/time_to must be RFC 3339 timestamps") from None
        loc = doc.get("location")
        if loc is not None:
            if not isinstance(loc, dict):
                raise errors.InvalidCoordinates("location must be {lat, lon}")
            lat, lon = _opt_number(loc, "lat"), _opt_number(loc, "lon")
            if lat is None or lon is None:
                raise errors.InvalidCoordinates("location must be {lat, lon}")
            loc = (lat, lon)
        text = doc.get("text_value")
        if text is not None and not isinstance(text, str):
            raise errors.InvalidValue("text_value must be a string")
        label = req.headers.get("x-annotator") or "anonymous"
        ann = Annotation(
            entity_id=_required_str(doc, "entity_id"),
            attribute=_required_str(doc, "attribute"),
            tag_id=_required_str(doc, "tag_id"),
            time_from=time_from, time_to=time_to, annotator=Annotator.user(label),
            location=loc, numeric_value=_opt_number(doc, "numeric_value"),
            text_value=text, confidence=_opt_number(doc, "confidence"))
        ann_id = self.service.store.record_annotation(ann)
        stored = self.service.store.get_annotation(ann_id)
        return Response(201, stored.to_dict(), {"Location": f"/v1/annotations/{ann_id}"})

    def query_annotations(self, req):
        flt = AnnotationFilter(
            entity_id=req.params.get("entity") or None,
            tag_id=req.params.get("tag") or None,
            domain_id=req.params.get("domain") or None,
            window=_window(req), bbox=_bbox_param(req))
        found = self.service.store.query_annotations(flt)
        page = _page(req, found)
        page["items"] = [a.to_dict() for a in page["items"]]
        return Response(200, page)

    def get_annotation(self, req, id):
        return Response(200, self.service.store.get_annotation(id).to_dict())

    def entities(self, req):
        clauses = []
        for item in _ids(req.params.get("tags")):
            tag, _, attr = item.partition(":")
            clauses.append(Clause(tag, attr or None))
        if not clauses:
            raise errors.MalformedFilter("tags parameter needs at least one tag id")
        found = self.service.store.conjunctive_entity_query(clauses, _window(req),
                                                            _bbox_param(req))
        return Response(200, _page(req, found))

    # -- ingest -------------------------------------------------------------------

    def notify(self, req):
        result = ingest_direct(req.body, self.service.jobs)
        return Response(202, result.to_dict())

    observations = notify

    def subscribe(self, req):
        doc = req.object()
        query = QueryContext.from_dict(doc.get("query"))
        subs = self.service.subscriptions
        existing = subs.find(doc.get("broker_url"), query)
        sub = existing or subs.subscribe(doc.get("broker_url"), query)
        return Response(200 if existing else 201, subscription_json(sub),
                        {"Location": f"/v1/subscriptions/{sub.id}"})

    def list_subscriptions(self, req):
        items = [subscription_json(s) for s in self.service.subscriptions.list()]
        return Response(200, _page(req, items))

    def get_subscription(self, req, id):
        return Response(200, subscription_json(self.service.subscriptions.get(id)))

    def delete_subscription(self, req, id):
        self.service.subscriptions.delete(id)
        return Response(204)


# -- HTTP server --------------------------------------------------------------------

class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    app: App  # set on the subclass built by make_server

    def _dispatch(self):
        length = int(self.headers.get("Content-Length") or 0)
        body = self.rfile.read(length) if length else b""
        resp = self.app.handle(self.command, self.path, dict(self.headers.items()), body)
        payload = resp.encoded()
        self.send_response(resp.status)
        for k, v in resp.headers.items():
            self.send_header(k, v)
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        if payload:
            self.wfile.write(payload)

    do_GET = do_POST = do_PUT = do_DELETE = _dispatch

    def log_message(self, fmt, *args):
        log.debug("%s - %s", self.address_string(), fmt % args)


class Server(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = False


def parse_addr(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    return host or "127.0.0.1", int(port)


def make_server(app: App, addr: str = "127.0.0.1:8080") -> Server:
    handler = type("Handler", (_Handler,), {"app": app})
    return Server(parse_addr(addr), handler)
