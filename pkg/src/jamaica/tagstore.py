"""Tag directory and annotation store with property-graph semantics.

Nodes are tag domains, tags and annotations; edges are HAS_TAG (domain ->
tag), RELATED (tag <-> tag, symmetric) and ANNOTATES (annotation -> tag).
Everything lives in memory behind secondary indexes; when a journal is
attached every mutation is appended to it before it becomes visible.
"""

from __future__ import annotations

import math
import threading
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

from . import errors
from .ids import format_ts, new_id, observe_id, parse_ts
from .journal import Journal


@dataclass
class TagDomain:
    id: str
    name: str
    description: str
    tag_ids: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"id": self.id, "name": self.name, "description": self.description,
                "tag_ids": list(self.tag_ids)}


@dataclass
class Tag:
    id: str
    name: str
    domain_id: str
    related_tag_ids: set[str] = field(default_factory=set)

    def to_dict(self) -> dict:
        return {"id": self.id, "name": self.name, "domain_id": self.domain_id,
                "related_tag_ids": sorted(self.related_tag_ids)}

    @classmethod
    def from_dict(cls, d: dict) -> "Tag":
        return cls(d["id"], d["name"], d["domain_id"], set(d.get("related_tag_ids", ())))


@dataclass(frozen=True)
class Annotator:
    kind: str  # "job" or "user"
    ref: str

    @classmethod
    def job(cls, job_id: str) -> "Annotator":
        return cls("job", job_id)

    @classmethod
    def user(cls, label: str) -> "Annotator":
        return cls("user", label)


@dataclass(frozen=True)
class Annotation:
    entity_id: str
    attribute: str
    tag_id: str
    time_from: int  # epoch ms
    time_to: int
    annotator: Annotator
    location: Optional[tuple[float, float]] = None  # (lat, lon)
    numeric_value: Optional[float] = None
    text_value: Optional[str] = None
    confidence: Optional[float] = None
    score: Optional[float] = None
    id: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "entity_id": self.entity_id,
            "attribute": self.attribute,
            "tag_id": self.tag_id,
            "time_from": format_ts(self.time_from),
            "time_to": format_ts(self.time_to),
            "location": None if self.location is None
            else {"lat": self.location[0], "lon": self.location[1]},
            "numeric_value": self.numeric_value,
            "text_value": self.text_value,
            "confidence": self.confidence,
            "score": self.score,
            "annotator": {"kind": self.annotator.kind, "ref": self.annotator.ref},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Annotation":
        loc = d.get("location")
        ann = d["annotator"]
        return cls(
            id=d.get("id"),
            entity_id=d["entity_id"],
            attribute=d["attribute"],
            tag_id=d["tag_id"],
            time_from=parse_ts(d["time_from"]),
            time_to=parse_ts(d["time_to"]),
            location=None if loc is None else (loc["lat"], loc["lon"]),
            numeric_value=d.get("numeric_value"),
            text_value=d.get("text_value"),
            confidence=d.get("confidence"),
            score=d.get("score"),
            annotator=Annotator(ann["kind"], ann["ref"]),
        )


@dataclass(frozen=True)
class BoundingBox:
    min_lon: float
    min_lat: float
    max_lon: float
    max_lat: float

    def contains(self, location: Optional[tuple[float, float]]) -> bool:
        if location is None:
            return False
        lat, lon = location
        return self.min_lat <= lat <= self.max_lat and self.min_lon <= lon <= self.max_lon


@dataclass(frozen=True)
class TimeWindow:
    start: Optional[int] = None  # epoch ms, inclusive
    end: Optional[int] = None

    def intersects(self, time_from: int, time_to: int) -> bool:
        if self.start is not None and time_to < self.start:
            return False
        if self.end is not None and time_from > self.end:
            return False
        return True


@dataclass(frozen=True)
class AnnotationFilter:
    entity_id: Optional[str] = None
    tag_id: Optional[str] = None
    domain_id: Optional[str] = None
    window: Optional[TimeWindow] = None
    bbox: Optional[BoundingBox] = None


@dataclass(frozen=True)
class Clause:
    tag_id: str
    attribute: Optional[str] = None


def _check_window(window: Optional[TimeWindow]) -> None:
    if window and window.start is not None and window.end is not None \
            and window.start > window.end:
        raise errors.MalformedFilter("time window starts after it ends")


def _check_bbox(bbox: Optional[BoundingBox]) -> None:
    if bbox is None:
        return
    vals = (bbox.min_lon, bbox.min_lat, bbox.max_lon, bbox.max_lat)
    if not all(math.isfinite(v) for v in vals):
        raise errors.MalformedFilter("bounding box has non-finite corners")
    if bbox.min_lon > bbox.max_lon or bbox.min_lat > bbox.max_lat:
        raise errors.MalformedFilter("bounding box min exceeds max")


def _sort_key(a: Annotation):
    return (a.time_from, a.id)


class TagStore:
    """Thread-safe tag graph. Pass ``journal=None`` for a purely in-memory store."""

    def __init__(self, journal: Optional[Journal] = None):
        self.journal = journal
        self._lock = threading.RLock()
        self._domains: dict[str, TagDomain] = {}
        self._domain_names: dict[str, str] = {}
        self._tags: dict[str, Tag] = {}
        self._annotations: dict[str, Annotation] = {}
        self._by_tag: dict[str, list[str]] = {}
        self._by_entity: dict[str, list[str]] = {}
        self._by_annotator: dict[Annotator, int] = {}

    # -- persistence -------------------------------------------------------

    def _log(self, op: str, data: dict) -> None:
        if self.journal is not None:
            self.journal.append(op, data)

    def apply(self, op: str, data: dict) -> bool:
        """Apply one replayed journal record; False if the op is not ours."""
        if op == "put_domain":
            tags = [Tag.from_dict(t) for t in data["tags"]]
            dom = TagDomain(data["id"], data["name"], data["description"],
                            [t.id for t in tags])
            self._put_domain(dom, tags)
        elif op == "put_tag":
            self._put_tag(Tag.from_dict(data))
        elif op == "relate_tags":
            self._relate(data["a"], data["b"])
        elif op == "put_annotation":
            self._put_annotation(Annotation.from_dict(data))
        else:
            return False
        if "id" in data:
            observe_id(data["id"])
        return True

    # -- in-memory mutations (no validation, no journaling) ----------------

    def _put_domain(self, dom: TagDomain, tags: list[Tag]) -> None:
        self._domains[dom.id] = dom
        self._domain_names[dom.name] = dom.id
        for t in tags:
            self._tags[t.id] = t
            observe_id(t.id)

    def _put_tag(self, tag: Tag) -> None:
        self._tags[tag.id] = tag
        dom = self._domains[tag.domain_id]
        if tag.id not in dom.tag_ids:
            dom.tag_ids.append(tag.id)

    def _relate(self, a: str, b: str) -> None:
        self._tags[a].related_tag_ids.add(b)
        self._tags[b].related_tag_ids.add(a)

    def _put_annotation(self, ann: Annotation) -> None:
        self._annotations[ann.id] = ann
        self._by_tag.setdefault(ann.tag_id, []).append(ann.id)
        self._by_entity.setdefault(ann.entity_id, []).append(ann.id)
        self._by_annotator[ann.annotator] = self._by_annotator.get(ann.annotator, 0) + 1

    # -- domains and tags --------------------------------------------------

    def create_tag_domain(self, name: str, description: str,
                          tag_names: Iterable[str]) -> TagDomain:
        tag_names = list(tag_names)
        if not isinstance(name, str) or not name.strip():
            raise errors.InvalidValue("domain name must be a non-empty string")
        if not tag_names:
            raise errors.EmptyTagList("a tag domain needs at least one tag")
        for t in tag_names:
            if not isinstance(t, str) or not t.strip():
                raise errors.InvalidValue("tag names must be non-empty strings")
        if len(set(tag_names)) != len(tag_names):
            raise errors.DuplicateTagName("duplicate tag name in domain")
        with self._lock:
            if name in self._domain_names:
                raise errors.DuplicateDomainName(f"domain {name!r} already exists")
            dom = TagDomain(new_id(), name, description or "")
            tags = [Tag(new_id(), t, dom.id) for t in tag_names]
            dom.tag_ids = [t.id for t in tags]
            data = dom.to_dict()
            data["tags"] = [t.to_dict() for t in tags]
            self._log("put_domain", data)
            self._put_domain(dom, tags)
            return self._copy_domain(dom)

    @staticmethod
    def _copy_domain(dom: TagDomain) -> TagDomain:
        return replace(dom, tag_ids=list(dom.tag_ids))

    @staticmethod
    def _copy_tag(tag: Tag) -> Tag:
        return replace(tag, related_tag_ids=set(tag.related_tag_ids))

    def get_domain(self, domain_id: str) -> TagDomain:
        with self._lock:
            try:
                return self._copy_domain(self._domains[domain_id])
            except KeyError:
                raise errors.UnknownDomain(f"no tag domain {domain_id!r}") from None

    def list_domains(self) -> list[TagDomain]:
        with self._lock:
            return [self._copy_domain(d) for _, d in sorted(self._domains.items())]

    def get_tag(self, tag_id: str) -> Tag:
        with self._lock:
            try:
                return self._copy_tag(self._tags[tag_id])
            except KeyError:
                raise errors.UnknownTag(f"no tag {tag_id!r}") from None

    def domain_tags(self, domain_id: str) -> list[Tag]:
        with self._lock:
            dom = self._domains.get(domain_id)
            if dom is None:
                raise errors.UnknownDomain(f"no tag domain {domain_id!r}")
            return [self._copy_tag(self._tags[t]) for t in dom.tag_ids]

    def add_tag(self, domain_id: str, name: str) -> Tag:
        if not isinstance(name, str) or not name.strip():
            raise errors.InvalidValue("tag name must be a non-empty string")
        with self._lock:
            dom = self._domains.get(domain_id)
            if dom is None:
                raise errors.UnknownDomain(f"no tag domain {domain_id!r}")
            if any(self._tags[t].name == name for t in dom.tag_ids):
                raise errors.DuplicateTagName(f"tag {name!r} already in domain")
            tag = Tag(new_id(), name, domain_id)
            self._log("put_tag", tag.to_dict())
            self._put_tag(tag)
            return self._copy_tag(tag)

    def relate_tags(self, tag_a: str, tag_b: str) -> None:
        with self._lock:
            for t in (tag_a, tag_b):
                if t not in self._tags:
                    raise errors.UnknownTag(f"no tag {t!r}")
            if tag_a == tag_b:
                raise errors.SelfRelation("a tag cannot be related to itself")
            if tag_b in self._tags[tag_a].related_tag_ids:
                return
            self._log("relate_tags", {"a": tag_a, "b": tag_b})
            self._relate(tag_a, tag_b)

    def suggest_tags(self, domain_id: str, seed_tag_ids: Iterable[str] = (),
                     max_hops: int = 2) -> list[Tag]:
        seeds = set(seed_tag_ids)
        with self._lock:
            dom = self._domains.get(domain_id)
            if dom is None:
                raise errors.UnknownDomain(f"no tag domain {domain_id!r}")
            for s in seeds:
                if s not in self._tags:
                    raise errors.UnknownTag(f"no tag {s!r}")
            members = set(dom.tag_ids)
            if not seeds:
                found = [(0, self._tags[t]) for t in members]
            else:
                dist = {s: 0 for s in seeds}
                queue = deque(sorted(seeds))
                while queue:
                    cur = queue.popleft()
                    if dist[cur] == max_hops:
                        continue
                    for nxt in sorted(self._tags[cur].related_tag_ids):
                        if nxt not in dist:
                            dist[nxt] = dist[cur] + 1
                            queue.append(nxt)
                found = [(d, self._tags[t]) for t, d in dist.items()
                         if t not in seeds and t in members]
            found.sort(key=lambda dt: (dt[0], dt[1].name, dt[1].id))
            return [self._copy_tag(t) for _, t in found]

    # -- annotations -------------------------------------------------------

    def validate_annotation(self, a: Annotation) -> None:
        if a.tag_id not in self._tags:
            raise errors.UnknownTag(f"no tag {a.tag_id!r}")
        if not a.entity_id or not a.attribute:
            raise errors.InvalidValue("entity_id and attribute are required")
        if a.time_from > a.time_to:
            raise errors.InvalidInterval("time_from is after time_to")
        if a.location is not None:
            lat, lon = a.location
            if not (isinstance(lat, (int, float)) and isinstance(lon, (int, float))
                    and -90 <= lat <= 90 and -180 <= lon <= 180):
                raise errors.InvalidCoordinates(f"location out of range: {a.location}")
        if a.confidence is not None and not (0.0 <= a.confidence <= 1.0):
            raise errors.InvalidValue("confidence must lie in [0, 1]")
        for v in (a.numeric_value, a.score):
            if v is not None and not math.isfinite(v):
                raise errors.InvalidValue("numeric fields must be finite")

    def record_annotation(self, a: Annotation) -> str:
        return self.record_annotations([a])[0]

    def record_annotations(self, batch: Iterable[Annotation]) -> list[str]:
        """Validate then persist a batch; nothing is written if any item is invalid."""
        batch = list(batch)
        with self._lock:
            for a in batch:
                self.validate_annotation(a)
            ids = []
            for a in batch:
                stored = replace(a, id=new_id())
                self._log("put_annotation", stored.to_dict())
                self._put_annotation(stored)
                ids.append(stored.id)
            return ids

    def get_annotation(self, annotation_id: str) -> Annotation:
        with self._lock:
            try:
                return self._annotations[annotation_id]
            except KeyError:
                raise errors.UnknownAnnotation(f"no annotation {annotation_id!r}") from None

    def annotation_count(self) -> int:
        with self._lock:
            return len(self._annotations)

    def count_by_annotator(self, annotator: Annotator) -> int:
        with self._lock:
            return self._by_annotator.get(annotator, 0)

    def all_annotations(self) -> list[Annotation]:
        with self._lock:
            return list(self._annotations.values())

    def _candidates(self, entity_id, tag_ids) -> Iterable[str]:
        lists = []
        if entity_id is not None:
            lists.append(self._by_entity.get(entity_id, []))
        if tag_ids is not None:
            lists.append([i for t in tag_ids for i in self._by_tag.get(t, [])])
        if not lists:
            return self._annotations.keys()
        return min(lists, key=len)

    def query_annotations(self, flt: AnnotationFilter = AnnotationFilter()) -> list[Annotation]:
        _check_window(flt.window)
        _check_bbox(flt.bbox)
        with self._lock:
            tag_ids = None
            if flt.tag_id is not None:
                if flt.tag_id not in self._tags:
                    raise errors.UnknownTag(f"no tag {flt.tag_id!r}")
                tag_ids = [flt.tag_id]
            domain_tags = None
            if flt.domain_id is not None:
                dom = self._domains.get(flt.domain_id)
                if dom is None:
                    raise errors.UnknownDomain(f"no tag domain {flt.domain_id!r}")
                domain_tags = set(dom.tag_ids)
                if tag_ids is None:
                    tag_ids = list(dom.tag_ids)
            out = []
            for aid in self._candidates(flt.entity_id, tag_ids):
                a = self._annotations[aid]
                if flt.entity_id is not None and a.entity_id != flt.entity_id:
                    continue
                if flt.tag_id is not None and a.tag_id != flt.tag_id:
                    continue
                if domain_tags is not None and a.tag_id not in domain_tags:
                    continue
                if flt.window is not None and not flt.window.intersects(a.time_from, a.time_to):
                    continue
                if flt.bbox is not None and not flt.bbox.contains(a.location):
                    continue
                out.append(a)
        out.sort(key=_sort_key)
        return out

    def conjunctive_entity_query(self, clauses: Iterable[Clause],
                                 window: Optional[TimeWindow] = None,
                                 area: Optional[BoundingBox] = None) -> list[str]:
        clauses = list(clauses)
        if not clauses:
            raise errors.MalformedFilter("at least one clause is required")
        _check_window(window)
        _check_bbox(area)
        with self._lock:
            result: Optional[set[str]] = None
            for c in clauses:
                if c.tag_id not in self._tags:
                    raise errors.UnknownTag(f"no tag {c.tag_id!r}")
                hits = set()
                for aid in self._by_tag.get(c.tag_id, ()):
                    a = self._annotations[aid]
                    if c.attribute is not None and a.attribute != c.attribute:
                        continue
                    if window is not None and not window.intersects(a.time_from, a.time_to):
                        continue
                    if area is not None and not area.contains(a.location):
                        continue
                    hits.add(a.entity_id)
                result = hits if result is None else result & hits
                if not result:
                    break
        return sorted(result)

    def check_integrity(self) -> list[str]:
        """Full-scan referential integrity check; returns a list of problems."""
        problems = []
        with self._lock:
            for t in self._tags.values():
                if t.domain_id not in self._domains:
                    problems.append(f"tag {t.id} references missing domain")
                if t.id in t.related_tag_ids:
                    problems.append(f"tag {t.id} related to itself")
            for d in self._domains.values():
                if len(set(d.tag_ids)) != len(d.tag_ids):
                    problems.append(f"domain {d.id} lists a tag twice")
                for t in d.tag_ids:
                    if t not in self._tags:
                        problems.append(f"domain {d.id} references missing tag {t}")
            for a in self._annotations.values():
                if a.tag_id not in self._tags:
                    problems.append(f"annotation {a.id} references missing tag")
        return problems
