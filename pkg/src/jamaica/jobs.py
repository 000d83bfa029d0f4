"""Annotation-job lifecycle and observation routing.

A job binds a query context (which observations it consumes) to one
dedicated detector or classifier and a tag mapping (which tags its verdicts
become). Lifecycle::

    created --train--> trained --start--> running <--stop/start--> stopped

Scoring happens only in ``running``; each job processes its share of a batch
under its own lock, in arrival order.
"""

from __future__ import annotations

import fnmatch
import json
import logging
import math
import os
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from . import errors
from .ids import new_id, observe_id
from .journal import Journal
from .mlengine import classifier_from_config, detector_from_config
from .mlengine.detectors import Classifier, Detector
from .tagstore import Annotation, Annotator, TagStore

log = logging.getLogger(__name__)

ANOMALY, CLASSIFICATION = "anomaly", "classification"
CREATED, TRAINED, RUNNING, STOPPED = "created", "trained", "running", "stopped"
SNAPSHOT_EVERY = 1000


@dataclass(frozen=True)
class Observation:
    entity_id: str
    attribute: str
    value: Optional[float]  # None marks a non-numeric reading
    timestamp: int  # epoch ms
    location: Optional[tuple[float, float]] = None
    entity_type: Optional[str] = None

    @property
    def numeric(self) -> bool:
        return self.value is not None


@dataclass(frozen=True)
class QueryContext:
    attribute: str
    id_pattern: str = "*"
    entity_type: Optional[str] = None

    def __post_init__(self):
        for name in ("attribute", "id_pattern"):
            val = getattr(self, name)
            if not isinstance(val, str) or not val:
                raise errors.InvalidConfig(f"query {name} must be a non-empty string")
        if self.entity_type is not None and not isinstance(self.entity_type, str):
            raise errors.InvalidConfig("query entity_type must be a string")
        object.__setattr__(self, "_rx", re.compile(fnmatch.translate(self.id_pattern)))

    def matches(self, obs: Observation) -> bool:
        return (obs.attribute == self.attribute
                and (self.entity_type is None or self.entity_type == obs.entity_type)
                and self._rx.match(obs.entity_id) is not None)

    def to_dict(self) -> dict:
        return {"entity_type": self.entity_type, "id_pattern": self.id_pattern,
                "attribute": self.attribute}

    @classmethod
    def from_dict(cls, d) -> "QueryContext":
        if not isinstance(d, dict):
            raise errors.InvalidConfig("query must be an object")
        return cls(attribute=d.get("attribute"), id_pattern=d.get("id_pattern", "*"),
                   entity_type=d.get("entity_type"))


@dataclass
class TagMapping:
    anomalous_tag_id: Optional[str] = None
    normal_tag_id: Optional[str] = None
    emit_normal: bool = False
    class_to_tag: dict[str, str] = field(default_factory=dict)

    def tag_ids(self) -> list[str]:
        ids = [self.anomalous_tag_id, self.normal_tag_id, *self.class_to_tag.values()]
        return [t for t in ids if t is not None]

    def to_dict(self, kind: str) -> dict:
        if kind == CLASSIFICATION:
            return {"class_to_tag": dict(self.class_to_tag)}
        return {"anomalous_tag_id": self.anomalous_tag_id,
                "normal_tag_id": self.normal_tag_id, "emit_normal": self.emit_normal}

    @classmethod
    def from_dict(cls, d, kind: str) -> "TagMapping":
        if not isinstance(d, dict):
            raise errors.InvalidConfig("mapping must be an object")
        if kind == CLASSIFICATION:
            ctt = d.get("class_to_tag")
            if not isinstance(ctt, dict) or not ctt or not all(
                    isinstance(k, str) and k and isinstance(v, str) for k, v in ctt.items()):
                raise errors.InvalidConfig("class_to_tag must map class names to tag ids")
            return cls(class_to_tag=dict(ctt))
        anomalous = d.get("anomalous_tag_id")
        normal = d.get("normal_tag_id")
        emit = d.get("emit_normal", False)
        if not isinstance(anomalous, str):
            raise errors.InvalidConfig("anomaly jobs need anomalous_tag_id")
        if normal is not None and not isinstance(normal, str):
            raise errors.InvalidConfig("normal_tag_id must be a string")
        if not isinstance(emit, bool):
            raise errors.InvalidConfig("emit_normal must be a boolean")
        if emit and normal is None:
            raise errors.InvalidConfig("emit_normal requires normal_tag_id")
        return cls(anomalous_tag_id=anomalous, normal_tag_id=normal, emit_normal=emit)


@dataclass
class AnnotationJob:
    id: str
    name: str
    kind: str
    query: QueryContext
    tag_domain_id: str
    mapping: TagMapping
    detector: dict
    state: str = CREATED
    trained_count: int = 0
    processed_count: int = 0
    annotated_count: int = 0
    skipped_count: int = 0
    error_count: int = 0

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "name": self.name,
            "kind": self.kind,
            "query": self.query.to_dict(),
            "tag_domain_id": self.tag_domain_id,
            "mapping": self.mapping.to_dict(self.kind),
            "detector": dict(self.detector),
            "state": self.state,
            "trained_count": self.trained_count,
            "processed_count": self.processed_count,
            "annotated_count": self.annotated_count,
            "skipped_count": self.skipped_count,
            "error_count": self.error_count,
        }

    def counters(self) -> dict:
        return {"processed": self.processed_count, "annotated": self.annotated_count,
                "skipped": self.skipped_count, "errors": self.error_count}


@dataclass(frozen=True)
class TrainingSample:
    value: float
    label: Optional[str] = None
    timestamp: Optional[int] = None


class _Slot:
    """A job plus its exclusively-held model and the lock serialising both."""

    def __init__(self, job: AnnotationJob, model):
        self.job = job
        self.model = model
        self.lock = threading.Lock()
        self.since_snapshot = 0

    def snapshot_json(self) -> dict:
        return self.model.snapshot()

    def copy_job(self) -> AnnotationJob:
        return AnnotationJob(**{**self.job.__dict__, "detector": dict(self.job.detector)})


def _build_model(kind: str, detector: dict, mapping: TagMapping):
    if kind == ANOMALY:
        return detector_from_config(detector)
    return classifier_from_config(detector, list(mapping.class_to_tag))


class JobManager:
    def __init__(self, store: TagStore, journal: Optional[Journal] = None,
                 model_dir: Optional[str | os.PathLike] = None):
        self.store = store
        self.journal = journal
        self.model_dir = Path(model_dir) if model_dir is not None else None
        self._lock = threading.RLock()
        self._slots: dict[str, _Slot] = {}
        self._counter_lock = threading.Lock()
        self.observations_ingested = 0
        self.observations_skipped = 0

    # -- persistence -------------------------------------------------------

    def _log(self, op: str, data: dict) -> None:
        if self.journal is not None:
            self.journal.append(op, data)

    def _snapshot_path(self, job_id: str) -> Optional[Path]:
        return None if self.model_dir is None else self.model_dir / f"{job_id}.json"

    def _write_snapshot(self, slot: _Slot) -> None:
        path = self._snapshot_path(slot.job.id)
        if path is None:
            return
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(slot.snapshot_json()))
        os.replace(tmp, path)
        slot.since_snapshot = 0

    def _persist(self, slot: _Slot, snapshot: bool = True) -> None:
        if snapshot:
            self._write_snapshot(slot)
        self._log("put_job", slot.job.to_dict())

    def apply(self, op: str, data: dict) -> bool:
        """Apply one replayed journal record; False if the op is not ours."""
        if op == "put_job":
            job = self._job_from_dict(data)
            model = _build_model(job.kind, job.detector, job.mapping)
            self._slots[job.id] = _Slot(job, model)
            observe_id(job.id)
        elif op == "job_progress":
            slot = self._slots.get(data["id"])
            if slot is not None:
                j = slot.job
                j.processed_count = data["processed"]
                j.skipped_count = data["skipped"]
                j.error_count = data["errors"]
        elif op == "ingest_progress":
            self.observations_ingested = data["ingested"]
            self.observations_skipped = data["skipped"]
        elif op == "delete_job":
            self._slots.pop(data["id"], None)
            path = self._snapshot_path(data["id"])
            if path is not None and path.exists():
                path.unlink()
        else:
            return False
        return True

    def finish_restore(self) -> None:
        """Reload model snapshots and re-derive counters after journal replay."""
        for slot in self._slots.values():
            path = self._snapshot_path(slot.job.id)
            if path is not None and path.exists():
                slot.model.restore(json.loads(path.read_text()))
            slot.job.annotated_count = self.store.count_by_annotator(Annotator.job(slot.job.id))

    @staticmethod
    def _job_from_dict(d: dict) -> AnnotationJob:
        kind = d["kind"]
        return AnnotationJob(
            id=d["id"], name=d["name"], kind=kind,
            query=QueryContext.from_dict(d["query"]),
            tag_domain_id=d["tag_domain_id"],
            mapping=TagMapping.from_dict(d["mapping"], kind),
            detector=dict(d["detector"]), state=d["state"],
            trained_count=d["trained_count"], processed_count=d["processed_count"],
            annotated_count=d["annotated_count"], skipped_count=d.get("skipped_count", 0),
            error_count=d.get("error_count", 0))

    # -- validation --------------------------------------------------------

    def _validate(self, name, kind, query, domain_id, mapping_doc, detector):
        if not isinstance(name, str) or not name.strip():
            raise errors.InvalidConfig("job name must be a non-empty string")
        if kind not in (ANOMALY, CLASSIFICATION):
            raise errors.InvalidConfig("kind must be 'anomaly' or 'classification'")
        if not isinstance(query, QueryContext):
            query = QueryContext.from_dict(query)
        if not isinstance(domain_id, str):
            raise errors.InvalidConfig("tag_domain_id must be a string")
        domain = self.store.get_domain(domain_id)
        mapping = mapping_doc if isinstance(mapping_doc, TagMapping) \
            else TagMapping.from_dict(mapping_doc, kind)
        for tag_id in mapping.tag_ids():
            tag = self.store.get_tag(tag_id)
            if tag.id not in domain.tag_ids:
                raise errors.UnknownTag(f"tag {tag_id!r} is not in domain {domain.name!r}")
        if not isinstance(detector, dict):
            raise errors.InvalidConfig("detector must be an object")
        model = _build_model(kind, detector, mapping)
        return query, mapping, model

    # -- CRUD --------------------------------------------------------------

    def create_job(self, spec: dict) -> AnnotationJob:
        if not isinstance(spec, dict):
            raise errors.InvalidConfig("job spec must be an object")
        query, mapping, model = self._validate(
            spec.get("name"), spec.get("kind"), spec.get("query"),
            spec.get("tag_domain_id"), spec.get("mapping"), spec.get("detector"))
        job = AnnotationJob(new_id(), spec["name"], spec["kind"], query,
                            spec["tag_domain_id"], mapping, dict(spec["detector"]))
        slot = _Slot(job, model)
        with self._lock:
            self._persist(slot)
            self._slots[job.id] = slot
        return slot.copy_job()

    def _slot(self, job_id: str) -> _Slot:
        with self._lock:
            try:
                return self._slots[job_id]
            except KeyError:
                raise errors.UnknownJob(f"no job {job_id!r}") from None

    def get_job(self, job_id: str) -> AnnotationJob:
        slot = self._slot(job_id)
        with slot.lock:
            return slot.copy_job()

    def list_jobs(self) -> list[AnnotationJob]:
        with self._lock:
            slots = [s for _, s in sorted(self._slots.items())]
        out = []
        for s in slots:
            with s.lock:
                out.append(s.copy_job())
        return out

    def update_job(self, job_id: str, patch: dict) -> AnnotationJob:
        if not isinstance(patch, dict):
            raise errors.InvalidConfig("update must be an object")
        unknown = set(patch) - {"name", "query", "mapping", "detector", "id", "kind",
                                "tag_domain_id", "state", "trained_count",
                                "processed_count", "annotated_count", "skipped_count",
                                "error_count"}
        if unknown:
            raise errors.InvalidConfig(f"unknown fields: {sorted(unknown)}")
        slot = self._slot(job_id)
        with slot.lock:
            job = slot.job
            if job.state == RUNNING:
                raise errors.WrongState("stop the job before updating it")
            for fixed in ("kind", "tag_domain_id"):
                if fixed in patch and patch[fixed] != getattr(job, fixed):
                    raise errors.InvalidConfig(f"{fixed} cannot be changed")
            query, mapping, model = self._validate(
                patch.get("name", job.name), job.kind, patch.get("query", job.query),
                job.tag_domain_id, patch.get("mapping", job.mapping),
                patch.get("detector", job.detector))
            new_detector = "detector" in patch and patch["detector"] != job.detector
            if "mapping" in patch and job.kind == CLASSIFICATION \
                    and list(mapping.class_to_tag) != list(job.mapping.class_to_tag):
                new_detector = True
            job.name = patch.get("name", job.name)
            job.query, job.mapping = query, mapping
            if new_detector:
                job.detector = dict(patch.get("detector", job.detector))
                slot.model = model
                job.trained_count = 0
                job.state = CREATED
            self._persist(slot, snapshot=new_detector)
            return slot.copy_job()

    def delete_job(self, job_id: str) -> None:
        slot = self._slot(job_id)
        with slot.lock:
            slot.job.state = STOPPED
            with self._lock:
                self._log("delete_job", {"id": job_id})
                self._slots.pop(job_id, None)
        path = self._snapshot_path(job_id)
        if path is not None and path.exists():
            path.unlink()

    # -- lifecycle ---------------------------------------------------------

    def submit_training(self, job_id: str, samples: Iterable) -> AnnotationJob:
        samples = [s if isinstance(s, TrainingSample) else TrainingSample(*s)
                   if isinstance(s, tuple) else TrainingSample(s) for s in samples]
        for s in samples:
            if isinstance(s.value, bool) or not isinstance(s.value, (int, float)) \
                    or not math.isfinite(s.value):
                raise errors.NonFiniteFeature("training values must be finite numbers")
        slot = self._slot(job_id)
        with slot.lock:
            job = slot.job
            if job.state == RUNNING:
                raise errors.WrongState("cannot train a running job; stop it first")
            if job.kind == CLASSIFICATION:
                if any(s.label is None for s in samples):
                    raise errors.MissingLabels("classification samples need labels")
                for s in samples:
                    if s.label not in job.mapping.class_to_tag:
                        raise errors.UnknownClass(f"unknown class {s.label!r}")
                if samples:
                    slot.model.train([(float(s.value), s.label) for s in samples])
            elif samples:
                slot.model.train(np.array([s.value for s in samples], dtype=np.float64))
            job.trained_count += len(samples)
            if job.state == CREATED and job.trained_count >= slot.model.min_training:
                job.state = TRAINED
            self._persist(slot)
            return slot.copy_job()

    def start_job(self, job_id: str) -> AnnotationJob:
        slot = self._slot(job_id)
        with slot.lock:
            if slot.job.state not in (TRAINED, STOPPED):
                raise errors.WrongState(f"cannot start a job in state {slot.job.state!r}")
            slot.job.state = RUNNING
            self._persist(slot)
            return slot.copy_job()

    def stop_job(self, job_id: str) -> AnnotationJob:
        slot = self._slot(job_id)
        with slot.lock:
            if slot.job.state != RUNNING:
                raise errors.WrongState(f"cannot stop a job in state {slot.job.state!r}")
            slot.job.state = STOPPED
            self._persist(slot)
            return slot.copy_job()

    # -- routing and scoring ----------------------------------------------

    def match_jobs(self, obs: Observation) -> list[AnnotationJob]:
        with self._lock:
            slots = [s for _, s in sorted(self._slots.items())]
        return [s.copy_job() for s in slots
                if s.job.state == RUNNING and s.job.query.matches(obs)]

    def handle_observation(self, obs: Observation) -> list[Annotation]:
        return self.handle_observations([obs])

    def handle_observations(self, batch: Iterable[Observation]) -> list[Annotation]:
        """Route a batch to matching running jobs; returns the recorded annotations."""
        batch = list(batch)
        numeric = sum(1 for o in batch if o.numeric)
        if batch:
            with self._counter_lock:
                self.observations_ingested += numeric
                self.observations_skipped += len(batch) - numeric
                self._log("ingest_progress", {"ingested": self.observations_ingested,
                                              "skipped": self.observations_skipped})
        with self._lock:
            slots = [s for _, s in sorted(self._slots.items())]
        out: list[Annotation] = []
        for slot in slots:
            query = slot.job.query
            mine = [o for o in batch if query.matches(o)]
            if mine:
                out.extend(self._run_job(slot, mine))
        return out

    def _run_job(self, slot: _Slot, batch: list[Observation]) -> list[Annotation]:
        with slot.lock:
            job = slot.job
            if job.state != RUNNING:
                return []
            values = [o for o in batch if o.numeric]
            job.skipped_count += len(batch) - len(values)
            if not values:
                self._log("job_progress", {"id": job.id, **job.counters()})
                return []
            if job.kind == ANOMALY:
                pending = self._score_anomalies(slot, values)
            else:
                pending = self._classify(slot, values)
            ids = self.store.record_annotations(pending)
            job.processed_count += len(values)
            job.annotated_count += len(ids)
            self._log("job_progress", {"id": job.id, **job.counters()})
            slot.since_snapshot += len(values)
            if slot.since_snapshot >= SNAPSHOT_EVERY:
                if getattr(slot.model, "sequential", False):
                    self._write_snapshot(slot)
                slot.since_snapshot = 0
            return [self.store.get_annotation(i) for i in ids]

    def _annotation(self, job: AnnotationJob, obs: Observation, tag_id: str,
                    confidence: float, score: float) -> Annotation:
        return Annotation(
            entity_id=obs.entity_id, attribute=obs.attribute, tag_id=tag_id,
            time_from=obs.timestamp, time_to=obs.timestamp,
            annotator=Annotator.job(job.id), location=obs.location,
            numeric_value=float(obs.value), confidence=float(confidence), score=float(score))

    def _score_anomalies(self, slot: _Slot, values: list[Observation]) -> list[Annotation]:
        job, model = slot.job, slot.model
        assert isinstance(model, Detector)
        scores: list[Optional[float]]
        if model.sequential:
            scores = []
            for o in values:
                try:
                    s = model.score(o.value)
                except errors.MLError:
                    scores.append(None)
                    continue
                model.observe(o.value, s)
                scores.append(s)
        else:
            try:
                scores = model.score_batch(np.array([o.value for o in values])).tolist()
            except errors.MLError:
                scores = []
                for o in values:
                    try:
                        scores.append(model.score(o.value))
                    except errors.MLError:
                        scores.append(None)
        mapping = job.mapping
        out = []
        for o, s in zip(values, scores):
            if s is None:
                job.error_count += 1
                continue
            if model.is_anomalous(s):
                out.append(self._annotation(job, o, mapping.anomalous_tag_id,
                                            model.confidence(s, True), s))
            elif mapping.emit_normal:
                out.append(self._annotation(job, o, mapping.normal_tag_id,
                                            model.confidence(s, False), s))
        return out

    def _classify(self, slot: _Slot, values: list[Observation]) -> list[Annotation]:
        job, model = slot.job, slot.model
        assert isinstance(model, Classifier)
        out = []
        for o in values:
            try:
                name, margin = model.predict(o.value)
            except errors.MLError:
                job.error_count += 1
                continue
            out.append(self._annotation(job, o, job.mapping.class_to_tag[name],
                                        model.confidence(margin), margin))
        return out

    def metrics(self) -> dict:
        jobs = {j.id: j.counters() for j in self.list_jobs()}
        with self._counter_lock:
            return {
                "observations_ingested": self.observations_ingested,
                "observations_skipped": self.observations_skipped,
                "annotations_written": self.store.annotation_count(),
                "jobs": jobs,
            }
