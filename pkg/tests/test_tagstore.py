import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jamaica import errors
from jamaica.ids import parse_ts
from jamaica.journal import Journal
from jamaica.tagstore import (
    Annotation, AnnotationFilter, Annotator, BoundingBox, Clause, TagStore, TimeWindow,
)

from oracles import scan_conjunction, scan_filter

T = parse_ts("2016-06-01T12:00:00.000Z")
LONDON = BoundingBox(-0.51, 51.28, 0.33, 51.69)


@pytest.fixture
def aq(store):
    dom = store.create_tag_domain("air-quality-levels", "PM10 bands", ["high", "normal", "low"])
    return dom, {t.name: t for t in store.domain_tags(dom.id)}


def ann(tag_id, entity="urn:oc:e:1", t=T, **kw):
    kw.setdefault("annotator", Annotator.job("j1"))
    kw.setdefault("attribute", "PM10")
    return Annotation(entity_id=entity, tag_id=tag_id, time_from=t, time_to=kw.pop("t_to", t), **kw)


class TestDomains:
    def test_create(self, store, aq):
        dom, tags = aq
        assert [store.get_tag(t).name for t in dom.tag_ids] == ["high", "normal", "low"]
        assert all(len(t) == 26 for t in dom.tag_ids)
        assert store.get_domain(dom.id) == dom

    @pytest.mark.parametrize("names,exc", [([], errors.EmptyTagList),
                                           (["a", "a"], errors.DuplicateTagName)])
    def test_bad_tag_lists(self, store, names, exc):
        with pytest.raises(exc):
            store.create_tag_domain("d", "", names)

    def test_duplicate_domain_name(self, store, aq):
        with pytest.raises(errors.DuplicateDomainName):
            store.create_tag_domain("air-quality-levels", "", ["x"])

    def test_same_tag_name_in_two_domains(self, store, aq):
        other = store.create_tag_domain("traffic", "", ["high"])
        assert store.get_tag(other.tag_ids[0]).name == "high"

    def test_add_tag(self, store, aq):
        dom, _ = aq
        tag = store.add_tag(dom.id, "dangerous")
        assert store.get_domain(dom.id).tag_ids[-1] == tag.id
        assert len(store.get_domain(dom.id).tag_ids) == 4

    def test_add_tag_errors(self, store, aq):
        dom, _ = aq
        with pytest.raises(errors.UnknownDomain):
            store.add_tag("missing-id", "x")
        with pytest.raises(errors.DuplicateTagName):
            store.add_tag(dom.id, "high")


class TestRelations:
    def test_symmetric_and_idempotent(self, store, aq):
        dom, tags = aq
        danger = store.add_tag(dom.id, "dangerous")
        high = tags["high"].id
        store.relate_tags(high, danger.id)
        store.relate_tags(danger.id, high)
        assert store.get_tag(high).related_tag_ids == {danger.id}
        assert store.get_tag(danger.id).related_tag_ids == {high}

    def test_self_relation(self, store, aq):
        high = aq[1]["high"].id
        with pytest.raises(errors.SelfRelation):
            store.relate_tags(high, high)

    def test_unknown(self, store, aq):
        with pytest.raises(errors.UnknownTag):
            store.relate_tags(aq[1]["high"].id, "nope")

    def test_suggest(self, store, aq):
        dom, tags = aq
        danger = store.add_tag(dom.id, "dangerous")
        store.relate_tags(tags["high"].id, danger.id)
        assert [t.name for t in store.suggest_tags(dom.id, {tags["high"].id})] == ["dangerous"]
        assert [t.name for t in store.suggest_tags(dom.id, set())] == \
            ["dangerous", "high", "low", "normal"]
        assert store.suggest_tags(dom.id, {tags["low"].id}) == []

    def test_suggest_two_hops_only(self, store):
        dom = store.create_tag_domain("chain", "", list("abcd"))
        a, b, c, d = dom.tag_ids
        store.relate_tags(a, b)
        store.relate_tags(b, c)
        store.relate_tags(c, d)
        assert [t.name for t in store.suggest_tags(dom.id, {a})] == ["b", "c"]

    def test_suggest_unknown_domain(self, store):
        with pytest.raises(errors.UnknownDomain):
            store.suggest_tags("nope", set())


class TestAnnotations:
    def test_record_and_round_trip(self, store, aq):
        a = ann(aq[1]["high"].id, numeric_value=-3.0, location=(51.5, -0.1), confidence=0.4)
        aid = store.record_annotation(a)
        got = store.query_annotations(AnnotationFilter(entity_id="urn:oc:e:1"))
        assert got == [a.__class__(**{**a.__dict__, "id": aid})]
        assert Annotation.from_dict(got[0].to_dict()) == got[0]

    @pytest.mark.parametrize("kw,exc", [
        ({"t_to": T - 1}, errors.InvalidInterval),
        ({"location": (91.0, 0.0)}, errors.InvalidCoordinates),
        ({"location": (0.0, -180.5)}, errors.InvalidCoordinates),
        ({"confidence": 1.5}, errors.InvalidValue),
    ])
    def test_invalid(self, store, aq, kw, exc):
        with pytest.raises(exc):
            store.record_annotation(ann(aq[1]["high"].id, **kw))
        assert store.annotation_count() == 0

    def test_unknown_tag(self, store):
        with pytest.raises(errors.UnknownTag):
            store.record_annotation(ann("missing"))

    def test_batch_is_all_or_nothing(self, store, aq):
        good = ann(aq[1]["high"].id)
        with pytest.raises(errors.InvalidCoordinates):
            store.record_annotations([good, ann(aq[1]["low"].id, location=(100.0, 0.0))])
        assert store.annotation_count() == 0

    def test_filter_by_tag(self, store, aq):
        tags = aq[1]
        store.record_annotation(ann(tags["high"].id, t=T + 2))
        store.record_annotation(ann(tags["normal"].id))
        store.record_annotation(ann(tags["high"].id, entity="urn:oc:e:2"))
        got = store.query_annotations(AnnotationFilter(tag_id=tags["high"].id))
        assert [a.entity_id for a in got] == ["urn:oc:e:2", "urn:oc:e:1"]

    def test_bbox_excludes_unlocated(self, store, aq):
        store.record_annotation(ann(aq[1]["high"].id))
        store.record_annotation(ann(aq[1]["high"].id, location=(51.5, -0.12)))
        got = store.query_annotations(AnnotationFilter(bbox=LONDON))
        assert [a.location for a in got] == [(51.5, -0.12)]

    def test_window_intersects_interval(self, store, aq):
        store.record_annotation(ann(aq[1]["high"].id, t=T, t_to=T + 100))
        assert store.query_annotations(AnnotationFilter(window=TimeWindow(T + 100, T + 200)))
        assert not store.query_annotations(AnnotationFilter(window=TimeWindow(T + 101, None)))

    @pytest.mark.parametrize("flt", [
        AnnotationFilter(window=TimeWindow(5, 4)),
        AnnotationFilter(bbox=BoundingBox(1, 0, 0, 1)),
        AnnotationFilter(bbox=BoundingBox(0, 1, 1, 0)),
    ])
    def test_malformed_filters(self, store, flt):
        with pytest.raises(errors.MalformedFilter):
            store.query_annotations(flt)

    def test_traffic_jam_conjunction(self, store):
        dom = store.create_tag_domain("city", "", ["high_pollution", "low_speed"])
        hp, ls = dom.tag_ids
        store.record_annotation(ann(hp, entity="street-A", attribute="NO2"))
        store.record_annotation(ann(ls, entity="street-A", attribute="speed", t=T + 60_000))
        store.record_annotation(ann(hp, entity="street-B", attribute="NO2"))
        window = TimeWindow(T, T + 3_600_000)
        assert store.conjunctive_entity_query([Clause(hp), Clause(ls)], window) == ["street-A"]
        assert store.conjunctive_entity_query([Clause(hp)], window) == ["street-A", "street-B"]
        assert store.conjunctive_entity_query([Clause(hp, "speed")], window) == []

    def test_conjunction_needs_a_clause(self, store):
        with pytest.raises(errors.MalformedFilter):
            store.conjunctive_entity_query([], TimeWindow(0, 1))


def test_journal_replay_rebuilds_store(tmp_path):
    j = Journal.in_dir(tmp_path)
    s1 = TagStore(j)
    dom = s1.create_tag_domain("d", "x", ["a", "b"])
    extra = s1.add_tag(dom.id, "c")
    s1.relate_tags(dom.tag_ids[0], extra.id)
    aid = s1.record_annotation(ann(extra.id, location=(1.0, 2.0), score=0.25))
    j.close()
    s2 = TagStore()
    for _, op, data in Journal.in_dir(tmp_path).replay():
        assert s2.apply(op, data)
    assert s2.get_domain(dom.id) == s1.get_domain(dom.id)
    assert s2.get_tag(extra.id) == s1.get_tag(extra.id)
    assert s2.get_annotation(aid) == s1.get_annotation(aid)
    assert s2.check_integrity() == []


# -- randomized equivalence against linear scans ----------------------------------

ENTITIES = [f"urn:oc:e:{i}" for i in range(6)]


@st.composite
def populated_stores(draw):
    store = TagStore()
    domains = {}
    for d in range(draw(st.integers(1, 3))):
        dom = store.create_tag_domain(f"dom{d}", "", [f"t{i}" for i in range(draw(st.integers(1, 4)))])
        domains[dom.id] = set(dom.tag_ids)
    tags = sorted(t for ts in domains.values() for t in ts)
    n = draw(st.integers(0, 60))
    batch = []
    for _ in range(n):
        start = draw(st.integers(0, 100))
        loc = draw(st.none() | st.tuples(st.floats(-90, 90), st.floats(-180, 180)))
        batch.append(Annotation(
            entity_id=draw(st.sampled_from(ENTITIES)),
            attribute=draw(st.sampled_from(["PM10", "NO2"])),
            tag_id=draw(st.sampled_from(tags)),
            time_from=start, time_to=start + draw(st.integers(0, 20)),
            annotator=Annotator.user("u"), location=loc))
    store.record_annotations(batch)
    return store, domains, tags


def maybe(strategy):
    return st.none() | strategy


@st.composite
def windows(draw):
    lo = draw(maybe(st.integers(-5, 120)))
    hi = draw(maybe(st.integers(-5, 120)))
    if lo is not None and hi is not None and lo > hi:
        lo, hi = hi, lo
    return lo, hi


@st.composite
def bboxes(draw):
    lons = sorted(draw(st.lists(st.floats(-180, 180), min_size=2, max_size=2)))
    lats = sorted(draw(st.lists(st.floats(-90, 90), min_size=2, max_size=2)))
    return lons[0], lats[0], lons[1], lats[1]


@settings(max_examples=150, deadline=None)
@given(populated_stores(), st.data())
def test_query_matches_scan(case, data):
    store, domains, tags = case
    entity = data.draw(maybe(st.sampled_from(ENTITIES)))
    tag = data.draw(maybe(st.sampled_from(tags)))
    domain = data.draw(maybe(st.sampled_from(sorted(domains))))
    window = data.draw(maybe(windows()))
    bbox = data.draw(maybe(bboxes()))
    got = store.query_annotations(AnnotationFilter(
        entity, tag, domain,
        None if window is None else TimeWindow(*window),
        None if bbox is None else BoundingBox(*bbox)))
    assert got == scan_filter(store.all_annotations(), domains, entity, tag, domain, window, bbox)


@settings(max_examples=150, deadline=None)
@given(populated_stores(), st.data())
def test_conjunction_matches_scan(case, data):
    store, _, tags = case
    clauses = data.draw(st.lists(st.tuples(st.sampled_from(tags),
                                           maybe(st.sampled_from(["PM10", "NO2"]))),
                                 min_size=1, max_size=3))
    window = data.draw(maybe(windows()))
    bbox = data.draw(maybe(bboxes()))
    got = store.conjunctive_entity_query(
        [Clause(t, a) for t, a in clauses],
        None if window is None else TimeWindow(*window),
        None if bbox is None else BoundingBox(*bbox))
    assert got == scan_conjunction(store.all_annotations(), clauses, window, bbox)


@settings(max_examples=100, deadline=None)
@given(populated_stores(), st.data())
def test_single_clause_is_projection(case, data):
    store, _, tags = case
    tag = data.draw(st.sampled_from(tags))
    projected = sorted({a.entity_id for a in store.query_annotations(AnnotationFilter(tag_id=tag))})
    assert store.conjunctive_entity_query([Clause(tag)]) == projected


@settings(max_examples=100, deadline=None)
@given(populated_stores())
def test_integrity_and_round_trip(case):
    store = case[0]
    assert store.check_integrity() == []
    for a in store.all_annotations():
        assert store.get_annotation(a.id) == a
        assert Annotation.from_dict(a.to_dict()) == a


@st.composite
def relate_sequences(draw):
    pairs = draw(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5))
                          .filter(lambda p: p[0] != p[1]), max_size=15))
    return pairs


def edge_set(store, ids):
    return {frozenset((t, r)) for t in ids for r in store.get_tag(t).related_tag_ids}


@settings(max_examples=100, deadline=None)
@given(relate_sequences(), st.randoms(use_true_random=False))
def test_relate_order_and_multiplicity_irrelevant(pairs, rnd):
    stores = []
    for variant in range(2):
        s = TagStore()
        ids = s.create_tag_domain("d", "", [f"t{i}" for i in range(6)]).tag_ids
        seq = list(pairs)
        if variant:
            seq = [(b, a) for a, b in seq] * 2
            rnd.shuffle(seq)
        for a, b in seq:
            s.relate_tags(ids[a], ids[b])
        stores.append({frozenset((ids.index(x) for x in e)) for e in edge_set(s, ids)})
    assert stores[0] == stores[1] == {frozenset(p) for p in pairs}


@settings(max_examples=100, deadline=None)
@given(relate_sequences(), st.sets(st.integers(0, 5)))
def test_suggest_excludes_seeds_and_foreign_tags(pairs, seed_idx):
    s = TagStore()
    dom = s.create_tag_domain("d", "", [f"t{i}" for i in range(6)])
    ids = dom.tag_ids
    other = s.create_tag_domain("e", "", ["x", "y"]).tag_ids
    s.relate_tags(ids[0], other[0])
    for a, b in pairs:
        s.relate_tags(ids[a], ids[b])
    seeds = {ids[i] for i in seed_idx}
    out = s.suggest_tags(dom.id, seeds)
    assert all(t.id not in seeds and t.id in ids for t in out)
    assert len({t.id for t in out}) == len(out)
