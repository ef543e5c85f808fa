import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from xfrag.satisfiability import satisfiable
from xfrag.strategies import (FragmentDef, FragSchema, SchemaError, affinity_groups,
                              affinity_matrix, derive_schema, km_schema, minterms, pc_schema,
                              schema_from_xml, schema_to_string, schema_to_xml)
from xfrag.workload import (Predicate, Query, Workload, bind_workload, build_qp_matrix,
                            parse_workload)

from conftest import random_workload_text

SAMPLE_SCHEMA = """
<Schema>
  <fragment id="f1">
    <dimension name="Customer"><predicate name="p1" /></dimension>
  </fragment>
  <fragment id="f2">
    <dimension name="Customer"><predicate name="p2" /></dimension>
    <dimension name="Part"><predicate name="p3" /></dimension>
    <dimension name="Date"><predicate name="p4" /></dimension>
  </fragment>
</Schema>
"""


def shape(el):
    """Whitespace-free structural view of an element tree."""
    return (el.tag, dict(el.attrib), [shape(c) for c in el])


def test_sample_km_schema_matches_expected_document(sample_wl):
    schema = km_schema(build_qp_matrix(sample_wl), sample_wl.predicates, 2)
    expected = ET.fromstring(SAMPLE_SCHEMA)
    ET.SubElement(expected, "fragment", {"id": "f3", "else": "true"})
    assert shape(ET.fromstring(schema_to_string(schema))) == shape(expected)
    f2 = schema.fragments[1]
    assert {d: [p.id for p in ps] for d, ps in f2.predicates.items()} == \
        {"Customer": ["p2"], "Part": ["p3"], "Date": ["p4"]}


def test_else_only_document():
    schema = FragSchema("NF", (FragmentDef("f1", {}, is_else=True),))
    want = ET.fromstring('<Schema><fragment id="f1" else="true"/></Schema>')
    assert shape(schema_to_xml(schema)) == shape(want)


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_km_fragment_count(sample_wl, k):
    schema = km_schema(build_qp_matrix(sample_wl), sample_wl.predicates, k)
    assert len(schema) == k + 1 and schema.fragments[-1].is_else
    assert schema.predicate_ids() == {"p1", "p2", "p3", "p4"}


def test_km_k8_on_benchmark(bench_wl):
    assert len(derive_schema("KM", bench_wl, k=8, seed=42)) == 9


def test_schema_validation():
    with pytest.raises(SchemaError):
        FragSchema("KM", (FragmentDef("f1"),))
    with pytest.raises(SchemaError):
        FragSchema("KM", (FragmentDef("f1", {}, True), FragmentDef("f2")))
    with pytest.raises(SchemaError):
        FragSchema("KM", (FragmentDef("f1"), FragmentDef("f1", {}, True)))


def preds_on_x(*specs):
    return [Predicate(f"p{i + 1}", "Customer", "c_nation_key", op, lit)
            for i, (op, lit) in enumerate(specs)]


def test_pc_single_predicate_gives_two():
    ps = preds_on_x(("=", 1))
    schema = pc_schema(Workload([], ps))
    assert len(schema.regular) == 2 and schema.else_empty
    assert [tuple(p.negated for p in f.conjunction) for f in schema.regular] == [(False,), (True,)]


def test_pc_drops_unsatisfiable_minterm():
    ps = preds_on_x((">", 15), ("=", 13))
    schema = pc_schema(Workload([], ps))
    assert len(schema.regular) == 3
    assert all(satisfiable(f.conjunction) for f in schema.regular)


def test_pc_guard():
    ps = [Predicate(f"p{i + 1}", "Part", "p_size", "=", i) for i in range(21)]
    with pytest.raises(SchemaError):
        pc_schema(Workload([], ps))


def test_affinity_on_sample(sample_wl):
    aff = affinity_matrix(sample_wl)
    # hand-summed from the QP rows: q2 pairs p2/p3, q4 and q7 pair p2/p4, q5, q8, q10 pair p3/p4
    assert aff.values.tolist() == [[4, 0, 0, 0], [0, 3, 1, 2], [0, 1, 4, 3], [0, 2, 3, 5]]
    assert aff["p2", "p3"] == 1 and aff["p1", "p2"] == 0
    # heaviest edge p3-p4 (3) seeds a group; p2's best link into it (2) is weaker
    assert affinity_groups(aff) == [["p1"], ["p2"], ["p3", "p4"]]


def test_affinity_pair_grouping():
    wl = parse_workload("""
for $x in //FactDoc/Fact,
    $y in //dimension[@dim-id="Customer"]/Level/instance,
    $z in //dimension[@dim-id="Part"]/Level/instance
where $y/attribute[@id="c_nation_key"]/@value="13"
  and $z/attribute[@id="p_type"]/@value="PBC"
  and $x/dimension[@dim-id="Customer"]/@value-id=$y/@id
  and $x/dimension[@dim-id="Part"]/@value-id=$z/@id
return $x

for $x in //FactDoc/Fact,
    $y in //dimension[@dim-id="Customer"]/Level/instance
where $y/attribute[@id="c_nation_key"]/@value>"15"
  and $x/dimension[@dim-id="Customer"]/@value-id=$y/@id
return $x
""")
    assert affinity_groups(affinity_matrix(wl)) == [["p1", "p2"], ["p3"]]


def test_disjoint_queries_give_singletons():
    ps = preds_on_x(("=", 1), ("=", 2), ("=", 3))
    qs = [Query(f"q{i}", (p.id,), ("Customer",)) for i, p in enumerate(ps)]
    groups = affinity_groups(affinity_matrix(Workload(qs, ps)))
    assert groups == [["p1"], ["p2"], ["p3"]]


def test_frequency_equals_repetition():
    ps = preds_on_x(("=", 1), (">", 3))
    twice = [Query("a", ("p1", "p2"), ("Customer",)), Query("b", ("p1", "p2"), ("Customer",))]
    once = [Query("a", ("p1", "p2"), ("Customer",), frequency=2)]
    assert np.array_equal(affinity_matrix(Workload(twice, ps)).values,
                          affinity_matrix(Workload(once, ps)).values)


def test_strategy_ordering_on_benchmark(bench_wl):
    counts = {s: len(derive_schema(s, bench_wl, k=8, seed=42)) for s in ("PC", "AB", "KM")}
    assert counts["PC"] > counts["AB"] > counts["KM"] == 9


def test_pc_minterms_cover_every_instance_once(small_wh, bench_wl):
    schema_preds = {}
    for p in bench_wl.predicates:
        schema_preds.setdefault(p.dimension_id, []).append(p)
    for dim_id, preds in schema_preds.items():
        dim = small_wh.dimension(dim_id)
        lookup = dim.resolver()
        terms = minterms(preds)
        for inst in dim.finest.instances:
            hits = sum(all(p.evaluate(lookup(inst.id, p.attribute)) for p in t) for t in terms)
            assert hits == 1


def test_unknown_predicate_in_xml(sample_wl):
    doc = '<Schema><fragment id="f1"><dimension name="Customer"><predicate name="p9"/>' \
          '</dimension></fragment><fragment id="f2" else="true"/></Schema>'
    with pytest.raises(SchemaError, match="p9"):
        schema_from_xml(doc, sample_wl.predicates)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**9), n=st.integers(1, 10), k=st.integers(1, 6))
def test_schemas_round_trip_and_partition(small_wh, seed, n, k):
    wl = bind_workload(parse_workload(random_workload_text(seed, n)), small_wh.meta)
    if not wl.predicates:
        return
    k = min(k, len(wl.predicates))
    for strategy in ("KM", "PC", "AB"):
        if strategy == "PC" and len(wl.predicates) > 12:
            continue
        schema = derive_schema(strategy, wl, k=k, seed=seed)
        back = schema_from_xml(schema_to_string(schema), wl.predicates, strategy)
        assert back == schema
        assert len({f.id for f in schema.fragments}) == len(schema)
        if strategy == "KM":
            assert len(schema) == k + 1
        if strategy in ("KM", "AB"):
            # each predicate lands in exactly one regular fragment
            used = [p.id for f in schema.regular for p in f.conjunction]
            assert sorted(used) == sorted(p.id for p in wl.predicates)
            assert not any(p.negated for f in schema.regular for p in f.conjunction)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**9), n=st.integers(1, 10))
def test_affinity_symmetric_with_frequency_diagonal(seed, n):
    wl = parse_workload(random_workload_text(seed, n))
    aff = affinity_matrix(wl)
    assert np.array_equal(aff.values, aff.values.T)
    for i, pid in enumerate(aff.predicates):
        assert aff.values[i, i] == sum(q.frequency for q in wl.queries if pid in q.predicate_ids)
    groups = affinity_groups(aff)
    assert sorted(p for g in groups for p in g) == sorted(aff.predicates)
