from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from xfrag.fragmenter import (ConsistencyError, WarehouseIndex, emit_fragment_script,
                              load_fragments, materialize, merged_facts, naive_assignment,
                              write_fragments)
from xfrag.strategies import FragmentDef, FragSchema, derive_schema, km_schema, schema_from_clusters
from xfrag.warehouse import GeneratorSpec, generate_warehouse
from xfrag.workload import Predicate, bind_workload, build_qp_matrix, parse_workload

from conftest import random_workload_text


def fact_lookup(wh):
    resolvers = {d.dimension_id: d.resolver() for d in wh.dimensions}

    def for_fact(fact):
        return lambda dim, attr: resolvers[dim](fact.refs[dim], attr)
    return for_fact


def check_partition(wh, frags):
    original = wh.fact_data().facts
    assert sum(len(f) for f in frags) == len(original)
    assert Counter(f.key() for f in merged_facts(frags)) == Counter(f.key() for f in original)
    seen = set()
    for f in frags:
        idx = set(int(i) for i in f.fact_indices)
        assert not idx & seen
        seen |= idx
    assert seen == set(range(len(original)))


def check_membership(wh, frags):
    """Every fact satisfies its own fragment's condition and no other one."""
    view = fact_lookup(wh)
    for j, fact in enumerate(wh.fact_data().facts):
        owners = [f.fragment_id for f in frags if f.membership_condition.holds(view(fact))]
        assert len(owners) == 1
        assert j in frags[[f.fragment_id for f in frags].index(owners[0])].fact_indices


def check_joins(frags):
    for f in frags:
        for fact in f.fact_part.facts:
            for dim, ref in fact.refs.items():
                assert ref in f.dimension_parts[dim].index()


def test_sample_schema_partition(small_wh, sample_wl):
    schema = km_schema(build_qp_matrix(sample_wl), sample_wl.predicates, 2)
    frags = materialize(schema, small_wh)
    check_partition(small_wh, frags)
    check_membership(small_wh, frags)
    check_joins(frags)
    assert [int(x) for f in frags for x in f.fact_indices] != []
    assert naive_assignment(schema, small_wh) == \
        [next(i for i, f in enumerate(frags) if j in f.fact_indices)
         for j in range(len(small_wh.fact_data().facts))]


def test_fact_matching_every_predicate_lands_in_second_fragment(small_wh):
    fact = small_wh.fact_data().facts[0]
    view = fact_lookup(small_wh)(fact)
    nation, ptype, day = (view("Customer", "c_nation_key"), view("Part", "p_type"),
                          view("Date", "d_date_name"))
    preds = [Predicate("p1", "Customer", "c_nation_key", ">", 99),
             Predicate("p2", "Customer", "c_nation_key", "=", nation),
             Predicate("p3", "Part", "p_type", "=", ptype),
             Predicate("p4", "Date", "d_date_name", "=", day)]
    schema = schema_from_clusters([["p1"], ["p2", "p3", "p4"]], preds)
    frags = materialize(schema, small_wh)
    assert len(frags[0]) == 0                    # nothing has nation > 99
    assert 0 in frags[1].fact_indices
    check_partition(small_wh, frags)


def test_unsatisfied_fragment_is_empty_but_kept(small_wh, tmp_path):
    p = Predicate("p1", "Part", "p_size", ">", 1000)
    schema = FragSchema("KM", (FragmentDef("f1", {"Part": (p,)}), FragmentDef("f2", {}, True)))
    frags = materialize(schema, small_wh)
    assert len(frags[0]) == 0 and len(frags[1]) == len(small_wh.fact_data().facts)
    manifest = write_fragments(frags, tmp_path)
    loaded = load_fragments(manifest, small_wh.meta)
    assert [(fid, len(wh.fact_data().facts)) for fid, _, wh in loaded] == \
        [("f1", 0), ("f2", len(frags[1]))]
    assert len(loaded[0][2].dimension("Part").finest.instances) == 0


def test_replicated_and_reduced_dimensions(small_wh, sample_wl):
    schema = km_schema(build_qp_matrix(sample_wl), sample_wl.predicates, 2)
    f1, f2, rest = materialize(schema, small_wh)
    # f1 constrains only Customer; the other dimensions are shared whole
    assert f1.dimension_parts["Part"] is small_wh.dimension("Part")
    nations = {inst.values["c_nation_key"] for inst in f1.dimension_parts["Customer"].finest.instances}
    assert nations and min(nations) > 15
    # ELSE keeps exactly the finest instances its facts reference
    for d, part in rest.dimension_parts.items():
        assert {i.id for i in part.finest.instances} == {f.refs[d] for f in rest.fact_part.facts}


def test_singleton_schema_conserves_facts(sample_wl):
    wh = generate_warehouse(GeneratorSpec(seed=42, fact_count=7000))
    wl = bind_workload(sample_wl, wh.meta)
    schema = km_schema(build_qp_matrix(wl), wl.predicates, 4)
    frags = materialize(schema, wh)
    assert sum(len(f) for f in frags) == 7000


def test_nine_fragments_write_45_files(small_wh, bench_wl, tmp_path):
    frags = materialize(derive_schema("KM", bench_wl, k=8, seed=42), small_wh)
    manifest = write_fragments(frags, tmp_path)
    data = [p for p in tmp_path.iterdir() if p != manifest]
    assert len(data) == 45 and manifest.name == "manifest.xml"
    loaded = load_fragments(manifest, small_wh.meta)
    merged = [f for _, _, wh in loaded for f in wh.fact_data().facts]
    assert Counter(f.key() for f in merged) == Counter(f.key() for f in small_wh.fact_data().facts)
    assert [is_else for _, is_else, _ in loaded] == [False] * 8 + [True]


def test_unknown_attribute_is_consistency_error(small_wh):
    p = Predicate("p1", "Part", "p_colour", "=", "red")
    schema = FragSchema("KM", (FragmentDef("f1", {"Part": (p,)}), FragmentDef("f2", {}, True)))
    with pytest.raises(ConsistencyError):
        materialize(schema, small_wh)
    q = Predicate("p1", "Store", "s_name", "=", "x")
    schema = FragSchema("KM", (FragmentDef("f1", {"Store": (q,)}), FragmentDef("f2", {}, True)))
    with pytest.raises(ConsistencyError):
        materialize(schema, small_wh)


def test_script_for_sample(small_wh, sample_wl):
    schema = km_schema(build_qp_matrix(sample_wl), sample_wl.predicates, 2)
    text = emit_fragment_script(schema, small_wh.meta)
    f2 = text[text.index("(: fragment f2 :)"):text.index("(: fragment f3")]
    assert f2.count("element dimension{") == 3
    assert f2.count("element FactDoc") == 1
    for dim in ("Customer", "Part", "Date"):
        assert f'dimension_{dim}_f2.xml' in f2
    f1 = text[:text.index("(: fragment f2 :)")]
    assert f1.count("element dimension{") == 1 and f1.count("element FactDoc") == 1
    assert "ELSE" in text[text.index("(: fragment f3"):]


@settings(max_examples=25, deadline=None)
@given(wseed=st.integers(0, 10**9), n=st.integers(1, 8), facts=st.integers(1, 400),
       hseed=st.integers(0, 2**32), k=st.integers(1, 5), strategy=st.sampled_from(["KM", "PC", "AB"]))
def test_partition_properties(wseed, n, facts, hseed, k, strategy):
    wh = generate_warehouse(GeneratorSpec(seed=hseed, fact_count=facts,
                                          instance_counts={"Customer": 40, "Supplier": 10,
                                                           "Date": 30, "Part": 40}))
    wl = bind_workload(parse_workload(random_workload_text(wseed, n)), wh.meta)
    if not wl.predicates:
        return
    schema = derive_schema(strategy, wl, k=min(k, len(wl.predicates)), seed=wseed)
    frags = materialize(schema, wh, index=WarehouseIndex(wh))
    check_partition(wh, frags)
    check_membership(wh, frags)
    check_joins(frags)
