"""Acceptance gate: one printed PASS/FAIL line per headline criterion.

Run with ``pytest tests/test_acceptance.py -v`` and read the ``ACCEPT`` lines.
"""
import time
import xml.etree.ElementTree as ET
from collections import Counter

import numpy as np
import pytest

from xfrag.clustering import exhaustive_optimum, kmeans, vectors_from_qp
from xfrag.engine import (BenchConfig, CostReport, Router, bench, run_workload, whole_fragment,
                          write_bench)
from xfrag.fragmenter import WarehouseIndex, materialize, merged_facts, naive_assignment
from xfrag.strategies import derive_schema, km_schema, schema_to_string
from xfrag.warehouse import GeneratorSpec, generate_warehouse
from xfrag.workload import build_qp_matrix, load_workload

from conftest import BENCHMARK, SAMPLE

SIZES = tuple(range(1000, 7001, 1000))


@pytest.fixture
def verdict(capsys):
    def emit(name: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\nACCEPT {'PASS' if ok else 'FAIL'} | {name} | {detail}")
        assert ok, detail
    return emit


@pytest.fixture(scope="module")
def full_bench(bench_wl):
    return bench(BenchConfig(bench_wl, sizes=SIZES, ksweep_sizes=(4000, 5000), seed=42))


def strip_wall(text: str) -> str:
    lines = [ln.split(",") for ln in text.splitlines()]
    drop = {i for i, h in enumerate(lines[0]) if h in ("wall_ms", "derivation_ms")}
    return "\n".join(",".join(c for i, c in enumerate(ln) if i not in drop) for ln in lines)


def test_sample_clustering(sample_wl, verdict):
    t0 = time.perf_counter()
    vecs = vectors_from_qp(build_qp_matrix(sample_wl))
    got = kmeans(vecs, 2)
    best = exhaustive_optimum(vecs, 2)
    secs = time.perf_counter() - t0
    want = frozenset({frozenset({"p1"}), frozenset({"p2", "p3", "p4"})})
    gap = abs(got.objective - best.objective)
    verdict("sample clustering", got.partition() == want and gap <= 1e-9 and secs < 1,
            f"partition={sorted(sorted(c) for c in got.clusters)} |obj-opt|={gap:.1e} "
            f"(tol 1e-9) time={secs:.3f}s (<1s)")


SAMPLE_SCHEMA = """<Schema>
  <fragment id="f1"><dimension name="Customer"><predicate name="p1"/></dimension></fragment>
  <fragment id="f2">
    <dimension name="Customer"><predicate name="p2"/></dimension>
    <dimension name="Part"><predicate name="p3"/></dimension>
    <dimension name="Date"><predicate name="p4"/></dimension>
  </fragment>
  <fragment id="f3" else="true"/>
</Schema>"""


def test_schema_fidelity(sample_wl, verdict):
    def shape(el):
        return (el.tag, dict(el.attrib), [shape(c) for c in el])
    t0 = time.perf_counter()
    schema = km_schema(build_qp_matrix(sample_wl), sample_wl.predicates, 2)
    doc = ET.fromstring(schema_to_string(schema))
    secs = time.perf_counter() - t0
    same = shape(doc) == shape(ET.fromstring(SAMPLE_SCHEMA))
    verdict("schema fidelity", same and secs < 1,
            f"structurally equal={same} time={secs:.3f}s (<1s)")


def test_partition_correctness(bench_wl, verdict):
    t0 = time.perf_counter()
    problems = []
    schemas = {s: derive_schema(s, bench_wl, k=8 if s == "KM" else None, seed=42)
               for s in ("KM", "PC", "AB")}
    for size in (1000, 5500, 10000):
        wh = generate_warehouse(GeneratorSpec(seed=size, fact_count=size))
        index = WarehouseIndex(wh)
        original = wh.fact_data().facts
        for s, schema in schemas.items():
            frags = materialize(schema, wh, index=index)
            idx = np.concatenate([f.fact_indices for f in frags])
            disjoint = len(idx) == len(set(idx.tolist())) == len(original)
            complete = Counter(f.key() for f in merged_facts(frags)) == \
                Counter(f.key() for f in original)
            if not (disjoint and complete):
                problems.append(f"{s}@{size}")
    secs = time.perf_counter() - t0
    verdict("partition correctness", not problems and secs < 30,
            f"sizes 1000/5500/10000 x KM,PC,AB exact multiset check; failures={problems} "
            f"time={secs:.1f}s (<30s)")


def test_query_equivalence(verdict):
    t0 = time.perf_counter()
    wh = generate_warehouse(GeneratorSpec(seed=11, fact_count=2000))
    mismatches, leaks, runs = [], [], 0
    for path in (SAMPLE, BENCHMARK):
        wl = load_workload(path, wh.meta)
        nf = run_workload(wl, [whole_fragment(wh)], None, CostReport("NF", 0, 0))
        configs = [("KM", k) for k in (2, 4, 8) if k <= len(wl.predicates)] + \
            [("PC", None), ("AB", None)]
        for s, k in configs:
            schema = derive_schema(s, wl, k=k, seed=42)
            got = run_workload(wl, materialize(schema, wh), schema, CostReport(s, 0, 0))
            owner = naive_assignment(schema, wh)
            router = Router(schema)
            for q in wl.queries:
                runs += 1
                if not np.array_equal(got[q.id], nf[q.id]):
                    mismatches.append(f"{path.stem}:{s}{k or ''}:{q.id}")
                routed = set(router.route(q, wl.query_predicates(q)).relevant_fragment_ids)
                leaks += [j for j in nf[q.id] if schema.fragments[owner[j]].id not in routed]
    secs = time.perf_counter() - t0
    verdict("query equivalence", not mismatches and not leaks and secs < 120,
            f"{runs} query runs; result mismatches={len(mismatches)} "
            f"facts in pruned fragments={len(leaks)} time={secs:.1f}s (<120s)")


def test_fragment_count_ordering(bench_wl, verdict):
    n = {s: len(derive_schema(s, bench_wl, k=8, seed=42)) for s in ("PC", "AB", "KM")}
    verdict("fragment-count ordering", n["PC"] > n["AB"] > n["KM"] == 9,
            f"PC={n['PC']} AB={n['AB']} KM={n['KM']} (need PC > AB > KM = 9)")


def test_cost_improvement(full_bench, verdict):
    reps = {(r.strategy, r.size): r for r in full_bench.reports}
    worse = [n for n in SIZES if not reps["KM", n].mean_parallel() < reps["NF", n].mean_parallel()]
    total = {s: sum(reps[s, n].total_scanned() for n in SIZES) for s in ("KM", "PC", "AB")}
    ok = not worse and total["KM"] < total["PC"] and total["KM"] < total["AB"]
    verdict("cost improvement", ok,
            f"KM<NF mean parallel at every size: {not worse} (failing sizes {worse}); "
            f"total scanned KM={total['KM']} PC={total['PC']} AB={total['AB']} "
            f"(need KM < PC and KM < AB, strict)")


def test_overhead_ordering(full_bench, verdict):
    ms = {s: t for s, _, t in full_bench.overhead}
    n_preds = full_bench.overhead[0][1]
    ok = n_preds >= 15 and ms["KM"] < ms["AB"] < ms["PC"]
    verdict("overhead ordering", ok,
            f"|P|={n_preds} median-of-5 ms KM={ms['KM']:.3f} AB={ms['AB']:.3f} "
            f"PC={ms['PC']:.3f} (need KM < AB < PC, strict)")


def test_ksweep_shape(full_bench, verdict):
    cost = {(s, k): c for s, k, c in full_bench.ksweep}
    parts, ok = [], True
    for size in (4000, 5000):
        ks = sorted(k for s, k in cost if s == size)
        argmin = min(ks, key=lambda k: (cost[size, k], k))
        ok &= cost[size, 2] < cost[size, 1]
        parts.append(f"{size}: k1={cost[size, 1]:.1f} k2={cost[size, 2]:.1f} min at k={argmin}")
    verdict("k-sweep shape", ok, "; ".join(parts) + " (need cost(k=2) < cost(k=1))")


def test_determinism(full_bench, bench_wl, tmp_path, verdict):
    again = bench(BenchConfig(bench_wl, sizes=SIZES, ksweep_sizes=(4000, 5000), seed=42))
    a = write_bench(full_bench, tmp_path / "a")
    b = write_bench(again, tmp_path / "b")
    differ = [x.name for x, y in zip(a, b) if strip_wall(x.read_text()) != strip_wall(y.read_text())]
    verdict("determinism", not differ,
            f"{len(a)} CSVs compared byte-for-byte minus timing columns; differing={differ}")
