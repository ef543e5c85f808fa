"""Query routing, execution over fragments or the whole warehouse, and benchmarks.

Cost is counted in fact entries scanned: a routed fragment costs its fact
count.  Parallel cost is the max over routed fragments, sequential cost the
sum.  Routing only looks at the schema, never at the data.
"""
from __future__ import annotations

import csv
import io
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fragmenter import Fragment, Membership, WarehouseIndex, materialize
from .satisfiability import contradiction, implies, satisfiable
from .strategies import FragSchema, derive_schema, km_schema
from .warehouse import FactData, GeneratorSpec, Warehouse, generate_warehouse
from .workload import Predicate, Query, Workload, build_qp_matrix

STRATEGY_LABELS = ("NF", "PC", "AB", "KM")


# --------------------------------------------------------------------------
# routing

@dataclass(frozen=True)
class RoutingPlan:
    query_id: str
    relevant_fragment_ids: tuple[str, ...]
    pruning_proof: dict[str, str] = field(default_factory=dict)


class Router:
    """Schema-level router; plans are cached per predicate conjunction.

    A regular fragment is pruned when the query contradicts its condition,
    or when query AND condition already implies an earlier fragment's
    condition (those facts were claimed first).  ELSE is pruned when the
    query implies some regular fragment's condition.
    """

    def __init__(self, schema: FragSchema):
        self.schema = schema
        self._conds = [list(f.conjunction) for f in schema.regular]
        # complementary[i, h]: the two conditions hold a predicate with opposite signs,
        # so neither can imply the other unless one is unsatisfiable
        pids = sorted({p.id for c in self._conds for p in c})
        col = {pid: j for j, pid in enumerate(pids)}
        pos = np.zeros((len(self._conds), len(pids)), dtype=np.int64)
        neg = np.zeros_like(pos)
        for i, cond in enumerate(self._conds):
            for p in cond:
                (neg if p.negated else pos)[i, col[p.id]] = 1
        clash = pos @ neg.T
        self._complementary = (clash + clash.T) > 0
        self._cache: dict[frozenset, tuple] = {}

    def route(self, query: Query, preds: list[Predicate]) -> RoutingPlan:
        key = frozenset((p.id, p.negated) for p in preds)
        hit = self._cache.get(key)
        if hit is None:
            hit = self._route(list(preds))
            self._cache[key] = hit
        ids, proof = hit
        return RoutingPlan(query.id, ids, dict(proof))

    def _route(self, q: list[Predicate]):
        frags = self.schema.fragments
        relevant, proof, live = [], {}, []
        for i, cond in enumerate(self._conds):
            fid = frags[i].id
            if not satisfiable(q + cond):
                w = contradiction(q, cond)
                proof[fid] = (f"{w[0].id if w[0] else '-'} contradicts {w[1].id if w[1] else '-'}"
                              if w else "query and fragment condition unsatisfiable")
                continue
            claimed = None
            if q:
                for h in live:
                    if not self._complementary[i, h] and implies(q + cond, self._conds[h]):
                        claimed = h
                        break
            if claimed is not None:
                proof[fid] = f"matching facts already claimed by {frags[claimed].id}"
                continue
            live.append(i)
            relevant.append(fid)
        else_id = self.schema.else_fragment.id
        covering = next((h for h in live if implies(q, self._conds[h])), None) if q else None
        if covering is not None:
            proof[else_id] = f"query implies {frags[covering].id}"
        else:
            relevant.append(else_id)
        return tuple(relevant), tuple(proof.items())


def route(query: Query, preds, schema: FragSchema) -> RoutingPlan:
    return Router(schema).route(query, list(preds))


# --------------------------------------------------------------------------
# execution

class Executor:
    """Evaluates conjunctive queries over fragments, caching per dimension part."""

    def __init__(self):
        self._dim = {}
        self._refs = {}
        self._masks = {}

    def _dim_state(self, part):
        state = self._dim.get(id(part))
        if state is None:
            ids = [inst.id for inst in part.finest.instances]
            state = (part, ids, {iid: n for n, iid in enumerate(ids)}, part.resolver())
            self._dim[id(part)] = state
        return state

    def _mask(self, part, p: Predicate) -> np.ndarray:
        key = (id(part), p.key, p.negated)
        mask = self._masks.get(key)
        if mask is None:
            _, ids, _, lookup = self._dim_state(part)
            mask = np.array([p.evaluate(lookup(iid, p.attribute)) for iid in ids], dtype=bool)
            self._masks[key] = mask
        return mask

    def _fact_refs(self, frag: Fragment, dim: str) -> np.ndarray:
        key = (id(frag.fact_part), dim)
        refs = self._refs.get(key)
        if refs is None:
            part = frag.dimension_parts[dim]
            pos = self._dim_state(part)[2]
            # a reference outside the fragment's own dimension part is a KeyError:
            # derived-join soundness is not optional
            refs = np.fromiter((pos[f.refs[dim]] for f in frag.fact_part.facts),
                               dtype=np.int64, count=len(frag.fact_part.facts))
            self._refs[key] = refs
        return refs

    def run(self, frag: Fragment, preds) -> np.ndarray:
        """Original fact indices in ``frag`` answering the conjunction ``preds``."""
        mask = np.ones(len(frag), dtype=bool)
        for p in preds:
            if not mask.any():
                break
            mask &= self._mask(frag.dimension_parts[p.dimension_id], p)[
                self._fact_refs(frag, p.dimension_id)]
        return frag.fact_indices[mask]


def whole_fragment(wh: Warehouse, fact_set_id: str | None = None) -> Fragment:
    """The unfragmented warehouse wrapped as a single fragment."""
    fd: FactData = wh.fact_data(fact_set_id)
    dims = wh.meta.fact_set(fd.fact_set_id).dimension_refs
    return Fragment("NF", {d: wh.dimension(d) for d in dims}, fd, Membership((), ()),
                    np.arange(len(fd.facts)))


@dataclass(frozen=True)
class QueryCost:
    query_id: str
    fragments_accessed: int
    facts_scanned: tuple[int, ...]
    result_size: int
    wall_ms: float = field(compare=False, default=0.0)

    @property
    def facts_scanned_total(self) -> int:
        return sum(self.facts_scanned)

    @property
    def parallel_cost(self) -> int:
        return max(self.facts_scanned, default=0)

    @property
    def sequential_cost(self) -> int:
        return sum(self.facts_scanned)


@dataclass
class CostReport:
    strategy: str
    size: int
    seed: int
    k: int | None = None
    rows: list[QueryCost] = field(default_factory=list)

    def mean_parallel(self) -> float:
        return statistics.fmean(r.parallel_cost for r in self.rows) if self.rows else 0.0

    def mean_sequential(self) -> float:
        return statistics.fmean(r.sequential_cost for r in self.rows) if self.rows else 0.0

    def total_scanned(self) -> int:
        return sum(r.facts_scanned_total for r in self.rows)


def execute(query: Query, preds, fragments: list[Fragment], plan: RoutingPlan | None = None,
            executor: Executor | None = None):
    """Run ``query`` over ``fragments`` (all of them when ``plan`` is None).

    Returns ``(sorted original fact indices, QueryCost)``.
    """
    executor = executor or Executor()
    t0 = time.perf_counter()
    if plan is not None:
        wanted = set(plan.relevant_fragment_ids)
        fragments = [f for f in fragments if f.fragment_id in wanted]
    parts, scanned = [], []
    for frag in fragments:
        parts.append(executor.run(frag, preds))
        scanned.append(len(frag))
    result = np.sort(np.concatenate(parts)) if parts else np.empty(0, dtype=np.int64)
    wall = (time.perf_counter() - t0) * 1000
    return result, QueryCost(query.id, len(fragments), tuple(scanned), len(result), wall)


def run_workload(workload: Workload, fragments: list[Fragment], schema: FragSchema | None,
                 report: CostReport, executor: Executor | None = None) -> dict[str, np.ndarray]:
    """Execute every query; ``schema=None`` means unfragmented (no routing)."""
    executor = executor or Executor()
    router = Router(schema) if schema is not None else None
    results = {}
    for q in workload.queries:
        preds = workload.query_predicates(q)
        plan = router.route(q, preds) if router else None
        res, cost = execute(q, preds, fragments, plan, executor)
        results[q.id] = res
        report.rows.append(cost)
    return results


# --------------------------------------------------------------------------
# bench

@dataclass
class BenchConfig:
    workload: Workload
    sizes: tuple[int, ...] = (1000, 2000, 3000, 4000, 5000, 6000, 7000)
    strategies: tuple[str, ...] = STRATEGY_LABELS
    k: int = 8
    ksweep: tuple[int, ...] = tuple(range(1, 11))
    ksweep_sizes: tuple[int, ...] = (4000, 5000)
    seed: int = 42
    overhead_runs: int = 5

    def __post_init__(self):
        if not self.sizes and not self.ksweep_sizes:
            raise ValueError("bench needs at least one warehouse size")
        bad = [s for s in self.strategies if s not in STRATEGY_LABELS]
        if bad:
            raise ValueError(f"unknown strategies {bad}")
        if self.k < 1 or any(k < 1 for k in self.ksweep):
            raise ValueError("k must be positive")


@dataclass
class BenchResult:
    reports: list[CostReport] = field(default_factory=list)
    ksweep: list[tuple[int, int, float]] = field(default_factory=list)
    overhead: list[tuple[str, int, float]] = field(default_factory=list)
    fragcounts: list[tuple[str, int]] = field(default_factory=list)


def schema_for(label: str, workload: Workload, k: int, seed: int) -> FragSchema:
    return derive_schema(label, workload, k=k if label == "KM" else None, seed=seed)


def time_derivation(label: str, workload: Workload, k: int, seed: int, runs: int) -> float:
    """Median wall time (ms) of schema derivation alone."""
    times = []
    for _ in range(runs):
        t0 = time.perf_counter()
        schema_for(label, workload, k, seed)
        times.append((time.perf_counter() - t0) * 1000)
    return statistics.median(times)


def _warehouse(size: int, seed: int) -> Warehouse:
    return generate_warehouse(GeneratorSpec(seed=seed, fact_count=size))


def bench(config: BenchConfig) -> BenchResult:
    wl = config.workload
    k_eff = min(config.k, len(wl.predicates))
    out = BenchResult()
    labels = [s for s in config.strategies if s != "NF"]
    schemas = {s: schema_for(s, wl, k_eff, config.seed) for s in labels}
    for s in labels:
        out.fragcounts.append((s, len(schemas[s])))
        out.overhead.append((s, len(wl.predicates),
                             time_derivation(s, wl, k_eff, config.seed, config.overhead_runs)))
    for size in config.sizes:
        wh = _warehouse(size, config.seed)
        index = WarehouseIndex(wh)
        for s in config.strategies:
            report = CostReport(s, size, config.seed, k_eff if s == "KM" else None)
            if s == "NF":
                run_workload(wl, [whole_fragment(wh)], None, report)
            else:
                run_workload(wl, materialize(schemas[s], wh, index=index), schemas[s], report)
            out.reports.append(report)
    qp = build_qp_matrix(wl)
    for size in config.ksweep_sizes:
        wh = _warehouse(size, config.seed)
        index = WarehouseIndex(wh)
        for k in config.ksweep:
            report = CostReport("KM", size, config.seed, k)
            if k == 1:
                run_workload(wl, [whole_fragment(wh)], None, report)
            elif k <= len(wl.predicates):
                schema = km_schema(qp, wl.predicates, k, config.seed)
                run_workload(wl, materialize(schema, wh, index=index), schema, report)
            else:
                continue
            out.ksweep.append((size, k, report.mean_parallel()))
    return out


def _fmt(x: float) -> str:
    return f"{x:.3f}"


def efficiency_csv(reports: list[CostReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["size", "strategy", "query_id", "fragments_accessed", "facts_scanned_total",
                "parallel_cost", "sequential_cost", "wall_ms"])
    for rep in reports:
        for r in rep.rows:
            w.writerow([rep.size, rep.strategy, r.query_id, r.fragments_accessed,
                        r.facts_scanned_total, r.parallel_cost, r.sequential_cost,
                        _fmt(r.wall_ms)])
        n = len(rep.rows) or 1
        w.writerow([rep.size, rep.strategy, "ALL",
                    _fmt(sum(r.fragments_accessed for r in rep.rows) / n),
                    rep.total_scanned(), _fmt(rep.mean_parallel()), _fmt(rep.mean_sequential()),
                    _fmt(sum(r.wall_ms for r in rep.rows))])
    return buf.getvalue()


def _table(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def write_bench(result: BenchResult, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {
        "efficiency.csv": efficiency_csv(result.reports),
        "ksweep.csv": _table(["size", "k", "mean_parallel_cost"],
                             [(s, k, _fmt(c)) for s, k, c in result.ksweep]),
        "overhead.csv": _table(["strategy", "predicate_count", "derivation_ms"],
                               [(s, n, _fmt(ms)) for s, n, ms in result.overhead]),
        "fragcounts.csv": _table(["strategy", "fragment_count"], result.fragcounts),
    }
    paths = []
    for name, text in files.items():
        path = out_dir / name
        path.write_text(text)
        paths.append(path)
    return paths
