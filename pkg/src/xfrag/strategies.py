"""Fragmentation schemas: k-means (KM), predicate construction (PC), affinity (AB).

Every schema is an ordered list of fragment definitions, each a conjunction
of (possibly negated) workload predicates grouped by dimension, followed by
one ELSE fragment that receives whatever no other fragment claims.
"""
from __future__ import annotations

import itertools
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field

import numpy as np

from .clustering import RESTARTS, kmeans_matrix, qp_rows
from .satisfiability import satisfiable
from .warehouse import to_bytes
from .workload import Predicate, QPMatrix, Workload, predicate_index

STRATEGIES = ("KM", "PC", "AB")
PC_PREDICATE_LIMIT = 20
PC_FRAGMENT_LIMIT = 50_000


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class FragmentDef:
    id: str
    predicates: dict[str, tuple[Predicate, ...]] = field(default_factory=dict)
    is_else: bool = False

    @property
    def conjunction(self) -> tuple[Predicate, ...]:
        return tuple(p for preds in self.predicates.values() for p in preds)

    @property
    def dimensions(self) -> tuple[str, ...]:
        return tuple(self.predicates)


@dataclass(frozen=True)
class FragSchema:
    strategy: str
    fragments: tuple[FragmentDef, ...]
    else_empty: bool = False
    # per-dimension minterm counts (PC only), kept for overhead reporting
    minterm_counts: dict[str, int] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        ids = [f.id for f in self.fragments]
        if len(set(ids)) != len(ids):
            raise SchemaError(f"duplicate fragment ids in {ids}")
        elses = [f for f in self.fragments if f.is_else]
        if len(elses) != 1 or not self.fragments[-1].is_else:
            raise SchemaError("a schema needs exactly one ELSE fragment, in last position")
        if self.fragments[-1].predicates:
            raise SchemaError("the ELSE fragment carries no predicates")

    @property
    def regular(self) -> tuple[FragmentDef, ...]:
        return self.fragments[:-1]

    @property
    def else_fragment(self) -> FragmentDef:
        return self.fragments[-1]

    def __len__(self):
        return len(self.fragments)

    def predicate_ids(self) -> set[str]:
        return {p.id for f in self.fragments for p in f.conjunction}


def _group_by_dimension(preds) -> dict[str, tuple[Predicate, ...]]:
    preds = sorted(preds, key=lambda p: predicate_index(p.id))
    out: dict[str, list[Predicate]] = {}
    for p in preds:
        out.setdefault(p.dimension_id, []).append(p)
    return {d: tuple(ps) for d, ps in out.items()}


def _finish(strategy, groups, **kw) -> FragSchema:
    defs = [FragmentDef(f"f{i + 1}", g) for i, g in enumerate(groups)]
    defs.append(FragmentDef(f"f{len(defs) + 1}", {}, is_else=True))
    return FragSchema(strategy, tuple(defs), **kw)


# --------------------------------------------------------------------------
# KM

def schema_from_clusters(clusters, predicates) -> FragSchema:
    table = {p.id: p for p in predicates}
    return _finish("KM", [_group_by_dimension(table[pid] for pid in c) for c in clusters])


def km_schema(qp: QPMatrix, predicates, k: int, seed: int = 0,
              restarts: int = RESTARTS) -> FragSchema:
    """One fragment per k-means cluster of predicate columns, plus ELSE."""
    clustering = kmeans_matrix(*qp_rows(qp), k, seed=seed, restarts=restarts)
    return schema_from_clusters(clustering.clusters, predicates)


# --------------------------------------------------------------------------
# PC

def minterms(preds) -> list[tuple[Predicate, ...]]:
    """Satisfiable sign assignments over ``preds`` (all-positive first)."""
    preds = sorted(preds, key=lambda p: predicate_index(p.id))
    out = []
    for signs in itertools.product((False, True), repeat=len(preds)):
        term = tuple(p.negate() if neg else p for p, neg in zip(preds, signs))
        if satisfiable(term):
            out.append(term)
    return out


def pc_schema(workload: Workload, predicates=None) -> FragSchema:
    """Minterm fragmentation derived across every predicate-bearing dimension.

    Each dimension is split by the satisfiable minterms of its own
    predicates; fact fragments are the cross product of those dimension
    fragments.  Minterms are complete, so the ELSE slot stays empty.
    """
    predicates = list(workload.predicates if predicates is None else predicates)
    if len(predicates) > PC_PREDICATE_LIMIT:
        raise SchemaError(f"predicate construction is exponential; refusing "
                          f"{len(predicates)} > {PC_PREDICATE_LIMIT} predicates")
    by_dim = _group_by_dimension(predicates)
    per_dim = {d: minterms(ps) for d, ps in by_dim.items()}
    total = 1
    for terms in per_dim.values():
        total *= len(terms)
    if total > PC_FRAGMENT_LIMIT:
        raise SchemaError(f"predicate construction would emit {total} fragments "
                          f"(limit {PC_FRAGMENT_LIMIT})")
    groups = []
    if per_dim:
        for combo in itertools.product(*per_dim.values()):
            groups.append({d: term for d, term in zip(per_dim, combo)})
    return _finish("PC", groups, else_empty=True,
                   minterm_counts={d: len(t) for d, t in per_dim.items()})


# --------------------------------------------------------------------------
# AB

@dataclass(frozen=True)
class AffinityMatrix:
    predicates: tuple[str, ...]
    values: np.ndarray

    def __getitem__(self, pair) -> int:
        p, q = pair
        return int(self.values[self.predicates.index(p), self.predicates.index(q)])


def affinity_matrix(workload: Workload, predicates=None) -> AffinityMatrix:
    """aff[p][q] = summed frequency of the queries using both p and q."""
    predicates = workload.predicates if predicates is None else predicates
    pids = tuple(sorted((p.id for p in predicates), key=predicate_index))
    col = {pid: j for j, pid in enumerate(pids)}
    values = np.zeros((len(pids), len(pids)), dtype=np.int64)
    for q in workload.queries:
        used = [col[pid] for pid in q.predicate_ids if pid in col]
        for a in used:
            for b in used:
                values[a, b] += q.frequency
    return AffinityMatrix(pids, values)


def affinity_groups(aff: AffinityMatrix) -> list[list[str]]:
    """Greedy cycle growth over the affinity graph.

    Seed a group with the heaviest edge between two unassigned predicates,
    then keep absorbing the unassigned predicate with the heaviest edge into
    the group as long as that edge is at least the group's weakest edge.
    Edge ties go to the lexicographically smallest index pair; leftovers
    become singletons.
    """
    n = len(aff.predicates)
    A = aff.values
    assigned = [False] * n
    groups = []
    edges = sorted(((int(A[i, j]), i, j) for i in range(n) for j in range(i + 1, n) if A[i, j] > 0),
                   key=lambda e: (-e[0], e[1], e[2]))
    for w, i, j in edges:
        if assigned[i] or assigned[j]:
            continue
        group, weakest = [i, j], w
        assigned[i] = assigned[j] = True
        while True:
            best = None
            for v in range(n):
                if assigned[v]:
                    continue
                wv = max(int(A[u, v]) for u in group)
                if wv > 0 and (best is None or wv > best[0]):
                    best = (wv, v)
            if best is None or best[0] < weakest:
                break
            weakest = min(weakest, best[0])
            group.append(best[1])
            assigned[best[1]] = True
        groups.append(sorted(group))
    groups.extend([i] for i in range(n) if not assigned[i])
    groups.sort(key=lambda g: g[0])
    return [[aff.predicates[i] for i in g] for g in groups]


def ab_schema(workload: Workload, predicates=None) -> FragSchema:
    predicates = list(workload.predicates if predicates is None else predicates)
    table = {p.id: p for p in predicates}
    groups = affinity_groups(affinity_matrix(workload, predicates))
    return _finish("AB", [_group_by_dimension(table[pid] for pid in g) for g in groups])


# --------------------------------------------------------------------------
# frag-schema.xml

def schema_to_xml(schema: FragSchema) -> ET.Element:
    root = ET.Element("Schema")
    for frag in schema.fragments:
        attrs = {"id": frag.id}
        if frag.is_else:
            attrs["else"] = "true"
            if schema.else_empty:
                attrs["empty"] = "true"
        fe = ET.SubElement(root, "fragment", attrs)
        for dim, preds in frag.predicates.items():
            de = ET.SubElement(fe, "dimension", {"name": dim})
            for p in preds:
                pattrs = {"name": p.id}
                if p.negated:
                    pattrs["negated"] = "true"
                ET.SubElement(de, "predicate", pattrs)
    return root


def schema_to_string(schema: FragSchema) -> str:
    return to_bytes(schema_to_xml(schema)).decode("utf-8")


def schema_from_xml(root, predicates, strategy: str = "KM") -> FragSchema:
    """Rebuild a schema from ``<Schema>``; predicate names resolve via ``predicates``."""
    if isinstance(root, (str, bytes)):
        root = ET.fromstring(root)
    if root.tag != "Schema":
        raise SchemaError(f"expected <Schema>, found <{root.tag}>")
    table = {p.id: p for p in predicates}
    frags, else_empty = [], False
    for fe in root.findall("fragment"):
        groups = {}
        for de in fe.findall("dimension"):
            dim = de.get("name")
            preds = []
            for pe in de.findall("predicate"):
                name = pe.get("name")
                if name not in table:
                    raise SchemaError(f"fragment {fe.get('id')}: unknown predicate {name!r}")
                p = table[name]
                if p.dimension_id != dim:
                    raise SchemaError(f"predicate {name} belongs to {p.dimension_id}, not {dim}")
                preds.append(p.negate() if pe.get("negated") == "true" else p)
            groups[dim] = tuple(preds)
        is_else = fe.get("else") == "true"
        else_empty = else_empty or (is_else and fe.get("empty") == "true")
        frags.append(FragmentDef(fe.get("id"), groups, is_else))
    return FragSchema(root.get("strategy", strategy), tuple(frags), else_empty)


def derive_schema(strategy: str, workload: Workload, k: int | None = None,
                  seed: int = 0) -> FragSchema:
    from .workload import build_qp_matrix

    strategy = strategy.upper()
    if strategy == "KM":
        if k is None:
            raise SchemaError("KM needs k")
        return km_schema(build_qp_matrix(workload), workload.predicates, k, seed)
    if strategy == "PC":
        return pc_schema(workload)
    if strategy == "AB":
        return ab_schema(workload)
    raise SchemaError(f"unknown strategy {strategy!r}")
