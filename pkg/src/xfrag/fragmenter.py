"""Materialize a fragmentation schema into dimension and fact fragments.

Dimensions are selected first (primary fragmentation), then facts follow
their referenced instances (derived fragmentation).  A fact matching several
fragments goes to the lowest-indexed one; facts matching none go to ELSE.
"""
from __future__ import annotations

import os
import xml.etree.ElementTree as ET
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .strategies import FragSchema
from .warehouse import (DimensionData, Fact, FactData, IntegrityError, LevelData,
                        Warehouse, WarehouseMeta, check_warehouse, dimension_to_xml,
                        facts_to_xml, read_dimension, read_facts, to_bytes, _parse)
from .workload import Predicate

MANIFEST_FILE = "manifest.xml"


class ConsistencyError(ValueError):
    """Schema and warehouse disagree (unknown dimension, attribute or type)."""


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("XFRAG_THREADS", "4")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class Membership:
    """own conjunction AND NOT(each earlier fragment's conjunction).

    ``own is None`` marks ELSE, whose ``excluded`` lists every regular
    fragment's conjunction.
    """
    own: tuple[Predicate, ...] | None
    excluded: tuple[tuple[Predicate, ...], ...] = ()

    def holds(self, lookup) -> bool:
        """``lookup(dimension_id, attribute) -> value`` for one fact."""
        def conj(preds):
            return all(p.evaluate(lookup(p.dimension_id, p.attribute)) for p in preds)

        if self.own is not None and not conj(self.own):
            return False
        return not any(conj(c) for c in self.excluded)


@dataclass(frozen=True)
class Fragment:
    fragment_id: str
    dimension_parts: dict[str, DimensionData]
    fact_part: FactData
    membership_condition: Membership
    fact_indices: np.ndarray = field(compare=False)
    is_else: bool = False

    def __len__(self):
        return len(self.fact_part.facts)


# --------------------------------------------------------------------------
# warehouse index

class WarehouseIndex:
    """Per-dimension positional arrays so predicates evaluate as masks."""

    def __init__(self, wh: Warehouse, fact_set_id: str | None = None):
        self.warehouse = wh
        self.facts = wh.fact_data(fact_set_id)
        self.fs_meta = wh.meta.fact_set(self.facts.fact_set_id)
        self.finest_ids: dict[str, list[str]] = {}
        self.refs: dict[str, np.ndarray] = {}
        self._lookup = {}
        self._masks: dict[tuple, np.ndarray] = {}
        for d in self.fs_meta.dimension_refs:
            dim = wh.dimension(d)
            ids = [inst.id for inst in dim.finest.instances]
            pos = {iid: i for i, iid in enumerate(ids)}
            self.finest_ids[d] = ids
            self.refs[d] = np.fromiter((pos[f.refs[d]] for f in self.facts.facts),
                                       dtype=np.int64, count=len(self.facts.facts))
            self._lookup[d] = dim.resolver()

    def __len__(self):
        return len(self.facts.facts)

    def check(self, preds) -> None:
        meta = self.warehouse.meta
        for p in preds:
            if p.dimension_id not in self.refs:
                raise ConsistencyError(f"predicate {p.id} uses unknown dimension {p.dimension_id!r}")
            if meta.dimension(p.dimension_id).attribute(p.attribute) is None:
                raise ConsistencyError(
                    f"predicate {p.id}: {p.dimension_id} has no attribute {p.attribute!r}")

    def instance_mask(self, p: Predicate) -> np.ndarray:
        """Truth of ``p`` for every finest-level instance of its dimension."""
        key = (p.key, p.negated)
        mask = self._masks.get(key)
        if mask is None:
            lookup = self._lookup[p.dimension_id]
            mask = np.array([p.evaluate(lookup(iid, p.attribute))
                             for iid in self.finest_ids[p.dimension_id]], dtype=bool)
            self._masks[key] = mask
        return mask

    def dimension_mask(self, dim: str, preds) -> np.ndarray:
        mask = np.ones(len(self.finest_ids[dim]), dtype=bool)
        for p in preds:
            mask &= self.instance_mask(p)
        return mask

    def fact_mask(self, preds) -> np.ndarray:
        mask = np.ones(len(self), dtype=bool)
        for p in preds:
            mask &= self.instance_mask(p)[self.refs[p.dimension_id]]
        return mask

    def value(self, fact_no: int, dim: str, attribute: str):
        return self._lookup[dim](self.facts.facts[fact_no].refs[dim], attribute)


def restrict_dimension(dim: DimensionData, keep_finest: set[str]) -> DimensionData:
    """Keep the given finest instances plus every ancestor they roll up to."""
    keep = [set(keep_finest)]
    for lv in dim.levels[:-1]:
        keep.append({inst.roll_up for inst in lv.instances
                     if inst.id in keep[-1] and inst.roll_up is not None})
    levels = []
    for i, lv in enumerate(dim.levels):
        below = keep[i - 1] if i > 0 else set()
        insts = tuple(
            replace(inst, drill_down=tuple(c for c in inst.drill_down if c in below))
            if inst.drill_down else inst
            for inst in lv.instances if inst.id in keep[i])
        levels.append(LevelData(lv.id, insts))
    return DimensionData(dim.dimension_id, tuple(levels))


def assign(schema: FragSchema, index: WarehouseIndex) -> np.ndarray:
    """Fragment position of every fact under priority semantics."""
    owner = np.full(len(index), len(schema.fragments) - 1, dtype=np.int64)
    free = np.ones(len(index), dtype=bool)
    for i, frag in enumerate(schema.regular):
        index.check(frag.conjunction)
        hit = free & index.fact_mask(frag.conjunction)
        owner[hit] = i
        free &= ~hit
    return owner


def materialize(schema: FragSchema, wh: Warehouse, fact_set_id: str | None = None,
                index: WarehouseIndex | None = None) -> list[Fragment]:
    index = index or WarehouseIndex(wh, fact_set_id)
    owner = assign(schema, index)
    facts = index.facts.facts
    fs_id = index.facts.fact_set_id
    dims = index.fs_meta.dimension_refs
    out = []
    earlier: list[tuple[Predicate, ...]] = []
    for i, frag in enumerate(schema.fragments):
        idx = np.flatnonzero(owner == i)
        part = FactData(fs_id, tuple(facts[j] for j in idx))
        parts = {}
        for d in dims:
            whole = wh.dimension(d)
            if frag.is_else:
                used = {facts[j].refs[d] for j in idx}
                parts[d] = restrict_dimension(whole, used)
            elif d in frag.predicates:
                mask = index.dimension_mask(d, frag.predicates[d])
                ids = index.finest_ids[d]
                parts[d] = restrict_dimension(whole, {ids[n] for n in np.flatnonzero(mask)})
            else:
                parts[d] = whole
        cond = Membership(None if frag.is_else else frag.conjunction, tuple(earlier))
        if not frag.is_else:
            earlier.append(frag.conjunction)
        out.append(Fragment(frag.id, parts, part, cond, idx, frag.is_else))
    return out


def naive_assignment(schema: FragSchema, wh: Warehouse, fact_set_id: str | None = None) -> list[int]:
    """Per-fact evaluation of each fragment's own condition, first match wins."""
    fd = wh.fact_data(fact_set_id)
    lookups = {d.dimension_id: d.resolver() for d in wh.dimensions}
    out = []
    for fact in fd.facts:
        def lookup(dim, attr, fact=fact):
            return lookups[dim](fact.refs[dim], attr)
        pos = len(schema.fragments) - 1
        for i, frag in enumerate(schema.regular):
            if all(p.evaluate(lookup(p.dimension_id, p.attribute)) for p in frag.conjunction):
                pos = i
                break
        out.append(pos)
    return out


# --------------------------------------------------------------------------
# files

def fragment_file_names(fragment_id: str, fact_set_id: str, dims) -> dict:
    names = {("facts", fact_set_id): f"facts_{fact_set_id}_{fragment_id}.xml"}
    for d in dims:
        names[("dimension", d)] = f"dimension_{d}_{fragment_id}.xml"
    return names


def write_fragments(fragments: list[Fragment], out_dir) -> Path:
    """Write every fragment's documents plus ``manifest.xml``; return the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = []
    manifest = ET.Element("Manifest")
    for frag in fragments:
        attrs = {"id": frag.fragment_id}
        if frag.is_else:
            attrs["else"] = "true"
        fe = ET.SubElement(manifest, "fragment", attrs)
        names = fragment_file_names(frag.fragment_id, frag.fact_part.fact_set_id,
                                    frag.dimension_parts)
        for (role, ref), name in names.items():
            if role == "facts":
                ET.SubElement(fe, "file", {"role": "facts", "fact-id": ref, "path": name})
                jobs.append((facts_to_xml, frag.fact_part, out_dir / name))
            else:
                ET.SubElement(fe, "file", {"role": "dimension", "dim-id": ref, "path": name})
                jobs.append((dimension_to_xml, frag.dimension_parts[ref], out_dir / name))

    def run(job):
        build, data, path = job
        path.write_bytes(to_bytes(build(data)))

    with ThreadPoolExecutor(thread_count()) as pool:
        list(pool.map(run, jobs))
    path = out_dir / MANIFEST_FILE
    path.write_bytes(to_bytes(manifest))
    return path


def load_fragments(manifest_path, meta: WarehouseMeta) -> list[tuple[str, bool, Warehouse]]:
    """Reload each fragment as a standalone warehouse: ``(id, is_else, warehouse)``."""
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    root = _parse(manifest_path)
    if root.tag != "Manifest":
        raise IntegrityError(f"{manifest_path}: expected <Manifest>, found <{root.tag}>")
    out = []
    for fe in root.findall("fragment"):
        dims, facts = [], []
        for file in fe.findall("file"):
            path = base / file.get("path")
            if file.get("role") == "facts":
                facts.append(read_facts(path, meta.fact_set(file.get("fact-id"))))
            else:
                dims.append(read_dimension(path, meta.dimension(file.get("dim-id"))))
        wh = Warehouse(meta, dims, facts)
        check_warehouse(wh)
        out.append((fe.get("id"), fe.get("else") == "true", wh))
    return out


def merged_facts(fragments) -> list[Fact]:
    return [f for frag in fragments for f in frag.fact_part.facts]


# --------------------------------------------------------------------------
# fragments script

_VARS = ("$y", "$z", "$t", "$u", "$v", "$w")


def _selection(dim: str, level: str, preds) -> str:
    where = "\n  and ".join(
        f'$x//attribute[@id="{p.attribute}"]/@value{p.effective_comparator}"{p.literal}"'
        for p in preds)
    return (f"element dimension{{ attribute dim-id{{{dim}}}, element Level{{\n"
            f"attribute id {{{level}}},\n"
            f'for $x in document("dimension_{dim}.xml")//Level\n'
            f"where {where}\n"
            f"return $x }}\n}}")


def _fact_join(fragment_id: str, dims) -> str:
    binds = ",\n    ".join(
        f'{v} in document("dimension_{d}_{fragment_id}.xml")//instance'
        for v, d in zip(_VARS, dims))
    conds = "\nand ".join(
        f'$x/dimension[@dim-id="{d}"]/@value-id={v}/@id' for v, d in zip(_VARS, dims))
    return (f"element FactDoc {{\n"
            f"for $x in //FactDoc/Fact,\n    {binds}\n"
            f"where {conds}\n"
            f"return $x\n}}")


def emit_fragment_script(schema: FragSchema, meta: WarehouseMeta) -> str:
    """XQuery-dialect text that would build every fragment (documentation only)."""
    blocks = []
    for frag in schema.fragments:
        if frag.is_else:
            others = ", ".join(f.id for f in schema.regular) or "none"
            blocks.append(
                f"(: fragment {frag.id} (ELSE)\n"
                f"   Holds every fact claimed by no other fragment ({others}), i.e. the\n"
                f"   negation of the disjunction of their conditions, plus the dimension\n"
                f"   instances those facts reference.  Not expressible as one selection\n"
                f"   path; materialize() builds it. :)")
            continue
        parts = [f"(: fragment {frag.id} :)"]
        for dim, preds in frag.predicates.items():
            parts.append(_selection(dim, meta.dimension(dim).levels[0].id, preds))
        parts.append(_fact_join(frag.id, list(frag.predicates)))
        blocks.append("\n".join(parts))
    return "\n\n".join(blocks) + "\n"
