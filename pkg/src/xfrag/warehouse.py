"""Star-schema XML warehouse: in-memory model, XML documents, synthetic generator.

A warehouse is stored as one ``dw-model.xml`` metadata document, one
``dimension_<d>.xml`` document per dimension and one ``facts_<f>.xml``
document per fact set.  Level 0 of every dimension is the finest level;
facts reference instances of that level and ``Roll-up`` links point from
level ``i`` to level ``i + 1``.
"""
from __future__ import annotations

import itertools
import random
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import NamedTuple, Union

Value = Union[int, Decimal, str]

ATTRIBUTE_TYPES = ("string", "integer", "decimal")
MODEL_FILE = "dw-model.xml"
CENT = Decimal("0.01")


class WarehouseError(Exception):
    """Base class for warehouse loading and validation failures."""


class WarehouseFormatError(WarehouseError):
    def __init__(self, message: str, path=None, line=None, column=None):
        self.path = path
        self.line = line
        self.column = column
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}:{column}"
            where += ": "
        super().__init__(where + message)


class IntegrityError(WarehouseError):
    """A reference (dimension ref, roll-up, drill-down, fact ref) does not resolve."""


def coerce_value(text: str, type_: str) -> Value:
    """Convert an XML attribute string to the Python value of ``type_``.

    Raises ``ValueError`` when ``text`` is not a valid literal of that type.
    """
    if type_ == "string":
        return text
    if type_ == "integer":
        return int(text.strip())
    if type_ == "decimal":
        try:
            value = Decimal(text.strip())
        except InvalidOperation:
            raise ValueError(f"invalid decimal literal {text!r}") from None
        if not value.is_finite():
            raise ValueError(f"invalid decimal literal {text!r}")
        return value
    raise ValueError(f"unknown attribute type {type_!r}")


def format_value(value: Value) -> str:
    return str(value)


# --------------------------------------------------------------------------
# metadata

@dataclass(frozen=True)
class AttributeDef:
    name: str
    type: str = "string"

    def __post_init__(self):
        if self.type not in ATTRIBUTE_TYPES:
            raise WarehouseError(f"attribute {self.name!r}: unknown type {self.type!r}")


@dataclass(frozen=True)
class LevelMeta:
    id: str
    attributes: tuple[AttributeDef, ...] = ()


@dataclass(frozen=True)
class DimensionMeta:
    id: str
    path: str
    levels: tuple[LevelMeta, ...]

    def attribute(self, name: str) -> tuple[int, AttributeDef] | None:
        """Return ``(level index, definition)`` for attribute ``name``."""
        for i, level in enumerate(self.levels):
            for attr in level.attributes:
                if attr.name == name:
                    return i, attr
        return None


@dataclass(frozen=True)
class MeasureDef:
    name: str
    type: str = "integer"


@dataclass(frozen=True)
class FactSetMeta:
    id: str
    path: str
    measures: tuple[MeasureDef, ...]
    dimension_refs: tuple[str, ...]


@dataclass(frozen=True)
class WarehouseMeta:
    dimensions: tuple[DimensionMeta, ...]
    fact_sets: tuple[FactSetMeta, ...]

    def __post_init__(self):
        _check_unique([d.id for d in self.dimensions], "dimension id")
        _check_unique([f.id for f in self.fact_sets], "fact-set id")
        for dim in self.dimensions:
            _check_unique([lv.id for lv in dim.levels], f"level id in {dim.id}")
            for lv in dim.levels:
                _check_unique([a.name for a in lv.attributes],
                              f"attribute name in {dim.id}/{lv.id}")
        known = {d.id for d in self.dimensions}
        for fs in self.fact_sets:
            for ref in fs.dimension_refs:
                if ref not in known:
                    raise IntegrityError(
                        f"fact set {fs.id!r} references unknown dimension {ref!r}")

    def dimension(self, dim_id: str) -> DimensionMeta:
        for d in self.dimensions:
            if d.id == dim_id:
                return d
        raise KeyError(dim_id)

    def fact_set(self, fact_id: str) -> FactSetMeta:
        for f in self.fact_sets:
            if f.id == fact_id:
                return f
        raise KeyError(fact_id)

    @property
    def dimension_ids(self) -> tuple[str, ...]:
        return tuple(d.id for d in self.dimensions)


def _check_unique(items, what):
    seen = set()
    for item in items:
        if item in seen:
            raise WarehouseError(f"duplicate {what}: {item!r}")
        seen.add(item)


# --------------------------------------------------------------------------
# data

@dataclass(frozen=True)
class Instance:
    id: str
    values: dict[str, Value] = field(default_factory=dict)
    roll_up: str | None = None
    drill_down: tuple[str, ...] = ()


@dataclass(frozen=True)
class LevelData:
    id: str
    instances: tuple[Instance, ...] = ()


@dataclass(frozen=True)
class DimensionData:
    dimension_id: str
    levels: tuple[LevelData, ...]

    @property
    def finest(self) -> LevelData:
        return self.levels[0]

    def index(self) -> dict[str, tuple[int, Instance]]:
        """Map instance id to ``(level index, instance)``."""
        out = {}
        for i, level in enumerate(self.levels):
            for inst in level.instances:
                out[inst.id] = (i, inst)
        return out

    def resolver(self):
        """Return ``lookup(instance_id, attribute) -> value``.

        Attributes declared on coarser levels are reached through the
        roll-up chain, so a finest-level instance "inherits" its ancestors'
        attribute values.  Missing values resolve to ``None``.
        """
        idx = self.index()

        def lookup(instance_id, attribute):
            current = idx.get(instance_id)
            while current is not None:
                inst = current[1]
                if attribute in inst.values:
                    return inst.values[attribute]
                if inst.roll_up is None:
                    return None
                current = idx.get(inst.roll_up)
            return None

        return lookup

    def instance_count(self) -> int:
        return sum(len(lv.instances) for lv in self.levels)


@dataclass(frozen=True)
class Fact:
    measures: dict[str, Value]
    refs: dict[str, str]

    def key(self) -> tuple:
        """Hashable identity used for multiset comparisons."""
        return (tuple(sorted(self.measures.items())), tuple(sorted(self.refs.items())))


@dataclass(frozen=True)
class FactData:
    fact_set_id: str
    facts: tuple[Fact, ...] = ()


class Warehouse(NamedTuple):
    meta: WarehouseMeta
    dimensions: list[DimensionData]
    facts: list[FactData]

    def dimension(self, dim_id: str) -> DimensionData:
        for d in self.dimensions:
            if d.dimension_id == dim_id:
                return d
        raise KeyError(dim_id)

    def fact_data(self, fact_id: str | None = None) -> FactData:
        if fact_id is None:
            return self.facts[0]
        for f in self.facts:
            if f.fact_set_id == fact_id:
                return f
        raise KeyError(fact_id)


# --------------------------------------------------------------------------
# validation

def check_dimension(meta: DimensionMeta, data: DimensionData) -> None:
    """Raise ``IntegrityError`` if the hierarchy links of ``data`` are broken."""
    if data.dimension_id != meta.id:
        raise IntegrityError(
            f"dimension document {data.dimension_id!r} does not match metadata {meta.id!r}")
    if [lv.id for lv in data.levels] != [lv.id for lv in meta.levels]:
        raise IntegrityError(
            f"dimension {meta.id!r}: levels {[lv.id for lv in data.levels]} "
            f"do not match metadata {[lv.id for lv in meta.levels]}")
    seen = set()
    for level in data.levels:
        for inst in level.instances:
            if inst.id in seen:
                raise IntegrityError(f"dimension {meta.id!r}: duplicate instance id {inst.id!r}")
            seen.add(inst.id)
    per_level = [{inst.id: inst for inst in lv.instances} for lv in data.levels]
    depth = len(data.levels)
    for i, level in enumerate(data.levels):
        for inst in level.instances:
            if inst.roll_up is not None:
                if i + 1 >= depth or inst.roll_up not in per_level[i + 1]:
                    raise IntegrityError(
                        f"dimension {meta.id!r}: instance {inst.id!r} rolls up to "
                        f"unknown instance {inst.roll_up!r}")
            for child in inst.drill_down:
                target = per_level[i - 1].get(child) if i > 0 else None
                if target is None or target.roll_up != inst.id:
                    raise IntegrityError(
                        f"dimension {meta.id!r}: instance {inst.id!r} drills down to "
                        f"{child!r}, which does not roll up to it")
            if inst.roll_up is not None:
                parent = per_level[i + 1][inst.roll_up]
                if inst.id not in parent.drill_down:
                    raise IntegrityError(
                        f"dimension {meta.id!r}: {inst.roll_up!r} is missing drill-down "
                        f"to {inst.id!r}")


def check_facts(fs_meta: FactSetMeta, data: FactData,
                dimensions: dict[str, DimensionData]) -> None:
    finest = {d: {inst.id for inst in dimensions[d].finest.instances}
              for d in fs_meta.dimension_refs}
    expected = set(fs_meta.dimension_refs)
    for n, fact in enumerate(data.facts):
        if set(fact.refs) != expected:
            raise IntegrityError(
                f"fact #{n} of {fs_meta.id!r} references dimensions {sorted(fact.refs)}, "
                f"expected {sorted(expected)}")
        for dim_id, inst_id in fact.refs.items():
            if inst_id not in finest[dim_id]:
                raise IntegrityError(
                    f"fact #{n} of {fs_meta.id!r} references unknown {dim_id} "
                    f"instance {inst_id!r}")


def check_warehouse(wh: Warehouse) -> None:
    dims = {d.dimension_id: d for d in wh.dimensions}
    for dm in wh.meta.dimensions:
        if dm.id not in dims:
            raise IntegrityError(f"missing data for dimension {dm.id!r}")
        check_dimension(dm, dims[dm.id])
    for fd in wh.facts:
        check_facts(wh.meta.fact_set(fd.fact_set_id), fd, dims)


# --------------------------------------------------------------------------
# XML

def _parse(path) -> ET.Element:
    try:
        return ET.parse(path).getroot()
    except ET.ParseError as exc:
        line, column = exc.position
        raise WarehouseFormatError(str(exc), path, line, column) from None


def _require(elem: ET.Element, attr: str, path) -> str:
    value = elem.get(attr)
    if value is None:
        raise WarehouseFormatError(f"<{elem.tag}> lacks attribute {attr!r}", path)
    return value


def _expect_root(root: ET.Element, tag: str, path) -> None:
    if root.tag != tag:
        raise WarehouseFormatError(f"expected root <{tag}>, found <{root.tag}>", path)


def read_model(path) -> WarehouseMeta:
    root = _parse(path)
    _expect_root(root, "DW-model", path)
    dims, facts = [], []
    for el in root:
        if el.tag == "dimension":
            levels = []
            for lv in el.findall("Level"):
                attrs = tuple(AttributeDef(_require(a, "name", path), a.get("type", "string"))
                              for a in lv.findall("attribute"))
                levels.append(LevelMeta(_require(lv, "id", path), attrs))
            dims.append(DimensionMeta(_require(el, "dim-id", path),
                                      _require(el, "path", path), tuple(levels)))
        elif el.tag == "FactDoc":
            measures = tuple(MeasureDef(_require(m, "name", path), m.get("type", "integer"))
                             for m in el.findall("measure"))
            refs = tuple(_require(d, "ref", path) for d in el.findall("dimension"))
            facts.append(FactSetMeta(_require(el, "id", path), _require(el, "path", path),
                                     measures, refs))
        else:
            raise WarehouseFormatError(f"unexpected element <{el.tag}> in DW-model", path)
    return WarehouseMeta(tuple(dims), tuple(facts))


def read_dimension(path, meta: DimensionMeta) -> DimensionData:
    root = _parse(path)
    _expect_root(root, "dimension", path)
    types = {a.name: a.type for lv in meta.levels for a in lv.attributes}
    levels = []
    for lv in root.findall("Level"):
        instances = []
        for inst in lv.findall("instance"):
            values = {}
            for a in inst.findall("attribute"):
                name = _require(a, "id", path)
                raw = _require(a, "value", path)
                try:
                    values[name] = coerce_value(raw, types.get(name, "string"))
                except ValueError as exc:
                    raise WarehouseFormatError(
                        f"instance {inst.get('id')!r}, attribute {name!r}: {exc}", path) from None
            drill = inst.get("Drill-Down")
            instances.append(Instance(_require(inst, "id", path), values,
                                      inst.get("Roll-up"),
                                      tuple(drill.split()) if drill else ()))
        levels.append(LevelData(_require(lv, "id", path), tuple(instances)))
    return DimensionData(_require(root, "dim-id", path), tuple(levels))


def read_facts(path, meta: FactSetMeta) -> FactData:
    root = _parse(path)
    _expect_root(root, "FactDoc", path)
    types = {m.name: m.type for m in meta.measures}
    facts = []
    for el in root.findall("Fact"):
        measures = {}
        for m in el.findall("measure"):
            name = _require(m, "id", path)
            try:
                measures[name] = coerce_value(_require(m, "value", path), types.get(name, "decimal"))
            except ValueError as exc:
                raise WarehouseFormatError(f"measure {name!r}: {exc}", path) from None
        refs = {}
        for d in el.findall("dimension"):
            dim_id = _require(d, "dim-id", path)
            if dim_id in refs:
                raise IntegrityError(f"{path}: fact references dimension {dim_id!r} twice")
            refs[dim_id] = _require(d, "value-id", path)
        facts.append(Fact(measures, refs))
    return FactData(root.get("id", meta.id), tuple(facts))


def load_warehouse(model_path) -> Warehouse:
    """Load ``dw-model.xml`` and every document it references.

    Relative document paths are resolved against the model's directory.
    Raises ``WarehouseFormatError`` for malformed XML (with line and column)
    and ``IntegrityError`` for dangling references.
    """
    model_path = Path(model_path)
    base = model_path.parent
    meta = read_model(model_path)
    dims = [read_dimension(base / d.path, d) for d in meta.dimensions]
    facts = [read_facts(base / f.path, f) for f in meta.fact_sets]
    wh = Warehouse(meta, dims, facts)
    check_warehouse(wh)
    return wh


def model_to_xml(meta: WarehouseMeta) -> ET.Element:
    root = ET.Element("DW-model")
    for d in meta.dimensions:
        de = ET.SubElement(root, "dimension", {"dim-id": d.id, "path": d.path})
        for lv in d.levels:
            le = ET.SubElement(de, "Level", {"id": lv.id})
            for a in lv.attributes:
                ET.SubElement(le, "attribute", {"name": a.name, "type": a.type})
    for f in meta.fact_sets:
        fe = ET.SubElement(root, "FactDoc", {"id": f.id, "path": f.path})
        for m in f.measures:
            ET.SubElement(fe, "measure", {"name": m.name, "type": m.type})
        for ref in f.dimension_refs:
            ET.SubElement(fe, "dimension", {"ref": ref})
    return root


def dimension_to_xml(data: DimensionData) -> ET.Element:
    root = ET.Element("dimension", {"dim-id": data.dimension_id})
    for lv in data.levels:
        le = ET.SubElement(root, "Level", {"id": lv.id})
        for inst in lv.instances:
            attrs = {"id": inst.id}
            if inst.roll_up is not None:
                attrs["Roll-up"] = inst.roll_up
            if inst.drill_down:
                attrs["Drill-Down"] = " ".join(inst.drill_down)
            ie = ET.SubElement(le, "instance", attrs)
            for name, value in inst.values.items():
                ET.SubElement(ie, "attribute", {"id": name, "value": format_value(value)})
    return root


def facts_to_xml(data: FactData) -> ET.Element:
    root = ET.Element("FactDoc", {"id": data.fact_set_id})
    for fact in data.facts:
        fe = ET.SubElement(root, "Fact")
        for name, value in fact.measures.items():
            ET.SubElement(fe, "measure", {"id": name, "value": format_value(value)})
        for dim_id, inst_id in fact.refs.items():
            ET.SubElement(fe, "dimension", {"dim-id": dim_id, "value-id": inst_id})
    return root


def to_bytes(root: ET.Element) -> bytes:
    ET.indent(root, space="  ")
    return ET.tostring(root, encoding="utf-8", xml_declaration=True) + b"\n"


def write_xml(root: ET.Element, path) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(root))


def save_warehouse(meta: WarehouseMeta, dims, facts, out_dir) -> list[Path]:
    """Write the model, dimension and fact documents; return the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    by_dim = {d.dimension_id: d for d in dims}
    by_fact = {f.fact_set_id: f for f in facts}
    written = [out_dir / MODEL_FILE]
    write_xml(model_to_xml(meta), written[0])
    for d in meta.dimensions:
        path = out_dir / d.path
        write_xml(dimension_to_xml(by_dim[d.id]), path)
        written.append(path)
    for f in meta.fact_sets:
        path = out_dir / f.path
        write_xml(facts_to_xml(by_fact[f.id]), path)
        written.append(path)
    return written


# --------------------------------------------------------------------------
# generator

WEEKDAYS = ("Mon.", "Tue.", "Wed.", "Thu.", "Fri.", "Sat.", "Sun.")
SEGMENTS = ("AUTOMOBILE", "BUILDING", "FURNITURE", "HOUSEHOLD", "MACHINERY")
REGIONS = ("AFRICA", "AMERICA", "ASIA", "EUROPE", "MIDDLE EAST")
PART_TYPES = tuple("".join(t) for t in itertools.product("PSEML", "BRAP", "CTS"))


@dataclass(frozen=True)
class AttrTemplate:
    name: str
    type: str
    cardinality: int
    vocabulary: tuple[str, ...] = ()
    base: int = 0


@dataclass(frozen=True)
class DimTemplate:
    id: str
    finest_level: str
    parent_level: str
    parent_count: int
    attributes: tuple[AttrTemplate, ...]
    parent_attributes: tuple[AttrTemplate, ...]


# XWeB-like dimensions; default instance counts live in XWEB_COUNTS.
XWEB_DIMENSIONS = (
    DimTemplate("Customer", "Customer", "Nation", 25,
                (AttrTemplate("c_nation_key", "integer", 25),
                 AttrTemplate("c_mktsegment", "string", 5, SEGMENTS),
                 AttrTemplate("c_acctbal", "decimal", 1_000_000)),
                (AttrTemplate("n_region", "string", 5, REGIONS),)),
    DimTemplate("Supplier", "Supplier", "Region", 5,
                (AttrTemplate("s_nation_key", "integer", 25),
                 AttrTemplate("s_acctbal", "decimal", 1_000_000)),
                (AttrTemplate("r_name", "string", 5, REGIONS),)),
    DimTemplate("Date", "Day", "Month", 84,
                (AttrTemplate("d_date_name", "string", 7, WEEKDAYS),
                 AttrTemplate("d_month", "integer", 12, base=1),
                 AttrTemplate("d_year", "integer", 7, base=1992)),
                (AttrTemplate("m_quarter", "integer", 4, base=1),)),
    DimTemplate("Part", "Part", "Brand", 25,
                (AttrTemplate("p_type", "string", 25, PART_TYPES),
                 AttrTemplate("p_size", "integer", 50, base=1),
                 AttrTemplate("p_retailprice", "decimal", 200_000)),
                (AttrTemplate("p_mfgr", "string", 5, tuple(f"Manufacturer#{i}" for i in range(1, 6))),)),
)
XWEB_COUNTS = {"Customer": 1000, "Supplier": 1000, "Date": 500, "Part": 1000}
XWEB_MEASURES = ("amount", "quantity")


@dataclass(frozen=True)
class GeneratorSpec:
    seed: int = 42
    fact_count: int = 7000
    instance_counts: dict[str, int] = field(default_factory=lambda: dict(XWEB_COUNTS))
    cardinalities: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.fact_count < 1:
            raise ValueError(f"fact_count must be >= 1, got {self.fact_count}")
        for name, n in {**self.instance_counts, **self.cardinalities}.items():
            if n < 1:
                raise ValueError(f"{name}: count/cardinality must be >= 1, got {n}")
        unknown = set(self.instance_counts) - {t.id for t in XWEB_DIMENSIONS}
        if unknown:
            raise ValueError(f"unknown dimensions {sorted(unknown)}")


def _draw(rng: random.Random, tmpl: AttrTemplate, card: int) -> Value:
    j = rng.randrange(card)
    if tmpl.type == "integer":
        return tmpl.base + j
    if tmpl.type == "decimal":
        return Decimal(j).scaleb(-2).quantize(CENT)
    if j < len(tmpl.vocabulary):
        return tmpl.vocabulary[j]
    return f"{tmpl.name}_{j}"


def generate_warehouse(spec: GeneratorSpec) -> Warehouse:
    """Build a deterministic XWeB-style warehouse (one sales fact set)."""
    rng = random.Random(spec.seed)
    dim_metas, dim_datas, finest_ids = [], [], {}
    for tmpl in XWEB_DIMENSIONS:
        count = spec.instance_counts.get(tmpl.id, XWEB_COUNTS[tmpl.id])
        n_parent = max(1, min(tmpl.parent_count, count))
        card = lambda a: spec.cardinalities.get(a.name, a.cardinality)  # noqa: E731
        prefix = tmpl.finest_level.lower()
        pprefix = tmpl.parent_level.lower()
        parents = [f"{pprefix}{j + 1}" for j in range(n_parent)]
        roll = [parents[rng.randrange(n_parent)] for _ in range(count)]
        children = {p: [] for p in parents}
        fine = []
        for i in range(count):
            iid = f"{prefix}{i + 1}"
            children[roll[i]].append(iid)
            values = {a.name: _draw(rng, a, card(a)) for a in tmpl.attributes}
            fine.append(Instance(iid, values, roll[i], ()))
        coarse = [Instance(p, {a.name: _draw(rng, a, card(a)) for a in tmpl.parent_attributes},
                           None, tuple(children[p]))
                  for p in parents]
        meta = DimensionMeta(
            tmpl.id, f"dimension_{tmpl.id}.xml",
            (LevelMeta(tmpl.finest_level, tuple(AttributeDef(a.name, a.type) for a in tmpl.attributes)),
             LevelMeta(tmpl.parent_level,
                       tuple(AttributeDef(a.name, a.type) for a in tmpl.parent_attributes))))
        dim_metas.append(meta)
        dim_datas.append(DimensionData(tmpl.id, (LevelData(tmpl.finest_level, tuple(fine)),
                                                 LevelData(tmpl.parent_level, tuple(coarse)))))
        finest_ids[tmpl.id] = [inst.id for inst in fine]
    fs_meta = FactSetMeta("sales", "facts_sales.xml",
                          tuple(MeasureDef(m, "integer") for m in XWEB_MEASURES),
                          tuple(t.id for t in XWEB_DIMENSIONS))
    facts = []
    for _ in range(spec.fact_count):
        measures = {m: rng.randint(1, 100) for m in XWEB_MEASURES}
        refs = {d: ids[rng.randrange(len(ids))] for d, ids in finest_ids.items()}
        facts.append(Fact(measures, refs))
    meta = WarehouseMeta(tuple(dim_metas), (fs_meta,))
    return Warehouse(meta, dim_datas, [FactData("sales", tuple(facts))])


def warehouse_bytes(wh: Warehouse) -> dict[str, bytes]:
    """Serialized documents keyed by file name, without touching the disk."""
    out = {MODEL_FILE: to_bytes(model_to_xml(wh.meta))}
    for dm, dd in zip(wh.meta.dimensions, sorted(
            wh.dimensions, key=lambda d: wh.meta.dimension_ids.index(d.dimension_id))):
        out[dm.path] = to_bytes(dimension_to_xml(dd))
    for fm in wh.meta.fact_sets:
        out[fm.path] = to_bytes(facts_to_xml(wh.fact_data(fm.id)))
    return out
