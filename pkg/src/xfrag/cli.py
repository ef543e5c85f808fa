"""Command-line front end: generate, fragment, bench, report.

Exit codes: 0 ok, 1 verification failed, 2 usage, 3 bad parameter,
4 parse error, 5 bind error, 6 I/O error, 7 integrity error.
"""
from __future__ import annotations

import argparse
import csv
import math
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .engine import (STRATEGY_LABELS, BenchConfig, CostReport, bench, run_workload,
                     whole_fragment, write_bench)
from .fragmenter import (ConsistencyError, emit_fragment_script, load_fragments, materialize,
                         merged_facts, naive_assignment, write_fragments)
from .strategies import FragmentDef, FragSchema, derive_schema, schema_to_xml
from .warehouse import (MODEL_FILE, GeneratorSpec, IntegrityError, WarehouseFormatError,
                        generate_warehouse, load_warehouse, save_warehouse, write_xml)
from .workload import BindError, WorkloadSyntaxError, load_workload

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_PARAM, EXIT_PARSE, EXIT_BIND, EXIT_IO, EXIT_INTEGRITY = range(8)


class VerificationError(Exception):
    pass


@dataclass
class RunConfig:
    subcommand: str
    out: Path = Path(".")
    warehouse: Path | None = None
    workload: Path | None = None
    strategy: str = "km"
    k: int | None = None
    seed: int = 42
    facts: int = 7000
    sizes: tuple[int, ...] = ()
    strategies: tuple[str, ...] = ()
    ksweep: tuple[int, ...] = ()
    ksweep_sizes: tuple[int, ...] = ()
    verify: bool = False
    inputs: list[Path] = field(default_factory=list)

    def __post_init__(self):
        if self.subcommand == "fragment":
            if self.strategy == "km" and self.k is None:
                raise ValueError("--strategy km needs -k")
            if self.strategy != "km" and self.k is not None:
                raise ValueError("-k only applies to --strategy km")
            if self.k is not None and self.k < 1:
                raise ValueError(f"k must be positive, got {self.k}")
        if self.subcommand == "bench":
            if not self.sizes:
                raise ValueError("--sizes must not be empty")
            if self.k is not None and self.k < 1:
                raise ValueError(f"k must be positive, got {self.k}")


def parse_range(text: str) -> tuple[int, ...]:
    """``4000,5000`` or ``1000..7000`` (step = largest power of ten not above the span)
    or ``a..b:step``."""
    out = []
    for part in filter(None, (p.strip() for p in text.split(","))):
        if ".." in part:
            span, _, step = part.partition(":")
            a, b = (int(x) for x in span.split(".."))
            if b < a:
                raise ValueError(f"empty range {part!r}")
            s = int(step) if step else (10 ** int(math.log10(b - a)) if b > a else 1)
            if s < 1:
                raise ValueError(f"bad step in {part!r}")
            out.extend(range(a, b + 1, s))
        else:
            out.append(int(part))
    return tuple(out)


def _resolve(path: Path | None, base: Path) -> Path | None:
    if path is None:
        return None
    return path if path.is_absolute() else base / path


def _model_path(path: Path) -> Path:
    return path / MODEL_FILE if path.is_dir() else path


def _shipped(name: str) -> Path:
    return Path(str(resources.files("xfrag") / "data" / name))


def _workload(cfg: RunConfig, meta):
    path = cfg.workload or _shipped("benchmark_workload.xq")
    return load_workload(path, meta)


def _say(msg: str) -> None:
    print(msg, flush=True)


# --------------------------------------------------------------------------
# subcommands

def cmd_generate(cfg: RunConfig) -> int:
    wh = generate_warehouse(GeneratorSpec(seed=cfg.seed, fact_count=cfg.facts))
    for path in save_warehouse(wh.meta, wh.dimensions, wh.facts, cfg.out):
        _say(str(path))
    return EXIT_OK


def _verify_fragments(schema, wh, fragments, manifest, wl) -> None:
    facts = wh.fact_data().facts
    owner = np.empty(len(facts), dtype=np.int64)
    owner.fill(-1)
    for pos, frag in enumerate(fragments):
        if (owner[frag.fact_indices] != -1).any():
            raise VerificationError(f"fragment {frag.fragment_id} overlaps an earlier fragment")
        owner[frag.fact_indices] = pos
    if (owner == -1).any():
        raise VerificationError(f"{int((owner == -1).sum())} facts are in no fragment")
    if list(owner) != naive_assignment(schema, wh):
        raise VerificationError("fragment assignment differs from per-fact evaluation")
    reloaded = load_fragments(manifest, wh.meta)
    merged = sorted(f.key() for _, _, part in reloaded for f in part.fact_data().facts)
    if merged != sorted(f.key() for f in facts):
        raise VerificationError("reloaded fragments do not reconstruct the fact set")
    if sorted(f.key() for f in merged_facts(fragments)) != merged:
        raise VerificationError("written fragments differ from materialized ones")
    nf = run_workload(wl, [whole_fragment(wh)], None, CostReport("NF", len(facts), 0))
    fr = run_workload(wl, fragments, schema, CostReport(schema.strategy, len(facts), 0))
    for qid, expected in nf.items():
        if not np.array_equal(expected, fr[qid]):
            raise VerificationError(f"query {qid}: fragmented result differs from NF")


def cmd_fragment(cfg: RunConfig) -> int:
    if cfg.warehouse is None:
        raise ValueError("--warehouse is required")
    wh = load_warehouse(_model_path(cfg.warehouse))
    wl = _workload(cfg, wh.meta)
    if cfg.strategy == "none":
        schema = FragSchema("NF", (FragmentDef("f1", {}, is_else=True),))
    else:
        schema = derive_schema(cfg.strategy, wl, k=cfg.k, seed=cfg.seed)
    fragments = materialize(schema, wh)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_xml(schema_to_xml(schema), out / "frag-schema.xml")
    manifest = write_fragments(fragments, out / "fragments")
    (out / "fragments.xq").write_text(emit_fragment_script(schema, wh.meta), encoding="utf-8")
    with open(out / "fragcounts.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["strategy", "fragment_count"])
        w.writerow([schema.strategy, len(schema)])
    sizes = [f"{f.fragment_id}={len(f)}" for f in fragments]
    if len(sizes) > 12:
        sizes = sizes[:10] + ["...", sizes[-1]]
    nonempty = sum(1 for f in fragments if len(f))
    _say(f"{schema.strategy}: {len(schema)} fragments, {nonempty} non-empty ({', '.join(sizes)})")
    _say(f"schema   {out / 'frag-schema.xml'}")
    _say(f"manifest {manifest}")
    _say(f"script   {out / 'fragments.xq'}")
    if cfg.verify:
        _verify_fragments(schema, wh, fragments, manifest, wl)
        _say("verify: complete, disjoint, oracle-equal, results equal NF")
    return EXIT_OK


def _verify_bench(result) -> None:
    by = {(r.size, r.strategy): r for r in result.reports}
    for (size, strategy), rep in by.items():
        nf = by.get((size, "NF"))
        if nf is None or strategy == "NF":
            continue
        for a, b in zip(nf.rows, rep.rows):
            if a.result_size != b.result_size:
                raise VerificationError(
                    f"{strategy} at {size}: query {a.query_id} returned {b.result_size} "
                    f"facts, NF {a.result_size}")
        for r in rep.rows:
            if r.parallel_cost > r.sequential_cost:
                raise VerificationError(f"{strategy} at {size}: parallel > sequential cost")


def cmd_bench(cfg: RunConfig) -> int:
    meta = generate_warehouse(GeneratorSpec(seed=cfg.seed, fact_count=1)).meta
    wl = _workload(cfg, meta)
    config = BenchConfig(
        wl,
        sizes=cfg.sizes if cfg.strategies else (),
        strategies=cfg.strategies,
        k=cfg.k or 8,
        ksweep=cfg.ksweep,
        ksweep_sizes=(cfg.ksweep_sizes or cfg.sizes) if cfg.ksweep else (),
        seed=cfg.seed)
    result = bench(config)
    for path in write_bench(result, cfg.out):
        _say(str(path))
    if cfg.verify:
        _verify_bench(result)
        _say("verify: result sizes equal NF, parallel <= sequential")
    return EXIT_OK


def format_table(path: Path) -> str:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return f"{path}: empty\n"
    widths = [max(len(r[i]) for r in rows if i < len(r)) for i in range(len(rows[0]))]
    lines = [f"== {path.name}"]
    for r in rows:
        lines.append("  ".join(c.rjust(w) if c.replace(".", "", 1).isdigit() else c.ljust(w)
                               for c, w in zip(r, widths)).rstrip())
    return "\n".join(lines) + "\n"


def cmd_report(cfg: RunConfig) -> int:
    paths = []
    for p in cfg.inputs or [cfg.out]:
        paths.extend(sorted(p.glob("*.csv")) if p.is_dir() else [p])
    if not paths:
        raise FileNotFoundError(f"no CSV files under {cfg.inputs or cfg.out}")
    for p in paths:
        _say(format_table(p))
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xfrag", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p):
        p.add_argument("-o", "--out", type=Path, default=Path("."),
                       help="output directory (default: current directory)")
        p.add_argument("--seed", type=int, default=42)

    g = sub.add_parser("generate", help="write a synthetic XWeB-style warehouse")
    common(g)
    g.add_argument("--facts", type=int, default=7000)

    f = sub.add_parser("fragment", help="derive a schema and materialize fragments")
    common(f)
    f.add_argument("--warehouse", type=Path, help="warehouse directory or dw-model.xml")
    f.add_argument("--workload", type=Path, help="workload file (default: shipped benchmark)")
    f.add_argument("--strategy", choices=("km", "pc", "ab", "none"), default="km")
    f.add_argument("-k", "--k", type=int)
    f.add_argument("--verify", action="store_true", help="run the oracle checks")

    b = sub.add_parser("bench", help="efficiency, k-sweep, overhead and fragment-count CSVs")
    common(b)
    b.add_argument("--workload", type=Path)
    b.add_argument("--sizes", default="1000..7000")
    b.add_argument("--strategies", default="nf,pc,ab,km")
    b.add_argument("-k", "--k", type=int, default=8)
    b.add_argument("--ksweep", default="", help="k range, e.g. 1..10 (k=1 is NF)")
    b.add_argument("--ksweep-sizes", default="", help="sizes for the k sweep (default: --sizes)")
    b.add_argument("--verify", action="store_true")

    r = sub.add_parser("report", help="pretty-print CSV reports")
    common(r)
    r.add_argument("inputs", nargs="*", type=Path)
    return parser


def to_config(ns: argparse.Namespace) -> RunConfig:
    out = ns.out
    kw = dict(subcommand=ns.subcommand, out=out, seed=ns.seed)
    if ns.subcommand == "generate":
        kw.update(facts=ns.facts)
    elif ns.subcommand == "fragment":
        kw.update(warehouse=_resolve(ns.warehouse, Path.cwd()),
                  workload=ns.workload, strategy=ns.strategy, k=ns.k, verify=ns.verify)
    elif ns.subcommand == "bench":
        strategies = tuple(s.strip().upper() for s in ns.strategies.split(",") if s.strip())
        bad = [s for s in strategies if s not in STRATEGY_LABELS]
        if bad:
            raise ValueError(f"unknown strategies {bad}; choose from nf,pc,ab,km")
        kw.update(workload=ns.workload, sizes=parse_range(ns.sizes), strategies=strategies,
                  k=ns.k, ksweep=parse_range(ns.ksweep), ksweep_sizes=parse_range(ns.ksweep_sizes),
                  verify=ns.verify)
    else:
        kw.update(inputs=[_resolve(p, out) if not p.exists() else p for p in ns.inputs])
    return RunConfig(**kw)


COMMANDS = {"generate": cmd_generate, "fragment": cmd_fragment,
            "bench": cmd_bench, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        cfg = to_config(ns)
        return COMMANDS[cfg.subcommand](cfg)
    except VerificationError as exc:
        print(f"xfrag: verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except WorkloadSyntaxError as exc:
        print(f"xfrag: workload syntax error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except WarehouseFormatError as exc:
        print(f"xfrag: malformed XML: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except BindError as exc:
        print(f"xfrag: bind error: {exc}", file=sys.stderr)
        return EXIT_BIND
    except (IntegrityError, ConsistencyError) as exc:
        print(f"xfrag: integrity error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except OSError as exc:
        print(f"xfrag: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"xfrag: {exc}", file=sys.stderr)
        return EXIT_PARAM


if __name__ == "__main__":
    sys.exit(main())
