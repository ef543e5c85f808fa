"""Schema-derivation time per strategy as the predicate count grows.

Takes growing prefixes of the benchmark workload (by query) so |P| rises
naturally, and times each strategy with the median of ``--runs``.
"""
import argparse
from pathlib import Path

from xfrag.engine import time_derivation
from xfrag.warehouse import GeneratorSpec, generate_warehouse
from xfrag.workload import Workload, load_workload

DATA = Path(__file__).resolve().parents[1] / "src" / "xfrag" / "data"


def prefix(wl: Workload, n: int) -> Workload:
    qs = wl.queries[:n]
    used = {p for q in qs for p in q.predicate_ids}
    return Workload(qs, [p for p in wl.predicates if p.id in used])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--runs", type=int, default=5)
    ap.add_argument("-k", type=int, default=8)
    ap.add_argument("--seed", type=int, default=42)
    args = ap.parse_args()

    meta = generate_warehouse(GeneratorSpec(seed=args.seed, fact_count=1)).meta
    wl = load_workload(DATA / "benchmark_workload.xq", meta)
    print("queries  |P|      KM ms      AB ms      PC ms")
    seen = set()
    for n in range(1, len(wl.queries) + 1):
        sub = prefix(wl, n)
        if not sub.predicates or len(sub.predicates) in seen:
            continue
        seen.add(len(sub.predicates))
        k = min(args.k, len(sub.predicates))
        ms = [time_derivation(s, sub, k, args.seed, args.runs) for s in ("KM", "AB", "PC")]
        print(f"{n:>7} {len(sub.predicates):>4}" + "".join(f"{m:>11.3f}" for m in ms))


if __name__ == "__main__":
    main()
