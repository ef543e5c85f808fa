"""Mean facts scanned per query, NF vs PC vs AB vs KM, over warehouse sizes.

    python3 scripts/efficiency.py --sizes 1000..7000 --out results/efficiency
"""
import argparse
from pathlib import Path

from xfrag.cli import parse_range
from xfrag.engine import BenchConfig, bench, write_bench
from xfrag.warehouse import GeneratorSpec, generate_warehouse
from xfrag.workload import load_workload

DATA = Path(__file__).resolve().parents[1] / "src" / "xfrag" / "data"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="1000..7000")
    ap.add_argument("--workload", default=str(DATA / "benchmark_workload.xq"))
    ap.add_argument("-k", type=int, default=8)
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--out", default="results/efficiency")
    args = ap.parse_args()

    meta = generate_warehouse(GeneratorSpec(seed=args.seed, fact_count=1)).meta
    wl = load_workload(args.workload, meta)
    res = bench(BenchConfig(wl, sizes=parse_range(args.sizes), k=args.k, ksweep=(),
                            ksweep_sizes=(), seed=args.seed, overhead_runs=1))
    write_bench(res, args.out)

    by = {(r.strategy, r.size): r for r in res.reports}
    strategies = [s for s in ("NF", "PC", "AB", "KM") if any(key[0] == s for key in by)]
    print("size  " + "".join(f"{s:>10}" for s in strategies) + "   (mean parallel cost)")
    for size in parse_range(args.sizes):
        print(f"{size:<6}" + "".join(f"{by[s, size].mean_parallel():>10.1f}" for s in strategies))
    print("total " + "".join(f"{sum(by[s, n].total_scanned() for n in parse_range(args.sizes)):>10}"
                             for s in strategies) + "   (facts scanned, all queries)")


if __name__ == "__main__":
    main()
