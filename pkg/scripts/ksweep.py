"""KM cost as a function of k at fixed warehouse sizes (k=1 is unfragmented)."""
import argparse
from pathlib import Path

from xfrag.cli import parse_range
from xfrag.engine import BenchConfig, bench, write_bench
from xfrag.warehouse import GeneratorSpec, generate_warehouse
from xfrag.workload import load_workload

DATA = Path(__file__).resolve().parents[1] / "src" / "xfrag" / "data"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", default="4000,5000")
    ap.add_argument("--k", default="1..10")
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--out", default="results/ksweep")
    args = ap.parse_args()

    meta = generate_warehouse(GeneratorSpec(seed=args.seed, fact_count=1)).meta
    wl = load_workload(DATA / "benchmark_workload.xq", meta)
    res = bench(BenchConfig(wl, sizes=(), strategies=("KM",), ksweep=parse_range(args.k),
                            ksweep_sizes=parse_range(args.sizes), seed=args.seed,
                            overhead_runs=1))
    write_bench(res, args.out)
    for size in parse_range(args.sizes):
        row = [(k, c) for s, k, c in res.ksweep if s == size]
        best = min(row, key=lambda kc: kc[1])[0]
        print(f"{size}: " + " ".join(f"k{k}={c:.0f}" for k, c in row) + f"  -> min at k={best}")


if __name__ == "__main__":
    main()
