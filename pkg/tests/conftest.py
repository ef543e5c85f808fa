import random
from pathlib import Path

import pytest

from xfrag.warehouse import GeneratorSpec, generate_warehouse
from xfrag.workload import load_workload

DATA = Path(__file__).resolve().parents[1] / "src" / "xfrag" / "data"
SAMPLE = DATA / "sample_workload.xq"
BENCHMARK = DATA / "benchmark_workload.xq"


@pytest.fixture(scope="session")
def small_wh():
    return generate_warehouse(GeneratorSpec(seed=7, fact_count=1500))


@pytest.fixture(scope="session")
def sample_wl(small_wh):
    return load_workload(SAMPLE, small_wh.meta)


@pytest.fixture(scope="session")
def bench_wl(small_wh):
    return load_workload(BENCHMARK, small_wh.meta)


ATTRS = [("Customer", "c_nation_key", lambda r: str(r.randrange(25))),
         ("Customer", "c_mktsegment", lambda r: r.choice(["BUILDING", "MACHINERY"])),
         ("Part", "p_size", lambda r: str(r.randrange(1, 51))),
         ("Part", "p_type", lambda r: r.choice(["PBC", "STANDARD"])),
         ("Date", "d_year", lambda r: str(r.randrange(1992, 1999))),
         ("Supplier", "s_acctbal", lambda r: f"{r.randrange(-999, 9999)}.{r.randrange(100):02d}")]
VARS = {"Customer": "$y", "Part": "$z", "Date": "$t", "Supplier": "$s"}


def random_workload_text(seed: int, n_queries: int) -> str:
    r = random.Random(seed)
    blocks = []
    for _ in range(n_queries):
        chosen = [r.choice(ATTRS) for _ in range(r.randrange(0, 4))]
        dims = sorted({d for d, _, _ in chosen} | {r.choice(list(VARS))})
        binds = ",\n".join(f'    {VARS[d]} in //dimension[@dim-id="{d}"]/Level/instance' for d in dims)
        conds = [f'{VARS[d]}/attribute[@id="{a}"]/@value{r.choice(["=", "<", ">=", "!="])}"{lit(r)}"'
                 for d, a, lit in chosen]
        conds += [f'$x/dimension[@dim-id="{d}"]/@value-id={VARS[d]}/@id' for d in dims]
        body = "\n  and ".join(conds)
        blocks.append(f"(: freq={r.randrange(1, 5)} :)\nfor $x in //FactDoc/Fact,\n{binds}\n"
                      f"where {body}\nreturn $x")
    return "\n\n".join(blocks) + "\n"
