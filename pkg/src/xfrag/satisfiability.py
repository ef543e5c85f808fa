"""Satisfiability of conjunctions of (possibly negated) unary predicates.

Attributes are independent, so a conjunction is satisfiable iff the
constraints on every single attribute are.  Per attribute the constraints
reduce to an optional equality, a set of excluded values and a lower/upper
bound.  Integers are discrete; decimals and strings are treated as dense
orders (string order is lexicographic), which can only err towards "sat".
"""
from __future__ import annotations

from decimal import Decimal
from functools import lru_cache
from typing import Iterable

from .workload import Predicate


def _kind(value) -> str:
    if isinstance(value, bool):
        raise TypeError(f"unsupported literal {value!r}")
    if isinstance(value, int):
        return "integer"
    if isinstance(value, (Decimal, float)):
        return "decimal"
    if isinstance(value, str):
        return "string"
    raise TypeError(f"unsupported literal {value!r}")


def _attribute_sat(literals: list[tuple[str, object]]) -> bool:
    kinds = {_kind(v) for _, v in literals}
    if len(kinds) > 1:
        raise TypeError(f"mixed literal types on one attribute: {sorted(kinds)}")
    kind = kinds.pop()
    eq, excluded = set(), set()
    lo = hi = None          # (value, strict)
    for op, v in literals:
        if op == "=":
            eq.add(v)
        elif op == "!=":
            excluded.add(v)
        elif op in (">", ">="):
            bound = (v, op == ">")
            if lo is None or v > lo[0] or (v == lo[0] and bound[1]):
                lo = bound
        else:
            bound = (v, op == "<")
            if hi is None or v < hi[0] or (v == hi[0] and bound[1]):
                hi = bound
    if len(eq) > 1:
        return False
    if kind == "integer":
        if lo is not None:
            lo = (lo[0] + 1, False) if lo[1] else lo
        if hi is not None:
            hi = (hi[0] - 1, False) if hi[1] else hi

    def inside(x):
        if lo is not None and (x < lo[0] or (lo[1] and x == lo[0])):
            return False
        if hi is not None and (x > hi[0] or (hi[1] and x == hi[0])):
            return False
        return True

    if eq:
        x = next(iter(eq))
        return inside(x) and x not in excluded
    if kind == "string" and hi is not None and hi[0] == "" and (hi[1] or "" in excluded):
        return False  # nothing sorts below the empty string
    if lo is None or hi is None:
        return True
    if lo[0] > hi[0]:
        return False
    if lo[0] == hi[0]:
        return not lo[1] and not hi[1] and lo[0] not in excluded
    if kind == "integer":
        # finitely many candidates; one survivor is enough
        span = hi[0] - lo[0] + 1
        return span > sum(1 for e in excluded if lo[0] <= e <= hi[0])
    return True  # dense order with at least two distinct points


@lru_cache(maxsize=200_000)
def _sat_frozen(literals: frozenset) -> bool:
    per_attr: dict[tuple, list] = {}
    for dim, attr, op, value, _ in literals:
        per_attr.setdefault((dim, attr), []).append((op, value))
    return all(_attribute_sat(lits) for lits in per_attr.values())


def literal(p: Predicate) -> tuple:
    # the type is part of the key: Decimal(15) == 15 would otherwise share a cache slot
    return (p.dimension_id, p.attribute, p.effective_comparator, p.literal, type(p.literal))


def satisfiable(predicates: Iterable[Predicate]) -> bool:
    """Decide whether the conjunction of ``predicates`` has a model.

    Raises ``TypeError`` if one attribute is compared with literals of
    different types.
    """
    return _sat_frozen(frozenset(literal(p) for p in predicates))


def implies(premises: Iterable[Predicate], conclusion: Iterable[Predicate]) -> bool:
    """True iff every model of ``premises`` satisfies every ``conclusion`` predicate."""
    premises = list(premises)
    return all(not satisfiable(premises + [c.negate()]) for c in conclusion)


def contradiction(left: Iterable[Predicate], right: Iterable[Predicate]):
    """Find a small witness that ``left`` and ``right`` cannot hold together.

    Returns a pair ``(a, b)`` of predicates (one per side) that already
    conflict, ``(a, None)``/``(None, b)`` when one side alone is
    unsatisfiable, or ``None`` when the conjunction is satisfiable or only
    larger subsets conflict.
    """
    left, right = list(left), list(right)
    if satisfiable(left + right):
        return None
    for a in left:
        if not satisfiable([a]):
            return (a, None)
    for b in right:
        if not satisfiable([b]):
            return (None, b)
    for a in left:
        for b in right:
            if (a.dimension_id, a.attribute) == (b.dimension_id, b.attribute) \
                    and not satisfiable([a, b]):
                return (a, b)
    return None
