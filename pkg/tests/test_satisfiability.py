from decimal import Decimal
from itertools import product

import pytest
from hypothesis import given, settings, strategies as st

from xfrag.satisfiability import contradiction, implies, satisfiable
from xfrag.workload import COMPARATORS, Predicate


def P(op, lit, neg=False, attr="x", pid="p"):
    return Predicate(pid, "D", attr, op, lit, neg)


def test_basic_cases():
    assert satisfiable([])
    assert satisfiable([P(">", 15), P("<", 17)])
    assert not satisfiable([P(">", 15), P("<", 16)])      # no integer strictly between
    assert satisfiable([P(">", Decimal(15)), P("<", Decimal(16))])
    assert not satisfiable([P("=", 13), P("=", 14)])
    assert not satisfiable([P("=", 13), P("=", 13, neg=True)])
    assert satisfiable([P("=", 13), P("=", 13, attr="y")])
    assert not satisfiable([P(">=", 3), P("<=", 5), P("!=", 3), P("!=", 4), P("!=", 5)])
    assert not satisfiable([P("<", "")])
    assert satisfiable([P(">", "PBC"), P("<", "PBD")])    # dense string order
    assert satisfiable([P(">", 10), P(">", 15, neg=True), P("=", 12)])


def test_mixed_types_rejected():
    with pytest.raises(TypeError):
        satisfiable([P("=", 1), P("=", "1")])


def test_implies_and_contradiction():
    assert implies([P("=", 13)], [P("<", 20)])
    assert not implies([P("<", 20)], [P("=", 13)])
    a, b = P(">", 15, pid="p1"), P("=", 13, pid="p2")
    assert contradiction([a], [b]) == (a, b)
    assert contradiction([a], [P("=", 16)]) is None
    bad = P("<", "", attr="s")
    assert contradiction([bad], [a]) == (bad, None)


# brute-force oracle over a window wide enough to contain a witness
INT_DOMAIN = range(-3, 14)


def brute_int(preds):
    return any(all(p.evaluate(v) for p in preds) for v in INT_DOMAIN)


def brute_dense(preds):
    lits = sorted({p.literal for p in preds})
    cands = set(lits)
    if lits:
        cands |= {lits[0] - 1, lits[-1] + 1}
        cands |= {(a + b) / 2 for a, b in zip(lits, lits[1:])}
    else:
        cands = {Decimal(0)}
    return any(all(p.evaluate(v) for p in preds) for v in cands)


int_preds = st.lists(st.builds(P, st.sampled_from(COMPARATORS), st.integers(0, 10), st.booleans()),
                     max_size=6)
dec_preds = st.lists(st.builds(P, st.sampled_from(COMPARATORS),
                               st.integers(0, 6).map(Decimal), st.booleans()), max_size=6)


@settings(max_examples=400, deadline=None)
@given(preds=int_preds)
def test_integer_oracle(preds):
    assert satisfiable(preds) == brute_int(preds)


@settings(max_examples=400, deadline=None)
@given(preds=dec_preds)
def test_dense_oracle(preds):
    assert satisfiable(preds) == brute_dense(preds)


@settings(max_examples=200, deadline=None)
@given(left=int_preds, right=int_preds)
def test_contradiction_witness_is_sound(left, right):
    w = contradiction(left, right)
    if satisfiable(left + right):
        assert w is None
    elif w is not None:
        assert not satisfiable([p for p in w if p is not None])


def test_negation_is_complement():
    for op, lit, v in product(COMPARATORS, (3, 5), range(0, 9)):
        p = P(op, lit)
        assert p.evaluate(v) != p.negate().evaluate(v)
