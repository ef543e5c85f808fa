"""Workload parsing, selection-predicate extraction and the query-predicate matrix.

Only the FLWOR shape used by the warehouse's analytic queries is accepted::

    (: id=q2 freq=3 :)
    for $x in //FactDoc/Fact,
        $y in //dimension[@dim-id="Customer"]/Level/instance
    where $y/attribute[@id="c_nation_key"]/@value="13"
      and $x/dimension[@dim-id="Customer"]/@value-id=$y/@id
    return $x

Selection predicates compare a dimension attribute with a quoted literal;
join conditions tie a fact variable to a dimension variable.  Where-clauses
are conjunctions.
"""
from __future__ import annotations

import csv
import io
import operator
import re
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .warehouse import Value, WarehouseMeta, coerce_value, format_value

COMPARATORS = ("=", "!=", "<", "<=", ">", ">=")
NEGATED = {"=": "!=", "!=": "=", "<": ">=", ">=": "<", ">": "<=", "<=": ">"}
_OPS = {"=": operator.eq, "!=": operator.ne, "<": operator.lt,
        "<=": operator.le, ">": operator.gt, ">=": operator.ge}


class WorkloadSyntaxError(Exception):
    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        prefix = f"line {line}, column {column}: " if line is not None else ""
        super().__init__(prefix + message)


class BindError(Exception):
    """A predicate does not resolve against the warehouse metadata."""


@lru_cache(maxsize=4096)
def predicate_index(pid: str) -> tuple:
    """Sort key putting ``p2`` before ``p10``."""
    m = re.fullmatch(r"([^\d]*)(\d+)", pid)
    return (m.group(1), int(m.group(2))) if m else (pid, -1)


@dataclass(frozen=True)
class Predicate:
    id: str
    dimension_id: str
    attribute: str
    comparator: str
    literal: Value
    negated: bool = False

    def __post_init__(self):
        if self.comparator not in COMPARATORS:
            raise ValueError(f"unknown comparator {self.comparator!r}")

    @property
    def key(self) -> tuple:
        return (self.dimension_id, self.attribute, self.comparator, self.literal)

    def negate(self) -> "Predicate":
        return replace(self, negated=not self.negated)

    @property
    def effective_comparator(self) -> str:
        """Comparator with the negation folded in."""
        return NEGATED[self.comparator] if self.negated else self.comparator

    def evaluate(self, value) -> bool:
        """Truth of the predicate for an attribute value (``None`` = absent).

        An absent attribute satisfies no literal, negated or not, so pruning
        by satisfiability stays sound; such rows end up in ELSE.
        """
        if value is None:
            return False
        return _OPS[self.effective_comparator](value, self.literal)

    def path(self, var: str = "$y") -> str:
        return (f'{var}/attribute[@id="{self.attribute}"]/@value'
                f'{self.comparator}"{format_value(self.literal)}"')

    def __str__(self):
        s = f"{self.dimension_id}.{self.attribute} {self.comparator} {self.literal!r}"
        return f"not({s})" if self.negated else s


@dataclass(frozen=True)
class Query:
    id: str
    predicate_ids: tuple[str, ...]
    joined_dimensions: tuple[str, ...]
    frequency: int = 1
    fact_set_id: str | None = None
    variables: dict[str, str] = field(default_factory=dict, compare=False)
    fact_variable: str = field(default="$x", compare=False)


class Workload(NamedTuple):
    queries: list[Query]
    predicates: list[Predicate]

    def predicate(self, pid: str) -> Predicate:
        for p in self.predicates:
            if p.id == pid:
                return p
        raise KeyError(pid)

    def query_predicates(self, query: Query) -> list[Predicate]:
        table = {p.id: p for p in self.predicates}
        return [table[pid] for pid in query.predicate_ids]


# --------------------------------------------------------------------------
# lexer

_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<comment>\(:.*?:\))
  | (?P<string>"[^"\n]*")
  | (?P<var>\$[A-Za-z_]\w*)
  | (?P<op>//|!=|<=|>=|[/\[\]@=<>,])
  | (?P<name>[A-Za-z_][\w.-]*)
""", re.VERBOSE | re.DOTALL)


class Token(NamedTuple):
    kind: str
    text: str
    line: int
    column: int


def tokenize(text: str) -> list[Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise WorkloadSyntaxError(f"unexpected character {text[pos]!r}",
                                      line, pos - line_start + 1)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append(Token(kind, m.group(), line, pos - line_start + 1))
        chunk = m.group()
        newlines = chunk.count("\n")
        if newlines:
            line += newlines
            line_start = pos + chunk.rindex("\n") + 1
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


# --------------------------------------------------------------------------
# parser

class _Parser:
    def __init__(self, text):
        self.tokens = tokenize(text)
        self.pos = 0
        self.in_query = False
        self.predicates: dict[tuple, Predicate] = {}

    def _skip_comments(self):
        # comments inside a query body carry no meaning
        if self.in_query:
            while self.tokens[self.pos].kind == "comment":
                self.pos += 1

    def peek(self) -> Token:
        self._skip_comments()
        return self.tokens[self.pos]

    def next(self) -> Token:
        self._skip_comments()
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def fail(self, message, tok=None):
        tok = tok or self.peek()
        raise WorkloadSyntaxError(message, tok.line, tok.column)

    def expect(self, kind, text=None) -> Token:
        tok = self.next()
        if tok.kind != kind or (text is not None and tok.text != text):
            want = text if text is not None else kind
            got = tok.text or "end of input"
            raise WorkloadSyntaxError(f"expected {want!r}, found {got!r}", tok.line, tok.column)
        return tok

    def expect_seq(self, *texts):
        for t in texts:
            kind = "name" if re.fullmatch(r"[A-Za-z_][\w.-]*", t) else "op"
            self.expect(kind, t)

    def keyword(self, word) -> bool:
        tok = self.peek()
        return tok.kind == "name" and tok.text == word

    def string(self) -> str:
        return self.expect("string").text[1:-1]

    def parse(self) -> Workload:
        queries = []
        annotation = {}
        while True:
            tok = self.peek()
            if tok.kind == "eof":
                break
            if tok.kind == "comment":
                self.next()
                annotation.update(_annotation(tok))
                continue
            self.in_query = True
            queries.append(self.query(annotation, len(queries) + 1))
            self.in_query = False
            annotation = {}
        ids = [q.id for q in queries]
        dup = {i for i in ids if ids.count(i) > 1}
        if dup:
            raise WorkloadSyntaxError(f"duplicate query ids {sorted(dup)}")
        return Workload(queries, list(self.predicates.values()))

    def query(self, annotation, number) -> Query:
        start = self.peek()
        self.expect("name", "for")
        variables: dict[str, str] = {}
        fact_var, fact_set = None, None
        while True:
            var_tok = self.expect("var")
            if var_tok.text in variables or var_tok.text == fact_var:
                self.fail(f"variable {var_tok.text} bound twice", var_tok)
            self.expect("name", "in")
            self.expect("op", "//")
            head = self.expect("name")
            if head.text == "FactDoc":
                if fact_var is not None:
                    self.fail("only one fact variable is allowed", head)
                fact_var = var_tok.text
                if self.peek().text == "[":
                    self.expect_seq("[", "@", "id", "=")
                    fact_set = self.string()
                    self.expect("op", "]")
                self.expect_seq("/", "Fact")
            elif head.text == "dimension":
                self.expect_seq("[", "@", "dim-id", "=")
                variables[var_tok.text] = self.string()
                self.expect_seq("]", "/", "Level", "/", "instance")
            else:
                self.fail(f"expected FactDoc or dimension path, found {head.text!r}", head)
            if self.peek().text == ",":
                self.next()
                continue
            break
        if fact_var is None:
            self.fail("query binds no //FactDoc/Fact variable", start)

        selections: list[Predicate] = []
        joined: list[str] = []
        if self.keyword("where"):
            self.next()
            while True:
                self.condition(variables, fact_var, selections, joined)
                if self.keyword("and"):
                    self.next()
                    continue
                if self.keyword("or"):
                    self.fail("disjunctive where-clauses are not supported")
                break
        self.expect("name", "return")
        ret = self.expect("var")
        if ret.text != fact_var:
            self.fail(f"query must return the fact variable {fact_var}", ret)

        for var, dim in variables.items():
            if dim not in joined:
                self.fail(f"variable {var} ranges over {dim} but is never joined to "
                          f"{fact_var}", start)
        for pred in selections:
            if pred.dimension_id not in joined:
                self.fail(f"predicate on {pred.dimension_id} but the query never joins "
                          f"that dimension to the facts", start)
        pids = tuple(dict.fromkeys(p.id for p in selections))
        qid = annotation.get("id", f"q{number}")
        try:
            freq = int(annotation.get("freq", 1))
        except ValueError:
            self.fail(f"bad frequency annotation {annotation['freq']!r}", start)
        if freq < 1:
            self.fail(f"frequency must be positive, got {freq}", start)
        return Query(qid, pids, tuple(joined), freq, fact_set,
                     dict(variables), fact_var)

    def condition(self, variables, fact_var, selections, joined):
        var = self.expect("var")
        self.expect("op", "/")
        step = self.expect("name")
        if step.text == "attribute":
            if var.text not in variables:
                self.fail(f"{var.text} is not bound to a dimension", var)
            self.expect_seq("[", "@", "id", "=")
            attribute = self.string()
            self.expect_seq("]", "/", "@", "value")
            cmp_tok = self.next()
            if cmp_tok.text not in COMPARATORS:
                self.fail(f"expected comparator, found {cmp_tok.text!r}", cmp_tok)
            literal = self.string()
            selections.append(self.intern(variables[var.text], attribute, cmp_tok.text, literal))
        elif step.text == "dimension":
            if var.text != fact_var:
                self.fail(f"join conditions must start from the fact variable {fact_var}", var)
            self.expect_seq("[", "@", "dim-id", "=")
            dim_tok = self.peek()
            dim = self.string()
            self.expect_seq("]", "/", "@", "value-id", "=")
            dvar = self.expect("var")
            self.expect_seq("/", "@", "id")
            if dvar.text not in variables:
                self.fail(f"{dvar.text} is not bound to a dimension", dvar)
            if variables[dvar.text] != dim:
                self.fail(f"join on dimension {dim!r} uses {dvar.text}, which is bound "
                          f"to {variables[dvar.text]!r}", dim_tok)
            if dim not in joined:
                joined.append(dim)
        else:
            self.fail(f"expected attribute or dimension step, found {step.text!r}", step)

    def intern(self, dim, attribute, comparator, literal) -> Predicate:
        key = (dim, attribute, comparator, literal)
        if key not in self.predicates:
            pid = f"p{len(self.predicates) + 1}"
            self.predicates[key] = Predicate(pid, dim, attribute, comparator, literal)
        return self.predicates[key]


def _annotation(tok: Token) -> dict:
    body = tok.text[2:-2]
    return dict(re.findall(r"(\w+)=(\S+)", body))


def parse_workload(text: str) -> Workload:
    """Parse a workload script into queries and deduplicated predicates.

    Predicates are numbered ``p1, p2, ...`` in order of first appearance.
    Literals stay strings until :func:`bind_workload` coerces them.
    """
    return _Parser(text).parse()


def bind_workload(workload: Workload, meta: WarehouseMeta) -> Workload:
    """Resolve dimensions/attributes and coerce literals to attribute types."""
    dims = {d.id: d for d in meta.dimensions}
    owner: dict[str, str] = {}
    for q in workload.queries:
        for pid in q.predicate_ids:
            owner.setdefault(pid, q.id)
        for d in q.joined_dimensions:
            if d not in dims:
                raise BindError(f"query {q.id}: unknown dimension {d!r}")
    predicates = []
    for p in workload.predicates:
        where = f"query {owner.get(p.id, '?')}, predicate {p.id}"
        dim = dims.get(p.dimension_id)
        if dim is None:
            raise BindError(f"{where}: unknown dimension {p.dimension_id!r}")
        found = dim.attribute(p.attribute)
        if found is None:
            raise BindError(f"{where}: dimension {p.dimension_id!r} has no attribute "
                            f"{p.attribute!r}")
        _, attr = found
        try:
            literal = coerce_value(str(p.literal), attr.type)
        except ValueError:
            raise BindError(f"{where}: literal {p.literal!r} is not a valid "
                            f"{attr.type}") from None
        predicates.append(replace(p, literal=literal))
    queries = []
    for q in workload.queries:
        fact_set = q.fact_set_id
        if fact_set is None:
            if len(meta.fact_sets) != 1:
                raise BindError(f"query {q.id}: ambiguous fact set, name it with [@id=...]")
            fact_set = meta.fact_sets[0].id
        try:
            fs = meta.fact_set(fact_set)
        except KeyError:
            raise BindError(f"query {q.id}: unknown fact set {fact_set!r}") from None
        for d in q.joined_dimensions:
            if d not in fs.dimension_refs:
                raise BindError(f"query {q.id}: fact set {fs.id!r} does not reference {d!r}")
        queries.append(replace(q, fact_set_id=fact_set))
    return Workload(queries, predicates)


_VAR_NAMES = ("$y", "$z", "$t", "$u", "$v", "$w")


def render_query(query: Query, predicates: dict[str, Predicate]) -> str:
    var_of = {}
    for i, dim in enumerate(query.joined_dimensions):
        var_of[dim] = _VAR_NAMES[i] if i < len(_VAR_NAMES) else f"$d{i}"
    fact = "//FactDoc"
    if query.fact_set_id is not None:
        fact += f'[@id="{query.fact_set_id}"]'
    lines = [f"(: id={query.id} freq={query.frequency} :)",
             f"for $x in {fact}/Fact"]
    for dim, var in var_of.items():
        lines[-1] += ","
        lines.append(f'    {var} in //dimension[@dim-id="{dim}"]/Level/instance')
    conds = [predicates[pid].path(var_of[predicates[pid].dimension_id])
             for pid in query.predicate_ids]
    conds += [f'$x/dimension[@dim-id="{dim}"]/@value-id={var}/@id'
              for dim, var in var_of.items()]
    for i, cond in enumerate(conds):
        lines.append(("where " if i == 0 else "  and ") + cond)
    lines.append("return $x")
    return "\n".join(lines)


def render_workload(workload: Workload) -> str:
    """Render back to the workload dialect (parse/render round-trips)."""
    table = {p.id: p for p in workload.predicates}
    return "\n\n".join(render_query(q, table) for q in workload.queries) + "\n"


# --------------------------------------------------------------------------
# query-predicate matrix

@dataclass(frozen=True)
class QPMatrix:
    queries: tuple[str, ...]
    predicates: tuple[str, ...]
    cells: np.ndarray

    def column(self, pid: str) -> np.ndarray:
        return self.cells[:, self.predicates.index(pid)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["query", *self.predicates])
        for qid, row in zip(self.queries, self.cells):
            writer.writerow([qid, *(int(v) for v in row)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "QPMatrix":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        cells = np.array([[int(v) for v in r[1:]] for r in body], dtype=np.uint8)
        cells = cells.reshape(len(body), len(header) - 1)
        return cls(tuple(r[0] for r in body), tuple(header[1:]), cells)


def build_qp_matrix(workload: Workload, predicates=None) -> QPMatrix:
    predicates = workload.predicates if predicates is None else predicates
    pids = tuple(p.id for p in predicates)
    col = {pid: j for j, pid in enumerate(pids)}
    cells = np.zeros((len(workload.queries), len(pids)), dtype=np.uint8)
    for i, q in enumerate(workload.queries):
        for pid in q.predicate_ids:
            cells[i, col[pid]] = 1
    return QPMatrix(tuple(q.id for q in workload.queries), pids, cells)


def load_workload(path, meta: WarehouseMeta | None = None) -> Workload:
    with open(path, encoding="utf-8") as fh:
        wl = parse_workload(fh.read())
    return bind_workload(wl, meta) if meta is not None else wl
