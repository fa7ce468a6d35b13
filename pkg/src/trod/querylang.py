"""Parser and executor for the declarative debugging query subset.

The grammar covers exactly what debugging queries need: SELECT over one or
two relations, an optional equi-join (both ``JOIN ... ON`` and the comma form
``FROM A, B ON ...``), a WHERE conjunction of comparisons, ORDER BY one
column, and LIMIT. Anything beyond that is rejected with a clear error.

Semantics are defined by nested-loop reference evaluation: cross product
restricted by the join condition, filtered by the conjunction, projected,
ordered, limited. The executor pushes single-relation filters below the join
and uses a hash join, but those are pure optimizations. Any comparison
involving a null cell is not satisfied; ORDER BY places null keys first
ascending and last descending, ties keep base order (for provenance tables:
ascending txn id).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping, Optional, Sequence, Union

from .encoding import TYPE_BOOL, value_type
from .errors import QuerySyntaxError, TypeMismatch, UnknownColumn, UnknownTable

_KEYWORDS = {
    "SELECT", "FROM", "WHERE", "AND", "ORDER", "BY", "ASC", "DESC",
    "LIMIT", "JOIN", "ON", "AS", "TRUE", "FALSE", "NULL",
}

_OPS = ("=", "!=", "<=", ">=", "<", ">")


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ColRef:
    qualifier: Optional[str]
    name: str

    def __str__(self):
        return f"{self.qualifier}.{self.name}" if self.qualifier else self.name


@dataclass(frozen=True)
class Literal:
    value: Any  # bool | int | str


@dataclass(frozen=True)
class TableRef:
    name: str
    alias: Optional[str] = None

    @property
    def binding(self) -> str:
        return self.alias or self.name


@dataclass(frozen=True)
class Comparison:
    lhs: ColRef
    op: str
    rhs: Union[ColRef, Literal]


@dataclass
class QueryAst:
    select: list[ColRef]
    tables: list[TableRef]
    join_on: Optional[tuple[ColRef, ColRef]] = None
    where: list[Comparison] = field(default_factory=list)
    order_by: Optional[tuple[ColRef, bool]] = None  # (column, ascending)
    limit: Optional[int] = None


@dataclass
class ResultSet:
    columns: list[str]
    rows: list[tuple]

    def to_json(self) -> dict:
        return {"columns": list(self.columns), "rows": [list(r) for r in self.rows]}


@dataclass(frozen=True)
class Relation:
    """A queryable relation: ordered typed columns plus row tuples."""

    name: str
    columns: tuple[tuple[str, str], ...]  # (column name, cell type)
    rows: Sequence[tuple] = ()


# ---------------------------------------------------------------------------
# Tokenizer
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _Token:
    kind: str  # IDENT STRING INT SYMBOL EOF
    value: Any
    pos: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
            continue
        if c == "'":
            j = i + 1
            parts = []
            while True:
                if j >= n:
                    raise QuerySyntaxError(i, "closing quote")
                if text[j] == "'":
                    if j + 1 < n and text[j + 1] == "'":  # '' escapes a quote
                        parts.append("'")
                        j += 2
                        continue
                    break
                parts.append(text[j])
                j += 1
            tokens.append(_Token("STRING", "".join(parts), i))
            i = j + 1
            continue
        if c.isdigit() or (c == "-" and i + 1 < n and text[i + 1].isdigit()):
            j = i + 1
            while j < n and text[j].isdigit():
                j += 1
            tokens.append(_Token("INT", int(text[i:j]), i))
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i + 1
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(_Token("IDENT", text[i:j], i))
            i = j
            continue
        matched = None
        for op in _OPS:
            if text.startswith(op, i):
                matched = op
                break
        if matched:
            tokens.append(_Token("SYMBOL", matched, i))
            i += len(matched)
            continue
        if c in ",.;()":
            tokens.append(_Token("SYMBOL", c, i))
            i += 1
            continue
        raise QuerySyntaxError(i, "a token", c)
    tokens.append(_Token("EOF", None, n))
    return tokens


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def next(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def at_keyword(self, word: str) -> bool:
        tok = self.peek()
        return tok.kind == "IDENT" and tok.value.upper() == word

    def expect_keyword(self, word: str) -> None:
        tok = self.next()
        if tok.kind != "IDENT" or tok.value.upper() != word:
            raise QuerySyntaxError(tok.pos, word, str(tok.value))

    def expect_symbol(self, sym: str) -> None:
        tok = self.next()
        if tok.kind != "SYMBOL" or tok.value != sym:
            raise QuerySyntaxError(tok.pos, repr(sym), str(tok.value))

    def ident(self, what: str) -> str:
        tok = self.next()
        if tok.kind != "IDENT" or tok.value.upper() in _KEYWORDS:
            raise QuerySyntaxError(tok.pos, what, str(tok.value))
        return tok.value

    def colref(self) -> ColRef:
        first = self.ident("a column name")
        if self.peek().kind == "SYMBOL" and self.peek().value == ".":
            self.next()
            return ColRef(first, self.ident("a column name"))
        return ColRef(None, first)

    def tableref(self) -> TableRef:
        name = self.ident("a table name")
        if self.at_keyword("AS"):
            self.next()
            return TableRef(name, self.ident("an alias"))
        tok = self.peek()
        if tok.kind == "IDENT" and tok.value.upper() not in _KEYWORDS:
            self.next()
            return TableRef(name, tok.value)
        return TableRef(name)

    def comparison(self) -> Comparison:
        lhs = self.colref()
        tok = self.next()
        if tok.kind != "SYMBOL" or tok.value not in _OPS:
            raise QuerySyntaxError(tok.pos, "a comparison operator", str(tok.value))
        op = tok.value
        rhs_tok = self.peek()
        if rhs_tok.kind == "STRING":
            self.next()
            rhs: Union[ColRef, Literal] = Literal(rhs_tok.value)
        elif rhs_tok.kind == "INT":
            self.next()
            rhs = Literal(rhs_tok.value)
        elif rhs_tok.kind == "IDENT" and rhs_tok.value.upper() in ("TRUE", "FALSE"):
            self.next()
            rhs = Literal(rhs_tok.value.upper() == "TRUE")
        elif rhs_tok.kind == "IDENT" and rhs_tok.value.upper() == "NULL":
            raise QuerySyntaxError(rhs_tok.pos, "a literal or column (null comparisons "
                                               "are never satisfied; they are not supported)")
        else:
            rhs = self.colref()
        return Comparison(lhs, op, rhs)

    def query(self) -> QueryAst:
        self.expect_keyword("SELECT")
        select = [self.colref()]
        while self.peek().kind == "SYMBOL" and self.peek().value == ",":
            self.next()
            select.append(self.colref())
        self.expect_keyword("FROM")
        tables = [self.tableref()]
        join_on = None
        tok = self.peek()
        if (tok.kind == "SYMBOL" and tok.value == ",") or self.at_keyword("JOIN"):
            self.next()
            tables.append(self.tableref())
            if self.at_keyword("ON"):
                self.next()
                left = self.colref()
                self.expect_symbol("=")
                right = self.colref()
                join_on = (left, right)
        where: list[Comparison] = []
        if self.at_keyword("WHERE"):
            self.next()
            where.append(self.comparison())
            while self.at_keyword("AND"):
                self.next()
                where.append(self.comparison())
        order_by = None
        if self.at_keyword("ORDER"):
            self.next()
            self.expect_keyword("BY")
            col = self.colref()
            ascending = True
            if self.at_keyword("ASC"):
                self.next()
            elif self.at_keyword("DESC"):
                self.next()
                ascending = False
            order_by = (col, ascending)
        limit = None
        if self.at_keyword("LIMIT"):
            self.next()
            tok = self.next()
            if tok.kind != "INT" or tok.value < 0:
                raise QuerySyntaxError(tok.pos, "a non-negative integer", str(tok.value))
            limit = tok.value
        tok = self.peek()
        if tok.kind == "SYMBOL" and tok.value == ";":
            self.next()
            tok = self.peek()
        if tok.kind != "EOF":
            raise QuerySyntaxError(tok.pos, "end of query", str(tok.value))
        return QueryAst(select, tables, join_on, where, order_by, limit)


def parse(text: str) -> QueryAst:
    """Parse query text; raises :class:`QuerySyntaxError` with a position."""
    return _Parser(text).query()


# ---------------------------------------------------------------------------
# Resolution and execution
# ---------------------------------------------------------------------------


@dataclass
class _Binding:
    side: int
    index: int
    ctype: str
    name: str


class _Resolver:
    def __init__(self, ast: QueryAst, catalog: Mapping[str, Relation],
                 aliases: Optional[Mapping[str, str]] = None):
        if not 1 <= len(ast.tables) <= 2:
            raise UnknownTable("queries take one or two tables")
        self.relations: list[Relation] = []
        self.bindings: list[str] = []
        aliases = aliases or {}
        for ref in ast.tables:
            name = aliases.get(ref.name, ref.name)
            rel = catalog.get(name)
            if rel is None:
                raise UnknownTable(ref.name)
            self.relations.append(rel)
            self.bindings.append(ref.binding)
        if len(set(self.bindings)) != len(self.bindings):
            raise UnknownTable(f"duplicate table binding {self.bindings[0]!r}; use aliases")

    def resolve(self, col: ColRef) -> _Binding:
        hits = []
        for side, rel in enumerate(self.relations):
            if col.qualifier is not None and col.qualifier != self.bindings[side]:
                continue
            for idx, (name, ctype) in enumerate(rel.columns):
                if name == col.name:
                    hits.append(_Binding(side, idx, ctype, name))
        if not hits:
            raise UnknownColumn(str(col))
        if len(hits) > 1:
            raise UnknownColumn(f"{col} is ambiguous; qualify it")
        return hits[0]


def _literal_type(value: Any) -> str:
    return value_type(value)


def _check_cmp(lhs: _Binding, op: str, rhs_type: str, what: str) -> None:
    if lhs.ctype != rhs_type:
        raise TypeMismatch(f"{what}: {lhs.ctype} {op} {rhs_type}")
    if op in ("<", "<=", ">", ">=") and lhs.ctype == TYPE_BOOL:
        # false < true is defined, so allow it; nothing to reject here.
        pass


def _cmp_source(lexpr: str, op: str, rexpr: str, guard_both: bool) -> str:
    guards = [f"{lexpr} is not None"]
    if guard_both:
        guards.append(f"{rexpr} is not None")
    py_op = "==" if op == "=" else op
    return "(" + " and ".join(guards + [f"{lexpr} {py_op} {rexpr}"]) + ")"


def _compile_filter(parts: list[str], arity: int):
    if not parts:
        return None
    args = "r" if arity == 1 else "l, r"
    return eval(f"lambda {args}: " + " and ".join(parts))  # noqa: S307 - generated from typed plan


def execute(ast: QueryAst, catalog: Mapping[str, Relation],
            aliases: Optional[Mapping[str, str]] = None) -> ResultSet:
    """Evaluate a parsed query against a catalog of relations."""
    res = _Resolver(ast, catalog, aliases)
    two_sided = len(res.relations) == 2

    join = None
    if ast.join_on is not None:
        if not two_sided:
            raise UnknownTable("ON requires two tables")
        jl, jr = res.resolve(ast.join_on[0]), res.resolve(ast.join_on[1])
        if jl.side == jr.side:
            raise TypeMismatch("join condition must reference both tables")
        if jl.side == 1:
            jl, jr = jr, jl
        _check_cmp(jl, "=", jr.ctype, "join condition")
        join = (jl.index, jr.index)

    # Partition WHERE conjuncts by which sides they touch.
    single: dict[int, list[str]] = {0: [], 1: []}
    cross: list[str] = []
    for cmp_ in ast.where:
        lhs = res.resolve(cmp_.lhs)
        if isinstance(cmp_.rhs, Literal):
            rtype = _literal_type(cmp_.rhs.value)
            _check_cmp(lhs, cmp_.op, rtype, str(cmp_.lhs))
            lit = repr(cmp_.rhs.value)
            if cmp_.op == "=":
                # A null cell compares unequal to any literal; no guard needed.
                single[lhs.side].append(f"(r[{lhs.index}] == {lit})")
            else:
                single[lhs.side].append(_cmp_source(f"r[{lhs.index}]", cmp_.op, lit, False))
            continue
        rhs = res.resolve(cmp_.rhs)
        _check_cmp(lhs, cmp_.op, rhs.ctype, f"{cmp_.lhs} vs {cmp_.rhs}")
        if lhs.side == rhs.side:
            src = _cmp_source(f"r[{lhs.index}]", cmp_.op, f"r[{rhs.index}]", True)
            single[lhs.side].append(src)
        else:
            a = f"l[{lhs.index}]" if lhs.side == 0 else f"r[{lhs.index}]"
            b = f"l[{rhs.index}]" if rhs.side == 0 else f"r[{rhs.index}]"
            cross.append(_cmp_source(a, cmp_.op, b, True))

    left_rows = list(res.relations[0].rows)
    f0 = _compile_filter(single[0], 1)
    if f0 is not None:
        left_rows = [r for r in left_rows if f0(r)]

    if two_sided:
        right_rows = list(res.relations[1].rows)
        f1 = _compile_filter(single[1], 1)
        if f1 is not None:
            right_rows = [r for r in right_rows if f1(r)]
        fx = _compile_filter(cross, 2)
        pairs = []
        if join is not None:
            li, ri = join
            table: dict[Any, list[tuple]] = {}
            for r in right_rows:
                k = r[ri]
                if k is None:
                    continue
                table.setdefault(k, []).append(r)
            for l in left_rows:
                k = l[li]
                if k is None:
                    continue
                for r in table.get(k, ()):
                    if fx is None or fx(l, r):
                        pairs.append((l, r))
        else:
            for l in left_rows:
                for r in right_rows:
                    if fx is None or fx(l, r):
                        pairs.append((l, r))
    else:
        pairs = [(r, ()) for r in left_rows]

    # Projection and ordering.
    proj = [res.resolve(c) for c in ast.select]
    out_columns = [b.name for b in proj]

    if ast.order_by is not None:
        ob = res.resolve(ast.order_by[0])
        ascending = ast.order_by[1]
        key_of = (lambda p: p[0][ob.index]) if ob.side == 0 else (lambda p: p[1][ob.index])
        nulls = [p for p in pairs if key_of(p) is None]
        rest = [p for p in pairs if key_of(p) is not None]
        rest.sort(key=key_of, reverse=not ascending)
        pairs = (nulls + rest) if ascending else (rest + nulls)

    if ast.limit is not None:
        pairs = pairs[:ast.limit]

    rows = [tuple(p[b.side][b.index] for b in proj) for p in pairs]
    return ResultSet(out_columns, rows)


def run_query(text: str, catalog: Mapping[str, Relation],
              aliases: Optional[Mapping[str, str]] = None) -> ResultSet:
    return execute(parse(text), catalog, aliases)
