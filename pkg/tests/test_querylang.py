"""Query subset: grammar, null semantics, and oracle equivalence."""

from __future__ import annotations

import random

import pytest

from trod.apps import FORUM_QUERY, PROFILE_QUERY
from trod.errors import QuerySyntaxError, TypeMismatch, UnknownColumn, UnknownTable
from trod.querylang import (
    ColRef,
    Literal,
    Relation,
    execute,
    parse,
    run_query,
)

from oracle import naive_execute
from randgen import random_catalog, random_query, render_query

PEOPLE = Relation("People", (("Name", "Text"), ("Age", "Int"), ("Active", "Bool")), [
    ("ann", 31, True),
    ("bob", None, False),
    ("cat", 12, True),
    (None, 40, None),
])
PETS = Relation("Pets", (("Owner", "Text"), ("Pet", "Text")), [
    ("ann", "dog"),
    ("ann", "cat"),
    ("cat", "fish"),
    (None, "rock"),
])
CATALOG = {"People": PEOPLE, "Pets": PETS}


# -- parsing -----------------------------------------------------------------


def test_parse_forum_query():
    ast = parse(FORUM_QUERY)
    assert [str(c) for c in ast.select] == ["Timestamp", "ReqId", "HandlerName"]
    assert [(t.name, t.alias) for t in ast.tables] == [("Executions", "E"),
                                                       ("ForumEvents", "F")]
    assert ast.join_on == (ColRef("E", "TxnId"), ColRef("F", "TxnId"))
    assert len(ast.where) == 3
    assert ast.where[2].rhs == Literal("Insert")
    assert ast.order_by == (ColRef(None, "Timestamp"), True)


def test_parse_profile_query():
    ast = parse(PROFILE_QUERY)
    assert ast.join_on == (ColRef("E", "TxnId"), ColRef("P", "TxnId"))
    assert ast.where[0].rhs == ColRef("P", "UpdatedBy")
    assert ast.order_by is None


def test_parse_minimal_query():
    ast = parse("SELECT TxnId FROM Invocations")
    assert len(ast.tables) == 1 and ast.join_on is None and not ast.where


def test_parse_join_keyword_form():
    ast = parse("SELECT a FROM T1 JOIN T2 ON T1.x = T2.y")
    assert ast.join_on == (ColRef("T1", "x"), ColRef("T2", "y"))


def test_syntax_error_carries_position():
    with pytest.raises(QuerySyntaxError) as err:
        parse("SELECT FROM Invocations")
    assert err.value.position == 7
    assert "column" in err.value.expected


def test_unterminated_string_rejected():
    with pytest.raises(QuerySyntaxError):
        parse("SELECT a FROM T WHERE b = 'oops")


def test_trailing_garbage_rejected():
    with pytest.raises(QuerySyntaxError):
        parse("SELECT a FROM T GROUP BY a")


def test_null_literal_rejected():
    with pytest.raises(QuerySyntaxError):
        parse("SELECT a FROM T WHERE a = NULL")


def test_quote_escape():
    ast = parse("SELECT a FROM T WHERE b = 'it''s'")
    assert ast.where[0].rhs == Literal("it's")


# -- execution ---------------------------------------------------------------


def test_single_table_filter_projection():
    rs = run_query("SELECT Name FROM People WHERE Age > 20 ORDER BY Name ASC", CATALOG)
    # Both ann (31) and the anonymous row (40) pass; null names order first.
    assert rs.rows == [(None,), ("ann",)]


def test_execute_unknown_table_and_column():
    with pytest.raises(UnknownTable):
        run_query("SELECT x FROM Nope", CATALOG)
    with pytest.raises(UnknownColumn):
        run_query("SELECT missing FROM People", CATALOG)
    both = {"A": Relation("A", (("x", "Int"),), []),
            "B": Relation("B", (("x", "Int"),), [])}
    with pytest.raises(UnknownColumn):
        run_query("SELECT x FROM A, B", both)


def test_type_mismatch_rejected():
    with pytest.raises(TypeMismatch):
        run_query("SELECT Name FROM People WHERE Age < 'ten'", CATALOG)
    with pytest.raises(TypeMismatch):
        run_query("SELECT Name FROM People WHERE Name = 3", CATALOG)
    with pytest.raises(TypeMismatch):
        run_query("SELECT Name FROM People, Pets ON Name = Age", CATALOG)


def test_null_never_satisfies_comparisons():
    assert run_query("SELECT Pet FROM Pets WHERE Owner = 'rockless'", CATALOG).rows == []
    rows = run_query("SELECT Pet FROM Pets WHERE Owner != 'ann'", CATALOG).rows
    assert rows == [("fish",)]  # the null-owner row is not "not ann"
    rows = run_query("SELECT Name FROM People WHERE Age >= 0", CATALOG).rows
    assert ("bob",) not in rows


def test_join_with_null_keys_drops_rows():
    rs = run_query(
        "SELECT Name, Pet FROM People AS P, Pets AS Q ON P.Name = Q.Owner", CATALOG)
    assert ("ann", "dog") in rs.rows and ("ann", "cat") in rs.rows
    assert all(name is not None for name, _ in rs.rows)


def test_cross_join_without_on():
    rs = run_query("SELECT Name, Pet FROM People AS P, Pets AS Q LIMIT 100", CATALOG)
    assert len(rs.rows) == len(PEOPLE.rows) * len(PETS.rows)


def test_order_by_desc_and_limit():
    rs = run_query("SELECT Age FROM People ORDER BY Age DESC LIMIT 2", CATALOG)
    assert rs.rows == [(40,), (31,)]


def test_execution_is_deterministic():
    q = "SELECT Name, Pet FROM People AS P, Pets AS Q ON P.Name = Q.Owner"
    first = run_query(q, CATALOG)
    for _ in range(3):
        assert run_query(q, CATALOG).rows == first.rows


# -- oracle equivalence -------------------------------------------------------


@pytest.mark.parametrize("seed", range(8))
def test_random_queries_match_oracle(seed):
    rng = random.Random(seed)
    catalog = random_catalog(rng, max_rows=60)
    for _ in range(40):
        ast = random_query(rng, catalog)
        engine = execute(ast, catalog)
        oracle = naive_execute(ast, catalog)
        assert engine.columns == oracle.columns
        assert engine.rows == oracle.rows, render_query(ast)


@pytest.mark.parametrize("seed", range(4))
def test_parser_round_trips_random_queries(seed):
    rng = random.Random(1000 + seed)
    catalog = random_catalog(rng, max_rows=10)
    for _ in range(50):
        ast = random_query(rng, catalog)
        text = render_query(ast)
        again = parse(text)
        assert again.select == ast.select
        assert again.where == ast.where
        assert again.join_on == ast.join_on
        assert again.order_by == ast.order_by
        assert again.limit == ast.limit
