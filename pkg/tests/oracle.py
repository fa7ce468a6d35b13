"""Independent reference implementations used to check engine behavior.

Everything here is deliberately naive: the query evaluator materializes the
full cross product, the merge enumerator deduplicates raw permutations, and
the state oracle replays captured writes into plain dicts. None of it shares
code with the engine's execution paths.
"""

from __future__ import annotations

from itertools import permutations

from trod.querylang import ColRef, Literal, QueryAst, ResultSet


def _null_safe(op: str, a, b) -> bool:
    if a is None or b is None:
        return False
    if op == "=":
        return a == b
    if op == "!=":
        return a != b
    if op == "<":
        return a < b
    if op == "<=":
        return a <= b
    if op == ">":
        return a > b
    if op == ">=":
        return a >= b
    raise AssertionError(op)


def naive_execute(ast: QueryAst, catalog, aliases=None) -> ResultSet:
    """Nested-loop reference semantics, written from scratch."""
    aliases = aliases or {}
    rels = []
    bindings = []
    for ref in ast.tables:
        rel = catalog[aliases.get(ref.name, ref.name)]
        rels.append(rel)
        bindings.append(ref.alias or ref.name)

    def locate(col: ColRef):
        hits = []
        for side, rel in enumerate(rels):
            if col.qualifier is not None and col.qualifier != bindings[side]:
                continue
            for idx, (name, _t) in enumerate(rel.columns):
                if name == col.name:
                    hits.append((side, idx, name))
        assert len(hits) == 1, f"oracle resolution failed for {col}"
        return hits[0]

    if len(rels) == 2:
        tuples = [(l, r) for l in rels[0].rows for r in rels[1].rows]
        if ast.join_on is not None:
            ls, li, _ = locate(ast.join_on[0])
            rs_, ri, _ = locate(ast.join_on[1])
            assert ls != rs_

            def jkey(pair, side, idx):
                return pair[side][idx]

            tuples = [p for p in tuples
                      if _null_safe("=", jkey(p, ls, li), jkey(p, rs_, ri))]
    else:
        tuples = [(r, ()) for r in rels[0].rows]

    for cmp_ in ast.where:
        side, idx, _ = locate(cmp_.lhs)
        if isinstance(cmp_.rhs, Literal):
            tuples = [p for p in tuples if _null_safe(cmp_.op, p[side][idx], cmp_.rhs.value)]
        else:
            rside, ridx, _ = locate(cmp_.rhs)
            tuples = [p for p in tuples
                      if _null_safe(cmp_.op, p[side][idx], p[rside][ridx])]

    if ast.order_by is not None:
        side, idx, _ = locate(ast.order_by[0])
        ascending = ast.order_by[1]
        nulls = [p for p in tuples if p[side][idx] is None]
        rest = [p for p in tuples if p[side][idx] is not None]
        rest.sort(key=lambda p: p[side][idx], reverse=not ascending)
        tuples = nulls + rest if ascending else rest + nulls

    if ast.limit is not None:
        tuples = tuples[:ast.limit]

    proj = [locate(c) for c in ast.select]
    rows = [tuple(p[s][i] for s, i, _ in proj) for p in tuples]
    return ResultSet([n for _, _, n in proj], rows)


def all_merges(step_counts: dict[str, int]) -> set[tuple[str, ...]]:
    """Every order-preserving merge, via dedup over raw permutations.

    Steps of one request are indistinguishable labels, so deduplicated
    permutations of the label multiset are exactly the merges.
    """
    labels = [rid for rid, n in step_counts.items() for _ in range(n)]
    return set(permutations(labels))


def replay_log_oracle(schemas, writes_by_seq: dict[int, list], upto: int) -> dict:
    """State after applying captured writes 1..upto into plain dicts."""
    state = {s.name: {} for s in schemas}
    for seq in range(1, upto + 1):
        for op in writes_by_seq.get(seq, ()):  # ops within a commit, in order
            if op.after is None:
                state[op.table].pop(op.key, None)
            else:
                state[op.table][op.key] = op.after
    return state
