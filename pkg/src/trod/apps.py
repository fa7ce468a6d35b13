"""Built-in case-study applications and canned workloads.

These are distilled reproductions of real bug patterns in database-backed web
applications, small enough to run end-to-end with zero setup:

- ``moodle_forum``: a check-then-insert subscription race. Version v1 splits
  the existence check and the insert into two transactions, so two interleaved
  requests can both pass the check and insert duplicates; the follow-up fetch
  raises on the duplicate. Version v2 wraps check and insert in one
  transaction.
- ``user_profiles``: profile updates record who performed them, so an audit
  query can flag updates not made by the profile owner.
- ``wiki_pages`` (stretch fixture): a non-atomic two-table edit where the
  page body and its link table are updated in separate transactions, letting
  concurrent edits duplicate link rows. Exercises nested handler calls.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .runtime import AppDef, Registry, Request, WorkloadSpec
from .store import Column, TableSchema

DUPLICATE_SUBSCRIBER_ERROR = "Duplicated values in column userId"
DUPLICATE_LINK_ERROR = "Duplicated site link"


@dataclass
class CaseStudy:
    app: AppDef
    workloads: dict[str, WorkloadSpec] = field(default_factory=dict)
    queries: dict[str, str] = field(default_factory=dict)


def builtin_registry() -> Registry:
    registry = Registry()
    for case in (moodle_forum(), user_profiles(), wiki_pages()):
        registry.register(case.app)
    return registry


def case_study(name: str) -> CaseStudy:
    cases = {"moodle-forum": moodle_forum, "user-profiles": user_profiles,
             "wiki-pages": wiki_pages}
    if name not in cases:
        raise KeyError(name)
    return cases[name]()


# ---------------------------------------------------------------------------
# Forum subscriptions (check-then-insert race, two-transaction handler)
# ---------------------------------------------------------------------------

FORUM_QUERY = """\
SELECT Timestamp, ReqId, HandlerName
FROM Executions as E, ForumEvents as F
  ON E.TxnId = F.TxnId
WHERE F.UserId = 'U1' AND F.Forum = 'F2'
  AND F.Type = 'Insert'
ORDER BY Timestamp ASC;"""


def _subscribe_user_v1(ctx, user_id, forum):
    subscribed = yield ctx.txn("isSubscribed", lambda t: bool(
        t.scan_eq("forum_sub", {"userId": user_id, "forum": forum})))
    if subscribed:
        return True
    result = yield ctx.txn("DB.insert", lambda t: bool(
        t.insert("forum_sub", {"userId": user_id, "forum": forum})))
    return result


def _subscribe_user_v2(ctx, user_id, forum):
    # Fix: check and insert inside one transaction.
    def body(t):
        if t.scan_eq("forum_sub", {"userId": user_id, "forum": forum}):
            return True
        t.insert("forum_sub", {"userId": user_id, "forum": forum})
        return True
    result = yield ctx.txn("subscribe", body)
    return result


def _fetch_subscribers(ctx, forum):
    rows = yield ctx.txn("DB.executeQuery", lambda t: [
        r["userId"] for r in t.scan_eq("forum_sub", {"forum": forum})])
    if len(set(rows)) != len(rows):
        raise ValueError(DUPLICATE_SUBSCRIBER_ERROR)
    return rows


def moodle_forum() -> CaseStudy:
    schema = TableSchema(
        name="forum_sub",
        columns=(Column("userId", "Text"), Column("forum", "Text")),
        pk=None,
        events_alias="ForumEvents",
    )
    app = AppDef(
        name="moodle-forum",
        schemas=[schema],
        versions={
            "v1": {"subscribeUser": _subscribe_user_v1,
                   "fetchSubscribers": _fetch_subscribers},
            "v2": {"subscribeUser": _subscribe_user_v2,
                   "fetchSubscribers": _fetch_subscribers},
        },
    )
    requests = [
        Request("R1", "subscribeUser", ("U1", "F2")),
        Request("R2", "subscribeUser", ("U1", "F2")),
        Request("R3", "fetchSubscribers", ("F2",)),
    ]
    racy = WorkloadSpec(
        app="moodle-forum", code_version="v1", requests=requests,
        schedule=[("R1", 1), ("R2", 1), ("R2", 2), ("R1", 2), ("R3", 1)],
    )
    serial = WorkloadSpec(
        app="moodle-forum", code_version="v1", requests=requests,
        schedule=[("R1", 1), ("R1", 2), ("R2", 1), ("R2", 2), ("R3", 1)],
    )
    fixed_racy = WorkloadSpec(
        app="moodle-forum", code_version="v2", requests=requests,
        schedule=[("R1", 1), ("R2", 1), ("R3", 1)],
    )
    return CaseStudy(
        app=app,
        workloads={"racy": racy, "serial": serial, "fixed-racy": fixed_racy},
        queries={"duplicate-inserts": FORUM_QUERY},
    )


# ---------------------------------------------------------------------------
# User profiles (access-control audit)
# ---------------------------------------------------------------------------

PROFILE_QUERY = """\
SELECT Timestamp, ReqId, HandlerName
FROM Executions as E, ProfileEvents as P
  ON E.TxnId = P.TxnId
WHERE P.UserName != P.UpdatedBy AND P.Type = 'Update'"""


def _create_profile(ctx, user_name, bio):
    created = yield ctx.txn("DB.insert", lambda t: bool(t.insert(
        "profiles", {"userName": user_name, "bio": bio, "updatedBy": user_name})))
    return created


def _update_profile(ctx, actor, user_name, bio):
    def body(t):
        rows = t.scan_eq("profiles", {"userName": user_name})
        if not rows:
            return False
        return t.update("profiles", rows[0].key, {"bio": bio, "updatedBy": actor})
    updated = yield ctx.txn("DB.update", body)
    return updated


def user_profiles() -> CaseStudy:
    schema = TableSchema(
        name="profiles",
        columns=(Column("userName", "Text"), Column("bio", "Text", nullable=True),
                 Column("updatedBy", "Text")),
        pk=("userName",),
        events_alias="ProfileEvents",
    )
    app = AppDef(
        name="user-profiles",
        schemas=[schema],
        versions={
            "v1": {"createProfile": _create_profile, "updateProfile": _update_profile},
        },
    )
    workload = WorkloadSpec(
        app="user-profiles", code_version="v1",
        requests=[
            Request("P1", "createProfile", ("alice", "hello")),
            Request("P2", "createProfile", ("mallory", "hi")),
            Request("P3", "updateProfile", ("alice", "alice", "self update")),
            Request("P4", "updateProfile", ("mallory", "alice", "defaced")),
        ],
    )
    self_only = WorkloadSpec(
        app="user-profiles", code_version="v1",
        requests=[
            Request("P1", "createProfile", ("alice", "hello")),
            Request("P2", "updateProfile", ("alice", "alice", "self update")),
        ],
    )
    return CaseStudy(
        app=app,
        workloads={"audit": workload, "self-only": self_only},
        queries={"illegal-updates": PROFILE_QUERY},
    )


# ---------------------------------------------------------------------------
# Wiki pages (stretch fixture: non-atomic two-table edit, nested handlers)
# ---------------------------------------------------------------------------


def _edit_page(ctx, title, content, url):
    def save(t):
        if t.scan_eq("pages", {"title": title}):
            return t.update("pages", (title,), {"content": content})
        t.insert("pages", {"title": title, "content": content})
        return True
    saved = yield ctx.txn("savePage", save)
    linked = yield from ctx.call("updateLinks", title, url)
    return saved and linked


def _update_links(ctx, title, url):
    exists = yield ctx.txn("checkLink", lambda t: bool(
        t.scan_eq("site_links", {"title": title, "url": url})))
    if exists:
        return True
    added = yield ctx.txn("insertLink", lambda t: bool(
        t.insert("site_links", {"title": title, "url": url})))
    return added


def _list_links(ctx, title):
    urls = yield ctx.txn("listLinks", lambda t: [
        r["url"] for r in t.scan_eq("site_links", {"title": title})])
    if len(set(urls)) != len(urls):
        raise ValueError(DUPLICATE_LINK_ERROR)
    return urls


def wiki_pages() -> CaseStudy:
    pages = TableSchema(
        name="pages",
        columns=(Column("title", "Text"), Column("content", "Text", nullable=True)),
        pk=("title",),
    )
    links = TableSchema(
        name="site_links",
        columns=(Column("title", "Text"), Column("url", "Text")),
        pk=None,
        events_alias="SiteLinkEvents",
    )
    app = AppDef(
        name="wiki-pages",
        schemas=[pages, links],
        versions={
            "v1": {"editPage": _edit_page, "updateLinks": _update_links,
                   "listLinks": _list_links},
        },
    )
    racy = WorkloadSpec(
        app="wiki-pages", code_version="v1",
        requests=[
            Request("W1", "editPage", ("Home", "first", "https://a.example")),
            Request("W2", "editPage", ("Home", "second", "https://a.example")),
            Request("W3", "listLinks", ("Home",)),
        ],
        schedule=[("W1", 1), ("W2", 1), ("W1", 2), ("W2", 2),
                  ("W1", 3), ("W2", 3), ("W3", 1)],
    )
    return CaseStudy(app=app, workloads={"racy": racy})
