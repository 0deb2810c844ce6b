"""Observed-history data model, on-disk line format, and read-anomaly checks.

A history file is UTF-8, one event per line, ``#`` starts a comment::

    I <key> <attr>=<int>...
    B <txn> <session> <start_ticks>
    R <txn> <key> <vid>
    W <txn> <key> <vid> <attr>=<int>...
    PR <txn> <pred> [<key>:<vid> ...]
    PW <txn> <pred> [<key>:<oldvid>-><newvid>(<attr>=<int>,...) ...]
    C <txn> <end_ticks>
    A <txn> <end_ticks>

Predicates look like ``table:t;v1>=3&v1<9``.  Keys are ``<table>.<name>``.
"""

from __future__ import annotations

import operator
import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Iterator, Mapping, Sequence, Union

INIT_VID = 0

COMMITTED = "COMMITTED"
ABORTED = "ABORTED"

Attrs = tuple[tuple[str, int], ...]

_OPS = {
    "=": operator.eq,
    "!=": operator.ne,
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
}

_CLAUSE_RE = re.compile(r"^([A-Za-z_][\w]*)(!=|<=|>=|=|<|>)(-?\d+)$")
_ATTR_RE = re.compile(r"^([A-Za-z_][\w]*)=(-?\d+)$")
_PW_ENTRY_RE = re.compile(r"([^\s:\[\]]+):(\d+)->(\d+)\(([^)]*)\)")


class HistoryParseError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno
        self.message = message


class InvalidHistory(ValueError):
    """Raised when a history violates the model; carries every violation found."""

    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations) or "invalid history")


def table_of(key: str) -> str:
    return key.split(".", 1)[0]


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Predicate:
    table: str
    clauses: tuple[tuple[str, str, int], ...]

    def __str__(self) -> str:
        body = "&".join(f"{a}{op}{c}" for a, op, c in self.clauses)
        return f"table:{self.table};{body}"

    @classmethod
    def parse(cls, text: str) -> "Predicate":
        if not text.startswith("table:") or ";" not in text:
            raise ValueError(f"bad predicate {text!r}")
        table, _, body = text[len("table:"):].partition(";")
        if not table or not body:
            raise ValueError(f"bad predicate {text!r}")
        clauses = []
        for part in body.split("&"):
            m = _CLAUSE_RE.match(part)
            if not m:
                raise ValueError(f"bad predicate clause {part!r}")
            clauses.append((m.group(1), m.group(2), int(m.group(3))))
        return cls(table, tuple(clauses))

    @property
    def attributes(self) -> set[str]:
        return {a for a, _, _ in self.clauses}


@dataclass(frozen=True)
class Read:
    key: str
    vid: int


@dataclass(frozen=True)
class Write:
    key: str
    vid: int
    attrs: Attrs


@dataclass(frozen=True)
class PredicateRead:
    pred: Predicate
    matched: tuple[tuple[str, int], ...]


@dataclass(frozen=True)
class PredicateUpdate:
    key: str
    old_vid: int
    new_vid: int
    attrs: Attrs


@dataclass(frozen=True)
class PredicateWrite:
    pred: Predicate
    matched: tuple[PredicateUpdate, ...]


Operation = Union[Read, Write, PredicateRead, PredicateWrite]


@dataclass(frozen=True)
class Transaction:
    id: int
    session: int
    start: int
    end: int
    status: str
    ops: tuple[Operation, ...]

    @property
    def committed(self) -> bool:
        return self.status == COMMITTED


@dataclass(frozen=True)
class Version:
    key: str
    vid: int
    attrs: Attrs
    writer: int | None  # None for the initial version
    final: bool  # last write of this key by its writer


@dataclass(frozen=True)
class UnknownRead:
    """A predicate read that evaluated some version of ``key`` to false."""

    txn: int
    op_index: int
    pred: Predicate
    key: str


@dataclass(frozen=True)
class AbortedRead:
    reader: int
    writer: int
    key: str
    vid: int


@dataclass(frozen=True)
class IntermediateRead:
    reader: int
    writer: int
    key: str
    vid: int


ReadAnomaly = Union[AbortedRead, IntermediateRead]


@dataclass(frozen=True)
class ObservedHistory:
    transactions: tuple[Transaction, ...] = ()
    initial: Mapping[str, Attrs] = field(default_factory=dict)

    def __iter__(self) -> Iterator[Transaction]:
        return iter(self.transactions)

    @cached_property
    def by_id(self) -> dict[int, Transaction]:
        return {t.id: t for t in self.transactions}

    @property
    def committed(self) -> list[Transaction]:
        return [t for t in self.transactions if t.committed]

    @cached_property
    def versions(self) -> dict[tuple[str, int], Version]:
        out: dict[tuple[str, int], Version] = {}
        for key, attrs in self.initial.items():
            out[(key, INIT_VID)] = Version(key, INIT_VID, attrs, None, True)
        for t in self.transactions:
            last = {}
            for key, vid, _ in _writes_of(t):
                last[key] = vid
            for key, vid, attrs in _writes_of(t):
                out.setdefault((key, vid), Version(key, vid, attrs, t.id, last[key] == vid))
        return out

    @cached_property
    def keys(self) -> list[str]:
        """Keys that exist: declared initially or installed by a committed transaction."""
        found = set(self.initial)
        for t in self.transactions:
            if t.committed:
                found.update(k for k, _, _ in _writes_of(t))
        return sorted(found)

    def scope(self, table: str) -> list[str]:
        return [k for k in self.keys if table_of(k) == table]

    @cached_property
    def unknown_reads(self) -> list[UnknownRead]:
        return list(_unknown_reads(self))

    @cached_property
    def installed(self) -> dict[int, dict[str, int]]:
        return {t.id: installed_writes(t) for t in self.transactions if t.committed}


# ---------------------------------------------------------------------------
# Operation helpers
# ---------------------------------------------------------------------------


def _writes_of(t: Transaction) -> Iterator[tuple[str, int, Attrs]]:
    for op in t.ops:
        if isinstance(op, Write):
            yield op.key, op.vid, op.attrs
        elif isinstance(op, PredicateWrite):
            for u in op.matched:
                yield u.key, u.new_vid, u.attrs


def item_reads(t: Transaction) -> Iterator[tuple[int, str, int]]:
    """(op index, key, vid) for every read with a known version, θ-matches included."""
    for i, op in enumerate(t.ops):
        if isinstance(op, Read):
            yield i, op.key, op.vid
        elif isinstance(op, PredicateRead):
            for key, vid in op.matched:
                yield i, key, vid
        elif isinstance(op, PredicateWrite):
            for u in op.matched:
                yield i, u.key, u.old_vid


def installed_writes(t: Transaction) -> dict[str, int]:
    """Map each key written by ``t`` to the vid of its last write."""
    out: dict[str, int] = {}
    for key, vid, _ in _writes_of(t):
        out[key] = vid
    return out


def eval_predicate(pred: Predicate, attrs: Mapping[str, int] | Attrs) -> bool:
    values = attrs if type(attrs) is dict or isinstance(attrs, Mapping) else dict(attrs)
    for name, op, const in pred.clauses:
        if name not in values:
            raise InvalidHistory([f"attribute {name!r} missing for predicate {pred}"])
        if not _OPS[op](values[name], const):
            return False
    return True


def _own_versions_before(t: Transaction, index: int) -> dict[str, int]:
    own: dict[str, int] = {}
    for op in t.ops[:index]:
        if isinstance(op, Write):
            own[op.key] = op.vid
        elif isinstance(op, PredicateWrite):
            for u in op.matched:
                own[u.key] = u.new_vid
    return own


def _unknown_reads(h: ObservedHistory) -> Iterator[UnknownRead]:
    # Keys already written by the reader itself are answered by its own
    # version and are not unknown.
    for t in h.transactions:
        if not t.committed:
            continue
        for i, op in enumerate(t.ops):
            if isinstance(op, PredicateRead):
                seen = {k for k, _ in op.matched}
            elif isinstance(op, PredicateWrite):
                seen = {u.key for u in op.matched}
            else:
                continue
            own = _own_versions_before(t, i)
            for key in h.scope(op.pred.table):
                if key not in seen and key not in own:
                    yield UnknownRead(t.id, i, op.pred, key)


# ---------------------------------------------------------------------------
# Validation and anomalies
# ---------------------------------------------------------------------------


def validate(h: ObservedHistory) -> list[str]:
    """Return every model violation in ``h`` (empty when valid)."""
    problems: list[str] = []
    seen_ids: set[int] = set()
    writes: dict[tuple[str, int], int] = {}
    for t in h.transactions:
        if t.id in seen_ids:
            problems.append(f"duplicate transaction id {t.id}")
        seen_ids.add(t.id)
        if t.status not in (COMMITTED, ABORTED):
            problems.append(f"txn {t.id}: not terminated")
        if not t.start < t.end:
            problems.append(f"txn {t.id}: start {t.start} not before end {t.end}")
        if t.committed and not t.ops:
            problems.append(f"txn {t.id}: committed with no operations")
        for key, vid, _ in _writes_of(t):
            if vid == INIT_VID:
                problems.append(f"txn {t.id}: write to reserved vid 0 of {key}")
            elif (key, vid) in writes and writes[(key, vid)] != t.id:
                problems.append(f"{key}:{vid} written by txns {writes[(key, vid)]} and {t.id}")
            elif (key, vid) in writes:
                problems.append(f"txn {t.id}: writes {key}:{vid} twice")
            writes[(key, vid)] = t.id

    versions = h.versions
    # per table: attributes every version has, and a version lacking each other one
    common: dict[str, set[str]] = {}
    lacking: dict[str, dict[str, tuple[str, int]]] = {}
    by_table: dict[str, list[tuple[tuple[str, int], set[str]]]] = {}
    for (key, vid), v in versions.items():
        by_table.setdefault(table_of(key), []).append(((key, vid), {a for a, _ in v.attrs}))
    for table, rows in by_table.items():
        every = set.intersection(*(names for _, names in rows))
        union = set.union(*(names for _, names in rows))
        common[table] = every
        lacking[table] = {a: next(kv for kv, names in rows if a not in names) for a in union - every}

    for t in h.transactions:
        for _, key, vid in item_reads(t):
            if (key, vid) not in versions:
                problems.append(f"txn {t.id}: reads dangling version {key}:{vid}")
        for i, op in enumerate(t.ops):
            if not isinstance(op, (PredicateRead, PredicateWrite)):
                continue
            pred = op.pred
            needed = pred.attributes
            if pred.table in common:
                for a in sorted(needed - common[pred.table]):
                    key, vid = lacking[pred.table].get(a, next(iter(by_table[pred.table]))[0])
                    problems.append(f"txn {t.id}: predicate {pred} needs {[a]} absent from {key}:{vid}")
            if isinstance(op, PredicateRead):
                pairs = list(op.matched)
            else:
                pairs = [(u.key, u.old_vid) for u in op.matched]
            if len({k for k, _ in pairs}) != len(pairs):
                problems.append(f"txn {t.id}: predicate op {i} matches a key twice")
            for key, vid in pairs:
                if table_of(key) != pred.table:
                    problems.append(f"txn {t.id}: {key} outside predicate table {pred.table}")
                    continue
                v = versions.get((key, vid))
                if v is None:
                    continue
                try:
                    if not eval_predicate(pred, v.attrs):
                        problems.append(f"txn {t.id}: matched {key}:{vid} does not satisfy {pred}")
                except InvalidHistory:
                    pass
            if not t.committed:
                continue
            own = _own_versions_before(t, i)
            matched_keys = {k for k, _ in pairs}
            for key in h.scope(pred.table):
                if key in own and key not in matched_keys:
                    v = versions.get((key, own[key]))
                    try:
                        if v is not None and eval_predicate(pred, v.attrs):
                            problems.append(
                                f"txn {t.id}: own version {key}:{own[key]} satisfies {pred} but was not matched"
                            )
                    except InvalidHistory:
                        pass
    # de-duplicate while keeping order
    return list(dict.fromkeys(problems))


def detect_read_anomalies(h: ObservedHistory) -> list[ReadAnomaly]:
    versions = h.versions
    found: list[ReadAnomaly] = []
    dangling = []
    for t in h.transactions:
        if not t.committed:
            continue
        for _, key, vid in item_reads(t):
            v = versions.get((key, vid))
            if v is None:
                dangling.append(f"txn {t.id}: reads dangling version {key}:{vid}")
                continue
            if v.writer is None or v.writer == t.id:
                continue
            writer = h.by_id[v.writer]
            if not writer.committed:
                found.append(AbortedRead(t.id, writer.id, key, vid))
            elif not v.final:
                found.append(IntermediateRead(t.id, writer.id, key, vid))
    if dangling:
        raise InvalidHistory(dangling)
    return found


# ---------------------------------------------------------------------------
# Parsing and serialization
# ---------------------------------------------------------------------------


def _parse_attrs(tokens: Iterable[str], lineno: int) -> Attrs:
    out = []
    for tok in tokens:
        m = _ATTR_RE.match(tok)
        if not m:
            raise HistoryParseError(lineno, f"bad attribute {tok!r}")
        out.append((m.group(1), int(m.group(2))))
    return tuple(out)


def _uint(tok: str, lineno: int, what: str) -> int:
    if not tok.isdigit():
        raise HistoryParseError(lineno, f"bad {what} {tok!r}")
    return int(tok)


def _bracketed(rest: str, lineno: int) -> str:
    rest = rest.strip()
    if not (rest.startswith("[") and rest.endswith("]")):
        raise HistoryParseError(lineno, "expected bracketed match list")
    return rest[1:-1].strip()


class _TxnBuilder:
    __slots__ = ("id", "session", "start", "end", "status", "ops")

    def __init__(self, tid: int, session: int, start: int):
        self.id, self.session, self.start = tid, session, start
        self.end = 0
        self.status = ""
        self.ops: list[Operation] = []


def parse_history(data: bytes | str) -> ObservedHistory:
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    initial: dict[str, Attrs] = {}
    txns: dict[int, _TxnBuilder] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tag, _, rest = line.partition(" ")
        parts = rest.split()
        if tag == "I":
            if not parts:
                raise HistoryParseError(lineno, "I needs a key")
            if parts[0] in initial:
                raise HistoryParseError(lineno, f"duplicate initial version for {parts[0]}")
            initial[parts[0]] = _parse_attrs(parts[1:], lineno)
            continue
        if not parts:
            raise HistoryParseError(lineno, f"{tag} needs a transaction id")
        tid = _uint(parts[0], lineno, "transaction id")
        if tag == "B":
            if len(parts) != 3:
                raise HistoryParseError(lineno, "B <txn> <session> <start_ticks>")
            if tid in txns:
                raise HistoryParseError(lineno, f"duplicate transaction id {tid}")
            txns[tid] = _TxnBuilder(tid, _uint(parts[1], lineno, "session"), _uint(parts[2], lineno, "ticks"))
            continue
        t = txns.get(tid)
        if t is None:
            raise HistoryParseError(lineno, f"transaction {tid} used before B")
        if t.status:
            raise HistoryParseError(lineno, f"transaction {tid} already terminated")
        if tag in ("C", "A"):
            if len(parts) != 2:
                raise HistoryParseError(lineno, f"{tag} <txn> <end_ticks>")
            t.end = _uint(parts[1], lineno, "ticks")
            t.status = COMMITTED if tag == "C" else ABORTED
        elif tag == "R":
            if len(parts) != 3:
                raise HistoryParseError(lineno, "R <txn> <key> <vid>")
            t.ops.append(Read(parts[1], _uint(parts[2], lineno, "vid")))
        elif tag == "W":
            if len(parts) < 3:
                raise HistoryParseError(lineno, "W <txn> <key> <vid> <attr>=<int>...")
            vid = _uint(parts[2], lineno, "vid")
            if vid == INIT_VID:
                raise HistoryParseError(lineno, "write to reserved vid 0")
            t.ops.append(Write(parts[1], vid, _parse_attrs(parts[3:], lineno)))
        elif tag in ("PR", "PW"):
            if len(parts) < 3:
                raise HistoryParseError(lineno, f"{tag} <txn> <pred> [...]")
            try:
                pred = Predicate.parse(parts[1])
            except ValueError as exc:
                raise HistoryParseError(lineno, str(exc)) from None
            body = _bracketed(rest.split(None, 2)[2], lineno)
            if tag == "PR":
                matched = []
                for tok in body.split():
                    key, sep, vid = tok.rpartition(":")
                    if not sep or not key:
                        raise HistoryParseError(lineno, f"bad match {tok!r}")
                    matched.append((key, _uint(vid, lineno, "vid")))
                t.ops.append(PredicateRead(pred, tuple(matched)))
            else:
                updates = []
                pos = 0
                for m in _PW_ENTRY_RE.finditer(body):
                    if body[pos:m.start()].strip():
                        raise HistoryParseError(lineno, f"bad update list {body!r}")
                    pos = m.end()
                    new_vid = int(m.group(3))
                    if new_vid == INIT_VID:
                        raise HistoryParseError(lineno, "write to reserved vid 0")
                    attr_toks = [a for a in re.split(r"[,\s]+", m.group(4)) if a]
                    updates.append(
                        PredicateUpdate(m.group(1), int(m.group(2)), new_vid, _parse_attrs(attr_toks, lineno))
                    )
                if body[pos:].strip():
                    raise HistoryParseError(lineno, f"bad update list {body!r}")
                t.ops.append(PredicateWrite(pred, tuple(updates)))
        else:
            raise HistoryParseError(lineno, f"unknown record {tag!r}")
    transactions = tuple(
        Transaction(b.id, b.session, b.start, b.end, b.status, tuple(b.ops)) for b in txns.values()
    )
    return ObservedHistory(transactions, initial)


def load_history(path) -> ObservedHistory:
    with open(path, "rb") as fh:
        return parse_history(fh.read())


def _fmt_attrs(attrs: Attrs, sep: str = " ") -> str:
    return sep.join(f"{a}={v}" for a, v in attrs)


def format_op(txn: int, op: Operation) -> str:
    if isinstance(op, Read):
        return f"R {txn} {op.key} {op.vid}"
    if isinstance(op, Write):
        tail = f" {_fmt_attrs(op.attrs)}" if op.attrs else ""
        return f"W {txn} {op.key} {op.vid}{tail}"
    if isinstance(op, PredicateRead):
        body = " ".join(f"{k}:{v}" for k, v in op.matched)
        return f"PR {txn} {op.pred} [{body}]"
    body = " ".join(f"{u.key}:{u.old_vid}->{u.new_vid}({_fmt_attrs(u.attrs, ',')})" for u in op.matched)
    return f"PW {txn} {op.pred} [{body}]"


def serialize_history(h: ObservedHistory) -> str:
    """Canonical text: initial versions sorted by key, then one block per transaction."""
    lines = []
    for key in sorted(h.initial):
        attrs = h.initial[key]
        lines.append(f"I {key} {_fmt_attrs(attrs)}".rstrip())
    for t in h.transactions:
        lines.append(f"B {t.id} {t.session} {t.start}")
        lines.extend(format_op(t.id, op) for op in t.ops)
        lines.append(f"{'C' if t.committed else 'A'} {t.id} {t.end}")
    return "\n".join(lines) + ("\n" if lines else "")
