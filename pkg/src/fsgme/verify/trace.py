"""Passage event traces.

Every event carries a global ticket so that events emitted by different
processes can be merged into one order.  Each process appends only to its
own log, which keeps recording safe under real threads without a lock.
"""

from __future__ import annotations

import itertools
from array import array
from collections.abc import Iterable, Iterator
from dataclasses import dataclass

from ..events import (
    ALL_KINDS,
    ANNOUNCE,
    ENTER_CALL,
    ENTER_RETURN,
    ESTABLISHED,
    EXIT_CALL,
    EXIT_RETURN,
    KIND_NAMES,
    RETIRE,
)

CS_KINDS = frozenset({ENTER_RETURN, EXIT_CALL})


@dataclass(frozen=True, order=True)
class TraceEvent:
    seq: int
    pid: int
    instance: int
    session: int
    kind: int

    @property
    def kind_name(self) -> str:
        return KIND_NAMES[self.kind]

    def __str__(self) -> str:
        return f"#{self.seq} p{self.pid} i{self.instance} s{self.session} {self.kind_name}"


class TraceRecorder:
    """Collects events; pass as ``recorder=`` to a lock system.

    ``kinds`` limits which events are kept.  Lock code asks :meth:`wants`
    first and skips the ticket for unwanted kinds; kept events still get
    tickets in the order they happened.
    """

    ENTER_CALL = ENTER_CALL
    ANNOUNCE = ANNOUNCE
    ESTABLISHED = ESTABLISHED
    RETIRE = RETIRE
    ENTER_RETURN = ENTER_RETURN
    EXIT_CALL = EXIT_CALL
    EXIT_RETURN = EXIT_RETURN

    def __init__(self, nprocs: int, kinds: Iterable[int] = ALL_KINDS) -> None:
        self.nprocs = nprocs
        self.kinds = frozenset(kinds)
        self._mask = sum(1 << k for k in self.kinds)
        # next() on itertools.count is atomic under the GIL: one shared ticket counter
        self.ticket = itertools.count(1).__next__
        self._logs = [array("q") for _ in range(nprocs + 1)]

    def wants(self, kind: int) -> bool:
        return kind in self.kinds

    def record(self, seq: int, pid: int, instance: int, session: int, kind: int) -> None:
        if self._mask >> kind & 1:
            self._logs[pid].extend((seq, instance, session, kind))

    def __len__(self) -> int:
        return sum(len(log) for log in self._logs) // 4

    def events(self) -> list[TraceEvent]:
        """All kept events in ticket order."""
        out = []
        for pid, log in enumerate(self._logs):
            for i in range(0, len(log), 4):
                out.append(TraceEvent(log[i], pid, log[i + 1], log[i + 2], log[i + 3]))
        out.sort()
        return out

    def rows(self) -> Iterator[tuple[int, int, int, int, int]]:
        """Plain ``(seq, pid, instance, session, kind)`` tuples in ticket order;
        much cheaper than :meth:`events` for long traces."""
        rows = []
        for pid, log in enumerate(self._logs):
            it = iter(log)
            rows.extend((seq, pid, inst, sess, kind) for seq, inst, sess, kind in zip(it, it, it, it))
        rows.sort()
        return iter(rows)


def as_rows(trace) -> Iterator[tuple[int, int, int, int, int]]:
    """Accept a recorder, or any iterable of events or 5-tuples."""
    if isinstance(trace, TraceRecorder):
        return trace.rows()
    rows = [
        (e.seq, e.pid, e.instance, e.session, e.kind) if isinstance(e, TraceEvent) else tuple(e)
        for e in trace
    ]
    rows.sort()
    return iter(rows)
