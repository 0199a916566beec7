"""Passage event kinds shared by the lock implementations and trace recorders."""

from __future__ import annotations

ENTER_CALL = 0
ANNOUNCE = 1
ESTABLISHED = 2
RETIRE = 3
ENTER_RETURN = 4
EXIT_CALL = 5
EXIT_RETURN = 6

KIND_NAMES = (
    "ENTER_CALL",
    "ANNOUNCE",
    "SESSION_ESTABLISHED",
    "RETIRE",
    "ENTER_RETURN",
    "EXIT_CALL",
    "EXIT_RETURN",
)
ALL_KINDS = frozenset(range(len(KIND_NAMES)))


def recorders_by_kind(recorder) -> tuple:
    """``out[kind]`` is ``recorder`` if it keeps events of that kind, else None.

    A recorder may define ``wants(kind)``; without it every kind is kept.
    Lock code looks its recorder up here so that skipped kinds cost nothing.
    """
    if recorder is None:
        return (None,) * len(KIND_NAMES)
    wants = getattr(recorder, "wants", None)
    return tuple(recorder if wants is None or wants(k) else None for k in range(len(KIND_NAMES)))
