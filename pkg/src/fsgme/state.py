"""Session state word: four flags packed into one cell.

Bit 0 LEADERLESS and bit 1 CONFLICT are the guard flags; a session with both
set is closed.  VACANT marks an adjourned session and is only ever set on a
closed one.  RETIRED is stored together with the other three so that the
lattice RETIRED => VACANT => (LEADERLESS and CONFLICT) always holds.
"""

from __future__ import annotations

LEADERLESS = 1
CONFLICT = 2
VACANT = 4
RETIRED = 8

GUARDS = LEADERLESS | CONFLICT
ALL_FLAGS = LEADERLESS | CONFLICT | VACANT | RETIRED

_NAMES = ((LEADERLESS, "LEADERLESS"), (CONFLICT, "CONFLICT"), (VACANT, "VACANT"), (RETIRED, "RETIRED"))


def is_closed(state: int) -> bool:
    return state & GUARDS == GUARDS


def is_adjourned(state: int) -> bool:
    return bool(state & VACANT)


def is_retired(state: int) -> bool:
    return bool(state & RETIRED)


def well_formed(state: int) -> bool:
    """True iff ``state`` respects the flag implication lattice."""
    if state & ~ALL_FLAGS:
        return False
    if state & VACANT and not is_closed(state):
        return False
    if state & RETIRED and state != ALL_FLAGS:
        return False
    return True


def describe(state: int) -> str:
    names = [name for bit, name in _NAMES if state & bit]
    return "{" + ",".join(names) + "}"


def set_guard_flag(mem, state_cell: int, flag: int, p: int) -> int:
    """Set ``flag`` (LEADERLESS or CONFLICT) in the state word.

    Returns the number of CAS attempts made.  A CAS can only fail because the
    other guard flag landed, so at most two attempts are ever needed.
    """
    if flag != LEADERLESS and flag != CONFLICT:
        raise ValueError(f"not a guard flag: {flag!r}")
    attempts = 0
    while True:
        state = mem.read(state_cell, p)
        if state & flag:
            return attempts
        attempts += 1
        if mem.cas(state_cell, state, state | flag, p):
            return attempts


def set_vacant_flag(mem, state_cell: int, size_cell: int, p: int) -> bool:
    """Adjourn the session if it is closed and empty.

    Returns the outcome of the CAS that ORs in VACANT; both early exits
    (still open, participants remain) return False without writing.
    """
    state = mem.read(state_cell, p)
    if not is_closed(state):
        return False
    if mem.read(size_cell, p) != 0:
        return False
    return mem.cas(state_cell, state, state | VACANT, p)


def mark_as_retired(mem, state_cell: int, p: int) -> None:
    # plain store: the caller is the only process retiring this node
    mem.write(state_cell, ALL_FLAGS, p)
