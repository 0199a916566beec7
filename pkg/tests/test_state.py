from __future__ import annotations

import itertools

import pytest
from hypothesis import given
from hypothesis import strategies as st

from fsgme.memory import NativeMemory
from fsgme.state import (
    ALL_FLAGS,
    CONFLICT,
    LEADERLESS,
    RETIRED,
    VACANT,
    describe,
    is_adjourned,
    is_closed,
    mark_as_retired,
    set_guard_flag,
    set_vacant_flag,
    well_formed,
)


def cells(state: int, size: int = 0):
    mem = NativeMemory(1)
    base = mem.alloc(2)
    mem.poke(base, state)
    mem.poke(base + 1, size)
    return mem, base, base + 1


def lattice_oracle(state: int) -> bool:
    flags = {f: bool(state & f) for f in (LEADERLESS, CONFLICT, VACANT, RETIRED)}
    if state & ~0xF:
        return False
    if flags[RETIRED] and not flags[VACANT]:
        return False
    if flags[VACANT] and not (flags[LEADERLESS] and flags[CONFLICT]):
        return False
    if flags[RETIRED] and not all(flags.values()):
        return False
    return True


def test_lattice_matches_oracle_on_all_words():
    for state in range(32):
        assert well_formed(state) == lattice_oracle(state), describe(state)


def test_reachable_words_are_exactly_six():
    good = [s for s in range(16) if well_formed(s)]
    assert good == [0, LEADERLESS, CONFLICT, LEADERLESS | CONFLICT, LEADERLESS | CONFLICT | VACANT, ALL_FLAGS]


def test_closed_needs_both_guards():
    assert not is_closed(LEADERLESS)
    assert not is_closed(CONFLICT)
    assert is_closed(LEADERLESS | CONFLICT)
    assert is_adjourned(ALL_FLAGS)


@pytest.mark.parametrize("flag", [LEADERLESS, CONFLICT])
def test_guard_flag_sets_bit_once(flag):
    mem, state, _ = cells(0)
    assert set_guard_flag(mem, state, flag, 1) == 1
    assert mem.peek(state) == flag
    assert set_guard_flag(mem, state, flag, 1) == 0
    assert mem.peek(state) == flag


def test_guard_flag_rejects_other_bits():
    mem, state, _ = cells(0)
    with pytest.raises(ValueError):
        set_guard_flag(mem, state, VACANT, 1)


def test_guard_flag_retries_when_other_guard_lands():
    mem, state, _ = cells(0)
    real_cas = mem.cas
    fired = []

    def racing_cas(c, expected, new, p):
        if not fired:
            fired.append(True)
            mem.poke(state, CONFLICT)
        return real_cas(c, expected, new, p)

    mem.cas = racing_cas
    assert set_guard_flag(mem, state, LEADERLESS, 1) == 2
    assert mem.peek(state) == LEADERLESS | CONFLICT


@pytest.mark.parametrize(
    "state,size,expect",
    [
        (0, 0, False),
        (LEADERLESS, 0, False),
        (CONFLICT, 0, False),
        (LEADERLESS | CONFLICT, 1, False),
        (LEADERLESS | CONFLICT, 0, True),
    ],
)
def test_vacant_flag(state, size, expect):
    mem, s, z = cells(state, size)
    assert set_vacant_flag(mem, s, z, 1) is expect
    assert bool(mem.peek(s) & VACANT) is expect


def test_vacant_flag_cas_outcome_when_already_adjourned():
    # the CAS still succeeds (it rewrites the same word); callers only use
    # the result to decide whether to wake waiters, which is idempotent
    mem, s, z = cells(LEADERLESS | CONFLICT | VACANT, 0)
    assert set_vacant_flag(mem, s, z, 1) is True
    assert mem.peek(s) == LEADERLESS | CONFLICT | VACANT


def test_mark_as_retired_sets_everything():
    mem, s, _ = cells(LEADERLESS | CONFLICT | VACANT)
    mark_as_retired(mem, s, 1)
    assert mem.peek(s) == ALL_FLAGS
    assert well_formed(mem.peek(s))


@given(st.lists(st.sampled_from(["L", "C", "V"]), max_size=12))
def test_flag_operations_preserve_lattice(ops):
    mem, s, z = cells(0)
    for op in ops:
        if op == "L":
            set_guard_flag(mem, s, LEADERLESS, 1)
        elif op == "C":
            set_guard_flag(mem, s, CONFLICT, 1)
        else:
            set_vacant_flag(mem, s, z, 1)
        assert well_formed(mem.peek(s))


def test_describe_lists_names():
    assert describe(LEADERLESS | VACANT) == "{LEADERLESS,VACANT}"
    assert describe(0) == "{}"


def test_flags_are_distinct_bits():
    for a, b in itertools.combinations((LEADERLESS, CONFLICT, VACANT, RETIRED), 2):
        assert a & b == 0
