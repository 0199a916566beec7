from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import fsgme.core as core
from fsgme.core import GmeSystem, SystemConfig
from fsgme.layout import SIZE, STATE
from fsgme.memory import NativeMemory
from fsgme.state import VACANT
from fsgme.verify import checks
from fsgme.sim import sim_run
from fsgme.verify.explore import Scenario, World, explore_exhaustive, explore_random, replay
from fsgme.verify.monitors import StateInvariants
from fsgme.verify.trace import (
    ANNOUNCE,
    ENTER_CALL,
    ENTER_RETURN,
    ESTABLISHED,
    EXIT_CALL,
    EXIT_RETURN,
    TraceEvent,
)


def cs(seq, pid, inst, sess, length=2):
    return [(seq, pid, inst, sess, ENTER_RETURN), (seq + length, pid, inst, sess, EXIT_CALL)]


# -- check_gme ---------------------------------------------------------------------


def test_gme_same_session_overlap_passes():
    assert checks.check_gme(cs(1, 1, 1, 3, 5) + cs(2, 2, 1, 3, 5))


def test_gme_conflicting_overlap_fails_with_both_events():
    verdict = checks.check_gme(cs(1, 1, 1, 3, 5) + cs(2, 2, 1, 5, 5))
    assert not verdict
    first, second = verdict.counterexample
    assert (first.pid, first.session, second.pid, second.session) == (1, 3, 2, 5)
    assert verdict.stats["violations"] == 1


def test_gme_is_per_instance():
    assert checks.check_gme(cs(1, 1, 1, 3, 5) + cs(2, 2, 2, 5, 5))


def test_gme_sequential_conflicting_sessions_pass():
    assert checks.check_gme(cs(1, 1, 1, 3) + cs(10, 2, 1, 5))


def test_gme_accepts_events_in_any_order():
    rows = cs(1, 1, 1, 3, 5) + cs(2, 2, 1, 5, 5)
    events = [TraceEvent(*r) for r in reversed(rows)]
    assert not checks.check_gme(events)


@pytest.mark.parametrize(
    "rows",
    [
        [(1, 1, 1, 3, EXIT_CALL)],
        [(1, 1, 1, 3, ENTER_RETURN), (2, 1, 1, 3, ENTER_RETURN)],
    ],
)
def test_malformed_trace_is_a_harness_error(rows):
    with pytest.raises(checks.TraceError):
        checks.check_gme(rows)


def test_max_concurrency():
    rows = cs(1, 1, 1, 3, 10) + cs(2, 2, 1, 3, 10) + cs(3, 3, 1, 3, 10) + cs(50, 1, 2, 4)
    assert checks.max_concurrency(rows) == {1: 3, 2: 1}


# -- passages and contention ---------------------------------------------------------


def passage_rows(seq, pid, inst, sess, gap=1):
    kinds = (ENTER_CALL, ANNOUNCE, ENTER_RETURN, EXIT_CALL, EXIT_RETURN)
    return [(seq + i * gap, pid, inst, sess, k) for i, k in enumerate(kinds)]


def test_event_outside_passage_is_rejected():
    with pytest.raises(checks.TraceError):
        checks.passages([(1, 1, 1, 3, ANNOUNCE)])
    with pytest.raises(checks.TraceError):
        checks.passages([(1, 1, 1, 3, ENTER_CALL), (2, 1, 1, 3, ENTER_CALL)])


def test_solitary_passage():
    rows = passage_rows(1, 1, 1, 3, gap=2) + [(4, 1, 1, 3, ESTABLISHED)]
    verdict = checks.check_context_switch(rows, n=1)
    assert verdict and verdict.stats["establishments"] == 1
    assert checks.check_context_switch(passage_rows(1, 1, 1, 3), n=1).stats["establishments"] == 0


def test_too_many_establishments_fail():
    rows = passage_rows(1, 1, 1, 3, gap=10) + [(12, 2, 1, 4, ESTABLISHED), (13, 2, 1, 4, ESTABLISHED)]
    verdict = checks.check_context_switch(rows, n=4)
    assert not verdict
    assert verdict.counterexample[0].pid == 1


def random_passages(rng: random.Random, procs: int, per: int, instances: int):
    """Well-formed rows from a random interleaving of passage event sequences."""
    kinds = (ENTER_CALL, ANNOUNCE, ENTER_RETURN, EXIT_CALL, EXIT_RETURN)
    todo = {p: [(rng.randrange(instances) + 1, k) for _ in range(per) for k in kinds] for p in range(1, procs + 1)}
    # an instance is fixed for a whole passage
    for p, items in todo.items():
        for i in range(0, len(items), 5):
            inst = items[i][0]
            items[i : i + 5] = [(inst, k) for _, k in items[i : i + 5]]
    rows, seq = [], 1
    while any(todo.values()):
        p = rng.choice([q for q, items in todo.items() if items])
        inst, kind = todo[p].pop(0)
        rows.append((seq, p, inst, 1, kind))
        seq += 1
    return rows


def brute_contention(items):
    out = {}
    for p in items:
        others = [q for q in items if q is not p and q.instance == p.instance]
        interval = sum(1 for q in others if q.start < p.end and q.end > p.start)
        point = max(
            (sum(1 for q in others if q.start <= t < q.end) for t in range(p.start, p.end)),
            default=0,
        )
        out[(p.pid, p.start)] = (interval, point)
    return out


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5), st.integers(1, 4), st.integers(1, 2))
def test_contention_matches_brute_force(seed, procs, per, instances):
    rows = random_passages(random.Random(seed), procs, per, instances)
    items, _ = checks.passages(rows)
    checks.measure_contention(items)
    got = {(p.pid, p.start): (p.interval_contention, p.point_contention) for p in items}
    assert got == brute_contention(items)


def test_online_monitor_agrees_with_offline_check():
    flagged = 0
    for seed in range(40):
        result = explore_random(Scenario.sessions(1, 2, 3, passages=2, helping=False), [seed])
        world = replay(result.scenario, result.failures[0][1] if result.failures else result_schedule(result, seed))
        offline = checks.check_context_switch(world.trace, 3)
        assert bool(offline) == (not world.contention.violations)
        assert offline.stats["establishments"] == world.contention.established
        assert offline.stats["amortized_budget"] == world.contention.budget
        flagged += not offline
        world.close()
    assert flagged


def result_schedule(result, seed):
    world = World(result.scenario)
    schedule = sim_run(world.controller, seed=seed).schedule
    world.close()
    return schedule


# -- measured bounds and coverage ----------------------------------------------------------


def test_bounded_exit_and_concurrent_entering_verdicts():
    assert checks.check_bounded_exit([3, 13, 7], 13)
    assert not checks.check_bounded_exit([14], 13)
    assert checks.check_concurrent_entering([1, 2], [0, 1], [40, 90], 93)
    assert not checks.check_concurrent_entering([3], [0], [10], 93)
    assert not checks.check_concurrent_entering([1], [2], [10], 93)
    assert not checks.check_concurrent_entering([1], [0], [94], 93)


def test_help_coverage_detects_broken_recurrence(monkeypatch):
    assert all(checks.check_help_coverage(n) for n in range(1, 17))
    monkeypatch.setattr(checks, "next_help_index", lambda k, n: (k + 1) % n + 1)
    assert not checks.check_help_coverage(4)


def test_single_process_steps_are_constant():
    system = GmeSystem(SystemConfig(1), NativeMemory(1, instrument=True))
    ctx, steps = system.context(1), system.mem.instr.steps
    counts = []
    for _ in range(1000):
        before = steps[1]
        system.enter(ctx, 1, 1)
        system.exit(ctx, 1)
        counts.append(steps[1] - before)
    # the first passage also replaces the placeholder head
    assert len(set(counts[1:])) == 1
    assert counts[0] > counts[1]


# -- memory and invariants -------------------------------------------------------------


def test_check_memory_detects_late_allocation_and_lost_nodes():
    system = GmeSystem(SystemConfig(2, 2), NativeMemory(2))
    assert checks.check_memory(system)
    system.mem.alloc(1)
    assert "allocations after init" in checks.check_memory(system).detail
    system = GmeSystem(SystemConfig(2, 2), NativeMemory(2))
    system.contexts[1].pools[0][0] = system.contexts[1].pools[1][0]
    assert not checks.check_memory(system)


def test_state_invariants_flag_bad_words():
    system = GmeSystem(SystemConfig(2), NativeMemory(2))
    inv = StateInvariants(system)
    assert inv.scan() == []
    head = system.head_of(1)
    system.mem.poke(system.field(head, STATE), VACANT)
    system.mem.poke(system.field(head, SIZE), -1)
    problems = inv.scan()
    assert len(problems) == 2 and not inv.clean


# -- exploration ----------------------------------------------------------------------


def test_mutated_join_test_is_caught(monkeypatch):
    monkeypatch.setattr(core, "is_closed", lambda state: False)
    result = explore_random(Scenario.sessions(1, 2, 1, passages=2), range(500))
    assert not result.ok
    msg, schedule, seed = result.failures[0]
    # the counterexample replays to the same failure
    world = replay(result.scenario, schedule)
    assert world.step_problems() or world.end_problems()
    world.close()


def test_exhaustive_small_conflict_without_reclaim():
    result = explore_exhaustive(Scenario.sessions(1, 2, reclaim=False))
    assert result.ok and result.complete
    assert result.max_in_cs == 1


def test_exhaustive_detects_mutation(monkeypatch):
    monkeypatch.setattr(core, "is_closed", lambda state: False)
    result = explore_exhaustive(Scenario.sessions(1, 1, 2, reclaim=False), max_states=200_000)
    assert not result.ok


def test_state_cap_marks_result_incomplete():
    result = explore_exhaustive(Scenario.sessions(1, 2), max_states=50)
    assert not result.complete
    assert not result.verdict()


def test_helping_off_can_exceed_the_bound_while_on_never_does():
    off = explore_random(Scenario.sessions(1, 2, 3, passages=2, helping=False), range(10_000))
    assert not off.ok
    assert "establishments" in off.failures[0][0]
    on = explore_random(Scenario.sessions(1, 2, 3, passages=2), range(10_000))
    assert on.ok, on.failures[:1]
    assert on.runs == 10_000
