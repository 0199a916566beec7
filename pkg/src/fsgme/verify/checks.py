"""Property checkers.

Trace checkers are pure functions of a recorded trace.  The remaining
checkers take measurements gathered by the stress drivers or a quiescent
lock system.  Each returns a :class:`Verdict`; a failing verdict carries the
offending events or the seed/schedule that reproduces it.
"""

from __future__ import annotations

from bisect import bisect_left, bisect_right
from collections import defaultdict
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

from ..core import next_help_index
from ..layout import CONDITION, SAFE
from .trace import (
    ANNOUNCE,
    ENTER_CALL,
    ENTER_RETURN,
    ESTABLISHED,
    EXIT_CALL,
    EXIT_RETURN,
    TraceEvent,
    as_rows,
)


class TraceError(ValueError):
    """The trace itself is malformed (a harness bug, not a property failure)."""


@dataclass
class Verdict:
    name: str
    ok: bool
    detail: str = ""
    counterexample: tuple = ()
    seed: int | None = None
    schedule: tuple[int, ...] | None = None
    stats: dict = field(default_factory=dict)

    def __bool__(self) -> bool:
        return self.ok

    def __str__(self) -> str:
        status = "pass" if self.ok else "FAIL"
        return f"{self.name}: {status}" + (f" ({self.detail})" if self.detail else "")


def _event(row) -> TraceEvent:
    return TraceEvent(*row)


# -- group mutual exclusion --------------------------------------------------


def check_gme(trace) -> Verdict:
    """At every point, the processes in the CS of one instance share a session."""
    holders: dict[tuple[int, int], tuple] = {}
    occupancy: dict[int, dict[int, int]] = defaultdict(dict)
    violations = 0
    first: tuple = ()
    passages = 0
    for row in as_rows(trace):
        _, pid, inst, sess, kind = row
        key = (pid, inst)
        if kind == ENTER_RETURN:
            if key in holders:
                raise TraceError(f"double ENTER_RETURN without EXIT_CALL: {_event(row)}")
            occ = occupancy[inst]
            if occ and (len(occ) > 1 or sess not in occ):
                violations += 1
                if not first:
                    other = next(r for k, r in holders.items() if k[1] == inst and r[3] != sess)
                    first = (_event(other), _event(row))
            occ[sess] = occ.get(sess, 0) + 1
            holders[key] = row
            passages += 1
        elif kind == EXIT_CALL:
            entered = holders.pop(key, None)
            if entered is None:
                raise TraceError(f"EXIT_CALL without ENTER_RETURN: {_event(row)}")
            occ = occupancy[inst]
            s = entered[3]
            if occ[s] == 1:
                del occ[s]
            else:
                occ[s] -= 1
    detail = f"{passages} critical sections, {violations} violations"
    return Verdict("gme", violations == 0, detail, first, stats={"violations": violations, "passages": passages})


def max_concurrency(trace) -> dict[int, int]:
    """Most processes ever in the CS of each instance at once."""
    inside: dict[int, int] = defaultdict(int)
    best: dict[int, int] = defaultdict(int)
    for _, _, inst, _, kind in as_rows(trace):
        if kind == ENTER_RETURN:
            inside[inst] += 1
            best[inst] = max(best[inst], inside[inst])
        elif kind == EXIT_CALL:
            inside[inst] -= 1
    return dict(best)


# -- passages and contention -----------------------------------------------------


@dataclass
class Passage:
    pid: int
    instance: int
    session: int
    start: int  # ENTER_CALL ticket
    announce: int = 0
    entered: int = 0  # ENTER_RETURN ticket
    end: int = 0  # EXIT_RETURN ticket
    establishments: int = 0
    interval_contention: int = 0
    point_contention: int = 0

    @property
    def complete(self) -> bool:
        return bool(self.announce and self.entered and self.end)


def passages(trace) -> tuple[list[Passage], dict[int, list[int]]]:
    """Split a trace into passages; also returns establishment tickets per instance."""
    open_: dict[tuple[int, int], Passage] = {}
    out: list[Passage] = []
    established: dict[int, list[int]] = defaultdict(list)
    for seq, pid, inst, sess, kind in as_rows(trace):
        key = (pid, inst)
        if kind == ESTABLISHED:
            established[inst].append(seq)
        elif kind == ENTER_CALL:
            if key in open_:
                raise TraceError(f"ENTER_CALL inside an open passage: p{pid} i{inst} #{seq}")
            open_[key] = Passage(pid, inst, sess, seq)
        elif kind in (ANNOUNCE, ENTER_RETURN, EXIT_RETURN):
            p = open_.get(key)
            if p is None:
                raise TraceError(f"event outside a passage: p{pid} i{inst} #{seq}")
            if kind == ANNOUNCE:
                p.announce = seq
            elif kind == ENTER_RETURN:
                p.entered = seq
            else:
                p.end = seq
                out.append(open_.pop(key))
    out.extend(open_.values())
    return out, established


class _RangeMax:
    """Sparse table over a static list."""

    def __init__(self, values: Sequence[int]) -> None:
        self.levels = [list(values)]
        k = 1
        while 2 * k <= len(values):
            prev = self.levels[-1]
            self.levels.append([max(prev[i], prev[i + k]) for i in range(len(prev) - k)])
            k *= 2

    def query(self, lo: int, hi: int) -> int:
        """max(values[lo:hi]) for hi > lo."""
        j = (hi - lo).bit_length() - 1
        row = self.levels[j]
        return max(row[lo], row[hi - (1 << j)])


def measure_contention(items: list[Passage]) -> None:
    """Fill in interval and point contention, both counting other passages
    on the same instance."""
    by_inst: dict[int, list[Passage]] = defaultdict(list)
    for p in items:
        if p.complete:
            by_inst[p.instance].append(p)
    for group in by_inst.values():
        starts = sorted(p.start for p in group)
        ends = sorted(p.end for p in group)
        points = sorted([(p.start, 1) for p in group] + [(p.end, -1) for p in group])
        seqs = [s for s, _ in points]
        active, level = [], 0
        for _, d in points:
            level += d
            active.append(level)
        rmq = _RangeMax(active)
        for p in group:
            # passages that start before p ends, minus those that ended before p started
            p.interval_contention = bisect_left(starts, p.end) - bisect_left(ends, p.start) - 1
            lo = bisect_left(seqs, p.start)
            hi = bisect_right(seqs, p.end)
            p.point_contention = rmq.query(lo, hi) - 1


def check_context_switch(trace, n: int) -> Verdict:
    """Sessions established while a passage waits stay within the contention bounds."""
    items, established = passages(trace)
    measure_contention(items)
    worst: Passage | None = None
    failures = 0
    total = budget = 0
    checked = 0
    for p in items:
        if not p.complete:
            continue
        checked += 1
        est = established.get(p.instance, [])
        p.establishments = bisect_left(est, p.entered) - bisect_right(est, p.announce)
        bound = min(p.interval_contention, n) + 1
        if p.establishments > bound:
            failures += 1
            if worst is None:
                worst = p
        total += p.establishments
        budget += p.point_contention + 1
    amortized_ok = total <= budget
    ok = failures == 0 and amortized_ok
    detail = (
        f"{checked} passages, {failures} over the per-passage bound, "
        f"{total} establishments vs amortized budget {budget}"
    )
    stats = {
        "passages": checked,
        "failures": failures,
        "establishments": total,
        "amortized_budget": budget,
        "max_establishments": max((p.establishments for p in items if p.complete), default=0),
    }
    return Verdict("context_switch", ok, detail, (worst,) if worst else (), stats=stats)


# -- measured bounds ---------------------------------------------------------------


def check_bounded_exit(op_counts: Iterable[int], bound: int) -> Verdict:
    counts = list(op_counts)
    worst = max(counts, default=0)
    ok = worst <= bound
    return Verdict(
        "bounded_exit",
        ok,
        f"{len(counts)} exits, max {worst} operations, bound {bound}",
        stats={"exits": len(counts), "max_ops": worst, "bound": bound},
    )


def check_concurrent_entering(
    outer: Iterable[int], spins: Iterable[int], steps: Iterable[int], step_bound: int
) -> Verdict:
    """Homogeneous-run entry sections: at most two outer iterations, at most
    one spin iteration, and a step count within ``step_bound``."""
    outer, spins, steps = list(outer), list(spins), list(steps)
    mo, ms, mt = max(outer, default=0), max(spins, default=0), max(steps, default=0)
    ok = mo <= 2 and ms <= 1 and mt <= step_bound
    return Verdict(
        "concurrent_entering",
        ok,
        f"{len(steps)} entries, max outer {mo}, max spin {ms}, max steps {mt} (bound {step_bound})",
        stats={"entries": len(steps), "max_outer": mo, "max_spin": ms, "max_steps": mt, "bound": step_bound},
    )


def check_help_coverage(n: int) -> Verdict:
    """From every start, ``n`` applications of the help index visit all of 1..n."""
    for start in range(0, n + 1):
        seen, k = set(), start
        for _ in range(n):
            k = next_help_index(k, n)
            seen.add(k)
        if seen != set(range(1, n + 1)):
            missing = sorted(set(range(1, n + 1)) - seen)
            return Verdict("help_coverage", False, f"n={n} start={start} misses {missing}")
    return Verdict("help_coverage", True, f"n={n}")


# -- space ----------------------------------------------------------------------


def expected_nodes(n: int, m: int) -> int:
    return m + 6 * n * n


def check_memory(system) -> Verdict:
    """Quiescent reclaiming system: node census, allocation count and pool
    membership (every node is an instance head or sits in exactly one pool slot)."""
    problems = []
    want = expected_nodes(system.n, system.m)
    if system.node_count != want:
        problems.append(f"{system.node_count} nodes, expected {want}")
    late = system.mem.allocations - system.init_allocations
    if late:
        problems.append(f"{late} allocations after init")
    seen: dict[int, str] = {}
    for inst in system.instances:
        seen[system.head_of(inst.id)] = f"head of {inst.id}"
    for ctx in system.contexts[1:]:
        for which, pool in enumerate(ctx.pools):
            if len(pool) != 3 * system.n:
                problems.append(f"p{ctx.me} pool {which} has {len(pool)} slots")
            for node in pool:
                where = f"p{ctx.me} pool {which}"
                if node in seen:
                    problems.append(f"node {node} in {seen[node]} and {where}")
                seen[node] = where
    missing = set(range(1, system.node_count + 1)) - set(seen)
    if missing:
        problems.append(f"nodes in no pool and no list: {sorted(missing)[:10]}")
    for ctx in system.contexts[1:]:
        active = ctx.pools[ctx.which]
        safe = sum(system.mem.peek(system.field(v, CONDITION)) == SAFE for v in active[ctx.marker :])
        if safe < system.n - ctx.passages:
            problems.append(f"p{ctx.me} has {safe} SAFE nodes left for {system.n - ctx.passages} passages")
    return Verdict(
        "memory",
        not problems,
        "; ".join(problems) or f"{system.node_count} nodes, no allocations after init",
        stats={"nodes": system.node_count, "late_allocations": late},
    )
