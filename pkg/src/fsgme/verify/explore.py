"""Schedule exploration of small systems on the simulated backend.

A :class:`Scenario` fixes the processes and the passages each one performs.
:func:`explore_exhaustive` enumerates every interleaving of shared-cell
operations (merging paths that reach the same state), and
:func:`explore_random` runs seeded random schedules.  Every step is checked
against the shared-state invariants and group mutual exclusion; every
finished run is checked for termination, the context-switch bounds, the
hazard audit and the recorded trace.
"""

from __future__ import annotations

import time
from collections import Counter
from dataclasses import dataclass, field

from ..core import GmeSystem, ProcessContext, SystemConfig
from ..reclaim import CleanupCursor
from ..sim import ScheduleController, SimMemory, frame_key, sim_run
from . import checks
from .monitors import ContentionMonitor, HazardAudit, StateInvariants
from .trace import TraceRecorder


@dataclass(frozen=True)
class Scenario:
    """``programs[i]`` lists the ``(instance, session)`` requests of process i+1."""

    programs: tuple[tuple[tuple[int, int], ...], ...]
    m: int = 1
    helping: bool = True
    reclaim: bool = True
    dsm: bool = False
    cs_steps: int = 1

    @property
    def n(self) -> int:
        return len(self.programs)

    @classmethod
    def sessions(cls, *sessions: int, passages: int = 1, **kw) -> Scenario:
        """One process per listed session, each making ``passages`` requests on instance 1."""
        return cls(tuple(((1, s),) * passages for s in sessions), **kw)


# locals that only feed statistics; leaving them out lets more paths merge
STAT_LOCALS = frozenset({"outer", "spins", "attempts"})


def _summarize(value):
    if isinstance(value, ProcessContext):
        return ("ctx", value.me)
    if isinstance(value, CleanupCursor):
        return (value.phase, value.index, value.write)
    return None


def _context_key(ctx: ProcessContext) -> tuple:
    cur = ctx.cleanup
    return (
        ctx.snapshot,
        tuple(ctx.pools[0]),
        tuple(ctx.pools[1]),
        ctx.which,
        ctx.marker,
        ctx.passages,
        (cur.phase, cur.index, cur.write),
    )


class World:
    """One fresh simulated system running a scenario."""

    def __init__(self, scenario: Scenario) -> None:
        n = scenario.n
        self.scenario = scenario
        self.mem = mem = SimMemory(n)
        self.cs_cell = mem.alloc(1)
        self.trace = TraceRecorder(n)
        self.contention = ContentionMonitor(self.trace, n)
        self.audit = HazardAudit() if scenario.reclaim else None
        self.system = GmeSystem(
            SystemConfig(n, scenario.m),
            mem,
            helping=scenario.helping,
            reclaim=scenario.reclaim,
            dsm=scenario.dsm,
            recorder=self.contention,
            audit=self.audit,
        )
        self.invariants = StateInvariants(self.system)
        self.cs_calls = 0
        self.in_cs: dict[int, Counter] = {i: Counter() for i in range(1, scenario.m + 1)}
        self.max_in_cs = 0
        self.gme_violations: list[str] = []
        self.controller = ScheduleController(mem)
        for pid, program in enumerate(scenario.programs, start=1):
            self.controller.spawn(pid, self._program(pid, program))

    def _program(self, pid: int, requests):
        system, mem, cs_cell = self.system, self.mem, self.cs_cell
        ctx = system.context(pid)

        def run() -> None:
            for k, (instance, session) in enumerate(requests):
                system.enter(ctx, instance, session)
                self._cs_enter(pid, instance, session)
                for i in range(self.scenario.cs_steps):
                    mem.read(cs_cell, pid)
                self.cs_calls += 1
                self.in_cs[instance][session] -= 1
                system.exit(ctx, instance)

        return run

    def _cs_enter(self, pid: int, instance: int, session: int) -> None:
        self.cs_calls += 1
        occ = self.in_cs[instance]
        others = [s for s, k in occ.items() if k and s != session]
        if others:
            self.gme_violations.append(f"p{pid} entered session {session} on {instance} while {others} inside")
        occ[session] += 1
        self.max_in_cs = max(self.max_in_cs, sum(occ.values()))

    def _private(self, pid: int) -> tuple:
        frames = frame_key(self.controller.frames(pid), STAT_LOCALS, _summarize)
        return (frames, _context_key(self.system.context(pid)))

    def key(self) -> tuple:
        """Memo key: memory, process stacks and contexts, and the monitor
        state that later verdicts depend on."""
        audit = tuple(sorted(self.audit.protected.items())) if self.audit is not None else ()
        in_cs = tuple(tuple(sorted((s, k) for s, k in occ.items() if k)) for occ in self.in_cs.values())
        return (self.controller.state_key(self._private), self.contention.state(), audit, in_cs)

    def _touches(self) -> int:
        audit = self.audit.calls if self.audit is not None else 0
        return self.contention.calls + audit + self.cs_calls

    def step(self, pid: int) -> tuple[int, str, bool]:
        """Advance ``pid`` one operation; returns the step's footprint: the
        cell and kind of its operation, and whether it also touched harness
        state (trace, audits, CS bookkeeping) shared by all processes."""
        kind, cell = self.controller.procs[pid].pending
        before = self._touches()
        self.controller.step(pid)
        touched = self._touches() != before or self.controller.error is not None
        return (cell, kind, touched)

    def step_problems(self) -> list[str]:
        out = self.invariants.scan() + list(self.gme_violations)
        if self.controller.error is not None:
            out.append(f"p{self.controller.failed_pid} raised {self.controller.error!r}")
        return out

    def end_problems(self) -> list[str]:
        """Checks for a run with no process able to move."""
        out = self.step_problems()
        if not self.controller.quiescent():
            out.append(f"stuck with {self.controller.blocked()} waiting")
            return out
        out.extend(self.contention.violations)
        if self.audit is not None and self.audit.violations:
            out.append(f"hazard audit: {self.audit.violations[0]}")
        for verdict in (checks.check_gme(self.trace), checks.check_context_switch(self.trace, self.scenario.n)):
            if not verdict:
                out.append(str(verdict))
        if self.scenario.reclaim:
            verdict = checks.check_memory(self.system)
            if not verdict:
                out.append(str(verdict))
        return out

    def close(self) -> None:
        self.controller.close()


@dataclass
class ExploreResult:
    scenario: Scenario
    mode: str
    states: int = 0
    runs: int = 0
    max_depth: int = 0
    max_in_cs: int = 0
    max_establishments: int = 0
    failures: list[tuple[str, tuple[int, ...], int | None]] = field(default_factory=list)
    seconds: float = 0.0
    complete: bool = True  # False if a state or run cap cut the search short

    @property
    def ok(self) -> bool:
        return not self.failures

    def verdict(self, name: str = "explore") -> checks.Verdict:
        if self.failures:
            msg, schedule, seed = self.failures[0]
            return checks.Verdict(name, False, msg, seed=seed, schedule=schedule, stats=self.stats())
        return checks.Verdict(name, self.complete, self.summary(), stats=self.stats())

    def stats(self) -> dict:
        return {
            "states": self.states,
            "runs": self.runs,
            "max_depth": self.max_depth,
            "max_in_cs": self.max_in_cs,
            "max_establishments": self.max_establishments,
            "failures": len(self.failures),
            "complete": self.complete,
        }

    def summary(self) -> str:
        return (
            f"{self.mode}: {self.states} states, {self.runs} runs, depth {self.max_depth}, "
            f"max {self.max_in_cs} in CS, {len(self.failures)} failures, {self.seconds:.1f}s"
        )


def replay(scenario: Scenario, schedule) -> World:
    """Rebuild the world reached by an explicit schedule."""
    world = World(scenario)
    for pid in schedule:
        world.controller.step(pid)
    return world


def independent(a: tuple[int, str, bool], b: tuple[int, str, bool]) -> bool:
    """Steps commute if neither touches harness state and they use different
    cells or only read a common one."""
    if a[2] or b[2]:
        return False
    return a[0] != b[0] or (a[1] == "read" and b[1] == "read")


@dataclass
class _Frame:
    prefix: tuple[int, ...]
    sleep: dict[int, tuple]
    todo: list[int]
    done: list[tuple[int, tuple]] = field(default_factory=list)


def explore_exhaustive(
    scenario: Scenario,
    max_depth: int = 2_000,
    max_states: int = 5_000_000,
    stop_on_failure: bool = True,
) -> ExploreResult:
    """Visit every reachable state of ``scenario``.

    Depth-first search over interleavings with two reductions that keep
    every reachable state: states already seen are not expanded again, and
    sleep sets skip orders of commuting steps that lead to states reached
    elsewhere.  A state revisited with a smaller sleep set is expanded for
    the steps it was missing.
    """
    result = ExploreResult(scenario, "exhaustive")
    t0 = time.perf_counter()
    visited: dict[int, frozenset[int]] = {}

    def visit(world: World, prefix: tuple[int, ...], sleep: dict[int, tuple]) -> _Frame | None:
        problems = world.step_problems()
        if problems:
            result.failures.append((problems[0], prefix, None))
            return None
        enabled = world.controller.enabled()
        if not enabled:
            result.runs += 1
            result.max_depth = max(result.max_depth, len(prefix))
            result.max_in_cs = max(result.max_in_cs, world.max_in_cs)
            result.max_establishments = max(result.max_establishments, world.contention.max_establishments)
            key = hash(world.key())
            if key not in visited:
                visited[key] = frozenset()
                problems = world.end_problems()
                if problems:
                    result.failures.append((problems[0], prefix, None))
            return None
        if len(prefix) >= max_depth:
            result.failures.append((f"no quiescence within {max_depth} steps", prefix, None))
            return None
        key = hash(world.key())
        asleep = frozenset(sleep)
        stored = visited.get(key)
        if stored is None:
            visited[key] = asleep
            todo = [p for p in enabled if p not in asleep]
        elif stored <= asleep:
            return None
        else:
            todo = [p for p in enabled if p in stored and p not in asleep]
            visited[key] = stored & asleep
        result.max_in_cs = max(result.max_in_cs, world.max_in_cs)
        return _Frame(prefix, sleep, todo) if todo else None

    world = World(scenario)
    live: tuple[int, ...] = ()
    frames = [f for f in (visit(world, (), {}),) if f is not None]
    while frames:
        if len(visited) > max_states:
            result.complete = False
            break
        if result.failures and stop_on_failure:
            break
        frame = frames[-1]
        if not frame.todo:
            frames.pop()
            continue
        pid = frame.todo.pop(0)
        if live != frame.prefix:
            world.close()
            world = replay(scenario, frame.prefix)
        step = world.step(pid)
        child_sleep = {q: fp for q, fp in (*frame.sleep.items(), *frame.done) if independent(fp, step)}
        frame.done.append((pid, step))
        live = (*frame.prefix, pid)
        child = visit(world, live, child_sleep)
        if child is not None:
            frames.append(child)
    world.close()
    result.states = len(visited)
    result.seconds = time.perf_counter() - t0
    return result


def explore_random(
    scenario: Scenario,
    seeds,
    budget: int = 100_000,
    stop_on_failure: bool = True,
) -> ExploreResult:
    """One uniformly random schedule per seed."""
    result = ExploreResult(scenario, "random")
    t0 = time.perf_counter()
    for seed in seeds:
        world = World(scenario)
        run = sim_run(world.controller, seed=seed, budget=budget)
        result.runs += 1
        result.states += run.steps
        result.max_depth = max(result.max_depth, run.steps)
        result.max_in_cs = max(result.max_in_cs, world.max_in_cs)
        result.max_establishments = max(result.max_establishments, world.contention.max_establishments)
        if run.status == "budget":
            problems = [f"no quiescence within {budget} steps"]
        else:
            problems = world.end_problems()
        if problems:
            result.failures.append((problems[0], tuple(run.schedule), seed))
        world.close()
        if result.failures and stop_on_failure:
            break
    result.seconds = time.perf_counter() - t0
    return result
