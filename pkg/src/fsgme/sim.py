"""Deterministic step-scheduled execution of process programs.

Each registered process runs in its own greenlet.  Every shared-cell
operation first hands control to the scheduler, so one *step* is exactly
one cell operation followed by whatever private computation the process
does before its next operation.  Busy-wait loops report themselves through
``spin``; a spinning process is parked until the cell it watches changes,
which drops stuttering steps without changing any reachable state.
"""

from __future__ import annotations

import random
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

from greenlet import GreenletExit, greenlet

from .memory import Memory

READY = "ready"
BLOCKED = "blocked"
DONE = "done"

_OP = object()


class ScheduleError(ValueError):
    """An explicit schedule named a process that cannot take a step."""


class SimMemory(Memory):
    """Cells accessed by cooperatively stepped processes."""

    def __init__(self, nprocs: int, instrument: bool = False) -> None:
        super().__init__(nprocs, instrument)
        self.controller: ScheduleController | None = None
        self.history = [0] * (nprocs + 1)
        # observer(p, kind, cell, arg, old, result) runs after every operation
        self.observers: list[Callable[[int, str, int, object, int, object], None]] = []

    def _turn(self, p: int, kind: str, c: int) -> None:
        ctl = self.controller
        if ctl is not None and ctl.running:
            ctl._yield_op(p, kind, c)

    def _after(self, p: int, kind: str, c: int, arg: object, old: int, result: object) -> None:
        self.history[p] = hash((self.history[p], result))
        for obs in self.observers:
            obs(p, kind, c, arg, old, result)

    def read(self, c: int, p: int) -> int:
        self._turn(p, "read", c)
        v = self._values[c]
        if self.instr is not None:
            self._count_read(c, p)
        self._after(p, "read", c, None, v, v)
        return v

    def write(self, c: int, value: int, p: int) -> None:
        self._turn(p, "write", c)
        old = self._values[c]
        self._values[c] = value
        self._versions[c] += 1
        if self.instr is not None:
            self._count_update(c, p, False)
        self._after(p, "write", c, value, old, None)

    def cas(self, c: int, expected: int, new: int, p: int) -> bool:
        self._turn(p, "cas", c)
        old = self._values[c]
        ok = old == expected
        if ok:
            self._values[c] = new
            self._versions[c] += 1
        if self.instr is not None:
            self._count_update(c, p, False)
        self._after(p, "cas", c, (expected, new), old, ok)
        return ok

    def faa(self, c: int, delta: int, p: int) -> int:
        self._turn(p, "faa", c)
        old = self._values[c]
        self._values[c] = old + delta
        self._versions[c] += 1
        if self.instr is not None:
            self._count_update(c, p, False)
        self._after(p, "faa", c, delta, old, old)
        return old

    def spin(self, c: int, seen: int, p: int) -> None:
        ctl = self.controller
        if ctl is not None and ctl.running:
            ctl._yield_spin(p, c, seen)


@dataclass
class RunResult:
    status: str  # "quiescent", "deadlock", "budget", "paused" or "error"
    steps: int
    schedule: list[int]
    error: BaseException | None = None
    seed: int | None = None

    @property
    def quiescent(self) -> bool:
        return self.status == "quiescent"


@dataclass
class _Proc:
    pid: int
    glet: greenlet
    state: str = READY
    watch: tuple[int, int] | None = None
    pending: tuple[str, int] | None = None
    steps: int = 0


@dataclass
class ScheduleController:
    """Owns the runnable set and advances processes one step at a time."""

    mem: SimMemory
    procs: dict[int, _Proc] = field(default_factory=dict)
    trace: list[int] = field(default_factory=list)
    running: bool = False
    error: BaseException | None = None
    failed_pid: int | None = None

    def __post_init__(self) -> None:
        self.mem.controller = self
        self._main: greenlet | None = None

    # -- process side ------------------------------------------------------

    def _yield_op(self, p: int, kind: str, c: int) -> None:
        self._main.switch((_OP, kind, c))

    def _yield_spin(self, p: int, c: int, seen: int) -> None:
        self._main.switch(("spin", c, seen))

    # -- scheduler side ----------------------------------------------------

    def spawn(self, pid: int, program: Callable[[], None]) -> None:
        """Register ``program`` as process ``pid`` and run it up to its first
        shared-cell operation."""
        if pid in self.procs:
            raise ValueError(f"process {pid} already registered")

        def body() -> None:
            try:
                program()
            except GreenletExit:
                raise
            except BaseException as exc:  # reported through the controller
                self.error = exc
                self.failed_pid = pid

        self._main = greenlet.getcurrent()
        proc = _Proc(pid, greenlet(body))
        self.procs[pid] = proc
        self.running = True
        self._resume(proc)

    def _resume(self, proc: _Proc) -> None:
        msg = proc.glet.switch()
        if proc.glet.dead:
            proc.state = DONE
            proc.pending = None
        elif msg[0] is _OP:
            proc.state = READY
            proc.pending = (msg[1], msg[2])
        else:
            proc.state = BLOCKED
            proc.watch = (msg[1], msg[2])
            proc.pending = None

    def wake(self) -> None:
        """Resume parked processes whose watched cell changed (also useful
        after an external ``poke``)."""
        values = self.mem._values
        for proc in self.procs.values():
            if proc.state is BLOCKED and values[proc.watch[0]] != proc.watch[1]:
                proc.watch = None
                self._resume(proc)

    def enabled(self) -> list[int]:
        return [pid for pid, proc in sorted(self.procs.items()) if proc.state is READY]

    def blocked(self) -> list[int]:
        return [pid for pid, proc in sorted(self.procs.items()) if proc.state is BLOCKED]

    def quiescent(self) -> bool:
        return all(proc.state is DONE for proc in self.procs.values())

    def step(self, pid: int) -> None:
        proc = self.procs.get(pid)
        if proc is None or proc.state is not READY:
            raise ScheduleError(f"process {pid} cannot step")
        self._main = greenlet.getcurrent()
        self._resume(proc)
        proc.steps += 1
        self.trace.append(pid)
        self.wake()

    def state_key(self, private: Callable[[int], object] | None = None) -> tuple:
        """Hashable summary of the global state: cell values plus each
        process's private state.

        By default a process is summarized by a digest of every result it has
        observed, which is exact but keeps apart paths that observed different
        values yet ended up in the same place.  ``private(pid)`` may supply a
        coarser summary instead, for example :func:`frame_key` plus whatever
        process-owned objects the program mutates.
        """
        procs = tuple(
            (pid, proc.state, proc.watch, private(pid) if private else self.mem.history[pid])
            for pid, proc in sorted(self.procs.items())
        )
        return (self.mem.snapshot(), procs)

    def frames(self, pid: int):
        """Innermost suspended frame of process ``pid`` (None once finished)."""
        return self.procs[pid].glet.gr_frame

    def close(self) -> None:
        """Abandon unfinished processes."""
        self.running = False
        for proc in self.procs.values():
            if not proc.glet.dead:
                proc.glet.throw(GreenletExit)


_SCALARS = (int, str, bool, type(None))


def _abstract(value, summarize):
    if isinstance(value, _SCALARS):
        return value
    if isinstance(value, (tuple, list)):
        return tuple(_abstract(v, summarize) for v in value)
    special = summarize(value)
    if special is not None:
        return special
    # shared, long-lived objects (the system, memory, recorders, callables)
    return type(value).__name__


def frame_key(frame, ignore: frozenset[str] = frozenset(), summarize=lambda v: None) -> tuple:
    """Summary of a suspended call stack: code position plus local variables
    of every frame.

    Only locals are visible, so a loop that spans shared-cell operations must
    keep its position in a local (``while i < k`` or ``for i in range(k)``,
    not an anonymous iterator over repeating items).  Names in ``ignore`` are
    excluded; they must not influence control flow (statistics counters).
    ``summarize(obj)`` can map mutable objects to a hashable value.
    """
    out = []
    while frame is not None:
        items = tuple(
            (name, _abstract(v, summarize))
            for name, v in sorted(frame.f_locals.items())
            if name not in ignore
        )
        out.append((frame.f_code, frame.f_lasti, items))
        frame = frame.f_back
    return tuple(out)


def sim_run(
    controller: ScheduleController,
    schedule: Sequence[int] | None = None,
    seed: int | None = None,
    budget: int = 100_000,
) -> RunResult:
    """Step ``controller`` until quiescence, deadlock or budget exhaustion.

    An explicit ``schedule`` is consumed first; after it runs out, steps are
    chosen uniformly at random among runnable processes from ``seed``.  With a
    schedule and no seed, the run pauses when the schedule is exhausted.
    """
    rng = random.Random(seed) if seed is not None else None
    taken = 0
    it = iter(schedule or ())
    while True:
        if controller.error is not None:
            return RunResult("error", taken, list(controller.trace), controller.error, seed)
        if controller.quiescent():
            return RunResult("quiescent", taken, list(controller.trace), seed=seed)
        enabled = controller.enabled()
        if not enabled:
            return RunResult("deadlock", taken, list(controller.trace), seed=seed)
        if taken >= budget:
            return RunResult("budget", taken, list(controller.trace), seed=seed)
        pid = next(it, None)
        if pid is None:
            if rng is None:
                return RunResult("paused", taken, list(controller.trace), seed=seed)
            pid = enabled[rng.randrange(len(enabled))]
        controller.step(pid)
        taken += 1
