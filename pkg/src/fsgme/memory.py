"""Word-sized shared cells with native (threaded) access and optional instrumentation.

A cell is an integer index into a flat value array owned by a ``Memory``.
Node references stored in cells are node ids (``NULL`` is 0), so the same
algorithm code runs against the native backend here and the step-scheduled
simulator in :mod:`fsgme.sim`.

Every operation takes the id of the calling process so that per-process
step and RMR counts can be kept.  RMRs follow the cache-coherent model:
a read is remote iff the caller's cached version of the cell is stale, and
every write/CAS/FAA is remote.
"""

from __future__ import annotations

import os
import threading

try:
    from ._cells import Cells
except ImportError:  # built without a C compiler: locked Python lists instead
    Cells = None

NULL = 0

# Home of a cell that does not live in any process's memory segment.
GLOBAL = 0


class Instrumentation:
    """Per-process step and RMR counters plus a wait-loop access classifier."""

    def __init__(self, nprocs: int) -> None:
        size = nprocs + 1
        self.nprocs = nprocs
        self.steps = [0] * size
        self.rmrs = [0] * size
        self.cached: list[dict[int, int]] = [{} for _ in range(size)]
        self.waiting = [False] * size
        self.wait_local_reads = [0] * size
        self.wait_remote_reads = [0] * size
        self.wait_other_ops = [0] * size

    def total_steps(self) -> int:
        return sum(self.steps)

    def total_rmrs(self) -> int:
        return sum(self.rmrs)


class Memory:
    """Flat array of cells.  Subclasses supply the access discipline."""

    def __init__(self, nprocs: int, instrument: bool = False) -> None:
        self.nprocs = nprocs
        self._values: list[int] = []
        self._versions: list[int] = []
        self._homes: list[int] = []
        self._alloc_lock = threading.Lock()
        self.allocations = 0
        self.instr = Instrumentation(nprocs) if instrument else None

    # -- layout -----------------------------------------------------------

    def alloc(self, count: int, value: int = 0, home: int = GLOBAL) -> int:
        """Reserve ``count`` consecutive cells and return the first index."""
        with self._alloc_lock:
            base = len(self._values)
            self._values.extend([value] * count)
            self._versions.extend([0] * count)
            self._homes.extend([home] * count)
            self.allocations += 1
            return base

    def __len__(self) -> int:
        return len(self._values)

    def home(self, c: int) -> int:
        return self._homes[c]

    def peek(self, c: int) -> int:
        """Uncounted read for audits and debugging."""
        return self._values[c]

    def poke(self, c: int, value: int) -> None:
        """Uncounted write, only for initialization before processes run."""
        self._values[c] = value

    def version(self, c: int) -> int:
        return self._versions[c]

    def snapshot(self) -> tuple[int, ...]:
        return tuple(self._values)

    # -- instrumentation helpers (caller holds whatever lock applies) ------

    def _count_read(self, c: int, p: int) -> None:
        instr = self.instr
        instr.steps[p] += 1
        ver = self._versions[c]
        cache = instr.cached[p]
        if cache.get(c) != ver:
            instr.rmrs[p] += 1
            cache[c] = ver
        if instr.waiting[p]:
            if self._homes[c] == p:
                instr.wait_local_reads[p] += 1
            else:
                instr.wait_remote_reads[p] += 1

    def _count_update(self, c: int, p: int, changed: bool) -> None:
        instr = self.instr
        instr.steps[p] += 1
        instr.rmrs[p] += 1
        if changed:
            self._versions[c] += 1
        instr.cached[p][c] = self._versions[c]
        if instr.waiting[p]:
            instr.wait_other_ops[p] += 1

    def begin_wait(self, p: int) -> None:
        if self.instr is not None:
            self.instr.waiting[p] = True

    def end_wait(self, p: int) -> None:
        if self.instr is not None:
            self.instr.waiting[p] = False


class NativeMemory(Memory):
    """Cells shared by real threads.

    By default the cells live in a small C array (:mod:`fsgme._cells`) whose
    operations each run without releasing the GIL, so every call is
    indivisible and costs one builtin call.  Instrumented memory, or
    ``accelerated=False``, keeps the cells in a Python list and serializes
    mutations (and instrumented reads) through one lock instead; under the
    GIL a striped lock table would buy nothing.
    """

    def __init__(self, nprocs: int, instrument: bool = False, accelerated: bool | None = None) -> None:
        super().__init__(nprocs, instrument)
        self._lock = threading.Lock()
        self._cells = None
        if instrument and accelerated:
            raise ValueError("instrumented memory counts every access in Python; it cannot be accelerated")
        if instrument:
            self.read = self._read_instrumented
            self.write = self._write_instrumented
            self.cas = self._cas_instrumented
            self.faa = self._faa_instrumented
        elif accelerated or (accelerated is None and Cells is not None):
            if Cells is None:
                raise RuntimeError("the C cell extension is not available")
            self._cells = cells = Cells()
            self.read, self.write, self.cas, self.faa = cells.read, cells.write, cells.cas, cells.faa
            self.peek = cells.peek
            self.snapshot = cells.snapshot

    @property
    def accelerated(self) -> bool:
        return self._cells is not None

    def alloc(self, count: int, value: int = 0, home: int = GLOBAL) -> int:
        if self._cells is None:
            return super().alloc(count, value, home)
        with self._alloc_lock:
            base = self._cells.alloc(count, value)
            self._homes.extend([home] * count)
            self.allocations += 1
            return base

    def __len__(self) -> int:
        return len(self._values) if self._cells is None else len(self._cells)

    def poke(self, c: int, value: int) -> None:
        if self._cells is None:
            self._values[c] = value
        else:
            self._cells.write(c, value, 0)

    def read(self, c: int, p: int) -> int:
        return self._values[c]

    def write(self, c: int, value: int, p: int) -> None:
        with self._lock:
            self._values[c] = value

    def cas(self, c: int, expected: int, new: int, p: int) -> bool:
        values = self._values
        with self._lock:
            if values[c] == expected:
                values[c] = new
                return True
            return False

    def faa(self, c: int, delta: int, p: int) -> int:
        values = self._values
        with self._lock:
            old = values[c]
            values[c] = old + delta
            return old

    def _read_instrumented(self, c: int, p: int) -> int:
        with self._lock:
            self._count_read(c, p)
            return self._values[c]

    def _write_instrumented(self, c: int, value: int, p: int) -> None:
        with self._lock:
            self._values[c] = value
            self._count_update(c, p, True)

    def _cas_instrumented(self, c: int, expected: int, new: int, p: int) -> bool:
        with self._lock:
            ok = self._values[c] == expected
            if ok:
                self._values[c] = new
            self._count_update(c, p, ok)
            return ok

    def _faa_instrumented(self, c: int, delta: int, p: int) -> int:
        with self._lock:
            old = self._values[c]
            self._values[c] = old + delta
            self._count_update(c, p, True)
            return old

    def spin(self, c: int, seen: int, p: int) -> None:
        """Called after a busy-wait read of ``c`` returned ``seen`` and did not
        satisfy the waiter.  Yields the CPU (and the GIL) so the writer can run;
        ``time.sleep(0)`` does not reliably hand the GIL over on one core."""
        os.sched_yield()
