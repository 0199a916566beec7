"""Online monitors: hazard-slot audit and per-step state invariants."""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass

from ..layout import NEXT, SIZE, STATE
from ..state import RETIRED, VACANT, describe, well_formed


@dataclass(frozen=True)
class HazardViolation:
    acquirer: int
    node: int
    holder: int
    slot: int


class HazardAudit:
    """Flags reuse of a node that some hazard slot has held without
    interruption since before the node was retired.

    With real threads, pass ``threaded=True``: the lock system then performs
    each hazard write (and the announce reset that retires a node) inside
    :meth:`guard`, so the audit's view of the slots is exact.
    """

    def __init__(self, threaded: bool = False) -> None:
        self._lock = threading.Lock() if threaded else contextlib.nullcontext()
        self.slots: dict[tuple[int, int], int] = {}
        self.protected: dict[tuple[int, int], int] = {}
        self.violations: list[HazardViolation] = []
        self.acquires = 0
        self.retires = 0
        self.calls = 0

    def guard(self):
        return self._lock

    def hazard(self, p: int, slot: int, node: int) -> None:
        self.calls += 1
        key = (p, slot)
        self.slots[key] = node
        self.protected.pop(key, None)

    def retiring(self, p: int, node: int) -> None:
        self.calls += 1
        self.retires += 1
        for key, held in self.slots.items():
            if held == node:
                self.protected[key] = node

    def acquired(self, p: int, node: int) -> None:
        with self._lock:
            self.calls += 1
            self.acquires += 1
            for (q, slot), held in self.protected.items():
                if held == node:
                    self.violations.append(HazardViolation(p, node, q, slot))

    @property
    def clean(self) -> bool:
        return not self.violations


class StateInvariants:
    """Shared-state invariants of a lock system, checked by scanning memory.

    * every size field is non-negative;
    * every state word stays in the flag lattice (so VACANT only ever sits
      on a closed session);
    * a node has a successor only once it is adjourned;
    * no list head is retired.

    All four are properties of a single global state, so checking them in
    every reachable state covers every transition as well.
    """

    def __init__(self, system) -> None:
        self.system = system
        self.violations: list[str] = []

    def scan(self) -> list[str]:
        system = self.system
        peek, field = system.mem.peek, system.field
        out = []
        for node in range(1, system.node_count + 1):
            state = peek(field(node, STATE))
            if not well_formed(state):
                out.append(f"node {node} state {describe(state)} breaks the flag lattice")
            size = peek(field(node, SIZE))
            if size < 0:
                out.append(f"size of node {node} is {size}")
            if peek(field(node, NEXT)) and not state & VACANT:
                out.append(f"node {node} has a successor but is not adjourned ({describe(state)})")
        for inst in system.instances:
            head = peek(inst.head)
            if peek(field(head, STATE)) & RETIRED:
                out.append(f"head {head} of instance {inst.id} is retired")
        self.violations.extend(out)
        return out

    @property
    def clean(self) -> bool:
        return not self.violations


class ContentionMonitor:
    """Recorder wrapper that checks the context-switch bounds online.

    Forwards every event to ``inner`` and keeps, per open passage, the number
    of sessions established since its announcement and its interval and point
    contention so far.  The per-passage bound is checked when the passage
    ends.  :meth:`state` summarizes everything that the verdict still depends
    on, so it can be folded into a state-space memo key.
    """

    def __init__(self, inner, n: int) -> None:
        self.inner = inner
        self.n = n
        self.ticket = inner.ticket
        for name in ("ENTER_CALL", "ANNOUNCE", "ESTABLISHED", "RETIRE", "ENTER_RETURN", "EXIT_CALL", "EXIT_RETURN"):
            setattr(self, name, getattr(inner, name))
        # (pid, instance) -> [announced, entered, establishments, interval, point]
        self.open: dict[tuple[int, int], list] = {}
        self.established = 0
        self.budget = 0
        self.max_establishments = 0
        self.violations: list[str] = []
        self.calls = 0

    def record(self, seq: int, pid: int, instance: int, session: int, kind: int) -> None:
        self.calls += 1
        self.inner.record(seq, pid, instance, session, kind)
        if kind == self.ENTER_CALL:
            others = [v for (q, inst), v in self.open.items() if inst == instance]
            for v in others:
                v[3] += 1
                v[4] = max(v[4], len(others))
            self.open[(pid, instance)] = [False, False, 0, len(others), len(others)]
        elif kind == self.ANNOUNCE:
            self.open[(pid, instance)][0] = True
        elif kind == self.ESTABLISHED:
            for (q, inst), v in self.open.items():
                if inst == instance and v[0] and not v[1]:
                    v[2] += 1
        elif kind == self.ENTER_RETURN:
            self.open[(pid, instance)][1] = True
        elif kind == self.EXIT_RETURN:
            _, _, est, interval, point = self.open.pop((pid, instance))
            bound = min(interval, self.n) + 1
            if est > bound:
                self.violations.append(
                    f"p{pid} on {instance} saw {est} establishments, bound {bound} (interval contention {interval})"
                )
            self.established += est
            self.budget += point + 1
            self.max_establishments = max(self.max_establishments, est)
            if self.established > self.budget:
                self.violations.append(f"{self.established} establishments exceed amortized budget {self.budget}")

    def state(self) -> tuple:
        return (tuple(sorted((k, tuple(v)) for k, v in self.open.items())), self.established, self.budget)

    @property
    def clean(self) -> bool:
        return not self.violations
