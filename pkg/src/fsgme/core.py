"""Session-list group mutual exclusion.

Each lock instance keeps a list of session nodes; its head is the current
session.  A request publishes a node in the ``announce`` array and then either
joins the head session as a follower (same session, still open) or waits for
the head session to adjourn and tries to append a node, preferring the
announced node of the process picked by the head's round-robin help index.

Feature switches:

* ``helping``: off gives the deadlock-free variant that always appends its own
  node; on adds round-robin helping and starvation freedom.
* ``reclaim``: off allocates a fresh node per passage; on recycles nodes
  through per-process pools guarded by hazard slots (:mod:`fsgme.reclaim`).
* ``dsm``: waiters spin on a private ready slot and are notified
  (:mod:`fsgme.dsm`).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import dsm as dsm_mod
from . import events
from . import reclaim as reclaim_mod
from .layout import (
    FIELD_NAMES,
    INSTANCE,
    INSTANCE_OWNED,
    NEXT,
    NODE_WORDS,
    NUMBER,
    OWNER,
    PREV,
    SESSION,
    SESSION_NONE,
    SIZE,
    STATE,
    UNSAFE,
)
from .memory import NULL, Memory, NativeMemory
from .state import (
    CONFLICT,
    LEADERLESS,
    RETIRED,
    VACANT,
    is_closed,
    mark_as_retired,
    set_guard_flag,
    set_vacant_flag,
)

class GmeError(Exception):
    pass


class InvalidRequest(GmeError, ValueError):
    """Bad instance or session id; raised before any shared write."""


@dataclass(frozen=True)
class SystemConfig:
    n: int
    m: int = 1
    max_session: int | None = None  # sessions are 1..max_session (unbounded if None)

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.max_session is not None and self.max_session < 1:
            raise ValueError("max_session must be >= 1")

    def valid_session(self, session: int) -> bool:
        if session == SESSION_NONE or session < 0:
            return False
        return self.max_session is None or session <= self.max_session


@dataclass(frozen=True)
class GmeInstance:
    id: int
    head: int  # cell


@dataclass(frozen=True)
class Node:
    """Point-in-time view of a node's fields (uncounted reads)."""

    id: int
    session: int
    instance: int
    number: int
    state: int
    size: int
    prev: int
    next: int
    owner: int
    condition: int


@dataclass
class ProcessContext:
    me: int
    announce: int  # cell
    hazards: tuple[int, int]  # cells
    ready: int  # cell
    snapshot: int = NULL
    # node-reclaim private state
    pools: list[list[int]] = field(default_factory=lambda: [[], []])
    which: int = 0
    marker: int = 0
    passages: int = 0  # passages completed in the current epoch
    cleanup: reclaim_mod.CleanupCursor = field(default_factory=reclaim_mod.CleanupCursor)
    # per-entry measurements
    outer_iterations: int = 0
    spin_iterations: int = 0
    read_head_iterations: int = 0
    max_outer_iterations: int = 0
    max_spin_iterations: int = 0
    entries: int = 0


class GmeSystem:
    """A set of ``m`` GME objects shared by ``n`` processes."""

    def __init__(
        self,
        config: SystemConfig,
        mem: Memory | None = None,
        *,
        helping: bool = True,
        reclaim: bool = True,
        dsm: bool = False,
        recorder=None,
        audit=None,
    ) -> None:
        self.config = config
        self.n = n = config.n
        self.m = m = config.m
        self.mem = mem if mem is not None else NativeMemory(n)
        self.helping = helping
        self.reclaim = reclaim
        self.dsm = dsm
        self.recorder = recorder
        self._rec = events.recorders_by_kind(recorder)
        self.audit = audit
        mem = self.mem

        head_base = mem.alloc(m)
        self.instances = [GmeInstance(i, head_base + i - 1) for i in range(1, m + 1)]
        self.announce_cells = [0] * (n + 1)
        self.hazard_cells = [(0, 0)] * (n + 1)
        self.ready_cells = [0] * (n + 1)
        for p in range(1, n + 1):
            self.announce_cells[p] = mem.alloc(1, NULL, home=p)
            hp = mem.alloc(2, NULL, home=p)
            self.hazard_cells[p] = (hp, hp + 1)
            self.ready_cells[p] = mem.alloc(1, NULL, home=p)
        self.node_base = len(mem)
        # node k's fields start at _nb + k * NODE_WORDS
        self._nb = self.node_base - NODE_WORDS
        self.node_count = 0

        for inst in self.instances:
            dummy = self._new_node()
            self._init_fields(
                dummy,
                session=SESSION_NONE,
                instance=inst.id,
                number=n,
                state=LEADERLESS,
                owner=INSTANCE_OWNED,
                condition=UNSAFE,
            )
            mem.poke(inst.head, dummy)

        self.contexts = [None] + [
            ProcessContext(p, self.announce_cells[p], self.hazard_cells[p], self.ready_cells[p])
            for p in range(1, n + 1)
        ]
        if self.reclaim:
            reclaim_mod.init_pools(self)
        self.init_allocations = mem.allocations

    # -- node table --------------------------------------------------------

    def _new_node(self) -> int:
        base = self.mem.alloc(NODE_WORDS)
        node = (base - self.node_base) // NODE_WORDS + 1
        if self.field(node, SESSION) != base:
            raise GmeError("node storage is not contiguous")
        self.node_count += 1
        return node

    def _init_fields(self, node: int, **values: int) -> None:
        for name, value in values.items():
            self.mem.poke(self.field(node, FIELD_NAMES.index(name)), value)

    def field(self, node: int, f: int) -> int:
        """Cell holding field ``f`` of ``node``."""
        return self._nb + node * NODE_WORDS + f

    def node_of_cell(self, c: int) -> tuple[int, int] | None:
        if c < self.node_base:
            return None
        off = c - self.node_base
        return off // NODE_WORDS + 1, off % NODE_WORDS

    def node_view(self, node: int) -> Node:
        peek = self.mem.peek
        return Node(node, *(peek(self.field(node, f)) for f in range(NODE_WORDS)))

    def head_of(self, instance: int) -> int:
        return self.mem.peek(self.instances[instance - 1].head)

    def context(self, pid: int) -> ProcessContext:
        return self.contexts[pid]

    # -- list head ---------------------------------------------------------

    def read_head(self, ctx: ProcessContext, instance: int) -> int:
        mem, p = self.mem, ctx.me
        head = self.instances[instance - 1].head
        if not self.reclaim:
            ctx.snapshot = mem.read(head, p)
            ctx.read_head_iterations += 1
            return ctx.snapshot
        read = mem.read
        slot0 = ctx.hazards[0]
        plain = self.audit is None
        while True:
            ctx.read_head_iterations += 1
            snap = read(head, p)
            if plain:
                mem.write(slot0, snap, p)
            else:
                self.set_hazard(ctx, 0, snap)
            if read(head, p) == snap:
                ctx.snapshot = snap
                return snap

    def set_hazard(self, ctx: ProcessContext, slot: int, node: int) -> None:
        audit = self.audit
        if audit is None:
            self.mem.write(ctx.hazards[slot], node, ctx.me)
            return
        # the audit sees the slot change atomically with the write
        with audit.guard():
            self.mem.write(ctx.hazards[slot], node, ctx.me)
            audit.hazard(ctx.me, slot, node)

    def test_head(self, ctx: ProcessContext, instance: int) -> bool:
        return self.mem.read(self.instances[instance - 1].head, ctx.me) == ctx.snapshot

    def advance_head(self, ctx: ProcessContext, instance: int, successor: int) -> bool:
        ok = self.mem.cas(self.instances[instance - 1].head, ctx.snapshot, successor, ctx.me)
        rec = self._rec[events.ESTABLISHED]
        if ok and rec is not None:
            session = self.mem.peek(self._nb + successor * NODE_WORDS + SESSION)
            rec.record(rec.ticket(), ctx.me, instance, session, rec.ESTABLISHED)
        return ok

    # -- nodes ---------------------------------------------------------------

    def get_new_node(self, ctx: ProcessContext, instance: int, session: int) -> int:
        mem, p = self.mem, ctx.me
        write = mem.write
        if self.reclaim:
            node = reclaim_mod.acquire_node(self, ctx)
        else:
            node = self._new_node()
            write(self._nb + node * NODE_WORDS + OWNER, p, p)
        fb = self._nb + node * NODE_WORDS
        write(fb + INSTANCE, instance, p)
        write(fb + SESSION, session, p)
        write(fb + SIZE, 1, p)
        write(fb + NEXT, NULL, p)
        write(fb + PREV, NULL, p)
        write(fb + STATE, 0, p)
        write(fb + NUMBER, 0, p)
        write(ctx.announce, node, p)
        rec = self._rec[events.ANNOUNCE]
        if rec is not None:
            rec.record(rec.ticket(), p, instance, session, rec.ANNOUNCE)
        return node

    def select_next_node(self, ctx: ProcessContext, instance: int) -> int:
        mem, p, nb = self.mem, ctx.me, self._nb
        mine = mem.read(ctx.announce, p)
        if not self.helping:
            return mine
        slot = self.announce_cells[mem.read(nb + ctx.snapshot * NODE_WORDS + NUMBER, p)]
        helpee = mem.read(slot, p)
        if self.reclaim:
            if self.audit is None:
                mem.write(ctx.hazards[1], helpee, p)
            else:
                self.set_hazard(ctx, 1, helpee)
            if mem.read(slot, p) != helpee:
                return mine
        if helpee == NULL:
            return mine
        hb = nb + helpee * NODE_WORDS
        if mem.read(hb + INSTANCE, p) != instance:
            return mine
        if mem.read(hb + STATE, p) & RETIRED:
            return mine
        return helpee

    def append_next_node(self, ctx: ProcessContext, instance: int) -> None:
        mem, p, nb = self.mem, ctx.me, self._nb
        current = ctx.snapshot
        cb = nb + current * NODE_WORDS
        candidate = self.select_next_node(ctx, instance)
        mem.cas(cb + NEXT, NULL, candidate, p)
        successor = mem.read(cb + NEXT, p)
        if self.reclaim:
            if self.audit is None:
                mem.write(ctx.hazards[1], successor, p)
            else:
                self.set_hazard(ctx, 1, successor)
        if mem.read(self.instances[instance - 1].head, p) != current:
            return
        sb = nb + successor * NODE_WORDS
        mem.write(sb + PREV, current, p)
        number = mem.read(cb + NUMBER, p)
        mem.write(sb + NUMBER, next_help_index(number, self.n), p)
        self.advance_head(ctx, instance, successor)
        if self.dsm:
            dsm_mod.notify(self, ctx, mem.read(sb + OWNER, p), current)

    def retire_node(self, ctx: ProcessContext, node: int, instance: int = 0) -> None:
        mem, p = self.mem, ctx.me
        rec = self._rec[events.RETIRE]
        if rec is not None:
            rec.record(rec.ticket(), p, instance, SESSION_NONE, rec.RETIRE)
        audit = self.audit
        if audit is None:
            mem.write(ctx.announce, NULL, p)
        else:
            with audit.guard():
                mem.write(ctx.announce, NULL, p)
                audit.retiring(p, node)
        if self.reclaim:
            reclaim_mod.swap_ownership_on_retire(self, ctx, node)
        mark_as_retired(mem, self._nb + node * NODE_WORDS + STATE, p)

    # -- entry and exit sections -------------------------------------------------

    def _check_request(self, instance: int, session: int) -> None:
        if not 1 <= instance <= self.m:
            raise InvalidRequest(f"no such instance: {instance}")
        if not self.config.valid_session(session):
            raise InvalidRequest(f"invalid session: {session}")

    def enter(self, ctx: ProcessContext, instance: int, session: int) -> None:
        """Block until ``ctx`` may run its critical section in ``session``."""
        if not (1 <= instance <= self.m and self.config.valid_session(session)):
            self._check_request(instance, session)
        mem, p, nb = self.mem, ctx.me, self._nb
        read = mem.read
        rec = self._rec[events.ENTER_CALL]
        if rec is not None:
            rec.record(rec.ticket(), p, instance, session, rec.ENTER_CALL)
        ctx.read_head_iterations = 0
        head = self.instances[instance - 1].head
        outer = spins = 0
        mynode = self.get_new_node(ctx, instance, session)
        while True:
            outer += 1
            current = self.read_head(ctx, instance)
            if current == mynode:
                # established by someone's append: lead the session
                prev = read(nb + mynode * NODE_WORDS + PREV, p)
                if self.dsm:
                    dsm_mod.notify_all(self, ctx, prev)
                self.retire_node(ctx, prev, instance)
                break
            cb = nb + current * NODE_WORDS
            state_cell = cb + STATE
            if read(cb + SESSION, p) == session:
                if not is_closed(read(state_cell, p)):
                    size_cell = cb + SIZE
                    mem.faa(size_cell, 1, p)
                    if not is_closed(read(state_cell, p)):
                        self.retire_node(ctx, mynode, instance)
                        break
                    # spurious increment: the session closed under us
                    mem.faa(size_cell, -1, p)
                    set_vacant_flag(mem, state_cell, size_cell, p)
            else:
                set_guard_flag(mem, state_cell, CONFLICT, p)
                set_vacant_flag(mem, state_cell, cb + SIZE, p)
            if self.dsm:
                spins += dsm_mod.wait_adjourned(self, ctx, current)
            else:
                while True:
                    state = read(state_cell, p)
                    if state & VACANT:
                        break
                    spins += 1
                    mem.spin(state_cell, state, p)
            if read(head, p) == ctx.snapshot:
                self.append_next_node(ctx, instance)
        if self.reclaim:
            if self.audit is None:
                mem.write(ctx.hazards[0], NULL, p)
                mem.write(ctx.hazards[1], NULL, p)
            else:
                reclaim_mod.release_hazards(self, ctx)
            reclaim_mod.cleanup_slice(self, ctx)
        ctx.outer_iterations = outer
        ctx.spin_iterations = spins
        ctx.entries += 1
        if outer > ctx.max_outer_iterations:
            ctx.max_outer_iterations = outer
        if spins > ctx.max_spin_iterations:
            ctx.max_spin_iterations = spins
        rec = self._rec[events.ENTER_RETURN]
        if rec is not None:
            rec.record(rec.ticket(), p, instance, session, rec.ENTER_RETURN)

    def exit(self, ctx: ProcessContext, instance: int) -> None:
        if not 1 <= instance <= self.m:
            raise InvalidRequest(f"no such instance: {instance}")
        mem, p = self.mem, ctx.me
        rec = self._rec[events.EXIT_CALL]
        if rec is not None:
            rec.record(rec.ticket(), p, instance, SESSION_NONE, rec.EXIT_CALL)
        current = self.read_head(ctx, instance)
        cb = self._nb + current * NODE_WORDS
        state_cell = cb + STATE
        if mem.read(cb + OWNER, p) == p:
            set_guard_flag(mem, state_cell, LEADERLESS, p)
        size_cell = cb + SIZE
        mem.faa(size_cell, -1, p)
        if set_vacant_flag(mem, state_cell, size_cell, p) and self.dsm:
            dsm_mod.notify_all(self, ctx, current)
        if self.reclaim:
            if self.audit is None:
                mem.write(ctx.hazards[0], NULL, p)
            else:
                self.set_hazard(ctx, 0, NULL)
        rec = self._rec[events.EXIT_RETURN]
        if rec is not None:
            rec.record(rec.ticket(), p, instance, SESSION_NONE, rec.EXIT_RETURN)


def next_help_index(k: int, n: int) -> int:
    """Round-robin successor of help index ``k`` over process ids 1..n.

    ``k = 0`` (fresh node) maps to 1; repeated application from any start
    visits every id within ``n`` steps.
    """
    return k % n + 1


def create_system(config: SystemConfig, mem: Memory | None = None, **switches) -> GmeSystem:
    return GmeSystem(config, mem, **switches)


def init_system(config: SystemConfig, mem: Memory | None = None, **switches):
    """Build a system and return its ``(instances, contexts)``."""
    system = GmeSystem(config, mem, **switches)
    return system.instances, system.contexts[1:]


def enter(system: GmeSystem, ctx: ProcessContext, instance: int, session: int) -> None:
    system.enter(ctx, instance, session)


def exit(system: GmeSystem, ctx: ProcessContext, instance: int) -> None:  # noqa: A001
    system.exit(ctx, instance)
