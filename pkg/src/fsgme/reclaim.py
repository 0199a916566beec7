"""Node recycling with hazard slots and two per-process pools.

Each process owns two pools of ``3n`` nodes.  Nodes are taken from the
active pool at ``marker``; a retired node is written back into the slot it
vacated and its ownership passes to the retiring process, so every pool
stays exactly ``3n`` long and no node is ever allocated after start-up.

While the active pool drains, the passive one is cleaned a few micro-steps
per passage: mark every node UNKNOWN, scan all hazard slots and demote any
still-UNKNOWN node this process owns to UNSAFE, then move the nodes still
UNKNOWN to the tail as SAFE.  After ``n`` passages the pools swap roles.
"""

from __future__ import annotations

from dataclasses import dataclass

from .layout import CONDITION, NODE_WORDS, OWNER, SAFE, UNKNOWN, UNSAFE
from .memory import NULL
from .state import ALL_FLAGS

__all__ = [
    "QUANTUM",
    "SAFE",
    "UNKNOWN",
    "UNSAFE",
    "CleanupCursor",
    "ReclamationError",
    "acquire_node",
    "cleanup_slice",
    "init_pools",
    "release_hazards",
    "swap_ownership_on_retire",
]

# cleanup micro-steps per passage; a full epoch needs 8n of them
QUANTUM = 8

_MARK, _SCAN, _PARTITION, _DONE = range(4)


class ReclamationError(RuntimeError):
    """The active pool offered a node that was not safe to reuse."""


@dataclass
class CleanupCursor:
    phase: int = _MARK
    index: int = 0
    write: int = 0  # partition: slots above this hold collected SAFE nodes

    def reset(self) -> None:
        self.phase = _MARK
        self.index = 0
        self.write = 0


def pool_size(n: int) -> int:
    return 3 * n


def init_pools(system) -> None:
    """Give every process two full pools of fresh SAFE nodes it owns."""
    size = pool_size(system.n)
    for ctx in system.contexts[1:]:
        for which in (0, 1):
            pool = []
            for _ in range(size):
                node = system._new_node()
                system._init_fields(node, owner=ctx.me, condition=SAFE, state=ALL_FLAGS)
                pool.append(node)
            ctx.pools[which] = pool
        ctx.which = 0
        ctx.marker = 0
        ctx.passages = 0
        ctx.cleanup.reset()


def acquire_node(system, ctx) -> int:
    mem, p = system.mem, ctx.me
    pool = ctx.pools[ctx.which]
    if ctx.marker >= len(pool):
        raise ReclamationError(f"process {p}: active pool exhausted")
    node = pool[ctx.marker]
    cond = system._nb + node * NODE_WORDS + CONDITION
    if mem.read(cond, p) != SAFE:
        raise ReclamationError(f"process {p}: node {node} at marker {ctx.marker} is not SAFE")
    mem.write(cond, UNSAFE, p)
    if system.audit is not None:
        system.audit.acquired(p, node)
    return node


def swap_ownership_on_retire(system, ctx, node: int) -> None:
    """Take ``node`` into the slot the last acquired node came from."""
    p = ctx.me
    system.mem.write(system._nb + node * NODE_WORDS + OWNER, p, p)
    ctx.pools[ctx.which][ctx.marker] = node
    ctx.marker += 1
    ctx.passages += 1


def release_hazards(system, ctx) -> None:
    system.set_hazard(ctx, 0, NULL)
    system.set_hazard(ctx, 1, NULL)


def _micro_steps(system, ctx, budget: int) -> None:
    """Advance the passive pool's cleanup by up to ``budget`` micro-steps
    (all remaining ones if ``budget`` is negative)."""
    mem, p = system.mem, ctx.me
    read, write = mem.read, mem.write
    nb = system._nb
    cur = ctx.cleanup
    passive = ctx.pools[1 - ctx.which]
    size = len(passive)
    # the position lives in locals while the loop runs (the simulator reads
    # frame locals) and goes back into the cursor afterwards
    phase, index, top = cur.phase, cur.index, cur.write
    done = 0
    while done != budget and phase != _DONE:
        done += 1
        if phase == _MARK:
            write(nb + passive[index] * NODE_WORDS + CONDITION, UNKNOWN, p)
            index += 1
            if index == size:
                phase, index = _SCAN, 0
        elif phase == _SCAN:
            node = read(system.hazard_cells[index // 2 + 1][index % 2], p)
            if node != NULL:
                cond = nb + node * NODE_WORDS + CONDITION
                # the owner test sits between two condition reads so a node
                # that changed hands mid-test is left alone
                if (
                    read(cond, p) == UNKNOWN
                    and read(cond - CONDITION + OWNER, p) == p
                    and read(cond, p) == UNKNOWN
                ):
                    write(cond, UNSAFE, p)
            index += 1
            if index == 2 * system.n:
                phase = _PARTITION
                index = top = size - 1
        else:
            node = passive[index]
            cond = nb + node * NODE_WORDS + CONDITION
            if read(cond, p) == UNKNOWN:
                passive[index], passive[top] = passive[top], node
                write(cond, SAFE, p)
                top -= 1
            index -= 1
            if index < 0:
                phase = _DONE
    cur.phase, cur.index, cur.write = phase, index, top


def cleanup_slice(system, ctx) -> None:
    """Run up to ``QUANTUM`` cleanup micro-steps; switch pools after ``n`` passages."""
    cur = ctx.cleanup
    _micro_steps(system, ctx, QUANTUM)
    if ctx.passages < system.n:
        return
    if cur.phase != _DONE:
        # unreachable with QUANTUM * n >= 8n, kept as a guard
        _micro_steps(system, ctx, -1)
    size = len(ctx.pools[1 - ctx.which])
    marker = cur.write + 1
    if size - marker < system.n:
        raise ReclamationError(
            f"process {ctx.me}: only {size - marker} SAFE nodes after cleanup, need {system.n}"
        )
    ctx.which = 1 - ctx.which
    ctx.marker = marker
    ctx.passages = 0
    cur.reset()


def safe_nodes(system, ctx) -> list[int]:
    """Unused SAFE nodes left in the active pool (uncounted reads)."""
    peek = system.mem.peek
    pool = ctx.pools[ctx.which]
    return [v for v in pool[ctx.marker :] if peek(system.field(v, CONDITION)) == SAFE]


def pool_nodes(system) -> list[int]:
    out = []
    for ctx in system.contexts[1:]:
        out.extend(ctx.pools[0])
        out.extend(ctx.pools[1])
    return out


