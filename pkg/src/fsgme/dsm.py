"""Local-spin waiting for distributed shared memory.

A waiter publishes the node it is waiting on in its own ready slot and spins
there; whoever adjourns or replaces that node clears the slot by CAS.  The
CAS only succeeds while the slot still names that node, so a late notify
for an old node cannot wake a waiter that has moved on.
"""

from __future__ import annotations

from .layout import STATE
from .memory import NULL
from .state import VACANT


def wait_adjourned(system, ctx, current: int) -> int:
    """Wait until ``current`` has been adjourned; returns the number of failed polls."""
    mem, p = system.mem, ctx.me
    ready = ctx.ready
    mem.write(ready, current, p)
    if mem.read(system.field(current, STATE), p) & VACANT:
        mem.write(ready, NULL, p)
    spins = 0
    mem.begin_wait(p)
    try:
        while True:
            seen = mem.read(ready, p)
            if seen == NULL:
                return spins
            spins += 1
            mem.spin(ready, seen, p)
    finally:
        mem.end_wait(p)


def notify(system, ctx, target: int, node: int) -> None:
    if 1 <= target <= system.n:
        system.mem.cas(system.ready_cells[target], node, NULL, ctx.me)


def notify_all(system, ctx, node: int) -> None:
    for target in range(1, system.n + 1):
        notify(system, ctx, target, node)
