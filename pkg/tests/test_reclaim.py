from __future__ import annotations

import pytest

from fsgme import reclaim
from fsgme.core import GmeSystem, SystemConfig
from fsgme.layout import CONDITION, OWNER, SAFE, UNSAFE
from fsgme.memory import NULL, NativeMemory
from fsgme.verify import checks
from fsgme.verify.explore import Scenario, World
from fsgme.verify.monitors import HazardAudit


def system_for(n=2, m=1, **kw):
    return GmeSystem(SystemConfig(n, m), NativeMemory(n), **kw)


def cond(system, node):
    return system.mem.peek(system.field(node, CONDITION))


def test_pools_after_init():
    system = system_for(n=3)
    for ctx in system.contexts[1:]:
        for pool in ctx.pools:
            assert len(pool) == 9
            for node in pool:
                assert cond(system, node) == SAFE
                assert system.mem.peek(system.field(node, OWNER)) == ctx.me
        assert (ctx.which, ctx.marker, ctx.passages) == (0, 0, 0)


def test_acquire_flips_condition():
    system = system_for()
    ctx = system.context(1)
    node = reclaim.acquire_node(system, ctx)
    assert node == ctx.pools[0][0]
    assert cond(system, node) == UNSAFE


def test_acquire_refuses_unsafe_node():
    system = system_for()
    ctx = system.context(1)
    system.mem.poke(system.field(ctx.pools[0][0], CONDITION), UNSAFE)
    with pytest.raises(reclaim.ReclamationError):
        reclaim.acquire_node(system, ctx)


def test_follower_retire_keeps_pool_multiset():
    system = system_for()
    ctx = system.context(1)
    before = sorted(ctx.pools[0])
    node = reclaim.acquire_node(system, ctx)
    reclaim.swap_ownership_on_retire(system, ctx, node)
    assert sorted(ctx.pools[0]) == before
    assert ctx.pools[0][0] == node and ctx.marker == 1


def test_leader_takes_predecessor_into_pool():
    system = system_for(n=2)
    c1, c2 = system.context(1), system.context(2)
    system.enter(c1, 1, 1)
    system.exit(c1, 1)
    x1 = system.head_of(1)  # p1's node, now the head
    system.enter(c2, 1, 2)
    x2 = system.head_of(1)
    assert x2 != x1
    # p2 led the new session and retired p1's old node into its own pool
    assert system.mem.peek(system.field(x1, OWNER)) == 2
    assert x1 in c2.pools[0] + c2.pools[1]
    assert x1 not in c1.pools[0] + c1.pools[1]
    assert x2 not in c2.pools[0] + c2.pools[1]
    system.exit(c2, 1)
    assert checks.check_memory(system)


def test_marker_advances_once_per_passage():
    system = system_for(n=3)
    ctx = system.context(1)
    for k in range(1, 3):
        system.enter(ctx, 1, 1)
        system.exit(ctx, 1)
        assert (ctx.marker, ctx.passages) == (k, k)


def run_epoch(system, ctx, hazards=()):
    """Drain a full cleanup of ``ctx``'s passive pool with the given hazard writes in place."""
    for p, slot, node in hazards:
        system.mem.poke(system.hazard_cells[p][slot], node)
    while ctx.cleanup.phase != 3:
        reclaim.cleanup_slice(system, ctx)


def test_cleanup_with_no_hazards_frees_everything():
    system = system_for(n=2)
    ctx = system.context(1)
    passive = ctx.pools[1]
    for node in passive:
        system.mem.poke(system.field(node, CONDITION), UNSAFE)
    run_epoch(system, ctx)
    assert all(cond(system, v) == SAFE for v in passive)
    assert ctx.cleanup.write == -1  # every slot collected


def test_cleanup_keeps_hazard_held_owned_node():
    system = system_for(n=2)
    ctx = system.context(1)
    passive = ctx.pools[1]
    held = passive[2]
    for node in passive:
        system.mem.poke(system.field(node, CONDITION), UNSAFE)
    run_epoch(system, ctx, hazards=[(2, 1, held)])
    assert cond(system, held) == UNSAFE
    assert [v for v in passive if cond(system, v) != SAFE] == [held]
    # SAFE nodes are packed at the tail, the held node in front of them
    assert passive[0] == held
    assert ctx.cleanup.write == 0


def test_cleanup_ignores_hazard_on_foreign_node():
    system = system_for(n=2)
    c1, c2 = system.context(1), system.context(2)
    foreign = c2.pools[1][0]
    run_epoch(system, c1, hazards=[(1, 0, foreign)])
    assert cond(system, foreign) == SAFE
    assert all(cond(system, v) == SAFE for v in c1.pools[1])


def test_pools_swap_after_n_passages():
    system = system_for(n=2)
    ctx = system.context(1)
    first_active = ctx.pools[0]
    for _ in range(2):
        system.enter(ctx, 1, 1)
        system.exit(ctx, 1)
    assert ctx.which == 1 and ctx.passages == 0
    assert ctx.pools[1 - ctx.which] is first_active
    assert ctx.marker == 0  # nothing hazard-held: the whole new pool is SAFE


def pin_all_slots(system, nodes):
    slots = [c for p in range(1, system.n + 1) for c in system.hazard_cells[p]]
    for cell, node in zip(slots, nodes):
        system.mem.poke(cell, node)


def test_epoch_switch_with_every_slot_pinned_still_has_n_safe():
    system = system_for(n=2)
    ctx = system.context(1)
    passive = ctx.pools[1]
    pin_all_slots(system, passive[:4])
    ctx.passages = system.n
    reclaim.cleanup_slice(system, ctx)
    assert ctx.which == 1
    assert len(reclaim.safe_nodes(system, ctx)) == 2 == system.n
    assert set(ctx.pools[1][:ctx.marker]) == set(passive[:4])


def test_epoch_switch_rejects_short_pool():
    system = system_for(n=2)
    ctx = system.context(1)
    ctx.pools[1] = ctx.pools[1][:5]  # a pool that lost a slot
    pin_all_slots(system, ctx.pools[1][:4])
    ctx.passages = system.n
    with pytest.raises(reclaim.ReclamationError):
        reclaim.cleanup_slice(system, ctx)


def test_release_hazards_clears_both_slots():
    system = system_for()
    ctx = system.context(1)
    system.set_hazard(ctx, 0, 5)
    system.set_hazard(ctx, 1, 6)
    reclaim.release_hazards(system, ctx)
    assert [system.mem.peek(c) for c in ctx.hazards] == [NULL, NULL]


def test_audit_flags_reuse_of_protected_node():
    audit = HazardAudit()
    audit.hazard(2, 0, 17)
    audit.retiring(1, 17)
    audit.acquired(1, 17)
    assert not audit.clean
    assert audit.violations[0].holder == 2
    fresh = HazardAudit()
    fresh.hazard(2, 0, 17)
    fresh.retiring(1, 17)
    fresh.hazard(2, 0, NULL)  # slot moved on: reuse is fine
    fresh.acquired(1, 17)
    assert fresh.clean


def test_long_run_keeps_census():
    system = system_for(n=3, m=2)
    for k in range(300):
        ctx = system.context(k % 3 + 1)
        system.enter(ctx, k % 2 + 1, k % 4 + 1)
        system.exit(ctx, k % 2 + 1)
    assert checks.check_memory(system)
    assert system.mem.allocations == system.init_allocations


# -- a stalled hazard holder across several epochs ------------------------------------


def stalled_holder_run(blind_scan: bool, monkeypatch) -> World:
    """p2 publishes the dummy head as a hazard and stalls; p1 then runs ten
    passages, retiring the dummy into its pool and cycling through epochs."""
    scenario = Scenario((((1, 1),) * 10, ((1, 2),)), helping=False)
    world = World(scenario)
    system = world.system
    if blind_scan:
        empty = world.mem.alloc(1)
        real = reclaim._micro_steps

        def blind(system, ctx, budget):
            saved = system.hazard_cells
            system.hazard_cells = [(empty, empty)] * len(saved)
            try:
                real(system, ctx, budget)
            finally:
                system.hazard_cells = saved

        monkeypatch.setattr(reclaim, "_micro_steps", blind)
    dummy = system.head_of(1)
    slot = system.hazard_cells[2][0]
    while world.mem.peek(slot) != dummy:
        world.step(2)
    while 1 in world.controller.enabled():
        world.step(1)
    assert world.controller.procs[1].state == "done"
    while world.controller.enabled():
        world.step(2)
    return world


def test_stalled_hazard_holder_keeps_node_out_of_reuse(monkeypatch):
    world = stalled_holder_run(False, monkeypatch)
    assert world.audit.clean
    assert world.end_problems() == []


def test_blind_hazard_scan_is_caught(monkeypatch):
    world = stalled_holder_run(True, monkeypatch)
    assert not world.audit.clean
    violation = world.audit.violations[0]
    assert (violation.acquirer, violation.holder, violation.slot) == (1, 2, 0)
