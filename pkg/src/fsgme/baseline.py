"""Mutual exclusion used as group mutual exclusion: one ticket lock per
instance serializes every critical section whatever its session."""

from __future__ import annotations

from dataclasses import dataclass

from . import events
from .core import InvalidRequest, SystemConfig
from .memory import Memory, NativeMemory


@dataclass
class TicketContext:
    me: int
    ticket: int = 0


class TicketLockGme:
    def __init__(self, config: SystemConfig, mem: Memory | None = None, *, recorder=None) -> None:
        self.config = config
        self.n, self.m = config.n, config.m
        self.mem = mem if mem is not None else NativeMemory(config.n)
        self.recorder = recorder
        self._rec = events.recorders_by_kind(recorder)
        base = self.mem.alloc(2 * self.m)
        # per instance: next ticket to hand out, ticket now being served
        self.next_cells = [base + 2 * i for i in range(self.m)]
        self.serving_cells = [base + 2 * i + 1 for i in range(self.m)]
        self.contexts = [None] + [TicketContext(p) for p in range(1, self.n + 1)]

    def context(self, pid: int) -> TicketContext:
        return self.contexts[pid]

    def _check(self, instance: int) -> None:
        if not 1 <= instance <= self.m:
            raise InvalidRequest(f"no such instance: {instance}")

    def enter(self, ctx: TicketContext, instance: int, session: int) -> None:
        self._check(instance)
        if not self.config.valid_session(session):
            raise InvalidRequest(f"invalid session: {session}")
        mem, p = self.mem, ctx.me
        rec = self._rec[events.ENTER_CALL]
        if rec is not None:
            rec.record(rec.ticket(), p, instance, session, rec.ENTER_CALL)
        ctx.ticket = mem.faa(self.next_cells[instance - 1], 1, p)
        serving = self.serving_cells[instance - 1]
        while True:
            now = mem.read(serving, p)
            if now == ctx.ticket:
                break
            mem.spin(serving, now, p)
        rec = self._rec[events.ENTER_RETURN]
        if rec is not None:
            rec.record(rec.ticket(), p, instance, session, rec.ENTER_RETURN)

    def exit(self, ctx: TicketContext, instance: int) -> None:
        self._check(instance)
        mem, p = self.mem, ctx.me
        rec = self._rec[events.EXIT_CALL]
        if rec is not None:
            rec.record(rec.ticket(), p, instance, 0, rec.EXIT_CALL)
        mem.write(self.serving_cells[instance - 1], ctx.ticket + 1, p)
        rec = self._rec[events.EXIT_RETURN]
        if rec is not None:
            rec.record(rec.ticket(), p, instance, 0, rec.EXIT_RETURN)
