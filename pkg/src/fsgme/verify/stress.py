"""Native multi-threaded stress runs with optional tracing and instrumentation."""

from __future__ import annotations

import random
import sys
import threading
import time
from collections.abc import Iterable
from dataclasses import dataclass, field

from ..core import GmeSystem, SystemConfig
from ..memory import NativeMemory
from .monitors import HazardAudit
from .trace import CS_KINDS, TraceRecorder

PATTERNS = ("uniform", "adversarial", "homogeneous")


@dataclass(frozen=True)
class StressConfig:
    n: int
    passages: int = 10_000  # per thread
    sessions: int = 2
    m: int = 1
    # uniform: random session per request; adversarial: every process
    # switches session on each request, out of phase with its neighbours;
    # homogeneous: everyone always asks for session 1
    pattern: str = "uniform"
    helping: bool = True
    reclaim: bool = True
    dsm: bool = False
    seed: int = 0
    instrument: bool = False  # per-entry step and per-exit operation counts
    record: Iterable[int] | None = CS_KINDS  # event kinds to trace, None for no trace
    audit: bool = False
    switch_interval: float | None = None  # GIL switch interval during the run
    timeout: float = 600.0

    def __post_init__(self) -> None:
        if self.pattern not in PATTERNS:
            raise ValueError(f"pattern must be one of {PATTERNS}")
        if self.n < 1 or self.passages < 0 or self.sessions < 1 or self.m < 1:
            raise ValueError("n, sessions and m must be positive")


@dataclass
class StressResult:
    config: StressConfig
    system: GmeSystem
    recorder: TraceRecorder | None
    audit: HazardAudit | None
    seconds: float
    entry_steps: list[int] = field(default_factory=list)
    exit_ops: list[int] = field(default_factory=list)
    outer: list[int] = field(default_factory=list)
    spins: list[int] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)

    @property
    def total_passages(self) -> int:
        return self.config.n * self.config.passages


def session_for(cfg: StressConfig, pid: int, k: int, rng: random.Random) -> int:
    if cfg.pattern == "homogeneous":
        return 1
    if cfg.pattern == "adversarial":
        return (pid + k) % cfg.sessions + 1
    return rng.randrange(cfg.sessions) + 1


def run_stress(cfg: StressConfig) -> StressResult:
    n = cfg.n
    mem = NativeMemory(n, instrument=cfg.instrument)
    recorder = TraceRecorder(n, cfg.record) if cfg.record is not None else None
    audit = HazardAudit(threaded=True) if cfg.audit else None
    system = GmeSystem(
        SystemConfig(n, cfg.m),
        mem,
        helping=cfg.helping,
        reclaim=cfg.reclaim,
        dsm=cfg.dsm,
        recorder=recorder,
        audit=audit,
    )
    per_thread = [([], [], [], []) for _ in range(n + 1)]
    errors: list[str] = []
    start = threading.Barrier(n + 1)

    def worker(pid: int) -> None:
        ctx = system.context(pid)
        rng = random.Random(cfg.seed * 1_000_003 + pid)
        steps = mem.instr.steps if mem.instr is not None else None
        entry, exits, outer, spins = per_thread[pid]
        m = cfg.m
        start.wait()
        try:
            for k in range(cfg.passages):
                instance = rng.randrange(m) + 1 if m > 1 else 1
                session = session_for(cfg, pid, k, rng)
                if steps is None:
                    system.enter(ctx, instance, session)
                    system.exit(ctx, instance)
                    continue
                before = steps[pid]
                system.enter(ctx, instance, session)
                mid = steps[pid]
                system.exit(ctx, instance)
                entry.append(mid - before)
                exits.append(steps[pid] - mid)
                outer.append(ctx.outer_iterations)
                spins.append(ctx.spin_iterations)
        except BaseException as exc:  # reported in the result
            errors.append(f"p{pid}: {exc!r}")

    old_interval = sys.getswitchinterval()
    if cfg.switch_interval is not None:
        sys.setswitchinterval(cfg.switch_interval)
    threads = [threading.Thread(target=worker, args=(p,), daemon=True) for p in range(1, n + 1)]
    try:
        for t in threads:
            t.start()
        start.wait()
        t0 = time.perf_counter()
        deadline = t0 + cfg.timeout
        for t in threads:
            t.join(max(0.0, deadline - time.perf_counter()))
        seconds = time.perf_counter() - t0
    finally:
        sys.setswitchinterval(old_interval)
    if any(t.is_alive() for t in threads):
        errors.append(f"threads still running after {cfg.timeout}s")
    result = StressResult(cfg, system, recorder, audit, seconds, errors=errors)
    for entry, exits, outer, spins in per_thread:
        result.entry_steps.extend(entry)
        result.exit_ops.extend(exits)
        result.outer.extend(outer)
        result.spins.extend(spins)
    return result
