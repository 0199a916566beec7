"""Throughput benchmark: critical sections completed per second.

Each worker thread loops: pick a session, enter, run a small critical
section (one fetch-and-add on a shared counter plus writes to between 1 and
100 thread-local slots), exit.  The non-critical section is empty.  Passages
completed during the warm-up are not counted.

Usage::

    bench --algorithm fs-gme,me-baseline --threads 1,2,4,8 --sessions 2,8 \\
          --distribution uniform --duration 2 --warmup 0.5 --runs 3 --seed 42 \\
          --csv out.csv [--verify] [--pin]
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import platform
import random
import statistics
import sys
import threading
import time
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .baseline import TicketLockGme
from .core import GmeSystem, SystemConfig
from .memory import NativeMemory
from .verify.checks import check_gme
from .verify.trace import CS_KINDS, TraceRecorder

log = logging.getLogger("fsgme.bench")

ALGORITHMS = ("fs-gme", "fs-gme-dsm", "me-baseline")
DISTRIBUTIONS = ("uniform", "skewed")
DEFAULT_THREADS = (1, 2, 4, 8, 16, 32, 48)
DEFAULT_SESSIONS = (2, 8)
HOT_MASS = 0.9
GENERATOR = "random.Random (Mersenne Twister MT19937), one instance per worker"
CSV_HEADER = ("ThreadCount", "Sessions", "Distribution", "Algorithm", "Throughput", "StdDev")


class VerificationFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class BenchConfig:
    threads: tuple[int, ...] = ()
    sessions: tuple[int, ...] = DEFAULT_SESSIONS
    distribution: str = "uniform"
    duration: float = 2.0
    warmup: float = 0.5
    runs: int = 3
    seed: int = 42
    algorithms: tuple[str, ...] = ("fs-gme", "me-baseline")
    csv: str | None = None
    verify: bool = False
    pin: bool = False
    hot_split: float = 0.5  # share of the hot mass that goes to the first hot session

    def __post_init__(self) -> None:
        if not self.threads:
            object.__setattr__(self, "threads", default_threads())
        if any(t < 1 for t in self.threads):
            raise ValueError("thread counts must be >= 1")
        if any(s < 1 for s in self.sessions):
            raise ValueError("session counts must be >= 1")
        if self.distribution not in DISTRIBUTIONS:
            raise ValueError(f"distribution must be one of {DISTRIBUTIONS}")
        if not 0 <= self.warmup < self.duration:
            raise ValueError("need 0 <= warmup < duration")
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if not 0.0 <= self.hot_split <= 1.0:
            raise ValueError("hot_split must lie in [0, 1]")
        for name in self.algorithms:
            if name not in ALGORITHMS:
                raise ValueError(f"unknown algorithm {name!r}; choose from {ALGORITHMS}")


def default_threads() -> tuple[int, ...]:
    cap = os.cpu_count() or 1
    return tuple(t for t in DEFAULT_THREADS if t <= cap) or (1,)


@dataclass(frozen=True)
class BenchRow:
    threads: int
    sessions: int
    distribution: str
    algorithm: str
    throughput: float
    stddev: float
    samples: tuple[float, ...] = ()


@dataclass
class ThroughputReport:
    config: BenchConfig
    rows: list[BenchRow] = field(default_factory=list)

    def row(self, threads: int, sessions: int, algorithm: str) -> BenchRow:
        for r in self.rows:
            if (r.threads, r.sessions, r.algorithm) == (threads, sessions, algorithm):
                return r
        raise KeyError((threads, sessions, algorithm))


def session_weights(sessions: int, distribution: str, hot_split: float = 0.5) -> list[float]:
    """Probability of each session id 1..sessions."""
    if distribution == "uniform" or sessions <= 2:
        return [1.0 / sessions] * sessions
    cold = (1.0 - HOT_MASS) / (sessions - 2)
    return [HOT_MASS * hot_split, HOT_MASS * (1.0 - hot_split)] + [cold] * (sessions - 2)


def make_lock(algorithm: str, n: int, recorder=None):
    config = SystemConfig(n, 1)
    mem = NativeMemory(n)
    if algorithm == "me-baseline":
        return TicketLockGme(config, mem, recorder=recorder)
    return GmeSystem(config, mem, dsm=algorithm == "fs-gme-dsm", recorder=recorder)


def run_once(
    algorithm: str,
    threads: int,
    sessions: int,
    cfg: BenchConfig,
    seed: int,
) -> tuple[float, TraceRecorder | None]:
    """One timed run; returns passages per second and the trace if verifying."""
    recorder = TraceRecorder(threads, CS_KINDS) if cfg.verify else None
    lock = make_lock(algorithm, threads, recorder)
    mem = lock.mem
    counter = mem.alloc(1)
    weights = session_weights(sessions, cfg.distribution, cfg.hot_split)
    ids = list(range(1, sessions + 1))
    counts = [0] * (threads + 1)
    stop = threading.Event()
    ready = threading.Barrier(threads + 1)
    errors: list[str] = []
    ncpu = os.cpu_count() or 1

    def worker(pid: int) -> None:
        if cfg.pin and hasattr(os, "sched_setaffinity"):
            os.sched_setaffinity(0, {(pid - 1) % ncpu})
        rng = random.Random(seed * 7919 + pid)
        ctx = lock.context(pid)
        slots = [0] * 100
        pick, randint = rng.choices, rng.randint
        done = 0
        ready.wait()
        try:
            while not stop.is_set():
                session = pick(ids, weights)[0]
                lock.enter(ctx, 1, session)
                mem.faa(counter, 1, pid)
                for i in range(randint(1, 100)):
                    slots[i] = done
                lock.exit(ctx, 1)
                done += 1
                counts[pid] = done
        except BaseException as exc:  # surfaced by the coordinator
            errors.append(f"worker {pid}: {exc!r}")
            stop.set()

    workers = [threading.Thread(target=worker, args=(p,), daemon=True) for p in range(1, threads + 1)]
    for t in workers:
        t.start()
    ready.wait()
    time.sleep(cfg.warmup)
    base = sum(counts)
    t0 = time.perf_counter()
    time.sleep(cfg.duration - cfg.warmup)
    total = sum(counts) - base
    elapsed = time.perf_counter() - t0
    stop.set()
    for t in workers:
        t.join()
    if errors:
        raise RuntimeError("; ".join(errors))
    return total / elapsed, recorder


def run_benchmark(cfg: BenchConfig) -> ThroughputReport:
    report = ThroughputReport(cfg)
    for threads in cfg.threads:
        for sessions in cfg.sessions:
            for algorithm in cfg.algorithms:
                samples = []
                for run in range(cfg.runs):
                    seed = cfg.seed + 1000 * run
                    rate, recorder = run_once(algorithm, threads, sessions, cfg, seed)
                    if recorder is not None:
                        verdict = check_gme(recorder)
                        if not verdict:
                            raise VerificationFailure(
                                f"{algorithm} threads={threads} sessions={sessions} run={run}: {verdict}"
                            )
                    samples.append(rate)
                    log.info("%s threads=%d sessions=%d run=%d: %.0f/s", algorithm, threads, sessions, run, rate)
                std = statistics.stdev(samples) if len(samples) > 1 else 0.0
                report.rows.append(
                    BenchRow(threads, sessions, cfg.distribution, algorithm, statistics.fmean(samples), std, tuple(samples))
                )
    return report


def write_csv(report: ThroughputReport, path: str | os.PathLike) -> None:
    if not report.rows:
        raise ValueError("empty report")
    order = {name: i for i, name in enumerate(ALGORITHMS)}
    rows = sorted(report.rows, key=lambda r: (r.threads, r.sessions, r.distribution, order[r.algorithm]))
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(CSV_HEADER)
        for r in rows:
            out.writerow((r.threads, r.sessions, r.distribution, r.algorithm, f"{r.throughput:.3f}", f"{r.stddev:.3f}"))


def write_metadata(report: ThroughputReport, path: str | os.PathLike) -> None:
    meta = {
        "seed": report.config.seed,
        "generator": GENERATOR,
        "config": asdict(report.config),
        "python": sys.version.split()[0],
        "platform": platform.platform(),
        "cpus": os.cpu_count(),
        "samples": {f"{r.threads}/{r.sessions}/{r.algorithm}": list(r.samples) for r in report.rows},
    }
    Path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _name_list(text: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in text.split(",") if x.strip())


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bench", description="Group mutual exclusion throughput benchmark.")
    p.add_argument("--algorithm", type=_name_list, default=("fs-gme", "me-baseline"),
                   help=f"comma-separated subset of {', '.join(ALGORITHMS)}")
    p.add_argument("--threads", type=_int_list, default=(),
                   help="comma-separated thread counts (default: 1,2,4,... up to the CPU count)")
    p.add_argument("--sessions", type=_int_list, default=DEFAULT_SESSIONS)
    p.add_argument("--distribution", choices=DISTRIBUTIONS, default="uniform")
    p.add_argument("--hot-split", type=float, default=0.5,
                   help="skewed only: share of the 90%% hot mass given to the first hot session")
    p.add_argument("--duration", type=float, default=2.0, help="seconds per run, warm-up included")
    p.add_argument("--warmup", type=float, default=0.5)
    p.add_argument("--runs", type=int, default=3)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--csv", help="write results here (plus a .meta.json sidecar)")
    p.add_argument("--verify", action="store_true", help="trace every run and check group mutual exclusion")
    p.add_argument("--pin", action="store_true", help="pin worker threads to CPUs")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = BenchConfig(
            threads=args.threads,
            sessions=args.sessions,
            distribution=args.distribution,
            duration=args.duration,
            warmup=args.warmup,
            runs=args.runs,
            seed=args.seed,
            algorithms=args.algorithm,
            csv=args.csv,
            verify=args.verify,
            pin=args.pin,
            hot_split=args.hot_split,
        )
    except ValueError as exc:
        print(f"bench: {exc}", file=sys.stderr)
        return 2
    try:
        report = run_benchmark(cfg)
    except VerificationFailure as exc:
        print(f"bench: verification failed: {exc}", file=sys.stderr)
        return 1
    print(",".join(CSV_HEADER))
    for r in report.rows:
        print(f"{r.threads},{r.sessions},{r.distribution},{r.algorithm},{r.throughput:.1f},{r.stddev:.1f}")
    if cfg.csv:
        write_csv(report, cfg.csv)
        write_metadata(report, cfg.csv + ".meta.json")
    return 0


if __name__ == "__main__":
    sys.exit(main())
