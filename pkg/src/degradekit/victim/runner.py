"""Benchmark runner: repeated synchronized runs aggregated into CycleStats."""

from __future__ import annotations

import sys
import tempfile
from pathlib import Path
from typing import Callable, Optional

from ..errors import CapabilityError, ValidationError
from ..traces import DegradeStrategy
from .bench import CycleStats
from .build import BuiltVictim, VictimSpec, build_victim
from .sync import orchestrate


def _party_cmd(*args: str) -> list:
    return [sys.executable, "-m", "degradekit.victim.launcher", *args]


def _degrade_args(strategy: DegradeStrategy, victim: BuiltVictim, target_offset: Optional[int]):
    if strategy is DegradeStrategy.NO_DEGRADE:
        return ["--flavor", "none"]
    if strategy is DegradeStrategy.SMC_DEGRADE:
        return ["--flavor", "smc"]
    if target_offset is None:
        raise ValidationError(f"strategy {strategy.value} needs a target cache line offset")
    return ["--flavor", "flush", "--lib", str(victim.library), "--offset", str(target_offset)]


def run_benchmark(
    spec: VictimSpec,
    strategy: DegradeStrategy,
    reps: int,
    target_offset: Optional[int] = None,
    placement: Optional[dict] = None,
    build_dir=None,
    timeout: float = 10.0,
    runner: Optional[Callable[[VictimSpec, DegradeStrategy, int], float]] = None,
) -> CycleStats:
    """reps orchestrated runs of the victim under one degradation strategy.

    ``runner`` injects a synthetic cycle source (tests and dry runs); the
    real path builds the victim, spawns the party processes with optional
    core pinning, and aggregates the reported cycles.
    """
    if reps < 1:
        raise ValidationError("reps must be >= 1")

    if runner is not None:
        runs = [runner(spec, strategy, i) for i in range(reps)]
        return CycleStats.from_runs(runs, backend="injected")

    placement = placement or {}
    with tempfile.TemporaryDirectory(dir=build_dir) as tmp:
        tmp = Path(tmp)
        victim = build_victim(spec, tmp / "build")
        victim_cmd = _party_cmd(
            "victim",
            "--lib", str(victim.library),
            "--entry", victim.entry,
            "--args", *[str(a) for a in victim.entry_args()],
            "--tsc",
        )
        if placement.get("victim_core") is not None:
            victim_cmd += ["--pin", str(placement["victim_core"])]
        degrade_cmd = _party_cmd("degrade", *_degrade_args(strategy, victim, target_offset))
        if placement.get("degrade_core") is not None:
            degrade_cmd += ["--pin", str(placement["degrade_core"])]

        runs = []
        backend = "unknown"
        for i in range(reps):
            result = orchestrate(victim_cmd, degrade_cmd, tmp / f"run{i}", timeout=timeout)
            runs.append(float(result.victim_report["cycles"]))
            backend = result.victim_report.get("backend", backend)
        return CycleStats.from_runs(runs, backend=backend)


def profile_cachelines(
    spec: VictimSpec,
    candidate_offsets,
    strategy: DegradeStrategy,
    reps: int = 3,
    measure: Optional[Callable[[int], float]] = None,
    **kwargs,
) -> list:
    """Rank candidate cache lines by the victim cycles they induce.

    Profiling is per-strategy (the best line for one strategy need not be
    the best for another). Ties keep candidate input order (stable sort on
    descending cycles). ``measure`` injects a cycle source for tests.
    """
    candidates = list(candidate_offsets)
    if not candidates:
        raise ValidationError("need at least one candidate cache line")

    results = []
    for off in candidates:
        if measure is not None:
            cycles = float(measure(off))
        else:
            stats = run_benchmark(spec, strategy, reps, target_offset=off, **kwargs)
            cycles = stats.mean
        results.append((off, cycles))
    results.sort(key=lambda pair: -pair[1])  # stable: ties keep input order
    return results
