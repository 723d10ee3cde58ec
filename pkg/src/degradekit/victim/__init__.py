from .bench import (
    CycleStats,
    SlowdownReport,
    aggregate_stats,
    load_slowdown_fixture,
    slowdown_factor,
)
from .build import (
    BuiltVictim,
    VictimKind,
    VictimSpec,
    build_victim,
    victim_asm,
)
from .runner import profile_cachelines, run_benchmark
from .sync import SyncRunResult, orchestrate

__all__ = [
    "BuiltVictim",
    "CycleStats",
    "SlowdownReport",
    "SyncRunResult",
    "VictimKind",
    "VictimSpec",
    "aggregate_stats",
    "build_victim",
    "load_slowdown_fixture",
    "orchestrate",
    "profile_cachelines",
    "run_benchmark",
    "slowdown_factor",
    "victim_asm",
]
