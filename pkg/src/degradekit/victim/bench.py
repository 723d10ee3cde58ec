"""Benchmark statistics: per-run cycle aggregation and slowdown factors."""

from __future__ import annotations

import csv
import statistics
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional, Sequence

from ..errors import ValidationError

#: Runs whose relative standard deviation exceeds this are flagged unstable
#: (warning, not an error); stable captures sit well below it.
RSD_STABLE_LIMIT = 0.04


@dataclass(frozen=True)
class CycleStats:
    """Aggregate over repeated runs of one (victim, strategy) experiment."""

    runs: tuple[float, ...]
    mean: float
    rsd: float
    backend: str = "unknown"
    counters: dict = field(default_factory=dict)

    @classmethod
    def from_runs(
        cls, runs: Sequence[float], backend: str = "unknown", counters: Optional[dict] = None
    ) -> "CycleStats":
        runs = tuple(float(r) for r in runs)
        if not runs:
            raise ValidationError("need at least one run")
        if any(r < 0 for r in runs):
            raise ValidationError("cycle counts must be nonnegative")
        mean = statistics.fmean(runs)
        # sample (n-1) estimator; immaterial at n=100 but fixed for stability
        stdev = statistics.stdev(runs) if len(runs) > 1 else 0.0
        rsd = stdev / mean if mean else 0.0
        return cls(runs=runs, mean=mean, rsd=rsd, backend=backend, counters=dict(counters or {}))

    @property
    def unstable(self) -> bool:
        return self.rsd > RSD_STABLE_LIMIT


def slowdown_factor(
    strategy_cycles: float,
    baseline_cycles: float,
    subtract_baseline: bool = False,
    reference_cycles: Optional[float] = None,
) -> float:
    """Cycle ratio of a degraded run against the undegraded baseline.

    With ``subtract_baseline`` the baseline is removed from both sides
    (three-way comparison against a reference strategy), isolating the
    increase attributable to the attack from untargeted activity.
    """
    if subtract_baseline:
        if reference_cycles is None:
            raise ValidationError("subtracted comparison needs reference_cycles")
        denom = reference_cycles - baseline_cycles
        num = strategy_cycles - baseline_cycles
    else:
        denom = baseline_cycles
        num = strategy_cycles
    if denom <= 0:
        raise ValidationError(f"nonpositive denominator {denom} in slowdown ratio")
    return num / denom


def aggregate_stats(rows: Sequence[float]) -> dict:
    """Order statistics over per-benchmark ratios.

    Median of an even-length list is the mean of the middle two; stdev is
    the sample estimator.
    """
    rows = [float(r) for r in rows]
    if not rows:
        raise ValidationError("aggregate_stats needs at least one row")
    return {
        "median": statistics.median(rows),
        "min": min(rows),
        "max": max(rows),
        "mean": statistics.fmean(rows),
        "stdev": statistics.stdev(rows) if len(rows) > 1 else 0.0,
    }


@dataclass(frozen=True)
class SlowdownReport:
    """Per-(benchmark, strategy) ratios plus per-strategy aggregates."""

    ratios: dict  # (benchmark, strategy) -> ratio
    baseline_cycles: dict  # benchmark -> cycles

    def aggregate(self, strategy: str) -> dict:
        rows = [v for (_, s), v in self.ratios.items() if s == strategy]
        return aggregate_stats(rows)

    def strategies(self) -> list[str]:
        seen = []
        for _, s in self.ratios:
            if s not in seen:
                seen.append(s)
        return seen

    def to_csv(self) -> str:
        lines = ["benchmark,strategy,ratio"]
        for (bench, strat), ratio in sorted(self.ratios.items()):
            lines.append(f"{bench},{strat},{ratio}")
        return "\n".join(lines) + "\n"


def load_slowdown_fixture() -> dict:
    """Published per-benchmark slowdown ratios shipped as package data.

    Returns {(family, strategy): [ratio, ...]} for the two cache-eviction
    strategies across the four measured microarchitectures.
    """
    path = resources.files("degradekit.data").joinpath("beebs_ratios.csv")
    out: dict = {}
    with path.open() as f:
        for row in csv.DictReader(f):
            key = (row["family"], row["strategy"])
            out.setdefault(key, []).append(float(row["ratio"]))
    return out
