"""Hidden number problem construction and solving.

Each accepted oracle sample says the hidden session key alpha satisfies
``0 < alpha * t_i mod p < p / 2^ell``: the secret times a known multiplier
lands in a small window. Centering the window turns every sample into an
approximate congruence ``|alpha t_i - u|_p <= p / 2^(ell+1)``, and a batch
of d such congruences becomes a closest-vector problem on a scaled integer
lattice. A standard embedding turns that into a shortest-vector problem the
reduction stack can attack directly.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .errors import ValidationError
from .lattice import (
    LatticeBasis,
    ReductionParams,
    bkz_reduce,
    lll_reduce,
)


def signed_mod(x: int, p: int) -> int:
    """Reduce x modulo p into the centered range (-p/2, p/2]."""
    if p <= 0:
        raise ValidationError("modulus must be positive")
    r = x % p
    if 2 * r > p:
        r -= p
    return r


def dimension_heuristic(c: float, modulus_bits: int, ell: int) -> int:
    """Number of samples to request: ceil(c * modulus_bits / ell).

    c is a confidence factor; c = 1 is the information-theoretic floor
    (each sample contributes ell bits), and c = 1.35 is the published
    operating point for the 1024-bit / 8-bit-leak attack (d = 173).
    """
    if c <= 0 or modulus_bits <= 0 or ell <= 0:
        raise ValidationError("all dimension inputs must be positive")
    return math.ceil(c * modulus_bits / ell)


@dataclass(frozen=True)
class HnpInstance:
    """Samples t_i with the common approximation value u = floor(p/2^(ell+1)).

    u is floored to keep every lattice entry an exact integer; the sub-unit
    shift is absorbed by the inequality slack.
    """

    p: int
    ell: int
    samples: tuple[int, ...]

    def __post_init__(self):
        if self.p <= 2:
            raise ValidationError("modulus must be > 2")
        if not 0 < self.ell < self.p.bit_length():
            raise ValidationError("ell must be in (0, bits(p))")
        if not self.samples:
            raise ValidationError("instance needs at least one sample")
        object.__setattr__(self, "samples", tuple(int(t) for t in self.samples))
        for t in self.samples:
            if not 0 < t < self.p:
                raise ValidationError("every sample must lie in (0, p)")

    @property
    def u(self) -> int:
        return self.p >> (self.ell + 1)

    @property
    def d(self) -> int:
        return len(self.samples)

    def default_weight(self) -> int:
        return 1 << (self.ell + 1)

    def to_json_dict(self) -> dict:
        return {
            "p": f"{self.p:x}",
            "ell": self.ell,
            "t": [f"{t:x}" for t in self.samples],
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "HnpInstance":
        return cls(
            p=int(doc["p"], 16),
            ell=int(doc["ell"]),
            samples=tuple(int(t, 16) for t in doc["t"]),
        )


@dataclass(frozen=True)
class CandidateKey:
    """A candidate hidden number with its constraint-satisfaction count."""

    alpha: int
    satisfied: int
    source_row: tuple[int, ...] = ()

    @property
    def key(self) -> int:
        return self.alpha


def build_basis(inst: HnpInstance, weight: Optional[int] = None) -> tuple[LatticeBasis, list[int]]:
    """The (d+1)-dimensional CVP lattice and its target vector.

    Rows: d scaled modulus rows diag(2Wp) plus one sample row
    (2W t_1, ..., 2W t_d, 1). The target is (2Wu, ..., 2Wu, 0). The weight
    W (default 2^(ell+1)) balances the residual coordinates against the
    hidden number's own magnitude in the final column.
    """
    W = inst.default_weight() if weight is None else int(weight)
    if W < 1:
        raise ValidationError("weight must be >= 1")
    d = inst.d
    p, u = inst.p, inst.u
    rows = [[0] * (d + 1) for _ in range(d + 1)]
    for i in range(d):
        rows[i][i] = 2 * W * p
        rows[d][i] = 2 * W * inst.samples[i]
    rows[d][d] = 1
    u_vec = [2 * W * u] * d + [0]
    return LatticeBasis.from_rows(rows), u_vec


def relation_vector(inst: HnpInstance, alpha: int, weight: Optional[int] = None) -> tuple[list[int], list[int]]:
    """Ground-truth coefficients x and residual y with x B - u_vec = y.

    For each sample, x_i is the integer folding alpha*t_i - u into the
    centered range; the last coordinate of x (and of y) is alpha itself.
    Used by tests to pin the construction to the defining linear relation.
    """
    W = inst.default_weight() if weight is None else int(weight)
    p, u = inst.p, inst.u
    xs = []
    ys = []
    for t in inst.samples:
        s = signed_mod(alpha * t - u, p)
        lam = (s - (alpha * t - u)) // p
        xs.append(lam)
        ys.append(2 * W * s)
    xs.append(alpha)
    ys.append(alpha)
    return xs, ys


def embed_cvp(basis: LatticeBasis, u_vec: Sequence[int], M: Optional[int] = None) -> LatticeBasis:
    """CVP-to-SVP embedding: pad with a zero column, append (u_vec | M).

    A short vector of the embedded lattice of the form (+-y | -+M) encodes
    the CVP residual y. M defaults to the expected residual scale
    (max |u_vec|), keeping the embedded target vector balanced.
    """
    if M is None:
        M = max(abs(v) for v in u_vec) or 1
    M = int(M)
    if M < 1:
        raise ValidationError("embedding factor M must be >= 1")
    n = basis.dimension
    if len(u_vec) != n:
        raise ValidationError("target vector length must match basis dimension")
    rows = [list(r) + [0] for r in basis.rows]
    rows.append([int(v) for v in u_vec] + [M])
    return LatticeBasis.from_rows(rows)


def validate_candidate(alpha: int, inst: HnpInstance) -> tuple[bool, int]:
    """Count how many window constraints 0 < alpha t_i mod p < p/2^ell hold."""
    if not 0 < alpha < inst.p:
        raise ValidationError("candidate must lie in (0, p)")
    bound = inst.p >> inst.ell
    satisfied = 0
    for t in inst.samples:
        r = (alpha * t) % inst.p
        if 0 < r < bound:
            satisfied += 1
    return satisfied == inst.d, satisfied


def extract_candidates(
    reduced: LatticeBasis, inst: HnpInstance, M: int
) -> list[CandidateKey]:
    """Read hidden-number candidates out of a reduced embedded basis.

    Rows whose final coordinate is +-M are embedded residual vectors; the
    hidden number sits in the second-to-last coordinate after sign
    normalization (negated rows encode the same solution).
    """
    d = inst.d
    seen = set()
    out = []
    for row in reduced.rows:
        if abs(row[-1]) != M:
            continue
        v = row if row[-1] == -M else tuple(-x for x in row)
        alpha = v[d] % inst.p
        if alpha == 0 or alpha in seen:
            continue
        seen.add(alpha)
        _, satisfied = validate_candidate(alpha, inst)
        out.append(CandidateKey(alpha=alpha, satisfied=satisfied, source_row=tuple(row)))
    out.sort(key=lambda c: -c.satisfied)
    return out


@dataclass(frozen=True)
class SolveResult:
    candidates: tuple[CandidateKey, ...]
    best: Optional[CandidateKey]
    reduction: ReductionParams
    wall_time: float

    @property
    def alpha(self) -> Optional[int]:
        return self.best.alpha if self.best else None

    def to_json_dict(self) -> dict:
        return {
            "alpha": f"{self.best.alpha:x}" if self.best else None,
            "satisfied": self.best.satisfied if self.best else 0,
            "candidates": len(self.candidates),
            "reduction_params": {
                "algorithm": self.reduction.algorithm,
                "delta": self.reduction.delta,
                "beta": self.reduction.beta,
            },
            "wall_time": self.wall_time,
        }


def solve_instance(
    inst: HnpInstance,
    params: Optional[ReductionParams] = None,
    weight: Optional[int] = None,
    require_all: bool = True,
) -> SolveResult:
    """Full pipeline: build, embed, reduce, extract, validate.

    With ``require_all`` the best candidate must satisfy every constraint;
    otherwise the candidate with the highest satisfaction count is
    reported (useful when upstream samples may contain errors).
    """
    params = params or ReductionParams()
    start = time.monotonic()
    basis, u_vec = build_basis(inst, weight)
    M = max(abs(v) for v in u_vec) or 1
    embedded = embed_cvp(basis, u_vec, M)
    if params.algorithm == "bkz":
        reduced = bkz_reduce(embedded, params)
    else:
        reduced = lll_reduce(embedded, params.delta, verify=False)
    cands = extract_candidates(reduced, inst, M)
    best = None
    for c in cands:
        if c.satisfied == inst.d or not require_all:
            best = c
            break
    wall = time.monotonic() - start
    return SolveResult(
        candidates=tuple(cands), best=best, reduction=params, wall_time=wall
    )


def write_instance(inst: HnpInstance, path) -> None:
    with open(path, "w") as f:
        json.dump(inst.to_json_dict(), f, indent=1, sort_keys=True)
        f.write("\n")


def read_instance(path) -> HnpInstance:
    with open(path) as f:
        return HnpInstance.from_json_dict(json.load(f))
