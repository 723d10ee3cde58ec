"""Arbitrary-precision Diffie-Hellman, the padding predicate, chosen-query
crafting, and the simulated noisy padding detector.

The leak being modeled: DH key derivation strips leading zero bytes of the
shared secret, and a padding branch runs exactly when the stripped secret is
at least one byte shorter than the modulus. Observing that branch gives a
probabilistic oracle for ``secret < 2^(8*(k-1))`` with k the modulus byte
length.

Detector noise is Bernoulli per observation and independent across retries;
observations are pure functions of (seed, query index, retry index) so full
attack transcripts replay identically, including under parallel evaluation.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from random import Random
from typing import Optional, Sequence

from .errors import InsufficientSamplesError, ValidationError


@dataclass(frozen=True)
class DhGroup:
    """Prime-modulus DH group; q is the subgroup order when known."""

    p: int
    g: int
    q: Optional[int] = None
    source: str = ""

    def __post_init__(self):
        if self.p <= 3:
            raise ValidationError("modulus must be a prime > 3")
        if not 1 < self.g < self.p:
            raise ValidationError("generator must satisfy 1 < g < p")
        if self.q is not None:
            if self.q <= 1:
                raise ValidationError("subgroup order must be > 1")
            if (self.p - 1) % self.q != 0:
                raise ValidationError("q must divide p - 1")

    @property
    def byte_len(self) -> int:
        return (self.p.bit_length() + 7) // 8

    @property
    def exponent_bound(self) -> int:
        """Upper bound (exclusive) for private exponents."""
        return self.q if self.q is not None else self.p - 1


@dataclass(frozen=True)
class DhKeyPair:
    priv: int
    pub: int


@dataclass(frozen=True)
class OracleConfig:
    """Detector noise rates plus the majority-voting policy.

    The surviving false positives in a voted campaign sit at the minimum
    passing vote count, which pins the pass threshold at 4-of-7; both knobs
    stay configurable.
    """

    tp_rate: float = 1.0
    fp_rate: float = 0.0
    retries: int = 7
    vote_pass: int = 4
    seed: int = 0

    def __post_init__(self):
        for name in ("tp_rate", "fp_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name} must be a probability, got {v}")
        if self.retries < 1:
            raise ValidationError("retries must be >= 1")
        if not 0 < self.vote_pass <= self.retries:
            raise ValidationError("vote_pass must be in [1, retries]")


@dataclass(frozen=True)
class ChosenQuery:
    """One crafted decryption query.

    ``point`` is the public value submitted to the victim; ``multiplier``
    is the attacker-side value pairing with the hidden session key in the
    lattice phase.
    """

    r: int
    point: int
    multiplier: int

    def __post_init__(self):
        if self.point <= 0 or self.multiplier <= 0:
            raise ValidationError("query values must lie in (0, p)")


def load_group(name: str = "rfc5114_1024_160") -> DhGroup:
    """Load a bundled group fixture, verifying its checksum.

    The RFC 5114 1024/160 constants ship as data with a sha256 over
    "p:q:g" (lowercase hex) so corruption is detected at load time.
    """
    path = resources.files("degradekit.data").joinpath(f"{name}.json")
    doc = json.loads(path.read_text())
    p_hex, q_hex, g_hex = doc["p"], doc["q"], doc["g"]
    digest = hashlib.sha256(f"{p_hex}:{q_hex}:{g_hex}".encode()).hexdigest()
    if digest != doc["sha256"]:
        raise ValidationError(f"group fixture {name} failed its checksum")
    return DhGroup(p=int(p_hex, 16), g=int(g_hex, 16), q=int(q_hex, 16), source=doc["source"])


def group_from_json(doc: dict) -> DhGroup:
    """Parse an external {p, q, g} hex fixture (no checksum)."""
    return DhGroup(
        p=int(doc["p"], 16),
        g=int(doc["g"], 16),
        q=int(doc["q"], 16) if doc.get("q") else None,
        source=doc.get("source", ""),
    )


def synthesize_group(bits: int, seed: int = 0) -> DhGroup:
    """Deterministic scaled-down group for desk-scale attack runs.

    Finds the first prime at or above a seeded random odd starting point
    with the top bit set; exponents then range over [1, p-1). Only the
    modulus size matters to the attack mechanics, not the group structure.
    """
    import gmpy2

    if bits < 16:
        raise ValidationError("synthesized groups need at least 16 bits")
    rng = Random(seed)
    start = rng.getrandbits(bits) | (1 << (bits - 1)) | 1
    p = int(gmpy2.next_prime(start))
    if p.bit_length() != bits:  # overflowed past 2^bits; retry deeper
        p = int(gmpy2.next_prime((1 << (bits - 1)) + 1))
    return DhGroup(p=p, g=2, q=None, source=f"synthetic-{bits}-bit(seed={seed})")


def keygen(group: DhGroup, rng: Random) -> DhKeyPair:
    priv = rng.randrange(1, group.exponent_bound)
    return DhKeyPair(priv=priv, pub=pow(group.g, priv, group.p))


def shared_secret(pub_other: int, priv: int, p: int) -> int:
    if not 0 < pub_other < p:
        raise ValidationError(f"peer public value out of range (0, p)")
    return pow(pub_other, priv, p)


def needs_padding(secret: int, group: DhGroup) -> bool:
    """True iff the zero-stripped secret is shorter than the modulus.

    Equivalent to ``secret < 2^(8*(k-1))`` for k = byte_len(p): the top
    byte of the fixed-width encoding is zero.
    """
    if not 0 <= secret < group.p:
        raise ValidationError("secret must lie in [0, p)")
    return secret < 1 << (8 * (group.byte_len - 1))


def pad_probability(group: DhGroup) -> float:
    """Probability a uniform secret in [1, p) triggers the padding branch.

    Exact rational (2^(8(k-1)) - 1) / (p - 1); true DH secrets live in the
    order-q subgroup, but the deviation is negligible at these sizes and is
    deliberately not modeled.
    """
    k = group.byte_len
    return float(Fraction((1 << (8 * (k - 1))) - 1, group.p - 1))


def craft_query(
    pub_victim_session: int, pub_victim_static: int, group: DhGroup, rng: Random
) -> ChosenQuery:
    """Blind the observed session public value with a fresh exponent.

    Submitting ``session * g^r`` makes the victim compute
    ``secret * static^r``; recording ``static^r`` ties each observation to
    the hidden session secret by a known multiplier.
    """
    p = group.p
    if not (0 < pub_victim_session < p and 0 < pub_victim_static < p):
        raise ValidationError("public inputs must lie in (0, p)")
    r = rng.randrange(1, group.exponent_bound)
    return query_for_exponent(pub_victim_session, pub_victim_static, group, r)


def query_for_exponent(
    pub_victim_session: int, pub_victim_static: int, group: DhGroup, r: int
) -> ChosenQuery:
    """craft_query with the blinding exponent forced (tests, replays)."""
    p = group.p
    point = (pub_victim_session * pow(group.g, r, p)) % p
    multiplier = pow(pub_victim_static, r, p)
    return ChosenQuery(r=r, point=point, multiplier=multiplier)


def _bernoulli(seed: int, query_index: int, retry_index: int, rate: float) -> bool:
    """Deterministic Bernoulli draw keyed by (seed, query, retry)."""
    if rate >= 1.0:
        return True
    if rate <= 0.0:
        return False
    msg = f"{seed}:{query_index}:{retry_index}".encode()
    u = int.from_bytes(hashlib.sha256(msg).digest()[:8], "big") / float(1 << 64)
    return u < rate


class SimulatedOracle:
    """Noisy padding detector with the victim's private key held inside.

    Stands in for the capture-and-detect pipeline during simulated attacks:
    the truth value is computed from the actual DH arithmetic, then flipped
    according to the configured detector rates.
    """

    def __init__(self, group: DhGroup, victim_priv: int, cfg: OracleConfig):
        self.group = group
        self._priv = victim_priv
        self.cfg = cfg
        self.observations = 0

    def truth(self, query: ChosenQuery) -> bool:
        secret = pow(query.point, self._priv, self.group.p)
        return needs_padding(secret, self.group)

    def observe(self, query: ChosenQuery, query_index: int, retry_index: int = 0) -> bool:
        self.observations += 1
        truth = self.truth(query)
        rate = self.cfg.tp_rate if truth else self.cfg.fp_rate
        return _bernoulli(self.cfg.seed, query_index, retry_index, rate)

    def majority_vote(self, query: ChosenQuery, query_index: int) -> tuple[bool, int]:
        """Re-observe ``retries`` times; accept at >= vote_pass positives.

        Retries are fresh observations; the triggering base observation is
        discarded rather than counted into the vote.
        """
        votes = sum(
            self.observe(query, query_index, retry_index=1 + i)
            for i in range(self.cfg.retries)
        )
        return votes >= self.cfg.vote_pass, votes


@dataclass(frozen=True)
class AcceptedSample:
    """A query that survived majority voting, with its vote count."""

    query: ChosenQuery
    votes: int
    query_index: int


def rank_and_select(accepted: Sequence[AcceptedSample], count: int) -> list[AcceptedSample]:
    """Take the ``count`` highest-vote samples; capture order breaks ties."""
    if len(accepted) < count:
        raise InsufficientSamplesError(
            f"need {count} accepted samples, have {len(accepted)}",
            shortfall=count - len(accepted),
        )
    ranked = sorted(accepted, key=lambda s: -s.votes)  # stable: ties keep order
    return list(ranked[:count])
