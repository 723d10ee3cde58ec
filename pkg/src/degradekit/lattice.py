"""Lattice basis reduction over exact integers.

The basis and its Gram matrix are maintained in exact integer arithmetic at
all times; only the Gram-Schmidt coefficients used for reduction decisions
live in floating point. Entries at cryptographic sizes overflow any fixed
precision, so the float mirror of the Gram matrix is globally scaled by a
power of two (reduction decisions are scale-invariant ratios), and a ladder
of backends (scaled float64 -> high-precision mpfr -> exact rationals)
escalates whenever a precision livelock is detected. A post-hoc verifier
re-derives the Gram-Schmidt data in exact integer arithmetic, so the
correctness of a reported reduction never rests on the float heuristics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np
import gmpy2

from .errors import CapabilityError, LatticeRankError, ValidationError

#: Exact enumeration inside BKZ blocks is practical up to roughly this block
#: size at desk scale; larger blocks need pruning or sieving, out of scope.
DEFAULT_ENUM_LIMIT = 25

_ENUM_NODE_CAP = 20_000_000
_SIZE_REDUCE_PASS_CAP = 64
_CLAMP_CHECK_AFTER = 32
#: The post-hoc checker allows 2^-30 slack (as an exact rational) on both
#: LLL conditions, absorbing last-ulp float rounding of mu.
_VERIFY_SLACK_LOG2 = 30


@dataclass(frozen=True)
class LatticeBasis:
    """Square integer matrix whose rows generate the lattice."""

    rows: tuple[tuple[int, ...], ...]

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[int]]) -> "LatticeBasis":
        mat = tuple(tuple(int(x) for x in row) for row in rows)
        if not mat:
            raise ValidationError("basis needs at least one row")
        width = len(mat[0])
        if any(len(r) != width for r in mat):
            raise ValidationError("basis rows must have equal length")
        if len(mat) > width:
            raise ValidationError("more rows than columns cannot be independent")
        return cls(rows=mat)

    @property
    def dimension(self) -> int:
        return len(self.rows)

    @property
    def entry_bits(self) -> int:
        return max((abs(x).bit_length() for row in self.rows for x in row), default=0)

    def to_lists(self) -> list[list[int]]:
        return [list(r) for r in self.rows]


@dataclass(frozen=True)
class ReductionParams:
    algorithm: str = "lll"  # "lll" | "bkz"
    delta: float = 0.99
    beta: Optional[int] = None
    max_tours: int = 8
    enum_limit: int = DEFAULT_ENUM_LIMIT

    def __post_init__(self):
        if self.algorithm not in ("lll", "bkz"):
            raise ValidationError(f"unknown reduction algorithm {self.algorithm!r}")
        if not 0.25 < self.delta < 1.0:
            raise ValidationError("delta must lie in (0.25, 1)")
        if self.algorithm == "bkz" and (self.beta is None or self.beta < 2):
            raise ValidationError("BKZ needs a block size beta >= 2")
        if self.max_tours < 1:
            raise ValidationError("max_tours must be >= 1")


@dataclass(frozen=True)
class ReductionCheck:
    """Result of the exact post-hoc verifier."""

    ok: bool
    size_reduced: bool
    lovasz: bool
    positive_definite: bool
    gram_det: int


class _PrecisionTrip(Exception):
    """Internal: the floating backend can no longer make sound decisions."""


def _scaled_float(x: int, shift: int) -> float:
    """float(x * 2^-shift) that never overflows on huge ints."""
    if x == 0:
        return 0.0
    neg = x < 0
    if neg:
        x = -x
    nb = x.bit_length()
    if nb <= 53:
        f = math.ldexp(float(x), -shift)
    else:
        f = math.ldexp(float(x >> (nb - 53)), nb - 53 - shift)
    return -f if neg else f


_MPQ_TYPE = type(gmpy2.mpq())


def _round_half_away(x) -> int:
    """Nearest integer, halves away from zero (fixed for reproducibility)."""
    if isinstance(x, float):
        return int(math.floor(x + 0.5)) if x >= 0 else -int(math.floor(-x + 0.5))
    if isinstance(x, _MPQ_TYPE):
        num, den = x.numerator, x.denominator
        if num >= 0:
            return int((2 * num + den) // (2 * den))
        return -int((-2 * num + den) // (2 * den))
    # mpfr
    if x >= 0:
        return int(gmpy2.floor(x + 0.5))
    return -int(gmpy2.floor(-x + 0.5))


class _Backend:
    """Scalar arithmetic flavor used for Gram-Schmidt decisions."""

    name = "base"
    dtype: object = object
    exact = False

    def setup(self, max_gram_bits: int, n: int) -> None:
        pass

    def convert(self, x: int):
        raise NotImplementedError

    def delta_scalar(self, delta: float):
        return delta

    def refresh_period(self) -> int:
        return 0  # 0 = never


class _Float64Backend(_Backend):
    name = "float64"
    dtype = np.float64

    def __init__(self):
        self.shift = 0

    def setup(self, max_gram_bits: int, n: int) -> None:
        self.shift = max(0, max_gram_bits - 500)

    def convert(self, x: int) -> float:
        return _scaled_float(x, self.shift)

    def refresh_period(self) -> int:
        # Gram entries shrink during reduction; rescaling periodically keeps
        # small entries away from underflow.
        return 4096


class _MpfrBackend(_Backend):
    name = "mpfr"
    dtype = object

    def __init__(self, precision: int):
        self.precision = int(precision)

    def setup(self, max_gram_bits: int, n: int) -> None:
        gmpy2.get_context().precision = self.precision

    def convert(self, x: int):
        return gmpy2.mpfr(x)

    def delta_scalar(self, delta: float):
        return gmpy2.mpfr(delta)


class _ExactBackend(_Backend):
    """Exact rationals: slow, but decisions and termination are guaranteed."""

    name = "exact"
    dtype = object
    exact = True

    def convert(self, x: int):
        return gmpy2.mpq(x)

    def delta_scalar(self, delta: float):
        frac = Fraction(delta).limit_denominator(10**9)
        return gmpy2.mpq(frac.numerator, frac.denominator)


class _GramState:
    """Exact basis + Gram matrix with a floating mirror for one backend."""

    def __init__(self, rows: Sequence[Sequence[int]], backend: _Backend, delta: float):
        self.b = [list(map(int, r)) for r in rows]
        self.n = len(self.b)
        self.m = len(self.b[0])
        self.backend = backend
        self.delta = backend.delta_scalar(delta)
        self.G = [
            [sum(a * c for a, c in zip(self.b[i], self.b[j])) for j in range(self.n)]
            for i in range(self.n)
        ]
        self.iters = 0
        self.swaps = 0
        self._clamps = [0] * self.n
        self._cap = 1000 + 4 * self.n * self.n * max(8, self._gram_bits())
        self._setup_mirror()

    def _gram_bits(self) -> int:
        return max((abs(x).bit_length() for row in self.G for x in row), default=1)

    def _setup_mirror(self) -> None:
        self.backend.setup(self._gram_bits(), self.n)
        conv = self.backend.convert
        self.Gf = np.array(
            [[conv(x) for x in row] for row in self.G], dtype=self.backend.dtype
        )
        zero = conv(0)
        self.mu = np.full((self.n, self.n), zero, dtype=self.backend.dtype)
        self.Bf = np.full(self.n, zero, dtype=self.backend.dtype)

    # -- exact updates ------------------------------------------------------

    def _refresh_row_mirror(self, k: int) -> None:
        conv = self.backend.convert
        vals = [conv(x) for x in self.G[k]]
        self.Gf[k, :] = vals
        self.Gf[:, k] = vals

    def sub_multiple(self, k: int, j: int, q: int, refresh: bool = True) -> None:
        """b_k <- b_k - q b_j, maintaining G and (optionally) its mirror.

        Callers doing several subtractions on the same row defer the mirror
        refresh to once per batch; nothing reads Gf row k in between.
        """
        bk, bj = self.b[k], self.b[j]
        for i in range(self.m):
            bk[i] -= q * bj[i]
        G = self.G
        gkk = G[k][k] - 2 * q * G[k][j] + q * q * G[j][j]
        row_k, row_j = G[k], G[j]
        for i in range(self.n):
            if i != k:
                v = row_k[i] - q * row_j[i]
                row_k[i] = v
                G[i][k] = v
        row_k[k] = gkk
        if refresh:
            self._refresh_row_mirror(k)

    def swap_rows(self, k: int) -> None:
        self.b[k], self.b[k - 1] = self.b[k - 1], self.b[k]
        G = self.G
        G[k], G[k - 1] = G[k - 1], G[k]
        for row in G:
            row[k], row[k - 1] = row[k - 1], row[k]
        Gf = self.Gf
        Gf[[k - 1, k], :] = Gf[[k, k - 1], :]
        Gf[:, [k - 1, k]] = Gf[:, [k, k - 1]]

    def replace_rows(self, k: int, new_rows: Sequence[Sequence[int]]) -> None:
        """Overwrite rows k.. and recompute the affected Gram slices."""
        h = k + len(new_rows)
        for i, r in enumerate(new_rows):
            self.b[k + i] = list(map(int, r))
        for i in range(k, h):
            bi = self.b[i]
            for j in range(self.n):
                v = sum(a * c for a, c in zip(bi, self.b[j]))
                self.G[i][j] = v
                self.G[j][i] = v
        for i in range(k, h):
            self._refresh_row_mirror(i)

    # -- floating Gram-Schmidt ------------------------------------------------

    def gs_row(self, k: int) -> None:
        """Recompute mu row k and B_k from the (mirrored) exact Gram.

        A projected norm that cancellation drives to zero or below is
        clamped to a small positive floor: the transient misestimate steers
        a few swap decisions harmlessly (the exact Gram keeps the state
        sound, and the post-hoc verifier has the final word). Persistent
        clamping on one row is checked exactly once, separating genuine
        rank deficiency from float noise.
        """
        mu, Bf, Gf = self.mu, self.Bf, self.Gf
        r = np.empty(k + 1, dtype=self.backend.dtype)
        for j in range(k):
            rj = Gf[k, j] - (np.dot(mu[j, :j], r[:j]) if j else 0)
            r[j] = rj
            mu[k, j] = rj / Bf[j]
        bk = Gf[k, k] - (np.dot(mu[k, :k], r[:k]) if k else 0)
        if self.backend.exact:
            if not bk > 0:
                raise LatticeRankError(f"basis rows 0..{k} are linearly dependent")
        elif not bk > 0:
            self._clamps[k] += 1
            if self._clamps[k] == _CLAMP_CHECK_AFTER:
                d, _ = _integral_gs(self.G, k + 1)
                if any(x <= 0 for x in d):
                    raise LatticeRankError(f"basis rows 0..{k} are linearly dependent")
            elif self._clamps[k] > 4 * _CLAMP_CHECK_AFTER:
                raise _PrecisionTrip(f"row {k} projected norm stays unresolvable")
            gkk = Gf[k, k]
            bk = gkk * 1e-15 if gkk > 0 else self.backend.convert(0) + 1e-300
        Bf[k] = bk

    def size_reduce(self, k: int) -> None:
        mu = self.mu
        fast_floats = self.backend.dtype is np.float64
        for _ in range(_SIZE_REDUCE_PASS_CAP):
            big = False
            touched = False
            for j in range(k - 1, -1, -1):
                mukj = mu[k, j]
                if fast_floats:
                    q = int(mukj + 0.5) if mukj >= 0 else -int(0.5 - mukj)
                else:
                    q = _round_half_away(mukj)
                if q:
                    touched = True
                    self.sub_multiple(k, j, q, refresh=False)
                    if j:
                        mu[k, :j] -= q * mu[j, :j]
                    mu[k, j] = mukj - q
                    if q > 1024 or q < -1024:
                        big = True
            if touched:
                self._refresh_row_mirror(k)
            if not big:
                return
            self.gs_row(k)  # large coefficients: refresh mu before re-reducing
        raise _PrecisionTrip(f"size reduction of row {k} does not settle")

    def lll(self) -> None:
        """Main reduction loop, run to completion on this backend."""
        n = self.n
        self.gs_row(0)
        if n == 1:
            return
        delta = self.delta
        refresh = self.backend.refresh_period()
        k = 1
        while k < n:
            self.iters += 1
            if self.iters > self._cap and not self.backend.exact:
                raise _PrecisionTrip(f"iteration cap {self._cap} exceeded")
            if refresh and self.iters % refresh == 0:
                self._setup_mirror()
                for i in range(k):
                    self.gs_row(i)
            self.gs_row(k)
            self.size_reduce(k)
            if self.Bf[k] >= (delta - self.mu[k, k - 1] ** 2) * self.Bf[k - 1]:
                k += 1
            else:
                self.swap_rows(k)
                self.swaps += 1
                k = max(k - 1, 1)
                if k == 1:
                    self.gs_row(0)

    def fresh_all(self) -> None:
        for i in range(self.n):
            self.gs_row(i)


# -- exact integral Gram-Schmidt (verifier core) ------------------------------


def _integral_gs(G: list[list[int]], n: Optional[int] = None):
    """All-integer Gram-Schmidt bookkeeping.

    Returns (d, lam) where d[i] is the determinant of the leading
    (i+1)x(i+1) Gram minor and lam[i][j] = mu_ij * d[j]. Every division is
    exact, so the results are reliable regardless of magnitudes.
    """
    if n is None:
        n = len(G)
    d = [0] * n
    lam = [[0] * n for _ in range(n)]
    for i in range(n):
        for j in range(i + 1):
            u = G[i][j]
            for l in range(j):
                prev = d[l - 1] if l else 1
                u = (d[l] * u - lam[i][l] * lam[j][l]) // prev
            if j < i:
                lam[i][j] = u
            else:
                d[i] = u
    return d, lam


def gram_determinant(basis: LatticeBasis) -> int:
    """Exact determinant of the Gram matrix (squared lattice volume)."""
    rows = basis.to_lists()
    n = len(rows)
    G = [[sum(a * c for a, c in zip(rows[i], rows[j])) for j in range(n)] for i in range(n)]
    d, _ = _integral_gs(G)
    return d[-1]


def verify_reduction(
    basis: LatticeBasis, delta: float = 0.99, strict: bool = False
) -> ReductionCheck:
    """Exact-arithmetic check that a basis is LLL-reduced.

    Non-strict mode allows 2^-30 slack on both conditions; the comparisons
    are still exact integer comparisons.
    """
    rows = basis.to_lists()
    n = len(rows)
    G = [[sum(a * c for a, c in zip(rows[i], rows[j])) for j in range(n)] for i in range(n)]
    d, lam = _integral_gs(G)
    positive = all(x > 0 for x in d)
    if not positive:
        return ReductionCheck(False, False, False, False, d[-1])

    slack_den = 1 << _VERIFY_SLACK_LOG2
    size_ok = True
    for i in range(n):
        for j in range(i):
            # |mu_ij| <= 1/2 (+ slack)  <=>  2 |lam_ij| <= d_j (+ d_j / 2^30)
            lhs = 2 * abs(lam[i][j]) * slack_den
            rhs = d[j] * slack_den if strict else d[j] * (slack_den + 1)
            if lhs > rhs:
                size_ok = False
                break
        if not size_ok:
            break

    frac = Fraction(delta).limit_denominator(10**9)
    if not strict:
        frac -= Fraction(1, slack_den)
    num, den = frac.numerator, frac.denominator
    lovasz_ok = True
    for k in range(1, n):
        dk2 = d[k - 2] if k >= 2 else 1
        # delta' d_{k-1}^2 <= d_k d_{k-2} + lam_{k,k-1}^2, all integers
        if num * d[k - 1] * d[k - 1] > den * (d[k] * dk2 + lam[k][k - 1] ** 2):
            lovasz_ok = False
            break

    ok = positive and size_ok and lovasz_ok
    return ReductionCheck(ok, size_ok, lovasz_ok, positive, d[-1])


# -- public reduction API ------------------------------------------------------


def _backend_ladder(entry_bits: int, n: int) -> list[_Backend]:
    # The mpfr rung is sized so Gram dot products are computed exactly
    # (2x entry bits plus headroom), leaving no cancellation to survive.
    prec = max(192, 2 * entry_bits + n.bit_length() + 64)
    return [
        _Float64Backend(),
        _MpfrBackend(prec),
        _ExactBackend(),
    ]


def _run_with_escalation(rows: list[list[int]], delta: float, driver) -> _GramState:
    """Run ``driver(state)`` under the backend ladder, carrying the exact
    basis forward across escalations so progress is never discarded."""
    entry_bits = max((abs(x).bit_length() for r in rows for x in r), default=1)
    current = rows
    last = None
    for backend in _backend_ladder(entry_bits, len(rows)):
        state = _GramState(current, backend, delta)
        try:
            driver(state)
            return state
        except _PrecisionTrip as exc:
            last = exc
            current = state.b  # same lattice, partially reduced
    raise AssertionError(f"exact backend cannot trip precision: {last}")


def lll_reduce(
    basis: LatticeBasis, delta: float = 0.99, verify: Optional[bool] = None
) -> LatticeBasis:
    """LLL-reduce a basis of linearly independent rows.

    The output generates the same lattice (unimodular row transform), is
    size-reduced, and satisfies the Lovász condition for ``delta``.
    ``verify=None`` runs the exact post-hoc checker whenever it is
    affordable (small dimension and entry size) and otherwise trusts the
    escalation ladder.
    """
    if not 0.25 < delta < 1.0:
        raise ValidationError("delta must lie in (0.25, 1)")
    state = _run_with_escalation(basis.to_lists(), delta, lambda s: s.lll())
    out = LatticeBasis.from_rows(state.b)
    if verify is None:
        verify = basis.dimension <= 64 and basis.entry_bits <= 320
    if verify:
        check = verify_reduction(out, delta)
        if not check.positive_definite:
            raise LatticeRankError("reduction exposed linearly dependent rows")
        if not check.ok:
            # Float decisions went wrong without tripping: redo exactly.
            state = _GramState(out.to_lists(), _ExactBackend(), delta)
            state.lll()
            out = LatticeBasis.from_rows(state.b)
    return out


# -- SVP enumeration and BKZ ---------------------------------------------------


def _enumerate_block(state: _GramState, k: int, h: int, node_cap: int = _ENUM_NODE_CAP):
    """Schnorr-Euchner enumeration in the projected block [k, h].

    Returns integer coefficients (length h-k+1, block coordinates) of a
    vector strictly shorter than ``delta * B_k``, or None. Works on
    B-normalized doubles, so it is magnitude-independent; soundness of any
    insertion is re-established by the following exact-Gram LLL pass.
    """
    m = h - k + 1
    try:
        b0 = state.Bf[k]
        B = [float(state.Bf[k + i] / b0) for i in range(m)]
        delta = float(state.delta)
    except OverflowError:
        return None
    if not all(math.isfinite(x) and x > 0 for x in B):
        return None
    mu = [[float(state.mu[k + i, k + j]) for j in range(m)] for i in range(m)]

    best = None
    best_dist = delta * B[0]

    x = [0] * m
    center = [0.0] * m
    dist = [0.0] * (m + 1)  # dist[i]: contribution of levels above i
    base = [0] * m  # first candidate per level
    sign = [1] * m  # zig-zag direction per level
    tries = [0] * m

    def candidate(level: int) -> int:
        t = tries[level]
        if t == 0:
            return base[level]
        half = (t + 1) // 2
        if t % 2 == 1:
            return base[level] + sign[level] * half
        return base[level] - sign[level] * half

    i = m - 1
    center[i] = 0.0
    base[i] = 0
    sign[i] = 1
    tries[i] = 0
    x[i] = 0
    nodes = 0
    while True:
        nodes += 1
        if nodes > node_cap:
            raise CapabilityError(
                "block enumeration exceeded its node budget; use plain LLL "
                "or a smaller BKZ block size"
            )
        diff = x[i] - center[i]
        d = dist[i + 1] + diff * diff * B[i]
        if d < best_dist:
            if i == 0:
                if any(x):
                    best = list(x)
                    best_dist = d
                tries[i] += 1
                x[i] = candidate(i)
            else:
                dist[i] = d
                i -= 1
                c = -sum(mu[j][i] * x[j] for j in range(i + 1, m))
                center[i] = c
                base[i] = _round_half_away(c)
                sign[i] = 1 if base[i] <= c else -1
                tries[i] = 0
                x[i] = base[i]
        else:
            # zig-zag distances are nondecreasing: this level is exhausted
            i += 1
            if i >= m:
                break
            tries[i] += 1
            x[i] = candidate(i)
    return best


def _ext_gcd(a: int, b: int) -> tuple[int, int, int]:
    """g, s, t with s*a + t*b = g = gcd(a, b) >= 0."""
    old_r, r = a, b
    old_s, s = 1, 0
    old_t, t = 0, 1
    while r:
        q = old_r // r
        old_r, r = r, old_r - q * r
        old_s, s = s, old_s - q * s
        old_t, t = t, old_t - q * t
    if old_r < 0:
        old_r, old_s, old_t = -old_r, -old_s, -old_t
    return old_r, old_s, old_t


def _unimodular_with_first_row(x: Sequence[int]) -> list[list[int]]:
    """Complete a primitive integer vector to a unimodular matrix having it
    as the first row (recursive gcd construction; |det| = 1 by induction)."""
    x = [int(v) for v in x]
    m = len(x)
    if m == 1:
        if abs(x[0]) != 1:
            raise ValidationError("vector is not primitive")
        return [[x[0]]]
    tail = x[1:]
    d = 0
    for v in tail:
        d = math.gcd(d, v)
    if d == 0:
        if abs(x[0]) != 1:
            raise ValidationError("vector is not primitive")
        out = [[0] * m for _ in range(m)]
        out[0][0] = x[0]
        for i in range(1, m):
            out[i][i] = 1
        return out
    g, a, b = _ext_gcd(x[0], d)
    if g != 1:
        raise ValidationError("vector is not primitive")
    tail_prim = [v // d for v in tail]
    W = _unimodular_with_first_row(tail_prim)
    out = [[0] * m for _ in range(m)]
    out[0][0] = x[0]
    out[0][1:] = tail
    out[1][0] = -b
    out[1][1:] = [a * v for v in tail_prim]
    for i in range(2, m):
        out[i][1:] = W[i - 1]
    return out


def bkz_reduce(basis: LatticeBasis, params: ReductionParams) -> LatticeBasis:
    """Block-Korkine-Zolotarev reduction with exact in-block enumeration.

    Degenerates to LLL quality at beta = 2. beta is clamped to the
    dimension; blocks beyond the enumeration limit are refused up front
    because full enumeration there is not desk-practical.
    """
    if params.algorithm != "bkz":
        raise ValidationError("bkz_reduce requires params.algorithm == 'bkz'")
    n = basis.dimension
    beta = min(params.beta, n)
    if beta > params.enum_limit:
        raise CapabilityError(
            f"BKZ block size {beta} exceeds the exact-enumeration limit "
            f"({params.enum_limit}); use LLL or a smaller beta"
        )

    def driver(state: _GramState) -> None:
        state.lll()
        for _tour in range(params.max_tours):
            improved = False
            for k in range(0, n - 1):
                h = min(k + beta - 1, n - 1)
                if h - k + 1 < 2:
                    continue
                x = _enumerate_block(state, k, h)
                if x is None:
                    continue
                g = 0
                for v in x:
                    g = math.gcd(g, v)
                x = [v // g for v in x]
                if abs(x[0]) == 1 and not any(x[1:]):
                    continue  # b_k already realizes the block minimum
                U = _unimodular_with_first_row(x)
                block = [state.b[k + i] for i in range(h - k + 1)]
                new_rows = [
                    [
                        sum(U[r][c] * block[c][col] for c in range(len(block)))
                        for col in range(state.m)
                    ]
                    for r in range(len(block))
                ]
                state.replace_rows(k, new_rows)
                state.lll()
                improved = True
            if not improved:
                break

    state = _run_with_escalation(basis.to_lists(), params.delta, driver)
    return LatticeBasis.from_rows(state.b)
