"""Statistical leakage assessment over trace sets.

The central metric is normalized inter-class variance,
``Var[E[Y|X]] / Var[Y]`` per trace point: the fraction of total variance
explained by the class partition. Its square root upper-bounds the Pearson
correlation achievable by any leakage model, which makes it usable for
point-of-interest counting without choosing a model.

All variances here are population (divide by n) so that the general and
two-class forms agree exactly on balanced data; Welch's t uses the
conventional sample estimator.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ValidationError
from .traces import DegradeStrategy, Trace, TraceSet


@dataclass(frozen=True)
class NicvCurve:
    """Per-point NICV values in [0, 1] plus degeneracy flags.

    Points with zero total variance are reported as 0.0 with the
    ``degenerate`` flag set instead of NaN; POI counting skips them.
    """

    values: np.ndarray
    degenerate: np.ndarray
    class_sizes: dict

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))
        object.__setattr__(self, "degenerate", np.asarray(self.degenerate, dtype=bool))

    @property
    def n_points(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True)
class PoiReport:
    """POI count at one threshold, with ratios against reference counts."""

    threshold: float
    poi_count: int
    ratios: dict

    def to_json_dict(self) -> dict:
        return {"threshold": self.threshold, "count": self.poi_count, "ratios": self.ratios}


def _class_matrix(traceset: TraceSet) -> tuple[list, list[np.ndarray]]:
    """Split a set into per-class float matrices of equal trace length."""
    groups = traceset.by_class()
    labels = list(groups)
    lengths = {len(t) for g in groups.values() for t in g}
    if len(lengths) != 1:
        raise ValidationError(
            "NICV requires equal trace lengths; align the set first "
            f"(saw lengths {sorted(lengths)})"
        )
    mats = [np.stack([t.samples for t in groups[lab]]).astype(np.float64) for lab in labels]
    return labels, mats


def nicv(traceset: TraceSet) -> NicvCurve:
    """General NICV: class-size-weighted variance of class means over total variance."""
    labels, mats = _class_matrix(traceset)
    if len(labels) < 2:
        raise ValidationError("NICV needs at least two classes")
    for lab, m in zip(labels, mats):
        if m.shape[0] < 2:
            raise ValidationError(f"class {lab!r} needs at least two traces")

    sizes = np.array([m.shape[0] for m in mats], dtype=np.float64)
    total = sizes.sum()
    weights = sizes / total

    class_means = np.stack([m.mean(axis=0) for m in mats])  # (classes, points)
    grand_mean = weights @ class_means
    between = weights @ (class_means - grand_mean) ** 2

    all_rows = np.concatenate(mats, axis=0)
    total_var = all_rows.var(axis=0)  # population variance

    degenerate = total_var == 0.0
    values = np.zeros_like(total_var)
    ok = ~degenerate
    values[ok] = between[ok] / total_var[ok]
    return NicvCurve(
        values=values,
        degenerate=degenerate,
        class_sizes={lab: int(s) for lab, s in zip(labels, sizes)},
    )


def nicv_two_class(traceset: TraceSet) -> NicvCurve:
    """Balanced two-class shortcut: (E[Y|X=0] - E[Y|X=1])^2 / (4 Var[Y]).

    The displayed simplification assumes classes {0, 1} of equal size;
    anything else must go through the general form.
    """
    labels, mats = _class_matrix(traceset)
    if labels != [0, 1]:
        raise ValidationError(f"two-class NICV requires class labels {{0, 1}}, got {labels}")
    n0, n1 = mats[0].shape[0], mats[1].shape[0]
    if n0 != n1:
        raise ValidationError(
            f"two-class NICV requires equal class sizes (got {n0} vs {n1}); "
            "use the general nicv() for unbalanced sets"
        )
    if n0 < 2:
        raise ValidationError("each class needs at least two traces")

    diff = mats[0].mean(axis=0) - mats[1].mean(axis=0)
    all_rows = np.concatenate(mats, axis=0)
    total_var = all_rows.var(axis=0)

    degenerate = total_var == 0.0
    values = np.zeros_like(total_var)
    ok = ~degenerate
    values[ok] = diff[ok] ** 2 / (4.0 * total_var[ok])
    return NicvCurve(values=values, degenerate=degenerate, class_sizes={0: n0, 1: n1})


def max_correlation(curve: NicvCurve) -> np.ndarray:
    """Pointwise square root of NICV: the model-free Pearson upper bound."""
    return np.sqrt(np.clip(curve.values, 0.0, None))


def count_pois(values, threshold: float, degenerate=None) -> int:
    """Number of points strictly above the threshold, skipping flagged points."""
    if not 0.0 < threshold < 1.0:
        raise ValidationError(f"threshold must lie in (0, 1), got {threshold}")
    arr = np.asarray(values, dtype=np.float64)
    mask = arr > threshold
    if degenerate is not None:
        mask &= ~np.asarray(degenerate, dtype=bool)
    return int(mask.sum())


def poi_report(curve: NicvCurve, threshold: float, references: Optional[dict] = None) -> PoiReport:
    """POI count for a curve with optional ratios vs reference counts."""
    count = count_pois(curve.values, threshold, curve.degenerate)
    ratios = {}
    for name, ref in (references or {}).items():
        ratios[name] = count / ref if ref else float("inf")
    return PoiReport(threshold=threshold, poi_count=count, ratios=ratios)


def pearson(a: Sequence[float], b: Sequence[float]) -> float:
    """Sample Pearson correlation coefficient."""
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValidationError("pearson needs two equal-length 1-d sequences")
    if x.size < 2:
        raise ValidationError("pearson needs at least two points")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = np.sqrt((xc * xc).sum())
    sy = np.sqrt((yc * yc).sum())
    if sx == 0.0 or sy == 0.0:
        raise ValidationError("pearson undefined for zero-variance input")
    return float((xc * yc).sum() / (sx * sy))


def welch_t(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """Welch's t statistic and Welch-Satterthwaite degrees of freedom.

    When both sample variances are zero and the means agree, t is defined
    as 0 (the sets are indistinguishable); dof falls back to n1 + n2 - 2.
    """
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.size < 2 or y.size < 2:
        raise ValidationError("welch_t needs at least two points per set")
    n1, n2 = x.size, y.size
    v1 = x.var(ddof=1)
    v2 = y.var(ddof=1)
    se1, se2 = v1 / n1, v2 / n2
    denom = se1 + se2
    if denom == 0.0:
        if x.mean() == y.mean():
            return 0.0, float(n1 + n2 - 2)
        return float("inf") if x.mean() > y.mean() else float("-inf"), float(n1 + n2 - 2)
    t = (x.mean() - y.mean()) / np.sqrt(denom)
    dof = denom**2 / (se1**2 / (n1 - 1) + se2**2 / (n2 - 1))
    return float(t), float(dof)


def simulate_stretched_traces(
    base_patterns: tuple[Sequence[int], Sequence[int]],
    n_traces: int,
    stretch_factor: int = 1,
    noise_sd: float = 0.0,
    seed: int = 0,
    wait_r: int = 128,
    strategy: DegradeStrategy = DegradeStrategy.NO_DEGRADE,
) -> TraceSet:
    """Deterministic two-class fixture generator.

    Models what degradation does to a capture: each base-pattern sample is
    replicated ``stretch_factor`` times (the victim runs that much slower
    relative to the probe), then additive Gaussian latency noise is applied.
    Points where the class patterns differ become leaky points, so POI counts
    scale roughly linearly with the stretch factor.
    """
    if stretch_factor < 1:
        raise ValidationError("stretch_factor must be >= 1")
    if n_traces < 1:
        raise ValidationError("n_traces must be >= 1")
    pat0 = np.asarray(base_patterns[0], dtype=np.int64)
    pat1 = np.asarray(base_patterns[1], dtype=np.int64)
    if pat0.shape != pat1.shape or pat0.ndim != 1:
        raise ValidationError("class base patterns must be equal-length 1-d sequences")

    rng = np.random.default_rng(seed)
    traces = []
    for label, pat in ((0, pat0), (1, pat1)):
        stretched = np.repeat(pat, stretch_factor)
        for i in range(n_traces):
            noisy = stretched.astype(np.float64)
            if noise_sd > 0.0:
                noisy = noisy + rng.normal(0.0, noise_sd, size=noisy.size)
            samples = np.maximum(1, np.rint(noisy)).astype(np.uint32)
            traces.append(
                Trace(
                    samples=samples,
                    strategy=strategy,
                    wait_r=wait_r,
                    class_label=label,
                    capture_id=f"sim-{seed}-{label}-{i}",
                )
            )
    return TraceSet(traces)


def curve_to_csv_rows(curve: NicvCurve):
    """Rows of (point_index, nicv, max_corr) for CSV emission."""
    maxcorr = max_correlation(curve)
    for i in range(curve.n_points):
        yield i, float(curve.values[i]), float(maxcorr[i])
