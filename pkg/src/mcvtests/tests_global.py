"""Wald-type global tests for contrasts of MCVs or standardized means.

The statistic is n (H theta)^T (H Sigma H^T)^+ (H theta) with theta the
vector of per-group estimates and Sigma the diagonal matrix of rescaled
asymptotic variances.  Calibration is asymptotic (chi-square), permutation
(pooled redistribution without replacement), or pooled bootstrap (with
replacement); both resampling schemes re-estimate every per-group moment
and variance on each resample.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2

from ._resampling import (
    pooled_resample_estimates,
    resampling_p_value,
    wald_resample_stats,
    wald_value,
)
from .design import ContrastMatrix, validate_contrast
from .estimation import McvVariant, Sample, estimate
from .numkit import RngStream, numeric_rank

__all__ = [
    "GroupedData",
    "Target",
    "TestResult",
    "asymptotic_test",
    "bootstrap_test",
    "group_estimates",
    "permutation_test",
    "wald_statistic",
]


@dataclass(frozen=True)
class Target:
    """What is being contrasted: MCV ('c') or standardized mean ('b'), plus variant."""

    kind: str
    variant: McvVariant

    def __post_init__(self) -> None:
        if self.kind not in ("c", "b"):
            raise ValueError(f"target kind must be 'c' or 'b', got {self.kind!r}")
        object.__setattr__(self, "variant", McvVariant(self.variant))

    def __str__(self) -> str:
        return f"{self.kind}:{self.variant.value}"


@dataclass(frozen=True)
class GroupedData:
    """k independent samples sharing the same dimension."""

    samples: tuple[Sample, ...]
    labels: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        samples = tuple(self.samples)
        if len(samples) < 2:
            raise ValueError(f"need at least two groups, got {len(samples)}")
        d = samples[0].d
        if any(s.d != d for s in samples):
            raise ValueError("all groups must share the same dimension")
        if any(s.n < 2 for s in samples):
            raise ValueError("every group needs at least two observations")
        labels = tuple(self.labels) or tuple(f"g{i + 1}" for i in range(len(samples)))
        if len(labels) != len(samples):
            raise ValueError("number of labels must match number of groups")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_arrays(cls, arrays: list[np.ndarray], labels: tuple[str, ...] = ()) -> "GroupedData":
        return cls(tuple(Sample(a) for a in arrays), labels)

    @property
    def k(self) -> int:
        return len(self.samples)

    @property
    def d(self) -> int:
        return self.samples[0].d

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(s.n for s in self.samples)

    @property
    def n(self) -> int:
        return sum(self.sizes)

    def pooled(self) -> np.ndarray:
        return np.vstack([s.values for s in self.samples])


@dataclass(frozen=True)
class TestResult:
    """Outcome of one global test."""

    statistic: float
    rank: int
    p_value: float
    method: str
    alpha: float
    resamples_used: int = 0
    resamples_degenerate: int = 0
    seed: int | None = None

    @property
    def reject(self) -> bool:
        return self.p_value < self.alpha


def group_estimates(target: Target, data: GroupedData) -> tuple[np.ndarray, np.ndarray]:
    """Per-group point estimates and the diagonal of the rescaled covariance.

    The i-th diagonal entry is (n / n_i) times the group's estimated
    asymptotic variance for the requested target.
    """
    n = data.n
    theta = np.empty(data.k)
    sigma = np.empty(data.k)
    for i, sample in enumerate(data.samples):
        est = estimate(target.variant, sample)
        theta[i] = est.c if target.kind == "c" else est.b
        sigma[i] = (n / sample.n) * (est.var_c if target.kind == "c" else est.var_b)
    return theta, sigma


def _coerce_contrast(h: ContrastMatrix | np.ndarray) -> ContrastMatrix:
    return h if isinstance(h, ContrastMatrix) else validate_contrast(np.asarray(h, dtype=float))


def wald_statistic(
    target: Target, data: GroupedData, contrast: ContrastMatrix | np.ndarray
) -> tuple[float, int]:
    """Observed Wald statistic and the rank driving its chi-square reference.

    The reported rank is that of H Sigma H^T; a mismatch with rank(H) is
    surfaced as a warning since the two coincide whenever every group's
    variance is positive.
    """
    cm = _coerce_contrast(contrast)
    if cm.k != data.k:
        raise ValueError(f"contrast has {cm.k} columns but data has {data.k} groups")
    theta, sigma = group_estimates(target, data)
    stat = wald_value(theta, sigma, cm.h, data.n)
    rank = numeric_rank((cm.h * sigma) @ cm.h.T)
    rank_h = numeric_rank(cm.h)
    if rank != rank_h:
        warnings.warn(
            f"rank of contrasted covariance ({rank}) differs from rank of contrast ({rank_h})",
            stacklevel=2,
        )
    return stat, rank


def asymptotic_test(
    target: Target,
    data: GroupedData,
    contrast: ContrastMatrix | np.ndarray,
    alpha: float = 0.05,
) -> TestResult:
    """Chi-square calibrated Wald test; liberal for small groups."""
    _check_alpha(alpha)
    stat, rank = wald_statistic(target, data, contrast)
    if rank < 1:
        raise ValueError("contrasted covariance has rank zero; no asymptotic reference")
    p = float(chi2.sf(stat, rank))
    return TestResult(statistic=stat, rank=rank, p_value=p, method="asymptotic", alpha=alpha)


def permutation_test(
    target: Target,
    data: GroupedData,
    contrast: ContrastMatrix | np.ndarray,
    alpha: float = 0.05,
    resamples: int = 1000,
    rng: RngStream | None = None,
) -> TestResult:
    """Wald test calibrated by pooled redistribution without replacement."""
    return _resampling_test(target, data, contrast, alpha, resamples, rng, replace=False)


def bootstrap_test(
    target: Target,
    data: GroupedData,
    contrast: ContrastMatrix | np.ndarray,
    alpha: float = 0.05,
    resamples: int = 1000,
    rng: RngStream | None = None,
) -> TestResult:
    """Wald test calibrated by the pooled bootstrap (with replacement)."""
    return _resampling_test(target, data, contrast, alpha, resamples, rng, replace=True)


def _check_alpha(alpha: float) -> None:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")


def _resampling_test(
    target: Target,
    data: GroupedData,
    contrast: ContrastMatrix | np.ndarray,
    alpha: float,
    resamples: int,
    rng: RngStream | None,
    replace: bool,
) -> TestResult:
    _check_alpha(alpha)
    if resamples < 1:
        raise ValueError(f"resamples must be >= 1, got {resamples}")
    cm = _coerce_contrast(contrast)
    stat, rank = wald_statistic(target, data, cm)
    if rng is None:
        rng = RngStream(0)
    weights = data.n / np.asarray(data.sizes, dtype=float)
    stats, degenerate = pooled_resample_estimates(
        target.variant, data.pooled(), data.sizes, resamples, rng, replace
    )
    resampled = wald_resample_stats(stats, degenerate, target.kind, cm.h, data.n, weights)
    return TestResult(
        statistic=stat,
        rank=rank,
        p_value=resampling_p_value(resampled, stat),
        method="bootstrap" if replace else "permutation",
        alpha=alpha,
        resamples_used=resamples,
        resamples_degenerate=int(degenerate.sum()),
        seed=rng.seed,
    )
