"""One-sample estimation of multivariate coefficients of variation.

Implements the four MCV variants (rr, vv, vn, az), their reciprocals
(standardized means), plug-in moment estimation including third/fourth
mixed-moment matrices, and the delta-method asymptotic variances that all
test statistics are studentized with.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np

from .numkit import normal_quantile, numeric_rank

__all__ = [
    "DegeneracyError",
    "EstimateResult",
    "McvVariant",
    "MomentSet",
    "Sample",
    "a_matrix",
    "asymptotic_variance",
    "dtilde",
    "estimate",
    "mcv",
    "one_sample_ci",
    "s_factor",
    "sample_moments",
]

# Quadratic forms in nearly rank-deficient fourth-moment matrices can go
# microscopically negative; anything below this is a real inconsistency.
NEG_VARIANCE_TOL = -1e-10


class DegeneracyError(RuntimeError):
    """A moment condition required for the requested MCV variant fails."""


class McvVariant(str, Enum):
    """The four MCV definitions; all reduce to sd/mean at dimension one."""

    RR = "rr"  # d-th root of the determinant over squared mean norm
    VV = "vv"  # trace over squared mean norm
    VN = "vn"  # inverse Mahalanobis norm of the mean
    AZ = "az"  # covariance quadratic form over squared mean norm, normalized

    def __str__(self) -> str:  # pragma: no cover - cosmetic
        return self.value


VARIANTS = (McvVariant.RR, McvVariant.VV, McvVariant.VN, McvVariant.AZ)


@dataclass(frozen=True)
class Sample:
    """One group of independent d-dimensional observations (rows)."""

    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError(f"sample values must be a 2-D array, got ndim={v.ndim}")
        if v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError(f"sample must be non-empty, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("sample contains non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class MomentSet:
    """Plug-in moments of one sample.

    ``psi3`` has entry ((a-1)d + r, s) equal to mean(x_a x_r x_s) minus
    mean(x_a x_r) * mean(x_s); ``psi4`` has entry ((a-1)d + r, (b-1)d + s)
    equal to mean(x_a x_r x_b x_s) minus mean(x_a x_r) * mean(x_b x_s).
    """

    mean: np.ndarray
    cov: np.ndarray
    raw2: np.ndarray
    psi3: np.ndarray
    psi4: np.ndarray
    n: int


@dataclass(frozen=True)
class EstimateResult:
    """Point estimates and asymptotic variances for one group."""

    variant: McvVariant
    c: float
    b: float
    var_c: float
    var_b: float
    n: int


def _moments_from_array(x: np.ndarray) -> MomentSet:
    n, d = x.shape
    if n < 2:
        raise ValueError(f"moment estimation needs n >= 2, got n={n}")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc
    cov = (cov + cov.T) * (0.5 / n)
    raw2 = cov + np.outer(mean, mean)
    # Row i of p is the flattened outer product x_i x_i^T.
    p = (x[:, :, None] * x[:, None, :]).reshape(n, d * d)
    raw2_flat = raw2.reshape(-1)
    psi3 = p.T @ x / n - raw2_flat[:, None] * mean[None, :]
    psi4 = p.T @ p / n - np.outer(raw2_flat, raw2_flat)
    return MomentSet(mean=mean, cov=cov, raw2=raw2, psi3=psi3, psi4=psi4, n=n)


def sample_moments(sample: Sample) -> MomentSet:
    """Mean, covariance (divisor n), and the third/fourth moment matrices."""
    return _moments_from_array(sample.values)


@lru_cache(maxsize=32)
def _pair_indices(d: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    a = np.repeat(np.arange(d), d)
    r = np.tile(np.arange(d), d)
    rows = np.arange(d * d)
    off = a != r
    return a, r, rows, off


@lru_cache(maxsize=32)
def _eye_vec(d: int) -> np.ndarray:
    out = np.eye(d).reshape(-1)
    out.setflags(write=False)
    return out


def dtilde(x: np.ndarray) -> np.ndarray:
    """Jacobian of vec(M2 - m m^T) with respect to m, evaluated at m = x.

    Entry ((a-1)d + r, s) is -x_r if s = a != r, -2 x_s if s = r = a,
    and -x_a if r = s != a (zero otherwise).
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    d = x.size
    a, r, rows, off = _pair_indices(d)
    out = np.zeros((d * d, d))
    out[rows[off], a[off]] = -x[r[off]]
    out[rows[off], r[off]] += -x[a[off]]
    diag = ~off
    out[rows[diag], a[diag]] = -2.0 * x[a[diag]]
    return out


def _check_mean(mean: np.ndarray) -> float:
    mtm = float(mean @ mean)
    if mtm <= 0.0:
        raise DegeneracyError("mean vector is zero")
    return mtm


def _check_regular(cov: np.ndarray, variant: McvVariant) -> None:
    d = cov.shape[0]
    if numeric_rank(cov) < d:
        raise DegeneracyError(f"covariance matrix is singular ({variant.value} needs full rank)")


def mcv(variant: McvVariant, mean: np.ndarray, cov: np.ndarray) -> float:
    """Value of the requested MCV variant at the given mean and covariance."""
    mean = np.asarray(mean, dtype=float).reshape(-1)
    cov = np.asarray(cov, dtype=float)
    d = mean.size
    if cov.shape != (d, d):
        raise ValueError(f"covariance shape {cov.shape} does not match dimension {d}")
    mtm = _check_mean(mean)
    if variant is McvVariant.RR:
        _check_regular(cov, variant)
        sign, logdet = np.linalg.slogdet(cov)
        if sign <= 0.0:
            raise DegeneracyError("covariance determinant is not positive")
        return math.exp(logdet / (2.0 * d)) / math.sqrt(mtm)
    if variant is McvVariant.VV:
        tr = float(cov.trace())
        if tr <= 0.0:
            raise DegeneracyError("covariance trace is not positive")
        return math.sqrt(tr / mtm)
    if variant is McvVariant.VN:
        _check_regular(cov, variant)
        quad = float(mean @ np.linalg.solve(cov, mean))
        if quad <= 0.0:
            raise DegeneracyError("Mahalanobis form of the mean is not positive")
        return 1.0 / math.sqrt(quad)
    if variant is McvVariant.AZ:
        quad = float(mean @ cov @ mean)
        if quad <= 0.0:
            raise DegeneracyError("covariance quadratic form of the mean is not positive")
        return math.sqrt(quad) / mtm
    raise ValueError(f"unknown variant {variant!r}")


def a_matrix(variant: McvVariant, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Row vector a with sqrt(s_factor)/2 * a equal to the gradient of the MCV.

    The gradient is taken with respect to (mean, vec of raw second moment);
    the first d entries form the mean block, the remaining d^2 entries the
    second-moment block.  The vn row vector is the negative of the more
    common normalization so that the gradient identity above holds for every
    variant; the variance quadratic form is unaffected by the sign.
    """
    mean = np.asarray(mean, dtype=float).reshape(-1)
    cov = np.asarray(cov, dtype=float)
    d = mean.size
    mtm = _check_mean(mean)
    dt = dtilde(mean)
    if variant is McvVariant.RR:
        _check_regular(cov, variant)
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise DegeneracyError("covariance matrix is not positive definite") from exc
        logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
        det = math.exp(logdet)
        if det == 0.0 or not math.isfinite(det):
            raise DegeneracyError("covariance determinant underflowed or overflowed")
        linv = np.linalg.solve(chol, np.eye(d))
        det_vinv = det * (linv.T @ linv).reshape(-1)
        scale = mtm**d
        sec = det_vinv / scale
        mean_block = -2.0 * d * det * mean / mtm ** (d + 1) + sec @ dt
        return np.concatenate([mean_block, sec])
    if variant is McvVariant.VV:
        sec = _eye_vec(d) / mtm
        mean_block = -2.0 * float(cov.trace()) * mean / mtm**2 + sec @ dt
        return np.concatenate([mean_block, sec])
    if variant is McvVariant.VN:
        _check_regular(cov, variant)
        u = np.linalg.solve(cov, mean)
        sec = np.kron(u, u)
        mean_block = -2.0 * u + sec @ dt
        return np.concatenate([mean_block, sec])
    if variant is McvVariant.AZ:
        quad = float(mean @ cov @ mean)
        sec = np.kron(mean, mean) / mtm**2
        mean_block = -4.0 * quad * mean / mtm**3 + 2.0 * (cov @ mean) / mtm**2 + sec @ dt
        return np.concatenate([mean_block, sec])
    raise ValueError(f"unknown variant {variant!r}")


def s_factor(variant: McvVariant, c: float, d: int = 1) -> float:
    """Variance scale factor attached to the squared-gradient quadratic form."""
    if c <= 0.0:
        raise ValueError(f"MCV value must be positive, got {c}")
    if variant is McvVariant.RR:
        return c ** (2 - 4 * d) / d**2
    if variant is McvVariant.VN:
        return c**6
    # vv and az share the same scale.
    return c**-2


def _variance_at(variant: McvVariant, m: MomentSet, c: float) -> tuple[float, float]:
    d = m.mean.size
    a = a_matrix(variant, m.mean, m.cov)
    s = s_factor(variant, c, d)
    a1, a2 = a[:d], a[d:]
    var_c = (s / 4.0) * float(
        a1 @ m.cov @ a1 + 2.0 * (a2 @ m.psi3 @ a1) + a2 @ m.psi4 @ a2
    )
    if var_c < NEG_VARIANCE_TOL:
        raise DegeneracyError(f"variance quadratic form is negative ({var_c:.3e})")
    var_c = max(var_c, 0.0)
    return var_c, var_c / c**4


def asymptotic_variance(variant: McvVariant, m: MomentSet) -> tuple[float, float]:
    """Delta-method variances of the MCV estimate and of its reciprocal.

    Computes var_c = s/4 * a M a^T with M the stacked covariance of the
    first and raw second sample moments, and var_b = var_c / c^4.
    """
    return _variance_at(variant, m, mcv(variant, m.mean, m.cov))


def _estimate_array(variant: McvVariant, x: np.ndarray) -> EstimateResult:
    m = _moments_from_array(x)
    c = mcv(variant, m.mean, m.cov)
    var_c, var_b = _variance_at(variant, m, c)
    return EstimateResult(variant=variant, c=c, b=1.0 / c, var_c=var_c, var_b=var_b, n=m.n)


def estimate(variant: McvVariant, sample: Sample) -> EstimateResult:
    """MCV and standardized-mean estimates with their asymptotic variances."""
    if sample.n < sample.d + 2:
        warnings.warn(
            f"n={sample.n} < d+2={sample.d + 2}: variance estimation is unreliable",
            stacklevel=2,
        )
    return _estimate_array(variant, sample.values)


def one_sample_ci(
    variant: McvVariant, sample: Sample, alpha: float = 0.05
) -> tuple[tuple[float, float], tuple[float, float]]:
    """Asymptotic two-sided confidence intervals for the MCV and its reciprocal."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    est = estimate(variant, sample)
    z = normal_quantile(1.0 - alpha / 2.0)
    scale = z / math.sqrt(est.n)
    half_c = scale * math.sqrt(est.var_c)
    half_b = scale * math.sqrt(est.var_b)
    return (est.c - half_c, est.c + half_c), (est.b - half_b, est.b + half_b)
