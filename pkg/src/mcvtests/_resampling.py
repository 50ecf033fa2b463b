"""Pooled-resampling engine shared by the global and multiple-contrast tests.

A resample either redistributes the pooled rows into the original group
sizes without replacement (permutation) or draws each group with replacement
from the pool (bootstrap).  Resample b always uses the caller stream's
substream b, so results are independent of any execution schedule.
"""

from __future__ import annotations

import numpy as np

from .estimation import DegeneracyError, McvVariant, _estimate_array
from .numkit import RngStream, pinv

# Columns of the per-group statistics produced by pooled_resample_estimates.
COL_C, COL_B, COL_VAR_C, COL_VAR_B = 0, 1, 2, 3


def value_columns(kind: str) -> tuple[int, int]:
    """(point-estimate column, variance column) for target kind 'c' or 'b'."""
    if kind == "c":
        return COL_C, COL_VAR_C
    if kind == "b":
        return COL_B, COL_VAR_B
    raise ValueError(f"target kind must be 'c' or 'b', got {kind!r}")


def group_stats(variant: McvVariant, arrays: list[np.ndarray]) -> np.ndarray:
    """(k, 4) matrix of per-group (c, b, var_c, var_b)."""
    out = np.empty((len(arrays), 4))
    for i, x in enumerate(arrays):
        e = _estimate_array(variant, x)
        out[i] = (e.c, e.b, e.var_c, e.var_b)
    return out


def pooled_resample_estimates(
    variant: McvVariant,
    pool: np.ndarray,
    sizes: tuple[int, ...],
    resamples: int,
    rng: RngStream,
    replace: bool,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-group estimates for every resample.

    Returns a (resamples, k, 4) array of (c, b, var_c, var_b) rows and a
    boolean mask of degenerate resamples (those stay NaN in the array).
    """
    n = pool.shape[0]
    k = len(sizes)
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    out = np.full((resamples, k, 4), np.nan)
    degenerate = np.zeros(resamples, dtype=bool)
    for b in range(resamples):
        gen = rng.substream(b).generator()
        idx = gen.integers(0, n, size=n) if replace else gen.permutation(n)
        try:
            for i in range(k):
                x = pool[idx[bounds[i] : bounds[i + 1]]]
                e = _estimate_array(variant, x)
                out[b, i] = (e.c, e.b, e.var_c, e.var_b)
        except DegeneracyError:
            out[b] = np.nan
            degenerate[b] = True
    return out, degenerate


def wald_value(theta: np.ndarray, sigma_diag: np.ndarray, h: np.ndarray, n: int) -> float:
    """n (H theta)^T (H Sigma H^T)^+ (H theta) with Sigma = diag(sigma_diag)."""
    v = h @ theta
    m = (h * sigma_diag) @ h.T
    return float(n * v @ pinv(m) @ v)


def wald_resample_stats(
    stats: np.ndarray,
    degenerate: np.ndarray,
    kind: str,
    h: np.ndarray,
    n: int,
    weights: np.ndarray,
) -> np.ndarray:
    """Wald statistic per resample; degenerate resamples count as +inf."""
    col_val, col_var = value_columns(kind)
    out = np.full(stats.shape[0], np.inf)
    for b in np.nonzero(~degenerate)[0]:
        out[b] = wald_value(stats[b, :, col_val], weights * stats[b, :, col_var], h, n)
    return out


def resampling_p_value(resampled: np.ndarray, observed: float) -> float:
    """Finite-sample valid p-value (1 + #{resampled >= observed}) / (B + 1)."""
    return (1.0 + int(np.sum(resampled >= observed))) / (resampled.size + 1.0)
