"""Representation statistics: effective dimensionality, uniformity, alignment.

``uniformity`` is the log of the mean Gaussian potential over distinct pairs
of row-normalized representations, evaluated in log-sum-exp form so that the
boundary values 0 (all rows equal) and -8 (antipodal pair) come out exactly.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels
from .analysis import OlsFit, ols
from .errors import ContractError

ATOL = 1e-4
RTOL = 0.01

REGRESSION_TERMS = ("intercept", "log_eff_dim", "uniformity", "alignment")


@dataclass(frozen=True)
class RepStats:
    effective_dim: int
    uniformity: float
    alignment: float | None = None

    def to_dict(self) -> dict:
        doc = {"effective_dim": self.effective_dim, "uniformity": self.uniformity}
        if self.alignment is not None:
            doc["alignment"] = self.alignment
        return doc


def _matrix(Z, what="Z") -> np.ndarray:
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2:
        raise ContractError(f"{what} must be a 2-D matrix, got shape {Z.shape}")
    return Z


def effective_dim(Z, atol: float = ATOL, rtol: float = RTOL) -> int:
    """Numerical rank of the column correlation matrix.

    Counts singular values above ``max(atol, rtol * sigma_max)``. Columns
    with zero variance have no correlation and are left out with a warning.
    """
    Z = _matrix(Z)
    n, d = Z.shape
    if n < 2:
        raise ContractError("effective_dim needs at least 2 rows")
    std = Z.std(axis=0)
    keep = std > 0
    if not np.all(keep):
        warnings.warn(f"{int((~keep).sum())} zero-variance column(s) excluded from the correlation matrix",
                      RuntimeWarning, stacklevel=2)
    if not np.any(keep):
        return 1
    Zc = (Z[:, keep] - Z[:, keep].mean(axis=0)) / std[keep]
    corr = (Zc.T @ Zc) / n
    s = np.linalg.svd(corr, compute_uv=False)
    tol = max(atol, rtol * float(s[0]))
    return max(1, int(np.count_nonzero(s > tol)))


def normalize_rows(Z) -> np.ndarray:
    Z = _matrix(Z)
    norms = np.linalg.norm(Z, axis=1)
    if np.any(norms == 0):
        raise ContractError(f"row {int(np.flatnonzero(norms == 0)[0])} has zero norm")
    return Z / norms[:, None]


def uniformity(Z) -> float:
    """log mean_{i<j} exp(-2 ||z_i - z_j||^2) over unit-normalized rows."""
    Z = _matrix(Z)
    if Z.shape[0] < 2:
        raise ContractError("uniformity needs at least 2 rows")
    vmax, total, npairs = kernels.pairwise_potential(normalize_rows(Z))
    value = vmax + math.log(total) - math.log(npairs)
    return min(0.0, max(-8.0, value))


def alignment(Z1, Z2) -> float:
    """Mean squared distance between paired rows."""
    Z1, Z2 = _matrix(Z1, "Z1"), _matrix(Z2, "Z2")
    if Z1.shape != Z2.shape:
        raise ContractError(f"paired matrices differ in shape: {Z1.shape} vs {Z2.shape}")
    if Z1.shape[0] == 0:
        raise ContractError("alignment needs at least one pair")
    diff = Z1 - Z2
    return float(np.einsum("ij,ij->i", diff, diff).mean())


def rep_stats(Z, Z2=None, atol: float = ATOL, rtol: float = RTOL) -> RepStats:
    return RepStats(effective_dim(Z, atol, rtol), uniformity(Z),
                    None if Z2 is None else alignment(Z, Z2))


def stats_regression(rows) -> OlsFit:
    """OLS of aggregated risk on (1, ln eff_dim, uniformity, alignment).

    ``rows`` holds ``(effective_dim, uniformity, alignment, agg_risk)`` tuples.
    """
    R = np.asarray([tuple(r) for r in rows], dtype=np.float64)
    if R.ndim != 2 or R.shape[1] != 4:
        raise ContractError("rows must be (effective_dim, uniformity, alignment, agg_risk) tuples")
    if R.shape[0] < 5:
        raise ContractError(f"stats regression needs at least 5 rows, got {R.shape[0]}")
    if np.any(R[:, 0] < 1):
        raise ContractError("effective_dim must be >= 1")
    X = np.column_stack([np.ones(R.shape[0]), np.log(R[:, 0]), R[:, 1], R[:, 2]])
    fit = ols(X, R[:, 3], list(REGRESSION_TERMS))
    fit.method = "stats"
    return fit
