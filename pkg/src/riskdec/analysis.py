"""Linear design-choice analyses over a table of models.

Two regressions share one OLS kernel:

* controlled analysis (CA): ``metric ~ alpha * hparam + one-hot(group)``, where
  a group is the joint value of every other design choice, so alpha is only
  identified by models that differ in ``hparam`` alone;
* global linear analysis (GLA): ``metric ~ 1 + hparam + controls`` with the
  controls chosen explicitly by the caller.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.special import betainc

from .errors import ContractError, CoverageError, DataValidationError, RankDeficiencyError

#: Relative singular-value threshold (on unit-norm columns) below which the
#: design is treated as rank deficient.
RANK_RTOL = 1e-10


@dataclass
class ModelTable:
    """Model records: design-choice columns plus numeric metric columns."""

    frame: pd.DataFrame
    metrics: tuple = ()

    def __post_init__(self):
        cols = list(self.frame.columns)
        if len(set(cols)) != len(cols):
            raise DataValidationError("column names must be unique")
        self.metrics = tuple(self.metrics)
        for m in self.metrics:
            if m not in self.frame.columns:
                raise DataValidationError(f"unknown metric column {m!r}")
            if not pd.api.types.is_numeric_dtype(self.frame[m]):
                raise DataValidationError(f"metric column {m!r} is not numeric")

    @classmethod
    def from_csv(cls, path, metrics=()) -> "ModelTable":
        return cls(pd.read_csv(path), metrics)

    @classmethod
    def from_records(cls, records, metrics=()) -> "ModelTable":
        return cls(pd.DataFrame.from_records(list(records)), metrics)

    @property
    def missing(self) -> pd.DataFrame:
        return self.frame.isna()

    @property
    def design_columns(self) -> list:
        return [c for c in self.frame.columns if c not in self.metrics]

    def column(self, name) -> pd.Series:
        if name not in self.frame.columns:
            raise DataValidationError(f"unknown column {name!r}")
        return self.frame[name]


@dataclass
class Coefficient:
    name: str
    estimate: float
    se: float
    t: float
    p: float


@dataclass
class OlsFit:
    names: list
    coef: np.ndarray
    se: np.ndarray
    t: np.ndarray
    p: np.ndarray
    r2: float
    dof: int
    n: int
    sigma2: float
    method: str = "ols"
    term: str | None = None
    controls: list = field(default_factory=list)

    def row(self, name: str | None = None) -> Coefficient:
        name = name or self.term
        if name not in self.names:
            raise KeyError(name)
        i = self.names.index(name)
        return Coefficient(name, float(self.coef[i]), float(self.se[i]), float(self.t[i]), float(self.p[i]))

    def to_dict(self) -> dict:
        doc = {
            "method": self.method,
            "n": self.n,
            "dof": self.dof,
            "r2": self.r2,
            "sigma2": self.sigma2,
            "coefficients": [
                {"name": n, "estimate": float(c), "se": float(s), "t": _finite(t), "p": float(p)}
                for n, c, s, t, p in zip(self.names, self.coef, self.se, self.t, self.p)
            ],
        }
        if self.term is not None:
            doc["term"] = self.term
        if self.method == "gla":
            doc["controls"] = list(self.controls)
        return doc


def _finite(x) -> float | None:
    x = float(x)
    return x if math.isfinite(x) else None


def t_pvalue(t, dof: int) -> np.ndarray:
    """Two-sided p-value of Student's t: I_{dof/(dof+t^2)}(dof/2, 1/2)."""
    t = np.asarray(t, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.where(np.isinf(t), 0.0, dof / (dof + t * t))
    return np.clip(betainc(0.5 * dof, 0.5, x), 0.0, 1.0)


def dependent_columns(X: np.ndarray, names) -> list:
    """Names of the columns involved in an exact linear dependency."""
    X = np.asarray(X, dtype=np.float64)
    norms = np.linalg.norm(X, axis=0)
    zero = norms == 0
    Xs = X / np.where(zero, 1.0, norms)
    _, s, Vt = np.linalg.svd(Xs, full_matrices=True)
    s_full = np.zeros(X.shape[1])
    s_full[: s.size] = s
    tol = RANK_RTOL * max(1.0, float(s_full.max(initial=0.0))) * max(X.shape)
    null = Vt[s_full <= tol]
    involved = zero.copy()
    if null.size:
        involved |= np.any(np.abs(null) > 1e-8, axis=0)
    return [n for n, hit in zip(names, involved) if hit]


def ols(X, y, names=None) -> OlsFit:
    """Ordinary least squares by Householder QR with classical standard errors."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ContractError(f"design {X.shape} and response {y.shape} disagree")
    n, k = X.shape
    names = list(names) if names is not None else [f"x{j}" for j in range(k)]
    if len(names) != k:
        raise ContractError("one name per design column is required")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise DataValidationError("design and response must be finite")
    if n < k + 1:
        raise ContractError(f"need at least {k + 1} rows for {k} columns, got {n}")
    dep = dependent_columns(X, names)
    if dep:
        raise RankDeficiencyError(f"design is rank deficient; dependent columns: {', '.join(dep)}", dep)
    Q, R = np.linalg.qr(X)
    coef = np.linalg.solve(R, Q.T @ y)
    resid = y - X @ coef
    dof = n - k
    ssr = float(resid @ resid)
    sigma2 = ssr / dof
    Rinv = np.linalg.solve(R, np.eye(k))
    se = np.sqrt(sigma2 * np.sum(Rinv * Rinv, axis=1))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, coef / np.where(se > 0, se, 1.0), np.copysign(np.inf, coef))
    t = np.where((se == 0) & (coef == 0), 0.0, t)
    p = t_pvalue(t, dof)
    yc = y - y.mean()
    sst = float(yc @ yc)
    r2 = 1.0 - ssr / sst if sst > 0 else (1.0 if ssr == 0 else 0.0)
    return OlsFit(names, coef, se, t, p, r2, dof, n, sigma2)


def _numeric(series: pd.Series, name: str, log: bool) -> np.ndarray:
    if not pd.api.types.is_numeric_dtype(series):
        raise DataValidationError(f"column {name!r} must be numeric")
    v = series.to_numpy(dtype=np.float64)
    if log:
        if np.any(v <= 0):
            raise DataValidationError(f"log of non-positive values in {name!r}")
        v = np.log(v)
    return v


def _used_rows(frame: pd.DataFrame, cols) -> pd.DataFrame:
    return frame.loc[~frame[list(cols)].isna().any(axis=1)]


def controlled_fit(table: ModelTable, hparam: str, metric: str, log_hparam: bool = False,
                   log_metric: bool = False, others=None) -> OlsFit:
    """Controlled analysis; the returned fit's ``term`` is the hparam row.

    ``others`` defaults to every design column except ``hparam``. Groups whose
    models share one hparam value carry no information about alpha and are
    dropped before fitting.
    """
    for c in (hparam, metric):
        table.column(c)
    others = [c for c in (others if others is not None else table.design_columns) if c != hparam]
    frame = _used_rows(table.frame, [hparam, metric, *others])
    if others:
        keys = frame[others].astype(str).agg("\x1f".join, axis=1)
    else:
        keys = pd.Series("all", index=frame.index)
    distinct = frame.groupby(keys)[hparam].nunique()
    keep = sorted(distinct.index[distinct >= 2])
    if not keep:
        raise CoverageError(f"no group of models differs only in {hparam!r}")
    mask = keys.isin(keep).to_numpy()
    frame, keys = frame.loc[mask], keys[mask]
    x = _numeric(frame[hparam], hparam, log_hparam)
    y = _numeric(frame[metric], metric, log_metric)
    onehot = (keys.to_numpy()[:, None] == np.array(keep, dtype=object)[None, :]).astype(np.float64)
    X = np.column_stack([x, onehot])
    fit = ols(X, y, [hparam] + [f"group[{g}]" for g in keep])
    fit.method, fit.term = "ca", hparam
    return fit


def encode_controls(frame: pd.DataFrame, controls) -> tuple:
    """Numeric controls as-is; categoricals one-hot with the alphabetically first level dropped."""
    cols, names = [], []
    for c in controls:
        s = frame[c]
        if pd.api.types.is_numeric_dtype(s) and not pd.api.types.is_bool_dtype(s):
            cols.append(s.to_numpy(dtype=np.float64))
            names.append(c)
            continue
        levels = sorted(s.astype(str).unique())
        for lvl in levels[1:]:
            cols.append((s.astype(str) == lvl).to_numpy(dtype=np.float64))
            names.append(f"{c}[{lvl}]")
    return cols, names


def global_fit(table: ModelTable, hparam: str, controls, metric: str, log_hparam: bool = False,
               log_metric: bool = False) -> OlsFit:
    controls = list(controls)
    for c in [hparam, metric, *controls]:
        table.column(c)
    if hparam in controls:
        raise ContractError(f"{hparam!r} cannot be its own control")
    frame = _used_rows(table.frame, [hparam, metric, *controls])
    x = _numeric(frame[hparam], hparam, log_hparam)
    y = _numeric(frame[metric], metric, log_metric)
    ccols, cnames = encode_controls(frame, controls)
    X = np.column_stack([np.ones(len(frame)), x, *ccols])
    fit = ols(X, y, ["intercept", hparam, *cnames])
    fit.method, fit.term, fit.controls = "gla", hparam, controls
    return fit
