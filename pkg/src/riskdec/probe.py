"""L2-regularized multinomial linear probes.

Objective, per-sample normalized::

    mean_i CE(y_i, x_i W + b) + (lam / 2) * ||W||_F^2      (bias unregularized)

Training is deterministic full-batch descent from zero parameters: limited
memory quasi-Newton directions with an Armijo backtracking line search.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ContractError, NumericError
from .fvec_io import FeatureDataset

#: Bias given to classes absent from the training labels. Their weights stay
#: at the regularizer's optimum (zero) and they are never predicted.
ABSENT_CLASS_BIAS = -1.0e4

DEFAULT_GRID = tuple(float(x) for x in np.logspace(-4, 2, 7))


@dataclass(frozen=True)
class TrainConfig:
    grad_tol: float = 1e-6
    max_iter: int = 500
    seed: int = 0
    memory: int = 10

    def __post_init__(self):
        if not self.grad_tol > 0:
            raise ContractError("grad_tol must be > 0")
        if self.max_iter < 1:
            raise ContractError("max_iter must be >= 1")


@dataclass(eq=False)
class ProbeModel:
    weights: np.ndarray
    bias: np.ndarray
    lam: float
    converged: bool = True
    n_iter: int = 0
    grad_norm: float = 0.0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[1],):
            raise ContractError(f"weights {self.weights.shape} and bias {self.bias.shape} disagree")
        if self.lam < 0:
            raise ContractError("lambda must be >= 0")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise NumericError("probe parameters are not finite")

    @property
    def d(self) -> int:
        return self.weights.shape[0]

    @property
    def n_classes(self) -> int:
        return self.weights.shape[1]

    def logits(self, features) -> np.ndarray:
        X = np.asarray(features, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.d:
            raise ContractError(f"features have shape {X.shape}, probe expects d={self.d}")
        return X @ self.weights + self.bias

    def same_as(self, other: "ProbeModel") -> bool:
        return (self.lam == other.lam and np.array_equal(self.weights, other.weights)
                and np.array_equal(self.bias, other.bias))

    def to_dict(self) -> dict:
        return {"d": self.d, "C": self.n_classes, "lambda": self.lam,
                "weights": self.weights.ravel().tolist(), "bias": self.bias.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "ProbeModel":
        d, C = int(doc["d"]), int(doc["C"])
        W = np.asarray(doc["weights"], dtype=np.float64)
        if W.size != d * C or len(doc["bias"]) != C:
            raise ContractError("serialized probe has inconsistent sizes")
        return cls(W.reshape(d, C), np.asarray(doc["bias"]), float(doc["lambda"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "ProbeModel":
        return cls.from_dict(json.loads(text))


def _as_float(ds: FeatureDataset) -> np.ndarray:
    return np.ascontiguousarray(ds.features, dtype=np.float64)


def _objective(X, y, W, b, lam):
    n = X.shape[0]
    total, resid = kernels.softmax_xent(X @ W + b, y)
    loss = total / n + 0.5 * lam * float(np.sum(W * W))
    gW = X.T @ resid / n + lam * W
    gb = resid.sum(axis=0) / n
    return loss, gW, gb


def loss_and_grad(model: ProbeModel, ds: FeatureDataset):
    """Regularized mean cross-entropy and its exact gradient ``(dW, db)``."""
    if ds.d != model.d or ds.n_classes != model.n_classes:
        raise ContractError(f"probe is {model.d}x{model.n_classes}, data is {ds.d}x{ds.n_classes}")
    loss, gW, gb = _objective(_as_float(ds), ds.labels, model.weights, model.bias, model.lam)
    return loss, (gW, gb)


def cross_entropy(model: ProbeModel, ds: FeatureDataset) -> float:
    """Unpenalized mean cross-entropy."""
    total, _ = kernels.softmax_xent(model.logits(_as_float(ds)), ds.labels)
    return total / ds.n


def _norm(v) -> float:
    """Euclidean norm that does not overflow for entries near the float limit."""
    m = float(np.max(np.abs(v), initial=0.0))
    if m == 0.0:
        return 0.0
    return m * math.sqrt(float(np.sum((v / m) ** 2)))


def _minimize(fun, x0, cfg: TrainConfig):
    """L-BFGS two-loop directions with Armijo backtracking; returns (x, f, g, iters, converged)."""
    x = x0
    with np.errstate(over="ignore", invalid="ignore"):
        f, g = fun(x)
    if not (math.isfinite(f) and np.all(np.isfinite(g))):
        raise NumericError("non-finite loss or gradient at initialization", iteration=0)
    hist = deque(maxlen=cfg.memory)
    it = 0
    converged = False
    while True:
        if float(np.max(np.abs(g), initial=0.0)) <= cfg.grad_tol:
            converged = True
            break
        if it >= cfg.max_iter:
            break
        it += 1
        q = g.copy()
        alphas = []
        for s, yv, rho in reversed(hist):
            a = rho * float(s @ q)
            alphas.append(a)
            q -= a * yv
        if hist:
            s, yv, _ = hist[-1]
            q *= float(s @ yv) / float(yv @ yv)
        else:
            q /= max(1.0, _norm(g))
        for (s, yv, rho), a in zip(hist, reversed(alphas)):
            bcoef = rho * float(yv @ q)
            q += (a - bcoef) * s
        direction = -q
        with np.errstate(over="ignore", invalid="ignore"):
            slope = float(g @ direction)
        if not slope < 0:
            hist.clear()
            direction = -g / max(1.0, _norm(g))
            slope = -_norm(g) ** 2 / max(1.0, _norm(g))
        step = 1.0
        accepted = False
        for _ in range(60):
            x_new = x + step * direction
            with np.errstate(over="ignore", invalid="ignore"):
                f_new, g_new = fun(x_new)
            if (math.isfinite(f_new) and f_new <= f + 1e-4 * step * slope
                    and np.all(np.isfinite(g_new))):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            if not (math.isfinite(f_new) and np.all(np.isfinite(g_new))):
                raise NumericError("non-finite loss or gradient during line search", iteration=it)
            if hist:
                hist.clear()
                continue
            break
        s = x_new - x
        yv = g_new - g
        sy = float(s @ yv)
        if sy > 1e-12 * math.sqrt(float(s @ s) * float(yv @ yv)):
            hist.append((s, yv, 1.0 / sy))
        x, f, g = x_new, f_new, g_new
    return x, f, g, it, converged


def train_probe(train: FeatureDataset, lam: float, cfg: TrainConfig | None = None) -> ProbeModel:
    cfg = cfg or TrainConfig()
    if lam < 0:
        raise ContractError("lambda must be >= 0")
    X = _as_float(train)
    d, C = train.d, train.n_classes
    present = np.flatnonzero(train.class_counts() > 0)
    remap = np.full(C, -1, dtype=np.int64)
    remap[present] = np.arange(present.size)
    y = remap[train.labels]
    Cp = present.size

    def fun(theta):
        W = theta[: d * Cp].reshape(d, Cp)
        b = theta[d * Cp:]
        loss, gW, gb = _objective(X, y, W, b, lam)
        return loss, np.concatenate([gW.ravel(), gb])

    theta, _, g, it, converged = _minimize(fun, np.zeros(d * Cp + Cp), cfg)
    W = np.zeros((d, C))
    b = np.full(C, ABSENT_CLASS_BIAS)
    W[:, present] = theta[: d * Cp].reshape(d, Cp)
    b[present] = theta[d * Cp:]
    return ProbeModel(W, b, float(lam), converged=converged, n_iter=it,
                      grad_norm=float(np.max(np.abs(g), initial=0.0)))


def predict(model: ProbeModel, features) -> np.ndarray:
    """Row-wise argmax of the logits; ties go to the lowest class index."""
    return np.argmax(model.logits(features), axis=1)


def zero_one_risk(model: ProbeModel, ds: FeatureDataset) -> float:
    if ds.n == 0:
        raise ContractError("empty evaluation set")
    if ds.d != model.d:
        raise ContractError(f"probe expects d={model.d}, data has d={ds.d}")
    return float(np.count_nonzero(predict(model, ds.features) != ds.labels)) / ds.n


@dataclass
class TuneResult:
    best_lambda: float
    risks: dict = field(default_factory=dict)
    model: ProbeModel | None = None


def check_grid(grid) -> list:
    grid = [float(g) for g in grid]
    if not grid:
        raise ContractError("lambda grid is empty")
    if any(not g > 0 for g in grid):
        raise ContractError("lambda grid must be strictly positive")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ContractError("lambda grid must be sorted ascending without duplicates")
    return grid


def tune_lambda(train: FeatureDataset, val: FeatureDataset, grid=DEFAULT_GRID,
                cfg: TrainConfig | None = None, refit: bool = False) -> TuneResult:
    """Grid search on validation 0-1 risk; ties go to the smaller lambda.

    With ``refit`` the chosen lambda is refit on train and val combined.
    """
    from .fvec_io import concat

    grid = check_grid(grid)
    cfg = cfg or TrainConfig()
    risks, models = {}, {}
    for lam in grid:
        try:
            model = train_probe(train, lam, cfg)
        except NumericError as exc:
            raise NumericError(f"lambda={lam:g}: {exc}", iteration=exc.iteration) from exc
        risks[lam] = zero_one_risk(model, val)
        models[lam] = model
    best = min(grid, key=lambda lam: (risks[lam], lam))
    chosen = models[best]
    if refit:
        chosen = train_probe(concat(train, val, name=train.name), best, cfg)
    return TuneResult(best, risks, chosen)
