"""Scaling laws for probe risk as a function of the number of probe samples.

The decomposition law extrapolates a full-data decomposition to ``n`` probe
samples::

    R(n) = approx + encoder_gen + (1 - W) usability + (W usability + probe_gen) (N / n) ** alpha

with two fitted parameters. The baseline is the standard law
``I_e + C_e / n**alpha_e + K / p**beta`` with per-group ``(I_e, C_e, alpha_e)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares, minimize

from .decomposition import RiskComponents
from .errors import ConfigurationError, ContractError, UnidentifiableError

ALPHA_BOUNDS = (0.0, 2.0)
W_BOUNDS = (0.0, 1.0)
GRID_SIZE = 200
SIMPLEX_TOL = 1e-8
DEFAULT_HOLDOUT_SETTINGS = 3


@dataclass
class ScalingObservation:
    encoder: str
    components: RiskComponents
    N: int
    n: int
    observed_risk: float
    group: str | None = None
    p: float | None = None
    setting: str | None = None

    def __post_init__(self):
        if self.n < 1 or self.N < 1:
            raise ContractError("N and n must be >= 1")

    @property
    def flags(self) -> list:
        return ["n_exceeds_N"] if self.n > self.N else []

    def to_dict(self) -> dict:
        doc = {"encoder": self.encoder, "components": self.components.to_dict(), "N": self.N,
               "n": self.n, "observed_risk": self.observed_risk}
        for key in ("group", "p", "setting"):
            if getattr(self, key) is not None:
                doc[key] = getattr(self, key)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "ScalingObservation":
        return cls(doc["encoder"], RiskComponents.from_dict(doc["components"]), int(doc["N"]),
                   int(doc["n"]), float(doc["observed_risk"]), doc.get("group"), doc.get("p"),
                   doc.get("setting"))


def predict_risk(components: RiskComponents, N, n, alpha: float, w: float) -> float:
    c = components
    scale = (N / n) ** alpha
    return c.approx + c.encoder_gen + (1 - w) * c.usability + (w * c.usability + c.probe_gen) * scale


def r_squared(pred, actual) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    if pred.shape != actual.shape or pred.ndim != 1 or pred.size == 0:
        raise ContractError("pred and actual must be equal-length non-empty vectors")
    resid = actual - pred
    centered = actual - actual.mean()
    sst = float(centered @ centered)
    if sst == 0:
        raise ContractError("R^2 is undefined for a constant response")
    return 1.0 - float(resid @ resid) / sst


def _arrays(obs):
    comp = np.array([[o.components.approx, o.components.encoder_gen, o.components.usability,
                      o.components.probe_gen] for o in obs], dtype=np.float64)
    ratio = np.array([o.N / o.n for o in obs], dtype=np.float64)
    y = np.array([o.observed_risk for o in obs], dtype=np.float64)
    return comp, ratio, y


@dataclass
class ScalingLawFit:
    alpha: float
    w: float
    r2_train: float
    residuals: np.ndarray
    sse: float
    r2_test: float | None = None
    n_params: int = 2

    def predict(self, obs) -> np.ndarray:
        return np.array([predict_risk(o.components, o.N, o.n, self.alpha, self.w) for o in obs])

    def to_dict(self) -> dict:
        return {"law": "decomposition", "alpha": self.alpha, "w": self.w, "n_params": self.n_params,
                "r2_train": self.r2_train, "r2_test": self.r2_test, "sse": self.sse,
                "residuals": [float(r) for r in self.residuals]}


def fit_decomposition_law(obs) -> ScalingLawFit:
    """Least-squares (alpha, W): a 200x200 grid, then bounded simplex refinement.

    Grid ties go to the lowest alpha, then the lowest W.
    """
    obs = list(obs)
    if not obs:
        raise ContractError("no observations")
    if len({o.n for o in obs}) < 2:
        raise UnidentifiableError("alpha is unidentifiable: all observations share one n")
    comp, ratio, y = _arrays(obs)
    A, E, R, P = comp.T
    log_ratio = np.log(ratio)

    def sse(alpha, w):
        pred = A + E + (1 - w) * R + (w * R + P) * np.exp(alpha * log_ratio)
        r = pred - y
        return float(r @ r)

    alphas = np.linspace(*ALPHA_BOUNDS, GRID_SIZE)
    ws = np.linspace(*W_BOUNDS, GRID_SIZE)
    # For fixed alpha the residual is a + w * b, so the SSE is quadratic in w.
    S = np.exp(alphas[:, None] * log_ratio[None, :])
    a = A + E + R + P * S - y
    b = R * (S - 1)
    grid = ((a * a).sum(1)[:, None] + 2 * (a * b).sum(1)[:, None] * ws[None, :]
            + (b * b).sum(1)[:, None] * ws[None, :] ** 2)
    i, j = np.unravel_index(int(np.argmin(grid)), grid.shape)
    x0 = np.array([alphas[i], ws[j]])
    da, dw = alphas[1] - alphas[0], ws[1] - ws[0]
    simplex = np.array([x0, x0 + [da if x0[0] + da <= ALPHA_BOUNDS[1] else -da, 0.0],
                        x0 + [0.0, dw if x0[1] + dw <= W_BOUNDS[1] else -dw]])
    res = minimize(lambda x: sse(x[0], x[1]), x0, method="Nelder-Mead",
                   bounds=[ALPHA_BOUNDS, W_BOUNDS],
                   options={"initial_simplex": simplex, "xatol": SIMPLEX_TOL, "fatol": 0.0,
                            "maxiter": 20_000, "maxfev": 40_000})
    alpha, w = float(res.x[0]), float(res.x[1])
    if sse(*x0) < sse(alpha, w):
        alpha, w = float(x0[0]), float(x0[1])
    alpha = min(max(alpha, ALPHA_BOUNDS[0]), ALPHA_BOUNDS[1])
    w = min(max(w, W_BOUNDS[0]), W_BOUNDS[1])
    pred = A + E + (1 - w) * R + (w * R + P) * ratio ** alpha
    resid = y - pred
    r2 = r_squared(pred, y) if np.ptp(y) > 0 else 1.0
    return ScalingLawFit(alpha, w, r2, resid, float(resid @ resid))


@dataclass
class StandardLawFit:
    groups: list
    intercepts: dict
    coefs: dict
    alphas: dict
    K: float
    beta: float
    beta_indeterminate: bool
    r2_train: float
    sse: float
    r2_test: float | None = None
    flags: list = field(default_factory=list)

    @property
    def n_params(self) -> int:
        return 3 * len(self.groups) + 2

    def predict_one(self, o: ScalingObservation) -> float:
        g = _group(o)
        if g not in self.intercepts:
            raise ContractError(f"group {g!r} was not fit; the law cannot predict it")
        value = self.intercepts[g] + self.coefs[g] * o.n ** (-self.alphas[g])
        if not self.beta_indeterminate:
            value += self.K * _p(o) ** (-self.beta)
        return value

    def predict(self, obs) -> np.ndarray:
        return np.array([self.predict_one(o) for o in obs])

    def to_dict(self) -> dict:
        return {"law": "standard", "n_params": self.n_params,
                "groups": [{"group": g, "I": self.intercepts[g], "C": self.coefs[g], "alpha": self.alphas[g]}
                           for g in self.groups],
                "K": self.K, "beta": self.beta, "beta_indeterminate": self.beta_indeterminate,
                "r2_train": self.r2_train, "r2_test": self.r2_test, "sse": self.sse, "flags": self.flags}


def _group(o) -> str:
    return "all" if o.group is None else str(o.group)


def _p(o) -> float:
    return 1.0 if o.p is None else float(o.p)


def fit_standard_law(obs, grid_size: int = GRID_SIZE) -> StandardLawFit:
    """Fit ``I_e + C_e n^-alpha_e + K p^-beta`` by variable projection.

    Exponents start from grids over [0, 2] (per group alone, then beta with
    the group exponents held) and are polished jointly with the linear
    parameters profiled out by least squares at every step. When no group
    has two distinct ``p`` values the ``K / p**beta`` term is absorbed by the
    intercepts and beta is reported as indeterminate.
    """
    obs = list(obs)
    if not obs:
        raise ContractError("no observations")
    groups = sorted({_group(o) for o in obs})
    gidx = np.array([groups.index(_group(o)) for o in obs])
    n = np.array([o.n for o in obs], dtype=np.float64)
    p = np.array([_p(o) for o in obs], dtype=np.float64)
    y = np.array([o.observed_risk for o in obs], dtype=np.float64)
    if np.any(p <= 0):
        raise ContractError("probe parameter counts must be positive")
    for k, g in enumerate(groups):
        if np.unique(n[gidx == k]).size < 3:
            raise UnidentifiableError(f"group {g!r} needs at least 3 distinct n values")
    G = len(groups)
    beta_free = any(np.unique(p[gidx == k]).size >= 2 for k in range(G))
    log_n, log_p = np.log(n), np.log(p)
    onehot = (gidx[:, None] == np.arange(G)[None, :]).astype(np.float64)

    def design(alphas, beta):
        cols = [onehot, onehot * np.exp(-alphas[gidx] * log_n)[:, None]]
        if beta_free:
            cols.append(np.exp(-beta * log_p)[:, None])
        return np.hstack(cols)

    def profile(theta):
        X = design(theta[:G], theta[G] if beta_free else 0.0)
        coef, *_ = np.linalg.lstsq(X, y, rcond=None)
        return coef, y - X @ coef

    grid = np.linspace(*ALPHA_BOUNDS, grid_size)
    alphas0 = np.empty(G)
    for k in range(G):
        m = gidx == k
        best = (math.inf, 0.0)
        for a in grid:
            X = np.column_stack([np.ones(m.sum()), np.exp(-a * log_n[m])])
            coef, *_ = np.linalg.lstsq(X, y[m], rcond=None)
            r = y[m] - X @ coef
            best = min(best, (float(r @ r), float(a)))
        alphas0[k] = best[1]
    theta0 = np.append(alphas0, 0.0)
    if beta_free:
        scores = []
        for b in grid:
            _, r = profile(np.append(alphas0, b))
            scores.append(float(r @ r))
        theta0[G] = grid[int(np.argmin(scores))]
    free = G + (1 if beta_free else 0)
    res = least_squares(lambda t: profile(t if beta_free else np.append(t, 0.0))[1], theta0[:free],
                        bounds=([ALPHA_BOUNDS[0]] * free, [ALPHA_BOUNDS[1]] * free),
                        xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=10_000, method="trf")
    theta = res.x if beta_free else np.append(res.x, 0.0)
    _, r0 = profile(theta0)
    if float(r0 @ r0) < float(res.fun @ res.fun):
        theta = theta0
    coef, resid = profile(theta)
    flags = [] if beta_free else ["beta_indeterminate"]
    if beta_free and not any(np.unique(p[gidx == k]).size >= 3 for k in range(G)):
        # two p levels fix K p^-beta only up to a trade-off with the intercepts
        flags.append("beta_underdetermined")
    pred = y - resid
    r2 = r_squared(pred, y) if np.ptp(y) > 0 else 1.0
    return StandardLawFit(
        groups,
        {g: float(coef[k]) for k, g in enumerate(groups)},
        {g: float(coef[G + k]) for k, g in enumerate(groups)},
        {g: float(theta[k]) for k, g in enumerate(groups)},
        float(coef[2 * G]) if beta_free else 0.0,
        float(theta[G]) if beta_free else 0.0,
        not beta_free, r2, float(resid @ resid), flags=flags)


@dataclass
class HoldoutSplit:
    scheme: str
    train: list
    test: list


def holdout_split(obs, scheme: str = "iid", seed: int = 0,
                  n_holdout: int = DEFAULT_HOLDOUT_SETTINGS) -> HoldoutSplit:
    """Split observations for held-out evaluation.

    ``iid`` holds out ``n_holdout`` randomly chosen settings of every encoder;
    ``group:<value>`` holds out every observation whose group equals value.
    """
    obs = list(obs)
    if scheme == "iid":
        rng = np.random.default_rng(seed)
        by_encoder = {}
        for i, o in enumerate(obs):
            by_encoder.setdefault(o.encoder, []).append(i)
        test = set()
        for enc in sorted(by_encoder):
            idx = by_encoder[enc]
            if len(idx) <= n_holdout:
                raise ConfigurationError(f"encoder {enc!r} has {len(idx)} settings; cannot hold out {n_holdout}")
            test.update(idx[j] for j in rng.permutation(len(idx))[:n_holdout])
    elif scheme.startswith("group:"):
        key = scheme.split(":", 1)[1]
        test = {i for i, o in enumerate(obs) if _group(o) == key}
        if not test:
            raise ConfigurationError(f"no observation has group {key!r}")
    else:
        raise ConfigurationError(f"unknown holdout scheme {scheme!r}")
    return HoldoutSplit(scheme, [o for i, o in enumerate(obs) if i not in test],
                        [o for i, o in enumerate(obs) if i in test])


def evaluate_holdout(obs, scheme: str = "iid", law: str = "decomposition", seed: int = 0,
                     n_holdout: int = DEFAULT_HOLDOUT_SETTINGS):
    """Fit on the training part and score R^2 on the held-out part.

    Returns the fit with ``r2_test`` filled; ``r2_test`` stays None when the
    law cannot predict the held-out observations (an unseen group).
    """
    split = holdout_split(obs, scheme, seed, n_holdout)
    if not split.train:
        raise ConfigurationError("holdout leaves no training observations")
    if law == "decomposition":
        fit = fit_decomposition_law(split.train)
    elif law == "standard":
        fit = fit_standard_law(split.train)
    else:
        raise ConfigurationError(f"unknown law {law!r}")
    try:
        pred = fit.predict(split.test)
    except ContractError:
        return fit
    fit.r2_test = r_squared(pred, [o.observed_risk for o in split.test])
    return fit
