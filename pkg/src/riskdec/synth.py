"""Synthetic Gaussian tasks, a zoo of stand-in encoders, and brute-force oracles.

Nothing here simulates an actual SSL objective. The encoders are chosen
because their effect on the decomposition is forced by construction:
constant features cannot be fit, one-hot row indicators cannot generalize,
and PCA depends on its finite pretraining sample.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.special import ndtr

from . import kernels
from .decomposition import LambdaPolicy, RiskComponents, estimate_components, estimate_hrFF_from_raw
from .errors import ConfigurationError, ContractError
from .fvec_io import FeatureDataset, make_split_plan
from .probe import ProbeModel, TrainConfig

SPLIT_CODES = {"pretrain": 0, "train": 1, "test": 2, "other": 3}

#: Pairwise mean distance giving a full-shot probe risk near 0.15 for 10 equidistant
#: classes with unit isotropic noise.
DEFAULT_DELTA = 3.9

#: Near-unregularized empirical risk minimization. Tuning lambda on a
#: validation slice adds noise of the same order as the probe gaps the
#: encoder zoo is meant to expose, so sweeps default to a fixed tiny lambda.
ERM_POLICY = LambdaPolicy(fixed=1e-4)


@dataclass(frozen=True)
class SynthTask:
    n_classes: int
    d_raw: int
    means: tuple
    sigma: float = 1.0
    n_pre: int = 1000
    n_tr: int = 1000
    n_te: int = 1000
    seed: int = 0

    def __post_init__(self):
        M = np.asarray(self.means, dtype=np.float64)
        if M.shape != (self.n_classes, self.d_raw):
            raise ConfigurationError(f"means must be {self.n_classes}x{self.d_raw}, got {M.shape}")
        if not self.sigma > 0:
            raise ConfigurationError("sigma must be > 0")
        if min(self.n_pre, self.n_tr, self.n_te) < 1:
            raise ConfigurationError("every split needs at least one row")
        object.__setattr__(self, "means", tuple(map(tuple, M.tolist())))

    @property
    def mean_matrix(self) -> np.ndarray:
        return np.asarray(self.means, dtype=np.float64)

    def distinct_means(self) -> bool:
        M = self.mean_matrix
        return len({tuple(r) for r in M.tolist()}) == self.n_classes

    def with_seed(self, seed: int) -> "SynthTask":
        return replace(self, seed=seed)

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["means"] = [list(r) for r in self.means]
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "SynthTask":
        if "means" not in doc:
            return gaussian_task(**doc)
        return cls(**doc)


def gaussian_task(n_classes=10, d_raw=16, delta=DEFAULT_DELTA, sigma=1.0, n_pre=1000, n_tr=1000,
                  n_te=1000, seed=0) -> SynthTask:
    """Equidistant class means ``delta / sqrt(2) * e_c`` (pairwise distance ``delta``)."""
    if d_raw < n_classes:
        raise ConfigurationError("equidistant means need d_raw >= n_classes")
    M = np.zeros((n_classes, d_raw))
    M[np.arange(n_classes), np.arange(n_classes)] = delta / math.sqrt(2)
    return SynthTask(n_classes, d_raw, M, sigma, n_pre, n_tr, n_te, seed)


def two_gaussian_task(delta=2.0, sigma=1.0, d_raw=2, n_pre=100, n_tr=10_000, n_te=10_000,
                      seed=0) -> SynthTask:
    """Two classes with means ``+-(delta/2) e_1``."""
    M = np.zeros((2, d_raw))
    M[0, 0], M[1, 0] = -delta / 2, delta / 2
    return SynthTask(2, d_raw, M, sigma, n_pre, n_tr, n_te, seed)


def _draw(task: SynthTask, n: int, rng, name: str) -> FeatureDataset:
    labels = np.arange(n) % task.n_classes
    labels = labels[rng.permutation(n)]
    X = task.mean_matrix[labels] + task.sigma * rng.standard_normal((n, task.d_raw))
    return FeatureDataset(X, labels, task.n_classes, name)


def gen_gaussian_task(task: SynthTask):
    """(raw_pretrain, raw_train, raw_test), class-balanced and seed-deterministic."""
    rng = np.random.default_rng(task.seed)
    return (_draw(task, task.n_pre, rng, "raw_pretrain"),
            _draw(task, task.n_tr, rng, "raw_train"),
            _draw(task, task.n_te, rng, "raw_test"))


ENCODER_KINDS = ("identity", "constant", "one_hot_train", "random_projection",
                 "noisy_identity", "pca_pretrained")


@dataclass(frozen=True)
class EncoderSpec:
    kind: str
    d_out: int | None = None
    nonlinearity: bool = False
    seed: int = 0
    sigma_noise: float = 0.0
    name: str | None = None

    def __post_init__(self):
        if self.kind not in ENCODER_KINDS:
            raise ConfigurationError(f"unknown encoder kind {self.kind!r}")
        if self.kind in ("random_projection", "pca_pretrained") and not (self.d_out and self.d_out >= 1):
            raise ConfigurationError(f"{self.kind} needs d_out >= 1")
        if self.d_out is not None and self.d_out < 1:
            raise ConfigurationError("d_out must be >= 1")

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        if self.kind == "random_projection":
            return f"random_projection(d={self.d_out}{', tanh' if self.nonlinearity else ''})"
        if self.kind == "pca_pretrained":
            return f"pca_pretrained(d={self.d_out})"
        if self.kind == "noisy_identity":
            return f"noisy_identity(sigma={self.sigma_noise:g})"
        return self.kind

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, doc: dict) -> "EncoderSpec":
        return cls(**doc)


class FittedEncoder:
    """An encoder whose parameters were fixed from the pretraining split."""

    def __init__(self, spec: EncoderSpec, d_raw: int, n_train: int | None, params: dict):
        self.spec = spec
        self.d_raw = d_raw
        self.n_train = n_train
        self.params = params

    @property
    def d_out(self) -> int:
        kind = self.spec.kind
        if kind in ("identity", "noisy_identity"):
            return self.d_raw
        if kind == "one_hot_train":
            return self.n_train
        return self.spec.d_out or 1

    def transform(self, ds: FeatureDataset, split: str = "other") -> FeatureDataset:
        if ds.d != self.d_raw:
            raise ContractError(f"encoder expects d={self.d_raw}, data has d={ds.d}")
        kind = self.spec.kind
        X = np.asarray(ds.features, dtype=np.float64)
        if kind == "identity":
            Z = X.copy()
        elif kind == "constant":
            Z = np.ones((ds.n, self.d_out))
        elif kind == "one_hot_train":
            if split == "train":
                if ds.n != self.n_train:
                    raise ContractError(f"train split has {ds.n} rows, encoder was built for {self.n_train}")
                Z = np.eye(self.n_train)
            else:
                Z = np.zeros((ds.n, self.n_train))
        elif kind == "random_projection":
            Z = X @ self.params["R"]
            if self.spec.nonlinearity:
                Z = np.tanh(Z)
        elif kind == "noisy_identity":
            rng = np.random.default_rng([self.spec.seed, SPLIT_CODES.get(split, 3)])
            Z = X + self.spec.sigma_noise * rng.standard_normal(X.shape)
        else:
            Z = (X - self.params["mean"]) @ self.params["components"].T
        return FeatureDataset(Z, ds.labels, ds.n_classes, f"{self.spec.label}:{ds.name}")


def pca_components(X: np.ndarray, k: int):
    """(mean, top-k principal directions as orthonormal rows), sign-normalized."""
    mean = X.mean(axis=0)
    _, _, Vt = np.linalg.svd(X - mean, full_matrices=False)
    V = Vt[:k].copy()
    pivots = np.argmax(np.abs(V), axis=1)
    signs = np.sign(V[np.arange(k), pivots])
    signs[signs == 0] = 1.0
    return mean, V * signs[:, None]


def fit_encoder(spec: EncoderSpec, pretrain: FeatureDataset, n_train: int | None = None) -> FittedEncoder:
    d_raw = pretrain.d
    params = {}
    if spec.kind == "one_hot_train" and not n_train:
        raise ConfigurationError("one_hot_train needs the training split size")
    if spec.kind == "random_projection":
        rng = np.random.default_rng(spec.seed)
        params["R"] = rng.standard_normal((d_raw, spec.d_out)) / math.sqrt(d_raw)
    elif spec.kind == "pca_pretrained":
        if pretrain.n < spec.d_out or d_raw < spec.d_out:
            raise ContractError(f"pca_pretrained needs n_pre and d_raw >= d_out={spec.d_out}")
        params["mean"], params["components"] = pca_components(
            np.asarray(pretrain.features, dtype=np.float64), spec.d_out)
    return FittedEncoder(spec, d_raw, n_train, params)


def apply_encoder(spec: EncoderSpec, pretrain: FeatureDataset, ds: FeatureDataset,
                  split: str = "other", n_train: int | None = None) -> FeatureDataset:
    if spec.kind == "one_hot_train" and n_train is None and split == "train":
        n_train = ds.n
    return fit_encoder(spec, pretrain, n_train).transform(ds, split)


@dataclass
class BayesRisk:
    value: float
    stderr: float
    method: str

    def __float__(self):
        return self.value


def _posterior_error(task: SynthTask, X: np.ndarray) -> np.ndarray:
    M = task.mean_matrix
    sq = ((X[:, None, :] - M[None, :, :]) ** 2).sum(axis=2)
    logp = -sq / (2 * task.sigma ** 2)
    logp -= logp.max(axis=1, keepdims=True)
    p = np.exp(logp)
    p /= p.sum(axis=1, keepdims=True)
    return 1.0 - p.max(axis=1)


def bayes_risk_oracle(task: SynthTask, method: str = "auto", n_samples: int = 1_000_000,
                      seed: int = 12345) -> BayesRisk:
    """Bayes risk of the equal-prior isotropic Gaussian mixture.

    Two classes use the closed form Phi(-Delta / (2 sigma)). Otherwise the
    expected posterior error 1 - max_c p(c|x) is averaged over Monte Carlo
    draws, which is unbiased and has lower variance than counting mistakes.
    """
    M = task.mean_matrix
    C = task.n_classes
    if C == 1:
        return BayesRisk(0.0, 0.0, "exact")
    if not task.distinct_means() and np.all(M == M[0]):
        return BayesRisk((C - 1) / C, 0.0, "exact")
    if method == "auto":
        method = "closed_form" if C == 2 else "monte_carlo"
    if method == "closed_form":
        if C != 2:
            raise ConfigurationError("closed form is only available for two classes")
        delta = float(np.linalg.norm(M[0] - M[1]))
        return BayesRisk(float(ndtr(-delta / (2 * task.sigma))), 0.0, "closed_form")
    rng = np.random.default_rng(seed)
    errs = []
    chunk = 100_000
    for start in range(0, n_samples, chunk):
        m = min(chunk, n_samples - start)
        y = rng.integers(0, C, size=m)
        X = M[y] + task.sigma * rng.standard_normal((m, task.d_raw))
        errs.append(_posterior_error(task, X))
    e = np.concatenate(errs)
    return BayesRisk(float(e.mean()), float(e.std(ddof=1) / math.sqrt(e.size)), "monte_carlo")


def population_risk(task: SynthTask, model: ProbeModel, n_samples: int = 1_000_000,
                    seed: int = 54321) -> float:
    """Population 0-1 risk of a linear probe on raw task inputs.

    Two classes: closed form per class, Phi(margin / (sigma * |w|)). More
    classes: expected error over Monte Carlo draws.
    """
    if model.d != task.d_raw:
        raise ContractError("probe dimension does not match the task")
    M = task.mean_matrix
    if task.n_classes == 2:
        total = 0.0
        for k in range(2):
            o = 1 - k
            w = model.weights[:, o] - model.weights[:, k]
            b = model.bias[o] - model.bias[k]
            norm = float(np.linalg.norm(w))
            margin = float(M[k] @ w + b)
            if norm == 0.0:
                # constant decision; ties go to the lower index
                wrong = margin > 0 or (margin == 0 and o < k)
                total += 0.5 * float(wrong)
            else:
                total += 0.5 * float(ndtr(margin / (task.sigma * norm)))
        return total
    rng = np.random.default_rng(seed)
    wrong = 0
    for start in range(0, n_samples, 100_000):
        m = min(100_000, n_samples - start)
        y = rng.integers(0, task.n_classes, size=m)
        X = M[y] + task.sigma * rng.standard_normal((m, task.d_raw))
        wrong += int(np.count_nonzero(np.argmax(model.logits(X), axis=1) != y))
    return wrong / n_samples


@dataclass(frozen=True)
class LatticeSpec:
    lo: float = -5.0
    hi: float = 5.0
    step: float = 0.05

    def values(self) -> np.ndarray:
        if not (self.step > 0 and self.hi >= self.lo):
            raise ConfigurationError("empty lattice")
        m = int(math.floor((self.hi - self.lo) / self.step + 1e-9)) + 1
        return self.lo + self.step * np.arange(m)


MAX_LATTICE_POINTS = 10 ** 8


def brute_force_probe(tiny: FeatureDataset, lam: float, lattice: LatticeSpec | None = None,
                      chunk: int = 65536):
    """Exhaustive minimum of the probe objective over a parameter lattice.

    Cross-entropy only sees differences between class columns, so the search
    runs over class-0-relative coordinates ``u`` (weights and bias, C-1
    columns). Each lattice point maps to the equivalent model whose weight
    rows sum to zero, which has the least penalty among models with the same
    logit differences. Returns ``(min_objective, weights, bias)``.
    """
    if lattice is None:
        raise ConfigurationError("lattice spec is required")
    d, C = tiny.d, tiny.n_classes
    if (d + 1) * C > 6:
        raise ContractError(f"(d+1)*C = {(d + 1) * C} parameters exceeds the limit of 6")
    grid = lattice.values()
    k = (d + 1) * (C - 1)
    total = grid.size ** k
    if total > MAX_LATTICE_POINTS:
        raise ContractError(f"lattice has {total} points, more than {MAX_LATTICE_POINTS}")
    X = np.asarray(tiny.features, dtype=np.float64)
    best_val, best_flat = math.inf, -1
    for start in range(0, total, chunk):
        flat = np.arange(start, min(start + chunk, total))
        coords = grid[np.stack(np.unravel_index(flat, (grid.size,) * k), axis=1)]
        params = _reduced_to_full(coords, d, C)
        vals = kernels.lattice_objectives(X, tiny.labels, lam, params)
        i = int(np.argmin(vals))
        if vals[i] < best_val:
            best_val, best_flat = float(vals[i]), int(flat[i])
    coords = grid[np.array(np.unravel_index(best_flat, (grid.size,) * k))][None, :]
    P = _reduced_to_full(coords, d, C)[0]
    return best_val, P[:d].copy(), P[d].copy()


def _reduced_to_full(coords: np.ndarray, d: int, C: int) -> np.ndarray:
    U = coords.reshape(-1, d + 1, C - 1)
    full = np.concatenate([np.zeros(U.shape[:2] + (1,)), U], axis=2)
    full[:, :d, :] -= full[:, :d, :].mean(axis=2, keepdims=True)
    return np.ascontiguousarray(full)


@dataclass
class TradeoffRow:
    encoder: str
    seed: int
    components: RiskComponents


@dataclass
class TradeoffTable:
    rows: list = field(default_factory=list)

    def labels(self) -> list:
        seen = []
        for r in self.rows:
            if r.encoder not in seen:
                seen.append(r.encoder)
        return seen

    def mean(self, encoder: str, attr: str) -> float:
        vals = [getattr(r.components, attr) for r in self.rows if r.encoder == encoder]
        return float(np.mean(vals))

    def frontier(self) -> list:
        """(encoder, mean usability, mean probe_gen) per encoder in input order."""
        return [(e, self.mean(e, "usability"), self.mean(e, "probe_gen")) for e in self.labels()]


def encode_splits(spec: EncoderSpec, raw_pre, raw_tr, raw_te, pretrain_on: str = "pretrain"):
    """Featurize train/test with an encoder fit on the chosen pretraining rows.

    ``pretrain_on="train"`` pretrains on S_tr itself, the standard SSL
    setting where pretraining and probe inputs coincide.
    """
    source = {"pretrain": raw_pre, "train": raw_tr}[pretrain_on]
    enc = fit_encoder(spec, source, n_train=raw_tr.n)
    return enc.transform(raw_tr, "train"), enc.transform(raw_te, "test")


def tradeoff_sweep(task: SynthTask, specs, cfg: TrainConfig | None = None, seeds=(0,),
                   policy: LambdaPolicy | None = None, sub_size: int | None = None,
                   pretrain_on: str = "pretrain") -> TradeoffTable:
    """Full decomposition of every encoder on fresh task draws per seed.

    hr_FF is the raw-input probe's training error, shared by all encoders of
    a seed. Encoder seeds are offset by the task seed so each replicate sees
    a different random encoder.
    """
    specs = list(specs)
    if not specs:
        raise ConfigurationError("no encoders given")
    cfg = cfg or TrainConfig()
    policy = policy or ERM_POLICY
    table = TradeoffTable()
    for seed in seeds:
        raw_pre, raw_tr, raw_te = gen_gaussian_task(task.with_seed(seed))
        pol = policy.with_seed(seed)
        plan = make_split_plan(raw_tr, raw_te, sub_size, seed)
        hr_FF = estimate_hrFF_from_raw(raw_tr, pol, cfg)
        for spec in specs:
            s = replace(spec, seed=spec.seed + seed) if spec.kind in ("random_projection", "noisy_identity") else spec
            tr, te = encode_splits(s, raw_pre, raw_tr, raw_te, pretrain_on)
            est, comps = estimate_components(tr, te, plan, hr_FF, pol, cfg)
            est.provenance["hr_FF"] = "computed"
            table.rows.append(TradeoffRow(spec.label, seed, comps))
    return table


def load_encoder_specs(path) -> list:
    with open(path) as fh:
        doc = json.load(fh)
    if isinstance(doc, dict):
        doc = doc.get("encoders", [])
    return [EncoderSpec.from_dict(d) for d in doc]

