"""Four-way risk decomposition of a frozen encoder evaluated with linear probes.

Given risk estimates measured on different train/eval partitions::

    approx      = hr_FF - bayes
    usability   = hr_AF - hr_FF
    probe_gen   = hr_AS - hr_AF
    encoder_gen = hr_US - hr_AS
    total       = hr_US

``hr_US`` trains on S_tr and evaluates on S_te, ``hr_AS`` trains on
S_tr minus S_sub and evaluates on S_sub, ``hr_AF`` is the training error of
the ``hr_US`` probe, and ``hr_FF`` is the training error of a supervised
reference (an external number, or a probe fit on raw inputs when the
composed family is linear in them).
"""

from __future__ import annotations

import math
import re
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ContractError, EstimationError, ParseError, SamplingError
from .fvec_io import (
    FeatureDataset,
    SplitPlan,
    stratified_fraction,
    stratified_kshot,
)
from .probe import (
    DEFAULT_GRID,
    ProbeModel,
    TrainConfig,
    check_grid,
    train_probe,
    tune_lambda,
    zero_one_risk,
)

ESTIMATORS = ("hr_FF", "hr_AF", "hr_AS", "hr_US")


@dataclass(frozen=True)
class LambdaPolicy:
    """How each probe picks its L2 strength.

    ``fixed`` bypasses tuning. Otherwise the probe's own training set is
    split into a stratified fit/validation pair (``val_fraction`` per class,
    seeded by ``seed``), the grid is searched on validation 0-1 risk, and the
    chosen lambda is refit on the full training set.
    """

    grid: tuple = DEFAULT_GRID
    fixed: float | None = None
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "grid", tuple(check_grid(self.grid)))
        if self.fixed is not None and self.fixed < 0:
            raise ConfigurationError("fixed lambda must be >= 0")
        if not 0 < self.val_fraction < 1:
            raise ConfigurationError("val_fraction must be in (0, 1)")

    def with_seed(self, seed: int) -> "LambdaPolicy":
        return LambdaPolicy(self.grid, self.fixed, self.val_fraction, seed)

    def to_dict(self) -> dict:
        return {"grid": list(self.grid), "fixed": self.fixed,
                "val_fraction": self.val_fraction, "seed": self.seed}


def validation_split(ds: FeatureDataset, fraction: float, seed: int):
    """Stratified (fit_idx, val_idx); classes with a single row stay in fit."""
    rng = np.random.default_rng(seed)
    fit, val = [], []
    for c in range(ds.n_classes):
        members = np.flatnonzero(ds.labels == c)
        if members.size == 0:
            continue
        members = members[rng.permutation(members.size)]
        k = min(members.size - 1, math.ceil(fraction * members.size)) if members.size > 1 else 0
        val.append(members[:k])
        fit.append(members[k:])
    fit_idx = np.sort(np.concatenate(fit)) if fit else np.empty(0, dtype=np.int64)
    val_idx = np.sort(np.concatenate(val)) if val else np.empty(0, dtype=np.int64)
    return fit_idx, val_idx


@dataclass
class FitReport:
    model: ProbeModel
    lam: float
    tuned: bool
    val_risks: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)


def fit_with_policy(train: FeatureDataset, policy: LambdaPolicy,
                    cfg: TrainConfig | None = None) -> FitReport:
    cfg = cfg or TrainConfig()
    if policy.fixed is not None:
        return FitReport(train_probe(train, policy.fixed, cfg), policy.fixed, False)
    fit_idx, val_idx = validation_split(train, policy.val_fraction, policy.seed)
    flags = []
    if val_idx.size == 0 or fit_idx.size == 0:
        lam = policy.grid[len(policy.grid) // 2]
        flags.append("untuned_lambda")
        return FitReport(train_probe(train, lam, cfg), lam, False, {}, flags)
    tuned = tune_lambda(train.subset(fit_idx), train.subset(val_idx), policy.grid, cfg)
    model = train_probe(train, tuned.best_lambda, cfg)
    if not model.converged:
        flags.append("probe_not_converged")
    return FitReport(model, tuned.best_lambda, True, tuned.risks, flags)


def risk(train: FeatureDataset, eval: FeatureDataset, lam: float,
         cfg: TrainConfig | None = None) -> float:
    """0-1 risk on ``eval`` of a probe fit on ``train`` with strength ``lam``."""
    if train.d != eval.d:
        raise ContractError(f"feature dimensions differ: {train.d} vs {eval.d}")
    return zero_one_risk(train_probe(train, lam, cfg), eval)


def tuned_risk(train: FeatureDataset, eval: FeatureDataset, policy: LambdaPolicy,
               cfg: TrainConfig | None = None) -> tuple[float, FitReport]:
    if train.d != eval.d:
        raise ContractError(f"feature dimensions differ: {train.d} vs {eval.d}")
    rep = fit_with_policy(train, policy, cfg)
    return zero_one_risk(rep.model, eval), rep


@dataclass
class RiskEstimates:
    hr_FF: float
    hr_AF: float
    hr_AS: float
    hr_US: float
    provenance: dict = field(default_factory=dict)
    lambdas: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ESTIMATORS:
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ContractError(f"{name}={v} outside [0, 1]")
        for name in ESTIMATORS:
            self.provenance.setdefault(name, "computed")

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in ESTIMATORS}


@dataclass
class RiskComponents:
    approx: float
    usability: float
    probe_gen: float
    encoder_gen: float
    total: float
    bayes_risk: float = 0.0
    estimates: RiskEstimates | None = None
    flags: list = field(default_factory=list)

    def component_sum(self) -> float:
        return self.approx + self.usability + self.probe_gen + self.encoder_gen + self.bayes_risk

    def as_tuple(self):
        return (self.approx, self.usability, self.probe_gen, self.encoder_gen)

    def to_dict(self) -> dict:
        est = self.estimates
        doc = {
            "hr_FF": est.hr_FF if est else None,
            "hr_AF": est.hr_AF if est else None,
            "hr_AS": est.hr_AS if est else None,
            "hr_US": est.hr_US if est else None,
            "approx": self.approx,
            "usability": self.usability,
            "probe_gen": self.probe_gen,
            "encoder_gen": self.encoder_gen,
            "bayes_risk": self.bayes_risk,
            "total": self.total,
            "flags": list(self.flags),
        }
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "RiskComponents":
        est = None
        if all(doc.get(k) is not None for k in ESTIMATORS):
            est = RiskEstimates(*(float(doc[k]) for k in ESTIMATORS))
        return cls(float(doc["approx"]), float(doc["usability"]), float(doc["probe_gen"]),
                   float(doc["encoder_gen"]), float(doc["total"]),
                   float(doc.get("bayes_risk", 0.0)), est, list(doc.get("flags", [])))


def decompose(est: RiskEstimates, bayes_risk: float = 0.0) -> RiskComponents:
    """Components as differences of the stored estimates; negatives are kept."""
    if not 0.0 <= bayes_risk <= 1.0:
        raise ContractError(f"bayes_risk={bayes_risk} outside [0, 1]")
    flags = []
    if bayes_risk > est.hr_FF:
        warnings.warn(f"bayes_risk {bayes_risk} exceeds hr_FF {est.hr_FF}; approx is negative",
                      stacklevel=2)
        flags.append("negative_approx")
    if est.hr_AF < est.hr_FF:
        flags.append("negative_usability")
    if est.hr_AS < est.hr_AF:
        flags.append("negative_probe_gen")
    if est.hr_US < est.hr_AS:
        flags.append("negative_encoder_gen")
    return RiskComponents(
        approx=est.hr_FF - bayes_risk,
        usability=est.hr_AF - est.hr_FF,
        probe_gen=est.hr_AS - est.hr_AF,
        encoder_gen=est.hr_US - est.hr_AS,
        total=est.hr_US,
        bayes_risk=bayes_risk,
        estimates=est,
        flags=flags,
    )


def estimate_hrFF_from_raw(raw_train: FeatureDataset, policy: LambdaPolicy | None = None,
                           cfg: TrainConfig | None = None) -> float:
    """Training 0-1 risk of a probe fit on the raw inputs themselves.

    Valid as the supervised reference only when the composed encoder+probe
    family is linear in the raw inputs (the synthetic regime).
    """
    policy = policy or LambdaPolicy()
    value, _ = tuned_risk(raw_train, raw_train, policy, cfg)
    return value


def _check_same_encoder(train_feats, test_feats):
    if train_feats.d != test_feats.d:
        raise ContractError(f"train/test feature dimensions differ: {train_feats.d} vs {test_feats.d}")
    if train_feats.n_classes != test_feats.n_classes:
        raise ContractError("train/test class counts differ")


def estimate_components(train_feats: FeatureDataset, test_feats: FeatureDataset, plan: SplitPlan,
                        hr_FF_source=None, policy: LambdaPolicy | None = None,
                        cfg: TrainConfig | None = None, bayes_risk: float = 0.0):
    """Measure the four risk estimates and decompose them.

    ``hr_FF_source`` is either a risk in [0, 1] (an externally known
    supervised training error) or a raw-input ``FeatureDataset`` aligned with
    ``train_feats`` on which the reference probe is fit.
    """
    if hr_FF_source is None:
        raise ConfigurationError("hr_FF needs an external risk or a raw training set")
    _check_same_encoder(train_feats, test_feats)
    policy = policy or LambdaPolicy()
    cfg = cfg or TrainConfig()

    full = fit_with_policy(train_feats, policy, cfg)
    hr_US = zero_one_risk(full.model, test_feats)
    hr_AF = zero_one_risk(full.model, train_feats)
    rest, sub = plan.datasets("hr_AS", train_feats, test_feats)
    hr_AS, rest_fit = tuned_risk(rest, sub, policy, cfg)

    provenance = {"hr_US": "computed", "hr_AF": "computed", "hr_AS": "computed"}
    lambdas = {"hr_US": full.lam, "hr_AF": full.lam, "hr_AS": rest_fit.lam}
    if isinstance(hr_FF_source, FeatureDataset):
        if hr_FF_source.n != train_feats.n or not np.array_equal(hr_FF_source.labels, train_feats.labels):
            raise ContractError("raw training set is not aligned with the featurized training set")
        raw_fit = fit_with_policy(hr_FF_source, policy, cfg)
        hr_FF = zero_one_risk(raw_fit.model, hr_FF_source)
        provenance["hr_FF"] = "computed"
        lambdas["hr_FF"] = raw_fit.lam
    else:
        hr_FF = float(hr_FF_source)
        provenance["hr_FF"] = "external"

    est = RiskEstimates(hr_FF, hr_AF, hr_AS, hr_US, provenance, lambdas)
    comps = decompose(est, bayes_risk)
    for rep in (full, rest_fit):
        comps.flags.extend(f for f in rep.flags if f not in comps.flags)
    return est, comps


@dataclass
class AltComponents:
    hr_UF: float
    probe_gen_alt: float
    encoder_gen_alt: float
    hr_US: float
    hr_AF: float
    flags: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"hr_UF": self.hr_UF, "probe_gen_alt": self.probe_gen_alt,
                "encoder_gen_alt": self.encoder_gen_alt, "hr_US": self.hr_US,
                "hr_AF": self.hr_AF, "flags": list(self.flags)}


def alternative_components(train_feats: FeatureDataset, test_feats: FeatureDataset,
                           policy: LambdaPolicy | None = None, cfg: TrainConfig | None = None,
                           estimates: RiskEstimates | None = None) -> AltComponents:
    """Decomposition with the two generalization terms in the other order.

    ``hr_UF`` is the training error of a probe fit and evaluated on S_te.
    Pass ``estimates`` to reuse hr_US/hr_AF from ``estimate_components``.
    """
    _check_same_encoder(train_feats, test_feats)
    policy = policy or LambdaPolicy()
    cfg = cfg or TrainConfig()
    counts = test_feats.class_counts()
    if test_feats.n < test_feats.n_classes:
        raise EstimationError(f"S_te has {test_feats.n} rows, fewer than {test_feats.n_classes} classes")
    flags = []
    present = counts[counts > 0]
    n_params = (test_feats.d + 1) * test_feats.n_classes
    if present.min() <= 1 or test_feats.n <= n_params:
        warnings.warn("S_te is small enough for the probe to overfit it; hr_UF will underestimate",
                      stacklevel=2)
        flags.append("hr_UF_underestimates")
    if estimates is None:
        full = fit_with_policy(train_feats, policy, cfg)
        hr_US = zero_one_risk(full.model, test_feats)
        hr_AF = zero_one_risk(full.model, train_feats)
    else:
        hr_US, hr_AF = estimates.hr_US, estimates.hr_AF
    hr_UF, _ = tuned_risk(test_feats, test_feats, policy, cfg)
    return AltComponents(hr_UF, hr_US - hr_UF, hr_UF - hr_AF, hr_US, hr_AF, flags)


_SETTING_RE = re.compile(r"^\s*(?:(?P<full>full|100%)|(?P<pct>\d+(?:\.\d+)?)%|(?P<k>\d+)-shot)\s*$")

DEFAULT_SETTINGS = ("100%", "30-shot", "1%", "5-shot", "3-shot")


@dataclass(frozen=True)
class Setting:
    kind: str  # "full" | "fraction" | "kshot"
    value: float
    label: str


def parse_setting(text: str) -> Setting:
    m = _SETTING_RE.match(text.lower())
    if not m:
        raise ParseError(f"cannot parse setting {text!r}; expected full, p% or k-shot")
    if m.group("full"):
        return Setting("full", 1.0, "100%")
    if m.group("pct"):
        pct = float(m.group("pct"))
        if not 0 < pct <= 100:
            raise ParseError(f"percentage out of range in {text!r}")
        if pct == 100:
            return Setting("full", 1.0, "100%")
        return Setting("fraction", pct / 100.0, f"{m.group('pct')}%")
    k = int(m.group("k"))
    if k < 1:
        raise ParseError(f"{text!r}: need at least one shot per class")
    return Setting("kshot", k, f"{k}-shot")


@dataclass
class SettingResult:
    setting: Setting
    seeds: list
    risks: list
    n_train: list = field(default_factory=list)
    infeasible: str | None = None

    @property
    def mean(self) -> float:
        return float(np.mean(self.risks)) if self.risks else math.nan

    @property
    def std(self) -> float:
        return float(np.std(self.risks)) if self.risks else math.nan

    def to_dict(self) -> dict:
        return {"setting": self.setting.label, "kind": self.setting.kind,
                "seeds": list(self.seeds), "risks": list(self.risks),
                "n_train": list(self.n_train),
                "mean": None if self.infeasible else self.mean,
                "std": None if self.infeasible else self.std,
                "infeasible": self.infeasible}


def subsample(train: FeatureDataset, setting: Setting, seed: int) -> FeatureDataset:
    if setting.kind == "full":
        return train
    if setting.kind == "fraction":
        return train.subset(stratified_fraction(train, setting.value, seed).indices)
    return train.subset(stratified_kshot(train, int(setting.value), seed).indices)


def fewshot_suite(train_feats: FeatureDataset, test_feats: FeatureDataset, settings=DEFAULT_SETTINGS,
                  seeds=(0,), policy: LambdaPolicy | None = None,
                  cfg: TrainConfig | None = None) -> list[SettingResult]:
    """Test risk of tuned probes trained on subsampled label budgets.

    Infeasible settings (a class with too few rows for k shots) produce a
    result with ``infeasible`` set instead of raising.
    """
    _check_same_encoder(train_feats, test_feats)
    policy = policy or LambdaPolicy()
    cfg = cfg or TrainConfig()
    out = []
    for s in settings:
        setting = s if isinstance(s, Setting) else parse_setting(s)
        res = SettingResult(setting, [], [])
        for seed in seeds:
            try:
                sub = subsample(train_feats, setting, seed)
            except SamplingError as exc:
                res = SettingResult(setting, list(seeds), [], [], infeasible=str(exc))
                break
            value, _ = tuned_risk(sub, test_feats, policy, cfg)
            res.seeds.append(seed)
            res.risks.append(value)
            res.n_train.append(sub.n)
        out.append(res)
    return out
