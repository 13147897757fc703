"""riskdec: decompose the risk of linear probes on frozen representations.

The four components are approximation, usability, probe generalization and
encoder generalization; see ``riskdec.decomposition``.
"""

__version__ = "0.1.0"

from .decomposition import (LambdaPolicy, RiskComponents, RiskEstimates, decompose,
                            estimate_components)
from .fvec_io import FeatureDataset, load_fvec, make_split_plan, save_fvec
from .kernels import BACKEND
from .probe import ProbeModel, TrainConfig, train_probe, zero_one_risk

__all__ = [
    "BACKEND", "FeatureDataset", "LambdaPolicy", "ProbeModel", "RiskComponents", "RiskEstimates",
    "TrainConfig", "decompose", "estimate_components", "load_fvec", "make_split_plan",
    "save_fvec", "train_probe", "zero_one_risk",
]
