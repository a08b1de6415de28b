"""From-scratch learned compressor: MLP transforms, a factorized entropy
model, rounding proxies, training and evaluation."""

from .entropy_model import FactorizedEntropyModel
from .handbuilt import hemisphere_model, zero_model
from .mlp import Mlp
from .model import CompressorModel, LossParts, TrainingDiverged
from .proxy import quant_proxy, soft_round, training_proxy
from .train import (
    SweepResult,
    TrainConfig,
    eval_hard,
    gradient_check,
    probe_analysis,
    probe_synthesis,
    staircase_defects,
    sweep_lambda,
    train,
)

__all__ = [
    "CompressorModel",
    "FactorizedEntropyModel",
    "LossParts",
    "Mlp",
    "SweepResult",
    "TrainConfig",
    "TrainingDiverged",
    "eval_hard",
    "gradient_check",
    "hemisphere_model",
    "probe_analysis",
    "probe_synthesis",
    "quant_proxy",
    "soft_round",
    "staircase_defects",
    "sweep_lambda",
    "train",
    "training_proxy",
    "zero_model",
]
