"""Strata-NeRF - Stratified Neural Radiance Fields"""

from .config import RunConfig, parse_config
from .field import ModelConfig, make_field, model_forward, parameter_ledger
from .metrics import EvalReport, evaluate, psnr, ssim
from .scenegen import load_manifest, make_preset, write_dataset
from .sweep import make_ablation_sweep, run_ablation_sweep
from .training import TrainConfig, train

__all__ = [
    "RunConfig",
    "parse_config",
    "ModelConfig",
    "make_field",
    "model_forward",
    "parameter_ledger",
    "EvalReport",
    "evaluate",
    "psnr",
    "ssim",
    "load_manifest",
    "make_preset",
    "write_dataset",
    "make_ablation_sweep",
    "run_ablation_sweep",
    "TrainConfig",
    "train",
]
