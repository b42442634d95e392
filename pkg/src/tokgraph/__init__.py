"""Spatio-temporal token classifier: patch backbone, transformer encoder,
parameter-free graph propagation and a pooled linear head, on a small
numpy autodiff tape."""
from .config import ABLATION_ROWS, RunConfig
from .model import TokenGraphModel, param_report
from .synth import SynthTaskConfig, generate_dataset

__all__ = ["ABLATION_ROWS", "RunConfig", "SynthTaskConfig", "TokenGraphModel", "generate_dataset", "param_report"]
