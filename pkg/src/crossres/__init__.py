"""Cross-resolution video coding: HR intra frames, LR inter frames and a
decoder-side network that synthesizes the HR inter frames."""

from .fusion import crs_forward, init_weights, train_step
from .pipeline import encode_sequence, evaluate, load_yuv, run_pipeline, synthesize, write_yuv
from .weights import ModelConfig, Weights

__version__ = "0.1.0"

__all__ = [
    "ModelConfig", "Weights", "crs_forward", "encode_sequence", "evaluate", "init_weights",
    "load_yuv", "run_pipeline", "synthesize", "train_step", "write_yuv",
]
