"""Tail-aware post-training quantization.

Twin uniform quantizers with ternary-searched intervals, a two-stage
k-means calibration-set builder, and low-rank residual adapters gated by
tail relative error, exercised on a small numpy transformer.
"""

from .calibration import CalibrationPool, CalibrationSample, build_calibration_set, kmeans, stability_scores
from .compensation import Adapter, TREConfig, apply_adapter, fit_adapter, tre
from .config import RunConfig
from .quantizer import BitWidthSpec, Partition, QuantParams, TwinQuantParams, quantize
from .search import calibrate_layer, make_grid, search_exhaustive, search_ternary, similarity
from .toynet import ToyNet, ToyNetConfig, forward, gen_calibration_pool, init_toynet
from .pipeline import run_pipeline

__version__ = "0.1.0"

__all__ = [
    "Adapter", "BitWidthSpec", "CalibrationPool", "CalibrationSample", "Partition", "QuantParams",
    "RunConfig", "TREConfig", "ToyNet", "ToyNetConfig", "TwinQuantParams", "apply_adapter",
    "build_calibration_set", "calibrate_layer", "fit_adapter", "forward", "gen_calibration_pool",
    "init_toynet", "kmeans", "make_grid", "quantize", "run_pipeline", "search_exhaustive",
    "search_ternary", "similarity", "stability_scores", "tre",
]
