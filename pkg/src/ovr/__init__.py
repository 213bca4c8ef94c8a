"""Own-voice reconstruction for hearables.

A two-microphone (outer + in-ear) enhancement pipeline: STFT analysis,
phoneme-dependent in-ear simulation, noisy-capture mixing, an
FT-JNF complex-mask network written in numpy with hand-derived gradients,
complexity accounting and log-spectral-distance evaluation.
"""
from .augment import RtfTable, SmoothingConfig, augment_utterance, estimate_rtfs, simulate_inear
from .complexity import bench_realtime_factor, count_macs_per_second, count_params, cost_report
from .fileio import DataError
from .metrics import evaluate_grid, lsd
from .mixer import IrSet, MixSpec, NoiseCapture, measure_snr, mix_at_snr, spatialize
from .model import ModelConfig, StreamingEnhancer, forward, infer_utterance, init_weights, load_weights, save_weights
from .stft import ConfigError, StftConfig, analyze, synthesize
from .train import LossConfig, TrainConfig, backward, fine_tune, loss_combined_l1

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "IrSet",
    "LossConfig",
    "MixSpec",
    "ModelConfig",
    "NoiseCapture",
    "RtfTable",
    "SmoothingConfig",
    "StftConfig",
    "StreamingEnhancer",
    "TrainConfig",
    "analyze",
    "augment_utterance",
    "backward",
    "bench_realtime_factor",
    "cost_report",
    "count_macs_per_second",
    "count_params",
    "estimate_rtfs",
    "evaluate_grid",
    "fine_tune",
    "forward",
    "infer_utterance",
    "init_weights",
    "load_weights",
    "loss_combined_l1",
    "lsd",
    "measure_snr",
    "mix_at_snr",
    "save_weights",
    "simulate_inear",
    "spatialize",
    "synthesize",
]
