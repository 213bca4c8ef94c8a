"""Parameter counts, multiply-accumulates per second and real-time factor."""
from __future__ import annotations

import statistics
import time
from dataclasses import asdict, dataclass

import numpy as np

from .model import ModelConfig, StreamingEnhancer, check_weights, init_weights
from .stft import StftConfig, analyze, synthesize

MAC_CONVENTIONS = ("thop", "matmul")


@dataclass
class CostReport:
    params: int
    macs_per_second: int
    realtime_factor: float | None = None
    preset: str | None = None
    h_f: int | None = None
    h_t: int | None = None
    num_mics: int | None = None
    mac_convention: str = "thop"

    def to_dict(self) -> dict:
        return asdict(self)


def count_params(config: ModelConfig) -> int:
    """Exact trainable parameter count (two bias vectors per LSTM layer)."""
    d, hf, ht = config.features, config.h_f, config.h_t
    f_lstm = 4 * hf * (d + hf) + 8 * hf
    t_lstm = 4 * ht * (hf + ht) + 8 * ht
    dense = d * (ht + 1)
    return f_lstm + t_lstm + dense


def _lstm_step_macs(inputs: int, hidden: int, convention: str) -> int:
    macs = 4 * hidden * (inputs + hidden)
    if convention == "thop":
        # thop's LSTM cell rule: two bias adds and one extra op per gate unit,
        # 3*H for the cell update and H for the output product
        macs += 4 * 3 * hidden + 4 * hidden
    return macs


def macs_per_frame(config: ModelConfig, convention: str = "thop") -> int:
    if convention not in MAC_CONVENTIONS:
        raise ValueError(f"unknown MAC convention {convention!r}; use one of {MAC_CONVENTIONS}")
    per_bin = (
        _lstm_step_macs(config.features, config.h_f, convention)
        + _lstm_step_macs(config.h_f, config.h_t, convention)
        + config.h_t * config.features
    )
    return config.num_bins * per_bin


def count_macs_per_second(config: ModelConfig, stft: StftConfig = StftConfig(),
                          convention: str = "thop") -> int:
    """MACs per second of audio at ``stft.frames_per_second`` frames per second.

    ``"matmul"`` counts matrix-vector products only.  ``"thop"`` follows the
    thop package's LSTM rule, which adds bias and gate/cell element-wise
    operations; dense-layer biases are excluded in both.
    """
    per_frame = macs_per_frame(config, convention)
    return int(round(per_frame * stft.sample_rate_hz / stft.frame_shift))


def _single_thread():
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover - threadpoolctl ships with scipy/sklearn installs
        return None
    return threadpool_limits(limits=1)


def bench_realtime_factor(config: ModelConfig, weights: dict | None = None, audio_seconds: float = 10.0,
                          repetitions: int = 5, stft: StftConfig = StftConfig(), block_frames: int = 64,
                          dtype=np.float32, seed: int = 0) -> float:
    """Median of processing time / audio duration for streaming inference.

    Each repetition analyzes a synthetic noisy pair, streams it through a
    fresh :class:`StreamingEnhancer` in blocks of ``block_frames`` frames and
    resynthesizes the estimate.  One short warm-up run is discarded.  BLAS is
    limited to one thread while timing.
    """
    if repetitions < 3:
        raise ValueError("repetitions must be >= 3")
    if audio_seconds <= 0:
        raise ValueError("audio_seconds must be positive")
    if weights is None:
        weights = init_weights(config, seed)
    check_weights(config, weights)
    rng = np.random.default_rng(seed)
    n = int(round(audio_seconds * stft.sample_rate_hz))
    audio = rng.normal(scale=0.1, size=(config.num_mics, n))

    def run(x):
        enhancer = StreamingEnhancer(config, weights, dtype=dtype)
        spec = analyze(x, stft)
        est = enhancer.process(spec.astype(np.result_type(dtype, np.complex64)), block_frames)
        return synthesize(est, stft, length=x.shape[-1])

    limiter = _single_thread()
    try:
        run(audio[:, : min(n, 4 * stft.frame_len)])
        ratios = []
        for _ in range(repetitions):
            t0 = time.perf_counter()
            run(audio)
            ratios.append((time.perf_counter() - t0) / audio_seconds)
    finally:
        if limiter is not None:
            limiter.unregister()
    return float(statistics.median(ratios))


def cost_report(config: ModelConfig, preset: str | None = None, stft: StftConfig = StftConfig(),
                convention: str = "thop", realtime_factor: float | None = None) -> CostReport:
    return CostReport(
        params=count_params(config),
        macs_per_second=count_macs_per_second(config, stft, convention),
        realtime_factor=realtime_factor,
        preset=preset,
        h_f=config.h_f,
        h_t=config.h_t,
        num_mics=config.num_mics,
        mac_convention=convention,
    )

