"""Square-root Hann STFT with 50 % overlap and exact overlap-add reconstruction.

Spectrograms are plain complex arrays shaped ``(..., K, L)`` (bins by frames);
waveforms are real arrays shaped ``(..., N)``.  Leading axes are batch axes.

Framing uses centered reflection padding: half a frame is reflected onto the
front of the signal, so the center of frame ``l`` sits on sample
``l * frame_shift``.  The number of frames is ``1 + N // frame_shift``, which
keeps every sample inside at least one frame.  In the interior the squared
windows of overlapping frames sum to one; near the end of a signal whose length
is not a multiple of the frame shift only one frame contributes, and synthesis
divides by the overlap-added squared window so reconstruction stays exact.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "ConfigError",
    "StftConfig",
    "make_window",
    "num_frames",
    "frame_times",
    "analyze",
    "synthesize",
    "analyze_adjoint",
    "synthesize_adjoint",
]


class ConfigError(ValueError):
    """Invalid STFT or model configuration."""


@dataclass(frozen=True)
class StftConfig:
    sample_rate_hz: int = 16000
    frame_len: int = 512

    def __post_init__(self):
        if self.frame_len < 2 or self.frame_len % 2:
            raise ConfigError(f"frame_len must be even and >= 2, got {self.frame_len}")
        if self.sample_rate_hz <= 0:
            raise ConfigError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")

    @property
    def frame_shift(self) -> int:
        return self.frame_len // 2

    @property
    def num_bins(self) -> int:
        return self.frame_len // 2 + 1

    @property
    def frames_per_second(self) -> float:
        return self.sample_rate_hz / self.frame_shift


def make_window(config: StftConfig) -> np.ndarray:
    """Periodic Hann window, square-rooted (used for analysis and synthesis)."""
    n = np.arange(config.frame_len)
    hann = 0.5 - 0.5 * np.cos(2.0 * np.pi * n / config.frame_len)
    # tiny negative values from rounding would give NaN under sqrt
    return np.sqrt(np.clip(hann, 0.0, None))


def num_frames(num_samples: int, config: StftConfig) -> int:
    return 1 + num_samples // config.frame_shift


def frame_times(n_frames: int, config: StftConfig) -> np.ndarray:
    """Center time in seconds of each frame."""
    return np.arange(n_frames) * config.frame_shift / config.sample_rate_hz


def _padding_index(num_samples: int, config: StftConfig) -> np.ndarray:
    half = config.frame_len // 2
    n_frames = num_frames(num_samples, config)
    right = (n_frames - 1) * config.frame_shift + config.frame_len - half - num_samples
    return np.pad(np.arange(num_samples), (half, right), mode="reflect")


def _check_rate(sample_rate, config):
    if sample_rate is not None and sample_rate != config.sample_rate_hz:
        raise ConfigError(
            f"sample rate {sample_rate} Hz does not match STFT config "
            f"({config.sample_rate_hz} Hz)"
        )


def analyze(x, config: StftConfig = StftConfig(), sample_rate: int | None = None) -> np.ndarray:
    """Forward STFT of ``x`` with shape ``(..., N)``; returns ``(..., K, L)``."""
    _check_rate(sample_rate, config)
    x = np.asarray(x)
    if x.shape[-1] < 1:
        raise ValueError("cannot analyze an empty signal")
    padded = x[..., _padding_index(x.shape[-1], config)]
    frames = sliding_window_view(padded, config.frame_len, axis=-1)[..., :: config.frame_shift, :]
    spec = np.fft.rfft(frames * make_window(config), axis=-1)
    return np.swapaxes(spec, -1, -2)


def _overlap_add(frames: np.ndarray, shift: int) -> np.ndarray:
    # frames (..., L, 2*shift) -> signal (..., (L+1)*shift)
    lead = frames.shape[:-2]
    n_frames = frames.shape[-2]
    out = np.zeros(lead + ((n_frames + 1) * shift,), dtype=frames.dtype)
    out[..., : n_frames * shift] += frames[..., :shift].reshape(lead + (-1,))
    out[..., shift:] += frames[..., shift:].reshape(lead + (-1,))
    return out


def _window_norm(n_frames: int, length: int, config: StftConfig) -> np.ndarray:
    w2 = np.broadcast_to(make_window(config) ** 2, (n_frames, config.frame_len))
    half = config.frame_len // 2
    return _overlap_add(np.ascontiguousarray(w2), config.frame_shift)[half : half + length]


def synthesize(spec, config: StftConfig = StftConfig(), length: int | None = None) -> np.ndarray:
    """Inverse STFT by windowed overlap-add; returns ``(..., length)``.

    ``length`` defaults to the shortest signal length that yields ``L`` frames.
    """
    spec = np.asarray(spec)
    if spec.ndim < 2 or spec.shape[-2] != config.num_bins:
        raise ValueError(
            f"spectrogram with shape {spec.shape} does not have {config.num_bins} bins"
        )
    n_frames = spec.shape[-1]
    if length is None:
        length = (n_frames - 1) * config.frame_shift
    elif num_frames(length, config) != n_frames:
        raise ValueError(f"length {length} is inconsistent with {n_frames} frames")
    frames = np.fft.irfft(np.swapaxes(spec, -1, -2), n=config.frame_len, axis=-1)
    signal = _overlap_add(frames * make_window(config), config.frame_shift)
    half = config.frame_len // 2
    return signal[..., half : half + length] / _window_norm(n_frames, length, config)


def analyze_adjoint(grad_spec, config: StftConfig, length: int) -> np.ndarray:
    """Adjoint of :func:`analyze` (real inner product); maps spectrogram
    gradients ``dRe + 1j*dIm`` to waveform gradients."""
    grad_spec = np.asarray(grad_spec)
    g = np.swapaxes(grad_spec, -1, -2).copy()
    # rfft gradient: interior bins appear twice in irfft's Hermitian extension
    g[..., 1:-1] *= 0.5
    frames = np.fft.irfft(g, n=config.frame_len, axis=-1) * config.frame_len
    padded = _overlap_add(frames * make_window(config), config.frame_shift)
    idx = _padding_index(length, config)
    lead = padded.shape[:-1]
    flat = padded.reshape(-1, padded.shape[-1])
    out = np.zeros((flat.shape[0], length))
    np.add.at(out, (slice(None), idx), flat)
    return out.reshape(lead + (length,))


def synthesize_adjoint(grad_signal, config: StftConfig) -> np.ndarray:
    """Adjoint of :func:`synthesize`; maps waveform gradients to spectrogram
    gradients in the ``dRe + 1j*dIm`` convention."""
    grad_signal = np.asarray(grad_signal, dtype=float)
    length = grad_signal.shape[-1]
    n_frames = num_frames(length, config)
    half = config.frame_len // 2
    total = (n_frames + 1) * config.frame_shift
    padded = np.zeros(grad_signal.shape[:-1] + (total,))
    padded[..., half : half + length] = grad_signal / _window_norm(n_frames, length, config)
    frames = sliding_window_view(padded, config.frame_len, axis=-1)[..., :: config.frame_shift, :]
    g = np.fft.rfft(frames * make_window(config), axis=-1) / config.frame_len
    g[..., 1:-1] *= 2.0
    return np.swapaxes(g, -1, -2)
