"""Two-channel noisy capture synthesis: noise spatialization and SNR-controlled mixing.

The SNR is defined at the outer microphone over the full utterance; the same
noise gain is applied to both channels so the inter-channel noise level
difference of the impulse responses is preserved.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve

from .fileio import SAMPLE_RATE, DataError, read_wav, write_wav

NUM_DIRECTIONS = 8
MODES = ("point", "diffuse")


@dataclass(frozen=True)
class IrSet:
    """Impulse-response pairs for 8 horizontal directions in 45 degree steps.

    ``outer`` and ``inear`` are ``(8, taps)`` arrays.
    """

    outer: np.ndarray
    inear: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE

    def __post_init__(self):
        outer = np.atleast_2d(np.asarray(self.outer, dtype=float))
        inear = np.atleast_2d(np.asarray(self.inear, dtype=float))
        if outer.shape != inear.shape:
            raise ValueError(f"IR shapes differ: {outer.shape} vs {inear.shape}")
        if outer.shape[0] != NUM_DIRECTIONS:
            raise ValueError(f"expected {NUM_DIRECTIONS} directions, got {outer.shape[0]}")
        if not (np.all(np.isfinite(outer)) and np.all(np.isfinite(inear))):
            raise ValueError("impulse responses must be finite")
        object.__setattr__(self, "outer", outer)
        object.__setattr__(self, "inear", inear)


@dataclass(frozen=True)
class MixSpec:
    snr_db: float
    mode: str = "point"
    direction: int | None = 0
    seed: int = 0

    def __post_init__(self):
        if not np.isfinite(self.snr_db):
            raise ValueError(f"snr_db must be finite, got {self.snr_db}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "point" and (self.direction is None or not 0 <= self.direction < NUM_DIRECTIONS):
            raise ValueError(f"point mode needs a direction in 0..7, got {self.direction}")
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")


@dataclass(frozen=True)
class NoiseCapture:
    outer: np.ndarray
    inear: np.ndarray

    def __post_init__(self):
        if np.shape(self.outer) != np.shape(self.inear):
            raise ValueError("noise channels must have equal length")


def _convolve(src, ir):
    return fftconvolve(src, ir)[: len(src)]


def spatialize(noise, irs: IrSet, mode: str = "point", direction: int | None = 0,
               normalize: bool = True) -> NoiseCapture:
    """Render noise at both microphones.

    ``point``: one mono source convolved with the IR pair of ``direction``.
    ``diffuse``: ``noise`` holds 8 independent sources ``(8, N)``, one per
    direction; their renderings are summed and, if ``normalize``, scaled to
    unit RMS at the outer microphone.
    """
    noise = np.asarray(noise, dtype=float)
    if mode == "point":
        if direction is None or not 0 <= direction < NUM_DIRECTIONS:
            raise ValueError(f"point source needs a direction in 0..7, got {direction}")
        if noise.ndim != 1:
            raise ValueError("point mode expects a mono source")
        return NoiseCapture(_convolve(noise, irs.outer[direction]), _convolve(noise, irs.inear[direction]))
    if mode != "diffuse":
        raise ValueError(f"unknown noise mode {mode!r}")
    if noise.ndim != 2 or noise.shape[0] != NUM_DIRECTIONS:
        raise ValueError(f"diffuse mode expects {NUM_DIRECTIONS} sources, got shape {noise.shape}")
    outer = sum(_convolve(noise[d], irs.outer[d]) for d in range(NUM_DIRECTIONS))
    inear = sum(_convolve(noise[d], irs.inear[d]) for d in range(NUM_DIRECTIONS))
    if normalize:
        rms = np.sqrt(np.mean(outer**2))
        if rms == 0:
            raise ValueError("diffuse noise is silent at the outer microphone")
        outer, inear = outer / rms, inear / rms
    return NoiseCapture(outer, inear)


def diffuse_sources(noise, seed: int) -> np.ndarray:
    """Eight decorrelated sources from one noise recording via random circular shifts."""
    noise = np.asarray(noise, dtype=float)
    rng = np.random.default_rng(seed)
    shifts = rng.permutation(len(noise))[:NUM_DIRECTIONS]
    return np.stack([np.roll(noise, -int(s)) for s in shifts])


def fit_length(noise: NoiseCapture, length: int, seed: int) -> NoiseCapture:
    """Crop or loop noise to ``length`` samples starting at a seeded circular offset."""
    n = len(noise.outer)
    if n == 0:
        raise ValueError("noise is empty")
    offset = int(np.random.default_rng(seed).integers(n))
    idx = (offset + np.arange(length)) % n
    return NoiseCapture(noise.outer[idx], noise.inear[idx])


def power(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.mean(x * x))


def snr_gain(speech_outer, noise_outer, snr_db: float) -> float:
    """Noise gain that sets the outer-microphone SNR to ``snr_db``."""
    p_s = power(speech_outer)
    p_v = power(noise_outer)
    if p_v == 0:
        raise ValueError("noise has zero power at the outer microphone")
    if p_s == 0:
        raise ValueError("speech has zero power at the outer microphone")
    return float(np.sqrt(p_s / (p_v * 10.0 ** (snr_db / 10.0))))


def mix_at_snr(own_outer, own_inear, noise: NoiseCapture, spec: MixSpec):
    """Noisy (outer, in-ear) pair with the noise scaled to ``spec.snr_db`` at the outer mic."""
    own_outer = np.asarray(own_outer, dtype=float)
    own_inear = np.asarray(own_inear, dtype=float)
    if own_outer.shape != own_inear.shape:
        raise ValueError("own-voice channels must have equal length")
    if len(noise.outer) != len(own_outer):
        noise = fit_length(noise, len(own_outer), spec.seed)
    g = snr_gain(own_outer, noise.outer, spec.snr_db)
    return own_outer + g * noise.outer, own_inear + g * noise.inear


def measure_snr(signal, noise) -> float:
    signal = np.asarray(signal, dtype=float)
    noise = np.asarray(noise, dtype=float)
    if signal.shape != noise.shape:
        raise ValueError("signal and noise must have equal length")
    p_v = np.sum(noise * noise)
    if p_v == 0:
        raise ValueError("noise has zero power")
    return float(10.0 * np.log10(np.sum(signal * signal) / p_v))


def random_irset(seed: int, taps: int = 64, inear_gain: float = 0.15) -> IrSet:
    """Synthetic sparse-FIR IR set for tests and demos.

    Each direction gets a direction-dependent delay and a few random sparse
    reflections.  The in-ear IRs are attenuated and low-passed copies,
    mimicking ear-canal occlusion.
    """
    rng = np.random.default_rng(seed)
    outer = np.zeros((NUM_DIRECTIONS, taps))
    inear = np.zeros((NUM_DIRECTIONS, taps))
    smoother = np.hanning(9)
    smoother /= smoother.sum()
    for d in range(NUM_DIRECTIONS):
        delay = 2 + int(round(4 * (1 - np.cos(np.pi * d / 4))))
        outer[d, delay] = 1.0 - 0.3 * (d == 4)
        taps_idx = rng.choice(np.arange(delay + 1, taps), size=4, replace=False)
        outer[d, taps_idx] = rng.normal(scale=0.2, size=4)
        inear[d] = inear_gain * np.convolve(outer[d], smoother)[:taps]
    return IrSet(outer, inear)


def save_irset(directory, irs: IrSet) -> None:
    directory = Path(directory)
    for d in range(NUM_DIRECTIONS):
        write_wav(directory / f"dir{d}_outer.wav", irs.outer[d], irs.sample_rate_hz)
        write_wav(directory / f"dir{d}_inear.wav", irs.inear[d], irs.sample_rate_hz)


def load_irset(directory, sample_rate: int = SAMPLE_RATE) -> IrSet:
    directory = Path(directory)
    pairs = []
    for d in range(NUM_DIRECTIONS):
        pair = []
        for name in ("outer", "inear"):
            path = directory / f"dir{d}_{name}.wav"
            if not path.exists():
                raise DataError(f"IR set {directory} is missing {path.name}")
            pair.append(read_wav(path, sample_rate))
        if len(pair[0]) != len(pair[1]):
            raise DataError(f"IR pair for direction {d} in {directory} has unequal lengths")
        pairs.append(pair)
    # directions may differ in length; zero-pad to the longest
    taps = max(len(p[0]) for p in pairs)
    outer = np.zeros((NUM_DIRECTIONS, taps))
    inear = np.zeros((NUM_DIRECTIONS, taps))
    for d, (o, i) in enumerate(pairs):
        outer[d, : len(o)] = o
        inear[d, : len(i)] = i
    return IrSet(outer, inear, sample_rate)
