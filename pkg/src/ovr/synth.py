"""Synthetic speech-like signals, talker RTF tables and toy datasets.

Stand-ins for the recorded corpora: phoneme-labeled harmonic/noise segments
with formant envelopes, and in-ear RTFs with a low-frequency boost and a
high-frequency roll-off that vary per phoneme.
"""
from __future__ import annotations

import numpy as np

from .augment import RtfTable
from .stft import StftConfig

SR = 16000

# name -> (voiced, formant centers in Hz)
PHONEMES = {
    "a": (True, (800, 1200, 2500)),
    "e": (True, (450, 2000, 2600)),
    "i": (True, (300, 2300, 3000)),
    "o": (True, (500, 850, 2500)),
    "u": (True, (320, 800, 2300)),
    "m": (True, (250, 1200, 2200)),
    "n": (True, (250, 1600, 2600)),
    "l": (True, (360, 1300, 2800)),
    "s": (False, (4500, 6000, 7500)),
    "f": (False, (1500, 4000, 6500)),
    "sh": (False, (2500, 3500, 5000)),
}


def _envelope(freqs, formants, bandwidth=120.0):
    env = np.zeros_like(freqs, dtype=float)
    for n, fc in enumerate(formants):
        env += (0.6**n) / (1.0 + ((freqs - fc) / (bandwidth * (1 + n))) ** 2)
    return env


def speech_like(rng: np.random.Generator, duration_s: float, f0: float = 140.0, sr: int = SR,
                silence_prob: float = 0.15):
    """Phoneme-labeled synthetic utterance.

    Returns ``(signal, intervals)`` where intervals are ``(start, end, phoneme)``
    in seconds; gaps between intervals are silence.  Peak level is about 0.5.
    """
    n = int(round(duration_s * sr))
    t = np.arange(n) / sr
    f0_track = f0 * (1.0 + 0.06 * np.sin(2 * np.pi * rng.uniform(2, 5) * t + rng.uniform(0, 6.28)))
    phase = 2 * np.pi * np.cumsum(f0_track) / sr
    x = np.zeros(n)
    intervals = []
    names = list(PHONEMES)
    pos = 0
    while pos < n:
        seg = int(rng.uniform(0.06, 0.2) * sr)
        end = min(n, pos + seg)
        if end - pos < 32:
            break
        if rng.uniform() < silence_prob:
            pos = end
            continue
        name = names[int(rng.integers(len(names)))]
        voiced, formants = PHONEMES[name]
        idx = slice(pos, end)
        if voiced:
            harmonics = np.arange(1, int(7000 // f0))
            amps = _envelope(harmonics * f0, formants)
            part = (amps[:, None] * np.cos(harmonics[:, None] * phase[idx][None, :])).sum(axis=0)
        else:
            white = rng.normal(size=end - pos)
            spec = np.fft.rfft(white)
            spec *= _envelope(np.fft.rfftfreq(end - pos, 1 / sr), formants, bandwidth=600.0)
            part = np.fft.irfft(spec, n=end - pos) * 4.0
        fade = np.minimum(1.0, np.minimum(np.arange(end - pos), np.arange(end - pos)[::-1]) / (0.01 * sr))
        x[idx] = part * fade * rng.uniform(0.6, 1.0)
        intervals.append((pos / sr, end / sr, name))
        pos = end
    peak = np.max(np.abs(x))
    if peak > 0:
        x *= 0.5 / peak
    return x, intervals


def talker_table(rng: np.random.Generator, phonemes=None, config: StftConfig = StftConfig(),
                 talker_id: str = "") -> RtfTable:
    """Plausible in-ear RTFs: boost below ~1 kHz, roll-off above ~2 kHz, small delay,
    and a smooth random phoneme-dependent deviation."""
    phonemes = list(PHONEMES) if phonemes is None else list(phonemes)
    f = np.arange(config.num_bins) * config.sample_rate_hz / config.frame_len
    boost = 1.0 + rng.uniform(1.0, 2.0) / (1.0 + (f / 700.0) ** 2)
    lowpass = 1.0 / (1.0 + (f / rng.uniform(1800, 2400)) ** 4)
    delay = np.exp(-2j * np.pi * f * rng.uniform(0.5, 2.0) / config.sample_rate_hz)
    base = boost * lowpass * delay
    knots = np.linspace(0, config.num_bins - 1, 8)
    rtfs = {}
    for p in phonemes:
        dev = 1.0 + np.interp(np.arange(config.num_bins), knots, rng.normal(scale=0.15, size=8))
        rot = np.exp(1j * np.interp(np.arange(config.num_bins), knots, rng.normal(scale=0.2, size=8)))
        rtfs[p] = base * dev * rot
    fallback = np.mean(list(rtfs.values()), axis=0) if rtfs else base
    return RtfTable(fallback=fallback, rtfs=rtfs, talker_id=talker_id)


def random_table(rng: np.random.Generator, num_phonemes: int, num_bins: int, talker_id: str = "") -> RtfTable:
    """Unstructured random complex RTFs (for estimator round-trip checks)."""
    def draw():
        return rng.normal(size=num_bins) + 1j * rng.normal(size=num_bins)

    rtfs = {f"p{j:02d}": draw() for j in range(num_phonemes)}
    return RtfTable(fallback=draw(), rtfs=rtfs, talker_id=talker_id)


def colored_noise(rng: np.random.Generator, n: int, exponent: float = 1.0, sr: int = SR) -> np.ndarray:
    """Unit-RMS noise with a 1/f**exponent power spectrum."""
    spec = np.fft.rfft(rng.normal(size=n))
    f = np.fft.rfftfreq(n, 1 / sr)
    spec[1:] /= f[1:] ** (exponent / 2)
    spec[0] = 0
    x = np.fft.irfft(spec, n=n)
    return x / np.sqrt(np.mean(x**2))


def two_talker_dataset(seed: int = 0, n_train: int = 32, n_val: int = 16, seconds: float = 1.0,
                       snr_range=(0.0, 25.0), irs_seed: int = 1):
    """Synthetic two-talker micro-dataset: ``(train, val)`` mixing datasets.

    Clean utterances are turned into (outer, in-ear) pairs with two talkers'
    RTF tables; noise is three colored sources (white, pink, brown) at fixed
    directions of a synthetic IR set.
    """
    from .augment import augment_utterance, choose_table
    from .mixer import random_irset, spatialize
    from .train import MixingDataset

    rng = np.random.default_rng(seed)
    tables = [talker_table(rng, talker_id=f"talker{i}") for i in range(2)]
    n = int(round(seconds * SR))

    def pairs(count):
        out = []
        for _ in range(count):
            x, intervals = speech_like(rng, seconds, f0=rng.uniform(100, 220))
            out.append(augment_utterance(x, intervals, choose_table(tables, rng)))
        return out

    irs = random_irset(irs_seed)
    noise = [spatialize(colored_noise(rng, 2 * n, e), irs, "point", d) for e, d in ((0, 1), (1, 3), (2, 5))]
    train = MixingDataset(pairs(n_train), noise, n, seed=seed + 1, snr_range=tuple(snr_range))
    val = MixingDataset(pairs(n_val), noise, n, seed=seed + 2, snr_range=tuple(snr_range))
    return train, val
