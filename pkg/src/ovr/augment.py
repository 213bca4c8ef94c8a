"""Phoneme-dependent own-voice augmentation.

Per-phoneme relative transfer functions (outer -> in-ear) are estimated from
noise-free paired recordings of a talker.  In-ear own voice for new clean
speech is then simulated frame by frame from the phoneme label of each frame,
with one-pole smoothing of the RTF sequence across frames.
"""
from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.signal import lfilter

from .fileio import DataError, atomic_path, read_jsonl, write_jsonl
from .stft import StftConfig, analyze, frame_times, synthesize

SILENCE = "sil"
FALLBACK_KEY = "*"


class Interval(NamedTuple):
    start: float
    end: float
    phoneme: str


def validate_intervals(intervals, duration: float | None = None) -> list[Interval]:
    out = []
    for item in intervals:
        iv = Interval(float(item[0]), float(item[1]), str(item[2]))
        if not (0.0 <= iv.start < iv.end):
            raise ValueError(f"invalid interval {iv}")
        if duration is not None and iv.end > duration + 1e-9:
            raise ValueError(f"interval {iv} extends past signal end ({duration:.3f} s)")
        out.append(iv)
    return out


def read_intervals(path) -> list[Interval]:
    """Read phoneme intervals from JSON Lines ``{"start", "end", "phoneme"}``."""
    try:
        return validate_intervals((r["start"], r["end"], r["phoneme"]) for r in read_jsonl(path))
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: bad interval record ({exc})") from exc


def write_intervals(path, intervals) -> None:
    write_jsonl(path, [{"start": s, "end": e, "phoneme": p} for s, e, p in intervals])


def intervals_to_track(intervals, num_frames: int, config: StftConfig = StftConfig()) -> list[str]:
    """Label every frame with the phoneme covering its center time.

    Uncovered frames get ``"sil"``.  Where intervals overlap, the one that
    starts later wins.
    """
    times = frame_times(num_frames, config)
    labels = np.full(num_frames, SILENCE, dtype=object)
    for start, end, phoneme in sorted(validate_intervals(intervals), key=lambda iv: iv.start):
        labels[(times >= start) & (times < end)] = phoneme
    return list(labels)


@dataclass(frozen=True)
class SmoothingConfig:
    alpha: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError(f"smoothing alpha must be in [0, 1), got {self.alpha}")


@dataclass(frozen=True)
class RtfTable:
    """Per-phoneme complex RTFs for one talker plus a global fallback."""

    fallback: np.ndarray
    rtfs: dict = field(default_factory=dict)
    talker_id: str = ""

    def __post_init__(self):
        fb = np.asarray(self.fallback, dtype=complex)
        object.__setattr__(self, "fallback", fb)
        rtfs = {str(p): np.asarray(h, dtype=complex) for p, h in self.rtfs.items()}
        object.__setattr__(self, "rtfs", rtfs)
        for p, h in rtfs.items():
            if h.shape != fb.shape:
                raise ValueError(f"RTF for {p!r} has shape {h.shape}, expected {fb.shape}")
        if not all(np.all(np.isfinite(h)) for h in [fb, *rtfs.values()]):
            raise ValueError("RTF table contains non-finite values")

    @property
    def num_bins(self) -> int:
        return self.fallback.shape[0]

    @property
    def phonemes(self) -> list[str]:
        return sorted(self.rtfs)

    def lookup(self, phoneme: str) -> np.ndarray:
        return self.rtfs.get(phoneme, self.fallback)

    def per_frame(self, track: Sequence[str]) -> np.ndarray:
        """RTF for every frame of ``track`` as a ``(K, L)`` array."""
        if len(track) == 0:
            return np.zeros((self.num_bins, 0), dtype=complex)
        return np.stack([self.lookup(p) for p in track], axis=1)


def estimate_rtfs(outer, inear, track, min_frames: int = 5, talker_id: str = "") -> RtfTable:
    """Least-squares RTF per phoneme from noise-free outer/in-ear spectrograms.

    For every phoneme seen in at least ``min_frames`` frames the RTF is the
    cross-spectrum over the outer auto-spectrum, accumulated over that
    phoneme's frames.  The fallback uses all frames.  Silence frames only
    contribute to the fallback.
    """
    outer = np.asarray(outer)
    inear = np.asarray(inear)
    if outer.shape != inear.shape or outer.ndim != 2:
        raise ValueError(f"spectrogram shapes differ: {outer.shape} vs {inear.shape}")
    if len(track) != outer.shape[1]:
        raise ValueError(f"track has {len(track)} labels for {outer.shape[1]} frames")
    cross = inear * np.conj(outer)
    auto = np.abs(outer) ** 2

    total_auto = auto.sum(axis=1)
    if not np.any(total_auto > 0):
        raise ValueError("outer spectrogram is silent; cannot estimate RTFs")
    fallback = np.zeros(outer.shape[0], dtype=complex)
    nz = total_auto > 0
    fallback[nz] = cross.sum(axis=1)[nz] / total_auto[nz]

    labels = np.asarray(track, dtype=object)
    rtfs = {}
    for p in sorted(set(track) - {SILENCE}):
        sel = labels == p
        if sel.sum() < min_frames:
            continue
        den = auto[:, sel].sum(axis=1)
        h = fallback.copy()
        ok = den > 0
        h[ok] = cross[:, sel].sum(axis=1)[ok] / den[ok]
        rtfs[p] = h
    return RtfTable(fallback=fallback, rtfs=rtfs, talker_id=talker_id)


def smooth_rtfs(per_frame: np.ndarray, smoothing: SmoothingConfig) -> np.ndarray:
    """One-pole smoothing along frames, started from the first frame's RTF."""
    a = smoothing.alpha
    if a == 0.0 or per_frame.shape[1] == 0:
        return per_frame
    zi = a * per_frame[:, :1]
    out, _ = lfilter([1.0 - a], [1.0, -a], per_frame, axis=1, zi=zi)
    return out


def simulate_inear(outer, track, table: RtfTable, smoothing: SmoothingConfig = SmoothingConfig()):
    """Simulated in-ear spectrogram: smoothed per-frame RTF times the outer spectrogram."""
    outer = np.asarray(outer)
    if len(track) != outer.shape[-1]:
        raise ValueError(f"track has {len(track)} labels for {outer.shape[-1]} frames")
    if outer.shape[-2] != table.num_bins:
        raise ValueError(f"table has {table.num_bins} bins, spectrogram {outer.shape[-2]}")
    return smooth_rtfs(table.per_frame(track), smoothing) * outer


def augment_utterance(
    clean_speech,
    intervals,
    table: RtfTable,
    smoothing: SmoothingConfig = SmoothingConfig(),
    config: StftConfig = StftConfig(),
    sample_rate: int | None = None,
):
    """Turn clean speech into an (outer, in-ear) own-voice training pair."""
    clean = np.asarray(clean_speech, dtype=float)
    spec = analyze(clean, config, sample_rate=sample_rate)
    track = intervals_to_track(intervals, spec.shape[-1], config)
    inear = synthesize(simulate_inear(spec, track, table, smoothing), config, length=clean.shape[-1])
    return clean.copy(), inear


def choose_table(tables: Sequence[RtfTable], rng: np.random.Generator) -> RtfTable:
    """Uniform random talker table."""
    if not tables:
        raise ValueError("no RTF tables to choose from")
    return tables[int(rng.integers(len(tables)))]


def _encode(h: np.ndarray) -> str:
    inter = np.empty(2 * h.shape[0], dtype="<f4")
    inter[0::2] = h.real
    inter[1::2] = h.imag
    return base64.b64encode(inter.tobytes()).decode("ascii")


def _decode(text: str, num_bins: int) -> np.ndarray:
    raw = np.frombuffer(base64.b64decode(text), dtype="<f4")
    if raw.shape[0] != 2 * num_bins:
        raise DataError(f"RTF payload has {raw.shape[0] // 2} bins, expected {num_bins}")
    return raw[0::2].astype(float) + 1j * raw[1::2].astype(float)


def save_rtf_table(path, table: RtfTable) -> None:
    """JSON file with base64 little-endian float32 (re, im) pairs per phoneme."""
    names = table.phonemes + [FALLBACK_KEY]
    doc = {
        "talker_id": table.talker_id,
        "K": table.num_bins,
        "phonemes": names,
        "data": {p: _encode(table.lookup(p) if p != FALLBACK_KEY else table.fallback) for p in names},
    }
    with atomic_path(path) as tmp:
        with open(tmp, "w") as fh:
            json.dump(doc, fh, indent=1)


def load_rtf_table(path) -> RtfTable:
    try:
        with open(path) as fh:
            doc = json.load(fh)
        k = int(doc["K"])
        data = {p: _decode(doc["data"][p], k) for p in doc["phonemes"]}
        fallback = data.pop(FALLBACK_KEY)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise DataError(f"cannot load RTF table {path}: {exc}") from exc
    return RtfTable(fallback=fallback, rtfs=data, talker_id=doc.get("talker_id", ""))
