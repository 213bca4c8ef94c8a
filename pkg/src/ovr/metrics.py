"""Log-spectral distance and the SNR-grid evaluation harness.

The clean own voice at the outer microphone is the reference for every score.
"""
from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .fileio import DataError, atomic_path, read_wav
from .mixer import IrSet, MixSpec, NoiseCapture, diffuse_sources, mix_at_snr, spatialize
from .model import ModelConfig, infer_utterance
from .stft import StftConfig, analyze

EVAL_SNRS_DB = (-10.0, -5.0, 0.0, 5.0, 10.0)


def lsd(reference, estimate, stft: StftConfig = StftConfig(), eps: float = 1e-8) -> float:
    """Log-spectral distance in dB.

    Per frame, the RMS over bins of the difference of ``20*log10(|X| + eps)``
    spectra; then the mean over frames.
    """
    reference = np.asarray(reference, dtype=float)
    estimate = np.asarray(estimate, dtype=float)
    if reference.shape != estimate.shape:
        raise ValueError(f"length mismatch: {reference.shape} vs {estimate.shape}")
    ref = 20.0 * np.log10(np.abs(analyze(reference, stft)) + eps)
    est = 20.0 * np.log10(np.abs(analyze(estimate, stft)) + eps)
    per_frame = np.sqrt(np.mean((ref - est) ** 2, axis=-2))
    return float(np.mean(per_frame))


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)
    errors: list = field(default_factory=list)

    @property
    def mean_lsd(self) -> float:
        """Mean over the test set and over SNR."""
        return float(np.mean([r["lsd_db"] for r in self.rows])) if self.rows else float("nan")

    def per_snr(self) -> dict:
        out = {}
        for r in self.rows:
            out.setdefault(r["snr_db"], []).append(r["lsd_db"])
        return {snr: float(np.mean(v)) for snr, v in sorted(out.items())}

    def per_utterance(self) -> dict:
        out = {}
        for r in self.rows:
            out.setdefault(r["utterance_id"], []).append(r["lsd_db"])
        return {u: float(np.mean(v)) for u, v in out.items()}

    def to_dict(self) -> dict:
        return {
            "rows": self.rows,
            "per_snr": {str(k): v for k, v in self.per_snr().items()},
            "per_utterance": self.per_utterance(),
            "mean_lsd_db": self.mean_lsd,
            "errors": self.errors,
            # reserved for external PESQ / ESTOI scorers
            "pesq": None,
            "estoi": None,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=["utterance_id", "snr_db", "lsd_db"], lineterminator="\n")
        writer.writeheader()
        writer.writerows(self.rows)
        return buf.getvalue()

    def save(self, json_path=None, csv_path=None) -> None:
        if json_path is not None:
            with atomic_path(json_path) as tmp:
                with open(tmp, "w") as fh:
                    json.dump(self.to_dict(), fh, indent=2)
        if csv_path is not None:
            with atomic_path(csv_path) as tmp:
                with open(tmp, "w") as fh:
                    fh.write(self.to_csv())


def model_enhancer(config: ModelConfig, weights: dict, stft: StftConfig = StftConfig()) -> Callable:
    def enhance(noisy_outer, noisy_inear):
        return infer_utterance(noisy_outer, noisy_inear, config, weights, stft)

    return enhance


def _load_item(item, irs: IrSet | None, sample_rate: int):
    speech = item["speech"]
    outer, inear = (read_wav(p, sample_rate) if isinstance(p, str) else np.asarray(p, dtype=float) for p in speech)
    noise = item["noise"]
    if isinstance(noise, NoiseCapture):
        return outer, inear, noise
    if isinstance(noise, str):
        noise = read_wav(noise, sample_rate)
    noise = np.asarray(noise, dtype=float)
    if irs is None:
        raise DataError("an IR set is required to spatialize mono noise")
    mode = item.get("mode", "point")
    if mode == "diffuse":
        return outer, inear, spatialize(diffuse_sources(noise, item.get("seed", 0)), irs, "diffuse")
    return outer, inear, spatialize(noise, irs, "point", item.get("direction", 0))


def _score_item(enhance, n, item, snrs, irs, stft):
    uid = str(item.get("id", n))
    try:
        outer, inear, noise = _load_item(item, irs, stft.sample_rate_hz)
        rows = []
        for snr in snrs:
            spec = MixSpec(float(snr), mode=item.get("mode", "point"),
                           direction=item.get("direction", 0), seed=int(item.get("seed", 0)))
            y_o, y_i = mix_at_snr(outer, inear, noise, spec)
            estimate = enhance(y_o, y_i)
            rows.append({"utterance_id": uid, "snr_db": float(snr), "lsd_db": lsd(outer, estimate, stft)})
        return rows, None
    except (DataError, ValueError, KeyError, OSError) as exc:
        return [], {"utterance_id": uid, "error": str(exc)}


def evaluate_grid(enhance: Callable, items, snrs=EVAL_SNRS_DB, irs: IrSet | None = None,
                  stft: StftConfig = StftConfig(), jobs: int = 1) -> EvalReport:
    """Score ``enhance(noisy_outer, noisy_inear)`` on every utterance at every SNR.

    ``items`` are dicts with ``id``, ``speech`` (outer, in-ear pair of arrays or
    WAV paths), ``noise`` (a :class:`NoiseCapture`, or mono array/path that is
    spatialized with ``irs``), and optional ``mode``, ``direction``, ``seed``.
    Failing items are recorded in ``errors`` and skipped.  With ``jobs > 1``
    utterances are scored on a thread pool; rows keep the input order.
    """
    items = list(items)

    def score(pair):
        return _score_item(enhance, pair[0], pair[1], snrs, irs, stft)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(score, enumerate(items)))
    else:
        results = [score(pair) for pair in enumerate(items)]
    report = EvalReport()
    for rows, error in results:
        report.rows.extend(rows)
        if error is not None:
            report.errors.append(error)
    return report
