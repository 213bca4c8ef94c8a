"""WAV, JSON Lines and atomic-write helpers shared by the CLI and loaders."""
from __future__ import annotations

import json
import os
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np
from scipy.io import wavfile

SAMPLE_RATE = 16000


class DataError(Exception):
    """Unreadable or inconsistent input data (files, manifests, tables)."""


def read_wav(path, expected_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Read a WAV file as float64.

    Mono files give shape ``(N,)``; multichannel files give ``(C, N)``.
    16-bit PCM is scaled to [-1, 1).  A sample rate other than
    ``expected_rate`` is an error (no resampling).
    """
    try:
        rate, data = wavfile.read(path)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read WAV file {path}: {exc}") from exc
    if rate != expected_rate:
        raise DataError(f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz")
    if data.dtype == np.int16:
        data = data / 32768.0
    elif data.dtype == np.float32 or data.dtype == np.float64:
        data = data.astype(np.float64)
    else:
        raise DataError(f"{path}: unsupported sample format {data.dtype}")
    if data.ndim == 2:
        data = data.T.copy()
    return data


def write_wav(path, x, rate: int = SAMPLE_RATE, fmt: str = "float32") -> None:
    """Write mono ``(N,)`` or multichannel ``(C, N)`` audio atomically.

    ``fmt`` is ``"float32"`` (IEEE float) or ``"pcm16"``.
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("refusing to write non-finite samples")
    if x.ndim == 2:
        x = x.T
    if fmt == "float32":
        data = x.astype(np.float32)
    elif fmt == "pcm16":
        data = np.clip(np.round(x * 32768.0), -32768, 32767).astype(np.int16)
    else:
        raise ValueError(f"unknown WAV format {fmt!r}")
    with atomic_path(path) as tmp:
        wavfile.write(tmp, rate, data)


@contextmanager
def atomic_path(path):
    """Yield a temporary path next to ``path``; rename it into place on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        yield tmp
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_text(path, text: str) -> None:
    with atomic_path(path) as tmp:
        Path(tmp).write_text(text)


def write_json(path, obj) -> None:
    write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_jsonl(path) -> list[dict]:
    rows = []
    try:
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    rows.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    return rows


def write_jsonl(path, rows) -> None:
    write_text(path, "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows))
