"""FT-JNF complex-mask estimator for an outer + in-ear microphone hearable.

A frequency-direction LSTM scans the bins of each frame (state reset every
frame), a causal time-direction LSTM scans the frames of each bin, and a dense
layer with tanh emits the real and imaginary parts of one complex mask per
microphone.  The own-voice estimate is the sum of masked microphone spectra.

Noisy input is a complex array shaped ``(..., M, K, L)`` with microphones
ordered (outer, in-ear).  A one-microphone model takes the in-ear channel only.
Weights are a plain ``dict`` of float arrays keyed by :data:`WEIGHT_NAMES`;
LSTM gates are stacked in the order (input, forget, cell, output).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .fileio import DataError, atomic_path
from .stft import ConfigError, StftConfig, analyze, synthesize

PRESETS = {
    "XL": (512, 128),
    "L": (256, 128),
    "M": (64, 128),
    "S": (64, 32),
    "XS": (32, 32),
}

WEIGHT_NAMES = (
    "f_lstm.W_ih",
    "f_lstm.W_hh",
    "f_lstm.b_ih",
    "f_lstm.b_hh",
    "t_lstm.W_ih",
    "t_lstm.W_hh",
    "t_lstm.b_ih",
    "t_lstm.b_hh",
    "dense.W",
    "dense.b",
)


@dataclass(frozen=True)
class ModelConfig:
    h_f: int
    h_t: int
    num_mics: int = 2
    num_bins: int = 257

    def __post_init__(self):
        if self.h_f < 1 or self.h_t < 1:
            raise ConfigError(f"hidden sizes must be >= 1, got ({self.h_f}, {self.h_t})")
        if self.num_mics not in (1, 2):
            raise ConfigError(f"num_mics must be 1 or 2, got {self.num_mics}")
        if self.num_bins < 0:
            raise ConfigError(f"num_bins must be >= 0, got {self.num_bins}")

    @classmethod
    def from_preset(cls, name: str, num_mics: int = 2, num_bins: int = 257) -> "ModelConfig":
        try:
            h_f, h_t = PRESETS[name.upper()]
        except KeyError:
            raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
        return cls(h_f, h_t, num_mics, num_bins)

    @property
    def features(self) -> int:
        return 2 * self.num_mics


def weight_shapes(config: ModelConfig) -> dict:
    hf, ht, d = config.h_f, config.h_t, config.features
    return {
        "f_lstm.W_ih": (4 * hf, d),
        "f_lstm.W_hh": (4 * hf, hf),
        "f_lstm.b_ih": (4 * hf,),
        "f_lstm.b_hh": (4 * hf,),
        "t_lstm.W_ih": (4 * ht, hf),
        "t_lstm.W_hh": (4 * ht, ht),
        "t_lstm.b_ih": (4 * ht,),
        "t_lstm.b_hh": (4 * ht,),
        "dense.W": (d, ht),
        "dense.b": (d,),
    }


def check_weights(config: ModelConfig, weights: dict) -> None:
    for name, shape in weight_shapes(config).items():
        if name not in weights:
            raise ValueError(f"missing weight tensor {name!r}")
        if np.shape(weights[name]) != shape:
            raise ValueError(f"{name} has shape {np.shape(weights[name])}, expected {shape}")


def config_from_weights(weights: dict, num_bins: int = 257) -> ModelConfig:
    h_f = np.shape(weights["f_lstm.W_hh"])[1]
    h_t = np.shape(weights["t_lstm.W_hh"])[1]
    num_mics = np.shape(weights["f_lstm.W_ih"])[1] // 2
    config = ModelConfig(h_f, h_t, num_mics, num_bins)
    check_weights(config, weights)
    return config


def zero_weights(config: ModelConfig) -> dict:
    return {name: np.zeros(shape) for name, shape in weight_shapes(config).items()}


def init_weights(config: ModelConfig, seed: int = 0) -> dict:
    """Uniform(-1/sqrt(h), 1/sqrt(h)) per layer, plus 1 on the forget-gate bias."""
    rng = np.random.default_rng(seed)
    weights = {}
    for name, shape in weight_shapes(config).items():
        fan = {"f_lstm": config.h_f, "t_lstm": config.h_t, "dense": config.h_t}[name.split(".")[0]]
        bound = 1.0 / np.sqrt(fan)
        weights[name] = rng.uniform(-bound, bound, size=shape)
    weights["f_lstm.b_ih"][config.h_f : 2 * config.h_f] += 1.0
    weights["t_lstm.b_ih"][config.h_t : 2 * config.h_t] += 1.0
    return weights


# --------------------------------------------------------------------------- LSTM


def lstm_cell_step(x, state, W_ih, W_hh, b_ih, b_hh):
    """One LSTM step; ``x`` is ``(D,)`` or ``(B, D)`` and ``state`` is ``(h, c)``."""
    h, c = state
    hidden = W_hh.shape[1]
    if np.shape(x)[-1] != W_ih.shape[1] or np.shape(h)[-1] != hidden or np.shape(c) != np.shape(h):
        raise ValueError("LSTM input/state shapes do not match the weights")
    z = x @ W_ih.T + h @ W_hh.T + b_ih + b_hh
    i = expit(z[..., :hidden])
    f = expit(z[..., hidden : 2 * hidden])
    g = np.tanh(z[..., 2 * hidden : 3 * hidden])
    o = expit(z[..., 3 * hidden :])
    c_new = f * c + i * g
    return o * np.tanh(c_new), c_new


def lstm_forward(x, W_ih, W_hh, b_ih, b_hh, h0=None, c0=None):
    """Run an LSTM over axis 0 of ``x`` with shape ``(T, B, D)``.

    Returns hidden states ``(T, B, H)``, the final ``(h, c)`` and a cache for
    :func:`lstm_backward`.
    """
    steps, batch, _ = x.shape
    hidden = W_hh.shape[1]
    h = np.zeros((batch, hidden)) if h0 is None else h0
    c = np.zeros((batch, hidden)) if c0 is None else c0
    h_init, c_init = h, c
    proj = x @ W_ih.T + (b_ih + b_hh)
    W_hh_t = W_hh.T
    hs = np.empty((steps, batch, hidden))
    cs = np.empty((steps, batch, hidden))
    acts = np.empty((steps, batch, 4 * hidden))
    for t in range(steps):
        z = proj[t] + h @ W_hh_t
        a = acts[t]
        a[:, : 2 * hidden] = expit(z[:, : 2 * hidden])
        a[:, 2 * hidden : 3 * hidden] = np.tanh(z[:, 2 * hidden : 3 * hidden])
        a[:, 3 * hidden :] = expit(z[:, 3 * hidden :])
        c = a[:, hidden : 2 * hidden] * c + a[:, :hidden] * a[:, 2 * hidden : 3 * hidden]
        h = a[:, 3 * hidden :] * np.tanh(c)
        hs[t] = h
        cs[t] = c
    cache = (x, h_init, c_init, acts, cs, hs, W_ih, W_hh)
    return hs, (h, c), cache


def lstm_backward(dhs, cache):
    """Backpropagation through time for :func:`lstm_forward`.

    Returns ``(dx, dW_ih, dW_hh, db)``; ``db`` applies to both bias vectors.
    """
    x, h0, c0, acts, cs, hs, W_ih, W_hh = cache
    steps, batch, hidden = hs.shape
    dz = np.empty_like(acts)
    dh_next = np.zeros((batch, hidden))
    dc_next = np.zeros((batch, hidden))
    for t in range(steps - 1, -1, -1):
        a = acts[t]
        i = a[:, :hidden]
        f = a[:, hidden : 2 * hidden]
        g = a[:, 2 * hidden : 3 * hidden]
        o = a[:, 3 * hidden :]
        c_prev = cs[t - 1] if t > 0 else c0
        tc = np.tanh(cs[t])
        dh = dhs[t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        d = dz[t]
        d[:, :hidden] = dc * g * i * (1.0 - i)
        d[:, hidden : 2 * hidden] = dc * c_prev * f * (1.0 - f)
        d[:, 2 * hidden : 3 * hidden] = dc * i * (1.0 - g * g)
        d[:, 3 * hidden :] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        dh_next = d @ W_hh
    h_prev = np.concatenate([h0[None], hs[:-1]], axis=0)
    dz2 = dz.reshape(steps * batch, -1)
    dW_ih = dz2.T @ x.reshape(steps * batch, -1)
    dW_hh = dz2.T @ h_prev.reshape(steps * batch, -1)
    db = dz2.sum(axis=0)
    dx = dz @ W_ih
    return dx, dW_ih, dW_hh, db


# --------------------------------------------------------------------------- network


def _as_noisy(noisy, config: ModelConfig) -> np.ndarray:
    noisy = np.asarray(noisy)
    if noisy.ndim < 3:
        raise ValueError(f"noisy input must be (..., M, K, L), got shape {noisy.shape}")
    if noisy.shape[-3] != config.num_mics or noisy.shape[-2] != config.num_bins:
        raise ValueError(
            f"noisy input shape {noisy.shape} does not match {config.num_mics} mics x "
            f"{config.num_bins} bins"
        )
    if not np.all(np.isfinite(noisy)):
        raise ValueError("noisy input contains NaN or Inf")
    return noisy


def _features(noisy: np.ndarray) -> np.ndarray:
    # (B, M, K, L) complex -> (B, L, K, 2M) as [re_0, im_0, re_1, im_1]
    x = np.stack([noisy.real, noisy.imag], axis=2)  # (B, M, 2, K, L)
    b, m, _, k, l = x.shape
    return x.reshape(b, 2 * m, k, l).transpose(0, 3, 2, 1)


def _masks_from_output(out: np.ndarray) -> np.ndarray:
    # (B, L, K, 2M) -> (B, M, K, L) complex
    masks = out[..., 0::2] + 1j * out[..., 1::2]
    return masks.transpose(0, 3, 2, 1)


def forward(noisy, config: ModelConfig, weights: dict, return_cache: bool = False):
    """Complex masks ``(..., M, K, L)`` for noisy spectra ``(..., M, K, L)``."""
    check_weights(config, weights)
    noisy = _as_noisy(noisy, config)
    lead = noisy.shape[:-3]
    noisy = noisy.reshape((-1,) + noisy.shape[-3:])
    batch, _, n_bins, n_frames = noisy.shape
    w = weights

    x = _features(noisy)  # (B, L, K, D)
    xf = x.transpose(2, 0, 1, 3).reshape(n_bins, batch * n_frames, -1)
    hf, _, cache_f = lstm_forward(xf, w["f_lstm.W_ih"], w["f_lstm.W_hh"], w["f_lstm.b_ih"], w["f_lstm.b_hh"])
    xt = hf.reshape(n_bins, batch, n_frames, -1).transpose(2, 1, 0, 3).reshape(n_frames, batch * n_bins, -1)
    ht, _, cache_t = lstm_forward(xt, w["t_lstm.W_ih"], w["t_lstm.W_hh"], w["t_lstm.b_ih"], w["t_lstm.b_hh"])
    out = np.tanh(ht @ w["dense.W"].T + w["dense.b"])  # (L, B*K, D)
    out = out.reshape(n_frames, batch, n_bins, -1).transpose(1, 0, 2, 3)
    masks = _masks_from_output(out)
    masks = masks.reshape(lead + masks.shape[1:])
    if return_cache:
        return masks, (noisy.shape, ht, out, cache_f, cache_t)
    return masks


def forward_backward_masks(grad_masks, config: ModelConfig, weights: dict, cache) -> dict:
    """Weight gradients given ``dL/dRe(M) + 1j*dL/dIm(M)`` for masks from :func:`forward`."""
    shape, ht, out, cache_f, cache_t = cache
    batch, _, n_bins, n_frames = shape
    grad_masks = np.asarray(grad_masks).reshape(shape)
    g = grad_masks.transpose(0, 3, 2, 1)  # (B, L, K, M)
    d_out = np.empty(out.shape)
    d_out[..., 0::2] = g.real
    d_out[..., 1::2] = g.imag
    d_pre = (d_out * (1.0 - out * out)).transpose(1, 0, 2, 3).reshape(n_frames, batch * n_bins, -1)
    grads = {
        "dense.W": d_pre.reshape(-1, d_pre.shape[-1]).T @ ht.reshape(-1, ht.shape[-1]),
        "dense.b": d_pre.sum(axis=(0, 1)),
    }
    d_ht = d_pre @ weights["dense.W"]
    d_xt, grads["t_lstm.W_ih"], grads["t_lstm.W_hh"], db = lstm_backward(d_ht, cache_t)
    grads["t_lstm.b_ih"], grads["t_lstm.b_hh"] = db, db.copy()
    d_hf = d_xt.reshape(n_frames, batch, n_bins, -1).transpose(2, 1, 0, 3).reshape(n_bins, batch * n_frames, -1)
    _, grads["f_lstm.W_ih"], grads["f_lstm.W_hh"], db = lstm_backward(d_hf, cache_f)
    grads["f_lstm.b_ih"], grads["f_lstm.b_hh"] = db, db.copy()
    return grads


def apply_masks(noisy, masks) -> np.ndarray:
    """Own-voice estimate: sum over microphones of mask times noisy spectrum."""
    noisy = np.asarray(noisy)
    masks = np.asarray(masks)
    if noisy.shape != masks.shape:
        raise ValueError(f"noisy shape {noisy.shape} != mask shape {masks.shape}")
    return np.sum(masks * noisy, axis=-3)


def infer_utterance(noisy_outer, noisy_inear, config: ModelConfig, weights: dict,
                    stft: StftConfig = StftConfig(), sample_rate: int | None = None) -> np.ndarray:
    """Enhanced outer-microphone own voice for a noisy waveform pair."""
    noisy_outer = np.asarray(noisy_outer, dtype=float)
    noisy_inear = np.asarray(noisy_inear, dtype=float)
    if noisy_outer.shape != noisy_inear.shape:
        raise ValueError("outer and in-ear waveforms must have equal length")
    spec = analyze(np.stack([noisy_outer, noisy_inear]), stft, sample_rate=sample_rate)
    noisy = spec[1:] if config.num_mics == 1 else spec
    masks = forward(noisy, config, weights)
    return synthesize(apply_masks(noisy, masks), stft, length=noisy_outer.shape[-1])


# --------------------------------------------------------------------------- streaming


def _lstm_scan(proj, W_hh_t):
    """Inference-only LSTM over axis 0 of a precomputed input projection ``(T, B, 4H)``."""
    steps, batch, _ = proj.shape
    hidden = W_hh_t.shape[0]
    h = np.zeros((batch, hidden), dtype=proj.dtype)
    c = np.zeros((batch, hidden), dtype=proj.dtype)
    hs = np.empty((steps, batch, hidden), dtype=proj.dtype)
    for t in range(steps):
        z = proj[t] + h @ W_hh_t
        gates = expit(z[:, : 2 * hidden])
        c = gates[:, hidden:] * c + gates[:, :hidden] * np.tanh(z[:, 2 * hidden : 3 * hidden])
        h = expit(z[:, 3 * hidden :]) * np.tanh(c)
        hs[t] = h
    return hs


class StreamingEnhancer:
    """Causal inference that carries the time-LSTM state between calls.

    Frames can be pushed one at a time (:meth:`process_frame`) or in blocks
    (:meth:`process_block`); the frequency LSTM of a block is batched over its
    frames, which does not change the result because its state is reset every
    frame.  Either way the output equals :func:`forward` + :func:`apply_masks`
    over the concatenated frames.  ``dtype=np.float32`` selects the
    single-precision fast path.
    """

    def __init__(self, config: ModelConfig, weights: dict, dtype=np.float64):
        from ._kernels import flstm_scan

        check_weights(config, weights)
        self.config = config
        self.dtype = np.dtype(dtype)
        self._scan = flstm_scan
        cast = {k: np.ascontiguousarray(v, dtype=self.dtype) for k, v in weights.items()}
        self._f_ih_t = np.ascontiguousarray(cast["f_lstm.W_ih"].T)
        self._f_hh = cast["f_lstm.W_hh"]
        self._f_hh_t = np.ascontiguousarray(cast["f_lstm.W_hh"].T)
        self._f_b = cast["f_lstm.b_ih"] + cast["f_lstm.b_hh"]
        self._t_ih_t = np.ascontiguousarray(cast["t_lstm.W_ih"].T)
        self._t_hh_t = np.ascontiguousarray(cast["t_lstm.W_hh"].T)
        self._t_b = cast["t_lstm.b_ih"] + cast["t_lstm.b_hh"]
        self._d_t = np.ascontiguousarray(cast["dense.W"].T)
        self._d_b = cast["dense.b"]
        self.reset()

    def reset(self) -> None:
        """Forget the time-LSTM state (start of a new utterance)."""
        k, ht = self.config.num_bins, self.config.h_t
        self.h = np.zeros((k, ht), dtype=self.dtype)
        self.c = np.zeros((k, ht), dtype=self.dtype)

    def masks_for_block(self, block) -> np.ndarray:
        """Masks ``(M, K, B)`` for ``B`` consecutive noisy frames ``(M, K, B)``."""
        cfg = self.config
        block = np.asarray(block)
        if block.ndim != 3 or block.shape[:2] != (cfg.num_mics, cfg.num_bins):
            raise ValueError(f"block shape {block.shape} != ({cfg.num_mics}, {cfg.num_bins}, B)")
        n = block.shape[-1]
        x = np.empty((cfg.num_bins, n, cfg.features), dtype=self.dtype)
        x[..., 0::2] = block.real.transpose(1, 2, 0)
        x[..., 1::2] = block.imag.transpose(1, 2, 0)
        proj = x @ self._f_ih_t + self._f_b
        if n == 1:
            hf = np.empty((cfg.num_bins, 1, cfg.h_f), dtype=self.dtype)
            self._scan(np.ascontiguousarray(proj[:, 0]), self._f_hh, hf[:, 0])
        else:
            hf = _lstm_scan(proj, self._f_hh_t)
        tproj = hf @ self._t_ih_t + self._t_b  # (K, B, 4Ht)
        ht = cfg.h_t
        hs = np.empty((n, cfg.num_bins, ht), dtype=self.dtype)
        for l in range(n):
            z = tproj[:, l] + self.h @ self._t_hh_t
            gates = expit(z[:, : 2 * ht])
            self.c = gates[:, ht:] * self.c + gates[:, :ht] * np.tanh(z[:, 2 * ht : 3 * ht])
            self.h = expit(z[:, 3 * ht :]) * np.tanh(self.c)
            hs[l] = self.h
        out = np.tanh(hs @ self._d_t + self._d_b)  # (B, K, D)
        return (out[..., 0::2] + 1j * out[..., 1::2]).transpose(2, 1, 0)

    def process_block(self, block) -> np.ndarray:
        """Own-voice estimate ``(K, B)`` for noisy frames ``(M, K, B)``."""
        return np.sum(self.masks_for_block(block) * block, axis=0)

    def process_frame(self, frame) -> np.ndarray:
        """Own-voice estimate ``(K,)`` for one noisy frame ``(M, K)``."""
        frame = np.asarray(frame)
        return self.process_block(frame[..., None])[:, 0]

    def process(self, noisy, block_frames: int = 1) -> np.ndarray:
        """Stream all frames of ``(M, K, L)`` in blocks of ``block_frames``."""
        noisy = _as_noisy(noisy, self.config)
        n = noisy.shape[-1]
        parts = [self.process_block(noisy[..., s : s + block_frames]) for s in range(0, n, block_frames)]
        return np.concatenate(parts, axis=-1) if parts else np.zeros((noisy.shape[-2], 0), dtype=complex)


# --------------------------------------------------------------------------- weight files

MAGIC = b"OVRW"
VERSION = 1


def save_weights(path, weights: dict) -> None:
    """Binary container: magic, version, tensor count, then named float32 tensors."""
    names = [n for n in WEIGHT_NAMES if n in weights] + sorted(set(weights) - set(WEIGHT_NAMES))
    chunks = [MAGIC, struct.pack("<II", VERSION, len(names))]
    for name in names:
        arr = np.ascontiguousarray(weights[name], dtype="<f4")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    with atomic_path(path) as tmp:
        with open(tmp, "wb") as fh:
            fh.write(b"".join(chunks))


def load_weights(path) -> dict:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read weights {path}: {exc}") from exc
    try:
        if blob[:4] != MAGIC:
            raise DataError(f"{path}: not an OVRW weights file")
        version, count = struct.unpack_from("<II", blob, 4)
        if version != VERSION:
            raise DataError(f"{path}: unsupported OVRW version {version}")
        pos = 12
        weights = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos : pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            size = int(np.prod(dims, dtype=np.int64))
            arr = np.frombuffer(blob, dtype="<f4", count=size, offset=pos).reshape(dims)
            pos += 4 * size
            weights[name] = arr.astype(np.float64)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: truncated or corrupt weights file ({exc})") from exc
    if pos != len(blob):
        raise DataError(f"{path}: {len(blob) - pos} trailing bytes")
    return weights
