"""The mask network, in batch and in streaming form.

The network predicts one complex mask per microphone and time-frequency bin.
The enhanced outer signal is the masked sum of both microphones.  The
frequency LSTM looks only at the current frame and the time LSTM only at the
past, so a streaming enhancer that sees one frame at a time gives the same
answer as the batch model.

Run:  python3 demos/04_streaming_inference.py
"""
import time

import numpy as np

from ovr.model import ModelConfig, StreamingEnhancer, apply_masks, forward, init_weights
from ovr.stft import StftConfig, analyze, synthesize
from ovr.synth import speech_like

cfg = ModelConfig.from_preset("S")
weights = init_weights(cfg, seed=0)
print(f"preset S: F-LSTM {cfg.h_f} units, T-LSTM {cfg.h_t} units, {cfg.num_mics} mics")

rng = np.random.default_rng(3)
x, _ = speech_like(rng, 2.0)
noisy = analyze(np.stack([x + 0.05 * rng.normal(size=len(x)), 0.4 * x]), StftConfig())

masks = forward(noisy, cfg, weights)
print(f"masks {masks.shape}, |real| <= {np.abs(masks.real).max():.3f}, |imag| <= {np.abs(masks.imag).max():.3f}")
batch = apply_masks(noisy, masks)

t0 = time.perf_counter()
stream = StreamingEnhancer(cfg, weights).process(noisy, block_frames=1)
elapsed = time.perf_counter() - t0
frames = noisy.shape[-1]
print(f"streamed {frames} frames in {elapsed:.2f} s ({1e3 * elapsed / frames:.2f} ms per 16 ms frame)")
print(f"streaming vs batch max difference: {np.max(np.abs(stream - batch)):.1e}")

enhanced = synthesize(batch, StftConfig(), length=len(x))
print(f"enhanced waveform: {enhanced.shape[0]} samples (untrained weights, so not yet useful)")
