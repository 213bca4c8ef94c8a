"""The STFT front end: analysis, synthesis, and why the round trip is exact.

Run:  python3 demos/01_stft_round_trip.py
"""
import numpy as np

from ovr.stft import StftConfig, analyze, make_window, num_frames, synthesize

cfg = StftConfig()  # 512-sample frames, 256 shift, 16 kHz
print(f"frame {cfg.frame_len}, shift {cfg.frame_shift}, {cfg.num_bins} bins")

# The analysis window is sqrt(Hann).  Applied twice (analysis + synthesis) it
# becomes a Hann window, and Hann windows at 50% overlap sum to one.
w = make_window(cfg)
ola = w[: cfg.frame_shift] ** 2 + w[cfg.frame_shift :] ** 2
print(f"overlap-added squared window: min {ola.min():.15f}, max {ola.max():.15f}")

rng = np.random.default_rng(0)
x = rng.normal(size=3 * cfg.sample_rate_hz)
X = analyze(x, cfg)
print(f"3 s of noise -> spectrogram {X.shape} (expected {num_frames(len(x), cfg)} frames)")

y = synthesize(X, cfg, length=len(x))
print(f"round-trip max error: {np.max(np.abs(y - x)):.2e}")

# Two channels go through together; the leading axes are kept.
pair = np.stack([x, 0.3 * x])
print(f"two-channel spectrogram: {analyze(pair, cfg).shape}")
