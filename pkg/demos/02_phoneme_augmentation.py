"""Own-voice augmentation: from clean speech to an (outer, in-ear) pair.

An in-ear microphone hears the wearer's own voice through bone and tissue,
and the transfer from the outer microphone depends on what is being said.
We estimate one relative transfer function (RTF) per phoneme from a
recorded pair, then apply those RTFs, frame by frame, to new clean speech.

Run:  python3 demos/02_phoneme_augmentation.py
"""
import numpy as np

from ovr.augment import SmoothingConfig, augment_utterance, estimate_rtfs, intervals_to_track
from ovr.stft import StftConfig, analyze
from ovr.synth import speech_like, talker_table

cfg = StftConfig()
rng = np.random.default_rng(1)

# A synthetic talker stands in for a real recording session.
truth = talker_table(rng, talker_id="talker-a")
speech, intervals = speech_like(rng, 4.0)
outer = analyze(speech, cfg)
track = intervals_to_track(intervals, outer.shape[-1], cfg)
print(f"{len(intervals)} labelled segments, {track.count('sil')} of {len(track)} frames silent")

# "Record" the in-ear channel with the true RTFs, unsmoothed.
_, inear_wave = augment_utterance(speech, intervals, truth, SmoothingConfig(0.0))
inear = analyze(inear_wave, cfg)

est = estimate_rtfs(outer, inear, track, talker_id="talker-a")
print(f"estimated RTFs for {len(est.phonemes)} phonemes")
for p in est.phonemes[:4]:
    rel = np.linalg.norm(est.lookup(p) - truth.lookup(p)) / np.linalg.norm(truth.lookup(p))
    print(f"  {p:>3}: relative error {rel:.3f}")
print("(errors are nonzero because of overlap between neighbouring frames)")

# Now augment a different utterance with the estimated table.
new_speech, new_intervals = speech_like(rng, 2.0)
o, i = augment_utterance(new_speech, new_intervals, est)
f = np.fft.rfftfreq(len(o), 1 / cfg.sample_rate_hz)
lo, hi = f < 1000, f > 3000
O, I = np.abs(np.fft.rfft(o)) ** 2, np.abs(np.fft.rfft(i)) ** 2
print(f"in-ear / outer energy below 1 kHz: {I[lo].sum() / O[lo].sum():.2f}, "
      f"above 3 kHz: {I[hi].sum() / O[hi].sum():.3f}")
