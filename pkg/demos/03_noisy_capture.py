"""Mixing own voice with spatialized noise at a chosen SNR.

The SNR is defined on the outer microphone.  The same gain is applied to the
noise at both microphones, so the in-ear channel keeps its natural isolation.

Run:  python3 demos/03_noisy_capture.py
"""
import numpy as np

from ovr.augment import augment_utterance
from ovr.mixer import MixSpec, diffuse_sources, measure_snr, mix_at_snr, random_irset, spatialize
from ovr.synth import colored_noise, speech_like, talker_table

rng = np.random.default_rng(2)
irs = random_irset(seed=2)  # synthetic IRs for 8 directions, 45 degrees apart
speech, intervals = speech_like(rng, 3.0)
outer, inear = augment_utterance(speech, intervals, talker_table(rng))

babble = colored_noise(rng, 5 * 16000, exponent=1.0)
point = spatialize(babble, irs, "point", direction=2)
diffuse = spatialize(diffuse_sources(babble, seed=0), irs, "diffuse")

print(" mode     target  outer SNR  in-ear SNR")
for noise, mode in ((point, "point"), (diffuse, "diffuse")):
    for snr in (-10, 0, 10, 25):
        y_o, y_i = mix_at_snr(outer, inear, noise, MixSpec(snr, mode, 2, seed=snr + 10))
        print(f" {mode:<8} {snr:>6}  {measure_snr(outer, y_o - outer):9.3f}  "
              f"{measure_snr(inear, y_i - inear):10.2f}")
