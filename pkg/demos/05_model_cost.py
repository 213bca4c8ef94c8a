"""Parameter counts, MACs per second and real-time factor for every preset.

Run:  python3 demos/05_model_cost.py [--rf]
The real-time factor is measured only with --rf, since it takes about a minute.
"""
import sys

from ovr.complexity import bench_realtime_factor, count_macs_per_second, count_params
from ovr.model import PRESETS, ModelConfig

measure = "--rf" in sys.argv[1:]
print("preset  H_F  H_T     params  GMAC/s  (matmul only)" + ("  RF" if measure else ""))
for name in ("XS", "S", "M", "L", "XL"):
    cfg = ModelConfig.from_preset(name)
    row = (f"{name:<6} {cfg.h_f:>4} {cfg.h_t:>4} {count_params(cfg):>10,}"
           f"  {count_macs_per_second(cfg) / 1e9:6.2f}  ({count_macs_per_second(cfg, convention='matmul') / 1e9:6.2f})")
    if measure:
        row += f"  {bench_realtime_factor(cfg, audio_seconds=3.0, repetitions=3):.3f}"
    print(row)

one_mic = ModelConfig.from_preset("XL", num_mics=1)
print(f"\nXL with only the in-ear mic: {count_params(one_mic):,} params "
      f"({count_params(ModelConfig.from_preset('XL')) - count_params(one_mic):,} fewer)")
print(f"available presets: {', '.join(PRESETS)}")
