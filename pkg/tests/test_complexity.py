import numpy as np
import pytest

from ovr.complexity import (
    CostReport,
    bench_realtime_factor,
    cost_report,
    count_macs_per_second,
    count_params,
    macs_per_frame,
)
from ovr.model import PRESETS, ModelConfig, init_weights

# reported sizes (M parameters) and costs (G MACs/s)
REPORTED_PARAMS = {"XL": 1.390, "L": 0.466, "M": 0.118, "S": 0.031, "XS": 0.013}
REPORTED_MACS = {"XL": 22.45, "L": 7.55, "M": 1.93, "S": 0.50, "XS": 0.23}

# exact integers from a hand expansion of the counting rule
EXACT_PARAMS = {"XL": 1_390_084, "L": 466_436, "M": 117_764, "S": 30_596, "XS": 13_444}


def brute_param_count(config):
    return sum(int(np.prod(v.shape)) for v in init_weights(config).values())


@pytest.mark.parametrize("preset", list(PRESETS))
def test_params_exact(preset):
    cfg = ModelConfig.from_preset(preset)
    assert count_params(cfg) == EXACT_PARAMS[preset] == brute_param_count(cfg)
    assert round(count_params(cfg) / 1e6, 3) == REPORTED_PARAMS[preset]


def test_params_tiny():
    assert count_params(ModelConfig(1, 1, num_mics=1)) == 40


@pytest.mark.parametrize("preset", list(PRESETS))
def test_one_mic_difference(preset):
    two = ModelConfig.from_preset(preset)
    one = ModelConfig.from_preset(preset, num_mics=1)
    assert count_params(two) == count_params(one) + 4 * two.h_f * 2 + 2 * (two.h_t + 1)
    assert brute_param_count(one) == count_params(one)


def test_one_mic_xl_rounding():
    assert count_params(ModelConfig.from_preset("XL", num_mics=1)) == 1_385_730


@pytest.mark.parametrize("preset", list(PRESETS))
def test_macs_within_five_percent(preset):
    macs = count_macs_per_second(ModelConfig.from_preset(preset)) / 1e9
    assert abs(macs / REPORTED_MACS[preset] - 1) < 0.05


def test_macs_matmul_convention():
    cfg = ModelConfig.from_preset("XL")
    per_bin = 4 * 512 * (4 + 512) + 4 * 128 * (512 + 128) + 128 * 4
    assert macs_per_frame(cfg, "matmul") == 257 * per_bin
    assert count_macs_per_second(cfg, convention="matmul") == 257 * per_bin * 62.5
    assert count_macs_per_second(cfg, convention="matmul") / 1e9 == pytest.approx(22.25, abs=0.005)
    # the thop rule adds 16 H element-wise ops per LSTM step
    extra = 257 * 16 * (512 + 128) * 62.5
    assert count_macs_per_second(cfg) - count_macs_per_second(cfg, convention="matmul") == extra


def test_macs_zero_bins():
    assert count_macs_per_second(ModelConfig(8, 8, num_bins=0)) == 0


def test_macs_unknown_convention():
    with pytest.raises(ValueError):
        count_macs_per_second(ModelConfig(2, 2), convention="flops")


def test_cost_report():
    rep = cost_report(ModelConfig.from_preset("XL"), preset="XL")
    assert isinstance(rep, CostReport)
    d = rep.to_dict()
    assert d["params"] == 1_390_084 and d["preset"] == "XL" and d["realtime_factor"] is None
    assert d["macs_per_second"] > 0


def test_bench_positive_and_checks():
    cfg = ModelConfig.from_preset("XS")
    assert bench_realtime_factor(cfg, audio_seconds=0.5, repetitions=3) > 0
    with pytest.raises(ValueError):
        bench_realtime_factor(cfg, audio_seconds=0.5, repetitions=2)


def test_bench_rate_is_stable():
    cfg = ModelConfig.from_preset("S")
    short = bench_realtime_factor(cfg, audio_seconds=2.0, repetitions=5)
    long = bench_realtime_factor(cfg, audio_seconds=4.0, repetitions=5)
    assert abs(long / short - 1) < 0.2
