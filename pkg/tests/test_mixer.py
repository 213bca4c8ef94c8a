import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ovr.fileio import DataError, write_wav
from ovr.mixer import (
    IrSet,
    MixSpec,
    NoiseCapture,
    diffuse_sources,
    fit_length,
    load_irset,
    measure_snr,
    mix_at_snr,
    random_irset,
    save_irset,
    snr_gain,
    spatialize,
)


def identity_irs(taps=16):
    ir = np.zeros((8, taps))
    ir[:, 0] = 1.0
    return IrSet(ir, ir.copy())


def delay_irs(delay, taps=32):
    ir = np.zeros((8, taps))
    ir[:, delay] = 1.0
    return IrSet(ir, 0.5 * ir)


def test_point_identity():
    x = np.random.default_rng(0).normal(size=1000)
    cap = spatialize(x, identity_irs(), "point", 3)
    np.testing.assert_allclose(cap.outer, x, atol=1e-12)
    np.testing.assert_allclose(cap.inear, x, atol=1e-12)


def test_point_delay_matches_direct_convolution():
    rng = np.random.default_rng(1)
    x = rng.normal(size=500)
    cap = spatialize(x, delay_irs(10), "point", 0)
    expected = np.concatenate([np.zeros(10), x[:-10]])
    np.testing.assert_allclose(cap.outer, expected, atol=1e-12)
    np.testing.assert_allclose(cap.inear, 0.5 * expected, atol=1e-12)
    irs = random_irset(3)
    cap = spatialize(x, irs, "point", 5)
    direct = np.array([sum(irs.outer[5, j] * x[n - j] for j in range(min(n + 1, 64))) for n in range(500)])
    np.testing.assert_allclose(cap.outer, direct, atol=1e-12)


def test_diffuse_identical_sources():
    x = np.random.default_rng(2).normal(size=800)
    sources = np.stack([x] * 8)
    raw = spatialize(sources, identity_irs(), "diffuse", normalize=False)
    np.testing.assert_allclose(raw.outer, 8 * x, atol=1e-11)
    cap = spatialize(sources, identity_irs(), "diffuse")
    assert np.sqrt(np.mean(cap.outer**2)) == pytest.approx(1.0)
    np.testing.assert_allclose(cap.outer, x / np.sqrt(np.mean(x**2)), atol=1e-11)


def test_diffuse_needs_eight_sources():
    with pytest.raises(ValueError):
        spatialize(np.zeros((7, 100)), identity_irs(), "diffuse")


def test_point_needs_direction():
    with pytest.raises(ValueError):
        spatialize(np.zeros(100), identity_irs(), "point", None)
    with pytest.raises(ValueError):
        spatialize(np.zeros(100), identity_irs(), "point", 8)


def test_diffuse_sources_decorrelated():
    x = np.random.default_rng(3).normal(size=16000)
    src = diffuse_sources(x, seed=4)
    assert src.shape == (8, 16000)
    corr = np.corrcoef(src)
    assert np.max(np.abs(corr - np.eye(8))) < 0.05
    np.testing.assert_array_equal(src, diffuse_sources(x, seed=4))


@settings(max_examples=20, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.integers(0, 7))
def test_spatialize_linear(a, b, direction):
    rng = np.random.default_rng(direction)
    irs = random_irset(direction)
    x, y = rng.normal(size=300), rng.normal(size=300)
    lhs = spatialize(a * x + b * y, irs, "point", direction)
    cx, cy = spatialize(x, irs, "point", direction), spatialize(y, irs, "point", direction)
    np.testing.assert_allclose(lhs.outer, a * cx.outer + b * cy.outer, atol=1e-10)
    np.testing.assert_allclose(lhs.inear, a * cx.inear + b * cy.inear, atol=1e-10)


def test_gain_equal_power():
    x = np.ones(100)
    assert snr_gain(x, -x, 0.0) == pytest.approx(1.0)


def test_gain_ten_db():
    assert snr_gain(np.ones(10), np.ones(10), 10.0) == pytest.approx(10**-0.5)
    assert 10**-0.5 == pytest.approx(0.3162, abs=1e-4)


def test_gain_errors():
    with pytest.raises(ValueError):
        snr_gain(np.ones(10), np.zeros(10), 0.0)
    with pytest.raises(ValueError):
        mix_at_snr(np.zeros(10), np.zeros(10), NoiseCapture(np.ones(10), np.ones(10)), MixSpec(0.0))


@pytest.mark.parametrize("snr", [-10, -5, 0, 5, 10, 25])
def test_snr_round_trip(snr):
    rng = np.random.default_rng(snr + 100)
    own_o, own_i = rng.normal(size=(2, 16000))
    noise = spatialize(rng.normal(size=9000), random_irset(0), "point", 2)
    spec = MixSpec(snr, "point", 2, seed=7)
    y_o, y_i = mix_at_snr(own_o, own_i, noise, spec)
    assert measure_snr(own_o, y_o - own_o) == pytest.approx(snr, abs=0.01)


def test_same_gain_both_channels():
    rng = np.random.default_rng(5)
    own_o, own_i = rng.normal(size=(2, 2000))
    noise = NoiseCapture(rng.normal(size=2000), 0.1 * rng.normal(size=2000))
    y_o, y_i = mix_at_snr(own_o, own_i, noise, MixSpec(3.0))
    g_o = (y_o - own_o) / noise.outer
    g_i = (y_i - own_i) / noise.inear
    np.testing.assert_allclose(g_o, g_o[0])
    np.testing.assert_allclose(g_i, g_o[0])


def test_fit_length_loops_and_crops():
    noise = NoiseCapture(np.arange(5.0), -np.arange(5.0))
    long = fit_length(noise, 12, seed=0)
    assert len(long.outer) == 12
    diffs = np.diff(long.outer) % 5
    assert np.all(diffs == 1)
    np.testing.assert_array_equal(long.inear, -long.outer)
    short = fit_length(noise, 3, seed=1)
    assert len(short.outer) == 3
    np.testing.assert_array_equal(fit_length(noise, 7, 9).outer, fit_length(noise, 7, 9).outer)


def test_measure_snr_cases():
    x = np.random.default_rng(6).normal(size=100)
    assert measure_snr(x, x) == pytest.approx(0.0)
    assert measure_snr(x, x / 10) == pytest.approx(20.0)
    y = np.random.default_rng(7).normal(size=100)
    oracle = 10 * np.log10(sum(v * v for v in x) / sum(v * v for v in y))
    assert measure_snr(x, y) == pytest.approx(oracle, abs=1e-9)
    with pytest.raises(ValueError):
        measure_snr(x, np.zeros(100))


def test_mixspec_validation():
    with pytest.raises(ValueError):
        MixSpec(float("nan"))
    with pytest.raises(ValueError):
        MixSpec(0.0, "point", 9)
    with pytest.raises(ValueError):
        MixSpec(0.0, "ambisonic")
    with pytest.raises(ValueError):
        MixSpec(0.0, seed=-1)
    MixSpec(0.0, "diffuse", None)


def test_irset_validation():
    with pytest.raises(ValueError):
        IrSet(np.zeros((8, 4)), np.zeros((8, 5)))
    with pytest.raises(ValueError):
        IrSet(np.zeros((7, 4)), np.zeros((7, 4)))
    bad = np.zeros((8, 4))
    bad[0, 0] = np.inf
    with pytest.raises(ValueError):
        IrSet(bad, np.zeros((8, 4)))


def test_irset_file_round_trip(tmp_path):
    irs = random_irset(11)
    save_irset(tmp_path, irs)
    assert sorted(p.name for p in tmp_path.iterdir())[:2] == ["dir0_inear.wav", "dir0_outer.wav"]
    loaded = load_irset(tmp_path)
    np.testing.assert_allclose(loaded.outer, irs.outer, atol=1e-7)
    np.testing.assert_allclose(loaded.inear, irs.inear, atol=1e-7)


def test_irset_file_errors(tmp_path):
    save_irset(tmp_path, random_irset(0))
    (tmp_path / "dir3_inear.wav").unlink()
    with pytest.raises(DataError):
        load_irset(tmp_path)
    write_wav(tmp_path / "dir3_inear.wav", np.zeros(10), 16000)
    with pytest.raises(DataError):
        load_irset(tmp_path)
