import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ovr.fileio import DataError
from ovr.model import (
    PRESETS,
    ModelConfig,
    StreamingEnhancer,
    apply_masks,
    config_from_weights,
    forward,
    infer_utterance,
    init_weights,
    load_weights,
    lstm_cell_step,
    save_weights,
    weight_shapes,
    zero_weights,
)
from ovr.stft import ConfigError, StftConfig, analyze, synthesize


def sigmoid(v):
    return 1.0 / (1.0 + math.exp(-v))


def scalar_lstm_step(x, h, c, W_ih, W_hh, b):
    """Element-by-element LSTM cell with gate order (i, f, g, o)."""
    hidden = len(h)
    z = [b[r] + sum(W_ih[r][j] * x[j] for j in range(len(x))) + sum(W_hh[r][j] * h[j] for j in range(hidden))
         for r in range(4 * hidden)]
    h_new, c_new = [], []
    for j in range(hidden):
        i = sigmoid(z[j])
        f = sigmoid(z[hidden + j])
        g = math.tanh(z[2 * hidden + j])
        o = sigmoid(z[3 * hidden + j])
        c_new.append(f * c[j] + i * g)
        h_new.append(o * math.tanh(c_new[-1]))
    return h_new, c_new


def scalar_masks(noisy, w):
    """Loop-level reference: frequency LSTM per frame, time LSTM per bin, tanh dense."""
    m_count, k_count, l_count = noisy.shape
    W = {k: v.tolist() for k, v in w.items()}
    bf = (w["f_lstm.b_ih"] + w["f_lstm.b_hh"]).tolist()
    bt = (w["t_lstm.b_ih"] + w["t_lstm.b_hh"]).tolist()
    hf_size, ht_size = w["f_lstm.W_hh"].shape[1], w["t_lstm.W_hh"].shape[1]
    f_out = {}
    for l in range(l_count):
        h, c = [0.0] * hf_size, [0.0] * hf_size
        for k in range(k_count):
            x = []
            for m in range(m_count):
                x += [noisy[m, k, l].real, noisy[m, k, l].imag]
            h, c = scalar_lstm_step(x, h, c, W["f_lstm.W_ih"], W["f_lstm.W_hh"], bf)
            f_out[k, l] = h
    masks = np.zeros(noisy.shape, dtype=complex)
    for k in range(k_count):
        h, c = [0.0] * ht_size, [0.0] * ht_size
        for l in range(l_count):
            h, c = scalar_lstm_step(f_out[k, l], h, c, W["t_lstm.W_ih"], W["t_lstm.W_hh"], bt)
            out = [math.tanh(W["dense.b"][r] + sum(W["dense.W"][r][j] * h[j] for j in range(ht_size)))
                   for r in range(2 * m_count)]
            for m in range(m_count):
                masks[m, k, l] = complex(out[2 * m], out[2 * m + 1])
    return masks


def rand_noisy(rng, *shape):
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


def test_cell_zero_weights():
    cfg = ModelConfig(3, 3, num_bins=1)
    w = zero_weights(ModelConfig(3, 3, num_bins=1))
    h, c = lstm_cell_step(np.ones(4), (np.zeros(3), np.zeros(3)), w["f_lstm.W_ih"], w["f_lstm.W_hh"],
                          w["f_lstm.b_ih"], w["f_lstm.b_hh"])
    # all gates 0.5, g = 0: state stays at zero
    assert cfg.features == 4
    np.testing.assert_array_equal(h, 0.0)
    np.testing.assert_array_equal(c, 0.0)


def test_cell_scalar_hand_value():
    W_ih = np.array([[1.0], [0.5], [-1.0], [2.0]])
    W_hh = np.array([[0.2], [0.1], [0.3], [-0.4]])
    b = np.array([0.1, 0.0, 0.2, -0.1])
    h, c = lstm_cell_step(np.array([0.5]), (np.array([0.3]), np.array([-0.2])), W_ih, W_hh, b, np.zeros(4))
    zi, zf, zg, zo = 0.5 + 0.06 + 0.1, 0.25 + 0.03, -0.5 + 0.09 + 0.2, 1.0 - 0.12 - 0.1
    c_ref = sigmoid(zf) * -0.2 + sigmoid(zi) * math.tanh(zg)
    assert c[0] == pytest.approx(c_ref, abs=1e-12)
    assert h[0] == pytest.approx(sigmoid(zo) * math.tanh(c_ref), abs=1e-12)


@pytest.mark.parametrize("num_mics", [1, 2])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_forward_matches_scalar_oracle(num_mics, seed):
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(2, 2, num_mics=num_mics, num_bins=3)
    w = {k: v * 2.0 for k, v in init_weights(cfg, seed).items()}
    noisy = rand_noisy(rng, num_mics, 3, 2)
    np.testing.assert_allclose(forward(noisy, cfg, w), scalar_masks(noisy, w), atol=1e-10)


def test_forward_batch_axes():
    rng = np.random.default_rng(3)
    cfg = ModelConfig(3, 2, num_bins=5)
    w = init_weights(cfg, 1)
    noisy = rand_noisy(rng, 2, 3, 2, 5, 4)
    masks = forward(noisy, cfg, w)
    assert masks.shape == noisy.shape
    np.testing.assert_allclose(masks[1, 2], forward(noisy[1, 2], cfg, w), atol=1e-14)


def test_masks_bounded():
    rng = np.random.default_rng(4)
    cfg = ModelConfig(4, 4, num_bins=100)
    w = {k: v * 20 for k, v in init_weights(cfg, 4).items()}
    masks = forward(100 * rand_noisy(rng, 2, 100, 50), cfg, w)
    assert np.all(np.abs(masks.real) <= 1) and np.all(np.abs(masks.imag) <= 1)


def test_mask_application_hand_example():
    noisy = np.array([1 + 1j, 2 + 0j]).reshape(2, 1, 1)
    masks = np.array([0.5, 0.25 + 0.25j]).reshape(2, 1, 1)
    assert apply_masks(noisy, masks)[0, 0] == pytest.approx(1 + 1j)


def test_apply_masks_shape_check():
    with pytest.raises(ValueError):
        apply_masks(np.zeros((2, 3, 4)), np.zeros((2, 3, 5)))


def test_zero_weights_give_zero_masks():
    cfg = ModelConfig(2, 2, num_bins=6)
    masks = forward(rand_noisy(np.random.default_rng(5), 2, 6, 3), cfg, zero_weights(cfg))
    np.testing.assert_array_equal(masks, 0)


def test_causality():
    rng = np.random.default_rng(6)
    cfg = ModelConfig(3, 3, num_bins=7)
    w = init_weights(cfg, 6)
    noisy = rand_noisy(rng, 2, 7, 10)
    changed = noisy.copy()
    changed[..., 6:] = rand_noisy(rng, 2, 7, 4)
    a, b = forward(noisy, cfg, w), forward(changed, cfg, w)
    np.testing.assert_array_equal(a[..., :6], b[..., :6])
    assert np.any(a[..., 6:] != b[..., 6:])


def test_frequency_lstm_resets_per_frame():
    rng = np.random.default_rng(7)
    cfg = ModelConfig(3, 3, num_bins=7)
    w = init_weights(cfg, 7)
    # no temporal memory (no recurrence, forget gate shut): frames must be independent
    w["t_lstm.W_hh"][:] = 0.0
    w["t_lstm.b_ih"][3:6] = -1e3
    noisy = rand_noisy(rng, 2, 7, 5)
    full = forward(noisy, cfg, w)
    for l in range(5):
        np.testing.assert_allclose(full[..., l], forward(noisy[..., l : l + 1], cfg, w)[..., 0], atol=1e-14)


def test_input_validation():
    cfg = ModelConfig(2, 2, num_bins=4)
    w = init_weights(cfg)
    with pytest.raises(ValueError):
        forward(np.zeros((2, 5, 3)), cfg, w)
    with pytest.raises(ValueError):
        forward(np.zeros((1, 4, 3)), cfg, w)
    bad = np.zeros((2, 4, 3), dtype=complex)
    bad[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        forward(bad, cfg, w)
    w.pop("dense.b")
    with pytest.raises(ValueError):
        forward(np.zeros((2, 4, 3)), cfg, w)


def test_presets():
    assert PRESETS["XL"] == (512, 128) and PRESETS["XS"] == (32, 32)
    assert ModelConfig.from_preset("m").h_f == 64
    with pytest.raises(ConfigError):
        ModelConfig.from_preset("XXL")
    with pytest.raises(ConfigError):
        ModelConfig(0, 4)
    with pytest.raises(ConfigError):
        ModelConfig(4, 4, num_mics=3)


def test_weight_shapes_one_mic():
    shapes = weight_shapes(ModelConfig(8, 4, num_mics=1))
    assert shapes["f_lstm.W_ih"] == (32, 2)
    assert shapes["dense.W"] == (2, 4)


def test_init_is_seeded():
    cfg = ModelConfig.from_preset("XS")
    a, b = init_weights(cfg, 3), init_weights(cfg, 3)
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert not np.array_equal(a["dense.W"], init_weights(cfg, 4)["dense.W"])
    assert config_from_weights(a) == cfg


@pytest.mark.parametrize("block", [1, 3, 64])
def test_streaming_equals_batch(block):
    rng = np.random.default_rng(block)
    cfg = ModelConfig(5, 4, num_bins=17)
    w = init_weights(cfg, block)
    noisy = rand_noisy(rng, 2, 17, 70)
    batch = apply_masks(noisy, forward(noisy, cfg, w))
    stream = StreamingEnhancer(cfg, w).process(noisy, block_frames=block)
    np.testing.assert_allclose(stream, batch, atol=1e-12)


def test_streaming_frame_by_frame_and_reset():
    rng = np.random.default_rng(8)
    cfg = ModelConfig(4, 3, num_mics=1, num_bins=9)
    w = init_weights(cfg, 8)
    noisy = rand_noisy(rng, 1, 9, 12)
    enh = StreamingEnhancer(cfg, w)
    first = np.stack([enh.process_frame(noisy[..., l]) for l in range(12)], axis=-1)
    np.testing.assert_allclose(first, apply_masks(noisy, forward(noisy, cfg, w)), atol=1e-12)
    # without reset the state carries over and the output differs
    assert not np.allclose(enh.process_frame(noisy[..., 0]), first[:, 0])
    enh.reset()
    np.testing.assert_allclose(enh.process_frame(noisy[..., 0]), first[:, 0], atol=1e-14)


def test_streaming_float32():
    rng = np.random.default_rng(9)
    cfg = ModelConfig(6, 6, num_bins=33)
    w = init_weights(cfg, 9)
    noisy = rand_noisy(rng, 2, 33, 20)
    ref = apply_masks(noisy, forward(noisy, cfg, w))
    fast = StreamingEnhancer(cfg, w, dtype=np.float32).process(noisy.astype(np.complex64), block_frames=8)
    np.testing.assert_allclose(fast, ref, atol=1e-4)


def test_streaming_block_shape_check():
    cfg = ModelConfig(2, 2, num_bins=5)
    with pytest.raises(ValueError):
        StreamingEnhancer(cfg, init_weights(cfg)).process_block(np.zeros((2, 4, 1)))


def identity_model(num_mics):
    """Dense bias saturates to mask 1 on the outer channel (or the only channel)."""
    cfg = ModelConfig(2, 2, num_mics=num_mics)
    w = zero_weights(cfg)
    w["dense.b"][0] = 20.0
    return cfg, w


def test_infer_identity_model():
    rng = np.random.default_rng(10)
    x, y = rng.normal(size=(2, 4000))
    cfg, w = identity_model(2)
    out = infer_utterance(x, y, cfg, w)
    np.testing.assert_allclose(out, math.tanh(20.0) * x, atol=1e-9)
    cfg1, w1 = identity_model(1)
    np.testing.assert_allclose(infer_utterance(x, y, cfg1, w1), math.tanh(20.0) * y, atol=1e-9)


def test_infer_checks():
    cfg, w = identity_model(2)
    with pytest.raises(ValueError):
        infer_utterance(np.zeros(100), np.zeros(99), cfg, w)
    with pytest.raises(ConfigError):
        infer_utterance(np.zeros(100), np.zeros(100), cfg, w, sample_rate=8000)


def test_infer_matches_streaming_pipeline():
    rng = np.random.default_rng(11)
    cfg = ModelConfig(3, 3)
    w = init_weights(cfg, 11)
    x, y = rng.normal(size=(2, 3000))
    spec = analyze(np.stack([x, y]), StftConfig())
    streamed = synthesize(StreamingEnhancer(cfg, w).process(spec, 16), StftConfig(), 3000)
    np.testing.assert_allclose(infer_utterance(x, y, cfg, w), streamed, atol=1e-10)


def test_weight_file_round_trip(tmp_path):
    cfg = ModelConfig.from_preset("XS")
    w = init_weights(cfg, 12)
    save_weights(tmp_path / "w.ovrw", w)
    loaded = load_weights(tmp_path / "w.ovrw")
    assert list(loaded) == list(w)
    for k in w:
        assert loaded[k].dtype == np.float64
        np.testing.assert_array_equal(loaded[k], w[k].astype(np.float32))
    assert config_from_weights(loaded) == cfg


def test_weight_file_layout(tmp_path):
    save_weights(tmp_path / "w.ovrw", {"a": np.array([[1.0, 2.0]])})
    blob = (tmp_path / "w.ovrw").read_bytes()
    assert blob[:4] == b"OVRW"
    expected = (b"OVRW" + (1).to_bytes(4, "little") + (1).to_bytes(4, "little") + (1).to_bytes(2, "little") + b"a"
                + bytes([2]) + (1).to_bytes(4, "little") + (2).to_bytes(4, "little")
                + np.array([1, 2], dtype="<f4").tobytes())
    assert blob == expected


def test_weight_file_errors(tmp_path):
    with pytest.raises(DataError):
        load_weights(tmp_path / "missing.ovrw")
    (tmp_path / "junk").write_bytes(b"nope")
    with pytest.raises(DataError):
        load_weights(tmp_path / "junk")
    save_weights(tmp_path / "w.ovrw", {"a": np.ones(3)})
    blob = (tmp_path / "w.ovrw").read_bytes()
    (tmp_path / "trunc").write_bytes(blob[:-2])
    with pytest.raises(DataError):
        load_weights(tmp_path / "trunc")
    (tmp_path / "extra").write_bytes(blob + b"\0")
    with pytest.raises(DataError):
        load_weights(tmp_path / "extra")


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 6))
def test_streaming_block_size_property(seed, block):
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(2, 3, num_bins=5)
    w = init_weights(cfg, seed % 1000)
    noisy = rand_noisy(rng, 2, 5, 9)
    np.testing.assert_allclose(StreamingEnhancer(cfg, w).process(noisy, block),
                               StreamingEnhancer(cfg, w).process(noisy, 1), atol=1e-12)
