"""Training and fine-tuning with hand-derived gradients.

The loss is a combined L1 between the estimated and clean outer-microphone
own voice, in the time domain and on the STFT of the estimate (real part,
imaginary part and magnitude).  Gradients flow back through the re-analysis
STFT, the synthesis STFT, the masking and the network, all in closed form.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .fileio import DataError, write_json
from .mixer import MixSpec, NoiseCapture, mix_at_snr
from .model import ModelConfig, apply_masks, forward, forward_backward_masks, load_weights, save_weights
from .stft import StftConfig, analyze, analyze_adjoint, synthesize, synthesize_adjoint

SNR_RANGE_DB = (-10.0, 25.0)


@dataclass(frozen=True)
class LossConfig:
    time: float = 1.0
    real: float = 1.0
    imag: float = 1.0
    magnitude: float = 1.0
    eps: float = 1e-8

    def __post_init__(self):
        w = (self.time, self.real, self.imag, self.magnitude)
        if min(w) < 0 or max(w) == 0:
            raise ValueError(f"loss weights must be >= 0 and not all zero, got {w}")


def _magnitude(spec, eps):
    return np.sqrt(spec.real**2 + spec.imag**2 + eps * eps)


def loss_and_grad(estimate, target, cfg: LossConfig = LossConfig(), stft: StftConfig = StftConfig()):
    """Combined L1 loss and its gradient with respect to ``estimate``.

    Inputs are ``(N,)`` or ``(B, N)``; a batch loss is the mean over examples.
    The L1 subgradient at zero is zero.
    """
    estimate = np.asarray(estimate, dtype=float)
    target = np.asarray(target, dtype=float)
    if estimate.shape != target.shape:
        raise ValueError(f"estimate shape {estimate.shape} != target shape {target.shape}")
    n = estimate.shape[-1]
    batch = int(np.prod(estimate.shape[:-1], dtype=np.int64))
    diff = estimate - target
    loss = cfg.time * np.abs(diff).mean(axis=-1)
    grad = cfg.time * np.sign(diff) / n

    est_spec = analyze(estimate, stft)
    tgt_spec = analyze(target, stft)
    cells = est_spec.shape[-1] * est_spec.shape[-2]
    d_re = est_spec.real - tgt_spec.real
    d_im = est_spec.imag - tgt_spec.imag
    mag = _magnitude(est_spec, cfg.eps)
    d_mag = mag - _magnitude(tgt_spec, cfg.eps)
    loss = loss + (
        cfg.real * np.abs(d_re).sum(axis=(-2, -1))
        + cfg.imag * np.abs(d_im).sum(axis=(-2, -1))
        + cfg.magnitude * np.abs(d_mag).sum(axis=(-2, -1))
    ) / cells
    g_spec = (
        cfg.real * np.sign(d_re)
        + 1j * cfg.imag * np.sign(d_im)
        + cfg.magnitude * np.sign(d_mag) * est_spec / mag
    ) / cells
    grad = grad + analyze_adjoint(g_spec, stft, n)
    return float(np.mean(loss)), grad / batch


def loss_combined_l1(estimate, target, cfg: LossConfig = LossConfig(), stft: StftConfig = StftConfig()) -> float:
    return loss_and_grad(estimate, target, cfg, stft)[0]


def _model_input(noisy_spec, config: ModelConfig):
    # (B, 2, K, L) -> channels the model consumes
    return noisy_spec[:, 1:] if config.num_mics == 1 else noisy_spec


def predict(noisy, config: ModelConfig, weights: dict, stft: StftConfig = StftConfig()) -> np.ndarray:
    """Batch estimate ``(B, N)`` for noisy waveform pairs ``(B, 2, N)``."""
    noisy = np.asarray(noisy, dtype=float)
    spec = _model_input(analyze(noisy, stft), config)
    est = apply_masks(spec, forward(spec, config, weights))
    return synthesize(est, stft, length=noisy.shape[-1])


def batch_loss(noisy, target, config, weights, loss_cfg=LossConfig(), stft=StftConfig()) -> float:
    return loss_combined_l1(predict(noisy, config, weights, stft), target, loss_cfg, stft)


def backward(noisy, target, config: ModelConfig, weights: dict, loss_cfg: LossConfig = LossConfig(),
             stft: StftConfig = StftConfig()):
    """Loss and gradients for every weight tensor.

    ``noisy`` is ``(B, 2, N)`` (outer, in-ear) and ``target`` is ``(B, N)``.
    """
    noisy = np.asarray(noisy, dtype=float)
    target = np.asarray(target, dtype=float)
    if noisy.ndim != 3 or noisy.shape[1] != 2 or target.shape != (noisy.shape[0], noisy.shape[2]):
        raise ValueError(f"expected noisy (B, 2, N) and target (B, N), got {noisy.shape} and {target.shape}")
    spec = _model_input(analyze(noisy, stft), config)
    masks, cache = forward(spec, config, weights, return_cache=True)
    estimate = synthesize(apply_masks(spec, masks), stft, length=noisy.shape[-1])
    loss, g_est = loss_and_grad(estimate, target, loss_cfg, stft)
    if not math.isfinite(loss):
        raise FloatingPointError(f"non-finite loss {loss}")
    g_spec = synthesize_adjoint(g_est, stft)
    g_masks = g_spec[:, None] * np.conj(spec)
    return loss, forward_backward_masks(g_masks, config, weights, cache)


# --------------------------------------------------------------------------- optimizer


@dataclass
class OptimizerState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(weights: dict, grads: dict, state: OptimizerState) -> dict:
    """One bias-corrected ADAM update; returns new weights and advances ``state``."""
    state.t += 1
    c1 = 1.0 - state.beta1**state.t
    c2 = 1.0 - state.beta2**state.t
    new = {}
    for name, w in weights.items():
        g = grads[name]
        if np.shape(g) != np.shape(w):
            raise ValueError(f"gradient for {name} has shape {np.shape(g)}, expected {np.shape(w)}")
        m = state.m.get(name, np.zeros_like(w))
        v = state.v.get(name, np.zeros_like(w))
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        new[name] = w - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return new


@dataclass
class ScheduleState:
    best: float = math.inf
    since_improvement: int = 0
    halvings: int = 0
    halve_after: int = 3
    stop_after: int = 6


def schedule_update(state: ScheduleState, val_loss: float, optimizer: OptimizerState) -> str:
    """Plateau schedule: ``"continue"``, ``"halve"`` (LR halved) or ``"stop"``.

    A strictly lower validation loss resets the counter.  The counter keeps
    running after a halving, so with the defaults the LR is halved after three
    stagnant epochs and training stops after six.
    """
    if val_loss < state.best:
        state.best = val_loss
        state.since_improvement = 0
        return "continue"
    state.since_improvement += 1
    if state.since_improvement >= state.stop_after:
        return "stop"
    if state.since_improvement == state.halve_after:
        optimizer.lr /= 2.0
        state.halvings += 1
        return "halve"
    return "continue"


# --------------------------------------------------------------------------- data


def sample_snrs(rng: np.random.Generator, n: int, low: float = SNR_RANGE_DB[0],
                high: float = SNR_RANGE_DB[1]) -> np.ndarray:
    return rng.uniform(low, high, size=n)


@dataclass
class MixingDataset:
    """Own-voice pairs mixed with noise at a fresh random SNR every epoch.

    ``speech`` holds ``(outer, inear)`` clean own-voice pairs and ``noise``
    holds spatialized :class:`NoiseCapture` objects; utterance ``j`` uses noise
    ``j % len(noise)``.  Every example is cropped to ``example_len`` samples.
    """

    speech: Sequence
    noise: Sequence
    example_len: int
    seed: int = 0
    snr_range: tuple = SNR_RANGE_DB

    def examples(self, epoch: int):
        rng = np.random.default_rng([self.seed, epoch])
        snrs = sample_snrs(rng, len(self.speech), *self.snr_range)
        out = []
        for j, ((outer, inear), snr) in enumerate(zip(self.speech, snrs)):
            outer = np.asarray(outer)[: self.example_len]
            inear = np.asarray(inear)[: self.example_len]
            noise: NoiseCapture = self.noise[j % len(self.noise)]
            spec = MixSpec(float(snr), seed=int(rng.integers(2**31)))
            y_o, y_i = mix_at_snr(outer, inear, noise, spec)
            out.append((np.stack([y_o, y_i]), outer))
        return out


def _epoch_examples(data, epoch):
    if hasattr(data, "examples"):
        return data.examples(epoch)
    return list(data)


def _stack(examples):
    noisy = np.stack([np.asarray(e[0], dtype=float) for e in examples])
    target = np.stack([np.asarray(e[1], dtype=float) for e in examples])
    return noisy, target


def evaluate_loss(examples, config, weights, loss_cfg=LossConfig(), stft=StftConfig(), batch_size=4) -> float:
    """Mean loss over ``examples`` (list of ``(noisy (2, N), target (N,))``)."""
    total, count = 0.0, 0
    for s in range(0, len(examples), batch_size):
        noisy, target = _stack(examples[s : s + batch_size])
        total += batch_loss(noisy, target, config, weights, loss_cfg, stft) * len(target)
        count += len(target)
    return total / count


# --------------------------------------------------------------------------- loop


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 4
    max_epochs: int = 100
    max_steps: int | None = None
    seed: int = 0
    loss: LossConfig = LossConfig()
    halve_after: int = 3
    stop_after: int = 6


@dataclass
class TrainResult:
    weights: dict
    optimizer: OptimizerState
    schedule: ScheduleState
    history: list = field(default_factory=list)
    initial_val_loss: float | None = None
    steps: int = 0


def train(weights: dict, config: ModelConfig, train_data, val_data, tcfg: TrainConfig = TrainConfig(),
          stft: StftConfig = StftConfig(), on_epoch: Callable | None = None) -> TrainResult:
    """ADAM training with the plateau schedule.

    ``train_data`` is a :class:`MixingDataset` (re-mixed each epoch) or a
    sequence of ``(noisy, target)`` pairs; ``val_data`` likewise (a dataset is
    mixed once, with epoch 0).  ``on_epoch(epoch, result)`` is called after
    each epoch, e.g. to write checkpoints.
    """
    rng = np.random.default_rng(tcfg.seed)
    optimizer = OptimizerState(lr=tcfg.lr)
    schedule = ScheduleState(halve_after=tcfg.halve_after, stop_after=tcfg.stop_after)
    val = _epoch_examples(val_data, 0)
    weights = {k: np.array(v, dtype=float) for k, v in weights.items()}
    result = TrainResult(weights, optimizer, schedule)
    if tcfg.max_epochs <= 0 or tcfg.max_steps == 0:
        return result
    result.initial_val_loss = evaluate_loss(val, config, weights, tcfg.loss, stft, tcfg.batch_size)
    schedule.best = result.initial_val_loss

    for epoch in range(tcfg.max_epochs):
        examples = _epoch_examples(train_data, epoch + 1)
        order = rng.permutation(len(examples))
        train_losses = []
        for s in range(0, len(order), tcfg.batch_size):
            noisy, target = _stack([examples[i] for i in order[s : s + tcfg.batch_size]])
            loss, grads = backward(noisy, target, config, weights, tcfg.loss, stft)
            weights = adam_step(weights, grads, optimizer)
            train_losses.append(loss)
            result.steps += 1
            if tcfg.max_steps is not None and result.steps >= tcfg.max_steps:
                break
        val_loss = evaluate_loss(val, config, weights, tcfg.loss, stft, tcfg.batch_size)
        action = schedule_update(schedule, val_loss, optimizer)
        result.weights = weights
        result.history.append({
            "epoch": epoch + 1,
            "steps": result.steps,
            "train_loss": float(np.mean(train_losses)),
            "val_loss": val_loss,
            "lr": optimizer.lr,
            "action": action,
        })
        if on_epoch is not None:
            on_epoch(epoch + 1, result)
        if action == "stop" or (tcfg.max_steps is not None and result.steps >= tcfg.max_steps):
            break
    return result


def fine_tune(weights: dict, config: ModelConfig, recorded, val_data, epochs: int, lr: float = 1e-5,
              seed: int = 0, checkpoint_dir=None, stft: StftConfig = StftConfig(),
              loss_cfg: LossConfig = LossConfig(), batch_size: int = 4) -> TrainResult:
    """Continue training pretrained ``weights`` on recorded pairs at a reduced LR.

    With ``checkpoint_dir`` a checkpoint is written after every epoch.
    """
    tcfg = TrainConfig(lr=lr, batch_size=batch_size, max_epochs=epochs, seed=seed, loss=loss_cfg)
    on_epoch = None
    if checkpoint_dir is not None:
        def on_epoch(epoch, result):
            save_checkpoint(Path(checkpoint_dir) / f"epoch{epoch:03d}", result, seed=seed, epoch=epoch)
    return train(weights, config, recorded, val_data, tcfg, stft, on_epoch)


# --------------------------------------------------------------------------- checkpoints


def save_checkpoint(stem, result: TrainResult, seed: int, epoch: int) -> None:
    """Write ``stem.ovrw`` (weights), ``stem.moments.ovrw`` and ``stem.json``."""
    stem = Path(stem)
    opt = result.optimizer
    save_weights(stem.with_suffix(".ovrw"), result.weights)
    moments = {f"m/{k}": v for k, v in opt.m.items()} | {f"v/{k}": v for k, v in opt.v.items()}
    if moments:
        save_weights(stem.with_suffix(".moments.ovrw"), moments)
    sidecar = {
        "epoch": epoch,
        "seed": seed,
        "optimizer": {"lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps, "t": opt.t},
        "schedule": asdict(result.schedule),
        "history": result.history,
    }
    if not math.isfinite(sidecar["schedule"]["best"]):
        sidecar["schedule"]["best"] = None
    write_json(stem.with_suffix(".json"), sidecar)


def load_checkpoint(stem):
    """Weights, optimizer state, schedule state and sidecar dict of a checkpoint."""
    stem = Path(stem)
    weights = load_weights(stem.with_suffix(".ovrw"))
    try:
        sidecar = json.loads(stem.with_suffix(".json").read_text())
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read checkpoint sidecar for {stem}: {exc}") from exc
    opt = OptimizerState(**sidecar["optimizer"])
    mpath = stem.with_suffix(".moments.ovrw")
    if mpath.exists():
        for key, value in load_weights(mpath).items():
            kind, name = key.split("/", 1)
            (opt.m if kind == "m" else opt.v)[name] = value
    sched = dict(sidecar["schedule"])
    if sched["best"] is None:
        sched["best"] = math.inf
    return weights, opt, ScheduleState(**sched), sidecar
