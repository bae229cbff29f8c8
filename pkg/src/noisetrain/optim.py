"""SGD, SAM, and RWP training with momentum, weight decay, and cosine LR.

All three optimizers share one step implementation that differs only in
how the perturbation epsilon is produced. With zero schedule strength the
perturbation is the exact zero vector and the RNG streams are untouched,
so RWP(sigma_max=0) and SAM(rho_max=0) reproduce SGD bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .network import (Batch, ModelSpec, ParamSet, accuracy, forward_backward,
                      init_params)
from .perturb import NoiseSpec, Schedule, sam_ascent, sample_noise, strength_at
from .tensorcore import NumericError, RngStream, l2_norm

OPTIMIZERS = ("sgd", "sam", "rwp")


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "sgd"
    epochs: int = 60
    batch_size: int = 64
    lr0: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    label_smoothing: float = 0.1
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    schedule: Schedule = field(default_factory=Schedule)
    seed: int = 0
    # validation monitoring: cheap K here, the reporting protocol re-evaluates
    # the selected checkpoint at the full K afterwards
    monitor_sigma_test: float = 0.1
    monitor_draws: int = 2

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.lr0 <= 0 or not 0 <= self.momentum < 1 or self.batch_size < 1:
            raise ValueError("require lr0 > 0, 0 <= momentum < 1, batch_size >= 1")


@dataclass
class OptimState:
    params: ParamSet
    velocity: np.ndarray
    step_index: int = 0
    total_steps: int = 1
    # per-step diagnostics for the current epoch
    loss_sum: float = 0.0
    grad_norm_sum: float = 0.0
    sharpness_sum: float = 0.0
    cos_sim_sum: float = 0.0
    cos_sim_count: int = 0
    distance_sum: float = 0.0
    steps_in_epoch: int = 0

    def reset_epoch_stats(self):
        self.loss_sum = self.grad_norm_sum = self.sharpness_sum = 0.0
        self.cos_sim_sum = self.distance_sum = 0.0
        self.cos_sim_count = self.steps_in_epoch = 0


def cosine_lr(t: int, total: int, lr0: float) -> float:
    if not 0 <= t <= total:
        raise ValueError("require 0 <= t <= total")
    return lr0 * (1.0 + math.cos(math.pi * t / total)) / 2.0


def _step(spec: ModelSpec, state: OptimState, batch: Batch, cfg: TrainConfig,
          rng_noise: RngStream) -> OptimState:
    theta = state.params.theta
    lr = cosine_lr(state.step_index, state.total_steps, cfg.lr0)
    strength = strength_at(cfg.schedule, state.step_index)

    loss_w, g1 = forward_backward(spec, state.params, batch, cfg.label_smoothing)

    if cfg.optimizer == "sam":
        eps = sam_ascent(g1, strength)
    elif cfg.optimizer == "rwp":
        eps = sample_noise(state.params, cfg.noise.with_strength(strength), rng_noise)
    else:
        eps = np.zeros_like(theta)

    if np.any(eps):
        perturbed = ParamSet(theta + eps, state.params.partition)
        loss_p, g2 = forward_backward(spec, perturbed, batch, cfg.label_smoothing)
    else:
        loss_p, g2 = loss_w, g1  # exact reduction to plain SGD

    # decay acts on the unperturbed weights
    update = g2 + cfg.weight_decay * theta
    if not np.all(np.isfinite(update)):
        raise NumericError(f"non-finite update at step {state.step_index}")
    state.velocity = cfg.momentum * state.velocity + update
    delta = lr * state.velocity
    state.params = ParamSet(theta - delta, state.params.partition)
    state.step_index += 1

    state.loss_sum += loss_w
    state.grad_norm_sum += l2_norm(g2)
    state.sharpness_sum += loss_p - loss_w
    n1, n2 = l2_norm(g1), l2_norm(g2)
    if n1 > 0 and n2 > 0:
        state.cos_sim_sum += float(np.dot(g1, g2)) / (n1 * n2)
        state.cos_sim_count += 1
    state.distance_sum += l2_norm(delta)
    state.steps_in_epoch += 1
    return state


def sgd_step(spec, state, batch, cfg: TrainConfig, rng_noise=None):
    return _step(spec, state, batch, replace(cfg, optimizer="sgd"), rng_noise)


def rwp_step(spec, state, batch, cfg: TrainConfig, rng_noise: RngStream):
    return _step(spec, state, batch, replace(cfg, optimizer="rwp"), rng_noise)


def sam_step(spec, state, batch, cfg: TrainConfig, rng_noise=None):
    return _step(spec, state, batch, replace(cfg, optimizer="sam"), rng_noise)


@dataclass
class TrainResult:
    best_params: ParamSet
    final_params: ParamSet
    best_epoch: int
    log: list[dict]


def _noisy_val_accuracy(spec, params, val_ds, sigma: float, draws: int,
                        noise_family: str, rng: RngStream, batch_size: int) -> float:
    from .evalharness import noisy_accuracy  # local import avoids a cycle
    accs = noisy_accuracy(spec, params, val_ds,
                          NoiseSpec(noise_family, sigma), draws, rng)
    return float(np.mean(accs))


def train(spec: ModelSpec, train_ds, val_ds, cfg: TrainConfig) -> TrainResult:
    """Run the configured optimizer; select the epoch with the highest
    perturbed validation accuracy (early stopping by checkpoint)."""
    rng_init = RngStream(cfg.seed, "init")
    rng_shuffle = RngStream(cfg.seed, "data-shuffle")
    rng_noise = RngStream(cfg.seed, "noise-train")
    rng_eval = RngStream(cfg.seed, "noise-eval")

    params = init_params(spec, rng_init)
    batches_per_epoch = math.ceil(len(train_ds) / cfg.batch_size)
    state = OptimState(params, np.zeros_like(params.theta),
                       total_steps=max(1, cfg.epochs * batches_per_epoch))

    noise_family = cfg.noise.family if cfg.noise.family != "device" else "gaussian"
    best_params = state.params.copy()
    best_acc = -1.0
    best_epoch = -1
    log: list[dict] = []

    for epoch in range(cfg.epochs):
        state.reset_epoch_stats()
        order = rng_shuffle.permutation(len(train_ds))
        for batch in train_ds.batches(cfg.batch_size, order):
            state = _step(spec, state, batch, cfg, rng_noise)

        val_clean = accuracy(spec, state.params, val_ds.batches(256)) if len(val_ds) else float("nan")
        if len(val_ds):
            val_noisy = _noisy_val_accuracy(spec, state.params, val_ds,
                                            cfg.monitor_sigma_test, cfg.monitor_draws,
                                            noise_family, rng_eval, cfg.batch_size)
        else:
            val_noisy = float("nan")
        ns = max(1, state.steps_in_epoch)
        record = {
            "epoch": epoch,
            "train_loss": state.loss_sum / ns,
            "val_acc_clean": val_clean,
            "val_acc_noisy": val_noisy,
            "grad_norm_mean": state.grad_norm_sum / ns,
            "grad_sharpness_mean": state.sharpness_sum / ns,
            "cos_sim_mean": (state.cos_sim_sum / state.cos_sim_count
                             if state.cos_sim_count else None),
            "step_distance": state.distance_sum,
            "lr": cosine_lr(state.step_index, state.total_steps, cfg.lr0),
            "strength_t": strength_at(cfg.schedule, state.step_index),
        }
        log.append(record)
        score = val_noisy if len(val_ds) else -state.loss_sum
        if score > best_acc:
            best_acc = score
            best_params = state.params.copy()
            best_epoch = epoch

    if cfg.epochs == 0 or best_epoch < 0:
        best_params = state.params.copy()
        best_epoch = 0
    return TrainResult(best_params, state.params, best_epoch, log)
