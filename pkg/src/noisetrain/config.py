"""Experiment configuration: JSON schema with strict unknown-key rejection."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

from .network import ModelSpec
from .perturb import DeviceErrorModel, NoiseSpec, Schedule
from .optim import TrainConfig


class ConfigError(ValueError):
    pass


_MODEL_KEYS = {"input_dim", "hidden", "num_classes", "activation"}
_DATA_KEYS = {"kind", "classes", "per_class", "dim", "separation", "noise_std",
              "images", "labels", "fractions", "seed"}
_NOISE_KEYS = {"family", "strength", "per_filter_scaling", "device_table"}
_SCHEDULE_KEYS = {"kind", "max_strength", "warmup_iters"}
_TRAIN_KEYS = {"optimizer", "epochs", "batch_size", "lr0", "momentum",
               "weight_decay", "label_smoothing", "noise", "schedule", "seed",
               "monitor_sigma_test", "monitor_draws"}
_EVAL_KEYS = {"sigma_test", "draws", "seeds"}
_TOP_KEYS = {"model", "data", "train", "eval", "output_dir", "sweep"}
_SWEEP_KEYS = {"sigma_train", "sigma_test", "seeds"}


def _check_keys(d: dict, allowed: set, where: str) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be an object")
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


@dataclass
class ExperimentConfig:
    model: ModelSpec
    data: dict
    train: TrainConfig
    eval_sigma_test: list[float]
    eval_draws: int
    eval_seeds: int
    output_dir: str
    sweep: dict | None
    raw: dict

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.raw, sort_keys=True).encode()).hexdigest()[:16]


def parse_config(raw: dict) -> ExperimentConfig:
    _check_keys(raw, _TOP_KEYS, "config")
    for key in ("model", "data", "train", "output_dir"):
        if key not in raw:
            raise ConfigError(f"missing required key {key!r}")

    _check_keys(raw["model"], _MODEL_KEYS, "model")
    try:
        model = ModelSpec(
            raw["model"]["input_dim"],
            tuple(raw["model"].get("hidden", [])),
            raw["model"]["num_classes"],
            raw["model"].get("activation", "relu"),
        )
    except (KeyError, ValueError) as e:
        raise ConfigError(f"bad model config: {e}") from e

    _check_keys(raw["data"], _DATA_KEYS, "data")
    if raw["data"].get("kind") not in ("blobs", "spirals", "idx"):
        raise ConfigError("data.kind must be blobs | spirals | idx")

    tr = dict(raw.get("train", {}))
    _check_keys(tr, _TRAIN_KEYS, "train")
    noise_raw = dict(tr.pop("noise", {}))
    _check_keys(noise_raw, _NOISE_KEYS, "train.noise")
    device_model = None
    if "device_table" in noise_raw:
        device_model = DeviceErrorModel.from_csv(noise_raw.pop("device_table"))
    sched_raw = dict(tr.pop("schedule", {}))
    _check_keys(sched_raw, _SCHEDULE_KEYS, "train.schedule")
    try:
        noise = NoiseSpec(device_model=device_model, **noise_raw)
        schedule = Schedule(**sched_raw)
        train = TrainConfig(noise=noise, schedule=schedule, **tr)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad train config: {e}") from e

    ev = dict(raw.get("eval", {}))
    _check_keys(ev, _EVAL_KEYS, "eval")
    sigma_test = [float(s) for s in ev.get("sigma_test", [0.0, 0.1])]
    draws = int(ev.get("draws", 10))
    seeds = int(ev.get("seeds", 3))
    if draws < 1 or seeds < 1:
        raise ConfigError("eval.draws and eval.seeds must be >= 1")

    sweep = raw.get("sweep")
    if sweep is not None:
        _check_keys(sweep, _SWEEP_KEYS, "sweep")

    return ExperimentConfig(model, dict(raw["data"]), train, sigma_test,
                            draws, seeds, str(raw["output_dir"]), sweep, raw)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as f:
            raw = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return parse_config(raw)
