"""Noise distributions, the SAM ascent step, and perturbation schedules.

Interpretation note on the scaled-Gaussian noise model: the noise standard
deviation is strength * max_j|w_j| over the filter slice (std proportional
to the weight magnitude, so the error is a fixed fraction of the weights
and cannot be removed by rescaling). This is the single most consequential
modeling choice in the codebase; every sampler below follows it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .network import ParamSet, filter_max_abs
from .tensorcore import RngStream, l2_norm, laplace_unit_from_uniform

NOISE_FAMILIES = ("gaussian", "laplace", "device")
SCHEDULE_KINDS = ("constant", "linear", "quadratic")


@dataclass(frozen=True)
class DeviceErrorModel:
    """Piecewise-linear lookup from weight value to perturbation std.

    A simplified stand-in for measured analog-device programming error;
    std is clamped at the table endpoints.
    """
    weights: tuple[float, ...]
    stds: tuple[float, ...]

    def __post_init__(self):
        if len(self.weights) == 0 or len(self.weights) != len(self.stds):
            raise ValueError("table must be nonempty with matching columns")
        if any(s < 0 for s in self.stds):
            raise ValueError("std must be >= 0 at every knot")
        if any(b <= a for a, b in zip(self.weights, self.weights[1:])):
            raise ValueError("knot weights must be strictly increasing")

    def std_at(self, w: np.ndarray) -> np.ndarray:
        return np.interp(w, self.weights, self.stds)

    @classmethod
    def from_csv(cls, path) -> "DeviceErrorModel":
        ws, ss = [], []
        with open(path, newline="") as f:
            for row in csv.reader(f):
                if not row or row[0].lstrip().startswith("#"):
                    continue
                ws.append(float(row[0]))
                ss.append(float(row[1]))
        return cls(tuple(ws), tuple(ss))


@dataclass(frozen=True)
class NoiseSpec:
    family: str = "gaussian"
    strength: float = 0.0  # sigma (gaussian), b (laplace), ignored for device
    per_filter_scaling: bool = True
    device_model: DeviceErrorModel | None = None

    def __post_init__(self):
        if self.family not in NOISE_FAMILIES:
            raise ValueError(f"family must be one of {NOISE_FAMILIES}")
        if self.strength < 0:
            raise ValueError("strength must be >= 0")
        if self.family == "device" and self.device_model is None:
            raise ValueError("device family requires a device_model")

    def with_strength(self, strength: float) -> "NoiseSpec":
        return NoiseSpec(self.family, strength, self.per_filter_scaling, self.device_model)


@dataclass(frozen=True)
class Schedule:
    """Warm-up of perturbation strength over iterations, parameterized on
    the squared strength: quadratic means strength^2 grows as
    (min(t,T*)/T*)^2, linear means strength^2 grows as min(t,T*)/T*."""
    kind: str = "constant"
    max_strength: float = 0.0
    warmup_iters: int = 1

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ValueError(f"kind must be one of {SCHEDULE_KINDS}")
        if self.max_strength < 0:
            raise ValueError("max_strength must be >= 0")
        if self.kind != "constant" and self.warmup_iters < 1:
            raise ValueError("warmup_iters must be >= 1")


def strength_at(schedule: Schedule, t: int) -> float:
    if t < 0:
        raise ValueError("t must be >= 0")
    if schedule.kind == "constant":
        return schedule.max_strength
    frac = min(t, schedule.warmup_iters) / schedule.warmup_iters
    sq = schedule.max_strength ** 2
    if schedule.kind == "quadratic":
        sq *= frac * frac
    else:  # linear
        sq *= frac
    return float(np.sqrt(sq))


def sample_noise(params: ParamSet, spec: NoiseSpec, rng: RngStream) -> np.ndarray:
    """One perturbation over the whole flat parameter vector.

    Standard draws are positionally fixed across the vector, so rescaling
    one filter's weights under the same seed rescales exactly that filter's
    noise and leaves every other entry untouched.
    """
    k = params.theta.size
    if spec.family == "device":
        return device_noise(params, spec.device_model, rng)
    if spec.strength == 0.0:
        return np.zeros(k)
    scale = np.empty(k)
    for sl in params.partition:
        scale[sl.offset:sl.offset + sl.length] = spec.strength * filter_max_abs(params, sl)
    if spec.family == "gaussian":
        return rng.standard_normal(k) * scale
    return laplace_unit_from_uniform(rng.uniform(k)) * scale


def device_noise(params: ParamSet, model: DeviceErrorModel, rng: RngStream) -> np.ndarray:
    std = model.std_at(params.theta)
    return rng.standard_normal(params.theta.size) * std


def sam_ascent(gradient: np.ndarray, rho: float) -> np.ndarray:
    """Gradient-ascent perturbation of exact length rho; zero if the
    gradient vanishes or rho is zero."""
    if rho < 0:
        raise ValueError("rho must be >= 0")
    norm = l2_norm(gradient)
    if rho == 0.0 or norm == 0.0:
        return np.zeros_like(gradient)
    return (rho / norm) * gradient
