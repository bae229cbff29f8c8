"""Noisy-inference evaluation: accuracy under K noise draws x S weight
seeds, with the two uncertainty numbers, plus the RMSE weight-error metric.

Reporting convention: mean accuracy, then the noise uncertainty (std across
noise draws, averaged over seeds), then the weight uncertainty (std across
seeds of the per-seed noise means). Sample std with the n-1 divisor; an
axis with a single entry contributes 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import ModelSpec, ParamSet, accuracy
from .perturb import NoiseSpec, sample_noise
from .tensorcore import RngStream

DEFAULT_DRAWS = 10   # K noise samples per model
DEFAULT_SEEDS = 3    # S independently trained models


@dataclass
class EvalReport:
    mean_acc: float
    noise_std: float
    weight_std: float
    per_cell: np.ndarray  # [S, K]
    sigma_test: float
    rmse: float | None = None

    def formatted(self, digits: int = 4) -> str:
        return (f"{self.mean_acc:.{digits}f} ± {self.noise_std:.{digits}f} "
                f"± {self.weight_std:.{digits}f}")

    def to_dict(self) -> dict:
        d = {
            "mean_acc": self.mean_acc,
            "noise_std": self.noise_std,
            "weight_std": self.weight_std,
            "sigma_test": self.sigma_test,
            "per_cell": self.per_cell.tolist(),
        }
        if self.rmse is not None:
            d["rmse"] = self.rmse
        return d


def noisy_accuracy(spec: ModelSpec, params: ParamSet, dataset, noise: NoiseSpec,
                   draws: int, rng: RngStream, batch_size: int = 256) -> np.ndarray:
    """K full-dataset accuracies, one whole-model noise realization each.
    params is left bitwise-unchanged."""
    if draws < 1:
        raise ValueError("draws must be >= 1")
    accs = np.empty(draws)
    for i in range(draws):
        eps = sample_noise(params, noise, rng)
        noisy = ParamSet(params.theta + eps, params.partition)
        accs[i] = accuracy(spec, noisy, dataset.batches(batch_size))
    return accs


def _sample_std(x: np.ndarray) -> float:
    if x.size <= 1 or np.all(x == x[0]):
        return 0.0
    return float(np.std(x, ddof=1))


def aggregate(per_cell: np.ndarray, sigma_test: float = 0.0,
              rmse: float | None = None) -> EvalReport:
    per_cell = np.asarray(per_cell, dtype=np.float64)
    if per_cell.ndim != 2 or per_cell.size == 0:
        raise ValueError("per_cell must be a nonempty S x K matrix")
    seed_means = per_cell.mean(axis=1)
    noise_std = float(np.mean([_sample_std(row) for row in per_cell]))
    weight_std = _sample_std(seed_means)
    return EvalReport(float(per_cell.mean()), noise_std, weight_std,
                      per_cell, sigma_test, rmse)


def evaluate(spec: ModelSpec, param_sets: list[ParamSet], dataset,
             noise: NoiseSpec, draws: int, rng_seed: int,
             rmse: float | None = None) -> EvalReport:
    """Full S x K protocol; each seed's draws come from an independent
    noise-eval substream so cells can run in any order."""
    cells = np.empty((len(param_sets), draws))
    for s, params in enumerate(param_sets):
        rng = RngStream(rng_seed, "noise-eval", replicate=s)
        cells[s] = noisy_accuracy(spec, params, dataset, noise, draws, rng)
    return aggregate(cells, sigma_test=noise.strength, rmse=rmse)


def weight_rmse(clean: ParamSet, perturbed: ParamSet) -> float:
    if clean.theta.shape != perturbed.theta.shape:
        raise ValueError("parameter shapes differ")
    diff = perturbed.theta - clean.theta
    return float(np.sqrt(np.mean(diff * diff)))
