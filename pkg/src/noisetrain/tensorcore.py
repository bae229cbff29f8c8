"""Deterministic random streams and elementary numeric helpers.

Everything downstream works on flat float64 numpy arrays. All randomness
flows through named RngStream objects so that, e.g., drawing extra noise
for evaluation can never shift the data-shuffle sequence of a training run.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

STREAM_IDS = {
    "data-shuffle": 1,
    "noise-train": 2,
    "noise-eval": 3,
    "init": 4,
}

# uniforms are drawn as integers in [1, 2^53) so they live strictly inside
# (0, 1) and inverse-CDF transforms never hit 0 or 1
_U_DENOM = float(1 << 53)


class NumericError(RuntimeError):
    """Non-finite value produced where a finite one is required."""


class RngStream:
    """Named, seedable random stream backed by counter-based Philox.

    Same (seed, stream_id, replicate) gives an identical draw sequence on
    every platform. Streams with different ids or replicates are
    statistically independent. Not shareable across threads; fork a
    substream per replicate instead.
    """

    def __init__(self, seed: int, stream_id: str, replicate: int = 0):
        if stream_id not in STREAM_IDS:
            raise ValueError(f"unknown stream_id {stream_id!r}")
        self.seed = seed
        self.stream_id = stream_id
        self.replicate = replicate
        ss = np.random.SeedSequence(seed, spawn_key=(STREAM_IDS[stream_id], replicate))
        self._gen = np.random.Generator(np.random.Philox(ss))

    def fork(self, replicate: int) -> "RngStream":
        """Independent substream for a parallel replicate."""
        return RngStream(self.seed, self.stream_id, replicate)

    def uniform(self, n: int) -> np.ndarray:
        """n uniforms strictly inside (0, 1); always consumes exactly n draws."""
        return self._gen.integers(1, 1 << 53, size=n).astype(np.float64) / _U_DENOM

    def standard_normal(self, n: int) -> np.ndarray:
        """n N(0,1) draws via the inverse-CDF transform (frozen algorithm)."""
        return ndtri(self.uniform(n))

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


def normal_sample(rng: RngStream, n: int, mean: float, std: float) -> np.ndarray:
    """n i.i.d. N(mean, std^2) draws; std=0 short-circuits to the exact
    constant vector without consuming any randomness."""
    if std < 0:
        raise ValueError(f"std must be >= 0, got {std}")
    if std == 0.0:
        return np.full(n, float(mean))
    return mean + std * rng.standard_normal(n)


def laplace_sample(rng: RngStream, n: int, scale: float) -> np.ndarray:
    """n i.i.d. Laplace(0, scale) draws by inverse CDF; variance 2*scale^2."""
    if scale < 0:
        raise ValueError(f"scale must be >= 0, got {scale}")
    if scale == 0.0:
        return np.zeros(n)
    return laplace_unit_from_uniform(rng.uniform(n)) * scale


def laplace_unit_from_uniform(u: np.ndarray) -> np.ndarray:
    """Inverse CDF of Laplace(0, 1) applied to u in (0, 1); u=0.5 maps to 0."""
    half = u - 0.5
    return -np.sign(half) * np.log1p(-2.0 * np.abs(half))


def l2_norm(v: np.ndarray) -> float:
    return float(np.linalg.norm(v))


def check_finite(arr: np.ndarray, context: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {context}")
    return arr
