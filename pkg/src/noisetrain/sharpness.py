"""Loss-landscape instrumentation.

Two sharpness flavors share one code path: the ascent kind perturbs along
the normalized batch gradient (what SAM's update sees), the average kind
perturbs with the same scaled random noise the RWP optimizer trains with.
Hessian quantities come from gradient finite differences so the
differentiation core stays first-order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import ModelSpec, ParamSet, forward_backward, forward_loss, grad
from .perturb import NoiseSpec, sam_ascent, sample_noise
from .tensorcore import RngStream, l2_norm


@dataclass(frozen=True)
class SharpnessProbe:
    direction_kind: str = "ascent"   # "ascent" | "average"
    magnitude: float = 0.05          # rho or sigma
    m: int = 64                      # minibatch size
    num_samples: int = 8             # average kind only
    isotropic: bool = False          # plain N(0, sigma^2 I) instead of filter-scaled

    def __post_init__(self):
        if self.direction_kind not in ("ascent", "average"):
            raise ValueError("direction_kind must be 'ascent' or 'average'")
        if self.magnitude < 0 or self.m < 1 or self.num_samples < 1:
            raise ValueError("require magnitude >= 0, m >= 1, num_samples >= 1")


@dataclass(frozen=True)
class LossSliceSpec:
    direction_count: int = 1
    grid: int = 21
    extent: float = 1.0
    filter_normalized: bool = True

    def __post_init__(self):
        if self.direction_count not in (1, 2):
            raise ValueError("direction_count must be 1 or 2")
        if self.grid < 3 or self.grid % 2 == 0:
            raise ValueError("grid must be odd and >= 3")


def isotropic_noise(params: ParamSet, sigma: float, rng: RngStream) -> np.ndarray:
    """Plain N(0, sigma^2 I) perturbation (theorem-faithful mode)."""
    if sigma == 0.0:
        return np.zeros_like(params.theta)
    return sigma * rng.standard_normal(params.theta.size)


def _probe_noise(params: ParamSet, probe: SharpnessProbe, rng: RngStream) -> np.ndarray:
    if probe.isotropic:
        return isotropic_noise(params, probe.magnitude, rng)
    return sample_noise(params, NoiseSpec("gaussian", probe.magnitude), rng)


def m_sharpness(spec: ModelSpec, params: ParamSet, dataset,
                probe: SharpnessProbe, rng: RngStream,
                smoothing: float = 0.0) -> float:
    """Mean over size-m minibatches of L(w + eps) - L(w)."""
    if probe.magnitude == 0.0:
        return 0.0
    vals = []
    for batch in dataset.batches(probe.m):
        base, g = forward_backward(spec, params, batch, smoothing)
        if probe.direction_kind == "ascent":
            eps = sam_ascent(g, probe.magnitude)
            shifted = ParamSet(params.theta + eps, params.partition)
            vals.append(forward_loss(spec, shifted, batch, smoothing) - base)
        else:
            acc = 0.0
            for _ in range(probe.num_samples):
                eps = _probe_noise(params, probe, rng)
                shifted = ParamSet(params.theta + eps, params.partition)
                acc += forward_loss(spec, shifted, batch, smoothing) - base
            vals.append(acc / probe.num_samples)
    if not vals:
        raise ValueError("dataset is empty")
    return float(np.mean(vals))


def grad_cosine(spec: ModelSpec, params: ParamSet, magnitude: float, kind: str,
                batch, rng: RngStream, smoothing: float = 0.0) -> float | None:
    """cos angle between grad at w and grad at the perturbed point; None when
    either gradient vanishes."""
    g1 = grad(spec, params, batch, smoothing)
    if kind == "ascent":
        eps = sam_ascent(g1, magnitude)
    else:
        eps = sample_noise(params, NoiseSpec("gaussian", magnitude), rng)
    shifted = ParamSet(params.theta + eps, params.partition)
    g2 = grad(spec, shifted, batch, smoothing)
    n1, n2 = l2_norm(g1), l2_norm(g2)
    if n1 == 0.0 or n2 == 0.0:
        return None
    return float(np.dot(g1, g2)) / (n1 * n2)


def path_distance(checkpoints: list[ParamSet]) -> float:
    """Total parameter-space distance along a checkpoint trajectory."""
    if len(checkpoints) < 2:
        raise ValueError("need at least 2 checkpoints")
    total = 0.0
    for a, b in zip(checkpoints, checkpoints[1:]):
        if a.theta.shape != b.theta.shape:
            raise ValueError("checkpoint shapes differ")
        total += l2_norm(b.theta - a.theta)
    return total


def hessian_trace_fn(grad_fn, theta: np.ndarray, probes: int, rng: RngStream,
                     h_rel: float = 1e-4) -> float:
    """Hutchinson trace estimate with Rademacher probes; Hessian-vector
    products by central difference of gradients."""
    if probes < 1:
        raise ValueError("probes must be >= 1")
    k = theta.size
    h = h_rel * max(1.0, l2_norm(theta) / np.sqrt(k))
    total = 0.0
    for _ in range(probes):
        z = np.where(rng.uniform(k) < 0.5, -1.0, 1.0)
        hz = (grad_fn(theta + h * z) - grad_fn(theta - h * z)) / (2.0 * h)
        total += float(np.dot(z, hz))
    est = total / probes
    if not np.isfinite(est):
        raise ValueError("non-finite trace estimate")
    return est


def dataset_grad_fn(spec: ModelSpec, params: ParamSet, dataset,
                    smoothing: float = 0.0, batch_size: int = 256):
    """Full-dataset mean-loss gradient as a closure over flat theta."""
    n = len(dataset)

    def g(theta: np.ndarray) -> np.ndarray:
        p = ParamSet(theta, params.partition)
        acc = np.zeros_like(theta)
        for batch in dataset.batches(batch_size):
            acc += batch.labels.size * grad(spec, p, batch, smoothing)
        return acc / n

    return g


def dataset_loss_fn(spec: ModelSpec, params: ParamSet, dataset,
                    smoothing: float = 0.0, batch_size: int = 256):
    n = len(dataset)

    def f(theta: np.ndarray) -> float:
        p = ParamSet(theta, params.partition)
        return sum(batch.labels.size * forward_loss(spec, p, batch, smoothing)
                   for batch in dataset.batches(batch_size)) / n

    return f


def hessian_trace(spec: ModelSpec, params: ParamSet, dataset, probes: int,
                  rng: RngStream, smoothing: float = 0.0) -> float:
    return hessian_trace_fn(dataset_grad_fn(spec, params, dataset, smoothing),
                            params.theta, probes, rng)


def filter_normalized_direction(params: ParamSet, rng: RngStream) -> np.ndarray:
    """Random direction with every filter slice rescaled to the norm of the
    matching slice of the weights."""
    d = rng.standard_normal(params.theta.size)
    for sl in params.partition:
        seg = slice(sl.offset, sl.offset + sl.length)
        dn = l2_norm(d[seg])
        wn = l2_norm(params.theta[seg])
        d[seg] = d[seg] * (wn / dn) if dn > 0 else 0.0
    return d


def loss_slice(spec: ModelSpec, params: ParamSet, dataset,
               slice_spec: LossSliceSpec, rng: RngStream,
               smoothing: float = 0.0):
    """Loss on a 1-D or 2-D grid around w along random (optionally
    filter-normalized) directions. Returns (alphas, betas_or_None, grid)."""
    loss_fn = dataset_loss_fn(spec, params, dataset, smoothing)
    dirs = []
    for _ in range(slice_spec.direction_count):
        if slice_spec.filter_normalized:
            dirs.append(filter_normalized_direction(params, rng))
        else:
            d = rng.standard_normal(params.theta.size)
            dirs.append(d / l2_norm(d))
    alphas = np.linspace(-slice_spec.extent, slice_spec.extent, slice_spec.grid)
    alphas[slice_spec.grid // 2] = 0.0  # center cell is exactly L(w)
    if slice_spec.direction_count == 1:
        grid = np.array([loss_fn(params.theta + a * dirs[0]) for a in alphas])
        return alphas, None, grid
    betas = alphas.copy()
    grid = np.empty((slice_spec.grid, slice_spec.grid))
    for i, a in enumerate(alphas):
        for j, b in enumerate(betas):
            grid[i, j] = loss_fn(params.theta + a * dirs[0] + b * dirs[1])
    return alphas, betas, grid
