"""PAC-Bayes bound machinery for noisy weights.

The complexity term h is the closed form

    h = sqrt( ( k/4 * ln(1 + ||w||^2 / (k sigma^2))
               + 1/4 + ln(n / delta) + 2 ln(6n + 3k) ) / (n - 1) )

added to the Monte-Carlo expected perturbed training loss. The theorem's
perturbation is plain isotropic N(0, sigma^2 I); the filter-scaled variant
used in training is available behind a flag but is not the default here.
Natural logarithms throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .network import ModelSpec, ParamSet
from .perturb import NoiseSpec, sample_noise
from .sharpness import dataset_loss_fn, hessian_trace, isotropic_noise
from .tensorcore import RngStream


@dataclass(frozen=True)
class BoundInputs:
    k: int
    n: int
    delta: float
    w_norm_sq: float
    sigma: float

    def __post_init__(self):
        if self.k < 1 or self.n < 2:
            raise ValueError("require k >= 1 and n >= 2")
        if not 0 < self.delta < 1:
            raise ValueError("delta must be in (0, 1)")
        if self.sigma <= 0 or self.w_norm_sq < 0:
            raise ValueError("require sigma > 0 and w_norm_sq >= 0")


def h_term(inp: BoundInputs) -> float:
    num = (inp.k / 4.0 * math.log1p(inp.w_norm_sq / (inp.k * inp.sigma ** 2))
           + 0.25
           + math.log(inp.n / inp.delta)
           + 2.0 * math.log(6 * inp.n + 3 * inp.k))
    return math.sqrt(num / (inp.n - 1))


def expected_perturbed_loss(spec: ModelSpec, params: ParamSet, dataset,
                            sigma: float, mc_samples: int, rng: RngStream,
                            smoothing: float = 0.0,
                            isotropic: bool = True) -> tuple[float, float]:
    """Monte-Carlo (mean, standard error) of E[L_S(w + eps)]."""
    if mc_samples < 1:
        raise ValueError("mc_samples must be >= 1")
    loss_fn = dataset_loss_fn(spec, params, dataset, smoothing)
    vals = np.empty(mc_samples)
    spec_noise = NoiseSpec("gaussian", sigma)
    for i in range(mc_samples):
        if isotropic:
            eps = isotropic_noise(params, sigma, rng)
        else:
            eps = sample_noise(params, spec_noise, rng)
        vals[i] = loss_fn(params.theta + eps)
    se = float(np.std(vals, ddof=1) / math.sqrt(mc_samples)) if mc_samples > 1 else 0.0
    return float(vals.mean()), se


def bound_rhs(spec: ModelSpec, params: ParamSet, dataset, inp: BoundInputs,
              mc_samples: int, rng: RngStream, smoothing: float = 0.0,
              isotropic: bool = True) -> dict:
    """Right-hand side of the noisy PAC-Bayes bound: expected perturbed
    empirical loss plus the h-term."""
    mean, se = expected_perturbed_loss(spec, params, dataset, inp.sigma,
                                       mc_samples, rng, smoothing, isotropic)
    h = h_term(inp)
    return {
        "expected_loss": mean,
        "mc_stderr": se,
        "h_term": h,
        "total": mean + h,
    }


def taylor_check_fn(loss_fn, theta: np.ndarray, sigma: float, trace: float,
                    mc_samples: int, rng: RngStream) -> tuple[float, float, float]:
    """Compare MC E[L(w+eps)] (isotropic eps) with the second-order
    prediction L(w) + sigma^2/2 * tr(H). Returns (lhs, rhs, |gap|)."""
    base = loss_fn(theta)
    if sigma == 0.0:
        return base, base, 0.0
    k = theta.size
    vals = np.empty(mc_samples)
    for i in range(mc_samples):
        vals[i] = loss_fn(theta + sigma * rng.standard_normal(k))
    lhs = float(vals.mean())
    rhs = base + 0.5 * sigma ** 2 * trace
    return lhs, rhs, abs(lhs - rhs)


def taylor_check(spec: ModelSpec, params: ParamSet, dataset, sigma: float,
                 mc_samples: int, rng: RngStream, smoothing: float = 0.0,
                 trace: float | None = None,
                 trace_probes: int = 200) -> tuple[float, float, float]:
    if trace is None:
        trace = hessian_trace(spec, params, dataset, trace_probes, rng, smoothing)
    loss_fn = dataset_loss_fn(spec, params, dataset, smoothing)
    return taylor_check_fn(loss_fn, params.theta, sigma, trace, mc_samples, rng)


def monotone_sigma_check(spec: ModelSpec, params: ParamSet, dataset,
                         sigmas, mc_samples: int, rng: RngStream,
                         smoothing: float = 0.0, isotropic: bool = True,
                         z: float = 2.0) -> list[dict]:
    """MC expected loss per sigma (ascending); each entry after the first
    reports whether it exceeds its predecessor outside the combined
    z-sigma MC confidence interval."""
    sigmas = list(sigmas)
    if len(sigmas) < 1 or any(b <= a for a, b in zip(sigmas, sigmas[1:])):
        raise ValueError("sigmas must be ascending and nonempty")
    out = []
    for s in sigmas:
        if s == 0.0:
            loss_fn = dataset_loss_fn(spec, params, dataset, smoothing)
            mean, se = loss_fn(params.theta), 0.0
        else:
            mean, se = expected_perturbed_loss(spec, params, dataset, s,
                                               mc_samples, rng, smoothing, isotropic)
        rec = {"sigma": s, "loss": mean, "stderr": se, "increased": None}
        if out:
            prev = out[-1]
            margin = z * math.hypot(se, prev["stderr"])
            rec["increased"] = mean - prev["loss"] > margin
        out.append(rec)
    return out
