import numpy as np
import pytest

import noisetrain.sharpness as sh
from conftest import random_batch
from noisetrain.data import Dataset
from noisetrain.network import FilterSlice, ModelSpec, ParamSet, init_params
from noisetrain.sharpness import (LossSliceSpec, SharpnessProbe,
                                  dataset_grad_fn, dataset_loss_fn,
                                  filter_normalized_direction, grad_cosine,
                                  hessian_trace, hessian_trace_fn, loss_slice,
                                  m_sharpness, path_distance)
from noisetrain.tensorcore import RngStream


def scalar_params(w):
    return ParamSet(np.atleast_1d(np.asarray(w, dtype=np.float64)),
                    [FilterSlice(0, np.size(w), "weight-filter")])


def patch_quadratic(monkeypatch):
    """L(w) = sum w_i^2 regardless of batch contents."""
    def fb(spec, params, batch, smoothing=0.0):
        w = params.theta
        return float(w @ w), 2.0 * w

    def fl(spec, params, batch, smoothing=0.0):
        w = params.theta
        return float(w @ w)

    monkeypatch.setattr(sh, "forward_backward", fb)
    monkeypatch.setattr(sh, "forward_loss", fl)


def one_batch_dataset():
    return Dataset(np.zeros((4, 1)), np.zeros(4, dtype=np.int64))


def test_m_sharpness_zero_magnitude(tiny_model, spirals_splits):
    spec, params = tiny_model
    train_ds, _, _ = spirals_splits
    probe = SharpnessProbe("ascent", 0.0, m=32)
    assert m_sharpness(spec, params, train_ds, probe, RngStream(0, "noise-eval")) == 0.0


def test_m_sharpness_ascent_quadratic(monkeypatch):
    patch_quadratic(monkeypatch)
    probe = SharpnessProbe("ascent", 0.1, m=4)
    val = m_sharpness(None, scalar_params(1.0), one_batch_dataset(), probe,
                      RngStream(0, "noise-eval"))
    assert val == pytest.approx(1.1**2 - 1.0, abs=1e-12)


def test_m_sharpness_average_quadratic_matches_expectation(monkeypatch):
    patch_quadratic(monkeypatch)
    # E[(w+eps)^2 - w^2] = sigma^2 for isotropic eps
    probe = SharpnessProbe("average", 0.1, m=4, num_samples=10**5, isotropic=True)
    val = m_sharpness(None, scalar_params(1.0), one_batch_dataset(), probe,
                      RngStream(2, "noise-eval"))
    assert val == pytest.approx(0.01, rel=0.05)


def test_m_sharpness_ascent_closed_form_on_diagonal_quadratic(monkeypatch):
    # L = 1/2 w^T A w with A = diag(1,2,3): sharpness at w along the
    # normalized gradient has the exact closed form rho*|g| + rho^2/2 ghat'A ghat
    a = np.array([1.0, 2.0, 3.0])

    def fb(spec, params, batch, smoothing=0.0):
        w = params.theta
        return float(0.5 * w @ (a * w)), a * w

    def fl(spec, params, batch, smoothing=0.0):
        w = params.theta
        return float(0.5 * w @ (a * w))

    monkeypatch.setattr(sh, "forward_backward", fb)
    monkeypatch.setattr(sh, "forward_loss", fl)
    w = np.array([1.0, -0.5, 0.25])
    g = a * w
    rho = 0.05
    ghat = g / np.linalg.norm(g)
    expected = rho * np.linalg.norm(g) + 0.5 * rho**2 * float(ghat @ (a * ghat))
    probe = SharpnessProbe("ascent", rho, m=4)
    val = m_sharpness(None, scalar_params(w), one_batch_dataset(), probe,
                      RngStream(0, "noise-eval"))
    assert val == pytest.approx(expected, abs=1e-12)
    assert val >= rho * np.linalg.norm(g)  # convex quadratic: above first order


def test_grad_cosine_zero_eps_is_one(tiny_model):
    spec, params = tiny_model
    batch = random_batch(spec, 16, seed=1)
    val = grad_cosine(spec, params, 0.0, "ascent", batch, RngStream(0, "noise-eval"))
    assert val == pytest.approx(1.0, abs=1e-12)


def test_grad_cosine_matches_dot_product_oracle(tiny_model):
    spec, params = tiny_model
    batch = random_batch(spec, 16, seed=2)
    from noisetrain.network import grad
    from noisetrain.perturb import NoiseSpec, sample_noise
    g1 = grad(spec, params, batch)
    eps = sample_noise(params, NoiseSpec("gaussian", 0.3), RngStream(3, "noise-eval"))
    g2 = grad(spec, ParamSet(params.theta + eps, params.partition), batch)
    oracle = float(g1 @ g2 / (np.linalg.norm(g1) * np.linalg.norm(g2)))
    val = grad_cosine(spec, params, 0.3, "average", batch, RngStream(3, "noise-eval"))
    assert -1.0 <= val <= 1.0
    assert val == pytest.approx(oracle, abs=1e-12)


def test_grad_cosine_zero_gradient_reports_missing(monkeypatch):
    patch_quadratic(monkeypatch)
    monkeypatch.setattr(sh, "grad", lambda *a, **k: np.zeros(1))
    val = grad_cosine(None, scalar_params(0.0), 0.1, "ascent", None,
                      RngStream(0, "noise-eval"))
    assert val is None


def test_path_distance():
    p = scalar_params(np.zeros(6))
    q = ParamSet(p.theta.copy(), p.partition)
    q.theta[0:2] = [3.0, 4.0]
    assert path_distance([p, p, p]) == 0.0
    assert path_distance([p, q]) == pytest.approx(5.0)
    with pytest.raises(ValueError):
        path_distance([p])
    rng = np.random.default_rng(4)
    pts = [scalar_params(rng.normal(size=20)) for _ in range(10)]
    oracle = sum(np.linalg.norm(b.theta - a.theta) for a, b in zip(pts, pts[1:]))
    assert path_distance(pts) == pytest.approx(oracle, rel=1e-14)


def test_hessian_trace_diagonal_quadratic():
    a = np.array([1.0, 2.0, 3.0])
    grad_fn = lambda w: a * w
    est = hessian_trace_fn(grad_fn, np.array([0.3, -0.4, 0.5]), 1000,
                           RngStream(5, "noise-eval"))
    assert est == pytest.approx(6.0, rel=0.02)


def test_hessian_trace_linear_loss_is_zero():
    grad_fn = lambda w: np.full_like(w, 1.7)
    est = hessian_trace_fn(grad_fn, np.zeros(10), 50, RngStream(6, "noise-eval"))
    assert abs(est) < 1e-8


def dense_hessian_trace(grad_fn, theta, h=1e-5):
    k = theta.size
    tr = 0.0
    for i in range(k):
        e = np.zeros(k)
        e[i] = h
        tr += (grad_fn(theta + e)[i] - grad_fn(theta - e)[i]) / (2 * h)
    return tr


def test_hessian_trace_tiny_mlp_matches_dense(spirals_splits):
    train_ds, _, _ = spirals_splits
    spec = ModelSpec(2, (6,), 3)  # 6*2+6 + 3*6+3 = 39 params
    params = init_params(spec, RngStream(12, "init"))
    grad_fn = dataset_grad_fn(spec, params, train_ds)
    exact = dense_hessian_trace(grad_fn, params.theta)
    est = hessian_trace(spec, params, train_ds, 1000, RngStream(13, "noise-eval"))
    assert est == pytest.approx(exact, rel=0.05)


def test_hessian_trace_is_linear_with_shared_probes():
    a = np.array([2.0, 5.0, 1.0, 0.5])
    b = np.array([1.0, -1.0, 3.0, 2.0])
    theta = np.array([0.1, 0.2, -0.3, 0.4])
    est_a = hessian_trace_fn(lambda w: a * w, theta, 64, RngStream(7, "noise-eval"))
    est_b = hessian_trace_fn(lambda w: b * w, theta, 64, RngStream(7, "noise-eval"))
    est_ab = hessian_trace_fn(lambda w: (a + b) * w, theta, 64, RngStream(7, "noise-eval"))
    assert est_ab == pytest.approx(est_a + est_b, abs=1e-10)


def test_loss_slice_center_and_norms(tiny_model, spirals_splits):
    spec, params = tiny_model
    train_ds, _, _ = spirals_splits
    rng = RngStream(8, "noise-eval")
    d = filter_normalized_direction(params, rng)
    for sl in params.partition:
        seg = slice(sl.offset, sl.offset + sl.length)
        assert np.linalg.norm(d[seg]) == pytest.approx(
            np.linalg.norm(params.theta[seg]), rel=1e-12)

    alphas, betas, grid = loss_slice(spec, params, train_ds,
                                     LossSliceSpec(grid=7, extent=0.5),
                                     RngStream(9, "noise-eval"))
    assert betas is None
    center = dataset_loss_fn(spec, params, train_ds)(params.theta)
    assert grid[3] == center


def test_loss_slice_symmetric_on_even_loss(monkeypatch):
    monkeypatch.setattr(sh, "dataset_loss_fn",
                        lambda *a, **k: (lambda th: float(th @ th)))
    params = scalar_params(np.zeros(5))
    alphas, betas, grid = loss_slice(None, params, None,
                                     LossSliceSpec(grid=9, extent=1.0,
                                                   filter_normalized=False),
                                     RngStream(10, "noise-eval"))
    np.testing.assert_allclose(grid, grid[::-1], atol=1e-10)


def test_loss_slice_2d_shape(tiny_model, spirals_splits):
    spec, params = tiny_model
    train_ds, _, _ = spirals_splits
    alphas, betas, grid = loss_slice(spec, params, train_ds,
                                     LossSliceSpec(direction_count=2, grid=5,
                                                   extent=0.2),
                                     RngStream(11, "noise-eval"))
    assert grid.shape == (5, 5)
    assert grid[2, 2] == pytest.approx(
        dataset_loss_fn(spec, params, train_ds)(params.theta), abs=1e-12)


def test_probe_validation():
    with pytest.raises(ValueError):
        SharpnessProbe("sideways", 0.1)
    with pytest.raises(ValueError):
        SharpnessProbe("ascent", -0.1)
    with pytest.raises(ValueError):
        LossSliceSpec(grid=4)
