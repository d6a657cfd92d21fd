import numpy as np
import pytest
import torch

from fci_forecast.baselines import (
    DLinear,
    decompose,
    moving_average,
    ridge_features,
    ridge_fit,
    ridge_forecast,
    seasonal_naive,
)
from fci_forecast.errors import InsufficientDataError, ShapeError, SingularSystemError
from fci_forecast.model import Batch
from fci_forecast.training import TrainConfig, train


def series_batch(x, w, h, stride=1, future=None):
    """Windows of a 1-D series as a :class:`Batch` (time features zero)."""
    x = torch.as_tensor(x, dtype=torch.float64)
    origins = range(w, len(x) - h + 1, stride)
    past = torch.stack([x[t - w:t] for t in origins])[..., None]
    target = torch.stack([x[t:t + h] for t in origins])[..., None]
    n = len(past)
    fut = torch.zeros(n, h, 0, dtype=torch.float64) if future is None else future
    return Batch(past, torch.zeros(n, w, 0, dtype=torch.float64), torch.zeros(n, w, 8, dtype=torch.float64),
                 fut, torch.zeros(n, h, 8, dtype=torch.float64), target)


# ---------------------------------------------------------------- DLinear


def test_decomposition_reconstructs():
    x = torch.randn(4, 30, 2, dtype=torch.float64)
    s, t = decompose(x, 7)
    torch.testing.assert_close(s + t, x)
    assert moving_average(torch.ones(1, 10, 1), 5).eq(1).all()
    with pytest.raises(ValueError):
        moving_average(x, 4)


def test_zero_dlinear_gives_zero():
    model = DLinear(24, 12, 1, n_future=3, use_fci=True).double().zero_()
    b = series_batch(np.random.default_rng(0).normal(size=60), 24, 12, future=torch.ones(25, 12, 3, dtype=torch.float64))
    assert torch.count_nonzero(model(b)) == 0


def test_dlinear_shape_check():
    with pytest.raises(ShapeError):
        DLinear(24, 12, 1)(series_batch(np.zeros(60), 20, 12))


def test_dlinear_learns_a_periodic_signal():
    t = np.arange(600)
    x = np.sin(2 * np.pi * t / 24) + 0.5 * np.cos(2 * np.pi * t / 12)
    batch = series_batch(x, 48, 24)
    torch.manual_seed(0)
    model = DLinear(48, 24, 1).double()
    cfg = TrainConfig(batch_size=32, max_epochs=150, lr=1e-2, warmup_steps=10, early_stop=150, precision=64)
    train(model, batch, batch, cfg)
    with torch.no_grad():
        mae = (model(batch) - batch.target).abs().mean().item()
    assert mae < 1e-3


def test_dlinear_fci_head_uses_future_context():
    model = DLinear(8, 4, 1, n_future=2, use_fci=True).double()
    b = series_batch(np.zeros(20), 8, 4, future=torch.randn(9, 4, 2, dtype=torch.float64))
    assert not torch.allclose(model(b), model(series_batch(np.zeros(20), 8, 4, future=torch.zeros(9, 4, 2, dtype=torch.float64))))


# ---------------------------------------------------------------- ridge


def test_ridge_recovers_exact_linear_map():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(200, 4, 3))
    W = rng.normal(size=(4, 3, 1))
    b = rng.normal(size=(4, 1))
    Y = np.einsum("nsf,sfd->nsd", X, W) + b
    p = ridge_fit(X, Y, lam=0.0)
    np.testing.assert_allclose(p.coef, W, atol=1e-6)
    np.testing.assert_allclose(p.intercept, b, atol=1e-6)
    np.testing.assert_allclose(ridge_forecast(p, X[0]), Y[0], atol=1e-6)


def test_huge_penalty_shrinks_to_the_mean():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(100, 2, 3))
    Y = X.sum(-1, keepdims=True) + 5.0
    p = ridge_fit(X, Y, lam=1e12)
    assert np.abs(p.coef).max() < 1e-8
    np.testing.assert_allclose(ridge_forecast(p, X), np.broadcast_to(Y.mean(0), Y.shape), atol=1e-6)


def test_singular_system_without_penalty():
    X = np.random.default_rng(2).normal(size=(10, 2, 3))
    X[..., 1] = 2 * X[..., 0]  # collinear columns
    with pytest.raises(SingularSystemError):
        ridge_fit(X, np.zeros((10, 2, 1)), lam=0.0)
    ridge_fit(X, np.zeros((10, 2, 1)), lam=1e-3)  # the penalty fixes it


def test_ridge_input_checks():
    with pytest.raises(ShapeError):
        ridge_fit(np.zeros((5, 2, 3)), np.zeros((5, 3, 1)))
    with pytest.raises(InsufficientDataError):
        ridge_fit(np.zeros((1, 2, 3)), np.zeros((1, 2, 1)))
    assert ridge_features(np.zeros((2, 3, 4)), np.zeros((2, 3, 8))).shape == (2, 3, 12)


# ---------------------------------------------------------------- seasonal naive


def test_weekly_periodic_input_is_exact():
    week = np.random.default_rng(0).normal(size=168)
    x = np.tile(week, 3)[:, None]
    w, h = 336, 24
    for t in range(w, len(x) - h + 1, 24):
        np.testing.assert_array_equal(seasonal_naive(x[t - w:t], h), x[t:t + h])


def test_constant_input_constant_forecast():
    assert np.all(seasonal_naive(np.full((200, 2), 7.0), 24) == 7.0)


def test_naive_needs_a_full_season():
    with pytest.raises(InsufficientDataError):
        seasonal_naive(np.zeros((100, 1)), 24)
    # shorter periods work and the forecast repeats within the horizon
    out = seasonal_naive(np.arange(10.0)[:, None], 6, period=4)
    assert out[:, 0].tolist() == [6, 7, 8, 9, 6, 7]
