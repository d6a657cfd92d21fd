"""Reference forecasters: DLinear, FCI ridge regression and seasonal naive."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import InsufficientDataError, ShapeError, SingularSystemError


def moving_average(x, kernel=25):
    """Centered moving average along axis 1 of ``(B, L, C)``, edges padded by repetition."""
    if kernel % 2 == 0:
        raise ValueError("moving-average kernel must be odd")
    half = (kernel - 1) // 2
    front = x[:, :1, :].expand(-1, half, -1)
    back = x[:, -1:, :].expand(-1, half, -1)
    padded = torch.cat([front, x, back], dim=1)
    return padded.unfold(1, kernel, 1).mean(dim=-1)


def decompose(x, kernel=25):
    """Return ``(seasonal, trend)`` with ``seasonal + trend == x``."""
    trend = moving_average(x, kernel)
    return x - trend, trend


class DLinear(nn.Module):
    """Decomposition-linear forecaster, channel independent.

    Each target channel's window is split into trend and seasonal parts and
    each part goes through a shared ``w -> h`` linear map.  With ``use_fci``
    a further linear map reads the flattened future covariates and adds the
    result to every channel.  Past covariates are ignored.
    """

    def __init__(self, w, h, n_targets, n_future=0, use_fci=False, kernel=25):
        super().__init__()
        self.w, self.h, self.n_targets, self.kernel = w, h, n_targets, kernel
        self.seasonal = nn.Linear(w, h)
        self.trend = nn.Linear(w, h)
        self.fci = nn.Linear(n_future * h, h) if use_fci and n_future else None

    def forward(self, batch):
        x = batch.past_targets
        if x.dim() != 3 or x.shape[1] != self.w:
            raise ShapeError(f"DLinear expects (batch, {self.w}, channels), got {tuple(x.shape)}")
        seasonal, trend = decompose(x, self.kernel)
        out = self.seasonal(seasonal.transpose(1, 2)) + self.trend(trend.transpose(1, 2))
        if self.fci is not None:
            out = out + self.fci(batch.future_context.flatten(1)).unsqueeze(1)
        return out.transpose(1, 2)

    def zero_(self):
        for p in self.parameters():
            nn.init.zeros_(p)
        return self


def build_dlinear(w, h, n_targets, n_future=0, use_fci=False, kernel=25, seed=0, dtype=torch.float32):
    torch.manual_seed(seed)
    return DLinear(w, h, n_targets, n_future, use_fci, kernel).to(dtype)


# ---------------------------------------------------------------- ridge


@dataclass(frozen=True)
class RidgeParams:
    """Per-horizon-step linear map from future covariates (+ time features).

    ``coef`` has shape ``(h, n_features, D_t)`` and ``intercept`` ``(h, D_t)``.
    """

    coef: np.ndarray
    intercept: np.ndarray
    lam: float
    use_time: bool = True


def ridge_features(future_context, future_time=None):
    """Stack ``(N, h, D_c^f)`` covariates with optional ``(N, h, 8)`` time features."""
    parts = [np.asarray(future_context, dtype=np.float64)]
    if future_time is not None:
        parts.append(np.asarray(future_time, dtype=np.float64))
    return np.concatenate(parts, axis=-1)


def ridge_fit(features, targets, lam=1e-3, use_time=True) -> RidgeParams:
    """Closed-form ridge regression, fitted separately for every horizon step.

    ``features`` is ``(N, h, F)``, ``targets`` ``(N, h, D_t)``.  The
    intercept is not penalized: the fit solves the normal equations of the
    centered problem ``(XcᵀXc + λI) W = XcᵀYc``.
    """
    X = np.asarray(features, dtype=np.float64)
    Y = np.asarray(targets, dtype=np.float64)
    if lam < 0:
        raise ValueError("lam must be >= 0")
    if X.ndim != 3 or Y.ndim != 3 or X.shape[:2] != Y.shape[:2]:
        raise ShapeError(f"features {X.shape} and targets {Y.shape} do not align")
    n, h, f = X.shape
    if n < 2:
        raise InsufficientDataError("ridge needs at least 2 training windows")
    coef = np.empty((h, f, Y.shape[2]))
    intercept = np.empty((h, Y.shape[2]))
    for s in range(h):
        xm, ym = X[:, s].mean(axis=0), Y[:, s].mean(axis=0)
        Xc, Yc = X[:, s] - xm, Y[:, s] - ym
        A = Xc.T @ Xc + lam * np.eye(f)
        if lam == 0 and np.linalg.matrix_rank(A) < f:
            raise SingularSystemError(f"normal matrix is singular at horizon step {s}; use lam > 0")
        try:
            W = np.linalg.solve(A, Xc.T @ Yc)
        except np.linalg.LinAlgError as exc:
            raise SingularSystemError(f"normal matrix is singular at horizon step {s}; use lam > 0") from exc
        coef[s] = W
        intercept[s] = ym - xm @ W
    return RidgeParams(coef, intercept, lam, use_time)


def ridge_forecast(params: RidgeParams, features):
    """Apply fitted ridge maps to ``(N, h, F)`` (or a single ``(h, F)``) features."""
    X = np.asarray(features, dtype=np.float64)
    single = X.ndim == 2
    if single:
        X = X[None]
    if X.shape[1:] != params.coef.shape[:2]:
        raise ShapeError(f"features {X.shape[1:]} do not match fitted {params.coef.shape[:2]}")
    out = np.einsum("nsf,sfd->nsd", X, params.coef) + params.intercept
    return out[0] if single else out


# ---------------------------------------------------------------- seasonal naive


def seasonal_naive(past_targets, h, period=168):
    """Repeat the last observed season: ``forecast[s] = past[w - period + s mod period]``.

    Accepts ``(w, D)`` or batched ``(N, w, D)`` input.
    """
    x = np.asarray(past_targets, dtype=np.float64)
    w = x.shape[-2]
    if w < period:
        raise InsufficientDataError(f"seasonal naive needs w >= period ({w} < {period})")
    idx = w - period + np.arange(h) % period
    return x[..., idx, :]
