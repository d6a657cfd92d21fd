"""Token embeddings for the encoder (past) and decoder (future context).

Two strategies are provided:

* STF flattens the multivariate series so that every (variable, step) pair
  becomes one token.  A token concatenates the scalar value with projected
  context and projected time features, and a final linear map lifts it to
  ``d_model``.
* TST keeps one token per time step and sums same-padded 1-D convolutions
  over value and context channels.

Both add a learned positional table.  Decoder tokens never see target values.
"""
from __future__ import annotations

import math

import numpy as np
import pandas as pd
import torch
from torch import nn

from .errors import ShapeError

N_TIME_FEATURES = 8
# hour-of-day, day-of-week, calendar week, month
TIME_PERIODS = (24.0, 7.0, 53.0, 12.0)


def temporal_features(timestamps) -> np.ndarray:
    """Cyclical sin/cos encoding of hour, weekday, ISO week and month (``L x 8``)."""
    idx = pd.DatetimeIndex(np.asarray(timestamps, dtype="datetime64[ns]"))
    values = (
        idx.hour.to_numpy(dtype=np.float64),
        idx.dayofweek.to_numpy(dtype=np.float64),
        idx.isocalendar().week.to_numpy(dtype=np.float64),
        idx.month.to_numpy(dtype=np.float64),
    )
    out = np.empty((len(idx), N_TIME_FEATURES))
    for k, (v, period) in enumerate(zip(values, TIME_PERIODS)):
        angle = 2.0 * np.pi * v / period
        out[:, 2 * k] = np.sin(angle)
        out[:, 2 * k + 1] = np.cos(angle)
    return out


def _linear(n_in, n_out, bias=True):
    layer = nn.Linear(n_in, n_out, bias=bias)
    bound = math.sqrt(1.0 / n_in)
    nn.init.uniform_(layer.weight, -bound, bound)
    if bias:
        nn.init.uniform_(layer.bias, -bound, bound)
    return layer


def _conv(n_in, n_out, kernel=3):
    layer = nn.Conv1d(n_in, n_out, kernel, padding=kernel // 2, padding_mode="zeros")
    bound = math.sqrt(1.0 / (n_in * kernel))
    nn.init.uniform_(layer.weight, -bound, bound)
    nn.init.uniform_(layer.bias, -bound, bound)
    return layer


def _check(name, tensor, length, width):
    if tensor.dim() != 3 or tensor.shape[1] != length or tensor.shape[2] != width:
        raise ShapeError(f"{name}: expected (batch, {length}, {width}), got {tuple(tensor.shape)}")


class STFEncoderEmbedding(nn.Module):
    """``Linear(x ⊕ Linear(C_p) ⊕ Linear(C_t)) + E_pos`` per (variable, step).

    Tokens are ordered variable-major: all ``w`` steps of variable 0, then
    variable 1, and so on.  Context and time projections are shared by all
    variables, so permuting variables only permutes token blocks.
    """

    def __init__(self, n_targets, n_past, w, d_model, d_context=None):
        super().__init__()
        d_context = d_context or max(1, d_model // 4)
        self.n_targets, self.n_past, self.w = n_targets, n_past, w
        self.context = _linear(n_past, d_context) if n_past else None
        self.time = _linear(N_TIME_FEATURES, d_context)
        width = 1 + d_context * (2 if n_past else 1)
        self.project = _linear(width, d_model)
        self.pos = nn.Parameter(torch.zeros(w, d_model))

    def forward(self, x_past, c_past, c_time):
        b = x_past.shape[0]
        _check("past targets", x_past, self.w, self.n_targets)
        _check("past context", c_past, self.w, self.n_past)
        _check("time features", c_time, self.w, N_TIME_FEATURES)
        parts = [self.time(c_time)]
        if self.context is not None:
            parts.insert(0, self.context(c_past))
        shared = torch.cat(parts, dim=-1)  # (b, w, k)
        values = x_past.transpose(1, 2).unsqueeze(-1)  # (b, D_t, w, 1)
        shared = shared.unsqueeze(1).expand(b, self.n_targets, self.w, shared.shape[-1])
        tokens = self.project(torch.cat([values, shared], dim=-1)) + self.pos
        return tokens.reshape(b, self.n_targets * self.w, -1)


class STFDecoderEmbedding(nn.Module):
    """``Linear(Linear(C_f) ⊕ Linear(C_t)) + E_pos``, one block per target variable.

    The blocks share everything except a learned per-variable offset, which
    tells the decoder which output channel a token stands for.
    """

    def __init__(self, n_targets, n_future, h, d_model, d_context=None):
        super().__init__()
        d_context = d_context or max(1, d_model // 4)
        self.n_targets, self.n_future, self.h = n_targets, n_future, h
        self.context = _linear(n_future, d_context) if n_future else None
        self.time = _linear(N_TIME_FEATURES, d_context)
        self.project = _linear(d_context * (2 if n_future else 1), d_model)
        self.pos = nn.Parameter(torch.zeros(h, d_model))
        self.variable = nn.Parameter(torch.zeros(n_targets, 1, d_model)) if n_targets > 1 else None

    def forward(self, c_future, c_time):
        b = c_time.shape[0]
        _check("future context", c_future, self.h, self.n_future)
        _check("time features", c_time, self.h, N_TIME_FEATURES)
        parts = [self.time(c_time)]
        if self.context is not None:
            parts.insert(0, self.context(c_future))
        step = self.project(torch.cat(parts, dim=-1)) + self.pos  # (b, h, d)
        tokens = step.unsqueeze(1).expand(b, self.n_targets, self.h, step.shape[-1])
        if self.variable is not None:
            tokens = tokens + self.variable
        return tokens.reshape(b, self.n_targets * self.h, -1)


class TSTEmbedding(nn.Module):
    """Convolutional value/context embedding, one token per time step.

    On the encoder side ``values`` are the past targets and ``context`` the
    past covariates; on the decoder side ``values`` is ``None`` and
    ``context`` carries the future covariates.
    """

    def __init__(self, n_values, n_context, length, d_model, kernel=3):
        super().__init__()
        self.n_values, self.n_context, self.length = n_values, n_context, length
        self.values = _conv(n_values, d_model, kernel) if n_values else None
        self.context = _conv(n_context, d_model, kernel) if n_context else None
        self.time = _linear(N_TIME_FEATURES, d_model)
        self.pos = nn.Parameter(torch.zeros(length, d_model))

    def forward(self, values, context, c_time):
        _check("time features", c_time, self.length, N_TIME_FEATURES)
        tokens = self.time(c_time) + self.pos
        if self.values is not None:
            _check("values", values, self.length, self.n_values)
            tokens = tokens + self.values(values.transpose(1, 2)).transpose(1, 2)
        if self.context is not None:
            _check("context", context, self.length, self.n_context)
            tokens = tokens + self.context(context.transpose(1, 2)).transpose(1, 2)
        return tokens
