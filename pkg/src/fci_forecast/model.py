"""Encoder-decoder transformer for joint forecasting and regression.

The encoder reads embedded past targets and past covariates; the decoder
reads embedded future covariates and cross-attends to the encoder output.
Decoder self-attention is non-causal by default so every horizon step can
use the whole day's plan.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .embedding import (
    STFDecoderEmbedding,
    STFEncoderEmbedding,
    TSTEmbedding,
    _linear,
    temporal_features,
)
from .errors import ShapeError

MASK_MODES = ("causal", "non_causal")
ENCODER_INPUTS = ("full", "no_target", "no_context")
# stands in for -inf; exp() of it underflows to exactly 0 in float32/64
MASK_VALUE = -1e9


def attention(q, k, v, mask_mode="non_causal", q_time=None, k_time=None, dropout=None, return_weights=False):
    """``softmax((Q Kᵀ + O) / sqrt(d_k)) V`` over the last two axes.

    In causal mode ``O[i, j]`` masks every key whose time index exceeds the
    query's.  Time indices default to positions, which gives the usual upper
    triangle; flattened multivariate sequences pass per-token step indices.
    """
    if mask_mode not in MASK_MODES:
        raise ValueError(f"mask_mode must be one of {MASK_MODES}, got {mask_mode!r}")
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"incompatible attention shapes q{tuple(q.shape)} k{tuple(k.shape)} v{tuple(v.shape)}")
    d_k = q.shape[-1]
    scores = q @ k.transpose(-2, -1)
    if mask_mode == "causal":
        lq, lk = q.shape[-2], k.shape[-2]
        qt = torch.arange(lq, device=q.device) if q_time is None else q_time
        kt = torch.arange(lk, device=q.device) if k_time is None else k_time
        blocked = kt[None, :] > qt[:, None]
        scores = scores.masked_fill(blocked, MASK_VALUE)
    weights = torch.softmax(scores / math.sqrt(d_k), dim=-1)
    if dropout is not None:
        weights = dropout(weights)
    out = weights @ v
    return (out, weights) if return_weights else out


class MultiHeadAttention(nn.Module):
    def __init__(self, d_model, n_heads, dropout=0.1):
        super().__init__()
        if d_model % n_heads:
            raise ShapeError(f"d_model={d_model} not divisible by n_heads={n_heads}")
        self.n_heads, self.d_k = n_heads, d_model // n_heads
        self.q = _linear(d_model, d_model)
        # a key bias shifts every logit of a row equally; softmax ignores it
        self.k = _linear(d_model, d_model, bias=False)
        self.v = _linear(d_model, d_model)
        self.out = _linear(d_model, d_model)
        self.drop = nn.Dropout(dropout)

    def _split(self, x):
        b, n, _ = x.shape
        return x.view(b, n, self.n_heads, self.d_k).transpose(1, 2)

    def forward(self, x, memory=None, mask_mode="non_causal", q_time=None, k_time=None):
        memory = x if memory is None else memory
        q, k, v = self._split(self.q(x)), self._split(self.k(memory)), self._split(self.v(memory))
        out = attention(q, k, v, mask_mode, q_time, k_time, dropout=self.drop)
        b, _, n, _ = out.shape
        return self.out(out.transpose(1, 2).reshape(b, n, -1))


class FeedForward(nn.Module):
    def __init__(self, d_model, d_ff, dropout=0.1):
        super().__init__()
        self.inner = _linear(d_model, d_ff)
        self.outer = _linear(d_ff, d_model)
        self.drop = nn.Dropout(dropout)

    def forward(self, x):
        return self.outer(self.drop(F.gelu(self.inner(x))))


class EncoderLayer(nn.Module):
    def __init__(self, d_model, d_ff, n_heads, dropout=0.1):
        super().__init__()
        self.attn = MultiHeadAttention(d_model, n_heads, dropout)
        self.ff = FeedForward(d_model, d_ff, dropout)
        self.norm1 = nn.LayerNorm(d_model)
        self.norm2 = nn.LayerNorm(d_model)
        self.drop = nn.Dropout(dropout)

    def forward(self, x):
        x = self.norm1(x + self.drop(self.attn(x)))
        return self.norm2(x + self.drop(self.ff(x)))


class DecoderLayer(nn.Module):
    def __init__(self, d_model, d_ff, n_heads, dropout=0.1):
        super().__init__()
        self.self_attn = MultiHeadAttention(d_model, n_heads, dropout)
        self.cross_attn = MultiHeadAttention(d_model, n_heads, dropout)
        self.ff = FeedForward(d_model, d_ff, dropout)
        self.norm1 = nn.LayerNorm(d_model)
        self.norm2 = nn.LayerNorm(d_model)
        self.norm3 = nn.LayerNorm(d_model)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, memory, mask_mode, steps):
        x = self.norm1(x + self.drop(self.self_attn(x, mask_mode=mask_mode, q_time=steps, k_time=steps)))
        x = self.norm2(x + self.drop(self.cross_attn(x, memory)))
        return self.norm3(x + self.drop(self.ff(x)))


@dataclass(frozen=True)
class ModelConfig:
    variant: str
    n_targets: int
    n_past: int
    n_future: int
    w: int = 24
    h: int = 24
    d_model: int = 128
    d_ff: int = 128
    n_heads: int = 4
    n_encoder_layers: int = 2
    n_decoder_layers: int = 3
    dropout: float = 0.1
    mask_mode: str = "non_causal"
    use_fci: bool = True
    encoder_inputs: str = "full"
    d_context: int | None = None

    def __post_init__(self):
        if self.variant not in ("stf", "tst"):
            raise ValueError(f"unknown transformer variant {self.variant!r}")
        if self.mask_mode not in MASK_MODES:
            raise ValueError(f"unknown mask mode {self.mask_mode!r}")
        if self.encoder_inputs not in ENCODER_INPUTS:
            raise ValueError(f"unknown encoder inputs {self.encoder_inputs!r}")
        if self.d_model % self.n_heads:
            raise ShapeError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")

    @classmethod
    def stf(cls, n_targets, n_past, n_future, **overrides):
        return cls("stf", n_targets, n_past, n_future, **overrides)

    @classmethod
    def tst(cls, n_targets, n_past, n_future, **overrides):
        kw = dict(d_ff=256, n_heads=2, n_encoder_layers=2, n_decoder_layers=2)
        kw.update(overrides)
        return cls("tst", n_targets, n_past, n_future, **kw)

    def with_(self, **changes):
        return replace(self, **changes)

    def to_dict(self):
        return asdict(self)


@dataclass
class Batch:
    """Stacked window tensors, batch-first."""

    past_targets: torch.Tensor  # (B, w, D_t)
    past_context: torch.Tensor  # (B, w, D_c^p)
    past_time: torch.Tensor  # (B, w, 8)
    future_context: torch.Tensor  # (B, h, D_c^f)
    future_time: torch.Tensor  # (B, h, 8)
    target: torch.Tensor  # (B, h, D_t)

    @classmethod
    def from_frame(cls, frame, origins, w, h, dtype=torch.float32):
        origins = np.asarray(origins, dtype=np.int64)
        past = origins[:, None] + np.arange(-w, 0)[None, :]
        fut = origins[:, None] + np.arange(h)[None, :]
        tf = temporal_features(frame.timestamps)
        t = lambda a: torch.as_tensor(np.ascontiguousarray(a), dtype=dtype)  # noqa: E731
        return cls(
            t(frame.targets[past]),
            t(frame.past_covariates[past]),
            t(tf[past]),
            t(frame.future_covariates[fut]),
            t(tf[fut]),
            t(frame.targets[fut]),
        )

    @classmethod
    def from_windows(cls, windows, dtype=torch.float32):
        t = lambda xs: torch.as_tensor(np.stack(xs), dtype=dtype)  # noqa: E731
        return cls(
            t([x.past_targets for x in windows]),
            t([x.past_context for x in windows]),
            t([temporal_features(x.past_timestamps) for x in windows]),
            t([x.future_context for x in windows]),
            t([temporal_features(x.future_timestamps) for x in windows]),
            t([x.target for x in windows]),
        )

    def __len__(self):
        return self.past_targets.shape[0]

    def index(self, idx):
        return Batch(*(getattr(self, f)[idx] for f in self.__dataclass_fields__))

    def to(self, dtype):
        return Batch(*(getattr(self, f).to(dtype) for f in self.__dataclass_fields__))


class ForecastTransformer(nn.Module):
    """``M_θ(X[t-w:t], C^p, C^f) -> X̃[t:t+h]`` for the STF and TST variants."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = c = config
        if c.variant == "stf":
            self.enc_embed = STFEncoderEmbedding(c.n_targets, c.n_past, c.w, c.d_model, c.d_context)
            self.dec_embed = STFDecoderEmbedding(c.n_targets, c.n_future, c.h, c.d_model, c.d_context)
            self.head = _linear(c.d_model, 1)
            self.register_buffer("dec_steps", torch.arange(c.h).repeat(c.n_targets), persistent=False)
        else:
            self.enc_embed = TSTEmbedding(c.n_targets, c.n_past, c.w, c.d_model)
            self.dec_embed = TSTEmbedding(0, c.n_future, c.h, c.d_model)
            self.head = _linear(c.d_model, c.n_targets)
            self.register_buffer("dec_steps", torch.arange(c.h), persistent=False)
        self.encoder = nn.ModuleList(
            EncoderLayer(c.d_model, c.d_ff, c.n_heads, c.dropout) for _ in range(c.n_encoder_layers)
        )
        self.decoder = nn.ModuleList(
            DecoderLayer(c.d_model, c.d_ff, c.n_heads, c.dropout) for _ in range(c.n_decoder_layers)
        )

    # -- stages
    def embed_encoder(self, batch):
        x, cp = batch.past_targets, batch.past_context
        if self.config.encoder_inputs == "no_target":
            x = torch.zeros_like(x)
        elif self.config.encoder_inputs == "no_context":
            cp = torch.zeros_like(cp)
        return self.enc_embed(x, cp, batch.past_time)

    def embed_decoder(self, batch):
        cf = batch.future_context
        if not self.config.use_fci:
            cf = torch.zeros_like(cf)
        if self.config.variant == "stf":
            return self.dec_embed(cf, batch.future_time)
        return self.dec_embed(None, cf, batch.future_time)

    def encode(self, tokens):
        for layer in self.encoder:
            tokens = layer(tokens)
        return tokens

    def decode(self, tokens, memory, mask_mode=None):
        mask_mode = mask_mode or self.config.mask_mode
        for layer in self.decoder:
            tokens = layer(tokens, memory, mask_mode, self.dec_steps)
        out = self.head(tokens)
        c = self.config
        if c.variant == "stf":
            return out.reshape(out.shape[0], c.n_targets, c.h).transpose(1, 2)
        return out

    def forward(self, batch):
        memory = self.encode(self.embed_encoder(batch))
        return self.decode(self.embed_decoder(batch), memory)


def build_model(config: ModelConfig, seed=0, dtype=torch.float32):
    torch.manual_seed(seed)
    return ForecastTransformer(config).to(dtype)


@torch.no_grad()
def forecast_window(model, window):
    """Forecast a single :class:`~fci_forecast.data.ForecastWindow` (``h x D_t``)."""
    was_training = model.training
    model.eval()
    dtype = next(model.parameters()).dtype
    out = model(Batch.from_windows([window], dtype=dtype))[0].cpu().numpy()
    model.train(was_training)
    return out
