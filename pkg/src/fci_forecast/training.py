"""Optimization loop, learning-rate schedule, gradient checks and checkpoints."""
from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import ChecksumError, DivergenceError, SchemaError, ShapeError

log = logging.getLogger(__name__)


def loss(pred, target):
    """Squared Frobenius norm of the error per sample, averaged over the batch."""
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {tuple(pred.shape)} and target {tuple(target.shape)} differ")
    if pred.dim() == 2:
        return (pred - target).pow(2).sum()
    return (pred - target).pow(2).flatten(1).sum(dim=1).mean()


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    max_epochs: int = 50
    lr: float = 5e-4
    warmup_steps: int = 1000
    plateau_patience: int = 3
    decay: float = 0.5
    weight_decay: float = 0.01
    early_stop: int = 10
    seed: int = 0
    precision: int = 32

    def __post_init__(self):
        for name in ("batch_size", "max_epochs", "warmup_steps", "plateau_patience", "early_stop"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.lr <= 0 or self.weight_decay < 0:
            raise ValueError("lr must be positive and weight_decay non-negative")
        if not 0 < self.decay < 1:
            raise ValueError("decay must lie in (0, 1)")
        if self.precision not in (32, 64):
            raise ValueError("precision must be 32 or 64")

    @property
    def dtype(self):
        return torch.float64 if self.precision == 64 else torch.float32


class WarmupPlateauSchedule:
    """Linear warmup to ``base_lr``, then multiplicative decay on validation plateaus.

    Call :meth:`step` after each optimizer step and :meth:`observe` with the
    validation metric after each evaluation.
    """

    def __init__(self, optimizer, base_lr, warmup_steps, patience=3, decay=0.5):
        self.optimizer = optimizer
        self.base_lr, self.warmup_steps = base_lr, warmup_steps
        self.patience, self.decay = patience, decay
        self.step_count = 0
        self.scale = 1.0
        self.best = math.inf
        self.bad_evals = 0
        self._apply()

    def lr_at(self, k):
        """Learning rate used by optimizer step ``k`` (1-based)."""
        if k <= self.warmup_steps:
            return self.base_lr * k / self.warmup_steps
        return self.base_lr * self.scale

    @property
    def lr(self):
        return self.lr_at(self.step_count + 1)

    def _apply(self):
        for group in self.optimizer.param_groups:
            group["lr"] = self.lr

    def step(self):
        self.step_count += 1
        self._apply()

    def observe(self, metric):
        if metric < self.best:
            self.best, self.bad_evals = metric, 0
            return
        self.bad_evals += 1
        if self.bad_evals >= self.patience and self.step_count >= self.warmup_steps:
            self.scale *= self.decay
            self.bad_evals = 0
            log.info("plateau: learning rate now %.3g", self.lr)
        self._apply()


def make_optimizer(model, config: TrainConfig):
    return torch.optim.AdamW(
        model.parameters(), lr=config.lr, weight_decay=config.weight_decay, foreach=False
    )


@torch.no_grad()
def predict(model, batch, chunk=512):
    """Inference-mode forecast for a whole :class:`Batch`, restoring the train flag."""
    was_training = model.training
    model.eval()
    outs = [model(batch.index(slice(i, i + chunk))) for i in range(0, len(batch), chunk)]
    model.train(was_training)
    return torch.cat(outs) if outs else batch.target[:0]


def validation_mae(model, batch):
    return float((predict(model, batch) - batch.target).abs().mean())


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_mae: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_mae: float = math.inf
    steps: int = 0


def train(model, train_batch, val_batch, config: TrainConfig):
    """Minimize :func:`loss` with AdamW and the warmup/plateau schedule.

    Returns ``(best_state, history)`` where ``best_state`` is the state dict
    with the lowest validation MAE seen at the end of an epoch; the model
    is left holding those parameters.  Runs are reproducible for a fixed
    seed and thread count.
    """
    dtype = config.dtype
    model.to(dtype)
    train_batch, val_batch = train_batch.to(dtype), val_batch.to(dtype)
    gen = torch.Generator().manual_seed(config.seed)
    optimizer = make_optimizer(model, config)
    schedule = WarmupPlateauSchedule(
        optimizer, config.lr, config.warmup_steps, config.plateau_patience, config.decay
    )
    history = TrainHistory()
    best_state = copy.deepcopy(model.state_dict())
    stale = 0
    n = len(train_batch)
    for epoch in range(config.max_epochs):
        model.train()
        order = torch.randperm(n, generator=gen)
        total = 0.0
        for i in range(0, n, config.batch_size):
            idx = order[i:i + config.batch_size]
            mb = train_batch.index(idx)
            value = loss(model(mb), mb.target)
            if not torch.isfinite(value):
                raise DivergenceError(f"loss became {value.item()} at step {history.steps}", step=history.steps)
            optimizer.zero_grad(set_to_none=True)
            value.backward()
            optimizer.step()
            schedule.step()
            history.steps += 1
            total += value.item() * len(idx)
        history.train_loss.append(total / n)
        mae = validation_mae(model, val_batch)
        history.val_mae.append(mae)
        history.lr.append(schedule.lr)
        schedule.observe(mae)
        log.debug("epoch %d loss %.5f val_mae %.5f lr %.2e", epoch, history.train_loss[-1], mae, schedule.lr)
        if mae < history.best_val_mae:
            history.best_val_mae, history.best_epoch = mae, epoch
            best_state = copy.deepcopy(model.state_dict())
            stale = 0
        else:
            stale += 1
            if stale >= config.early_stop:
                break
    model.load_state_dict(best_state)
    return best_state, history


# ---------------------------------------------------------------- gradient check


def grad_check(model, batch, eps=3e-5, max_per_tensor=None, seed=0):
    """Largest relative gap between autograd and central-difference gradients.

    The difference of the two perturbed losses is formed from the
    forecasts directly, which keeps roundoff well below the check tolerance
    for entries whose gradient is tiny.

    Every entry is checked unless ``max_per_tensor`` caps the number of
    randomly sampled entries per parameter tensor.  Run in float64 with
    dropout disabled; the model is put in eval mode for the duration.
    Returns ``(max_error, per_parameter_errors)``.
    """
    was_training = model.training
    model.eval()
    dtype = next(model.parameters()).dtype
    batch = batch.to(dtype)
    model.zero_grad(set_to_none=True)
    loss(model(batch), batch.target).backward()
    rng = np.random.default_rng(seed)
    errors = {}
    with torch.no_grad():
        for name, p in model.named_parameters():
            analytic = p.grad.detach().clone().reshape(-1) if p.grad is not None else torch.zeros(p.numel(), dtype=dtype)
            flat = p.data.view(-1)
            idx = np.arange(flat.numel())
            if max_per_tensor is not None and idx.size > max_per_tensor:
                idx = rng.choice(idx, max_per_tensor, replace=False)
            worst = 0.0
            for i in idx:
                orig = flat[i].item()
                flat[i] = orig + eps
                up = model(batch)
                flat[i] = orig - eps
                down = model(batch)
                flat[i] = orig
                # L(up) - L(down) without subtracting two nearly equal losses
                delta = ((up - down) * (up + down - 2 * batch.target)).sum() / len(batch)
                numeric = delta.item() / (2 * eps)
                a = analytic[i].item()
                err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-12)
                worst = max(worst, err)
            errors[name] = worst
    model.zero_grad(set_to_none=True)
    model.train(was_training)
    return max(errors.values(), default=0.0), errors


# ---------------------------------------------------------------- checkpoints

MAGIC = b"FCICKPT1"
_DTYPES = {torch.float32: ("float32", "<f4"), torch.float64: ("float64", "<f8")}
_NP_DTYPES = {name: np_code for name, np_code in _DTYPES.values()}


def config_hash(config):
    if config is None:
        return None
    text = json.dumps(config, sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def save_checkpoint(params, path, config=None):
    """Write ``params`` (a state dict) as manifest + little-endian payload.

    Layout: 8-byte magic, uint64 manifest length, UTF-8 JSON manifest,
    then the raw tensors in manifest order.  The manifest records every
    tensor's name, shape, dtype and byte offset, the config and its hash,
    and a CRC32 of the payload.
    """
    path = Path(path)
    entries, blobs, offset = [], [], 0
    for name, tensor in params.items():
        tensor = tensor.detach().cpu()
        if tensor.dtype not in _DTYPES:
            tensor = tensor.to(torch.float32)
        dname, code = _DTYPES[tensor.dtype]
        blob = tensor.numpy().astype(code, copy=False).tobytes()
        entries.append({"name": name, "shape": list(tensor.shape), "dtype": dname, "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    payload = b"".join(blobs)
    manifest = {
        "format": 1,
        "config": config,
        "config_hash": config_hash(config),
        "crc32": zlib.crc32(payload),
        "payload_bytes": len(payload),
        "tensors": entries,
    }
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("wb") as fh:
        fh.write(MAGIC + struct.pack("<Q", len(head)) + head + payload)
    tmp.replace(path)
    return manifest


def read_manifest(path):
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:8] != MAGIC:
        raise ChecksumError(f"{path}: not a checkpoint or truncated header")
    (n,) = struct.unpack("<Q", data[8:16])
    try:
        manifest = json.loads(data[16:16 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ChecksumError(f"{path}: corrupt manifest") from exc
    return manifest, data[16 + n:]


def load_checkpoint(path, model=None):
    """Read a checkpoint back into an ordered ``{name: tensor}`` dict.

    With ``model`` the tensors are checked against its state dict and
    loaded into it; the first missing, extra or mis-shaped tensor raises
    :class:`SchemaError`.
    """
    manifest, payload = read_manifest(path)
    if len(payload) != manifest.get("payload_bytes") or zlib.crc32(payload) != manifest.get("crc32"):
        raise ChecksumError(f"{path}: payload checksum mismatch")
    params = {}
    for e in manifest["tensors"]:
        raw = payload[e["offset"]:e["offset"] + e["nbytes"]]
        arr = np.frombuffer(raw, dtype=_NP_DTYPES[e["dtype"]]).reshape(e["shape"]).copy()
        params[e["name"]] = torch.from_numpy(arr)
    if model is not None:
        expected = model.state_dict()
        for name, tensor in expected.items():
            if name not in params:
                raise SchemaError(f"checkpoint lacks tensor {name!r}")
            if tuple(params[name].shape) != tuple(tensor.shape):
                raise SchemaError(
                    f"tensor {name!r}: checkpoint shape {tuple(params[name].shape)} != model shape {tuple(tensor.shape)}"
                )
        extra = [name for name in params if name not in expected]
        if extra:
            raise SchemaError(f"checkpoint has unexpected tensor {extra[0]!r}")
        model.load_state_dict({k: v.to(expected[k].dtype) for k, v in params.items()})
    return params
