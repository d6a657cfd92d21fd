"""End-to-end runs: data → split → normalize → fit (per seed) → evaluate → reports."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import metrics as M
from .baselines import build_dlinear, ridge_features, ridge_fit, ridge_forecast, seasonal_naive, RidgeParams
from .config import TRANSFORMERS, ExperimentConfig, ModelSpec
from .data import Normalizer, daily_origins, detrend, ett_split, fraction_ranges, load_csv, split_by_date, window_origins
from .errors import ConfigError, InsufficientDataError
from .model import Batch, ModelConfig, build_model
from .synthetic import ScheduleConfig, generate
from .training import TrainConfig, load_checkpoint, predict, save_checkpoint, train

log = logging.getLogger(__name__)


# ---------------------------------------------------------------- data


@dataclass
class Prepared:
    """A split, normalized dataset ready for window extraction.

    ``level`` is the trailing trend of the normalized targets when
    detrending is on, else ``None``.
    """

    frame: object
    normalized: object
    normalizer: Normalizer
    split: object
    level: np.ndarray | None = None
    calendar: object = None


def load_frame(cfg: ExperimentConfig):
    d = cfg.data
    if d.source == "synthetic":
        try:
            schedule = ScheduleConfig(**d.synthetic)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        return generate(schedule)
    path = Path(d.path)
    if not path.is_absolute():
        path = Path(cfg.base_dir) / path
    return load_csv(path, d.schema), None


def make_split(frame, cfg: ExperimentConfig):
    s = cfg.split
    if s.mode == "ett":
        return ett_split(frame, cfg.model.w)
    if s.mode == "fraction":
        train, val, test = fraction_ranges(frame, s.fractions)
        return split_by_date(frame, train, val, {"test": test})
    return split_by_date(frame, s.train, s.val, s.tests)


def prepare(cfg: ExperimentConfig) -> Prepared:
    frame, calendar = load_frame(cfg)
    split = make_split(frame, cfg)
    normalizer = Normalizer.fit(split.train.frame, cfg.data.normalization)
    normalized = normalizer.apply(frame)
    level = None
    if cfg.data.detrend:
        level = detrend(normalized.targets, cfg.data.detrend_window).trend
    return Prepared(frame, normalized, normalizer, split, level, calendar)


def partition_origins(prepared: Prepared, partition, w, h, stride="daily", context_from=None):
    """Forecast origins whose targets lie inside ``partition``.

    Input context may reach back before the partition (down to row
    ``context_from``, default 0); those rows are only ever inputs.
    ``stride`` is ``"daily"`` for 00:00 origins or an hourly step.
    """
    lo = partition.start if context_from is None else context_from
    first = max(partition.start, lo + w)
    view = prepared.normalized.slice(0, partition.stop)
    if stride == "daily":
        origins = daily_origins(view, w, h, first=first)
    else:
        origins = window_origins(len(view), w, h, int(stride), start=first)
    if origins.size == 0:
        raise InsufficientDataError(f"partition {partition.name!r} has no complete {w}+{h} window")
    return origins


def make_batch(prepared: Prepared, origins, w, h, dtype=torch.float32):
    """Windows at ``origins`` plus the per-window level that was removed (or ``None``)."""
    batch = Batch.from_frame(prepared.normalized, origins, w, h, dtype)
    if prepared.level is None:
        return batch, None
    origins = np.asarray(origins)
    past_rows = origins[:, None] + np.arange(-w, 0)[None, :]
    anchor = torch.as_tensor(prepared.level[origins - 1][:, None, :], dtype=dtype)
    batch.past_targets = batch.past_targets - torch.as_tensor(prepared.level[past_rows], dtype=dtype)
    batch.target = batch.target - anchor
    return batch, anchor


def windows_for(prepared, cfg: ExperimentConfig, partition, train_windows=False):
    w, h = cfg.model.w, cfg.model.h
    if train_windows:
        origins = partition_origins(prepared, partition, w, h, cfg.train_stride, context_from=partition.start)
    else:
        ctx = partition.start if cfg.split.mode == "ett" else 0
        origins = partition_origins(prepared, partition, w, h, cfg.eval_stride, context_from=ctx)
    return origins


# ---------------------------------------------------------------- models


@dataclass
class Fitted:
    """A trained forecaster with a uniform ``predict(batch) -> ndarray`` interface."""

    spec: ModelSpec
    module: torch.nn.Module | None = None
    ridge: RidgeParams | None = None
    history: object = None

    def predict(self, batch):
        if self.spec.model == "naive":
            return seasonal_naive(batch.past_targets.numpy(), batch.target.shape[1], self.spec.naive_period)
        if self.spec.model == "ridge":
            return ridge_forecast(self.ridge, _ridge_inputs(batch, self.spec.fci))
        return predict(self.module, batch).double().numpy()

    def state(self):
        if self.module is not None:
            return self.module.state_dict()
        if self.ridge is not None:
            return {"coef": torch.from_numpy(self.ridge.coef), "intercept": torch.from_numpy(self.ridge.intercept)}
        return None


def _ridge_inputs(batch, fci):
    ctx = batch.future_context.double().numpy()
    time_f = batch.future_time.double().numpy()
    return ridge_features(ctx, time_f) if fci else time_f


def model_config(spec: ModelSpec, frame) -> ModelConfig:
    factory = ModelConfig.stf if spec.model == "stf" else ModelConfig.tst
    return factory(
        frame.n_targets,
        frame.n_past,
        frame.n_future,
        w=spec.w,
        h=spec.h,
        mask_mode=spec.mask,
        use_fci=spec.fci,
        encoder_inputs=spec.encoder_inputs,
        **spec.sizes,
    )


def build(spec: ModelSpec, frame, seed, dtype=torch.float32):
    """Untrained module for ``spec`` (``None`` for the closed-form models)."""
    if spec.model in TRANSFORMERS:
        return build_model(model_config(spec, frame), seed=seed, dtype=dtype)
    if spec.model == "dlinear":
        return build_dlinear(
            spec.w, spec.h, frame.n_targets, frame.n_future, spec.fci, spec.dlinear_kernel, seed=seed, dtype=dtype
        )
    return None


def fit(prepared: Prepared, cfg: ExperimentConfig, seed) -> Fitted:
    spec = cfg.model
    split = prepared.split
    if spec.model == "naive":
        return Fitted(spec)
    if spec.model == "ridge":
        # daily-aligned windows so each horizon step is always the same hour of day
        origins = partition_origins(prepared, split.train, spec.w, spec.h, "daily", context_from=split.train.start)
        batch, _ = make_batch(prepared, origins, spec.w, spec.h, torch.float64)
        params = ridge_fit(_ridge_inputs(batch, spec.fci), batch.target.numpy(), spec.ridge_lambda)
        return Fitted(spec, ridge=params)
    tcfg = dataclasses.replace(cfg.train, seed=seed)
    dtype = tcfg.dtype
    train_batch, _ = make_batch(prepared, windows_for(prepared, cfg, split.train, True), spec.w, spec.h, dtype)
    val_batch, _ = make_batch(prepared, windows_for(prepared, cfg, split.val), spec.w, spec.h, dtype)
    module = build(spec, prepared.frame, seed, dtype)
    _, history = train(module, train_batch, val_batch, tcfg)
    return Fitted(spec, module=module, history=history)


def restore(prepared: Prepared, cfg: ExperimentConfig, seed, checkpoint) -> Fitted:
    """Rebuild a fitted model from a checkpoint written by :func:`run`."""
    spec = cfg.model
    if spec.model == "naive":
        return Fitted(spec)
    if spec.model == "ridge":
        params = load_checkpoint(checkpoint)
        return Fitted(spec, ridge=RidgeParams(params["coef"].numpy(), params["intercept"].numpy(), spec.ridge_lambda))
    module = build(spec, prepared.frame, seed, cfg.train.dtype)
    load_checkpoint(checkpoint, module)
    return Fitted(spec, module=module)


def forecast(fitted: Fitted, prepared: Prepared, cfg: ExperimentConfig, partition):
    """``(pred, actual, origins)`` on the evaluation windows of ``partition``.

    Values are in original units unless ``cfg.eval_scale`` is ``"normalized"``.
    """
    w, h = cfg.model.w, cfg.model.h
    origins = windows_for(prepared, cfg, partition)
    dtype = torch.float64 if fitted.module is None else next(fitted.module.parameters()).dtype
    batch, anchor = make_batch(prepared, origins, w, h, dtype)
    pred = np.asarray(fitted.predict(batch), dtype=np.float64)
    if anchor is not None:
        pred = pred + anchor.double().numpy()
    fut = origins[:, None] + np.arange(h)[None, :]
    if cfg.eval_scale == "normalized":
        actual = prepared.normalized.targets[fut]
    else:
        pred = prepared.normalizer.invert_targets(pred)
        actual = prepared.frame.targets[fut]
    return pred, actual, prepared.frame.timestamps[origins]


def evaluate_fitted(fitted, prepared, cfg, name=None):
    """``{split_name: EvalReport}`` over every configured test range."""
    name = name or cfg.model.label
    out = {}
    for split_name, part in prepared.split.tests.items():
        pred, actual, origins = forecast(fitted, prepared, cfg, part)
        out[split_name] = M.evaluate(pred, actual, origins, name)
    return out


# ---------------------------------------------------------------- runs and records


def run_id(cfg: ExperimentConfig, seed):
    text = dataclasses.replace(cfg, seeds=(), base_dir=".", ablation=None).to_text() + f"\nseed={seed}\n"
    return hashlib.sha256(text.encode()).hexdigest()[:12]


@dataclass
class RunRecord:
    run_id: str
    model: str
    seed: int
    config_path: str
    checkpoint: str | None
    reports: dict
    scores: dict
    duration_s: float
    epochs: int | None = None

    def to_json(self):
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    @classmethod
    def read(cls, path):
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))


def _report_files(reports, run_dir):
    paths = {}
    for split_name, rep in reports.items():
        files = {
            "windows": run_dir / f"windows_{split_name}.csv",
            "outliers": run_dir / f"outliers_{split_name}.csv",
            "weekday": run_dir / f"weekday_{split_name}.csv",
        }
        M.write_windows_csv(rep, files["windows"])
        M.write_outliers_csv(rep, files["outliers"])
        M.write_weekday_csv(rep, files["weekday"])
        paths[split_name] = {k: str(v) for k, v in files.items()}
    return paths


def _scores(reports):
    return {
        name: {"MAE": rep.mae, "MSE": rep.mse, "MAPE": rep.mape, "outliers_30": rep.outlier_fraction(0.30)}
        for name, rep in reports.items()
    }


def run_seed(cfg: ExperimentConfig, seed, out_dir, prepared=None) -> RunRecord:
    """Fit and evaluate one seed, writing its checkpoint, reports and record."""
    prepared = prepared or prepare(cfg)
    rid = run_id(cfg, seed)
    run_dir = Path(out_dir) / "runs" / rid
    run_dir.mkdir(parents=True, exist_ok=True)
    snapshot = run_dir / "config.snapshot"
    M.atomic_write_text(snapshot, dataclasses.replace(cfg, seeds=(seed,), ablation=None).to_text())
    start = time.perf_counter()
    torch.manual_seed(seed)
    fitted = fit(prepared, cfg, seed)
    reports = evaluate_fitted(fitted, prepared, cfg)
    duration = time.perf_counter() - start
    checkpoint = None
    state = fitted.state()
    if state is not None:
        checkpoint = run_dir / "model.ckpt"
        save_checkpoint(state, checkpoint, {"run_id": rid, "model": cfg.model.label, "seed": seed})
    record = RunRecord(
        run_id=rid,
        model=cfg.model.label,
        seed=int(seed),
        config_path=str(snapshot),
        checkpoint=None if checkpoint is None else str(checkpoint),
        reports=_report_files(reports, run_dir),
        scores=_scores(reports),
        duration_s=round(duration, 3),
        epochs=None if fitted.history is None else len(fitted.history.val_mae),
    )
    M.atomic_write_text(run_dir / "record.json", record.to_json())
    log.info("%s seed %d: %s", record.model, seed, record.scores)
    return record


def summary_rows(records):
    rows = []
    for r in records:
        for split_name, s in r.scores.items():
            for metric in ("MAE", "MSE", "MAPE"):
                rows.append((r.model, r.seed, split_name, metric, s[metric]))
    return rows


def run(cfg: ExperimentConfig, out_dir, seeds=None):
    """Run every seed of ``cfg`` and write ``summary.csv``; returns the records."""
    seeds = tuple(seeds or cfg.seeds)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.set_num_threads(cfg.threads)
    prepared = prepare(cfg)
    M.atomic_write_text(out_dir / "config.snapshot", dataclasses.replace(cfg, seeds=seeds).to_text())
    records = [run_seed(cfg, s, out_dir, prepared) for s in seeds]
    M.write_summary_csv(summary_rows(records), out_dir / "summary.csv")
    return records


def reevaluate(cfg: ExperimentConfig, out_dir, seeds=None):
    """Score stored checkpoints again without training (the ``eval`` subcommand)."""
    seeds = tuple(seeds or cfg.seeds)
    out_dir = Path(out_dir)
    prepared = prepare(cfg)
    records = []
    for seed in seeds:
        run_dir = out_dir / "runs" / run_id(cfg, seed)
        record = RunRecord.read(run_dir / "record.json")
        fitted = restore(prepared, cfg, seed, record.checkpoint)
        reports = evaluate_fitted(fitted, prepared, cfg)
        record.reports, record.scores = _report_files(reports, run_dir), _scores(reports)
        M.atomic_write_text(run_dir / "record.json", record.to_json())
        records.append(record)
    M.write_summary_csv(summary_rows(records), out_dir / "summary.csv")
    return records


# ---------------------------------------------------------------- ablations


AXES = ("model", "fci", "mask", "w", "encoder_inputs")


@dataclass
class AblationResult:
    records: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    table: list = field(default_factory=list)


def ablation_specs(cfg: ExperimentConfig):
    """Cross product of the ``[ablation]`` axes; returns ``(valid, skipped)``.

    ``skipped`` holds ``(spec_dict, reason)`` for meaningless combinations.
    """
    import itertools

    axes = cfg.ablation or {}
    base = cfg.model
    values = [axes.get(a, [getattr(base, a)]) for a in AXES]
    valid, skipped = [], []
    for combo in itertools.product(*values):
        changes = dict(zip(AXES, combo))
        spec = dataclasses.replace(base, **changes)
        try:
            spec.validate()
        except ConfigError as exc:
            skipped.append((changes, str(exc)))
            continue
        valid.append(spec)
    return valid, skipped


def ablation_table(records):
    """Pivot rows ``(model, split, metric, mean, std, n, fci_reduction_pct)``.

    The reduction compares each FCI configuration's mean MAE with its
    FCI-free twin (all other axes equal) and is blank otherwise.
    """
    groups = {}
    for r in records:
        for split_name, s in r.scores.items():
            groups.setdefault((r.model, split_name), []).append(s)
    means = {}
    rows = []
    for (model, split_name), items in sorted(groups.items()):
        for metric in ("MAE", "MSE", "MAPE"):
            vals = [s[metric] for s in items if s[metric] is not None]
            if not vals:
                continue
            mean, std = M.aggregate_seeds(vals)
            means[(model, split_name, metric)] = mean
            rows.append([model, split_name, metric, mean, std, len(vals), None])
    for row in rows:
        model, split_name, metric = row[:3]
        if metric == "MAE" and "-fci" in model:
            twin = model.replace("-fci", "-nofci")
            off = means.get((twin, split_name, "MAE"))
            if off:
                row[6] = 100.0 * M.reduction(off, row[3])
    return rows


def _pivot_text(rows):
    import csv
    import io

    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(("model", "split", "metric", "mean", "std", "n_seeds", "fci_reduction_pct"))
    for model, split_name, metric, mean, std, n, red in rows:
        out.writerow(
            (model, split_name, metric, repr(mean), "" if std is None else repr(std), n, "" if red is None else f"{red:.1f}")
        )
    return buf.getvalue()


def ablate(cfg: ExperimentConfig, out_dir, seeds=None) -> AblationResult:
    """Run the ablation matrix; writes ``ablation.csv`` and ``ablation_pivot.csv``."""
    seeds = tuple(seeds or (cfg.ablation or {}).get("seeds") or cfg.seeds)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.set_num_threads(cfg.threads)
    specs, skipped = ablation_specs(cfg)
    for changes, reason in skipped:
        log.warning("skipping %s: %s", changes, reason)
    result = AblationResult(skipped=skipped)
    cache = {}
    for spec in specs:
        sub = dataclasses.replace(cfg, model=spec, ablation=None)
        # data preparation depends on w only through the ETT split
        key = spec.w if cfg.split.mode == "ett" else None
        if key not in cache:
            cache[key] = prepare(sub)
        for seed in seeds:
            result.records.append(run_seed(sub, seed, out_dir, cache[key]))
    M.write_summary_csv(summary_rows(result.records), out_dir / "ablation.csv")
    result.table = ablation_table(result.records)
    M.atomic_write_text(out_dir / "ablation_pivot.csv", _pivot_text(result.table))
    return result
