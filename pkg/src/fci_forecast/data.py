"""Time-series tables, forecast windows, temporal splits and normalization.

A :class:`SeriesFrame` holds one hourly multivariate series partitioned into
target, past-covariate and future-covariate channels.  Windows are cut from a
frame at forecast origins ``t``: the model sees ``[t - w, t)`` of targets and
past covariates, ``[t, t + h)`` of future covariates, and must predict the
targets on ``[t, t + h)``.
"""
from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import (
    GapError,
    InsufficientDataError,
    ParseError,
    SchemaError,
    ShapeError,
    SplitOrderError,
)

HOUR = np.timedelta64(1, "h")
ROLES = ("target", "past", "future")


def _frozen(a, ndim=2):
    a = np.array(a, dtype=np.float64)
    if ndim == 2 and a.ndim == 1:
        a = a.reshape(-1, 0) if a.size == 0 else a[:, None]
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class SeriesFrame:
    timestamps: np.ndarray
    targets: np.ndarray
    past_covariates: np.ndarray
    future_covariates: np.ndarray
    target_names: tuple = ()
    past_names: tuple = ()
    future_names: tuple = ()

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype="datetime64[h]").copy()
        ts.flags.writeable = False
        object.__setattr__(self, "timestamps", ts)
        n = len(ts)
        for attr in ("targets", "past_covariates", "future_covariates"):
            a = np.asarray(getattr(self, attr), dtype=np.float64)
            if a.ndim == 1:
                a = a[:, None]
            if a.ndim != 2 or a.shape[0] != n:
                raise ShapeError(f"{attr} has shape {a.shape}, expected ({n}, D)")
            a = a.copy()
            a.flags.writeable = False
            object.__setattr__(self, attr, a)
        if self.targets.shape[1] < 1:
            raise ShapeError("a frame needs at least one target channel")
        for attr, arr, prefix in (
            ("target_names", self.targets, "target"),
            ("past_names", self.past_covariates, "past"),
            ("future_names", self.future_covariates, "future"),
        ):
            names = tuple(getattr(self, attr)) or tuple(f"{prefix}{i}" for i in range(arr.shape[1]))
            if len(names) != arr.shape[1]:
                raise ShapeError(f"{attr} has {len(names)} labels for {arr.shape[1]} columns")
            object.__setattr__(self, attr, names)
        if n > 1:
            steps = np.diff(ts)
            bad = np.flatnonzero(steps != HOUR)
            if bad.size:
                i = int(bad[0]) + 1
                kind = "duplicate" if steps[bad[0]] == np.timedelta64(0, "h") else "gap or disorder"
                raise GapError(f"{kind} in timestamps at row {i + 1} ({ts[i]})", row=i + 1)

    def __len__(self):
        return len(self.timestamps)

    @property
    def n_targets(self):
        return self.targets.shape[1]

    @property
    def n_past(self):
        return self.past_covariates.shape[1]

    @property
    def n_future(self):
        return self.future_covariates.shape[1]

    def slice(self, start, stop):
        return SeriesFrame(
            self.timestamps[start:stop],
            self.targets[start:stop],
            self.past_covariates[start:stop],
            self.future_covariates[start:stop],
            self.target_names,
            self.past_names,
            self.future_names,
        )

    def replace(self, **arrays):
        fields = dict(
            timestamps=self.timestamps,
            targets=self.targets,
            past_covariates=self.past_covariates,
            future_covariates=self.future_covariates,
            target_names=self.target_names,
            past_names=self.past_names,
            future_names=self.future_names,
        )
        fields.update(arrays)
        return SeriesFrame(**fields)

    def to_dataframe(self):
        data = {"timestamp": pd.to_datetime(self.timestamps).strftime("%Y-%m-%dT%H:00:00")}
        for role, names, arr in (
            ("target", self.target_names, self.targets),
            ("past", self.past_names, self.past_covariates),
            ("future", self.future_names, self.future_covariates),
        ):
            for j, name in enumerate(names):
                data[f"{role}:{name}"] = arr[:, j]
        return pd.DataFrame(data)


@dataclass(frozen=True)
class ForecastWindow:
    origin: int
    past_targets: np.ndarray
    past_context: np.ndarray
    future_context: np.ndarray
    target: np.ndarray
    past_timestamps: np.ndarray
    future_timestamps: np.ndarray

    @property
    def w(self):
        return len(self.past_targets)

    @property
    def h(self):
        return len(self.target)


# ---------------------------------------------------------------- ingestion


def _parse_timestamp(text, row):
    try:
        stamp = dt.datetime.fromisoformat(text.strip())
    except ValueError as exc:
        raise ParseError(f"row {row}: bad timestamp {text!r}", row=row, column="timestamp") from exc
    if stamp.minute or stamp.second or stamp.microsecond:
        raise GapError(f"row {row}: timestamp {text!r} is not on the hour", row=row)
    return np.datetime64(stamp.replace(tzinfo=None), "h")


def load_csv(path, schema: Mapping[str, Sequence[str]] | None = None) -> SeriesFrame:
    """Read a CSV into a validated frame.

    Without ``schema`` every non-timestamp column must carry a ``target:``,
    ``past:`` or ``future:`` prefix.  With ``schema`` (keys ``timestamp``,
    ``target``, ``past``, ``future``) unprefixed files such as the public ETT
    tables can be mapped; columns not listed are dropped.

    Row numbers in errors count the header as row 0.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        rows = list(reader)

    header = [h.strip() for h in header]
    groups = {role: [] for role in ROLES}
    if schema is None:
        if header[0] != "timestamp":
            raise SchemaError(f"first column must be 'timestamp', got {header[0]!r}")
        ts_col = 0
        for j, name in enumerate(header[1:], start=1):
            role, sep, label = name.partition(":")
            if not sep or role not in groups or not label:
                raise SchemaError(f"column {name!r} has no known prefix (target:, past:, future:)")
            groups[role].append((j, label))
    else:
        unknown = set(schema) - {"timestamp", *ROLES}
        if unknown:
            raise SchemaError(f"unknown schema keys: {sorted(unknown)}")
        index = {name: j for j, name in enumerate(header)}
        ts_name = schema.get("timestamp", header[0])
        if ts_name not in index:
            raise SchemaError(f"timestamp column {ts_name!r} not in header")
        ts_col = index[ts_name]
        for role in ROLES:
            for name in schema.get(role, ()):
                if name not in index:
                    raise SchemaError(f"{role} column {name!r} not in header")
                groups[role].append((index[name], name))
    if not groups["target"]:
        raise SchemaError("no target column")

    stamps = np.empty(len(rows), dtype="datetime64[h]")
    cols = [j for role in ROLES for j, _ in groups[role]]
    values = np.empty((len(rows), len(cols)))
    for i, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise ParseError(f"row {i}: expected {len(header)} fields, got {len(row)}", row=i)
        stamps[i - 1] = _parse_timestamp(row[ts_col], i)
        for k, j in enumerate(cols):
            cell = row[j].strip()
            try:
                values[i - 1, k] = float(cell)
            except ValueError:
                raise ParseError(
                    f"row {i}, column {header[j]!r}: non-numeric value {cell!r}", row=i, column=header[j]
                ) from None
            if not np.isfinite(values[i - 1, k]):
                raise ParseError(f"row {i}, column {header[j]!r}: missing value", row=i, column=header[j])

    n_t, n_p = len(groups["target"]), len(groups["past"])
    return SeriesFrame(
        stamps,
        values[:, :n_t],
        values[:, n_t:n_t + n_p],
        values[:, n_t + n_p:],
        tuple(label for _, label in groups["target"]),
        tuple(label for _, label in groups["past"]),
        tuple(label for _, label in groups["future"]),
    )


def write_csv(frame: SeriesFrame, path):
    """Write ``frame`` in the prefixed-column CSV format read by :func:`load_csv`."""
    frame.to_dataframe().to_csv(path, index=False, lineterminator="\n", float_format="%.10g")


# ---------------------------------------------------------------- windowing


def window_origins(n_rows, w, h, stride=1, start=None):
    """Origins ``t = start, start + stride, ...`` with ``t - w >= 0`` and ``t + h <= n_rows``."""
    if w < 1 or h < 1 or stride < 1:
        raise ValueError("w, h and stride must be >= 1")
    if n_rows < w + h:
        raise InsufficientDataError(f"need at least w + h = {w + h} rows, got {n_rows}")
    start = w if start is None else max(start, w)
    return np.arange(start, n_rows - h + 1, stride)


def make_windows(frame: SeriesFrame, w, h, stride=1):
    origins = window_origins(len(frame), w, h, stride)
    return [
        ForecastWindow(
            origin=int(t),
            past_targets=frame.targets[t - w:t],
            past_context=frame.past_covariates[t - w:t],
            future_context=frame.future_covariates[t:t + h],
            target=frame.targets[t:t + h],
            past_timestamps=frame.timestamps[t - w:t],
            future_timestamps=frame.timestamps[t:t + h],
        )
        for t in origins
    ]


def daily_origins(frame: SeriesFrame, w, h, first=None):
    """Origins at 00:00 of each day, for day-ahead evaluation.

    ``first`` is the first row index whose target may be forecast (rows before
    it only serve as input context).
    """
    hours = (frame.timestamps.astype("int64") % 24)
    origins = window_origins(len(frame), w, h, 1, start=first)
    return origins[hours[origins] == 0]


# ---------------------------------------------------------------- splitting


def _as_date(value):
    if isinstance(value, np.datetime64):
        return value.astype("datetime64[D]")
    if isinstance(value, (dt.date, dt.datetime)):
        return np.datetime64(value, "D")
    return np.datetime64(str(value).strip(), "D")


@dataclass(frozen=True)
class Partition:
    """A contiguous row range ``[start, stop)`` of a parent frame."""

    name: str
    start: int
    stop: int
    frame: SeriesFrame = field(repr=False)

    def __len__(self):
        return self.stop - self.start


@dataclass(frozen=True)
class Split:
    train: Partition
    val: Partition
    tests: dict


def split_by_date(frame: SeriesFrame, train_range, val_range, test_ranges) -> Split:
    """Partition ``frame`` by inclusive calendar-date ranges.

    ``test_ranges`` maps names to ranges; test ranges may overlap or contain
    one another (each is evaluated independently) but must all come after
    the validation range.
    """
    if not isinstance(test_ranges, Mapping):
        test_ranges = {f"test{i}" if i else "test": r for i, r in enumerate(test_ranges)}
    days = frame.timestamps.astype("datetime64[D]")

    def rows(name, rng):
        lo, hi = (_as_date(x) for x in rng)
        if hi < lo:
            raise SplitOrderError(f"{name} range ends before it starts: {lo}..{hi}")
        idx = np.flatnonzero((days >= lo) & (days <= hi))
        if idx.size == 0:
            raise SplitOrderError(f"{name} range {lo}..{hi} selects no rows")
        return int(idx[0]), int(idx[-1]) + 1, lo, hi

    tr = rows("train", train_range)
    va = rows("val", val_range)
    if not tr[3] < va[2]:
        raise SplitOrderError(f"validation range {va[2]}..{va[3]} must start after training ends ({tr[3]})")
    tests = {}
    for name, rng in test_ranges.items():
        te = rows(name, rng)
        if not va[3] < te[2]:
            raise SplitOrderError(f"test range {name} ({te[2]}..{te[3]}) must start after validation ends ({va[3]})")
        tests[name] = Partition(name, te[0], te[1], frame.slice(te[0], te[1]))
    return Split(
        Partition("train", tr[0], tr[1], frame.slice(tr[0], tr[1])),
        Partition("val", va[0], va[1], frame.slice(va[0], va[1])),
        tests,
    )


def fraction_ranges(frame: SeriesFrame, fractions=(0.78, 0.07, 0.15)):
    """Whole-day date ranges covering ``frame`` in the given proportions."""
    days = np.unique(frame.timestamps.astype("datetime64[D]"))
    n = len(days)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    if n_train < 1 or n_val < 1 or n - n_train - n_val < 1:
        raise InsufficientDataError(f"{n} days cannot be split as {fractions}")
    return (
        (days[0], days[n_train - 1]),
        (days[n_train], days[n_train + n_val - 1]),
        (days[n_train + n_val], days[-1]),
    )


def ett_split(frame: SeriesFrame, w):
    """The conventional ETT-hourly split: 12 / 4 / 4 months of 30 days.

    Validation and test partitions start ``w`` rows early so that their first
    window has a full input history; only rows from the nominal border onward
    are ever forecast.
    """
    month = 30 * 24
    borders = [0, 12 * month, 16 * month, 20 * month]
    if len(frame) < borders[-1]:
        raise InsufficientDataError(f"ETT split needs {borders[-1]} rows, got {len(frame)}")
    train = Partition("train", 0, borders[1], frame.slice(0, borders[1]))
    val = Partition("val", borders[1] - w, borders[2], frame.slice(borders[1] - w, borders[2]))
    test = Partition("test", borders[2] - w, borders[3], frame.slice(borders[2] - w, borders[3]))
    return Split(train, val, {"test": test})


# ---------------------------------------------------------------- normalization


@dataclass(frozen=True)
class Normalizer:
    """Per-channel affine scaling fitted on training rows.

    ``kind="minmax"`` maps a channel to ``(x - min) / (max - min)``;
    ``kind="standard"`` to ``(x - mean) / std``.  Degenerate channels use a
    unit scale so they map to 0 on the training data.
    """

    offsets: dict
    scales: dict
    kind: str = "minmax"

    @classmethod
    def fit(cls, train: SeriesFrame, kind="minmax"):
        offsets, scales = {}, {}
        for role, arr in _role_arrays(train).items():
            if arr.shape[1] == 0:
                offsets[role] = np.zeros(0)
                scales[role] = np.ones(0)
                continue
            if kind == "minmax":
                lo, hi = arr.min(axis=0), arr.max(axis=0)
                span = hi - lo
            elif kind == "standard":
                lo, span = arr.mean(axis=0), arr.std(axis=0)
            else:
                raise ValueError(f"unknown normalization {kind!r}")
            offsets[role] = lo
            scales[role] = np.where(span > 0, span, 1.0)
        return cls(offsets, scales, kind)

    def apply(self, frame: SeriesFrame) -> SeriesFrame:
        arrays = {
            _ROLE_ATTR[role]: (arr - self.offsets[role]) / self.scales[role]
            for role, arr in _role_arrays(frame).items()
        }
        return frame.replace(**arrays)

    def invert(self, frame: SeriesFrame) -> SeriesFrame:
        arrays = {
            _ROLE_ATTR[role]: arr * self.scales[role] + self.offsets[role]
            for role, arr in _role_arrays(frame).items()
        }
        return frame.replace(**arrays)

    def invert_targets(self, values):
        """Denormalize an array whose last axis is the target channels."""
        return np.asarray(values) * self.scales["target"] + self.offsets["target"]

    def apply_targets(self, values):
        return (np.asarray(values) - self.offsets["target"]) / self.scales["target"]


_ROLE_ATTR = {"target": "targets", "past": "past_covariates", "future": "future_covariates"}


def _role_arrays(frame):
    return {role: getattr(frame, attr) for role, attr in _ROLE_ATTR.items()}


fit_normalizer = Normalizer.fit


# ---------------------------------------------------------------- detrending


@dataclass(frozen=True)
class TrendDecomposition:
    window: int
    trend: np.ndarray
    residual: np.ndarray


def detrend(series, p=96) -> TrendDecomposition:
    """Split ``series`` into a trailing moving average and the remainder.

    ``trend[t]`` averages ``series[max(0, t - p + 1) .. t]``, so the trend at
    ``t`` never looks ahead; the window simply shrinks at the left edge.
    Works along axis 0 of 1-D or 2-D input.
    """
    if p < 1:
        raise ValueError("moving-average window must be >= 1")
    x = np.asarray(series, dtype=np.float64)
    if x.shape[0] == 0:
        raise InsufficientDataError("cannot detrend an empty series")
    trend = pd.DataFrame(x.reshape(len(x), -1)).rolling(p, min_periods=1).mean().to_numpy()
    trend = trend.reshape(x.shape)
    return TrendDecomposition(p, trend, x - trend)
