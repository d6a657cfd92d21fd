"""Experiment configuration files.

The format is flat ``key = value`` lines grouped under ``[section]``
headers; ``#`` and ``;`` start comments.  Every key is validated against
the reference below and unknown keys are errors, so a typo in an ablation
matrix fails loudly instead of silently running the default.

Reference (defaults in parentheses)::

    [data]
    source            synthetic | csv                         (synthetic)
    path              CSV path, relative to the config file
    timestamp_column  column holding timestamps when the CSV is unprefixed
    target_columns    comma list; giving any *_columns enables schema mode
    past_columns      comma list
    future_columns    comma list
    n_days            synthetic days                          (365)
    start             first synthetic date                    (2022-01-03)
    perturbation_rate fraction of event days                  (0.1)
    noise_sd          load noise in MW; "auto" = 2 % of mean   (auto)
    plan_noise_sd     relative execution deviation            (0.01)
    daily_volume_sd   day-to-day plan variation               (0.08)
    weather_sd        daily temperature anomaly sd            (3.0)
    data_seed         generator seed                          (0)
    normalization     minmax | standard                       (minmax)
    detrend           true | false                            (false)
    detrend_window    trailing moving-average length          (96)

    [split]
    mode              fraction | dates | ett                  (fraction)
    fractions         train,val,test                          (0.78,0.07,0.15)
    train             first,last date (mode = dates)
    val               first,last date
    test              first,last date; further sets as test_<name>

    [model]
    type              stf | tst | dlinear | ridge | naive     (stf)
    fci               on | off                                (on)
    mask              non_causal | causal                     (non_causal)
    encoder_inputs    full | no_target | no_context           (full)
    w, h              input window and horizon                (24, 24)
    d_model, d_ff, n_heads, n_encoder_layers, n_decoder_layers, dropout, d_context
                      transformer sizes (variant defaults)
    ridge_lambda      (1e-3)
    naive_period      (168)
    dlinear_kernel    (25)

    [train]
    batch_size, max_epochs, lr, warmup_steps, plateau_patience, decay,
    weight_decay, early_stop, precision      see TrainConfig
    train_stride      hourly stride of training windows       (1)
    seeds             comma list                              (0)
    threads           torch intra-op threads                  (1)

    [eval]
    stride            daily | <int>                           (daily)
    scale             original | normalized                   (original)

    [ablation]
    model, fci, mask, w, encoder_inputs, seeds   comma lists spanning the matrix
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .training import TrainConfig


def _bool(text):
    t = text.strip().lower()
    if t in ("true", "yes", "on", "1"):
        return True
    if t in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _list(text):
    return [x.strip() for x in text.split(",") if x.strip()]


def _ints(text):
    return [int(x) for x in _list(text)]


def _floats(text):
    return [float(x) for x in _list(text)]


def _opt_float(text):
    return None if text.strip().lower() in ("auto", "none", "") else float(text)


def _opt_int(text):
    return None if text.strip().lower() in ("auto", "none", "") else int(text)


def _pair(text):
    parts = _list(text)
    if len(parts) != 2:
        raise ValueError(f"expected 'first,last', got {text!r}")
    return tuple(parts)


def _choice(*options):
    def parse(text):
        t = text.strip().lower()
        if t not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {text!r}")
        return t

    return parse


def _stride(text):
    t = text.strip().lower()
    return "daily" if t == "daily" else int(t)


MODELS = ("stf", "tst", "dlinear", "ridge", "naive")
TRANSFORMERS = ("stf", "tst")

SCHEMA = {
    "data": {
        "source": _choice("synthetic", "csv"),
        "path": str,
        "timestamp_column": str,
        "target_columns": _list,
        "past_columns": _list,
        "future_columns": _list,
        "n_days": int,
        "start": str,
        "perturbation_rate": float,
        "noise_sd": _opt_float,
        "plan_noise_sd": float,
        "daily_volume_sd": float,
        "weather_sd": float,
        "data_seed": int,
        "normalization": _choice("minmax", "standard"),
        "detrend": _bool,
        "detrend_window": int,
    },
    "split": {
        "mode": _choice("fraction", "dates", "ett"),
        "fractions": _floats,
        "train": _pair,
        "val": _pair,
        "test": _pair,
    },
    "model": {
        "type": _choice(*MODELS),
        "fci": _bool,
        "mask": _choice("non_causal", "causal"),
        "encoder_inputs": _choice("full", "no_target", "no_context"),
        "w": int,
        "h": int,
        "d_model": int,
        "d_ff": int,
        "n_heads": int,
        "n_encoder_layers": int,
        "n_decoder_layers": int,
        "dropout": float,
        "d_context": _opt_int,
        "ridge_lambda": float,
        "naive_period": int,
        "dlinear_kernel": int,
    },
    "train": {
        "batch_size": int,
        "max_epochs": int,
        "lr": float,
        "warmup_steps": int,
        "plateau_patience": int,
        "decay": float,
        "weight_decay": float,
        "early_stop": int,
        "precision": int,
        "train_stride": int,
        "seeds": _ints,
        "threads": int,
    },
    "eval": {"stride": _stride, "scale": _choice("original", "normalized")},
    "ablation": {
        "model": lambda t: [_choice(*MODELS)(x) for x in _list(t)],
        "fci": lambda t: [_bool(x) for x in _list(t)],
        "mask": lambda t: [_choice("non_causal", "causal")(x) for x in _list(t)],
        "w": _ints,
        "encoder_inputs": lambda t: [_choice("full", "no_target", "no_context")(x) for x in _list(t)],
        "seeds": _ints,
    },
}


def parse_text(text):
    """Parse config text into ``{section: {key: (value, line)}}`` with validation."""
    sections, current = {}, None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].split(";", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {raw.strip()!r}", lineno)
            current = line[1:-1].strip().lower()
            if current not in SCHEMA:
                raise ConfigError(f"unknown section [{current}]", lineno)
            if current in sections:
                raise ConfigError(f"section [{current}] appears twice", lineno)
            sections[current] = {}
            continue
        if current is None:
            raise ConfigError("key outside of any section", lineno)
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, value = key.strip().lower(), value.strip()
        lookup = "test" if current == "split" and key.startswith("test_") else key
        if lookup not in SCHEMA[current]:
            raise ConfigError(f"unknown key {key!r} in [{current}]", lineno)
        if key in sections[current]:
            raise ConfigError(f"duplicate key {key!r} in [{current}]", lineno)
        try:
            parsed = SCHEMA[current][lookup](value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", lineno) from None
        sections[current][key] = (parsed, lineno)
    return sections


@dataclass(frozen=True)
class DataSpec:
    source: str = "synthetic"
    path: str | None = None
    schema: dict | None = None
    synthetic: dict = field(default_factory=dict)
    normalization: str = "minmax"
    detrend: bool = False
    detrend_window: int = 96


@dataclass(frozen=True)
class SplitSpec:
    mode: str = "fraction"
    fractions: tuple = (0.78, 0.07, 0.15)
    train: tuple | None = None
    val: tuple | None = None
    tests: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ModelSpec:
    model: str = "stf"
    fci: bool = True
    mask: str = "non_causal"
    encoder_inputs: str = "full"
    w: int = 24
    h: int = 24
    sizes: dict = field(default_factory=dict)
    ridge_lambda: float = 1e-3
    naive_period: int = 168
    dlinear_kernel: int = 25

    def validate(self):
        """Reject axis combinations that have no meaning for the model type."""
        if self.model not in TRANSFORMERS:
            if self.mask != "non_causal":
                raise ConfigError(f"mask applies only to transformer models, not {self.model}")
            if self.encoder_inputs != "full":
                raise ConfigError(f"encoder_inputs applies only to transformer models, not {self.model}")
        if self.model == "naive" and self.fci:
            raise ConfigError("seasonal naive has no use for future context; set fci = off")
        if self.model == "naive" and self.w < self.naive_period:
            raise ConfigError(f"seasonal naive needs w >= naive_period ({self.naive_period})")
        return self

    @property
    def label(self):
        parts = [self.model, f"w{self.w}", "fci" if self.fci else "nofci"]
        if self.mask != "non_causal":
            parts.append(self.mask)
        if self.encoder_inputs != "full":
            parts.append(self.encoder_inputs)
        return "-".join(parts)


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataSpec = DataSpec()
    split: SplitSpec = SplitSpec()
    model: ModelSpec = ModelSpec()
    train: TrainConfig = TrainConfig()
    train_stride: int = 1
    seeds: tuple = (0,)
    threads: int = 1
    eval_stride: object = "daily"
    eval_scale: str = "original"
    ablation: dict | None = None
    base_dir: str = "."

    def with_model(self, **changes):
        return dataclasses.replace(self, model=dataclasses.replace(self.model, **changes))

    def to_text(self):
        """Canonical config text; parsing it yields an equal configuration."""
        return render(self)


def _values(section):
    return {k: v for k, (v, _) in section.items()}


def from_text(text, base_dir="."):
    sections = parse_text(text)
    d = _values(sections.get("data", {}))
    schema = None
    if any(k in d for k in ("target_columns", "past_columns", "future_columns", "timestamp_column")):
        schema = {
            "timestamp": d.pop("timestamp_column", "timestamp"),
            "target": d.pop("target_columns", []),
            "past": d.pop("past_columns", []),
            "future": d.pop("future_columns", []),
        }
    synthetic = {}
    for key, target in (
        ("n_days", "n_days"),
        ("start", "start"),
        ("perturbation_rate", "perturbation_rate"),
        ("noise_sd", "noise_sd"),
        ("plan_noise_sd", "plan_noise_sd"),
        ("daily_volume_sd", "daily_volume_sd"),
        ("weather_sd", "weather_sd"),
        ("data_seed", "seed"),
    ):
        if key in d:
            synthetic[target] = d.pop(key)
    data = DataSpec(
        source=d.pop("source", "synthetic"),
        path=d.pop("path", None),
        schema=schema,
        synthetic=synthetic,
        normalization=d.pop("normalization", "minmax"),
        detrend=d.pop("detrend", False),
        detrend_window=d.pop("detrend_window", 96),
    )
    if data.source == "csv" and not data.path:
        line = sections.get("data", {}).get("source", (None, None))[1]
        raise ConfigError("source = csv needs a path", line)

    s_raw = sections.get("split", {})
    s = _values(s_raw)
    tests = {}
    if "test" in s:
        tests["test"] = s.pop("test")
    for key in sorted(k for k in s if k.startswith("test_")):
        tests[key[5:]] = s.pop(key)
    split = SplitSpec(
        mode=s.get("mode", "fraction"),
        fractions=tuple(s.get("fractions", (0.78, 0.07, 0.15))),
        train=s.get("train"),
        val=s.get("val"),
        tests=tests,
    )
    if split.mode == "dates" and (split.train is None or split.val is None or not split.tests):
        line = s_raw.get("mode", (None, None))[1]
        raise ConfigError("mode = dates needs train, val and at least one test range", line)
    if split.mode == "fraction" and (len(split.fractions) != 3 or abs(sum(split.fractions) - 1) > 1e-6):
        raise ConfigError("fractions must be three numbers summing to 1", s_raw.get("fractions", (None, None))[1])

    m_raw = sections.get("model", {})
    m = _values(m_raw)
    size_keys = ("d_model", "d_ff", "n_heads", "n_encoder_layers", "n_decoder_layers", "dropout", "d_context")
    model = ModelSpec(
        model=m.get("type", "stf"),
        fci=m.get("fci", True),
        mask=m.get("mask", "non_causal"),
        encoder_inputs=m.get("encoder_inputs", "full"),
        w=m.get("w", 24),
        h=m.get("h", 24),
        sizes={k: m[k] for k in size_keys if k in m},
        ridge_lambda=m.get("ridge_lambda", 1e-3),
        naive_period=m.get("naive_period", 168),
        dlinear_kernel=m.get("dlinear_kernel", 25),
    )
    try:
        model.validate()
    except ConfigError as exc:
        raise ConfigError(str(exc), m_raw.get("type", (None, None))[1]) from None

    t_raw = sections.get("train", {})
    t = _values(t_raw)
    seeds = tuple(t.pop("seeds", [0]))
    train_stride = t.pop("train_stride", 1)
    threads = t.pop("threads", 1)
    try:
        train = TrainConfig(**t)
    except ValueError as exc:
        raise ConfigError(f"[train]: {exc}", min((ln for _, ln in t_raw.values()), default=None)) from None
    if not seeds:
        raise ConfigError("seeds must not be empty", t_raw.get("seeds", (None, None))[1])

    ablation = _values(sections["ablation"]) if "ablation" in sections else None
    return ExperimentConfig(
        data=data,
        split=split,
        model=model,
        train=train,
        train_stride=train_stride,
        seeds=seeds,
        threads=threads,
        eval_stride=_values(sections.get("eval", {})).get("stride", "daily"),
        eval_scale=_values(sections.get("eval", {})).get("scale", "original"),
        ablation=ablation,
        base_dir=str(base_dir),
    )


def load(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return from_text(text, base_dir=path.parent)


def _fmt(v):
    if isinstance(v, bool):
        return "on" if v else "off"
    if isinstance(v, (list, tuple)):
        return ",".join(_fmt(x) for x in v)
    if v is None:
        return "auto"
    return str(v)


def render(cfg: ExperimentConfig):
    lines = ["[data]", f"source = {cfg.data.source}"]
    if cfg.data.path:
        path = Path(cfg.data.path)
        if not path.is_absolute():
            path = (Path(cfg.base_dir) / path).resolve()
        lines.append(f"path = {path}")
    if cfg.data.schema:
        lines.append(f"timestamp_column = {cfg.data.schema['timestamp']}")
        for role in ("target", "past", "future"):
            if cfg.data.schema.get(role):
                lines.append(f"{role}_columns = {_fmt(cfg.data.schema[role])}")
    inverse = {"seed": "data_seed"}
    for k, v in sorted(cfg.data.synthetic.items()):
        lines.append(f"{inverse.get(k, k)} = {_fmt(v)}")
    lines += [
        f"normalization = {cfg.data.normalization}",
        f"detrend = {_fmt(cfg.data.detrend)}",
        f"detrend_window = {cfg.data.detrend_window}",
        "",
        "[split]",
        f"mode = {cfg.split.mode}",
        f"fractions = {_fmt(cfg.split.fractions)}",
    ]
    if cfg.split.train:
        lines.append(f"train = {_fmt(cfg.split.train)}")
    if cfg.split.val:
        lines.append(f"val = {_fmt(cfg.split.val)}")
    for name, rng in cfg.split.tests.items():
        lines.append(f"{'test' if name == 'test' else 'test_' + name} = {_fmt(rng)}")
    m = cfg.model
    lines += [
        "",
        "[model]",
        f"type = {m.model}",
        f"fci = {_fmt(m.fci)}",
        f"mask = {m.mask}",
        f"encoder_inputs = {m.encoder_inputs}",
        f"w = {m.w}",
        f"h = {m.h}",
    ]
    lines += [f"{k} = {_fmt(v)}" for k, v in sorted(m.sizes.items())]
    lines += [
        f"ridge_lambda = {m.ridge_lambda!r}",
        f"naive_period = {m.naive_period}",
        f"dlinear_kernel = {m.dlinear_kernel}",
        "",
        "[train]",
    ]
    # the per-run seed comes from ``seeds``
    lines += [f"{k} = {v!r}" for k, v in dataclasses.asdict(cfg.train).items() if k != "seed"]
    lines += [
        f"train_stride = {cfg.train_stride}",
        f"seeds = {_fmt(cfg.seeds)}",
        f"threads = {cfg.threads}",
        "",
        "[eval]",
        f"stride = {cfg.eval_stride}",
        f"scale = {cfg.eval_scale}",
    ]
    if cfg.ablation:
        lines += ["", "[ablation]"] + [f"{k} = {_fmt(v)}" for k, v in cfg.ablation.items()]
    return "\n".join(lines) + "\n"
