"""Railway-like synthetic datasets with informative future context.

Load is driven by a per-region transport plan (gross tonne-kilometres,
GTKM) known one day ahead, a heating term and a rush-hour profile:

    load[t] = sum_r alpha_r * GTKM_r[t] + beta * max(0, 18 - temp[t])
              + gamma * rush[hour(t)] + noise

The plan follows weekday/weekend templates scaled by a day-to-day volume
factor, and a calendar of perturbation days (holidays run the weekend
timetable, construction cuts one region by 20 %, special events add 15 %).
A forecaster that only sees the past cannot anticipate either; one that
reads the plan can.  All coefficients are arbitrary choices for this
generator, not measured railway quantities.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import SeriesFrame
from .errors import ConfigError

HEATING_BASE = 18.0
KINDS = ("holiday", "construction", "special_event")
KIND_FACTOR = {"construction": 0.8, "special_event": 1.15}
DEFAULT_REGIONS = ("west", "east", "central", "south")


def _bump(hours, centre, width):
    return np.exp(-0.5 * ((hours - centre) / width) ** 2)


def rush_profile():
    """Two-peak (07:00 and 17:00) passenger profile scaled to [0, 1]."""
    hours = np.arange(24.0)
    prof = _bump(hours, 7.5, 1.3) + 0.9 * _bump(hours, 17.5, 1.6)
    return prof / prof.max()


def default_templates(n_regions=4):
    """Weekday and weekend hourly GTKM templates, ``(R, 24)`` each."""
    hours = np.arange(24.0)
    night = 0.35 + 0.15 * np.cos(2 * np.pi * (hours - 3) / 24)
    weekday = 40 + 60 * (night * 0.5 + rush_profile())
    weekend = 0.6 * (40 + 60 * (night * 0.5 + 0.5 * rush_profile()))
    scales = np.array([1.0, 0.8, 1.2, 0.6, 0.9, 1.1, 0.7, 1.3])
    scales = np.resize(scales, n_regions)
    return scales[:, None] * weekday, scales[:, None] * weekend


@dataclass(frozen=True)
class ScheduleConfig:
    n_days: int = 365
    start: str = "2022-01-03"
    regions: int = 4
    weekday_templates: np.ndarray | None = None
    weekend_templates: np.ndarray | None = None
    perturbation_rate: float = 0.1
    daily_volume_sd: float = 0.08
    temp_mean: float = 10.0
    temp_amplitude: float = 9.0
    temp_phase_day: float = 200.0
    temp_diurnal: float = 4.0
    weather_sd: float = 3.0
    alpha: tuple = (0.5,)  # one value is shared by all regions
    beta: float = 2.0
    gamma: float = 20.0
    noise_sd: float | None = None  # None: 2 % of the mean noiseless load
    plan_noise_sd: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.n_days < 14:
            raise ConfigError("n_days must be >= 14")
        if self.regions < 1:
            raise ConfigError("need at least one region")
        if not 0 <= self.perturbation_rate <= 1:
            raise ConfigError("perturbation_rate must lie in [0, 1]")
        for name in ("daily_volume_sd", "weather_sd", "plan_noise_sd"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.noise_sd is not None and self.noise_sd < 0:
            raise ConfigError("noise_sd must be non-negative")
        if len(self.alpha) not in (1, self.regions):
            raise ConfigError(f"alpha needs 1 or {self.regions} entries")
        wk, we = self.templates()
        if wk.shape != (self.regions, 24) or we.shape != (self.regions, 24):
            raise ConfigError(f"templates must have shape ({self.regions}, 24)")
        if (wk < 0).any() or (we < 0).any():
            raise ConfigError("templates must be non-negative")
        try:
            np.datetime64(self.start, "D")
        except ValueError as exc:
            raise ConfigError(f"bad start date {self.start!r}") from exc

    def templates(self):
        wk_default, we_default = default_templates(self.regions)
        wk = wk_default if self.weekday_templates is None else np.asarray(self.weekday_templates, float)
        we = we_default if self.weekend_templates is None else np.asarray(self.weekend_templates, float)
        return wk, we

    @property
    def alphas(self):
        return np.resize(np.asarray(self.alpha, dtype=float), self.regions)

    @property
    def region_names(self):
        if self.regions <= len(DEFAULT_REGIONS):
            return DEFAULT_REGIONS[: self.regions]
        return tuple(f"region{r}" for r in range(self.regions))


@dataclass(frozen=True)
class PerturbationCalendar:
    """Event days as ``(day_index, kind, region)``; region -1 means network-wide."""

    events: tuple = field(default_factory=tuple)

    def __len__(self):
        return len(self.events)

    def on(self, day):
        for ev in self.events:
            if ev[0] == day:
                return ev
        return None

    def write_csv(self, path):
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["day_index", "kind", "region"])
            out.writerows(self.events)


def _streams(seed):
    names = ("calendar", "volume", "plan", "weather", "noise")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.default_rng(s) for n, s in zip(names, children)}


def _calendar(config, weekdays, rng):
    n_events = int(round(config.perturbation_rate * config.n_days))
    if n_events == 0:
        return PerturbationCalendar(())
    kinds = list(rng.choice(len(KINDS), size=n_events))
    workdays = np.flatnonzero(weekdays < 5)
    n_hol = min(kinds.count(0), len(workdays))
    # holidays beyond the number of workdays become construction days
    seen = 0
    for i, k in enumerate(kinds):
        if k == 0:
            seen += 1
            if seen > n_hol:
                kinds[i] = 1
    hol_days = rng.choice(workdays, size=n_hol, replace=False)
    rest = np.setdiff1d(np.arange(config.n_days), hol_days)
    other_days = rng.choice(rest, size=n_events - n_hol, replace=False)
    holidays = iter(hol_days)
    others = iter(other_days)
    events = []
    for k in kinds:
        if k == 0:
            events.append((int(next(holidays)), "holiday", -1))
        else:
            events.append((int(next(others)), KINDS[k], int(rng.integers(config.regions))))
    return PerturbationCalendar(tuple(sorted(events)))


def _day_info(config):
    dates = np.datetime64(config.start, "D") + np.arange(config.n_days)
    # 1970-01-01 was a Thursday
    weekdays = (dates.astype("int64") + 3) % 7
    doy = (dates - dates.astype("datetime64[Y]")).astype("int64")
    return dates, weekdays, doy


def planned_schedule(config, calendar=None, apply_events=True):
    """Planned GTKM, ``(n_days * 24, R)``, before execution noise."""
    streams = _streams(config.seed)
    dates, weekdays, _ = _day_info(config)
    if calendar is None:
        calendar = _calendar(config, weekdays, streams["calendar"])
    wk, we = config.templates()
    volume = 1.0 + config.daily_volume_sd * streams["volume"].standard_normal((config.n_days, config.regions))
    volume = np.clip(volume, 0.2, None)
    weekend = weekdays >= 5
    plan = np.where(weekend[:, None, None], we[None], wk[None]).copy()  # (days, R, 24)
    if apply_events:
        for day, kind, region in calendar.events:
            if kind == "holiday":
                plan[day] = we
            else:
                plan[day, region] *= KIND_FACTOR[kind]
    plan = plan * volume[:, :, None]
    return plan.transpose(0, 2, 1).reshape(-1, config.regions), calendar


def _temperature(config, rng):
    _, _, doy = _day_info(config)
    anomaly = np.empty(config.n_days)
    level = rng.standard_normal() * config.weather_sd
    phi = 0.7
    for d in range(config.n_days):
        level = phi * level + np.sqrt(1 - phi ** 2) * config.weather_sd * rng.standard_normal()
        anomaly[d] = level
    hours = np.arange(24.0)
    seasonal = config.temp_mean + config.temp_amplitude * np.cos(2 * np.pi * (doy - config.temp_phase_day) / 365.25)
    diurnal = config.temp_diurnal * np.cos(2 * np.pi * (hours - 15) / 24)
    return ((seasonal + anomaly)[:, None] + diurnal[None, :]).reshape(-1)


def load_law(config, gtkm, temperature, hours):
    """Noise-free load for given per-region GTKM ``(L, R)``, temperatures and hours."""
    heating = np.maximum(0.0, HEATING_BASE - np.asarray(temperature))
    return (
        np.asarray(gtkm) @ config.alphas
        + config.beta * heating
        + config.gamma * rush_profile()[np.asarray(hours)]
    )


def generate(config: ScheduleConfig):
    """Simulate ``config.n_days`` of hourly load with plan and weather covariates.

    Future covariates hold the day-ahead plan (per-region GTKM and train
    counts) and the temperature forecast with its heating-degree
    transform.  Past covariates hold the realized values.  Load is clamped
    at zero.  Deterministic in ``config.seed``.
    """
    streams = _streams(config.seed)
    dates, weekdays, _ = _day_info(config)
    calendar = _calendar(config, weekdays, streams["calendar"])
    plan, _ = planned_schedule(config, calendar)
    n = config.n_days * 24
    hours = np.tile(np.arange(24), config.n_days)
    realized = plan * (1.0 + config.plan_noise_sd * streams["plan"].standard_normal(plan.shape))
    realized = np.clip(realized, 0.0, None)
    temp = _temperature(config, streams["weather"])
    clean = load_law(config, realized, temp, hours)
    noise_sd = config.noise_sd
    if noise_sd is None:
        noise_sd = 0.02 * float(load_law(config, plan, temp, hours).mean())
    load = np.clip(clean + noise_sd * streams["noise"].standard_normal(n), 0.0, None)

    # train counts: one train per 12.5 GTKM-units of plan, a schedule-side view of the same volume
    trains_plan = plan / 12.5
    trains_real = realized / 12.5
    heating = np.maximum(0.0, HEATING_BASE - temp)
    names = config.region_names
    timestamps = (dates.astype("datetime64[h]")[:, None] + np.arange(24)).reshape(-1)
    frame = SeriesFrame(
        timestamps,
        load[:, None],
        np.column_stack([realized, trains_real, temp]),
        np.column_stack([plan, trains_plan, temp, heating]),
        ("load",),
        tuple(f"gtkm_{r}" for r in names) + tuple(f"trains_{r}" for r in names) + ("temp",),
        tuple(f"gtkm_plan_{r}" for r in names) + tuple(f"trains_plan_{r}" for r in names)
        + ("temp_forecast", "heating_forecast"),
    )
    return frame, calendar


def oracle_forecast(frame: SeriesFrame, calendar, config: ScheduleConfig, t, h=24):
    """Apply the true load law to the planned covariates on ``[t, t + h)``.

    This is the best forecast available without knowing the execution and
    load noise; its error is the noise floor of the dataset.  ``frame``
    must be un-normalized output of :func:`generate` for ``config``.
    """
    if t < 0 or t + h > len(frame):
        raise IndexError(f"window [{t}, {t + h}) outside frame of length {len(frame)}")
    r = config.regions
    fut = frame.future_covariates[t:t + h]
    hours = (frame.timestamps[t:t + h].astype("int64") % 24)
    pred = load_law(config, fut[:, :r], fut[:, 2 * r], hours)
    return np.clip(pred, 0.0, None)[:, None]
