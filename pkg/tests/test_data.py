import numpy as np
import pytest

from fci_forecast.data import (
    Normalizer,
    SeriesFrame,
    daily_origins,
    detrend,
    ett_split,
    fraction_ranges,
    load_csv,
    make_windows,
    split_by_date,
    window_origins,
    write_csv,
)
from fci_forecast.errors import (
    GapError,
    InsufficientDataError,
    ParseError,
    SchemaError,
    SplitOrderError,
)


def hourly(n, start="2021-01-01"):
    return np.datetime64(start, "h") + np.arange(n)


def frame(n, d_t=1, d_p=2, d_f=3, seed=0, start="2021-01-01"):
    rng = np.random.default_rng(seed)
    return SeriesFrame(
        hourly(n, start), rng.normal(size=(n, d_t)), rng.normal(size=(n, d_p)), rng.normal(size=(n, d_f))
    )


# ---------------------------------------------------------------- loading


def test_prefixed_csv_maps_roles(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text(
        "timestamp,target:load,future:gtkm\n"
        "2022-01-01 00:00,1.0,10\n"
        "2022-01-01 01:00,2.0,11\n"
        "2022-01-01 02:00,3.0,12\n"
    )
    f = load_csv(p)
    assert (f.n_targets, f.n_past, f.n_future) == (1, 0, 1)
    assert f.target_names == ("load",)
    assert f.future_covariates[:, 0].tolist() == [10, 11, 12]


def test_duplicate_timestamp_reports_row_2(tmp_path):
    p = tmp_path / "dup.csv"
    p.write_text("timestamp,target:load\n2022-01-01 00:00,1\n2022-01-01 00:00,2\n")
    with pytest.raises(GapError) as err:
        load_csv(p)
    assert err.value.row == 2


def test_gap_is_rejected():
    ts = hourly(5)
    ts = np.concatenate([ts[:2], ts[3:]])
    with pytest.raises(GapError):
        SeriesFrame(ts, np.zeros(4), np.zeros((4, 0)), np.zeros((4, 0)))


def test_parse_error_has_row_and_column(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("timestamp,target:load\n2022-01-01 00:00,1\n2022-01-01 01:00,oops\n")
    with pytest.raises(ParseError) as err:
        load_csv(p)
    assert err.value.row == 2 and err.value.column == "target:load"


def test_unknown_prefix_is_schema_error(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("timestamp,target:load,futrue:x\n2022-01-01 00:00,1,2\n")
    with pytest.raises(SchemaError):
        load_csv(p)


def test_schema_mode_ett_layout(tmp_path):
    # ETT-style file: OT is the target, the six load columns are past covariates
    cols = ["HUFL", "HULL", "MUFL", "MULL", "LUFL", "LULL", "OT"]
    rows = ["date," + ",".join(cols)]
    for i, t in enumerate(hourly(30, "2016-07-01")):
        rows.append(str(t).replace("T", " ") + ":00:00," + ",".join(str(i + j) for j in range(7)))
    p = tmp_path / "ett.csv"
    p.write_text("\n".join(rows) + "\n")
    f = load_csv(p, {"timestamp": "date", "target": ["OT"], "past": cols[:6]})
    assert len(f) == 30 and f.n_targets == 1 and f.n_past == 6 and f.n_future == 0
    assert f.targets[3, 0] == 3 + 6


def test_csv_round_trip(tmp_path):
    f = frame(30)
    write_csv(f, tmp_path / "f.csv")
    g = load_csv(tmp_path / "f.csv")
    np.testing.assert_allclose(g.targets, f.targets, rtol=1e-9)
    np.testing.assert_allclose(g.future_covariates, f.future_covariates, rtol=1e-9)
    assert (g.timestamps == f.timestamps).all()


# ---------------------------------------------------------------- windows


def test_window_counts_from_examples():
    o = window_origins(100, 24, 24)
    assert len(o) == 53 and o[0] == 24 and o[-1] == 76
    assert window_origins(48, 24, 24).tolist() == [24]
    assert window_origins(100, 24, 24, stride=24).tolist() == [24, 48, 72]


def test_too_short_series():
    with pytest.raises(InsufficientDataError):
        window_origins(47, 24, 24)


def test_windows_slice_the_right_rows():
    f = frame(60)
    wins = make_windows(f, 24, 12, stride=12)
    first = wins[0]
    assert first.origin == 24
    np.testing.assert_array_equal(first.past_targets, f.targets[:24])
    np.testing.assert_array_equal(first.future_context, f.future_covariates[24:36])
    np.testing.assert_array_equal(first.target, f.targets[24:36])


def test_daily_origins_are_midnight():
    f = frame(24 * 5, start="2021-01-01T05")
    o = daily_origins(f, 24, 24)
    assert all(f.timestamps[t].astype("int64") % 24 == 0 for t in o)
    assert len(o) == 3


# ---------------------------------------------------------------- splits


def test_published_split_sizes():
    f = frame(50352, d_p=0, d_f=0, start="2017-01-01")
    days = np.unique(f.timestamps.astype("datetime64[D]"))
    s = split_by_date(f, (days[0], days[1635]), (days[1636], days[1755]), {"test": (days[1756], days[-1])})
    assert (len(s.train), len(s.val), len(s.tests["test"])) == (39264, 2880, 8208)


def test_val_before_train_rejected():
    f = frame(24 * 30)
    with pytest.raises(SplitOrderError):
        split_by_date(f, ("2021-01-10", "2021-01-20"), ("2021-01-01", "2021-01-05"), {"test": ("2021-01-25", "2021-01-30")})


def test_test_overlapping_train_rejected():
    f = frame(24 * 30)
    with pytest.raises(SplitOrderError):
        split_by_date(f, ("2021-01-01", "2021-01-20"), ("2021-01-21", "2021-01-22"), {"test": ("2021-01-10", "2021-01-30")})


def test_nested_test_ranges_are_independent():
    f = frame(24 * 40)
    s = split_by_date(
        f,
        ("2021-01-01", "2021-01-20"),
        ("2021-01-21", "2021-01-25"),
        {"small": ("2021-02-01", "2021-02-05"), "large": ("2021-01-26", "2021-02-09")},
    )
    small, large = s.tests["small"], s.tests["large"]
    assert large.start <= small.start and small.stop <= large.stop
    assert len(small) == 5 * 24 and len(large) == 15 * 24


def test_fraction_ranges_cover_everything():
    f = frame(24 * 100)
    tr, va, te = fraction_ranges(f)
    s = split_by_date(f, tr, va, {"test": te})
    assert len(s.train) + len(s.val) + len(s.tests["test"]) == len(f)


def test_ett_split_borders():
    f = frame(24 * 30 * 20 + 100, d_p=0, d_f=0)
    s = ett_split(f, 96)
    assert (s.train.start, s.train.stop) == (0, 8640)
    assert (s.val.start, s.val.stop) == (8640 - 96, 11520)
    assert (s.tests["test"].start, s.tests["test"].stop) == (11520 - 96, 14400)


# ---------------------------------------------------------------- normalization


def _one_channel(values):
    n = len(values)
    return SeriesFrame(hourly(n), np.asarray(values, float), np.zeros((n, 0)), np.zeros((n, 0)))


def test_minmax_midpoint():
    norm = Normalizer.fit(_one_channel([0, 5, 10]))
    assert norm.apply_targets(np.array([[5.0]]))[0, 0] == 0.5


def test_round_trip_example():
    f = _one_channel([-3, 7, 11])
    norm = Normalizer.fit(f)
    back = norm.invert(norm.apply(f))
    np.testing.assert_allclose(back.targets, f.targets, rtol=1e-9)


def test_constant_channel_maps_to_zero():
    f = _one_channel([4, 4])
    for kind in ("minmax", "standard"):
        assert Normalizer.fit(f, kind).apply(f).targets.tolist() == [[0.0], [0.0]]


def test_standard_kind_has_zero_mean_unit_std():
    f = frame(500)
    g = Normalizer.fit(f, "standard").apply(f)
    np.testing.assert_allclose(g.targets.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(g.past_covariates.std(axis=0), 1, atol=1e-12)


# ---------------------------------------------------------------- detrending


def test_detrend_constant():
    assert np.all(detrend(np.full(50, 3.2), 7).residual == 0)


def test_detrend_hand_computed():
    d = detrend(np.arange(0, 12, 2.0), p=2)
    assert d.trend.tolist() == [0, 1, 3, 5, 7, 9]
    assert d.residual.tolist() == [0, 1, 1, 1, 1, 1]


def test_detrend_has_no_lookahead():
    x = np.random.default_rng(0).normal(size=200)
    y = x.copy()
    y[150:] += 100
    np.testing.assert_array_equal(detrend(x, 24).trend[:150], detrend(y, 24).trend[:150])
