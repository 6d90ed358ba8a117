import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from tsimg.series import (
    DegenerateError,
    LengthError,
    NormalizationState,
    ParseError,
    ShapeError,
    apply_normalization,
    as_batch,
    denormalize,
    generate_sine,
    load_csv,
    normalize,
    write_csv,
)


# ------------------------------------------------------------------ sine


def test_sine_range_and_shape():
    x = generate_sine(500, 24, 5, seed=3)
    assert x.shape == (500, 24, 5)
    assert np.all(np.abs(x) <= 1.0)


def test_sine_is_deterministic():
    np.testing.assert_array_equal(generate_sine(50, 24, 3, 7), generate_sine(50, 24, 3, 7))
    assert not np.array_equal(generate_sine(50, 24, 3, 7), generate_sine(50, 24, 3, 8))


def test_sine_channel_means_near_zero():
    # theta uniform on a full period makes the mean over samples vanish for every t
    x = generate_sine(10_000, 24, 3, seed=0)
    assert np.abs(x.mean(axis=(0, 1))).max() < 0.05


def test_sine_matches_sampling_law():
    # re-derive eta and theta from the documented draw order
    rng = np.random.default_rng(11)
    eta = rng.uniform(0, 1, size=(4, 1, 2))
    theta = rng.uniform(-math.pi, math.pi, size=(4, 1, 2))
    t = np.arange(6)[None, :, None] / 6
    np.testing.assert_allclose(generate_sine(4, 6, 2, 11), np.sin(2 * math.pi * eta * t + theta), atol=0)


def test_sine_channels_share_marginal():
    # chi-squared two-sample test on 50 bins between two feature channels
    x = generate_sine(4000, 24, 2, seed=5)
    edges = np.linspace(-1, 1, 51)
    a = np.histogram(x[..., 0], edges)[0]
    b = np.histogram(x[..., 1], edges)[0]
    table = np.stack([a, b])
    _, p, _, _ = stats.chi2_contingency(table)
    assert p > 0.01


# ------------------------------------------------------------------ csv


def _write(path, text):
    path.write_text(text)
    return path


def test_load_small_file(tmp_path):
    p = _write(tmp_path / "d.csv", "series_id,t,f0\na,0,1\na,1,2\na,2,3\na,3,4\nb,0,5\nb,1,6\nb,2,7\nb,3,8\n")
    ids, x = load_csv(p)
    assert ids == ["a", "b"]
    assert x.shape == (2, 4, 1)
    np.testing.assert_array_equal(x[1, :, 0], [5, 6, 7, 8])


def test_load_sorts_timesteps(tmp_path):
    p = _write(tmp_path / "d.csv", "series_id,t,f0\na,1,2\na,0,1\n")
    np.testing.assert_array_equal(load_csv(p)[1][0, :, 0], [1, 2])


def test_non_numeric_cell_names_row_and_column(tmp_path):
    p = _write(tmp_path / "d.csv", "series_id,t,f0,f1\na,0,1,2\na,1,oops,3\n")
    with pytest.raises(ParseError, match=r"row 3.*'f0'"):
        load_csv(p)


def test_ragged_lengths_rejected(tmp_path):
    p = _write(tmp_path / "d.csv", "series_id,t,f0\na,0,1\na,1,2\nb,0,1\n")
    with pytest.raises(LengthError, match="'b'"):
        load_csv(p)


def test_duplicate_timestep_rejected(tmp_path):
    p = _write(tmp_path / "d.csv", "series_id,t,f0\na,0,1\na,0,2\n")
    with pytest.raises(ParseError, match="duplicate"):
        load_csv(p)


def test_bad_header_rejected(tmp_path):
    with pytest.raises(ParseError):
        load_csv(_write(tmp_path / "d.csv", "id,time,x\n"))
    with pytest.raises(ShapeError):
        load_csv(_write(tmp_path / "e.csv", "series_id,t,f1\n"))


def test_missing_cells(tmp_path):
    p = _write(tmp_path / "d.csv", "series_id,t,f0\na,0,1\na,1,\n")
    with pytest.raises(ParseError):
        load_csv(p)
    _, x = load_csv(p, allow_missing=True)
    assert np.isnan(x[0, 1, 0]) and x[0, 0, 0] == 1


def test_csv_round_trip(tmp_path):
    x = np.random.default_rng(0).normal(size=(7, 13, 3)) * 1e3
    write_csv(tmp_path / "r.csv", x, [f"s{i}" for i in range(7)])
    ids, y = load_csv(tmp_path / "r.csv")
    assert ids == [f"s{i}" for i in range(7)]
    np.testing.assert_allclose(y, x, rtol=1e-12, atol=0)


def test_csv_round_trip_keeps_nan(tmp_path):
    x = np.ones((1, 3, 2))
    x[0, 1, 1] = np.nan
    write_csv(tmp_path / "r.csv", x)
    _, y = load_csv(tmp_path / "r.csv", allow_missing=True)
    np.testing.assert_array_equal(np.isnan(y), np.isnan(x))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=6, max_size=6))
def test_csv_round_trip_property(tmp_path_factory, values):
    path = tmp_path_factory.mktemp("csv") / "p.csv"
    x = np.array(values).reshape(2, 3, 1)
    write_csv(path, x)
    # repr of a float parses back to the same double
    np.testing.assert_array_equal(load_csv(path)[1], x)


def test_as_batch_promotes_and_validates():
    assert as_batch(np.zeros((4, 2))).shape == (1, 4, 2)
    with pytest.raises(ShapeError):
        as_batch(np.zeros(3))
    with pytest.raises(ValueError):
        as_batch(np.array([[np.inf]]))


# ------------------------------------------------------------------ normalization


@pytest.mark.parametrize("kind", ["minmax01", "minmax11", "center-std", "none"])
def test_normalize_round_trip(kind):
    x = np.random.default_rng(1).normal(size=(20, 10, 3)) * 5 + 2
    y, state = normalize(x, kind)
    np.testing.assert_allclose(denormalize(y, state), x, rtol=1e-9, atol=1e-12)


def test_minmax_ranges():
    x = np.random.default_rng(2).uniform(-7, 3, size=(30, 8, 2))
    y01, _ = normalize(x, "minmax01")
    y11, _ = normalize(x, "minmax11")
    assert y01.min() >= 0 and y01.max() <= 1
    np.testing.assert_allclose([y11.min(), y11.max()], [-1, 1])


def test_center_std_statistics():
    x = np.random.default_rng(3).normal(size=(40, 16, 2)) * 3 + 10
    y, _ = normalize(x, "center-std")
    np.testing.assert_allclose(y.mean(axis=1), 0, atol=1e-12)
    np.testing.assert_allclose(y.std(axis=(0, 1)), 1, rtol=1e-12)


def test_constant_channel_is_degenerate():
    x = np.random.default_rng(4).normal(size=(5, 6, 2))
    x[..., 1] = 3.0
    with pytest.raises(DegenerateError, match="channel 1"):
        normalize(x, "minmax01")


def test_unknown_kind():
    with pytest.raises(ValueError, match="unknown normalization"):
        normalize(np.zeros((1, 2, 1)) + [[[0], [1]]], "zscore")


def test_identity_state_is_noop():
    state = NormalizationState("center-std", np.zeros((1, 1, 1)), np.ones((1, 1, 1)))
    x = np.arange(6.0).reshape(1, 6, 1)
    np.testing.assert_array_equal(denormalize(x, state), x)


def test_denormalize_midpoint():
    state = NormalizationState("minmax01", np.full((1, 1, 1), 2.0), np.full((1, 1, 1), 2.0))
    assert denormalize(np.full((1, 1, 1), 0.5), state)[0, 0, 0] == 3.0


def test_apply_matches_fit_and_serializes():
    x = np.random.default_rng(5).normal(size=(12, 9, 2))
    y, state = normalize(x, "minmax11")
    restored = NormalizationState.from_dict(state.to_dict())
    np.testing.assert_array_equal(apply_normalization(x, restored), y)


def test_center_std_for_new_series_uses_mean_offset():
    x = np.random.default_rng(6).normal(size=(10, 5, 1)) + np.arange(10)[:, None, None]
    _, state = normalize(x, "center-std")
    new = state.for_new_series()
    assert new.offset.shape == (1, 1, 1)
    np.testing.assert_allclose(new.offset, state.offset.mean(axis=0, keepdims=True))
