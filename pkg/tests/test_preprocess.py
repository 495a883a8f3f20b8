import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import signal

from quakegraph.preprocess import (augment, bandpass_2_8, bandpass_sos, demean, downsample_8x, label_series,
                                   normalize_window, preprocess_window)

RATE = 200.0
T20 = np.arange(4000) / RATE


def test_demean_examples():
    assert demean([5, 5, 5, 5]).tolist() == [0, 0, 0, 0]
    assert demean([1, 2, 3]).tolist() == [-1, 0, 1]
    with pytest.raises(ValueError):
        demean([])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_demean_random(seed):
    x = np.random.default_rng(seed).normal(loc=7.0, scale=3.0, size=500)
    assert abs(demean(x).mean()) < 1e-12 * np.abs(x).max()


def test_bandpass_zero_in_zero_out():
    assert np.array_equal(bandpass_2_8(np.zeros(4000), RATE), np.zeros(4000))


def _steady_amplitude(freq):
    out = bandpass_2_8(np.sin(2 * np.pi * freq * T20), RATE)
    return np.abs(out[1000:3000]).max()


def _analytic_gain(freq):
    # two passes of the filter: squared magnitude response
    _, h = signal.sosfreqz(bandpass_sos(RATE), worN=[freq], fs=RATE)
    return float(np.abs(h[0]) ** 2)


def test_bandpass_passes_4hz():
    amp = _steady_amplitude(4.0)
    assert 0.9 <= amp <= 1.05
    assert abs(amp - _analytic_gain(4.0)) < 5e-3


def test_bandpass_rejects_low_frequency():
    amp = _steady_amplitude(0.2)
    assert amp <= 0.01
    assert abs(amp - _analytic_gain(0.2)) < 1e-3 * max(amp, 1e-6) + 1e-7


def test_bandpass_rate_check():
    with pytest.raises(ValueError):
        bandpass_2_8(np.zeros(100), 16.0)


def test_normalize_median_divisor():
    data = np.zeros((3, 5, 3))
    data[:, 2, 0] = [1.0, -2.0, 4.0]
    data[:, :, 1:] = 1.0
    out, warnings = normalize_window(data)
    assert np.abs(out[:, :, 0]).max(axis=1).tolist() == [0.5, 1.0, 2.0]
    assert warnings == []


def test_normalize_identical_stations():
    one = np.random.default_rng(0).normal(size=(1, 40, 3))
    out, _ = normalize_window(np.repeat(one, 4, axis=0))
    assert np.all(np.abs(out).max(axis=1) == 1.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(1e-3, 1e3))
def test_normalize_scale_invariant(seed, scale):
    x = np.random.default_rng(seed).normal(size=(4, 30, 3))
    np.testing.assert_allclose(normalize_window(x * scale)[0], normalize_window(x)[0], rtol=1e-12)


def test_normalize_zero_component_passes_through():
    x = np.random.default_rng(1).normal(size=(3, 10, 3))
    x[:, :, 2] = 0
    out, warnings = normalize_window(x)
    assert len(warnings) == 1 and "component 2" in warnings[0]
    assert np.all(out[:, :, 2] == 0)


def test_downsample_examples():
    assert downsample_8x(np.zeros(4000)).shape == (500,)
    assert downsample_8x(np.arange(16)).tolist() == [0, 8]
    with pytest.raises(ValueError):
        downsample_8x(np.arange(7))


def test_downsample_keeps_sine_samples():
    kept = downsample_8x(np.sin(2 * np.pi * 5 * T20))
    expected = np.sin(2 * np.pi * 5 * np.arange(500) / 25.0)
    assert np.abs(kept - expected).max() < 1e-12


def test_pipeline_shape():
    raw = np.random.default_rng(0).normal(size=(13, 4000, 3))
    out, warnings = preprocess_window(raw, RATE)
    assert out.shape == (13, 500, 3) and warnings == []


def test_pipeline_matches_composition():
    raw = np.random.default_rng(2).normal(size=(2, 400, 3))
    x = np.moveaxis(raw, 1, -1)
    x = bandpass_2_8(demean(x), RATE)
    x, _ = normalize_window(np.moveaxis(x, -1, 1))
    expected = downsample_8x(np.moveaxis(x, 1, -1))
    np.testing.assert_allclose(preprocess_window(raw, RATE)[0], np.moveaxis(expected, -1, 1), rtol=0, atol=0)


def test_label_run_for_ten_and_fourteen():
    lab = label_series([(10.0, 14.0)], 0.0, 500, 25.0)[0]
    ones = np.flatnonzero(lab)
    assert ones[0] == 250 and ones[-1] == 390 and len(ones) == 141
    assert lab.sum() == 141


def test_labels_after_window_are_zero():
    assert label_series([(30.0, 34.0), None], 0.0, 500, 25.0).sum() == 0


@pytest.mark.parametrize("eps", [0.04, 0.2, 1.0, 2.0])
def test_label_run_length_by_enumeration(eps):
    tp = 4.0
    lab = label_series([(tp, tp + eps)], 0.0, 500, 25.0)[0]
    expected = sum(1 for i in range(500) if tp <= i / 25.0 <= tp + 1.4 * eps + 1e-12)
    assert lab.sum() == expected
    assert expected == round(1.4 * eps * 25) + 1


def test_label_requires_s_after_p():
    with pytest.raises(ValueError, match="not after"):
        label_series([(5.0, 5.0)], 0.0, 10, 25.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(-30, 30), st.floats(0.01, 20), st.floats(-5, 5))
def test_labels_are_binary_contiguous(tp, gap, start):
    lab = label_series([(tp, tp + gap)], start, 200, 25.0)[0]
    assert set(np.unique(lab)) <= {0, 1}
    ones = np.flatnonzero(lab)
    if len(ones):
        assert ones[-1] - ones[0] + 1 == len(ones)


def test_augment_identity():
    x = np.random.default_rng(0).normal(size=(3, 20, 3))
    y = (np.arange(20) % 3 == 0).astype(np.uint8)[None].repeat(3, 0)
    ox, oy = augment(x, y, 0, seed=1, noise_mean=0.0)
    assert np.array_equal(ox, x) and np.array_equal(oy, y)


def test_augment_shifts_jointly():
    x = np.zeros((2, 50, 3))
    x[:, 10] = 1.0
    y = np.zeros((2, 50), dtype=np.uint8)
    y[:, 10] = 1
    for seed in range(20):
        ox, oy = augment(x, y, 8, seed=seed, noise_mean=0.0)
        s = int(np.flatnonzero(oy[0])[0]) - 10
        assert -8 <= s <= 8
        assert np.array_equal(ox, np.roll(x, s, axis=1))
        assert np.array_equal(oy, np.roll(y, s, axis=1))


def test_augment_shift_zero_fills():
    x = np.ones((1, 10, 3))
    y = np.ones((1, 10), dtype=np.uint8)
    shifts = set()
    for seed in range(40):
        ox, oy = augment(x, y, 3, seed=seed, noise_mean=0.0)
        s = 10 - int(oy.sum())
        shifts.add(s)
        assert ox.sum() == 3 * oy.sum()
    assert shifts == {0, 1, 2, 3}


def test_augment_noise_sigma_mean():
    sigmas = []
    x = np.zeros((1, 400, 3))
    y = np.zeros((1, 400), dtype=np.uint8)
    for seed in range(10_000):
        ox, _ = augment(x, y, 0, seed=seed)
        sigmas.append(ox.std())
    # the per-draw estimate carries a small relative error that averages out
    assert abs(np.mean(sigmas) - 0.001) < 0.05 * 0.001


def test_augment_rejects_large_shift():
    with pytest.raises(ValueError):
        augment(np.zeros((1, 5, 3)), np.zeros((1, 5)), 5, seed=0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 30), st.data())
def test_augment_preserves_shape_and_finiteness(seed, p, data):
    shift = data.draw(st.integers(0, p - 1))
    x = np.random.default_rng(seed).normal(size=(2, p, 3))
    y = np.ones((2, p), dtype=np.uint8)
    ox, oy = augment(x, y, shift, seed=seed)
    assert ox.shape == x.shape and oy.shape == y.shape
    assert np.all(np.isfinite(ox))
