"""Log-mel front-end tests."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from advspeaker import autodiff as ad
from advspeaker.frontend import FrontendConfig, FrontendOps, log_mel, mel_filterbank

MICRO = FrontendConfig(sample_rate=1600, window_length=32, hop_length=16,
                       fft_size=32, mel_bins=6, log_floor=1e-6)


def test_config_invariants():
    with pytest.raises(ValueError):
        FrontendConfig(window_length=600, fft_size=512)
    with pytest.raises(ValueError):
        FrontendConfig(hop_length=500, window_length=400)
    with pytest.raises(ValueError):
        FrontendConfig(mel_bins=0)
    with pytest.raises(ValueError):
        FrontendConfig(log_floor=0.0)


def test_filterbank_properties():
    cfg = FrontendConfig()
    fb, centers = mel_filterbank(cfg)
    assert fb.shape == (cfg.mel_bins, cfg.fft_size // 2 + 1)
    assert (fb >= 0).all()
    assert (fb.max(axis=1) > 0).all()
    assert fb.max() <= 1.0 + 1e-12
    # filters jointly cover the band: every interior fft bin gets weight
    coverage = fb.sum(axis=0)
    assert (coverage[1:-1] > 0).all()
    assert centers.shape == (cfg.mel_bins,) and (np.diff(centers) > 0).all()


def test_zero_waveform_floors_out():
    ops = FrontendOps(MICRO)
    out = log_mel(np.zeros((2, 96)), ops)
    assert np.allclose(out.data, np.log(MICRO.log_floor))


def test_output_shape_and_frame_count():
    ops = FrontendOps(MICRO)
    for t in (32, 96, 97, 111):
        out = log_mel(np.zeros((1, t)), ops)
        expected_frames = (t - MICRO.window_length) // MICRO.hop_length + 1
        assert out.shape == (1, MICRO.mel_bins, expected_frames)


def test_too_short_waveform_raises():
    ops = FrontendOps(MICRO)
    with pytest.raises(ad.ShapeError):
        log_mel(np.zeros((1, 31)), ops)


def test_sine_at_filter_center_dominates():
    cfg = FrontendConfig()
    ops = FrontendOps(cfg)
    t = np.arange(8000) / cfg.sample_rate
    for m in (8, 16, 28):
        f = ops.mel_centers_hz[m]
        wave = 0.3 * np.sin(2 * np.pi * f * t)
        out = log_mel(wave[None, :], ops).data[0]
        interior = out[:, 2:-2]
        assert (np.argmax(interior, axis=0) == m).all(), f"filter {m} at {f:.1f} Hz"


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.floats(min_value=1.01, max_value=5.0))
def test_scaling_up_never_decreases_output(seed, c):
    ops = FrontendOps(MICRO)
    rng = np.random.default_rng(seed)
    x = 0.1 * rng.normal(size=(1, 80))
    base = log_mel(x, ops).data
    scaled = log_mel(np.clip(c * x, -1, 1) if np.abs(c * x).max() > 1 else c * x, ops).data
    if np.abs(c * x).max() <= 1:
        assert (scaled >= base - 1e-12).all()


def test_gradient_matches_finite_differences():
    ops = FrontendOps(MICRO)
    rng = np.random.default_rng(5)
    point = 0.2 * rng.normal(size=(1, 64))
    assert ad.finite_diff_check(lambda x: log_mel(x, ops).sum(), point) < 1e-4
    weights = ad.Value(rng.normal(size=(1, MICRO.mel_bins, 3)))
    err = ad.finite_diff_check(lambda x: (log_mel(x, ops) * weights).sum(), point)
    assert err < 1e-4


def test_deterministic():
    ops = FrontendOps(MICRO)
    rng = np.random.default_rng(6)
    x = rng.normal(size=(2, 96))
    assert np.array_equal(log_mel(x, ops).data, log_mel(x, ops).data)
