"""Differentiable log-Mel spectrogram front-end.

The whole pipeline (framing, Hann window, DFT as an explicit matrix
multiply, triangular mel filterbank, floored log) is expressed through
autodiff primitives, so gradients flow from the features back to the raw
waveform. That is what lets attacks operate directly in the time domain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Value


@dataclass(frozen=True)
class FrontendConfig:
    sample_rate: int = 16000
    window_length: int = 400
    hop_length: int = 160
    fft_size: int = 512
    mel_bins: int = 40
    log_floor: float = 1e-6

    def __post_init__(self):
        if self.window_length > self.fft_size:
            raise ValueError(f"window_length {self.window_length} > fft_size {self.fft_size}")
        if self.hop_length > self.window_length:
            raise ValueError(f"hop_length {self.hop_length} > window_length {self.window_length}")
        if self.hop_length < 1 or self.window_length < 2:
            raise ValueError("hop_length and window_length must be positive")
        if self.mel_bins < 1:
            raise ValueError("mel_bins must be >= 1")
        if self.log_floor <= 0:
            raise ValueError("log_floor must be > 0")

    def num_frames(self, num_samples: int) -> int:
        if num_samples < self.window_length:
            raise ValueError(f"waveform length {num_samples} < window {self.window_length}")
        return (num_samples - self.window_length) // self.hop_length + 1


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(config: FrontendConfig) -> tuple[np.ndarray, np.ndarray]:
    """Triangular unit-peak filters covering [0, sample_rate/2].

    Returns (weights of shape (mel_bins, fft_size//2 + 1), center
    frequencies in Hz).
    """
    n_bins = config.fft_size // 2 + 1
    freqs = np.arange(n_bins) * config.sample_rate / config.fft_size
    pts = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(config.sample_rate / 2.0),
                                config.mel_bins + 2))
    lower, center, upper = pts[:-2], pts[1:-1], pts[2:]
    up = (freqs[None, :] - lower[:, None]) / (center - lower)[:, None]
    down = (upper[:, None] - freqs[None, :]) / (upper - center)[:, None]
    weights = np.maximum(0.0, np.minimum(up, down))
    return weights, center


class FrontendOps:
    """Precomputed constants (window, DFT matrices, filterbank) for one config."""

    def __init__(self, config: FrontendConfig):
        self.config = config
        w = config.window_length
        t = np.arange(w)
        self.window = 0.5 - 0.5 * np.cos(2.0 * np.pi * t / w)
        n_bins = config.fft_size // 2 + 1
        angle = 2.0 * np.pi * np.outer(t, np.arange(n_bins)) / config.fft_size
        self.dft_cos = np.cos(angle)
        self.dft_sin = -np.sin(angle)
        fb, self.mel_centers_hz = mel_filterbank(config)
        self.filterbank = fb
        self._fb_t = fb.T.copy()


def log_mel(waveform, ops: FrontendOps) -> Value:
    """(n, T) waveforms -> (n, mel_bins, frames) floored log mel energies."""
    cfg = ops.config
    x = ad.as_value(waveform)
    if x.ndim == 1:
        x = ad.reshape(x, (1, x.shape[0]))
    if x.ndim != 2:
        raise ad.ShapeError("log_mel", f"expected (n, T) waveform, got {x.shape}")
    n, t = x.shape
    frames = ad.frame_signal(x, cfg.window_length, cfg.hop_length)
    n_frames = frames.shape[1]
    frames = frames * Value(ops.window)
    flat = ad.reshape(frames, (n * n_frames, cfg.window_length))
    re = ad.matmul(flat, Value(ops.dft_cos))
    im = ad.matmul(flat, Value(ops.dft_sin))
    power = re * re + im * im
    mel = ad.matmul(power, Value(ops._fb_t))
    out = ad.log(ad.clamp(mel, lo=cfg.log_floor))
    out = ad.reshape(out, (n, n_frames, cfg.mel_bins))
    return ad.permute(out, (0, 2, 1))
