"""Short-time Fourier transform power spectral density."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DB_FLOOR = -80.0


@dataclass(frozen=True)
class Spectrogram:
    psd: np.ndarray         # (n_freq, n_frames) in dB, floored at DB_FLOOR
    psd_linear: np.ndarray  # (n_freq, n_frames) power per Hz, one-sided
    f_bins: np.ndarray      # (n_freq,) Hz
    t_bins: np.ndarray      # (n_frames,) frame-center times, s


def hann_window(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / (n - 1))


def stft_psd(channel: np.ndarray, fs: float, win: int = 32, hop: int = 8) -> Spectrogram:
    """One-sided PSD spectrogram: Hann window, |X|^2 / (fs * sum(w^2)),
    interior bins doubled, then 10*log10 with a -80 dB floor.

    With this normalization the linear PSD satisfies, per frame,
    sum(psd) * (fs / win) == sum((w * x)^2) / sum(w^2).
    """
    x = np.asarray(channel, dtype=float)
    n = len(x)
    if n < win:
        raise ValueError(f"channel length {n} shorter than the {win}-sample window")
    w = hann_window(win)
    n_frames = (n - win) // hop + 1
    starts = np.arange(n_frames) * hop
    segments = x[starts[:, None] + np.arange(win)[None, :]] * w
    spectrum = np.fft.rfft(segments, axis=1)
    psd = (np.abs(spectrum) ** 2) / (fs * np.sum(w ** 2))
    if win % 2 == 0:
        psd[:, 1:-1] *= 2.0
    else:
        psd[:, 1:] *= 2.0
    psd = psd.T  # (n_freq, n_frames)
    with np.errstate(divide="ignore"):
        db = 10.0 * np.log10(psd)
    db = np.maximum(db, DB_FLOOR)
    f_bins = np.arange(psd.shape[0]) * fs / win
    t_bins = (starts + win / 2.0) / fs
    return Spectrogram(psd=db, psd_linear=psd, f_bins=f_bins, t_bins=t_bins)
