"""IMU preprocessing and cross-modal alignment: uniform resampling,
denoising, coarse windowing from the touch track, extremum-pair interval
refinement, and assembly of the fixed-length motion segment."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..capsense import TouchTrack
from ..session_io import Session, SessionMeta
from . import wavelet
from .ahrs import euler_angles

MIN_IMU_SAMPLES = 8


@dataclass(frozen=True)
class ImuSeries:
    """Uniformly resampled 9-channel IMU block."""
    t: np.ndarray   # (n,) seconds
    a: np.ndarray   # (n, 3) m/s^2
    g: np.ndarray   # (n, 3) rad/s
    m: np.ndarray   # (n, 3) uT
    fs: float

    def __len__(self) -> int:
        return len(self.t)


@dataclass(frozen=True)
class MotionSegment:
    """Fixed-length 6-channel motion tensor (ax, ay, az, phi, theta, psi)."""
    interval: tuple[int, int]  # refined (start, end) indices into the series
    tensor: np.ndarray         # (6, segment_len)
    m: np.ndarray              # (segment_len,) acceleration magnitude
    fs: float


def resample_imu(session: Session) -> ImuSeries:
    """Linear-interpolate each IMU channel onto a uniform imu_hz grid
    spanning the recorded range."""
    if len(session.imu) < MIN_IMU_SAMPLES:
        raise ValueError(f"need at least {MIN_IMU_SAMPLES} IMU samples, got {len(session.imu)}")
    ts = np.array([s.ts_ms for s in session.imu], dtype=float) / 1000.0
    fs = float(session.meta.imu_hz)
    span = ts[-1] - ts[0]
    n = int(np.floor(span * fs + 1e-9)) + 1
    grid = ts[0] + np.arange(n) / fs
    raw = np.array([[*s.a, *s.g, *s.m] for s in session.imu], dtype=float)
    out = np.empty((n, 9))
    for c in range(9):
        out[:, c] = np.interp(grid, ts, raw[:, c])
    return ImuSeries(t=grid, a=out[:, 0:3], g=out[:, 3:6], m=out[:, 6:9], fs=fs)


def wavelet_denoise(series: ImuSeries, levels: int = 3) -> ImuSeries:
    """Apply soft-threshold wavelet denoising independently to all 9 channels."""
    if len(series) < (1 << levels):
        raise ValueError(f"series too short for {levels}-level denoising")
    def den(block: np.ndarray) -> np.ndarray:
        return np.stack([wavelet.denoise(block[:, c], levels) for c in range(3)], axis=1)
    return ImuSeries(t=series.t, a=den(series.a), g=den(series.g), m=den(series.m),
                     fs=series.fs)


def coarse_window(track: TouchTrack, meta: SessionMeta, n_imu: int,
                  pad_s: float = 0.05) -> tuple[int, int]:
    """Map the active capacitive window to IMU sample indices, padded on
    both sides and clamped to the series bounds."""
    first, last = track.active_window
    ratio = meta.imu_hz / meta.cap_hz
    pad = int(round(pad_s * meta.imu_hz))
    s_idx = int(round(first * ratio)) - pad
    e_idx = int(round(last * ratio)) + pad
    return max(0, s_idx), min(n_imu - 1, e_idx)


def find_extremum_pair(m: np.ndarray, window: tuple[int, int]) -> tuple[int, int]:
    """Indices (t_peak, t_valley) maximizing |m[i] - m[j]| inside the window;
    ties break to the earliest index."""
    s, e = window
    if e - s + 1 < 2:
        raise ValueError("window must contain at least 2 samples")
    seg = np.asarray(m, dtype=float)[s:e + 1]
    return s + int(np.argmax(seg)), s + int(np.argmin(seg))


def refine_interval(m: np.ndarray, t_p: int, t_v: int, window: tuple[int, int],
                    rho: float = 0.2) -> tuple[int, int]:
    """Tighten the window around the press using first-difference crossings.

    With eta = rho * max|diff| over the window, the start is the last
    upcrossing of |diff| above eta at or before the earlier extremum
    (window start if none), and the end is the first downcrossing at or
    after the later extremum (window end if none).  Always returns
    start < end within the window.
    """
    s, e = window
    d = np.diff(np.asarray(m, dtype=float)[s:e + 1])  # d[j-s] = m[j+1] - m[j]
    if len(d) == 0:
        return s, min(e, s + 1)
    eta = rho * float(np.max(np.abs(d)))
    above = np.abs(d) > eta

    lo, hi = min(t_p, t_v), max(t_p, t_v)
    start = s
    for j in range(min(lo, e - 1), s - 1, -1):
        k = j - s
        if above[k] and (k == 0 or not above[k - 1]):
            start = j
            break
    end = e
    for j in range(max(hi, s + 1), e):
        k = j - s
        if not above[k] and above[k - 1]:
            end = j
            break
    if end <= start:
        end = min(e, start + 1)
    if end <= start:
        start = max(s, end - 1)
    return start, end


def accel_magnitude(series: ImuSeries) -> np.ndarray:
    return np.linalg.norm(series.a, axis=1)


def build_motion_segment(series: ImuSeries, quats: np.ndarray,
                         interval: tuple[int, int], segment_len: int = 160) -> MotionSegment:
    """Crop the 6 motion channels to a fixed-length window centered on the
    refined interval, replicating edge samples where the window overruns
    the series.  Yaw is phase-unwrapped before cropping."""
    start, end = interval
    if not (0 <= start < end < len(series)):
        raise ValueError(f"invalid interval {interval} for series of length {len(series)}")
    angles = euler_angles(quats)
    angles[:, 2] = np.unwrap(angles[:, 2])
    mid = (start + end + 1) // 2
    idx = np.clip(np.arange(mid - segment_len // 2, mid + (segment_len + 1) // 2),
                  0, len(series) - 1)
    tensor = np.concatenate([series.a[idx].T, angles[idx].T], axis=0)
    magnitude = accel_magnitude(series)[idx]
    return MotionSegment(interval=(start, end), tensor=tensor, m=magnitude, fs=series.fs)
