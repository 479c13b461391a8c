"""Capacitive-side augmentation: random time warping and amplitude-adaptive
Gaussian noise.  Applied to embedder pre-training data only, never to
enrollment or test data.  The IMU stream is left untouched."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .capsense import CapSequence, linear_resample
from .session_io import CapFrame, Session


@dataclass(frozen=True)
class AugmentConfig:
    warp_factor: float = 0.1
    base_sigma: float = 0.5
    min_sigma: float = 0.1
    a_nominal: float = 50.0   # amplitude at which sigma equals base_sigma
    n_aug: int = 1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.warp_factor < 1.0:
            raise ValueError(f"warp_factor must be in [0, 1), got {self.warp_factor}")
        if not self.base_sigma >= self.min_sigma >= 0.0:
            raise ValueError("need base_sigma >= min_sigma >= 0")
        if self.a_nominal <= 0:
            raise ValueError("a_nominal must be positive")


def _warp_values(values: np.ndarray, rate: float) -> np.ndarray:
    """Resample an (n, c) block at the warped rate, then back to n samples."""
    n = values.shape[0]
    m = max(2, int(round((n - 1) * rate)) + 1)
    if m == n and rate == 1.0:
        return values.copy()
    stretched = linear_resample(values, np.arange(n, dtype=float),
                                np.linspace(0.0, n - 1.0, m))
    return linear_resample(stretched, np.arange(m, dtype=float),
                           np.linspace(0.0, m - 1.0, n))


def time_warp(seq: CapSequence, cfg: AugmentConfig, rng: np.random.Generator) -> CapSequence:
    """Random temporal stretch/compression by a rate in
    [1-warp_factor, 1+warp_factor]; output shape equals input shape."""
    rate = float(rng.uniform(1.0 - cfg.warp_factor, 1.0 + cfg.warp_factor))
    n = seq.n_frames
    flat = seq.frames.reshape(n, -1)
    warped = _warp_values(flat, rate)
    return CapSequence(frames=warped.reshape(seq.frames.shape), meta=seq.meta)


def reference_amplitude(frame: np.ndarray) -> float:
    """Median of the non-zero values in the centered 3x3 block (0 if the
    whole block is zero)."""
    frame = np.asarray(frame, dtype=float)
    rows, cols = frame.shape
    rc, cc = rows // 2, cols // 2
    block = frame[max(rc - 1, 0):rc + 2, max(cc - 1, 0):cc + 2]
    nonzero = block[block != 0]
    if nonzero.size == 0:
        return 0.0
    return float(np.median(nonzero))


def noise_sigma(frame: np.ndarray, cfg: AugmentConfig) -> float:
    """Amplitude-adaptive noise level: max(min_sigma, base_sigma * A_ref / a_nominal)."""
    a_ref = reference_amplitude(frame)
    return max(cfg.min_sigma, cfg.base_sigma * a_ref / cfg.a_nominal)


def adaptive_noise(frame: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator,
                   clamp: bool = True) -> np.ndarray:
    """Add i.i.d. Gaussian noise with the frame's adaptive sigma to every
    cell; clamp=False skips the non-negativity clamp (measurement use)."""
    frame = np.asarray(frame, dtype=float)
    sigma = noise_sigma(frame, cfg)
    noised = frame + rng.normal(0.0, sigma, size=frame.shape)
    if clamp:
        noised = np.maximum(noised, 0.0)
    return noised


def augment_session(session: Session, cfg: AugmentConfig,
                    rng: np.random.Generator, copy_idx: int) -> Session:
    """One warped+noised copy of a session's capacitive stream; timestamps,
    IMU data, and the label are preserved.  Counts round back to ints."""
    frames = np.stack([f.values.astype(float) for f in session.cap])
    seq = CapSequence(frames=frames, meta=session.meta)
    warped = time_warp(seq, cfg, rng)
    out_frames = []
    for i, src in enumerate(session.cap):
        noised = adaptive_noise(warped.frames[i], cfg, rng)
        counts = np.rint(noised).astype(np.int64)
        out_frames.append(CapFrame(ts_ms=src.ts_ms, values=np.maximum(counts, 0)))
    meta = replace(session.meta, session_id=f"{session.meta.session_id}-aug{copy_idx}")
    return Session(meta=meta, cap=tuple(out_frames), imu=session.imu)


def augment_dataset(sessions: list[Session], cfg: AugmentConfig,
                    seed: int | None = None) -> list[Session]:
    """Emit each original followed by n_aug augmented copies; deterministic
    given the seed and independent of processing order (per-session derived
    RNG streams)."""
    if seed is None:
        seed = cfg.seed
    out: list[Session] = []
    for i, session in enumerate(sessions):
        out.append(session)
        for j in range(cfg.n_aug):
            rng = np.random.default_rng([seed, i, j])
            out.append(augment_session(session, cfg, rng, copy_idx=j))
    return out
