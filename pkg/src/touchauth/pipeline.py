"""End-to-end per-session processing: capacitive tracking, motion
estimation, cross-modal alignment, and descriptor extraction."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from . import capsense, embed
from .motion import core as motion_core
from .motion.ahrs import fuse_orientation
from .session_io import Session, SessionInvariantError, validate_session


@dataclass(frozen=True)
class ProcessedSession:
    seq: capsense.CapSequence
    track: capsense.TouchTrack
    series: motion_core.ImuSeries
    quats: np.ndarray
    window: tuple[int, int]    # coarse IMU window
    interval: tuple[int, int]  # refined press interval
    segment: motion_core.MotionSegment
    cap_vec: np.ndarray        # (192,)
    imu_vec: np.ndarray        # (132,)


def process_session(session: Session, cfg: dict[str, Any]) -> ProcessedSession:
    """Run the full preprocessing chain for one session."""
    violations = validate_session(session)
    if violations:
        raise SessionInvariantError("; ".join(violations))
    cs = cfg["capsense"]
    mo = cfg["motion"]

    seq = capsense.interpolate_frames(session, n_frames=cs["n_frames"])
    track = capsense.track_touch(
        seq, k=cs["k"], connectivity=cs["connectivity"],
        q_pos=cs["kalman"]["q_pos"], q_vel=cs["kalman"]["q_vel"],
        r=cs["kalman"]["r"], p0_pos=cs["kalman"]["p0_pos"],
        p0_vel=cs["kalman"]["p0_vel"])

    series = motion_core.resample_imu(session)
    series = motion_core.wavelet_denoise(series, levels=mo["wavelet"]["levels"])
    window = motion_core.coarse_window(track, session.meta, len(series),
                                       pad_s=mo["pad_s"])
    magnitude = motion_core.accel_magnitude(series)
    t_p, t_v = motion_core.find_extremum_pair(magnitude, window)
    interval = motion_core.refine_interval(magnitude, t_p, t_v, window, rho=mo["rho"])
    quats = fuse_orientation(series.a, series.g, series.m, series.fs, beta=mo["beta"])
    segment = motion_core.build_motion_segment(series, quats, interval,
                                               segment_len=mo["segment_len"])

    cap_vec = embed.cap_descriptor(seq, track, smooth_window=cs["smooth_window"])
    imu_vec = embed.imu_descriptor(segment, win=mo["stft"]["win"], hop=mo["stft"]["hop"])
    return ProcessedSession(seq=seq, track=track, series=series, quats=quats,
                            window=window, interval=interval, segment=segment,
                            cap_vec=cap_vec, imu_vec=imu_vec)


def descriptor_pair(session: Session, cfg: dict[str, Any]) -> tuple[np.ndarray, np.ndarray]:
    proc = process_session(session, cfg)
    return proc.cap_vec, proc.imu_vec


def embed_session(session: Session, model: embed.FusionModel,
                  cfg: dict[str, Any]) -> np.ndarray:
    """320-dim press embedding (inference mode, deterministic)."""
    cap_vec, imu_vec = descriptor_pair(session, cfg)
    return embed.fusion_forward(model, cap_vec, imu_vec, training=False)
