"""IMU motion estimation: denoising, cross-modal alignment, orientation,
and time-frequency representation."""

from .ahrs import (
    euler_angles,
    euler_to_quat,
    fuse_orientation,
    matrix_to_quat,
    quat_conjugate,
    quat_multiply,
    quat_to_euler,
    quat_to_matrix,
    triad_init,
)
from .core import (
    ImuSeries,
    MotionSegment,
    accel_magnitude,
    build_motion_segment,
    coarse_window,
    find_extremum_pair,
    refine_interval,
    resample_imu,
    wavelet_denoise,
)
from .timefreq import DB_FLOOR, Spectrogram, hann_window, stft_psd
from .wavelet import denoise, dwt, idwt, soft_threshold

__all__ = [
    "ImuSeries",
    "MotionSegment",
    "Spectrogram",
    "DB_FLOOR",
    "accel_magnitude",
    "build_motion_segment",
    "coarse_window",
    "denoise",
    "dwt",
    "euler_angles",
    "euler_to_quat",
    "find_extremum_pair",
    "fuse_orientation",
    "hann_window",
    "idwt",
    "matrix_to_quat",
    "quat_conjugate",
    "quat_multiply",
    "quat_to_euler",
    "quat_to_matrix",
    "refine_interval",
    "resample_imu",
    "soft_threshold",
    "stft_psd",
    "triad_init",
    "wavelet_denoise",
]
