"""Touch localization, constant-velocity tracking, and the flattened
capacitive representation.

The detection chain per frame: robust adaptive threshold (median + k*MAD),
8-neighbor connected components over the mask, largest-energy component,
intensity-weighted centroid.  Frame-to-frame centroids are smoothed by a
constant-velocity Kalman filter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .session_io import Session, SessionMeta


class NoTouchError(RuntimeError):
    """Raised when no frame in a sequence produces a touch detection."""


@dataclass(frozen=True)
class CapSequence:
    """Fixed-frame-count float capacitive sequence (frames: n_frames x rows x cols)."""
    frames: np.ndarray
    meta: SessionMeta

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class FrameDetection:
    tau: float
    region: tuple[tuple[int, int], ...]   # sorted (row, col) cells
    centroid: tuple[float, float] | None  # (x=col, y=row)
    energy: float
    touched: bool


@dataclass(frozen=True)
class TouchTrack:
    detections: tuple[FrameDetection, ...]
    smoothed: np.ndarray        # (n_frames, 2) Kalman (x, y); NaN before first detection
    states: np.ndarray          # (n_frames, 4) [x, y, vx, vy]
    covariances: np.ndarray     # (n_frames, 4, 4)
    active_window: tuple[int, int]


def linear_resample(values: np.ndarray, src_t: np.ndarray, dst_t: np.ndarray) -> np.ndarray:
    """Columnwise linear interpolation of (n, c) values from src_t onto dst_t.

    dst points outside the source range clamp to the edge values.
    """
    src_t = np.asarray(src_t, dtype=float)
    dst_t = np.asarray(dst_t, dtype=float)
    n = len(src_t)
    idx = np.searchsorted(src_t, dst_t, side="right")
    idx = np.clip(idx, 1, n - 1)
    t0 = src_t[idx - 1]
    t1 = src_t[idx]
    dt = t1 - t0
    w = np.where(dt > 0, (dst_t - t0) / np.where(dt > 0, dt, 1.0), 0.0)
    w = np.clip(w, 0.0, 1.0)
    return values[idx - 1] + w[:, None] * (values[idx] - values[idx - 1])


def interpolate_frames(session: Session, n_frames: int = 16) -> CapSequence:
    """Resample the capacitive stream onto n_frames uniform instants.

    Per-cell linear interpolation in time, spanning [first ts, last ts].
    """
    if n_frames < 2:
        raise ValueError(f"n_frames must be >= 2, got {n_frames}")
    if len(session.cap) < 2:
        raise ValueError("need at least 2 capacitive frames to interpolate")
    ts = np.array([f.ts_ms for f in session.cap], dtype=float)
    rows, cols = session.meta.cap_rows, session.meta.cap_cols
    flat = np.stack([f.values.ravel().astype(float) for f in session.cap])
    target = np.linspace(ts[0], ts[-1], n_frames)
    out = linear_resample(flat, ts, target)
    return CapSequence(frames=out.reshape(n_frames, rows, cols), meta=session.meta)


def _fast_median(values: np.ndarray) -> float:
    """Median via partition; assumes finite values (hot path)."""
    n = values.size
    half = n // 2
    if n % 2:
        return float(np.partition(values, half)[half])
    part = np.partition(values, [half - 1, half])
    return 0.5 * float(part[half - 1] + part[half])


def adaptive_threshold(frame: np.ndarray, k: float = 3.0) -> tuple[float, np.ndarray]:
    """Robust threshold tau = median + k*MAD; mask keeps strictly-above cells.

    MAD is the raw median absolute deviation (no consistency constant); a
    flat frame has MAD 0, so the strict comparison yields an empty mask.
    """
    frame = np.asarray(frame, dtype=float)
    flat = frame.ravel()
    med = _fast_median(flat)
    mad = _fast_median(np.abs(flat - med))
    tau = med + k * mad
    return tau, frame > tau


def _components(mask: np.ndarray, connectivity: int) -> list[list[tuple[int, int]]]:
    cols = mask.shape[1]
    if connectivity == 8:
        deltas = ((-cols - 1, -1), (-cols, 0), (-cols + 1, 1), (-1, -1),
                  (1, 1), (cols - 1, -1), (cols, 0), (cols + 1, 1))
    elif connectivity == 4:
        deltas = ((-cols, 0), (-1, -1), (1, 1), (cols, 0))
    else:
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    # flat-index flood fill: membership handles row bounds, the column delta
    # guard stops wrap-around at row edges
    remaining = set(np.flatnonzero(mask).tolist())
    components = []
    while remaining:
        seed = remaining.pop()
        stack = [seed]
        flat_cells = [seed]
        while stack:
            cell = stack.pop()
            c = cell % cols
            for delta, dc in deltas:
                if 0 <= c + dc < cols:
                    nb = cell + delta
                    if nb in remaining:
                        remaining.remove(nb)
                        stack.append(nb)
                        flat_cells.append(nb)
        components.append([divmod(cell, cols) for cell in flat_cells])
    return components


def detect_touch_region(frame: np.ndarray, mask: np.ndarray, tau: float = 0.0,
                        connectivity: int = 8) -> FrameDetection:
    """Pick the connected component with the largest aggregated energy and
    locate the touch by its intensity-weighted centroid (x=column, y=row)."""
    frame = np.asarray(frame, dtype=float)
    if mask.shape != frame.shape:
        raise ValueError("mask shape must match frame shape")
    components = _components(mask, connectivity)
    if not components:
        return FrameDetection(tau=tau, region=(), centroid=None, energy=0.0, touched=False)
    best = None
    best_energy = -np.inf
    for cells in components:
        arr = np.array(cells)
        values = frame[arr[:, 0], arr[:, 1]]
        energy = float(values.sum())
        if energy > best_energy:
            best, best_arr, best_values, best_energy = cells, arr, values, energy
    x = float(np.dot(best_arr[:, 1], best_values) / best_energy)
    y = float(np.dot(best_arr[:, 0], best_values) / best_energy)
    region = tuple(sorted(best))
    return FrameDetection(tau=tau, region=region, centroid=(x, y),
                          energy=best_energy, touched=True)


def track_touch(seq: CapSequence, k: float = 3.0, connectivity: int = 8,
                q_pos: float = 0.01, q_vel: float = 0.04, r: float = 0.25,
                p0_pos: float = 1.0, p0_vel: float = 10.0) -> TouchTrack:
    """Detect per frame and run a constant-velocity Kalman filter over the
    centroids.  The state is [x, y, vx, vy] in cells and cells/frame; the
    filter initializes at the first detection with zero velocity and runs
    predict-only through untouched frames."""
    n = seq.n_frames
    detections = []
    for f in range(n):
        tau, mask = adaptive_threshold(seq.frames[f], k=k)
        detections.append(detect_touch_region(seq.frames[f], mask, tau=tau,
                                              connectivity=connectivity))
    touched_idx = [f for f, d in enumerate(detections) if d.touched]
    if not touched_idx:
        raise NoTouchError("no touch event detected")

    F = np.array([[1, 0, 1, 0], [0, 1, 0, 1], [0, 0, 1, 0], [0, 0, 0, 1]], dtype=float)
    H = np.array([[1, 0, 0, 0], [0, 1, 0, 0]], dtype=float)
    Q = np.diag([q_pos, q_pos, q_vel, q_vel])
    R = r * np.eye(2)
    I4 = np.eye(4)

    states = np.full((n, 4), np.nan)
    covs = np.full((n, 4, 4), np.nan)
    s = None
    P = None
    for f, det in enumerate(detections):
        if s is None:
            if det.touched:
                cx, cy = det.centroid
                s = np.array([cx, cy, 0.0, 0.0])
                P = np.diag([p0_pos, p0_pos, p0_vel, p0_vel])
                states[f] = s
                covs[f] = P
            continue
        s = F @ s
        P = F @ P @ F.T + Q
        if det.touched:
            z = np.array(det.centroid)
            innov = z - H @ s
            S = H @ P @ H.T + R
            K = P @ H.T @ np.linalg.inv(S)
            s = s + K @ innov
            P = (I4 - K @ H) @ P
            P = 0.5 * (P + P.T)
        states[f] = s
        covs[f] = P
    return TouchTrack(
        detections=tuple(detections),
        smoothed=states[:, :2].copy(),
        states=states,
        covariances=covs,
        active_window=(touched_idx[0], touched_idx[-1]),
    )


def flatten_and_smooth(seq: CapSequence, window: int = 5) -> np.ndarray:
    """Per-cell temporal moving average (centered, truncated at the edges),
    then row-major flatten with frames concatenated in time order.

    Output length is n_frames * rows * cols regardless of content.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    frames = seq.frames
    n = frames.shape[0]
    half = window // 2
    padded = np.concatenate([np.zeros((1,) + frames.shape[1:]), np.cumsum(frames, axis=0)])
    lo = np.maximum(np.arange(n) - half, 0)
    hi = np.minimum(np.arange(n) + half, n - 1)
    sums = padded[hi + 1] - padded[lo]
    counts = (hi - lo + 1).astype(float)
    smoothed = sums / counts[:, None, None]
    return smoothed.reshape(n, -1).ravel()
