"""Modality descriptors, the fusion network, and its pre-training.

The capacitive and IMU descriptors are deterministic handcrafted feature
vectors standing in for trained deep backbones; real backbone embeddings
can be loaded from CSV instead (load_external_embeddings).  The fusion
network is a two-layer MLP (LeakyReLU, inverted dropout) producing the
320-dimensional press embedding; it is pre-trained with a temporary
softmax head over the pre-training users and the head is then discarded.
"""

from __future__ import annotations

import base64
import csv
import json
import os
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .capsense import CapSequence, TouchTrack, flatten_and_smooth
from .motion.core import MotionSegment
from .motion.timefreq import stft_psd

CAP_DIM = 192      # 16 frames x 8 region stats + 64-point downsample
IMU_DIM = 132      # 6 channels x (16 pooled spectrogram + 6 stats)
EMBED_DIM = 320
FUSION_IN = CAP_DIM + IMU_DIM


def cap_descriptor(seq: CapSequence, track: TouchTrack,
                   smooth_window: int = 5) -> np.ndarray:
    """192-dim capacitive descriptor.

    Per frame: [energy, active-cell count, centroid x, centroid y,
    intensity-weighted var_x, var_y, cov_xy, peak value]; untouched frames
    contribute zeros.  Appended: a 64-point uniform downsample of the
    smoothed flattened sequence.
    """
    stats = np.zeros((seq.n_frames, 8))
    for f, det in enumerate(track.detections):
        if not det.touched:
            continue
        frame = seq.frames[f]
        cells = np.array(det.region)
        vals = frame[cells[:, 0], cells[:, 1]]
        total = float(vals.sum())
        cx, cy = det.centroid
        dx = cells[:, 1] - cx
        dy = cells[:, 0] - cy
        stats[f] = (
            det.energy,
            len(det.region),
            cx,
            cy,
            float(np.sum(vals * dx * dx) / total),
            float(np.sum(vals * dy * dy) / total),
            float(np.sum(vals * dx * dy) / total),
            float(vals.max()),
        )
    flat = flatten_and_smooth(seq, window=smooth_window)
    idx = np.round(np.linspace(0, len(flat) - 1, 64)).astype(int)
    v = np.concatenate([stats.ravel(), flat[idx]])
    assert v.shape == (CAP_DIM,)
    return v


def _moments(x: np.ndarray) -> tuple[float, float, float, float, float]:
    mean = float(np.mean(x))
    std = float(np.std(x))
    rms = float(np.sqrt(np.mean(x * x)))
    if std < 1e-12:
        return mean, std, rms, 0.0, 0.0
    z = (x - mean) / std
    skew = float(np.mean(z ** 3))
    kurt = float(np.mean(z ** 4) - 3.0)
    return mean, std, rms, skew, kurt


def _split_bounds(n: int) -> np.ndarray:
    # boundaries matching np.array_split(range(n), 4)
    sizes = [(n // 4) + (1 if i < n % 4 else 0) for i in range(4)]
    return np.cumsum([0] + sizes)


def _pool_4x4(grid: np.ndarray) -> np.ndarray:
    """Edge-inclusive 4x4 mean pooling of an (F, T) grid."""
    rb = _split_bounds(grid.shape[0])
    cb = _split_bounds(grid.shape[1])
    rows = np.add.reduceat(grid, rb[:-1], axis=0)
    cells = np.add.reduceat(rows, cb[:-1], axis=1)
    counts = np.outer(np.diff(rb), np.diff(cb))
    return cells / counts


def imu_descriptor(segment: MotionSegment, win: int = 32, hop: int = 8) -> np.ndarray:
    """132-dim IMU descriptor: per channel, a 4x4 mean-pooled dB spectrogram
    plus [mean, std, RMS, skewness, excess kurtosis, time-averaged spectral
    centroid].

    The centroid is computed on the mean-removed channel: with the DC bin
    in play it flips between ~0 (offset-dominated) and the oscillation band
    whenever a channel's offset crosses zero, which makes it useless as a
    feature; without DC it consistently locates the fluctuation spectrum.
    """
    blocks = []
    for c in range(segment.tensor.shape[0]):
        x = segment.tensor[c]
        spec = stft_psd(x, segment.fs, win=win, hop=hop)
        pooled = _pool_4x4(spec.psd).ravel()
        power = stft_psd(x - x.mean(), segment.fs, win=win, hop=hop).psd_linear
        col_power = power.sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            centroids = np.where(col_power > 0,
                                 (spec.f_bins[:, None] * power).sum(axis=0)
                                 / np.where(col_power > 0, col_power, 1.0),
                                 0.0)
        mean, std, rms, skew, kurt = _moments(x)
        blocks.append(np.concatenate([pooled, [mean, std, rms, skew, kurt,
                                               float(np.mean(centroids))]]))
    v = np.concatenate(blocks)
    assert v.shape == (IMU_DIM,)
    return v


@dataclass
class FusionModel:
    """Two-layer fusion MLP with input z-score normalization."""
    w1: np.ndarray          # (hidden, FUSION_IN)
    b1: np.ndarray          # (hidden,)
    w2: np.ndarray          # (EMBED_DIM, hidden)
    b2: np.ndarray          # (EMBED_DIM,)
    norm_mean: np.ndarray   # (FUSION_IN,)
    norm_std: np.ndarray    # (FUSION_IN,)
    leaky_slope: float = 0.01
    dropout_p: float = 0.3

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]


def _leaky(z: np.ndarray, slope: float) -> np.ndarray:
    return np.where(z > 0, z, slope * z)


def fusion_forward(model: FusionModel, cap: np.ndarray, imu: np.ndarray,
                   training: bool = False,
                   rng: np.random.Generator | None = None) -> np.ndarray:
    """Embed one descriptor pair.  Inference (training=False) is a
    deterministic pure function; training mode applies inverted dropout."""
    x = np.concatenate([cap, imu])
    if x.shape != (FUSION_IN,):
        raise ValueError(f"expected {FUSION_IN} inputs, got {x.shape}")
    xn = (x - model.norm_mean) / model.norm_std
    h = _leaky(model.w1 @ xn + model.b1, model.leaky_slope)
    if training:
        if rng is None:
            raise ValueError("training-mode forward needs an rng for dropout")
        keep = rng.random(model.hidden) >= model.dropout_p
        h = h * keep / (1.0 - model.dropout_p)
    return model.w2 @ h + model.b2


def embed_batch(model: FusionModel, X: np.ndarray) -> np.ndarray:
    """Inference-mode embeddings for (n, FUSION_IN) stacked descriptors."""
    xn = (X - model.norm_mean) / model.norm_std
    h = _leaky(xn @ model.w1.T + model.b1, model.leaky_slope)
    return h @ model.w2.T + model.b2


def _loss_and_grads(params: dict[str, np.ndarray], Xn: np.ndarray, y: np.ndarray,
                    masks: np.ndarray | None, leaky_slope: float,
                    dropout_p: float) -> tuple[float, dict[str, np.ndarray]]:
    """Cross-entropy loss and analytic gradients for the fusion MLP with a
    softmax head.  `masks` (n, hidden) fixes the dropout pattern; None
    disables dropout."""
    n = Xn.shape[0]
    z1 = Xn @ params["w1"].T + params["b1"]
    h = _leaky(z1, leaky_slope)
    if masks is not None:
        hd = h * masks / (1.0 - dropout_p)
    else:
        hd = h
    e = hd @ params["w2"].T + params["b2"]
    logits = e @ params["w3"].T + params["b3"]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.sum(np.exp(shifted), axis=1))
    loss = float(np.mean(log_norm - shifted[np.arange(n), y]))
    probs = np.exp(shifted - log_norm[:, None])

    dlogits = probs.copy()
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n
    grads = {
        "w3": dlogits.T @ e,
        "b3": dlogits.sum(axis=0),
    }
    de = dlogits @ params["w3"]
    grads["w2"] = de.T @ hd
    grads["b2"] = de.sum(axis=0)
    dhd = de @ params["w2"]
    if masks is not None:
        dh = dhd * masks / (1.0 - dropout_p)
    else:
        dh = dhd
    dz1 = dh * np.where(z1 > 0, 1.0, leaky_slope)
    grads["w1"] = dz1.T @ Xn
    grads["b1"] = dz1.sum(axis=0)
    return loss, grads


def fusion_train(cap_X: np.ndarray, imu_X: np.ndarray, labels: Sequence,
                 hidden: int = 512, epochs: int = 50, lr: float = 0.01,
                 batch: int = 32, momentum: float = 0.9, dropout_p: float = 0.3,
                 leaky_slope: float = 0.01, seed: int = 0,
                 on_epoch: Callable[[int, float, float], None] | None = None
                 ) -> FusionModel:
    """Train the fusion MLP with a temporary softmax head over the
    pre-training users (mini-batch SGD with momentum), then drop the head.

    Deterministic given the seed.  Requires at least 2 users and 10
    samples per user.
    """
    labels = list(labels)
    users = sorted(set(labels))
    if len(users) < 2:
        raise ValueError(f"need at least 2 users for pre-training, got {len(users)}")
    counts = {u: labels.count(u) for u in users}
    thin = [u for u, c in counts.items() if c < 10]
    if thin:
        raise ValueError(f"need at least 10 samples per user; too few for {thin}")
    y = np.array([users.index(u) for u in labels])
    X = np.concatenate([cap_X, imu_X], axis=1)
    n = X.shape[0]

    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std < 1e-8, 1.0, std)
    Xn = (X - mean) / std

    rng = np.random.default_rng(seed)
    n_classes = len(users)
    params = {
        "w1": rng.normal(0.0, 1.0 / np.sqrt(FUSION_IN), size=(hidden, FUSION_IN)),
        "b1": np.zeros(hidden),
        "w2": rng.normal(0.0, 1.0 / np.sqrt(hidden), size=(EMBED_DIM, hidden)),
        "b2": np.zeros(EMBED_DIM),
        "w3": rng.normal(0.0, 1.0 / np.sqrt(EMBED_DIM), size=(n_classes, EMBED_DIM)),
        "b3": np.zeros(n_classes),
    }
    velocity = {k: np.zeros_like(v) for k, v in params.items()}

    for epoch in range(epochs):
        order = rng.permutation(n)
        losses = []
        for b0 in range(0, n, batch):
            idx = order[b0:b0 + batch]
            masks = (rng.random((len(idx), hidden)) >= dropout_p).astype(float) \
                if dropout_p > 0 else None
            loss, grads = _loss_and_grads(params, Xn[idx], y[idx], masks,
                                          leaky_slope, dropout_p)
            losses.append(loss)
            for k in params:
                velocity[k] = momentum * velocity[k] - lr * grads[k]
                params[k] = params[k] + velocity[k]
        z1 = Xn @ params["w1"].T + params["b1"]
        h = _leaky(z1, leaky_slope)
        logits = (h @ params["w2"].T + params["b2"]) @ params["w3"].T + params["b3"]
        acc = float(np.mean(np.argmax(logits, axis=1) == y))
        if on_epoch is not None:
            on_epoch(epoch, float(np.mean(losses)), acc)

    # Center the embedding and fix its global scale (mean per-dim variance 1)
    # on the pre-training distribution so downstream kernel widths of order
    # 1/dim are sensible; a linear output layer absorbs the affine rescale
    # exactly, and a single scalar scale preserves the learned variance
    # structure across dimensions.
    h = _leaky(Xn @ params["w1"].T + params["b1"], leaky_slope)
    E = h @ params["w2"].T + params["b2"]
    e_mean = E.mean(axis=0)
    scale = float(np.sqrt(np.mean(E.var(axis=0))))
    if scale < 1e-8:
        scale = 1.0
    w2 = params["w2"] / scale
    b2 = (params["b2"] - e_mean) / scale

    return FusionModel(w1=params["w1"], b1=params["b1"], w2=w2,
                       b2=b2, norm_mean=mean, norm_std=std,
                       leaky_slope=leaky_slope, dropout_p=dropout_p)


# --- model and embedding file formats -----------------------------------

def _b64(a: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii")


def _unb64(s: str, shape: tuple[int, ...]) -> np.ndarray:
    return np.frombuffer(base64.b64decode(s), dtype="<f8").reshape(shape).copy()


def save_model(model: FusionModel, path: str | os.PathLike) -> None:
    data = {
        "in_dim": FUSION_IN,
        "hidden": model.hidden,
        "out_dim": EMBED_DIM,
        "leaky_slope": model.leaky_slope,
        "dropout_p": model.dropout_p,
        "w1": _b64(model.w1),
        "b1": _b64(model.b1),
        "w2": _b64(model.w2),
        "b2": _b64(model.b2),
        "norm_mean": _b64(model.norm_mean),
        "norm_std": _b64(model.norm_std),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, sort_keys=True)
        fh.write("\n")


def load_model(path: str | os.PathLike) -> FusionModel:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    hidden = int(data["hidden"])
    return FusionModel(
        w1=_unb64(data["w1"], (hidden, FUSION_IN)),
        b1=_unb64(data["b1"], (hidden,)),
        w2=_unb64(data["w2"], (EMBED_DIM, hidden)),
        b2=_unb64(data["b2"], (EMBED_DIM,)),
        norm_mean=_unb64(data["norm_mean"], (FUSION_IN,)),
        norm_std=_unb64(data["norm_std"], (FUSION_IN,)),
        leaky_slope=float(data["leaky_slope"]),
        dropout_p=float(data["dropout_p"]),
    )


class EmbeddingFormatError(ValueError):
    """Bad external-embedding CSV: wrong width or duplicate session id."""


def export_embeddings(embeddings: dict[str, np.ndarray], path: str | os.PathLike) -> None:
    """Write embeddings as CSV with header session_id,e0,...,e319."""
    header = ["session_id"] + [f"e{i}" for i in range(EMBED_DIM)]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for sid in sorted(embeddings):
            writer.writerow([sid] + [f"{x:.8f}" for x in embeddings[sid]])


def load_external_embeddings(path: str | os.PathLike) -> dict[str, np.ndarray]:
    """Load and validate 320-dim embeddings keyed by session id."""
    out: dict[str, np.ndarray] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[0] != "session_id" or len(header) != EMBED_DIM + 1:
            raise EmbeddingFormatError(
                f"expected header session_id,e0,...,e{EMBED_DIM - 1}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            sid = row[0]
            if len(row) - 1 != EMBED_DIM:
                raise EmbeddingFormatError(
                    f"row {lineno} ({sid!r}) has {len(row) - 1} values, expected {EMBED_DIM}"
                )
            if sid in out:
                raise EmbeddingFormatError(f"row {lineno}: duplicate session id {sid!r}")
            vec = np.array([float(x) for x in row[1:]])
            if not np.all(np.isfinite(vec)):
                raise EmbeddingFormatError(f"row {lineno} ({sid!r}) has non-finite values")
            out[sid] = vec
    return out
