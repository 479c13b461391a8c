"""Biometric evaluation: FAR/FRR/Accuracy/BAC from a confusion, ROC curves
over decision scores, equal error rate, score histograms, and a 2-D PCA
projection for embedding visualization.

Score convention everywhere: higher = more genuine, accept on >= threshold.
At a threshold t, FAR is the fraction of impostor scores >= t and FRR the
fraction of genuine scores < t.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Confusion:
    ta: int
    tr: int
    fa: int
    fr: int

    def __post_init__(self):
        if min(self.ta, self.tr, self.fa, self.fr) < 0:
            raise ValueError("confusion counts must be non-negative")


@dataclass(frozen=True)
class Rates:
    far: float
    frr: float
    accuracy: float
    bac: float
    undefined: tuple[str, ...] = ()


def rates(c: Confusion) -> Rates:
    """FAR = FA/(FA+TR), FRR = FR/(FR+TA), Accuracy = (TA+TR)/total,
    BAC = (TA/(TA+FR) + TR/(TR+FA))/2.  Rates with a zero denominator come
    back as NaN and are named in `undefined`."""
    undefined = []
    if c.fa + c.tr > 0:
        far = c.fa / (c.fa + c.tr)
    else:
        far, undefined = math.nan, undefined + ["far"]
    if c.fr + c.ta > 0:
        frr = c.fr / (c.fr + c.ta)
    else:
        frr, undefined = math.nan, undefined + ["frr"]
    total = c.ta + c.tr + c.fa + c.fr
    if total > 0:
        accuracy = (c.ta + c.tr) / total
    else:
        accuracy, undefined = math.nan, undefined + ["accuracy"]
    if c.ta + c.fr > 0 and c.tr + c.fa > 0:
        bac = 0.5 * (c.ta / (c.ta + c.fr) + c.tr / (c.tr + c.fa))
    else:
        bac, undefined = math.nan, undefined + ["bac"]
    return Rates(far=far, frr=frr, accuracy=accuracy, bac=bac,
                 undefined=tuple(undefined))


@dataclass(frozen=True)
class RocCurve:
    thresholds: np.ndarray  # ascending, with -inf/+inf sentinels
    far: np.ndarray         # non-increasing in threshold
    frr: np.ndarray         # non-decreasing in threshold


def roc(genuine_scores, impostor_scores) -> RocCurve:
    """Operating points at every distinct score plus +-inf sentinels."""
    g = np.sort(np.asarray(genuine_scores, dtype=float))
    i = np.sort(np.asarray(impostor_scores, dtype=float))
    if g.size == 0 or i.size == 0:
        raise ValueError("both score sets must be non-empty")
    thresholds = np.concatenate([[-np.inf], np.unique(np.concatenate([g, i])), [np.inf]])
    far = (i.size - np.searchsorted(i, thresholds, side="left")) / i.size
    frr = np.searchsorted(g, thresholds, side="left") / g.size
    return RocCurve(thresholds=thresholds, far=far, frr=frr)


def eer(curve: RocCurve) -> float:
    """Rate where FAR crosses FRR, linearly interpolated in threshold
    between the bracketing operating points (midpoint when a sentinel
    bounds the crossing)."""
    far, frr, thr = curve.far, curve.frr, curve.thresholds
    diff = far - frr
    for t in range(len(thr)):
        if diff[t] == 0.0:
            return float(far[t])
    for t in range(len(thr) - 1):
        if diff[t] > 0 > diff[t + 1]:
            if not (np.isfinite(thr[t]) and np.isfinite(thr[t + 1])):
                s = 0.5
            else:
                s = diff[t] / (diff[t] - diff[t + 1])
            return float(far[t] + s * (far[t + 1] - far[t]))
    # diff starts at +1 (t=-inf) and ends at -1 (t=+inf), so a crossing
    # always exists; this is unreachable for valid curves.
    raise RuntimeError("no FAR/FRR crossing found")


def eer_threshold(curve: RocCurve) -> float:
    """Finite threshold nearest the FAR/FRR crossing."""
    diff = curve.far - curve.frr
    idx = int(np.argmin(np.abs(diff)))
    t = curve.thresholds[idx]
    if not np.isfinite(t):
        finite = curve.thresholds[np.isfinite(curve.thresholds)]
        t = finite[0] if t < 0 else finite[-1]
    return float(t)


def write_roc_csv(curve: RocCurve, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("# accept on score >= threshold\n")
        writer = csv.writer(fh)
        writer.writerow(["threshold", "far", "frr"])
        for t, fa, fr in zip(curve.thresholds, curve.far, curve.frr):
            writer.writerow([f"{t:.9g}", f"{fa:.9g}", f"{fr:.9g}"])


@dataclass(frozen=True)
class HistTable:
    edges: np.ndarray           # (bins+1,)
    genuine_counts: np.ndarray  # (bins,)
    impostor_counts: np.ndarray


def score_histogram(genuine_scores, impostor_scores, bins: int = 50) -> HistTable:
    """Shared-range histogram of both score sets."""
    if bins < 2:
        raise ValueError("bins must be >= 2")
    g = np.asarray(genuine_scores, dtype=float)
    i = np.asarray(impostor_scores, dtype=float)
    lo = min(g.min(), i.min())
    hi = max(g.max(), i.max())
    if hi == lo:
        hi = lo + 1.0  # all scores equal: single occupied bin
    edges = np.linspace(lo, hi, bins + 1)
    gc, _ = np.histogram(g, bins=edges)
    ic, _ = np.histogram(i, bins=edges)
    return HistTable(edges=edges, genuine_counts=gc, impostor_counts=ic)


def write_histogram_csv(table: HistTable, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_lo", "bin_hi", "genuine", "impostor"])
        for b in range(len(table.genuine_counts)):
            writer.writerow([f"{table.edges[b]:.9g}", f"{table.edges[b + 1]:.9g}",
                             int(table.genuine_counts[b]), int(table.impostor_counts[b])])


@dataclass(frozen=True)
class ProjectionResult:
    coords: np.ndarray        # (n, 2)
    eigenvalues: np.ndarray   # (2,)
    rank_deficient: bool


def _power_iteration(C: np.ndarray, tol: float = 1e-9, max_iter: int = 1000) -> tuple[float, np.ndarray]:
    d = C.shape[0]
    v = np.ones(d) / math.sqrt(d)
    for _ in range(max_iter):
        w = C @ v
        norm = np.linalg.norm(w)
        if norm < 1e-300:
            return 0.0, v
        w = w / norm
        if np.linalg.norm(w - v) < tol or np.linalg.norm(w + v) < tol:
            v = w
            break
        v = w
    lam = float(v @ C @ v)
    if v[np.argmax(np.abs(v))] < 0:
        v = -v
    return lam, v


def project_2d(embeddings: np.ndarray) -> ProjectionResult:
    """Top-2 PCA projection via power iteration with deflation.

    Deterministic sign convention (largest-magnitude loading positive).
    Rank-1 data yields a zero second column and a raised flag.
    """
    X = np.asarray(embeddings, dtype=float)
    n = X.shape[0]
    if n < 3:
        raise ValueError(f"need at least 3 points, got {n}")
    Xc = X - X.mean(axis=0)
    C = (Xc.T @ Xc) / (n - 1)
    lam1, v1 = _power_iteration(C)
    C2 = C - lam1 * np.outer(v1, v1)
    lam2, v2 = _power_iteration(C2)
    rank_deficient = lam1 <= 0 or lam2 <= max(lam1, 1.0) * 1e-12
    if rank_deficient:
        lam2 = 0.0
        coords = np.stack([Xc @ v1, np.zeros(n)], axis=1)
    else:
        coords = np.stack([Xc @ v1, Xc @ v2], axis=1)
    return ProjectionResult(coords=coords, eigenvalues=np.array([lam1, lam2]),
                            rank_deficient=rank_deficient)


def write_projection_csv(result: ProjectionResult, ids: list[str],
                         path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "pc1", "pc2"])
        for sid, (x, y) in zip(ids, result.coords):
            writer.writerow([sid, f"{x:.9g}", f"{y:.9g}"])
