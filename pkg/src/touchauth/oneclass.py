"""Per-user one-class classifiers and the enrollment workflow.

Three detectors over press embeddings: a nu-parameterized one-class SVM
solved by pairwise SMO on its dual, local outlier factor, and an isolation
forest.  All scores are oriented higher = more genuine (LOF and the forest
natively score anomalousness and are negated).
"""

from __future__ import annotations

import base64
import json
import math
import os
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import metrics

EULER_GAMMA = 0.5772156649


class ConvergenceError(RuntimeError):
    """SMO failed to reach the KKT tolerance within max_iter updates."""


class InsufficientSamplesError(ValueError):
    """Too few genuine samples to enroll a user."""


# --- one-class SVM -------------------------------------------------------

@dataclass
class OcSvmModel:
    support_vectors: np.ndarray  # (s, d)
    alpha: np.ndarray            # (s,)
    rho: float
    gamma: float
    nu: float


def _rbf_kernel(X: np.ndarray, Y: np.ndarray, gamma: float) -> np.ndarray:
    sq = (np.sum(X * X, axis=1)[:, None] + np.sum(Y * Y, axis=1)[None, :]
          - 2.0 * X @ Y.T)
    return np.exp(-gamma * np.maximum(sq, 0.0))


def ocsvm_train(X: np.ndarray, nu: float = 0.1, gamma: float | None = None,
                tol: float = 1e-6, max_iter: int = 200000) -> OcSvmModel:
    """Solve the one-class SVM dual

        min 1/2 a'Ka   s.t.  0 <= a_i <= 1/(nu*n),  sum(a) = 1

    by pairwise coordinate updates on the maximal KKT-violating pair,
    converged when the violation drops below tol.  rho is the average
    decision value over margin support vectors.
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if n < 2:
        raise ValueError("need at least 2 training points")
    if not 0.0 < nu <= 1.0:
        raise ValueError(f"nu must be in (0, 1], got {nu}")
    if gamma is None:
        gamma = 1.0 / X.shape[1]
    C = 1.0 / (nu * n)
    K = _rbf_kernel(X, X, gamma)

    alpha = np.zeros(n)
    n_at_bound = int(nu * n)
    alpha[:n_at_bound] = C
    if n_at_bound < n:
        alpha[n_at_bound] = 1.0 - n_at_bound * C
    grad = K @ alpha

    eps = 1e-12
    violation = 0.0
    for _ in range(max_iter):
        up = alpha < C - eps
        low = alpha > eps
        if not up.any() or not low.any():
            break  # every alpha at a bound: the unique feasible point
        i = int(np.where(up)[0][np.argmin(grad[up])])
        j = int(np.where(low)[0][np.argmax(grad[low])])
        violation = grad[j] - grad[i]
        if violation < tol:
            break
        curvature = K[i, i] + K[j, j] - 2.0 * K[i, j]
        if curvature <= 0:
            curvature = 1e-12
        delta = min(violation / curvature, C - alpha[i], alpha[j])
        alpha[i] += delta
        alpha[j] -= delta
        grad += delta * (K[:, i] - K[:, j])
    else:
        raise ConvergenceError(
            f"SMO did not converge in {max_iter} iterations (residual {violation:.3e})"
        )

    margin = (alpha > 1e-9) & (alpha < C - 1e-9)
    if np.any(margin):
        rho = float(np.mean(grad[margin]))
    else:
        at_bound = alpha >= C - 1e-9
        at_zero = alpha <= 1e-9
        hi = grad[at_bound].max() if np.any(at_bound) else None
        lo = grad[at_zero].min() if np.any(at_zero) else None
        if hi is not None and lo is not None:
            rho = float((hi + lo) / 2.0)
        elif hi is not None:
            rho = float(hi)
        else:
            rho = float(lo)

    keep = alpha > 1e-9
    return OcSvmModel(support_vectors=X[keep].copy(), alpha=alpha[keep].copy(),
                      rho=rho, gamma=gamma, nu=nu)


def ocsvm_score(model: OcSvmModel, x: np.ndarray) -> float:
    """Decision value f(x) = sum_i a_i exp(-gamma ||sv_i - x||^2) - rho."""
    return float(ocsvm_score_batch(model, np.asarray(x, dtype=float)[None, :])[0])


def ocsvm_score_batch(model: OcSvmModel, X: np.ndarray) -> np.ndarray:
    K = _rbf_kernel(np.asarray(X, dtype=float), model.support_vectors, model.gamma)
    return K @ model.alpha - model.rho


# --- local outlier factor -------------------------------------------------

DIST_FLOOR = 1e-12


@dataclass
class LofModel:
    train: np.ndarray   # (n, d)
    k: int
    kdist: np.ndarray   # (n,) k-distance of each training point
    lrd: np.ndarray     # (n,) local reachability density


def lof_fit(X: np.ndarray, k: int) -> LofModel:
    """Precompute k-distances and local reachability densities over the
    training set (each point's neighborhood excludes itself)."""
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if not 1 <= k < n:
        raise ValueError(f"need 1 <= k < n, got k={k}, n={n}")
    D = np.sqrt(np.maximum(
        np.sum(X * X, axis=1)[:, None] + np.sum(X * X, axis=1)[None, :] - 2 * X @ X.T,
        0.0))
    np.fill_diagonal(D, np.inf)
    kdist = np.sort(D, axis=1)[:, k - 1]
    lrd = np.empty(n)
    for i in range(n):
        neighbors = np.where(D[i] <= kdist[i])[0]
        reach = np.maximum(kdist[neighbors], D[i, neighbors])
        lrd[i] = 1.0 / max(float(np.mean(reach)), DIST_FLOOR)
    return LofModel(train=X.copy(), k=k, kdist=kdist, lrd=lrd)


def lof_score(model: LofModel, x: np.ndarray) -> float:
    """Negated LOF of the query against the training set; higher = more
    genuine.  A zero-distance training point (the query itself) is excluded
    from the neighborhood."""
    x = np.asarray(x, dtype=float)
    d = np.linalg.norm(model.train - x, axis=1)
    zero = np.where(d == 0.0)[0]
    if zero.size:
        d = d.copy()
        d[zero[0]] = np.inf  # drop one exact self-match
    order = np.sort(d)
    kdist_x = order[model.k - 1]
    neighbors = np.where(d <= kdist_x)[0]
    reach = np.maximum(model.kdist[neighbors], d[neighbors])
    lrd_x = 1.0 / max(float(np.mean(reach)), DIST_FLOOR)
    lof = float(np.mean(model.lrd[neighbors])) / lrd_x
    return -lof


def lof_score_batch(model: LofModel, X: np.ndarray) -> np.ndarray:
    return np.array([lof_score(model, x) for x in np.asarray(X, dtype=float)])


# --- isolation forest ------------------------------------------------------

@dataclass
class IsoTree:
    """Array-encoded isolation tree; feature == -1 marks an external node."""
    feature: np.ndarray    # (m,) int
    threshold: np.ndarray  # (m,) float
    left: np.ndarray       # (m,) int child index
    right: np.ndarray      # (m,) int child index
    size: np.ndarray       # (m,) int node sample count


@dataclass
class IForestModel:
    trees: list[IsoTree]
    psi: int
    seed: int


def average_path_length(n: int) -> float:
    """Expected unsuccessful-search path length c(n) in a binary search tree."""
    if n <= 1:
        return 0.0
    if n == 2:
        return 1.0
    h = math.log(n - 1) + EULER_GAMMA
    return 2.0 * h - 2.0 * (n - 1) / n


def _grow_tree(X: np.ndarray, rng: np.random.Generator, height_limit: int) -> IsoTree:
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    size: list[int] = []

    def build(rows: np.ndarray, depth: int) -> int:
        node = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        size.append(len(rows))
        if depth >= height_limit or len(rows) <= 1:
            return node
        sub = X[rows]
        lo = sub.min(axis=0)
        hi = sub.max(axis=0)
        splittable = np.where(hi > lo)[0]
        if splittable.size == 0:
            return node
        f = int(splittable[rng.integers(0, splittable.size)])
        v = float(rng.uniform(lo[f], hi[f]))
        mask = sub[:, f] < v
        feature[node] = f
        threshold[node] = v
        left[node] = build(rows[mask], depth + 1)
        right[node] = build(rows[~mask], depth + 1)
        return node

    build(np.arange(X.shape[0]), 0)
    return IsoTree(feature=np.array(feature), threshold=np.array(threshold),
                   left=np.array(left), right=np.array(right), size=np.array(size))


def iforest_fit(X: np.ndarray, n_trees: int = 100, psi: int = 256,
                seed: int = 0) -> IForestModel:
    """Build seeded isolation trees on psi-subsamples with height limit
    ceil(log2 psi); deterministic given (X, seed)."""
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if n < 2:
        raise ValueError("need at least 2 training points")
    psi_eff = min(psi, n)
    height_limit = max(1, math.ceil(math.log2(psi_eff)))
    trees = []
    for t in range(n_trees):
        rng = np.random.default_rng([seed, t])
        rows = rng.choice(n, size=psi_eff, replace=False)
        trees.append(_grow_tree(X[rows], rng, height_limit))
    return IForestModel(trees=trees, psi=psi_eff, seed=seed)


def _path_length(tree: IsoTree, x: np.ndarray) -> float:
    node = 0
    depth = 0
    while tree.feature[node] != -1:
        node = tree.left[node] if x[tree.feature[node]] < tree.threshold[node] \
            else tree.right[node]
        depth += 1
    return depth + average_path_length(int(tree.size[node]))


def iforest_score(model: IForestModel, x: np.ndarray) -> float:
    """Negated anomaly score -2^(-E[h(x)]/c(psi)); higher = more genuine."""
    x = np.asarray(x, dtype=float)
    mean_path = float(np.mean([_path_length(t, x) for t in model.trees]))
    s = 2.0 ** (-mean_path / average_path_length(model.psi))
    return -s


def iforest_score_batch(model: IForestModel, X: np.ndarray) -> np.ndarray:
    return np.array([iforest_score(model, x) for x in np.asarray(X, dtype=float)])


# --- unified surface -------------------------------------------------------

KINDS = ("ocsvm", "lof", "iforest")


def fit_model(kind: str, X: np.ndarray, params: dict[str, Any],
              kkt_tol: float = 1e-6, max_iter: int = 200000,
              n_trees: int = 100, seed: int = 0):
    if kind == "ocsvm":
        return ocsvm_train(X, nu=params["nu"], gamma=params["gamma"],
                           tol=kkt_tol, max_iter=max_iter)
    if kind == "lof":
        k = min(params["k"], X.shape[0] - 1)
        return lof_fit(X, k=k)
    if kind == "iforest":
        return iforest_fit(X, n_trees=n_trees, psi=params["psi"], seed=seed)
    raise ValueError(f"unknown classifier kind {kind!r}")


def score_batch(kind: str, model, X: np.ndarray) -> np.ndarray:
    if kind == "ocsvm":
        return ocsvm_score_batch(model, X)
    if kind == "lof":
        return lof_score_batch(model, X)
    if kind == "iforest":
        return iforest_score_batch(model, X)
    raise ValueError(f"unknown classifier kind {kind!r}")


def default_grid(kind: str, n_features: int,
                 grid_cfg: dict[str, Any] | None = None) -> list[dict[str, Any]]:
    cfg = grid_cfg or {}
    if kind == "ocsvm":
        nus = cfg.get("ocsvm_nu", [0.01, 0.05, 0.1, 0.2])
        scales = cfg.get("ocsvm_gamma_scale", [1.0, 0.1, 10.0])
        return [{"nu": nu, "gamma": s / n_features} for nu in nus for s in scales]
    if kind == "lof":
        return [{"k": k} for k in cfg.get("lof_k", [5, 10, 20])]
    if kind == "iforest":
        return [{"psi": p} for p in cfg.get("iforest_psi", [64, 128, 256])]
    raise ValueError(f"unknown classifier kind {kind!r}")


def grid_search(genuine_train: np.ndarray, genuine_val: np.ndarray,
                impostor_val: np.ndarray, kind: str,
                grid: list[dict[str, Any]] | None = None,
                threshold_percentile: float = 2.0,
                **fit_kwargs) -> tuple[dict[str, Any], float]:
    """Exhaustive search minimizing validation EER; ties keep grid order.

    Validation EER has a resolution of one sample, so candidates within
    1/len(genuine_val) of the minimum count as tied and the earliest grid
    entry (the smoothest kernel) wins; exact-minimum selection would
    otherwise chase sampling noise into degenerately tight models.
    Candidates whose low-percentile genuine threshold would admit most
    impostors are additionally skipped unless nothing else qualifies.
    """
    if len(genuine_train) == 0 or len(genuine_val) == 0 or len(impostor_val) == 0:
        raise ValueError("grid search needs non-empty train, val, and impostor sets")
    if grid is None:
        grid = default_grid(kind, genuine_train.shape[1])
    if not grid:
        raise ValueError("empty hyperparameter grid")
    results = []
    for params in grid:
        model = fit_model(kind, genuine_train, params, **fit_kwargs)
        g = score_batch(kind, model, genuine_val)
        i = score_batch(kind, model, impostor_val)
        eer = metrics.eer(metrics.roc(g, i))
        cal_far = float(np.mean(i >= np.percentile(g, threshold_percentile)))
        results.append((params, eer, cal_far))
    feasible = [r for r in results if r[2] <= 0.25]
    pool = feasible if feasible else results
    best_eer = min(r[1] for r in pool)
    tol = 1.0 / len(genuine_val)
    best_params = next(r[0] for r in pool if r[1] <= best_eer + tol)
    return best_params, best_eer


def _normal_quantile(p: float) -> float:
    """Inverse standard-normal CDF by bisection on erf (p in (0, 1))."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must be in (0, 1), got {p}")
    lo, hi = -10.0, 10.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if 0.5 * (1.0 + math.erf(mid / math.sqrt(2.0))) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass
class UserTemplate:
    user_id: str
    kind: str
    model: Any
    threshold: float
    params: dict[str, Any] = field(default_factory=dict)
    embed_config_hash: str = ""
    created_at: str = "1970-01-01T00:00:00Z"  # fixed unless supplied: outputs stay byte-stable


MIN_ENROLL = 20


def enroll(embeddings: np.ndarray, impostors: np.ndarray, user_id: str,
           kind: str = "ocsvm", threshold_percentile: float = 2.0,
           grid: list[dict[str, Any]] | None = None, seed: int = 0,
           embed_config_hash: str = "", created_at: str | None = None,
           **fit_kwargs) -> UserTemplate:
    """Enroll one user from genuine embeddings only.

    80/20 train/val split feeds the grid search (impostor scores come from
    the supplied pre-training pool); the final model is refit on all
    genuine data and the accept threshold sits at the given percentile of
    the genuine training scores.
    """
    embeddings = np.asarray(embeddings, dtype=float)
    if embeddings.shape[0] < MIN_ENROLL:
        raise InsufficientSamplesError(
            f"enrollment needs at least {MIN_ENROLL} genuine embeddings, "
            f"got {embeddings.shape[0]}"
        )
    rng = np.random.default_rng(seed)
    order = rng.permutation(embeddings.shape[0])
    n_val = max(1, embeddings.shape[0] // 5)
    val_idx = order[:n_val]
    train_idx = order[n_val:]
    params, _ = grid_search(embeddings[train_idx], embeddings[val_idx],
                            np.asarray(impostors, dtype=float), kind,
                            grid=grid, threshold_percentile=threshold_percentile,
                            seed=seed, **fit_kwargs)
    model = fit_model(kind, embeddings, params, seed=seed, **fit_kwargs)
    # Threshold from out-of-fold genuine scores: in-sample scores are biased
    # high (support vectors sit on the boundary), so percentiles of them
    # under-cover held-out genuine presses.  The percentile itself is
    # estimated robustly (median/MAD under a normal model) because a couple
    # of extreme out-of-fold points otherwise swing the raw 2nd percentile
    # far below the real genuine tail.
    oof = np.empty(embeddings.shape[0])
    n_folds = 5
    folds = np.array_split(order, n_folds)
    for f in range(n_folds):
        held = folds[f]
        rest = np.concatenate([folds[j] for j in range(n_folds) if j != f])
        fold_model = fit_model(kind, embeddings[rest], params, seed=seed, **fit_kwargs)
        oof[held] = score_batch(kind, fold_model, embeddings[held])
    med = float(np.median(oof))
    mad = float(np.median(np.abs(oof - med)))
    threshold = med + _normal_quantile(threshold_percentile / 100.0) * 1.4826 * mad
    template = UserTemplate(user_id=user_id, kind=kind, model=model,
                            threshold=threshold, params=params,
                            embed_config_hash=embed_config_hash)
    if created_at is not None:
        template.created_at = created_at
    return template


def verify(template: UserTemplate, embedding: np.ndarray) -> tuple[float, bool]:
    """Score one embedding against a template; accept iff score >= threshold."""
    score = float(score_batch(template.kind, template.model,
                              np.asarray(embedding, dtype=float)[None, :])[0])
    return score, score >= template.threshold


# --- template files ---------------------------------------------------------

def _b64(a: np.ndarray, dtype: str = "<f8") -> str:
    return base64.b64encode(np.ascontiguousarray(a, dtype=dtype).tobytes()).decode("ascii")


def _unb64(s: str, shape: tuple[int, ...], dtype: str = "<f8") -> np.ndarray:
    return np.frombuffer(base64.b64decode(s), dtype=dtype).reshape(shape).copy()


def save_template(template: UserTemplate, path: str | os.PathLike) -> None:
    m = template.model
    if template.kind == "ocsvm":
        payload = {
            "sv": _b64(m.support_vectors), "n_sv": m.support_vectors.shape[0],
            "dim": m.support_vectors.shape[1],
            "alpha": _b64(m.alpha), "rho": m.rho, "gamma": m.gamma, "nu": m.nu,
        }
    elif template.kind == "lof":
        payload = {
            "train": _b64(m.train), "n": m.train.shape[0], "dim": m.train.shape[1],
            "k": m.k,
        }
    elif template.kind == "iforest":
        payload = {
            "psi": m.psi, "seed": m.seed,
            "trees": [{
                "feature": _b64(t.feature, "<i8"),
                "threshold": _b64(t.threshold),
                "left": _b64(t.left, "<i8"),
                "right": _b64(t.right, "<i8"),
                "size": _b64(t.size, "<i8"),
                "n_nodes": len(t.feature),
            } for t in m.trees],
        }
    else:
        raise ValueError(f"unknown classifier kind {template.kind!r}")
    data = {
        "user_id": template.user_id,
        "kind": template.kind,
        "params": {k: template.params[k] for k in sorted(template.params)},
        "model": payload,
        "threshold": template.threshold,
        "embed_config_hash": template.embed_config_hash,
        "created_at": template.created_at,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, sort_keys=True)
        fh.write("\n")


def load_template(path: str | os.PathLike) -> UserTemplate:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    kind = data["kind"]
    p = data["model"]
    if kind == "ocsvm":
        model = OcSvmModel(
            support_vectors=_unb64(p["sv"], (p["n_sv"], p["dim"])),
            alpha=_unb64(p["alpha"], (p["n_sv"],)),
            rho=float(p["rho"]), gamma=float(p["gamma"]), nu=float(p["nu"]),
        )
    elif kind == "lof":
        model = lof_fit(_unb64(p["train"], (p["n"], p["dim"])), k=int(p["k"]))
    elif kind == "iforest":
        trees = [IsoTree(
            feature=_unb64(t["feature"], (t["n_nodes"],), "<i8"),
            threshold=_unb64(t["threshold"], (t["n_nodes"],)),
            left=_unb64(t["left"], (t["n_nodes"],), "<i8"),
            right=_unb64(t["right"], (t["n_nodes"],), "<i8"),
            size=_unb64(t["size"], (t["n_nodes"],), "<i8"),
        ) for t in p["trees"]]
        model = IForestModel(trees=trees, psi=int(p["psi"]), seed=int(p["seed"]))
    else:
        raise ValueError(f"unknown classifier kind {kind!r}")
    return UserTemplate(user_id=data["user_id"], kind=kind, model=model,
                        threshold=float(data["threshold"]),
                        params=dict(data["params"]),
                        embed_config_hash=data.get("embed_config_hash", ""),
                        created_at=data.get("created_at", "1970-01-01T00:00:00Z"))
