"""Layered pipeline configuration: defaults < JSON file < --set overrides.

Every tunable constant in the pipeline lives here under its module's
namespace.  Unknown keys are rejected so typos fail loudly instead of
silently falling back to defaults.
"""

from __future__ import annotations

import copy
import json
import os
from pathlib import Path
from typing import Any

ENV_CONFIG = "TOUCHAUTH_CONFIG"

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "paths": {
        "data_dir": ".",
        "model_path": "model.json",
        "template_dir": "templates",
        "out_dir": "out",
    },
    "capsense": {
        "k": 3.0,                 # robust-threshold sensitivity multiplier
        "connectivity": 8,        # 8- or 4-neighbor touch regions
        "n_frames": 16,
        "smooth_window": 5,
        "kalman": {
            "q_pos": 0.01,
            "q_vel": 0.04,
            "r": 0.25,
            "p0_pos": 1.0,
            "p0_vel": 10.0,
        },
    },
    "motion": {
        "wavelet": {"levels": 3},
        "beta": 0.1,              # orientation-fusion correction gain
        "rho": 0.2,               # derivative-threshold fraction for interval refinement
        "segment_len": 160,
        "stft": {"win": 32, "hop": 8},
        "pad_s": 0.05,
    },
    "augment": {
        "warp_factor": 0.1,
        "base_sigma": 0.5,
        "min_sigma": 0.1,
        "a_nominal": 50.0,
        "n_aug": 1,
        "seed": 0,
    },
    "embed": {
        "hidden": 512,
        "lr": 0.01,
        "epochs": 50,
        "batch": 32,
        "momentum": 0.9,
        "dropout": 0.3,
        "seed": 0,
    },
    "oneclass": {
        "kind": "ocsvm",
        "threshold_percentile": 2.0,
        "kkt_tol": 1e-6,
        "max_iter": 200000,
        "grid": {
            "ocsvm_nu": [0.01, 0.05, 0.1, 0.2],
            "ocsvm_gamma_scale": [1.0, 0.1, 10.0],  # gamma = scale / n_features
            "lof_k": [5, 10, 20],
            "iforest_psi": [64, 128, 256],
        },
        "iforest_trees": 100,
        "seed": 0,
    },
    "synth": {
        "cap_noise": 0.25,        # Poisson-like count noise scale
        "impulse_amp": 2.0,       # press impulse peak, m/s^2 at peak_scale 1
        "rebound_frac": 0.8,      # release undershoot relative to press peak
        "attack_fidelity": [0.2, 0.6],  # per-attack fidelity draw range
        "n_attackers": 5,
        "perturb_scale": 0.0,     # generic environmental-perturbation hook
        "replica_cov_inflate": [1.1, 1.3],
        "puppet_damping": [0.5, 0.8],
        "puppet_jerk_hz": [2.0, 4.0],
        "puppet_jerk_amp": 3.0,
    },
}


class ConfigError(ValueError):
    """Raised for unknown keys or badly typed values."""


def default_config() -> dict[str, Any]:
    return copy.deepcopy(DEFAULTS)


def _merge(base: dict[str, Any], override: dict[str, Any], prefix: str = "") -> None:
    for key, value in override.items():
        path = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key: {path}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path} expects a table, got {type(value).__name__}")
            _merge(base[key], value, prefix=path + ".")
        else:
            base[key] = _coerce(path, base[key], value)


def _coerce(path: str, default: Any, value: Any) -> Any:
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"config key {path} expects bool")
        return value
    if isinstance(default, float) and isinstance(value, (int, float)):
        return float(value)
    if isinstance(default, int) and isinstance(value, int):
        return value
    if isinstance(default, str) and isinstance(value, str):
        return value
    if isinstance(default, list) and isinstance(value, list):
        return value
    raise ConfigError(
        f"config key {path} expects {type(default).__name__}, got {type(value).__name__}"
    )


def apply_override(cfg: dict[str, Any], dotted_key: str, raw_value: str) -> None:
    """Apply a single ``--set a.b.c=value`` override; values parse as JSON first."""
    try:
        value = json.loads(raw_value)
    except json.JSONDecodeError:
        value = raw_value
    parts = dotted_key.split(".")
    node = cfg
    for i, part in enumerate(parts[:-1]):
        if part not in node or not isinstance(node[part], dict):
            raise ConfigError(f"unknown config key: {'.'.join(parts[: i + 1])}")
        node = node[part]
    leaf = parts[-1]
    if leaf not in node:
        raise ConfigError(f"unknown config key: {dotted_key}")
    if isinstance(node[leaf], dict):
        raise ConfigError(f"config key {dotted_key} is a table, not a value")
    node[leaf] = _coerce(dotted_key, node[leaf], value)


def load_config(path: str | os.PathLike | None = None,
                overrides: tuple[str, ...] = ()) -> dict[str, Any]:
    """Resolve the effective config: defaults, then file, then overrides.

    ``path=None`` falls back to the TOUCHAUTH_CONFIG environment variable;
    if neither is set only defaults apply.
    """
    cfg = default_config()
    if path is None:
        path = os.environ.get(ENV_CONFIG) or None
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise ConfigError("config file must contain a JSON object")
        _merge(cfg, data)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        apply_override(cfg, key.strip(), value.strip())
    return cfg


def dump_resolved(cfg: dict[str, Any], out_dir: str | os.PathLike) -> Path:
    """Write the fully resolved config next to the outputs for provenance."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "resolved_config.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
