"""Seeded synthetic user and attack session generator.

Users factor into a physiological contact model (capacitive footprint
shape, amplitude, asymmetry) and a behavioral motion model (press timing
and force envelope, grip orientation, tremor, sensor noise).  Attacks
manipulate exactly one factor: mimicry keeps the attacker's physiology and
interpolates behavior toward the victim; replica copies (and degrades) the
victim's physiology over the attacker's behavior; puppet keeps the
victim's physiology and distorts their behavior by external actuation.

Every draw flows through the supplied generator, so (profiles, spec, seed)
determine the emitted session bytes exactly.  All float channels quantize
to 6 decimals so file round trips are value-exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .session_io import CapFrame, ImuSample, Session, SessionMeta

GRAVITY = 9.81
MAG_FIELD = 50.0          # uT
MAG_DIP = 1.05            # rad; world field = MAG_FIELD*(cos, 0, -sin)
CAP_ROWS, CAP_COLS = 27, 15
CAP_HZ, IMU_HZ = 20, 200
DURATION_MS = 800
N_CAP_FRAMES = 16
N_IMU_SAMPLES = 160
CAP_BACKGROUND = 8.0      # baseline counts; keeps the robust threshold above noise

M_WORLD = MAG_FIELD * np.array([math.cos(MAG_DIP), 0.0, -math.sin(MAG_DIP)])


@dataclass(frozen=True)
class ParamSpec:
    low: float
    high: float
    jitter_frac: float  # per-session jitter std as a fraction of the range

    @property
    def inter_std(self) -> float:
        return (self.high - self.low) / math.sqrt(12.0)

    @property
    def intra_std(self) -> float:
        return (self.high - self.low) * self.jitter_frac


# Physiological parameters separate users ~9x more than session jitter;
# behavioral ones ~3.7x, so motion alone is the weaker (but still
# discriminative) modality.
_PHYSIO_J = 1.0 / 32.0
_BEHAVIOR_J = 1.0 / 13.0

PARAM_TABLE: dict[str, ParamSpec] = {
    # physio (the capacitive footprint is deliberately the wider-spread,
    # lower-jitter factor so the capacitive modality is physio-dominated)
    "blob_sr": ParamSpec(1.5, 3.4, _PHYSIO_J),
    "blob_sc": ParamSpec(1.1, 2.7, _PHYSIO_J),
    "blob_corr": ParamSpec(-0.5, 0.5, _PHYSIO_J),
    "amp": ParamSpec(35.0, 100.0, _PHYSIO_J),
    "skew": ParamSpec(-0.4, 0.4, _PHYSIO_J),
    # behavior (press-envelope ranges stay narrow because the envelope also
    # shapes the capacitive frames; motion identity rides mostly on grip,
    # tremor, wander, and sensor character)
    "press_ms": ParamSpec(300.0, 500.0, _BEHAVIOR_J),
    "attack_ms": ParamSpec(70.0, 120.0, _BEHAVIOR_J),
    "release_ms": ParamSpec(90.0, 150.0, _BEHAVIOR_J),
    "peak_scale": ParamSpec(0.9, 1.1, _BEHAVIOR_J),
    "tremor_x": ParamSpec(0.002, 0.015, _BEHAVIOR_J),
    "tremor_y": ParamSpec(0.002, 0.015, _BEHAVIOR_J),
    "tremor_z": ParamSpec(0.002, 0.015, _BEHAVIOR_J),
    "tremor_hz": ParamSpec(8.0, 12.0, _BEHAVIOR_J),
    "wander": ParamSpec(0.002, 0.010, _BEHAVIOR_J),
    "grip_phi": ParamSpec(-0.5, 0.5, _BEHAVIOR_J),
    "grip_theta": ParamSpec(-0.45, 0.45, _BEHAVIOR_J),
    "grip_psi": ParamSpec(-2.5, 2.5, _BEHAVIOR_J),
    "accel_noise": ParamSpec(0.005, 0.03, _BEHAVIOR_J),
    "gyro_noise": ParamSpec(0.001, 0.006, _BEHAVIOR_J),
    "mag_noise": ParamSpec(0.05, 0.25, _BEHAVIOR_J),
}

_PHYSIO_KEYS = ("blob_sr", "blob_sc", "blob_corr", "amp", "skew")
_BEHAVIOR_KEYS = tuple(k for k in PARAM_TABLE if k not in _PHYSIO_KEYS)

# Hard bounds that session jitter and attack distortion may never cross.
_CLIPS = {
    "blob_sr": (0.5, 5.0),
    "blob_sc": (0.5, 5.0),
    "blob_corr": (-0.9, 0.9),
    "amp": (5.0, 400.0),
    "skew": (-0.9, 0.9),
    "press_ms": (200.0, 700.0),
    "attack_ms": (30.0, 250.0),
    "release_ms": (40.0, 300.0),
    "peak_scale": (0.2, 2.5),
    "tremor_x": (0.0, 0.08),
    "tremor_y": (0.0, 0.08),
    "tremor_z": (0.0, 0.08),
    "tremor_hz": (6.0, 14.0),
    "wander": (0.0, 0.05),
    "grip_phi": (-1.2, 1.2),
    "grip_theta": (-1.2, 1.2),
    "grip_psi": (-3.0, 3.0),
    "accel_noise": (0.0, 0.5),
    "gyro_noise": (0.0, 0.1),
    "mag_noise": (0.0, 2.0),
}


@dataclass(frozen=True)
class Physio:
    blob_cov: np.ndarray  # 2x2 SPD footprint covariance, cells^2
    amp: float            # peak counts
    skew: float           # footprint asymmetry coefficient


@dataclass(frozen=True)
class Behavior:
    press_ms: float
    force_env: tuple[float, float, float]   # (attack_ms, release_ms, peak_scale)
    tremor: tuple[float, float, float]      # 8-12 Hz angular tremor amplitude, rad
    grip_euler: tuple[float, float, float]  # resting (phi, theta, psi), rad
    imu_noise: tuple[float, float, float]   # sigma for (accel, gyro, mag)


@dataclass(frozen=True)
class UserProfile:
    user_id: str
    physio: Physio
    behavior: Behavior
    params: dict[str, float]  # flat generating parameters (see PARAM_TABLE)


def _cov_from(sr: float, sc: float, corr: float) -> np.ndarray:
    return np.array([[sr * sr, corr * sr * sc], [corr * sr * sc, sc * sc]])


def _profile_from_params(user_id: str, p: dict[str, float]) -> UserProfile:
    physio = Physio(blob_cov=_cov_from(p["blob_sr"], p["blob_sc"], p["blob_corr"]),
                    amp=p["amp"], skew=p["skew"])
    behavior = Behavior(
        press_ms=p["press_ms"],
        force_env=(p["attack_ms"], p["release_ms"], p["peak_scale"]),
        tremor=(p["tremor_x"], p["tremor_y"], p["tremor_z"]),
        grip_euler=(p["grip_phi"], p["grip_theta"], p["grip_psi"]),
        imu_noise=(p["accel_noise"], p["gyro_noise"], p["mag_noise"]),
    )
    return UserProfile(user_id=user_id, physio=physio, behavior=behavior, params=dict(p))


def gen_user(seed: int, user_id: str | None = None) -> UserProfile:
    """Draw a user profile from the documented parameter distributions."""
    rng = np.random.default_rng(seed)
    p = {name: float(rng.uniform(spec.low, spec.high))
         for name, spec in PARAM_TABLE.items()}
    return _profile_from_params(user_id or f"user{seed:05d}", p)


def session_params(profile: UserProfile, rng: np.random.Generator) -> dict[str, float]:
    """Per-session jitter of the profile parameters (clipped to hard bounds)."""
    out = {}
    for name, spec in PARAM_TABLE.items():
        value = profile.params[name] + float(rng.normal(0.0, spec.intra_std))
        lo, hi = _CLIPS[name]
        out[name] = min(max(value, lo), hi)
    return out


def _euler_to_quat_batch(phi: np.ndarray, theta: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """Vectorized euler -> quaternion under the pipeline convention
    (qz(psi) * qy(-theta) * qx(phi))."""
    cx, sx = np.cos(phi / 2), np.sin(phi / 2)
    cy, sy = np.cos(-theta / 2), np.sin(-theta / 2)
    cz, sz = np.cos(psi / 2), np.sin(psi / 2)
    # qz * qy
    a0, a2, a3 = cz * cy, cz * sy, sz * cy
    a1 = -sz * sy
    # (qz*qy) * qx
    q0 = a0 * cx - a1 * sx
    q1 = a0 * sx + a1 * cx
    q2 = a2 * cx + a3 * sx
    q3 = a3 * cx - a2 * sx
    return np.stack([q0, q1, q2, q3], axis=1)


def _rotate_world_to_body(quats: np.ndarray, v: np.ndarray) -> np.ndarray:
    """R(q)^T v for each quaternion: world vector expressed in body axes."""
    q0, q1, q2, q3 = quats[:, 0], quats[:, 1], quats[:, 2], quats[:, 3]
    r00 = 1 - 2 * (q2 * q2 + q3 * q3)
    r01 = 2 * (q1 * q2 - q0 * q3)
    r02 = 2 * (q1 * q3 + q0 * q2)
    r10 = 2 * (q1 * q2 + q0 * q3)
    r11 = 1 - 2 * (q1 * q1 + q3 * q3)
    r12 = 2 * (q2 * q3 - q0 * q1)
    r20 = 2 * (q1 * q3 - q0 * q2)
    r21 = 2 * (q2 * q3 + q0 * q1)
    r22 = 1 - 2 * (q1 * q1 + q2 * q2)
    out = np.empty((len(quats), 3))
    out[:, 0] = r00 * v[0] + r10 * v[1] + r20 * v[2]
    out[:, 1] = r01 * v[0] + r11 * v[1] + r21 * v[2]
    out[:, 2] = r02 * v[0] + r12 * v[1] + r22 * v[2]
    return out


def _body_rates(quats: np.ndarray, fs: float) -> np.ndarray:
    """Body angular velocity from the quaternion trajectory:
    omega = 2 * Im(conj(q) * dq/dt)."""
    qdot = np.gradient(quats, 1.0 / fs, axis=0)
    q0, q1, q2, q3 = quats[:, 0], quats[:, 1], quats[:, 2], quats[:, 3]
    d0, d1, d2, d3 = qdot[:, 0], qdot[:, 1], qdot[:, 2], qdot[:, 3]
    wx = 2 * (q0 * d1 - q1 * d0 - q2 * d3 + q3 * d2)
    wy = 2 * (q0 * d2 + q1 * d3 - q2 * d0 - q3 * d1)
    wz = 2 * (q0 * d3 - q1 * d2 + q2 * d1 - q3 * d0)
    return np.stack([wx, wy, wz], axis=1)


def _envelope(t: np.ndarray, t_on: float, press_s: float, attack_s: float,
              release_s: float, peak_scale: float) -> np.ndarray:
    t_end = t_on + press_s
    hold_start = t_on + attack_s
    hold_end = t_end - release_s
    env = np.zeros_like(t)
    rising = (t >= t_on) & (t < hold_start)
    env[rising] = (t[rising] - t_on) / attack_s
    env[(t >= hold_start) & (t <= hold_end)] = 1.0
    falling = (t > hold_end) & (t <= t_end)
    env[falling] = np.maximum((t_end - t[falling]) / release_s, 0.0)
    return peak_scale * env


def _gen_session_core(profile: UserProfile, rng: np.random.Generator,
                      session_id: str, label: str, user_id: str,
                      cap_noise: float = 0.25, impulse_amp: float = 2.0,
                      rebound_frac: float = 0.8, perturb_scale: float = 0.0,
                      extra_accel: np.ndarray | None = None,
                      param_override: dict[str, float] | None = None
                      ) -> tuple[Session, dict]:
    p = param_override if param_override is not None else session_params(profile, rng)
    press_s = p["press_ms"] / 1000.0
    attack_s = min(p["attack_ms"] / 1000.0, press_s / 2)
    release_s = min(p["release_ms"] / 1000.0, press_s / 2)
    t_on = float(rng.uniform(0.10, 0.12))
    t_end = t_on + press_s

    r0 = float(np.clip(rng.normal(CAP_ROWS / 2 - 0.5, 0.15), 3, CAP_ROWS - 4))
    c0 = float(np.clip(rng.normal(CAP_COLS / 2 - 0.5, 0.15), 3, CAP_COLS - 4))

    # capacitive frames
    cov = _cov_from(p["blob_sr"], p["blob_sc"], p["blob_corr"])
    cov_inv = np.linalg.inv(cov)
    ii, jj = np.mgrid[0:CAP_ROWS, 0:CAP_COLS]
    di, dj = ii - r0, jj - c0
    md2 = cov_inv[0, 0] * di * di + 2 * cov_inv[0, 1] * di * dj + cov_inv[1, 1] * dj * dj
    footprint = np.exp(-0.5 * md2)
    footprint *= np.maximum(1.0 + p["skew"] * dj / p["blob_sc"], 0.0)

    cap_ts = [int(round(i * 1000.0 / CAP_HZ)) for i in range(N_CAP_FRAMES)]
    frame_t = np.array(cap_ts, dtype=float) / 1000.0
    env = _envelope(frame_t, t_on, press_s, attack_s, release_s, p["peak_scale"])
    noise_scale = cap_noise * (1.0 + perturb_scale)
    frames = []
    for f in range(N_CAP_FRAMES):
        signal = CAP_BACKGROUND + p["amp"] * env[f] * footprint
        noisy = signal + rng.normal(size=signal.shape) * noise_scale * np.sqrt(signal + 1.0)
        frames.append(CapFrame(ts_ms=cap_ts[f],
                               values=np.maximum(np.rint(noisy), 0).astype(np.int64)))

    # IMU channels
    t = np.arange(N_IMU_SAMPLES) / IMU_HZ
    grip = np.array([p["grip_phi"], p["grip_theta"], p["grip_psi"]])
    angles = np.tile(grip, (N_IMU_SAMPLES, 1))
    for axis in range(3):
        w_amp = p["wander"] * float(rng.uniform(0.7, 1.3)) * (1.0 + perturb_scale)
        w_freq = float(rng.uniform(0.3, 1.0))
        w_phase = float(rng.uniform(0, 2 * math.pi))
        angles[:, axis] += w_amp * np.sin(2 * math.pi * w_freq * t + w_phase)
        tr_amp = p[("tremor_x", "tremor_y", "tremor_z")[axis]]
        tr_phase = float(rng.uniform(0, 2 * math.pi))
        angles[:, axis] += tr_amp * np.sin(2 * math.pi * p["tremor_hz"] * t + tr_phase)

    quats = _euler_to_quat_batch(angles[:, 0], angles[:, 1], angles[:, 2])
    grav_body = _rotate_world_to_body(quats, np.array([0.0, 0.0, GRAVITY]))
    mag_body = _rotate_world_to_body(quats, M_WORLD)

    t_pk = t_on + attack_s / 2
    t_rb = t_end - release_s / 2
    w_a = max(attack_s / 3.0, 0.01)
    w_r = max(release_s / 3.0, 0.01)
    impulse = impulse_amp * p["peak_scale"] * (
        np.exp(-0.5 * ((t - t_pk) / w_a) ** 2)
        - rebound_frac * np.exp(-0.5 * ((t - t_rb) / w_r) ** 2))

    accel = grav_body * (1.0 + impulse / GRAVITY)[:, None]
    if extra_accel is not None:
        accel = accel + extra_accel
    gyro = _body_rates(quats, IMU_HZ)
    accel = accel + rng.normal(size=accel.shape) * p["accel_noise"] * (1 + perturb_scale)
    gyro = gyro + rng.normal(size=gyro.shape) * p["gyro_noise"] * (1 + perturb_scale)
    mag = mag_body + rng.normal(size=mag_body.shape) * p["mag_noise"] * (1 + perturb_scale)

    accel_q = np.round(accel, 6).tolist()
    gyro_q = np.round(gyro, 6).tolist()
    mag_q = np.round(mag, 6).tolist()
    imu = []
    for k in range(N_IMU_SAMPLES):
        imu.append(ImuSample(
            ts_ms=int(round(k * 1000.0 / IMU_HZ)),
            a=tuple(accel_q[k]),
            g=tuple(gyro_q[k]),
            m=tuple(mag_q[k]),
        ))

    meta = SessionMeta(session_id=session_id, user_id=user_id, label=label,
                       cap_hz=CAP_HZ, cap_rows=CAP_ROWS, cap_cols=CAP_COLS,
                       imu_hz=IMU_HZ, duration_ms=DURATION_MS)
    session = Session(meta=meta, cap=tuple(frames), imu=tuple(imu))
    truth = {
        "press_start_idx": int(round(t_on * IMU_HZ)),
        "press_end_idx": int(round(t_end * IMU_HZ)),
        "impulse_peak_idx": int(round(t_pk * IMU_HZ)),
        "impulse_valley_idx": int(round(t_rb * IMU_HZ)),
        "center_row": r0,
        "center_col": c0,
        "params": {k: p[k] for k in sorted(p)},
    }
    return session, truth


def gen_session(profile: UserProfile, rng: np.random.Generator,
                session_id: str = "session", cap_noise: float = 0.25,
                impulse_amp: float = 2.0, rebound_frac: float = 0.8,
                perturb_scale: float = 0.0) -> tuple[Session, dict]:
    """One genuine press session plus its ground-truth sidecar dict."""
    return _gen_session_core(profile, rng, session_id=session_id, label="genuine",
                             user_id=profile.user_id, cap_noise=cap_noise,
                             impulse_amp=impulse_amp, rebound_frac=rebound_frac,
                             perturb_scale=perturb_scale)


@dataclass(frozen=True)
class AttackSpec:
    kind: str            # mimicry | replica | puppet
    fidelity: float = 0.8

    def __post_init__(self):
        if self.kind not in ("mimicry", "replica", "puppet"):
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if not 0.0 <= self.fidelity <= 1.0:
            raise ValueError(f"fidelity must be in [0, 1], got {self.fidelity}")


def _lerp_params(a: dict[str, float], b: dict[str, float], w: float,
                 keys: tuple[str, ...]) -> dict[str, float]:
    return {k: a[k] + w * (b[k] - a[k]) for k in keys}


def gen_attack(victim: UserProfile, attacker: UserProfile, spec: AttackSpec,
               rng: np.random.Generator, session_id: str = "attack",
               cap_noise: float = 0.25, impulse_amp: float = 2.0,
               rebound_frac: float = 0.8,
               replica_cov_inflate: tuple[float, float] = (1.1, 1.3),
               puppet_damping: tuple[float, float] = (0.5, 0.8),
               puppet_jerk_hz: tuple[float, float] = (2.0, 4.0),
               puppet_jerk_amp: float = 3.0) -> tuple[Session, dict]:
    """One attack session against the victim; meta.user_id names the victim
    (the claimed identity) and the sidecar records the attacker."""
    p = dict(victim.params)
    extra_accel = None
    if spec.kind == "mimicry":
        p.update({k: attacker.params[k] for k in _PHYSIO_KEYS})
        p.update(_lerp_params(attacker.params, victim.params, spec.fidelity,
                              _BEHAVIOR_KEYS))
        merged = _profile_from_params(attacker.user_id, p)
        base = session_params(merged, rng)
    elif spec.kind == "replica":
        p.update({k: attacker.params[k] for k in _BEHAVIOR_KEYS})
        merged = _profile_from_params(attacker.user_id, p)
        base = session_params(merged, rng)
        base["amp"] *= 1.0 - 0.2 * (1.0 - spec.fidelity)
        inflate = float(rng.uniform(*replica_cov_inflate))
        base["blob_sr"] *= math.sqrt(inflate)
        base["blob_sc"] *= math.sqrt(inflate)
    elif spec.kind == "puppet":
        merged = _profile_from_params(victim.user_id, p)
        base = session_params(merged, rng)
        base["peak_scale"] *= float(rng.uniform(*puppet_damping))
        for key in ("tremor_x", "tremor_y", "tremor_z"):
            base[key] = min(base[key] * 2.0, _CLIPS[key][1])
        t = np.arange(N_IMU_SAMPLES) / IMU_HZ
        f_j = float(rng.uniform(*puppet_jerk_hz))
        phase = float(rng.uniform(0, 2 * math.pi))
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        amp = puppet_jerk_amp * float(rng.uniform(0.7, 1.3))
        extra_accel = np.outer(amp * np.sin(2 * math.pi * f_j * t + phase), direction)
    else:  # pragma: no cover - AttackSpec validates
        raise ValueError(spec.kind)

    for key, value in base.items():
        lo, hi = _CLIPS[key]
        base[key] = min(max(value, lo), hi)

    session, truth = _gen_session_core(
        victim, rng, session_id=session_id, label=spec.kind,
        user_id=victim.user_id, cap_noise=cap_noise, impulse_amp=impulse_amp,
        rebound_frac=rebound_frac, extra_accel=extra_accel, param_override=base)
    truth["attacker_id"] = attacker.user_id
    truth["attack_kind"] = spec.kind
    truth["fidelity"] = spec.fidelity
    return session, truth


# --- profile (de)serialization ----------------------------------------------

def profile_to_dict(profile: UserProfile) -> dict:
    return {"user_id": profile.user_id,
            "params": {k: profile.params[k] for k in sorted(profile.params)}}


def profile_from_dict(data: dict) -> UserProfile:
    return _profile_from_params(data["user_id"], {k: float(v) for k, v in
                                                  data["params"].items()})
