import numpy as np
import pytest

from touchauth import session_io, synth
from touchauth.augment import (
    AugmentConfig,
    adaptive_noise,
    augment_dataset,
    noise_sigma,
    reference_amplitude,
    time_warp,
)
from touchauth.capsense import CapSequence

META = session_io.SessionMeta(session_id="s", user_id="u", label="genuine")


def seq_from(frames):
    return CapSequence(frames=np.asarray(frames, dtype=float), meta=META)


def test_config_validation():
    with pytest.raises(ValueError):
        AugmentConfig(warp_factor=1.2)
    with pytest.raises(ValueError):
        AugmentConfig(base_sigma=0.1, min_sigma=0.5)
    with pytest.raises(ValueError):
        AugmentConfig(a_nominal=0.0)


# --- time warping ------------------------------------------------------------

def test_warp_factor_zero_is_identity():
    rng = np.random.default_rng(0)
    frames = rng.normal(size=(16, 27, 15))
    out = time_warp(seq_from(frames), AugmentConfig(warp_factor=0.0),
                    np.random.default_rng(1))
    assert np.abs(out.frames - frames).max() < 1e-9


def test_warp_constant_sequence_unchanged():
    frames = np.full((16, 27, 15), 6.5)
    for seed in range(5):
        out = time_warp(seq_from(frames), AugmentConfig(warp_factor=0.1),
                        np.random.default_rng(seed))
        assert np.abs(out.frames - 6.5).max() < 1e-9


def test_warp_preserves_linear_ramp():
    # per-cell linear-in-time signals survive the warp with fixed endpoints
    t = np.arange(16, dtype=float)
    frames = np.zeros((16, 27, 15))
    frames[:, 5, 7] = 2.0 + 3.0 * t
    frames[:, 1, 1] = -1.0 * t
    seen_nontrivial = False
    for seed in range(10):
        rng = np.random.default_rng(seed)
        rate = float(np.random.default_rng(seed).uniform(0.9, 1.1))
        out = time_warp(seq_from(frames), AugmentConfig(warp_factor=0.1), rng)
        assert np.abs(out.frames[:, 5, 7] - frames[:, 5, 7]).max() < 1e-6
        assert np.abs(out.frames[:, 1, 1] - frames[:, 1, 1]).max() < 1e-6
        seen_nontrivial |= abs(rate - 1.0) > 0.02
    assert seen_nontrivial


def test_warp_shape_preserved():
    rng = np.random.default_rng(2)
    frames = rng.normal(size=(16, 27, 15))
    out = time_warp(seq_from(frames), AugmentConfig(warp_factor=0.1),
                    np.random.default_rng(3))
    assert out.frames.shape == frames.shape


# --- adaptive noise ------------------------------------------------------------

def test_reference_amplitude_zero_frame():
    assert reference_amplitude(np.zeros((27, 15))) == 0.0


def test_sigma_floor_on_zero_frame():
    cfg = AugmentConfig()
    assert noise_sigma(np.zeros((27, 15)), cfg) == pytest.approx(0.1)


def test_sigma_at_nominal_amplitude_is_base():
    # central block equal to the calibration amplitude -> sigma = base_sigma
    frame = np.zeros((27, 15))
    frame[12:15, 6:9] = 50.0
    cfg = AugmentConfig()
    assert noise_sigma(frame, cfg) == pytest.approx(0.5)


def test_sigma_from_nonzero_median():
    # central block {0,0,0,0,10,20,30,0,0}: nonzero median 20 -> sigma 0.2
    frame = np.zeros((27, 15))
    frame[13, 6] = 10.0
    frame[13, 7] = 20.0
    frame[13, 8] = 30.0
    cfg = AugmentConfig()
    assert reference_amplitude(frame) == pytest.approx(20.0)
    assert noise_sigma(frame, cfg) == pytest.approx(0.2)


def test_empirical_noise_level_before_clamping():
    cfg = AugmentConfig()
    rng = np.random.default_rng(4)
    sigma = noise_sigma(np.zeros((27, 15)), cfg)
    samples = np.empty(10000)
    frame = np.zeros((4, 4))
    for i in range(10000):
        samples[i] = adaptive_noise(frame, cfg, rng, clamp=False)[0, 0]
    assert sigma * 0.97 <= samples.std() <= sigma * 1.03


def test_noise_clamped_non_negative():
    cfg = AugmentConfig()
    rng = np.random.default_rng(5)
    out = adaptive_noise(np.zeros((27, 15)), cfg, rng)
    assert (out >= 0).all()


# --- dataset augmentation --------------------------------------------------------

def _sessions(n=10, users=2):
    out = []
    for i in range(n):
        profile = synth.gen_user(200 + i % users, user_id=f"u{i % users}")
        session, _ = synth.gen_session(profile, np.random.default_rng(i),
                                       session_id=f"s{i:03d}")
        out.append(session)
    return out


def test_n_aug_zero_returns_originals():
    sessions = _sessions(4)
    out = augment_dataset(sessions, AugmentConfig(n_aug=0), seed=0)
    assert out == sessions


def test_same_seed_identical_outputs():
    sessions = _sessions(4)
    a = augment_dataset(sessions, AugmentConfig(n_aug=2), seed=7)
    b = augment_dataset(sessions, AugmentConfig(n_aug=2), seed=7)
    assert a == b


def test_counts_and_labels_preserved():
    sessions = _sessions(10, users=2)
    out = augment_dataset(sessions, AugmentConfig(n_aug=2), seed=0)
    assert len(out) == 30
    per_user = {}
    for s in out:
        per_user[s.meta.user_id] = per_user.get(s.meta.user_id, 0) + 1
        assert s.meta.label == "genuine"
    assert per_user == {"u0": 15, "u1": 15}


def test_augmented_sessions_stay_valid():
    sessions = _sessions(3)
    out = augment_dataset(sessions, AugmentConfig(n_aug=1), seed=1)
    for s in out:
        assert session_io.validate_session(s) == []
        assert s.cap[0].values.shape == (27, 15)
