import math

import numpy as np
import pytest

from touchauth.metrics import (
    Confusion,
    eer,
    eer_threshold,
    project_2d,
    rates,
    roc,
    score_histogram,
)


# --- rates ---------------------------------------------------------------

def test_rates_perfect():
    r = rates(Confusion(ta=50, tr=50, fa=0, fr=0))
    assert (r.far, r.frr, r.accuracy, r.bac) == (0.0, 0.0, 1.0, 1.0)
    assert r.undefined == ()


def test_rates_inverted():
    r = rates(Confusion(ta=0, tr=0, fa=10, fr=10))
    assert (r.far, r.frr, r.accuracy, r.bac) == (1.0, 1.0, 0.0, 0.0)


def test_rates_mixed():
    r = rates(Confusion(ta=90, fr=10, tr=80, fa=20))
    assert r.far == pytest.approx(0.2)
    assert r.frr == pytest.approx(0.1)
    assert r.accuracy == pytest.approx(0.85)
    assert r.bac == pytest.approx(0.85)


def test_rates_undefined_flagged():
    r = rates(Confusion(ta=0, tr=0, fa=0, fr=0))
    assert math.isnan(r.far) and math.isnan(r.frr)
    assert set(r.undefined) == {"far", "frr", "accuracy", "bac"}


def test_rates_negative_counts_rejected():
    with pytest.raises(ValueError):
        Confusion(ta=-1, tr=0, fa=0, fr=0)


def test_bac_identity():
    rng = np.random.default_rng(0)
    for _ in range(50):
        c = Confusion(*(int(x) for x in rng.integers(1, 200, size=4)))
        r = rates(c)
        assert r.bac == pytest.approx(1.0 - 0.5 * (r.far + r.frr))


# --- ROC --------------------------------------------------------------------

def test_roc_separable_has_perfect_point():
    curve = roc([0.9, 0.8], [0.1, 0.2])
    perfect = np.any((curve.far == 0.0) & (curve.frr == 0.0))
    assert perfect


def test_roc_identical_distributions_lie_on_diagonal():
    scores = np.arange(50) / 50.0
    curve = roc(scores, scores)
    # at every threshold FAR = fraction >= t and 1 - FRR = fraction >= t
    assert np.allclose(curve.far, 1.0 - curve.frr)


def test_roc_matches_counting_oracle():
    rng = np.random.default_rng(1)
    g = rng.normal(1.0, 1.0, size=500)
    i = rng.normal(-1.0, 1.0, size=500)
    curve = roc(g, i)
    for t_idx in range(len(curve.thresholds)):
        t = curve.thresholds[t_idx]
        far = np.sum(i >= t) / len(i)
        frr = np.sum(g < t) / len(g)
        assert curve.far[t_idx] == far
        assert curve.frr[t_idx] == frr


def test_roc_monotone():
    rng = np.random.default_rng(2)
    curve = roc(rng.normal(size=300), rng.normal(size=300))
    assert np.all(np.diff(curve.far) <= 0)
    assert np.all(np.diff(curve.frr) >= 0)


def test_roc_rejects_empty():
    with pytest.raises(ValueError):
        roc([], [1.0])


# --- EER ------------------------------------------------------------------------

def test_eer_separable_zero():
    assert eer(roc([2.0, 3.0], [0.0, 1.0])) == 0.0


def test_eer_identical_distributions_half():
    rng = np.random.default_rng(3)
    scores = rng.normal(size=1000)
    value = eer(roc(scores, scores.copy()))
    assert abs(value - 0.5) < 0.05


def test_eer_all_equal_scores():
    assert eer(roc([1.0, 1.0], [1.0, 1.0])) == pytest.approx(0.5)


def test_eer_gaussian_calibration():
    def phi(x):
        return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))
    rng = np.random.default_rng(4)
    for d_prime in (1.0, 2.0, 3.0):
        g = rng.normal(d_prime, 1.0, size=10000)
        i = rng.normal(0.0, 1.0, size=10000)
        measured = eer(roc(g, i))
        assert abs(measured - phi(-d_prime / 2.0)) < 0.01


def test_eer_bounds_and_invariance():
    rng = np.random.default_rng(5)
    g = rng.normal(1.0, 1.0, size=400)
    i = rng.normal(0.0, 1.0, size=400)
    base = eer(roc(g, i))
    assert 0.0 <= base <= 1.0
    transformed = eer(roc(np.exp(g), np.exp(i)))  # strictly increasing map
    assert transformed == pytest.approx(base, abs=1e-12)


def test_eer_threshold_is_finite():
    rng = np.random.default_rng(6)
    curve = roc(rng.normal(1, 1, 200), rng.normal(0, 1, 200))
    assert np.isfinite(eer_threshold(curve))


# --- histograms -------------------------------------------------------------------

def test_histogram_single_occupied_bin():
    table = score_histogram([2.0, 2.0, 2.0], [2.0, 2.0], bins=10)
    assert table.genuine_counts.sum() == 3
    assert table.impostor_counts.sum() == 2
    assert np.count_nonzero(table.genuine_counts) == 1


def test_histogram_conservation():
    rng = np.random.default_rng(7)
    g = rng.normal(size=137)
    i = rng.normal(size=79)
    table = score_histogram(g, i, bins=20)
    assert table.genuine_counts.sum() == 137
    assert table.impostor_counts.sum() == 79


def test_histogram_disjoint_ranges():
    table = score_histogram(np.linspace(10, 11, 50), np.linspace(0, 1, 50), bins=20)
    overlap = (table.genuine_counts > 0) & (table.impostor_counts > 0)
    assert not overlap.any()


# --- 2-D projection -----------------------------------------------------------------

def test_projection_recovers_planar_data():
    rng = np.random.default_rng(8)
    basis = np.linalg.qr(rng.normal(size=(320, 2)))[0]
    coeffs = rng.normal(size=(200, 2)) * [3.0, 1.5]
    X = coeffs @ basis.T
    result = project_2d(X)
    total_var = X.var(axis=0).sum()
    captured = result.coords.var(axis=0).sum()
    assert captured / total_var > 0.999
    assert not result.rank_deficient


def test_projection_eigenvalues_match_eigh_oracle():
    rng = np.random.default_rng(9)
    X = rng.normal(0.0, 2.0, size=(320, 40))
    result = project_2d(X)
    C = np.cov(X.T)
    top2 = np.sort(np.linalg.eigvalsh(C))[-2:][::-1]
    assert result.eigenvalues[0] == pytest.approx(top2[0], rel=1e-6)
    assert result.eigenvalues[1] == pytest.approx(top2[1], rel=1e-6)
    # isotropic data: top eigenvalues within 10% of the generating variance
    # is not guaranteed at this n, but the oracle match is exact; check the
    # looser theoretical band on a larger sample instead
    X2 = rng.normal(0.0, 2.0, size=(4000, 10))
    r2 = project_2d(X2)
    assert abs(r2.eigenvalues[0] - 4.0) / 4.0 < 0.10
    assert abs(r2.eigenvalues[1] - 4.0) / 4.0 < 0.10


def test_projection_duplication_invariance():
    rng = np.random.default_rng(10)
    X = rng.normal(size=(50, 8))
    doubled = np.concatenate([X, X])
    result = project_2d(doubled)
    assert np.allclose(result.coords[:50], result.coords[50:])


def test_projection_rank_deficient_flag():
    rng = np.random.default_rng(11)
    direction = rng.normal(size=16)
    X = np.outer(rng.normal(size=30), direction)
    result = project_2d(X)
    assert result.rank_deficient
    assert np.all(result.coords[:, 1] == 0.0)


def test_projection_needs_three_points():
    with pytest.raises(ValueError):
        project_2d(np.zeros((2, 5)))
