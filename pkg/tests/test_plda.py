import math
import warnings

import numpy as np
import pytest

from aeda.exceptions import ConfigError, DimensionMismatchError
from aeda.plda import (PldaModel, TwoCovariancePLDA, interpolate_covariances,
                       scatter_matrices, score_llr, train_plda)
from oracles import joint_density_llr


def random_spd(r, m, scale=1.0, ridge=0.1):
    A = r.standard_normal((m, m))
    return scale * (A @ A.T / m) + ridge * np.eye(m)


def test_one_dimensional_example():
    model = PldaModel(np.zeros(1), np.eye(1), np.eye(1), 1)
    assert score_llr(model, [0.0], [0.0]) == pytest.approx(math.log(math.sqrt(4 / 3)),
                                                           abs=1e-12)
    assert score_llr(model, [0.0], [0.0]) == pytest.approx(0.1438, abs=1e-4)


def test_zero_across_covariance_gives_zero():
    r = np.random.default_rng(0)
    model = PldaModel(np.zeros(3), np.zeros((3, 3)), random_spd(r, 3), 1)
    s = model.score_pairs(r.standard_normal((20, 3)), r.standard_normal((20, 3)))
    np.testing.assert_allclose(s, 0.0, atol=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_symmetry_is_exact(seed):
    r = np.random.default_rng(seed)
    m = 4
    model = PldaModel(r.standard_normal(m), random_spd(r, m), random_spd(r, m), m)
    E, T = r.standard_normal((10, m)), r.standard_normal((10, m))
    np.testing.assert_array_equal(model.score_pairs(E, T), model.score_pairs(T, E))


def test_dimension_checks():
    model = PldaModel(np.zeros(2), np.eye(2), np.eye(2), 2)
    with pytest.raises(DimensionMismatchError):
        score_llr(model, [0.0], [0.0, 1.0])
    bad = PldaModel(np.zeros(2), np.eye(2), -3 * np.eye(2), 2)
    with pytest.raises(np.linalg.LinAlgError):
        score_llr(bad, [0.0, 0.0], [0.0, 0.0])


def _generated(r, B, W, n_spk, n_sess):
    m = B.shape[0]
    y = r.multivariate_normal(np.zeros(m), B, size=n_spk)
    X = np.repeat(y, n_sess, axis=0) + r.multivariate_normal(np.zeros(m), W,
                                                             size=n_spk * n_sess)
    return X, np.repeat(np.arange(n_spk), n_sess)


def test_moment_matching():
    r = np.random.default_rng(3)
    B = np.diag([2.0, 1.0, 0.5])
    W = np.array([[1.0, 0.3, 0.0], [0.3, 0.8, 0.1], [0.0, 0.1, 0.6]])
    X, y = _generated(r, B, W, 200, 20)
    model = train_plda(X, y)
    rel = lambda A, ref: np.linalg.norm(A - ref) / np.linalg.norm(ref)
    assert rel(model.within_cov, W) < 0.1
    assert rel(model.across_cov, B) < 0.1


def test_single_session_fallback():
    r = np.random.default_rng(4)
    X = r.standard_normal((12, 3))
    with pytest.warns(RuntimeWarning):
        model = train_plda(X, np.arange(12))
    assert model.degenerate_wc
    assert np.all(np.linalg.eigvalsh(model.within_cov) > 0)
    total = np.cov(X.T, bias=True)
    np.testing.assert_allclose(model.within_cov, total + 1e-6 * np.trace(total) / 3 * np.eye(3))


def test_full_rank_has_no_truncation():
    r = np.random.default_rng(5)
    X, y = _generated(r, np.eye(4), 0.5 * np.eye(4), 30, 3)
    model = train_plda(X, y, rank=4)
    _, _, Sb, _ = scatter_matrices(X, y)
    assert np.abs(model.across_cov - Sb).max() < 1e-10


def test_rank_truncation():
    r = np.random.default_rng(6)
    X, y = _generated(r, np.eye(5), 0.5 * np.eye(5), 40, 3)
    model = train_plda(X, y, rank=2)
    evals = np.linalg.eigvalsh(model.across_cov)
    assert np.sum(evals > 1e-10) == 2
    assert np.all(evals > -1e-12)


def test_training_errors():
    X = np.ones((4, 2)) + np.arange(8).reshape(4, 2)
    with pytest.raises(ConfigError):
        train_plda(X, [0, 0, 0, 0])
    with pytest.raises(ConfigError):
        train_plda(X, [0, 0, 1, 1], rank=0)


def test_target_scores_exceed_nontarget():
    r = np.random.default_rng(7)
    X, y = _generated(r, np.eye(3), 0.3 * np.eye(3), 100, 4)
    model = train_plda(X, y)
    Xt, _ = _generated(r, np.eye(3), 0.3 * np.eye(3), 50, 2)
    tar = model.score_pairs(Xt[0::2], Xt[1::2])
    non = model.score_pairs(Xt[0::2], np.roll(Xt[1::2], 1, axis=0))
    assert tar.mean() > non.mean()


def test_separation_grows_with_across_trace():
    r = np.random.default_rng(8)
    W = 0.5 * np.eye(3)
    gaps = []
    for scale in (0.5, 1.0, 2.0, 4.0):
        B = scale * np.eye(3)
        model = PldaModel(np.zeros(3), B, W, 3)
        gap = []
        for s in range(5):
            rs = np.random.default_rng(100 + s)
            y = rs.multivariate_normal(np.zeros(3), B, size=400)
            e = y + rs.multivariate_normal(np.zeros(3), W, size=400)
            t = y + rs.multivariate_normal(np.zeros(3), W, size=400)
            gap.append(model.score_pairs(e, t).mean()
                       - model.score_pairs(e, np.roll(t, 1, axis=0)).mean())
        gaps.append(np.mean(gap))
    assert all(a < b for a, b in zip(gaps, gaps[1:]))


class TestInterpolation:
    def test_fixed_point_and_endpoint(self):
        r = np.random.default_rng(9)
        C = random_spd(r, 3)
        a = PldaModel(r.standard_normal(3), random_spd(r, 3), C, 3)
        b = PldaModel(r.standard_normal(3), random_spd(r, 3), C, 3)
        np.testing.assert_allclose(interpolate_covariances(a, b, 0.37, 0.5).within_cov, C)
        end = interpolate_covariances(a, b, 0.0, 0.0)
        np.testing.assert_array_equal(end.within_cov, b.within_cov)
        np.testing.assert_array_equal(end.across_cov, b.across_cov)

    def test_scalar_arithmetic(self):
        a = PldaModel(np.zeros(1), np.eye(1), 2 * np.eye(1), 1)
        b = PldaModel(np.zeros(1), np.eye(1), np.eye(1), 1)
        assert interpolate_covariances(a, b, 0.6, 0.3).within_cov[0, 0] == pytest.approx(1.6)

    def test_convexity_of_spectrum(self):
        r = np.random.default_rng(10)
        for _ in range(20):
            wa, wb = random_spd(r, 4), random_spd(r, 4)
            a = PldaModel(np.zeros(4), np.eye(4), wa, 4)
            b = PldaModel(np.zeros(4), np.eye(4), wb, 4)
            ev = np.linalg.eigvalsh(interpolate_covariances(a, b, r.uniform(), 0.5).within_cov)
            lo = min(np.linalg.eigvalsh(wa).min(), np.linalg.eigvalsh(wb).min())
            hi = max(np.linalg.eigvalsh(wa).max(), np.linalg.eigvalsh(wb).max())
            assert lo - 1e-12 <= ev.min() and ev.max() <= hi + 1e-12

    def test_alpha_range(self):
        a = PldaModel(np.zeros(1), np.eye(1), np.eye(1), 1)
        with pytest.raises(ConfigError):
            interpolate_covariances(a, a, 1.2, 0.3)


def test_joint_gaussian_oracle_quick():
    r = np.random.default_rng(11)
    for m in (1, 2, 3):
        model = PldaModel(r.standard_normal(m), random_spd(r, m), random_spd(r, m), m)
        e, t = r.standard_normal(m), r.standard_normal(m)
        assert score_llr(model, e, t) == pytest.approx(joint_density_llr(model.mean, model.across_cov, model.within_cov, e, t),
                                                       abs=1e-9)


def test_serialization_and_estimator():
    r = np.random.default_rng(12)
    X, y = _generated(r, np.eye(3), 0.4 * np.eye(3), 20, 3)
    est = TwoCovariancePLDA(eigenvoice_rank=2).fit(X, y)
    back = PldaModel.from_dict(est.model_.to_dict())
    np.testing.assert_array_equal(back.score_pairs(X[:5], X[5:10]),
                                  est.score_pairs(X[:5], X[5:10]))
    assert est.get_params() == {"eigenvoice_rank": 2}
    assert est.within_cov_.shape == (3, 3)
