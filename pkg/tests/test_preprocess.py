import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from aeda.datasets import EmbeddingSet
from aeda.exceptions import DimensionMismatchError
from aeda.preprocess import (LengthNormalizer, Whitener, WhiteningTransform, apply_whitener,
                             fit_whitener, length_normalize, preprocess_matrix)
from aeda.validation import population_covariance


def test_identity_case():
    # four points with mean 0 and 1/N covariance I
    X = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]])
    t = fit_whitener(X, ridge=0.0)
    np.testing.assert_allclose(t.mean, 0.0, atol=1e-10)
    np.testing.assert_allclose(t.transform, np.eye(2), atol=1e-10)


def test_hand_computed_2d():
    X = np.array([[2.0, 0.0], [-2.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    t = fit_whitener(X, ridge=0.0)
    np.testing.assert_allclose(population_covariance(X), np.diag([2.0, 0.5]))
    np.testing.assert_allclose(t.transform, np.diag([1 / math.sqrt(2), math.sqrt(2)]),
                               atol=1e-12)
    np.testing.assert_allclose(apply_whitener(t, [2.0, 0.0]), [math.sqrt(2), 0.0], atol=1e-12)


def test_apply_examples():
    t = WhiteningTransform(np.zeros(3), np.eye(3))
    v = np.array([0.3, -1.0, 2.0])
    np.testing.assert_array_equal(apply_whitener(t, v), v)
    t2 = WhiteningTransform(v, np.diag([2.0, 3.0, 4.0]))
    np.testing.assert_array_equal(apply_whitener(t2, v), np.zeros(3))
    with pytest.raises(DimensionMismatchError):
        apply_whitener(t, np.ones(2))


def test_transform_symmetric_pd(rng):
    X = rng.standard_normal((200, 5)) @ rng.standard_normal((5, 5))
    t = fit_whitener(X)
    np.testing.assert_array_equal(t.transform, t.transform.T)
    assert np.all(np.linalg.eigvalsh(t.transform) > 0)


@pytest.mark.parametrize("seed", range(5))
def test_whitened_covariance_is_identity(seed):
    r = np.random.default_rng(seed)
    X = r.standard_normal((500, 6)) @ r.standard_normal((6, 6)) + r.standard_normal(6)
    t = fit_whitener(X, ridge=0.0)
    Z = t.apply(X)
    np.testing.assert_allclose(Z.mean(0), 0.0, atol=1e-10)
    assert np.abs(population_covariance(Z) - np.eye(6)).max() < 1e-8


def test_rank_deficient_with_default_ridge(rng):
    X = rng.standard_normal((30, 3)) @ rng.standard_normal((3, 10))
    t = fit_whitener(X)
    Z = preprocess_matrix(t, X + rng.standard_normal((30, 10)))
    assert np.all(np.isfinite(Z))
    with pytest.raises(np.linalg.LinAlgError):
        fit_whitener(np.zeros((4, 3)), ridge=0.0)


def test_needs_two_vectors():
    with pytest.raises(ValueError):
        fit_whitener(np.ones((1, 3)))
    with pytest.raises(ValueError):
        fit_whitener(np.array([[np.inf, 0.0], [1.0, 1.0]]))


def test_accepts_embedding_set(rng):
    X = rng.standard_normal((10, 3))
    s = EmbeddingSet(X, [str(i) for i in range(10)])
    np.testing.assert_array_equal(fit_whitener(s).transform, fit_whitener(X).transform)


def test_serialization_round_trip(rng):
    t = fit_whitener(rng.standard_normal((20, 4)))
    back = WhiteningTransform.from_dict(t.to_dict())
    np.testing.assert_array_equal(back.transform, t.transform)
    np.testing.assert_array_equal(back.mean, t.mean)


class TestLengthNormalize:
    def test_examples(self):
        np.testing.assert_allclose(length_normalize([3.0, 4.0]), [0.6, 0.8])
        u = np.array([0.0, 1.0, 0.0])
        np.testing.assert_array_equal(length_normalize(u), u)
        with pytest.raises(ValueError):
            length_normalize([0.0, 0.0])
        with pytest.raises(ValueError):
            length_normalize([np.nan, 1.0])

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.float64, 4, elements=st.floats(-1e3, 1e3)),
           st.floats(1e-3, 1e3))
    def test_idempotent_and_scale_invariant(self, v, c):
        if np.linalg.norm(v) < 1e-6:
            return
        n = length_normalize(v)
        assert np.linalg.norm(n) == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(length_normalize(n), n, atol=1e-15)
        np.testing.assert_allclose(length_normalize(c * v), n, atol=1e-12)


def test_estimators(rng):
    X = rng.standard_normal((50, 4))
    w = Whitener(ridge=0.0).fit(X)
    np.testing.assert_allclose(population_covariance(w.transform(X)), np.eye(4), atol=1e-8)
    assert w.get_params() == {"ridge": 0.0}
    Z = LengthNormalizer().fit_transform(X)
    np.testing.assert_allclose(np.linalg.norm(Z, axis=1), 1.0)
