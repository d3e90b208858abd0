"""Whitening and length normalization applied ahead of PLDA scoring."""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .datasets import EmbeddingSet
from .exceptions import ConfigError
from .validation import check_matrix, check_vector, population_covariance, symmetrize

DEFAULT_RIDGE_FACTOR = 1e-6


@dataclass(frozen=True)
class WhiteningTransform:
    """Affine map ``v -> transform @ (v - mean)``."""

    mean: np.ndarray
    transform: np.ndarray

    @property
    def dimension(self):
        return self.mean.shape[0]

    def apply(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            v = check_vector(X, self.dimension)
            return self.transform @ (v - self.mean)
        X = check_matrix(X, self.dimension, min_samples=0)
        return (X - self.mean) @ self.transform.T

    def to_dict(self):
        return {"mean": self.mean.tolist(), "transform": self.transform.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["mean"], dtype=np.float64),
                   np.array(d["transform"], dtype=np.float64))


def _fix_signs(Q):
    idx = np.argmax(np.abs(Q), axis=0)
    signs = np.sign(Q[idx, np.arange(Q.shape[1])])
    signs[signs == 0] = 1.0
    return Q * signs


def inverse_sqrt_psd(S, ridge):
    """``(S + ridge I)^(-1/2)`` by symmetric eigendecomposition."""
    evals, Q = np.linalg.eigh(symmetrize(S))
    Q = _fix_signs(Q)
    evals = np.maximum(evals, 0.0) + ridge
    if np.any(evals <= 0):
        raise np.linalg.LinAlgError(
            "covariance is singular; use a positive ridge")
    return symmetrize((Q / np.sqrt(evals)) @ Q.T)


def fit_whitener(data, ridge=None):
    """Fit a ZCA whitener on an :class:`EmbeddingSet` or an ``(n, m)`` array.

    The covariance uses 1/N normalization. ``ridge=None`` selects
    ``1e-6 * trace(cov) / m``.
    """
    X = data.X if isinstance(data, EmbeddingSet) else data
    X = check_matrix(X, min_samples=2)
    mean = X.mean(axis=0)
    cov = population_covariance(X, mean)
    if ridge is None:
        ridge = DEFAULT_RIDGE_FACTOR * np.trace(cov) / X.shape[1]
    if ridge < 0:
        raise ConfigError("ridge must be >= 0")
    return WhiteningTransform(mean, inverse_sqrt_psd(cov, ridge))


def apply_whitener(t, v):
    return t.apply(v)


def length_normalize(v):
    """Scale a vector (or each row of a matrix) to unit Euclidean norm."""
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("cannot length-normalize non-finite values")
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("cannot length-normalize a zero vector")
    return v / norms


class Whitener(TransformerMixin, BaseEstimator):
    """Symmetric (ZCA) whitening estimator.

    Parameters
    ----------
    ridge : float or None
        Added to every covariance eigenvalue before the inverse square root.
        ``None`` selects ``1e-6 * trace(cov) / n_features``.

    Attributes
    ----------
    whitener_ : WhiteningTransform
    """

    def __init__(self, ridge=None):
        self.ridge = ridge

    def fit(self, X, y=None):
        self.whitener_ = fit_whitener(X, self.ridge)
        self.n_features_in_ = self.whitener_.dimension
        return self

    def transform(self, X):
        check_is_fitted(self, "whitener_")
        return self.whitener_.apply(check_matrix(X, self.n_features_in_, min_samples=0))


class LengthNormalizer(TransformerMixin, BaseEstimator):
    """Stateless row-wise projection onto the unit sphere."""

    def fit(self, X, y=None):
        self.n_features_in_ = check_matrix(X, min_samples=0).shape[1]
        return self

    def transform(self, X):
        return length_normalize(check_matrix(X, min_samples=0))

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.requires_fit = False
        return tags


def preprocess_matrix(whitener, X):
    """Whiten then length-normalize, the fixed ordering used before PLDA."""
    return length_normalize(whitener.apply(X))
