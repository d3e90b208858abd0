"""Input validation helpers shared by the estimators."""

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import DimensionMismatchError


def check_matrix(X, n_features=None, name="X", min_samples=1):
    """Return ``X`` as a finite 2-D float64 array.

    Parameters
    ----------
    X : array-like of shape (n_samples, n_features)
    n_features : int, optional
        Expected number of columns. A mismatch raises
        :class:`DimensionMismatchError`.
    min_samples : int
        Minimum number of rows; ``0`` accepts empty input.
    """
    X = check_array(
        X,
        dtype=np.float64,
        ensure_2d=True,
        ensure_min_samples=min_samples,
        ensure_all_finite=True,
        input_name=name,
    )
    if n_features is not None and X.shape[1] != n_features:
        raise DimensionMismatchError(
            f"{name} has {X.shape[1]} features, expected {n_features}"
        )
    return X


def check_vector(v, n_features=None, name="v"):
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionMismatchError(f"{name} must be 1-D, got shape {v.shape}")
    if n_features is not None and v.shape[0] != n_features:
        raise DimensionMismatchError(
            f"{name} has dimension {v.shape[0]}, expected {n_features}"
        )
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite values")
    return v


def check_labels(y, n_samples, name="y"):
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != n_samples:
        raise DimensionMismatchError(
            f"{name} must have shape ({n_samples},), got {y.shape}"
        )
    return y


def population_covariance(X, mean=None):
    """Covariance with 1/N normalization."""
    if mean is None:
        mean = X.mean(axis=0)
    Xc = X - mean
    return Xc.T @ Xc / X.shape[0]


def symmetrize(A):
    return 0.5 * (A + A.T)
