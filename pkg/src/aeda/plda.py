"""Two-covariance PLDA: training, log-likelihood-ratio scoring, interpolation.

The generative model is ``x = mu + y + e`` with ``y ~ N(0, AC)`` shared by all
vectors of a speaker and ``e ~ N(0, WC)`` drawn per vector.
"""

import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .datasets import EmbeddingSet
from .exceptions import ConfigError, DimensionMismatchError
from .validation import check_labels, check_matrix, check_vector, symmetrize

RIDGE_FACTOR = 1e-6


@dataclass(frozen=True, eq=False)
class PldaModel:
    mean: np.ndarray
    across_cov: np.ndarray
    within_cov: np.ndarray
    eigenvoice_rank: int
    degenerate_wc: bool = False

    @property
    def dimension(self):
        return self.mean.shape[0]

    @cached_property
    def _scoring_terms(self):
        B = self.across_cov
        T = B + self.within_cov
        try:
            np.linalg.cholesky(T)
            T_inv = np.linalg.inv(T)
            S = symmetrize(T - B @ T_inv @ B)
            np.linalg.cholesky(S)
        except np.linalg.LinAlgError:
            raise np.linalg.LinAlgError(
                "combined PLDA covariances are not positive definite") from None
        A = np.linalg.inv(S)
        Q = symmetrize(T_inv - A)
        P = symmetrize(T_inv @ B @ A)
        const = 0.5 * (np.linalg.slogdet(T)[1] - np.linalg.slogdet(S)[1])
        return Q, P, const

    def score_pairs(self, E, T):
        """Vectorized LLR for row-aligned enrollment/test matrices."""
        E = check_matrix(E, self.dimension, "enroll", min_samples=0) - self.mean
        T = check_matrix(T, self.dimension, "test", min_samples=0) - self.mean
        if E.shape != T.shape:
            raise DimensionMismatchError("enroll and test must have the same shape")
        Q, P, const = self._scoring_terms
        quad = 0.5 * (np.einsum("ij,jk,ik->i", E, Q, E) + np.einsum("ij,jk,ik->i", T, Q, T))
        # symmetrized cross term keeps score(e, t) == score(t, e) bit-exact
        cross = 0.5 * (np.einsum("ij,jk,ik->i", E, P, T) + np.einsum("ij,jk,ik->i", T, P, E))
        return quad + cross + const

    def to_dict(self):
        return {
            "mean": self.mean.tolist(),
            "across_cov": self.across_cov.tolist(),
            "within_cov": self.within_cov.tolist(),
            "eigenvoice_rank": self.eigenvoice_rank,
            "degenerate_wc": self.degenerate_wc,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["mean"], dtype=np.float64),
                   np.array(d["across_cov"], dtype=np.float64),
                   np.array(d["within_cov"], dtype=np.float64),
                   int(d["eigenvoice_rank"]), bool(d.get("degenerate_wc", False)))


def _truncate(S, rank):
    evals, Q = np.linalg.eigh(symmetrize(S))
    order = np.argsort(evals)[::-1][:rank]
    lam = np.maximum(evals[order], 0.0)
    V = Q[:, order]
    return symmetrize((V * lam) @ V.T)


def scatter_matrices(X, y):
    """Pooled within-speaker and count-weighted between-speaker scatter (1/N).

    Returns ``(mean, within, between, n_per_class)``.
    """
    classes, inv, counts = np.unique(y, return_inverse=True, return_counts=True)
    N, m = X.shape
    mean = X.mean(axis=0)
    class_means = np.zeros((classes.size, m))
    np.add.at(class_means, inv, X)
    class_means /= counts[:, None]
    R = X - class_means[inv]
    within = R.T @ R / N
    D = class_means - mean
    between = (D * counts[:, None]).T @ D / N
    return mean, symmetrize(within), symmetrize(between), counts


def train_plda(data, labels=None, rank=None):
    """Estimate a two-covariance PLDA model from labeled vectors.

    Parameters
    ----------
    data : EmbeddingSet or array of shape (n, m)
    labels : array-like, optional
        Speaker labels; taken from ``data`` when it is an EmbeddingSet.
    rank : int, optional
        Number of across-speaker eigen-components kept (default ``m``).

    Notes
    -----
    WC receives a ridge of ``1e-6 * trace(WC) / m``; AC is left unregularized
    so its rank stays bounded by ``rank``. When no speaker has two vectors
    the within scatter is identically zero; WC then falls back to the pooled
    residual about the global mean (the total covariance) plus the ridge,
    with ``degenerate_wc`` set.
    """
    if isinstance(data, EmbeddingSet):
        X = data.X
        if labels is None:
            labels = data.speaker_labels()
    else:
        X = data
    X = check_matrix(X, min_samples=2)
    if labels is None:
        raise ConfigError("speaker labels are required to train PLDA")
    y = check_labels(labels, X.shape[0])
    N, m = X.shape
    if rank is None:
        rank = m
    if not 1 <= int(rank) <= m:
        raise ConfigError(f"eigenvoice rank must lie in [1, {m}], got {rank}")
    mean, within, between, counts = scatter_matrices(X, y)
    if counts.size < 2:
        raise ConfigError("PLDA training needs at least two speakers")

    degenerate = bool(np.all(counts < 2))
    if degenerate:
        warnings.warn("no speaker has two or more vectors; within-speaker covariance "
                      "falls back to the ridged total covariance", RuntimeWarning,
                      stacklevel=2)
        total = within + between
        ridge = RIDGE_FACTOR * np.trace(total) / m
        wc = total + ridge * np.eye(m)
    else:
        ridge = RIDGE_FACTOR * np.trace(within) / m
        wc = within + ridge * np.eye(m)
    ac = between if rank == m else _truncate(between, rank)
    return PldaModel(mean, ac, wc, int(rank), degenerate)


def score_llr(model, enroll, test):
    """Same-speaker vs different-speaker log-likelihood ratio for one pair."""
    e = check_vector(enroll, model.dimension, "enroll")
    t = check_vector(test, model.dimension, "test")
    return float(model.score_pairs(e[None, :], t[None, :])[0])


def interpolate_covariances(in_model, out_model, alpha_wc, alpha_ac):
    """Convex combination of two PLDA models; alphas weight the in-domain model."""
    for name, a in (("alpha_wc", alpha_wc), ("alpha_ac", alpha_ac)):
        if not 0.0 <= a <= 1.0:
            raise ConfigError(f"{name} must lie in [0, 1], got {a}")
    if in_model.dimension != out_model.dimension:
        raise DimensionMismatchError("PLDA models differ in dimension")
    wc = alpha_wc * in_model.within_cov + (1 - alpha_wc) * out_model.within_cov
    ac = alpha_ac * in_model.across_cov + (1 - alpha_ac) * out_model.across_cov
    mean = alpha_wc * in_model.mean + (1 - alpha_wc) * out_model.mean
    rank = min(in_model.dimension, in_model.eigenvoice_rank + out_model.eigenvoice_rank)
    if alpha_ac == 0.0:
        rank = out_model.eigenvoice_rank
    elif alpha_ac == 1.0:
        rank = in_model.eigenvoice_rank
    return PldaModel(mean, symmetrize(ac), symmetrize(wc), rank,
                     in_model.degenerate_wc and out_model.degenerate_wc)


class TwoCovariancePLDA(BaseEstimator):
    """Estimator wrapper around :func:`train_plda`.

    Parameters
    ----------
    eigenvoice_rank : int or None
        Rank of the across-speaker covariance; ``None`` keeps all components.
    """

    def __init__(self, eigenvoice_rank=None):
        self.eigenvoice_rank = eigenvoice_rank

    def fit(self, X, y):
        X = check_matrix(X, min_samples=2)
        rank = None if self.eigenvoice_rank is None else min(self.eigenvoice_rank, X.shape[1])
        self.model_ = train_plda(X, y, rank)
        self.n_features_in_ = X.shape[1]
        return self

    @property
    def within_cov_(self):
        check_is_fitted(self, "model_")
        return self.model_.within_cov

    @property
    def across_cov_(self):
        check_is_fitted(self, "model_")
        return self.model_.across_cov

    def score_pairs(self, E, T):
        check_is_fitted(self, "model_")
        return self.model_.score_pairs(E, T)
