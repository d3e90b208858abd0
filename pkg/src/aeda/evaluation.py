"""Trial scoring and detection metrics, plus LDA projections and speaker variability.

Operating points
----------------
For a threshold ``tau`` a trial is accepted when ``score >= tau``. The
operating points considered are every distinct score plus ``+inf`` (reject
all), so the lowest score gives accept-all::

    P_miss(tau) = #{targets < tau} / n_target
    P_fa(tau)   = #{nontargets >= tau} / n_nontarget

The EER is read where ``P_miss - P_fa`` changes sign, linearly interpolating
between the two adjacent operating points when they do not meet exactly.
"""

import csv
import io
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .datasets import EmbeddingSet
from .exceptions import ConfigError
from .plda import scatter_matrices
from .preprocess import preprocess_matrix
from .validation import check_labels, check_matrix, symmetrize


@dataclass(frozen=True)
class DcfParams:
    """Detection cost parameters.

    The defaults of :data:`DCF08` and :data:`DCF10` follow the NIST SRE 2008
    and 2010 evaluation plans.
    """

    p_target: float
    c_miss: float = 1.0
    c_fa: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.p_target < 1.0:
            raise ConfigError("p_target must lie in (0, 1)")
        if not (self.c_miss > 0 and self.c_fa > 0):
            raise ConfigError("costs must be positive")

    @property
    def default_cost(self):
        return min(self.c_miss * self.p_target, self.c_fa * (1.0 - self.p_target))


DCF08 = DcfParams(p_target=0.01, c_miss=10.0, c_fa=1.0)
DCF10 = DcfParams(p_target=0.001, c_miss=1.0, c_fa=1.0)


@dataclass(frozen=True)
class ScoreReport:
    eer: float
    min_dcf_08: float
    min_dcf_10: float
    n_target: int
    n_nontarget: int
    threshold_at_eer: float
    threshold_dcf_08: float = float("nan")
    threshold_dcf_10: float = float("nan")

    def to_dict(self):
        return {
            "eer": self.eer,
            "min_dcf_08": self.min_dcf_08,
            "min_dcf_10": self.min_dcf_10,
            "counts": {"target": self.n_target, "nontarget": self.n_nontarget},
            "thresholds": {"eer": self.threshold_at_eer, "dcf_08": self.threshold_dcf_08,
                           "dcf_10": self.threshold_dcf_10},
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["eer"], d["min_dcf_08"], d["min_dcf_10"], d["counts"]["target"],
                   d["counts"]["nontarget"], d["thresholds"]["eer"],
                   d["thresholds"]["dcf_08"], d["thresholds"]["dcf_10"])


def _split(scores, targets):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    targets = np.asarray(targets, dtype=bool).ravel()
    if scores.shape != targets.shape:
        raise ValueError("scores and targets differ in length")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    tar, non = scores[targets], scores[~targets]
    if tar.size == 0 or non.size == 0:
        raise ValueError("metrics need at least one target and one nontarget trial")
    return np.sort(tar), np.sort(non)


def operating_points(scores, targets):
    """Thresholds with their miss and false-alarm rates, thresholds ascending."""
    tar, non = _split(scores, targets)
    tau = np.append(np.unique(np.concatenate([tar, non])), np.inf)
    p_miss = np.searchsorted(tar, tau, side="left") / tar.size
    p_fa = (non.size - np.searchsorted(non, tau, side="left")) / non.size
    return tau, p_miss, p_fa


def eer_from_operating_points(tau, p_miss, p_fa):
    d = p_miss - p_fa
    i = int(np.argmax(d >= 0))
    if d[i] == 0:
        return float(p_miss[i]), float(tau[i])
    a, b = i - 1, i
    s = -d[a] / (d[b] - d[a])
    eer = p_miss[a] + s * (p_miss[b] - p_miss[a])
    thr = tau[a] if not np.isfinite(tau[b]) else tau[a] + s * (tau[b] - tau[a])
    return float(eer), float(thr)


def compute_eer(scores, targets):
    """Equal error rate and the threshold where it is attained."""
    return eer_from_operating_points(*operating_points(scores, targets))


def dcf_from_operating_points(tau, p_miss, p_fa, params):
    cost = (params.c_miss * params.p_target * p_miss
            + params.c_fa * (1.0 - params.p_target) * p_fa) / params.default_cost
    i = int(np.argmin(cost))
    return float(cost[i]), float(tau[i])


def compute_min_dcf(scores, targets, params=DCF08):
    """Normalized minimum detection cost and its threshold."""
    return dcf_from_operating_points(*operating_points(scores, targets), params)


def score_report(scores, targets, dcf08=DCF08, dcf10=DCF10):
    pts = operating_points(scores, targets)
    eer, thr = eer_from_operating_points(*pts)
    d8, t8 = dcf_from_operating_points(*pts, dcf08)
    d10, t10 = dcf_from_operating_points(*pts, dcf10)
    t = np.asarray(targets, dtype=bool)
    return ScoreReport(eer, d8, d10, int(t.sum()), int((~t).sum()), thr, t8, t10)


def score_trials(model, eset, trials, whitener=None):
    """LLR for every trial, in trial order.

    With ``whitener`` the vectors are whitened and length-normalized first;
    otherwise ``eset`` is taken as already preprocessed.
    """
    if len(trials) == 0:
        return np.zeros(0)
    ie = eset.index_of(trials.enroll_ids)
    it = eset.index_of(trials.test_ids)
    X = eset.X if whitener is None else preprocess_matrix(whitener, eset.X)
    return model.score_pairs(X[ie], X[it])


# -- LDA and variability -----------------------------------------------------

def _fix_signs(V):
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


class FisherLDA(TransformerMixin, BaseEstimator):
    """Fisher discriminant projection from the generalized eigenproblem
    ``S_b v = lambda (S_w + ridge I) v``.

    Parameters
    ----------
    n_components : int
        Requested output dimension; clipped to ``min(m, n_classes - 1)`` with
        a warning (``clipped_`` is then True).
    ridge_factor : float
        Ridge is ``ridge_factor * trace(S_w) / m``.

    Attributes
    ----------
    scalings_ : ndarray of shape (n_features, n_components_)
        Columns are orthonormal under ``S_w + ridge I`` with the
        largest-magnitude entry of each positive.
    """

    def __init__(self, n_components=2, ridge_factor=1e-8):
        self.n_components = n_components
        self.ridge_factor = ridge_factor

    def fit(self, X, y):
        X = check_matrix(X, min_samples=2)
        y = check_labels(y, X.shape[0])
        m = X.shape[1]
        mean, Sw, Sb, counts = scatter_matrices(X, y)
        if counts.size < 2:
            raise ConfigError("LDA needs at least two classes")
        limit = min(m, counts.size - 1)
        k = int(self.n_components)
        if k < 1:
            raise ConfigError("n_components must be >= 1")
        self.clipped_ = k > limit
        if self.clipped_:
            warnings.warn(f"n_components={k} clipped to {limit}", RuntimeWarning, stacklevel=2)
            k = limit
        scale = np.trace(Sw) or np.trace(Sb) or 1.0
        self.ridge_ = self.ridge_factor * scale / m
        Sw_r = Sw + self.ridge_ * np.eye(m)
        evals, V = scipy.linalg.eigh(Sb, Sw_r)
        order = np.argsort(evals)[::-1][:k]
        self.explained_ = evals[order]
        self.scalings_ = _fix_signs(V[:, order])
        self.mean_ = mean
        self.within_scatter_ = Sw_r
        self.n_components_ = k
        self.n_features_in_ = m
        return self

    def transform(self, X):
        check_is_fitted(self, "scalings_")
        X = check_matrix(X, self.n_features_in_, min_samples=0)
        return (X - self.mean_) @ self.scalings_


def fit_lda(eset, out_dim):
    """Projection matrix (m x out_dim) of a Fisher LDA fitted on ``eset``."""
    return FisherLDA(out_dim).fit(eset.X, eset.speaker_labels()).scalings_


@dataclass(frozen=True)
class VariabilityStats:
    within_trace: float
    across_trace: float
    ratio: float

    def to_dict(self):
        return asdict(self)


def variability_stats(data, labels=None):
    """Traces of pooled within-speaker and between-speaker scatter, and their ratio."""
    if isinstance(data, EmbeddingSet):
        X, labels = data.X, data.speaker_labels()
    else:
        X = data
    X = check_matrix(X)
    labels = check_labels(labels, X.shape[0])
    _, Sw, Sb, _ = scatter_matrices(X, labels)
    w, a = float(np.trace(Sw)), float(np.trace(Sb))
    ratio = a / w if w > 0 else (np.inf if a > 0 else float("nan"))
    return VariabilityStats(w, a, float(ratio))


def export_projection_plot_data(eset, lda, n_speakers=5, dims=2):
    """CSV rows ``id,speaker,coord1..coordD`` for the first ``n_speakers`` speakers.

    Speakers are taken in order of first appearance in ``eset``. ``lda`` is a
    fitted :class:`FisherLDA` or an ``(m, d)`` projection matrix.
    """
    labels = eset.speaker_labels()
    chosen = set(list(dict.fromkeys(labels))[:n_speakers])
    idx = [i for i, s in enumerate(labels) if s in chosen]
    if isinstance(lda, FisherLDA):
        if dims > lda.n_components_:
            raise ConfigError(f"LDA has only {lda.n_components_} components")
        Z = lda.transform(eset.X[idx])[:, :dims]
    else:
        P = np.asarray(lda, dtype=np.float64)
        if dims > P.shape[1]:
            raise ConfigError(f"projection has only {P.shape[1]} columns")
        Z = eset.X[idx] @ P[:, :dims]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "speaker"] + [f"coord{d + 1}" for d in range(dims)])
    for row, i in enumerate(idx):
        w.writerow([eset.ids[i], labels[i]] + [repr(float(v)) for v in Z[row]])
    return buf.getvalue()
