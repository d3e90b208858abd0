"""In-domain dictionaries and sparse reconstruction of pseudo in-domain targets.

Each target ``y`` is coded against the dictionary ``Omega`` (atoms as columns)
by minimizing::

    ||Omega @ alpha - y||^2 + gamma * P(alpha)

with ``P`` either ``||alpha||_1`` (least-angle regression with the lasso
modification) or ``||alpha||_2^2`` (closed form). Reconstructions are
``Omega @ A`` for the stacked codes ``A``.
"""

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg

from .datasets import EmbeddingSet, derived_rng
from .exceptions import ConfigError, ConvergenceError, DimensionMismatchError
from .validation import check_matrix, check_vector

PENALTIES = ("l1", "l2")


@dataclass(frozen=True, eq=False)
class Dictionary:
    atoms: np.ndarray
    gamma: float
    atom_ids: tuple = ()

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=np.float64)
        if atoms.ndim != 2 or atoms.shape[1] < 1:
            raise DimensionMismatchError("atoms must be an (m, K) matrix with K >= 1")
        if not np.all(np.isfinite(atoms)):
            raise ValueError("atoms must be finite")
        if not self.gamma > 0:
            raise ConfigError("gamma must be > 0")
        ids = tuple(self.atom_ids) or tuple(str(k) for k in range(atoms.shape[1]))
        if len(ids) != atoms.shape[1] or len(set(ids)) != len(ids):
            raise ConfigError("atom_ids must be distinct, one per atom")
        atoms = atoms.copy()
        atoms.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "atom_ids", ids)
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def dimension(self):
        return self.atoms.shape[0]

    @property
    def n_atoms(self):
        return self.atoms.shape[1]

    @cached_property
    def gram(self):
        return self.atoms.T @ self.atoms

    def to_dict(self):
        return {"atoms": self.atoms.tolist(), "gamma": self.gamma,
                "atom_ids": list(self.atom_ids)}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["atoms"], dtype=np.float64), d["gamma"], tuple(d["atom_ids"]))


def build_dictionary(in_set, k, seed, gamma=0.01):
    """Sample ``k`` in-domain vectors uniformly without replacement as atoms."""
    n = len(in_set)
    if not 1 <= k <= n:
        raise ConfigError(f"dictionary size must lie in [1, {n}], got {k}")
    rng = derived_rng(seed, "dictionary")
    idx = np.sort(rng.choice(n, size=k, replace=False))
    return Dictionary(in_set.X[idx].T, gamma, tuple(in_set.ids[i] for i in idx))


def lasso_lars(G, c0, lam, max_iter=None):
    """Solve ``min 0.5 a'Ga - c0'a + lam ||a||_1`` by the LARS-lasso homotopy.

    ``G`` is the Gram matrix of the atoms and ``c0`` their correlations with
    the target. The path starts at ``a = 0`` and follows the piecewise linear
    solution as the penalty decreases to ``lam``.
    """
    K = c0.shape[0]
    if max_iter is None:
        max_iter = 20 * K + 100
    alpha = np.zeros(K)
    c = c0.copy()
    lam_now = float(np.max(np.abs(c))) if K else 0.0
    if lam_now <= lam:
        return alpha
    j = int(np.argmax(np.abs(c)))
    active = [j]
    signs = [np.sign(c[j])]
    inactive = np.ones(K, dtype=bool)
    inactive[j] = False
    banned = -1
    eps = 1e-13 * max(lam_now, 1.0)

    for _ in range(max_iter):
        A = np.array(active)
        s = np.array(signs)
        try:
            w = np.linalg.solve(G[np.ix_(A, A)], s)
        except np.linalg.LinAlgError:
            w = np.linalg.lstsq(G[np.ix_(A, A)], s, rcond=None)[0]
        a = G[:, A] @ w

        t_end = lam_now - lam
        t_add, j_add = np.inf, -1
        cand = inactive.copy()
        if banned >= 0:
            cand[banned] = False
        if cand.any():
            idx = np.flatnonzero(cand)
            with np.errstate(divide="ignore", invalid="ignore"):
                t1 = (lam_now - c[idx]) / (1.0 - a[idx])
                t2 = (lam_now + c[idx]) / (1.0 + a[idx])
            t1[~(t1 > eps)] = np.inf
            t2[~(t2 > eps)] = np.inf
            tt = np.minimum(t1, t2)
            pos = int(np.argmin(tt))
            t_add, j_add = tt[pos], int(idx[pos])

        with np.errstate(divide="ignore", invalid="ignore"):
            td = -alpha[A] / w
        td[~(td > eps)] = np.inf
        pos_drop = int(np.argmin(td)) if td.size else -1
        t_drop = td[pos_drop] if td.size else np.inf

        t = min(t_end, t_add, t_drop)
        alpha[A] += t * w
        c -= t * a
        lam_now -= t
        banned = -1
        if t == t_end:
            break
        if t_drop <= t_add:
            j = active.pop(pos_drop)
            signs.pop(pos_drop)
            alpha[j] = 0.0
            inactive[j] = True
            banned = j
        else:
            active.append(j_add)
            signs.append(np.sign(c[j_add]))
            inactive[j_add] = False
        if not active:
            # whole path collapsed back to zero; restart from the current correlations
            j = int(np.argmax(np.abs(c)))
            active, signs = [j], [np.sign(c[j])]
            inactive[j] = False
    else:
        raise ConvergenceError(f"LARS did not reach the target penalty in {max_iter} steps")

    # polish: exact stationarity on the final support and signs
    if active:
        A = np.array(active)
        s = np.array(signs)
        try:
            polished = np.linalg.solve(G[np.ix_(A, A)], c0[A] - lam * s)
            if np.all(np.sign(polished) == s):
                alpha[:] = 0.0
                alpha[A] = polished
        except np.linalg.LinAlgError:
            pass
    return alpha


def _code_l2(d, Y):
    K = d.n_atoms
    cf = scipy.linalg.cho_factor(d.gram + d.gamma * np.eye(K))
    return scipy.linalg.cho_solve(cf, d.atoms.T @ Y)


def sparse_code(d, y, penalty="l1", max_iter=None):
    """Code a single target vector, returning its ``K`` coefficients."""
    y = check_vector(y, d.dimension, "y")
    return sparse_code_batch(d, y[:, None], penalty, max_iter)[:, 0]


def sparse_code_batch(d, Y, penalty="l1", max_iter=None, n_jobs=1):
    """Code every column of ``Y`` (shape ``(m, J)``); returns ``A`` of shape ``(K, J)``.

    Columns are independent problems. With ``n_jobs > 1`` they are split into
    contiguous chunks solved on a thread pool and gathered in input order, so
    the result does not depend on ``n_jobs``.
    """
    if penalty not in PENALTIES:
        raise ConfigError(f"penalty must be one of {PENALTIES}, got {penalty!r}")
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2 or Y.shape[0] != d.dimension:
        raise DimensionMismatchError(
            f"targets must have shape ({d.dimension}, J), got {Y.shape}")
    if not np.all(np.isfinite(Y)):
        raise ValueError("targets must be finite")
    if Y.shape[1] == 0:
        return np.zeros((d.n_atoms, 0))
    if penalty == "l2":
        return _code_l2(d, Y)

    G = d.gram
    C0 = d.atoms.T @ Y
    lam = 0.5 * d.gamma

    def solve_range(lo, hi):
        return [lasso_lars(G, C0[:, j], lam, max_iter) for j in range(lo, hi)]

    J = Y.shape[1]
    n_jobs = max(1, int(n_jobs))
    if n_jobs == 1:
        cols = solve_range(0, J)
    else:
        bounds = np.linspace(0, J, n_jobs + 1).astype(int)
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            parts = pool.map(lambda b: solve_range(*b), zip(bounds[:-1], bounds[1:]))
            cols = [col for part in parts for col in part]
    return np.stack(cols, axis=1)


def reconstruct(d, codes):
    """``Omega @ A``; a 1-D code yields a single reconstructed vector."""
    codes = np.asarray(codes, dtype=np.float64)
    if codes.shape[0] != d.n_atoms:
        raise DimensionMismatchError(
            f"codes have {codes.shape[0]} rows, dictionary has {d.n_atoms} atoms")
    return d.atoms @ codes


def kkt_violation(d, y, alpha):
    """Largest breach of the l1 optimality conditions at ``alpha``.

    Active atoms need ``|2 w_k'(Omega alpha - y)| == gamma``, inactive ones
    ``<= gamma``.
    """
    g = 2.0 * d.atoms.T @ (d.atoms @ alpha - y)
    active = alpha != 0
    v_active = np.abs(g[active] + d.gamma * np.sign(alpha[active]))
    v_inactive = np.maximum(np.abs(g[~active]) - d.gamma, 0.0)
    return float(max(v_active.max(initial=0.0), v_inactive.max(initial=0.0)))


def objective(d, y, alpha, penalty="l1"):
    r = d.atoms @ alpha - y
    pen = np.abs(alpha).sum() if penalty == "l1" else alpha @ alpha
    return float(r @ r + d.gamma * pen)


def codes_to_triplets(codes):
    """Nonzero entries of ``A`` as CSV text with header ``j,k,value``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["j", "k", "value"])
    ks, js = np.nonzero(codes)
    for j, k in sorted(zip(js.tolist(), ks.tolist())):
        w.writerow([j, k, repr(float(codes[k, j]))])
    return buf.getvalue()


class SparseReconstructor:
    """Map targets onto the in-domain dictionary: ``Y -> Omega @ code(Y)``.

    Rows of the input are targets, so it composes with estimator-style
    ``(n_samples, n_features)`` data.
    """

    def __init__(self, dictionary, penalty="l1", max_iter=None, n_jobs=1):
        self.dictionary = dictionary
        self.penalty = penalty
        self.max_iter = max_iter
        self.n_jobs = n_jobs

    def codes(self, Y):
        Y = check_matrix(Y, self.dictionary.dimension, "Y", min_samples=0)
        return sparse_code_batch(self.dictionary, Y.T, self.penalty, self.max_iter,
                                 self.n_jobs)

    def transform(self, Y):
        return reconstruct(self.dictionary, self.codes(Y)).T
