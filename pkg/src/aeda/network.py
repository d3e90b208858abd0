"""Autoencoder-based domain adaptation network and the plain DAE baseline.

Two sigmoid encoders map in-domain and out-of-domain vectors to a common
hidden code; one linear decoder, shared by both branches, maps codes back to
the in-domain space::

    f_in(x)  = sigmoid(W_in  x + b_in)
    f_out(x) = sigmoid(W_out x + b_out)
    g(h)     = W_dec h + b_dec

Training minimizes ``loss_ae + loss_dae`` where ``loss_ae`` reconstructs
in-domain inputs through ``g o f_in`` and ``loss_dae`` maps out-of-domain
inputs through ``g o f_out`` onto pseudo in-domain targets obtained by sparse
reconstruction over an in-domain dictionary. Both losses are mean squared
Euclidean errors over the rows of a batch.
"""

import csv
import io
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .datasets import Domain, EmbeddingSet, derived_rng
from .exceptions import ConfigError, DimensionMismatchError, TrainingDivergedError
from .sparse import PENALTIES, build_dictionary, reconstruct, sparse_code_batch
from .validation import check_matrix

PARAM_NAMES = ("w_in", "b_in", "w_out", "b_out", "w_dec", "b_dec")


@dataclass(eq=False)
class AedaModel:
    w_in: np.ndarray
    b_in: np.ndarray
    w_out: np.ndarray
    b_out: np.ndarray
    w_dec: np.ndarray
    b_dec: np.ndarray
    activation: str = "sigmoid"

    @property
    def input_dim(self):
        return self.w_in.shape[1]

    @property
    def hidden_dim(self):
        return self.w_in.shape[0]

    def params(self):
        return {k: getattr(self, k) for k in PARAM_NAMES}

    def copy(self):
        return AedaModel(**{k: v.copy() for k, v in self.params().items()})

    def is_finite(self):
        return all(np.all(np.isfinite(v)) for v in self.params().values())

    def to_dict(self):
        return {k: v.tolist() for k, v in self.params().items()}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: np.array(d[k], dtype=np.float64) for k in PARAM_NAMES})

    @classmethod
    def initialize(cls, input_dim, hidden_dim, seed, scale=1.0):
        """Uniform weights in ``[-s, s]`` with ``s = scale / sqrt(input_dim)``.

        Biases start at zero and ``f_out`` starts as a copy of ``f_in``.
        """
        rng = derived_rng(seed, "init")
        s = scale / math.sqrt(input_dim)
        w_enc = rng.uniform(-s, s, size=(hidden_dim, input_dim))
        w_dec = rng.uniform(-s, s, size=(input_dim, hidden_dim))
        return cls(w_enc, np.zeros(hidden_dim), w_enc.copy(), np.zeros(hidden_dim),
                   w_dec, np.zeros(input_dim))


def _as_batch(x, dim, name):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = check_matrix(x[None, :] if single else x, dim, name, min_samples=0)
    return X, single


def encode(model, branch, x):
    """Hidden code ``sigmoid(W x + b)`` of the ``"in"`` or ``"out"`` encoder."""
    if branch not in ("in", "out"):
        raise ValueError(f"branch must be 'in' or 'out', got {branch!r}")
    W, b = (model.w_in, model.b_in) if branch == "in" else (model.w_out, model.b_out)
    X, single = _as_batch(x, model.input_dim, "x")
    H = expit(X @ W.T + b)
    return H[0] if single else H


def decode(model, h):
    H, single = _as_batch(h, model.hidden_dim, "h")
    Y = H @ model.w_dec.T + model.b_dec
    return Y[0] if single else Y


def _mse(R):
    return float(np.einsum("ij,ij->", R, R) / R.shape[0]) if R.shape[0] else 0.0


def loss_ae(model, X_in):
    X = check_matrix(X_in, model.input_dim, "X_in")
    return _mse(decode(model, encode(model, "in", X)) - X)


def loss_dae(model, X_out, targets):
    X = check_matrix(X_out, model.input_dim, "X_out")
    T = check_matrix(targets, model.input_dim, "targets")
    if X.shape[0] != T.shape[0]:
        raise DimensionMismatchError(
            f"{X.shape[0]} out-of-domain rows but {T.shape[0]} targets")
    return _mse(decode(model, encode(model, "out", X)) - T)


def loss_total(model, X_in, X_out, targets):
    return loss_ae(model, X_in) + loss_dae(model, X_out, targets)


def _branch_grad(W, b, W_dec, b_dec, X, T):
    """Loss and gradients of ``mean ||W_dec s(W x + b) + b_dec - t||^2``."""
    n = X.shape[0]
    # a diverging run is reported by the end-of-epoch check, not by warnings here
    with np.errstate(over="ignore", invalid="ignore"):
        H = expit(X @ W.T + b)
        R = H @ W_dec.T + b_dec - T
        loss = float(np.einsum("ij,ij->", R, R) / n)
        dY = (2.0 / n) * R
        g_wdec = dY.T @ H
        g_bdec = dY.sum(axis=0)
        dZ = (dY @ W_dec) * H * (1.0 - H)
        return loss, dZ.T @ X, dZ.sum(axis=0), g_wdec, g_bdec


def branch_gradients(model, X_in=None, X_out=None, targets=None):
    """Per-branch losses and gradients, without summing the decoder terms.

    Returns ``{"ae": (loss, gW, gb, gWdec, gbdec), "dae": (...)}`` for the
    branches whose data are given.
    """
    out = {}
    if X_in is not None:
        out["ae"] = _branch_grad(model.w_in, model.b_in, model.w_dec, model.b_dec, X_in, X_in)
    if X_out is not None:
        if targets is None or targets.shape[0] != X_out.shape[0]:
            raise DimensionMismatchError("X_out and targets must have equal row counts")
        out["dae"] = _branch_grad(model.w_out, model.b_out, model.w_dec, model.b_dec,
                                  X_out, targets)
    return out


def gradients(model, X_in, X_out, targets):
    """Analytic gradients of :func:`loss_total` for all six parameter blocks.

    Returns ``(grads, (loss_ae, loss_dae))`` where ``grads`` is keyed like
    :data:`PARAM_NAMES`. The shared decoder receives the sum of both branch
    gradients.
    """
    X_in = check_matrix(X_in, model.input_dim, "X_in")
    X_out = check_matrix(X_out, model.input_dim, "X_out")
    targets = check_matrix(targets, model.input_dim, "targets")
    br = branch_gradients(model, X_in, X_out, targets)
    l_ae, gw_in, gb_in, gwd_ae, gbd_ae = br["ae"]
    l_dae, gw_out, gb_out, gwd_dae, gbd_dae = br["dae"]
    grads = {"w_in": gw_in, "b_in": gb_in, "w_out": gw_out, "b_out": gb_out,
             "w_dec": gwd_ae + gwd_dae, "b_dec": gbd_ae + gbd_dae}
    return grads, (l_ae, l_dae)


@dataclass(frozen=True)
class TrainConfig:
    hidden_dim: int = 100
    learning_rate: float = 0.01
    batch_size: int = 64
    init_epochs: int = 30
    epochs_per_alternation: int = 10
    alternations: int = 5
    penalty: str = "l1"
    gamma: float = 0.01
    dictionary_k: int = 300
    seed: int = 0
    weight_init_scale: float = 1.0

    def __post_init__(self):
        for name in ("hidden_dim", "batch_size", "dictionary_k"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("init_epochs", "epochs_per_alternation", "alternations"):
            if int(getattr(self, name)) < 0:
                raise ConfigError(f"{name} must be >= 0")
        # zero is allowed so that a run can be checked to return its initialization
        if not (math.isfinite(self.learning_rate) and self.learning_rate >= 0):
            raise ConfigError("learning_rate must be finite and >= 0")
        if self.penalty not in PENALTIES:
            raise ConfigError(f"penalty must be one of {PENALTIES}")
        if not self.gamma > 0:
            raise ConfigError("gamma must be > 0")
        if not self.weight_init_scale > 0:
            raise ConfigError("weight_init_scale must be > 0")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainTrace:
    """Per-epoch losses and per-alternation sparse-coding residuals."""

    records: list = field(default_factory=list)
    sparse_residuals: list = field(default_factory=list)

    def add(self, phase, epoch, l_ae, l_dae):
        self.records.append((phase, epoch, l_ae + l_dae, l_ae, l_dae))

    @property
    def loss_total(self):
        return np.array([r[2] for r in self.records])

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["phase", "epoch", "loss_total", "loss_ae", "loss_dae"])
        for phase, epoch, lt, la, ld in self.records:
            w.writerow([phase, epoch, repr(lt), repr(la), repr(ld)])
        return buf.getvalue()


def _diverged(where):
    return TrainingDivergedError(f"training diverged during {where}; "
                                 "lower the learning rate or rescale the inputs")


def _epoch_losses(model, where, *loss_fns):
    """Evaluate end-of-epoch losses, raising on non-finite parameters or values."""
    if not model.is_finite():
        raise _diverged(where)
    with np.errstate(over="ignore", invalid="ignore"):
        losses = tuple(fn() for fn in loss_fns)
    if not all(math.isfinite(v) for v in losses):
        raise _diverged(where)
    return losses


def _sgd_step(model, grads, lr):
    for k in grads:
        getattr(model, k)[...] -= lr * grads[k]


def _batches(rng, n, batch_size, n_steps):
    """``n_steps`` index batches cycling through fresh permutations of ``n``."""
    order = rng.permutation(n)
    pos = 0
    for _ in range(n_steps):
        idx = []
        while len(idx) < min(batch_size, n):
            take = min(batch_size - len(idx), n - pos)
            idx.extend(order[pos:pos + take])
            pos += take
            if pos == n:
                order, pos = rng.permutation(n), 0
        yield np.array(idx)


def _sparse_targets(model, dictionary, X_out, penalty, n_jobs):
    Y = decode(model, encode(model, "out", X_out))
    A = sparse_code_batch(dictionary, Y.T, penalty, n_jobs=n_jobs)
    targets = reconstruct(dictionary, A).T
    return targets, _mse(targets - Y)


def train_aeda(in_data, out_data, cfg, dictionary=None, n_jobs=1, initial_model=None):
    """Train the AEDA network.

    Parameters
    ----------
    in_data, out_data : EmbeddingSet or array of shape (n, m)
        Unlabeled in-domain and out-of-domain vectors (raw, unwhitened).
    cfg : TrainConfig
    dictionary : Dictionary, optional
        Defaults to ``cfg.dictionary_k`` atoms sampled from ``in_data``.
    initial_model : AedaModel, optional
        Starting weights; defaults to :meth:`AedaModel.initialize`.

    Returns
    -------
    model : AedaModel
    trace : TrainTrace

    Notes
    -----
    Phase 0 trains both branches as autoencoders of the in-domain data for
    ``cfg.init_epochs`` epochs. Each of the ``cfg.alternations`` rounds then
    freezes the network, sparse-codes ``g(f_out(X_out))`` against the fixed
    dictionary to get targets ``Omega @ A``, and runs
    ``cfg.epochs_per_alternation`` epochs of minibatch gradient descent on the
    total loss. Epoch length is set by the out-of-domain set; in-domain
    batches cycle alongside.
    """
    X_in = check_matrix(in_data.X if isinstance(in_data, EmbeddingSet) else in_data,
                        name="X_in")
    X_out = check_matrix(out_data.X if isinstance(out_data, EmbeddingSet) else out_data,
                         X_in.shape[1], "X_out")
    m = X_in.shape[1]
    if dictionary is None:
        if isinstance(in_data, EmbeddingSet):
            src = in_data
        else:
            src = EmbeddingSet(X_in, [str(i) for i in range(X_in.shape[0])])
        dictionary = build_dictionary(src, cfg.dictionary_k, cfg.seed, cfg.gamma)
    if dictionary.dimension != m:
        raise DimensionMismatchError("dictionary dimension differs from the data")

    if initial_model is None:
        model = AedaModel.initialize(m, cfg.hidden_dim, cfg.seed, cfg.weight_init_scale)
    else:
        model = initial_model.copy()
        if model.input_dim != m:
            raise DimensionMismatchError("initial model dimension differs from the data")
    trace = TrainTrace()
    rng = derived_rng(cfg.seed, "batches")
    lr = cfg.learning_rate
    bs = cfg.batch_size

    n_in = X_in.shape[0]
    steps = math.ceil(n_in / bs)
    for epoch in range(cfg.init_epochs):
        for idx in _batches(rng, n_in, bs, steps):
            xb = X_in[idx]
            grads, _ = gradients(model, xb, xb, xb)
            _sgd_step(model, grads, lr)
        l_ae, l_dae = _epoch_losses(model, f"initialization epoch {epoch}",
                                    lambda: loss_ae(model, X_in),
                                    lambda: loss_dae(model, X_in, X_in))
        trace.add("init", epoch, l_ae, l_dae)

    n_out = X_out.shape[0]
    steps = math.ceil(n_out / bs)
    epoch = 0
    for alt in range(cfg.alternations):
        targets, resid = _sparse_targets(model, dictionary, X_out, cfg.penalty, n_jobs)
        trace.sparse_residuals.append(resid)
        for _ in range(cfg.epochs_per_alternation):
            in_batches = _batches(rng, n_in, bs, steps)
            for idx_out in _batches(rng, n_out, bs, steps):
                idx_in = next(in_batches)
                grads, _ = gradients(model, X_in[idx_in], X_out[idx_out], targets[idx_out])
                _sgd_step(model, grads, lr)
            l_ae, l_dae = _epoch_losses(model, f"alternation {alt}",
                                        lambda: loss_ae(model, X_in),
                                        lambda: loss_dae(model, X_out, targets))
            trace.add(f"alt{alt}", epoch, l_ae, l_dae)
            epoch += 1
    return model, trace


def adapt(model, out_set):
    """Map every vector through ``g(f_out(x))``, keeping ids and labels."""
    if out_set.dimension != model.input_dim:
        raise DimensionMismatchError(
            f"set dimension {out_set.dimension} != model input {model.input_dim}")
    Y = decode(model, encode(model, "out", out_set.X)) if len(out_set) else out_set.X
    return out_set.with_values(Y, Domain.ADAPTED)


# -- DAE baseline ----------------------------------------------------------

@dataclass(eq=False)
class DaeBaselineModel:
    w_enc: np.ndarray
    b_enc: np.ndarray
    w_dec: np.ndarray
    b_dec: np.ndarray

    @property
    def input_dim(self):
        return self.w_enc.shape[1]

    @property
    def hidden_dim(self):
        return self.w_enc.shape[0]

    def params(self):
        return {"w_enc": self.w_enc, "b_enc": self.b_enc,
                "w_dec": self.w_dec, "b_dec": self.b_dec}

    def is_finite(self):
        return all(np.all(np.isfinite(v)) for v in self.params().values())

    def forward(self, X):
        X = check_matrix(X, self.input_dim, min_samples=0)
        return expit(X @ self.w_enc.T + self.b_enc) @ self.w_dec.T + self.b_dec

    def loss(self, X, T):
        return _mse(self.forward(X) - T)

    def gradients(self, X, T):
        loss, gw, gb, gwd, gbd = _branch_grad(self.w_enc, self.b_enc, self.w_dec,
                                              self.b_dec, X, T)
        return {"w_enc": gw, "b_enc": gb, "w_dec": gwd, "b_dec": gbd}, loss

    def to_dict(self):
        return {k: v.tolist() for k, v in self.params().items()}

    @classmethod
    def from_dict(cls, d):
        return cls(*(np.array(d[k], dtype=np.float64)
                     for k in ("w_enc", "b_enc", "w_dec", "b_dec")))


def speaker_mean_targets(eset):
    labels = eset.speaker_labels()
    _, inv = np.unique(labels, return_inverse=True)
    means = np.zeros((inv.max() + 1, eset.dimension))
    np.add.at(means, inv, eset.X)
    means /= np.bincount(inv)[:, None]
    return means[inv]


def train_dae_baseline(out_set, cfg, targets=None):
    """Single-branch DAE mapping each vector to its speaker's mean vector.

    Runs ``init_epochs + alternations * epochs_per_alternation`` epochs so the
    budget matches :func:`train_aeda` under the same config.
    """
    X = check_matrix(out_set.X if isinstance(out_set, EmbeddingSet) else out_set)
    if targets is None:
        targets = speaker_mean_targets(out_set)
    T = check_matrix(targets, X.shape[1], "targets")
    if T.shape[0] != X.shape[0]:
        raise DimensionMismatchError("one target per input vector is required")
    init = AedaModel.initialize(X.shape[1], cfg.hidden_dim, cfg.seed, cfg.weight_init_scale)
    model = DaeBaselineModel(init.w_in, init.b_in, init.w_dec, init.b_dec)
    trace = TrainTrace()
    rng = derived_rng(cfg.seed, "batches")
    steps = math.ceil(X.shape[0] / cfg.batch_size)
    n_epochs = cfg.init_epochs + cfg.alternations * cfg.epochs_per_alternation
    for epoch in range(n_epochs):
        for idx in _batches(rng, X.shape[0], cfg.batch_size, steps):
            grads, _ = model.gradients(X[idx], T[idx])
            for k, g in grads.items():
                getattr(model, k)[...] -= cfg.learning_rate * g
        loss, = _epoch_losses(model, f"DAE epoch {epoch}", lambda: model.loss(X, T))
        trace.add("dae", epoch, 0.0, loss)
    return model, trace


# -- estimator interface ---------------------------------------------------

class AEDA(TransformerMixin, BaseEstimator):
    """Estimator form of :func:`train_aeda`.

    ``fit(X, X_in)`` takes out-of-domain rows ``X`` and unlabeled in-domain
    rows ``X_in``; ``transform`` adapts out-of-domain rows to the in-domain
    space through ``g o f_out``.
    """

    def __init__(self, hidden_dim=100, learning_rate=0.01, batch_size=64, init_epochs=30,
                 epochs_per_alternation=10, alternations=5, penalty="l1", gamma=0.01,
                 dictionary_k=300, weight_init_scale=1.0, random_state=0, n_jobs=1):
        self.hidden_dim = hidden_dim
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.init_epochs = init_epochs
        self.epochs_per_alternation = epochs_per_alternation
        self.alternations = alternations
        self.penalty = penalty
        self.gamma = gamma
        self.dictionary_k = dictionary_k
        self.weight_init_scale = weight_init_scale
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _config(self):
        p = self.get_params()
        p["seed"] = p.pop("random_state")
        p.pop("n_jobs")
        return TrainConfig(**p)

    def fit(self, X, X_in):
        X = check_matrix(X)
        X_in = check_matrix(X_in, X.shape[1], "X_in")
        cfg = self._config()
        cfg = TrainConfig(**{**cfg.to_dict(),
                             "dictionary_k": min(cfg.dictionary_k, X_in.shape[0])})
        self.model_, self.trace_ = train_aeda(X_in, X, cfg, n_jobs=self.n_jobs)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        X = check_matrix(X, self.n_features_in_, min_samples=0)
        return decode(self.model_, encode(self.model_, "out", X))


class DAEBaseline(TransformerMixin, BaseEstimator):
    """Estimator form of :func:`train_dae_baseline`; ``y`` holds speaker labels."""

    def __init__(self, hidden_dim=100, learning_rate=0.01, batch_size=64, epochs=80,
                 weight_init_scale=1.0, random_state=0):
        self.hidden_dim = hidden_dim
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.weight_init_scale = weight_init_scale
        self.random_state = random_state

    def fit(self, X, y):
        X = check_matrix(X)
        eset = EmbeddingSet(X, [str(i) for i in range(X.shape[0])], speakers=y,
                            domain=Domain.OUT_OF_DOMAIN)
        cfg = TrainConfig(hidden_dim=self.hidden_dim, learning_rate=self.learning_rate,
                          batch_size=self.batch_size, init_epochs=self.epochs,
                          alternations=0, seed=self.random_state,
                          weight_init_scale=self.weight_init_scale)
        self.model_, self.trace_ = train_dae_baseline(eset, cfg)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        return self.model_.forward(X)
