"""Embedding sets with JSON-lines storage, and a synthetic two-domain generator.

The generator draws every vector as::

    x = mu + speaker_scale * L_s y_s + channel_scale * L_c c_k + noise_scale * eps

with ``y_s`` drawn once per speaker, ``c_k`` once per (speaker, channel) and
``eps`` per session, all standard normal. ``L_s`` and ``L_c`` are fixed
loadings on random orthonormal bases, with an optional decaying spectrum,
scaled so that ``E||L z||^2 = m`` regardless of rank. Out-of-domain vectors
are then rotated and shifted.

Since channel factors are shared by all sessions of a channel, a set with a
single channel per speaker carries no observable channel variability within
speaker.
"""

import csv
import enum
import hashlib
import io
import json
import math
import os
import zlib
from dataclasses import asdict, dataclass, field, fields
from typing import Iterator, NamedTuple, Optional, Sequence, Union

import numpy as np

from .exceptions import (
    ConfigError,
    DimensionMismatchError,
    MissingLabelsError,
    SchemaError,
)

EMBEDDING_FORMAT = "aeda-embeddings/1"


class Domain(str, enum.Enum):
    IN_DOMAIN = "in_domain"
    OUT_OF_DOMAIN = "out_of_domain"
    ADAPTED = "adapted"


@dataclass(frozen=True)
class EmbeddingVector:
    id: str
    speaker: Optional[str]
    channel: Optional[str]
    domain: Domain
    values: np.ndarray


class EmbeddingSet:
    """Immutable collection of same-dimension embeddings from one domain.

    Values are stored as a read-only ``(n, dimension)`` float64 matrix; labels
    as tuples whose entries may be ``None``.
    """

    def __init__(self, values, ids, speakers=None, channels=None,
                 domain=Domain.IN_DOMAIN, dimension=None):
        X = np.array(values, dtype=np.float64, copy=True)
        if X.ndim == 1 and X.size == 0:
            X = X.reshape(0, dimension or 0)
        if X.ndim != 2:
            raise DimensionMismatchError(f"values must be 2-D, got shape {X.shape}")
        if dimension is None:
            dimension = X.shape[1]
        if X.shape[1] != dimension:
            raise DimensionMismatchError(
                f"values have dimension {X.shape[1]}, declared {dimension}")
        if dimension < 1:
            raise DimensionMismatchError("dimension must be positive")
        if not np.all(np.isfinite(X)):
            raise ValueError("embedding values must be finite")
        n = X.shape[0]
        ids = tuple(str(i) for i in ids)
        if len(ids) != n:
            raise DimensionMismatchError(f"{len(ids)} ids for {n} vectors")
        if len(set(ids)) != n:
            raise SchemaError("embedding ids must be unique")
        speakers = (None,) * n if speakers is None else tuple(
            None if s is None else str(s) for s in speakers)
        channels = (None,) * n if channels is None else tuple(
            None if c is None else str(c) for c in channels)
        if len(speakers) != n or len(channels) != n:
            raise DimensionMismatchError("label sequences must match the number of vectors")
        X.setflags(write=False)
        self._X = X
        self.ids = ids
        self.speakers = speakers
        self.channels = channels
        self.domain = Domain(domain)
        self.dimension = int(dimension)
        self._index = None

    @property
    def X(self):
        return self._X

    def __len__(self):
        return self._X.shape[0]

    def __iter__(self) -> Iterator[EmbeddingVector]:
        for i in range(len(self)):
            yield EmbeddingVector(self.ids[i], self.speakers[i], self.channels[i],
                                  self.domain, self._X[i])

    def __eq__(self, other):
        if not isinstance(other, EmbeddingSet):
            return NotImplemented
        return (self.dimension == other.dimension
                and self.domain == other.domain
                and self.ids == other.ids
                and self.speakers == other.speakers
                and self.channels == other.channels
                and np.array_equal(self._X, other._X))

    def __repr__(self):
        return (f"EmbeddingSet(n={len(self)}, dimension={self.dimension}, "
                f"domain={self.domain.value})")

    @property
    def has_speakers(self):
        return len(self) > 0 and all(s is not None for s in self.speakers)

    @property
    def has_channels(self):
        return len(self) > 0 and all(c is not None for c in self.channels)

    def speaker_labels(self):
        """Speaker labels as an array; raises if any vector is unlabeled."""
        if not self.has_speakers:
            raise MissingLabelsError("set has vectors without speaker labels")
        return np.array(self.speakers, dtype=object)

    def index_of(self, ids):
        if self._index is None:
            self._index = {v: i for i, v in enumerate(self.ids)}
        try:
            return np.array([self._index[i] for i in ids], dtype=np.intp)
        except KeyError as exc:
            raise SchemaError(f"unknown embedding id {exc.args[0]!r}") from None

    def select(self, indices):
        indices = np.asarray(indices, dtype=np.intp)
        return EmbeddingSet(self._X[indices], [self.ids[i] for i in indices],
                            [self.speakers[i] for i in indices],
                            [self.channels[i] for i in indices],
                            self.domain, self.dimension)

    def with_values(self, values, domain=None):
        """Same ids and labels, new vectors (and optionally a new domain tag)."""
        values = np.asarray(values, dtype=np.float64)
        return EmbeddingSet(values, self.ids, self.speakers, self.channels,
                            self.domain if domain is None else domain,
                            values.shape[1] if values.ndim == 2 else self.dimension)

    def checksum(self):
        h = hashlib.sha256()
        h.update(json.dumps([self.dimension, self.domain.value, self.ids,
                             self.speakers, self.channels]).encode())
        h.update(np.ascontiguousarray(self._X).tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class TrialList:
    """Enrollment/test id pairs with target flags."""

    enroll_ids: tuple
    test_ids: tuple
    targets: tuple

    def __post_init__(self):
        if not len(self.enroll_ids) == len(self.test_ids) == len(self.targets):
            raise DimensionMismatchError("trial columns differ in length")
        object.__setattr__(self, "enroll_ids", tuple(str(i) for i in self.enroll_ids))
        object.__setattr__(self, "test_ids", tuple(str(i) for i in self.test_ids))
        object.__setattr__(self, "targets", tuple(bool(t) for t in self.targets))

    def __len__(self):
        return len(self.targets)

    @property
    def target_mask(self):
        return np.array(self.targets, dtype=bool)

    def check_against(self, eset):
        eset.index_of(self.enroll_ids)
        eset.index_of(self.test_ids)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["enroll_id", "test_id", "target"])
        for e, t, y in zip(self.enroll_ids, self.test_ids, self.targets):
            w.writerow([e, t, int(y)])
        return buf.getvalue()

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(self.to_csv())

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8", newline="") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header != ["enroll_id", "test_id", "target"]:
                raise SchemaError(f"{path}: bad trial header {header!r}")
            enroll, test, target = [], [], []
            for lineno, row in enumerate(reader, start=2):
                if len(row) != 3 or row[2] not in ("0", "1"):
                    raise SchemaError(f"{path}:{lineno}: malformed trial row {row!r}")
                enroll.append(row[0])
                test.append(row[1])
                target.append(row[2] == "1")
        return cls(tuple(enroll), tuple(test), tuple(target))


# -- storage ---------------------------------------------------------------

def dumps_set(eset):
    lines = [json.dumps({"format": EMBEDDING_FORMAT, "dimension": eset.dimension,
                         "domain": eset.domain.value}, separators=(",", ":"))]
    for i in range(len(eset)):
        # float repr is the shortest round-trip-safe decimal
        lines.append(json.dumps({"id": eset.ids[i], "speaker": eset.speakers[i],
                                 "channel": eset.channels[i],
                                 "vector": eset.X[i].tolist()},
                                separators=(",", ":")))
    return "\n".join(lines) + "\n"


def save_set(eset, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write(dumps_set(eset))


def load_set(path):
    """Read an embedding set written by :func:`save_set`."""
    with open(path, encoding="utf-8") as f:
        text = f.read()
    return loads_set(text, source=os.fspath(path))


def loads_set(text, source="<string>"):
    lines = text.splitlines()
    if not lines:
        raise SchemaError(f"{source}: missing header line")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{source}:1: malformed header: {exc}") from None
    if not isinstance(header, dict) or header.get("format") != EMBEDDING_FORMAT:
        raise SchemaError(f"{source}:1: not an {EMBEDDING_FORMAT} file")
    dim = header.get("dimension")
    if not isinstance(dim, int) or isinstance(dim, bool) or dim < 1:
        raise SchemaError(f"{source}:1: invalid dimension {dim!r}")
    try:
        domain = Domain(header.get("domain"))
    except ValueError:
        raise SchemaError(f"{source}:1: invalid domain {header.get('domain')!r}") from None

    ids, speakers, channels, rows = [], [], [], []
    seen = set()
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{source}:{lineno}: malformed line: {exc}") from None
        if (not isinstance(rec, dict) or not isinstance(rec.get("id"), str)
                or not isinstance(rec.get("vector"), list)):
            raise SchemaError(f"{source}:{lineno}: record needs string 'id' and list 'vector'")
        for key in ("speaker", "channel"):
            if rec.get(key) is not None and not isinstance(rec[key], str):
                raise SchemaError(f"{source}:{lineno}: {key} must be a string or null")
        vec = rec["vector"]
        if len(vec) != dim:
            raise DimensionMismatchError(
                f"{source}:{lineno}: vector has dimension {len(vec)}, header declares {dim}")
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in vec):
            raise SchemaError(f"{source}:{lineno}: vector entries must be numbers")
        if rec["id"] in seen:
            raise SchemaError(f"{source}:{lineno}: duplicate id {rec['id']!r}")
        seen.add(rec["id"])
        ids.append(rec["id"])
        speakers.append(rec.get("speaker"))
        channels.append(rec.get("channel"))
        rows.append(vec)
    values = np.array(rows, dtype=np.float64).reshape(len(rows), dim)
    if not np.all(np.isfinite(values)):
        raise SchemaError(f"{source}: non-finite vector entries")
    return EmbeddingSet(values, ids, speakers, channels, domain, dim)


def subset_one_channel(eset):
    """Keep, for every speaker, all vectors of its lexicographically smallest channel."""
    if not (eset.has_speakers and eset.has_channels) and len(eset) > 0:
        raise MissingLabelsError("subset_one_channel needs speaker and channel labels")
    keep_channel = {}
    for spk, ch in zip(eset.speakers, eset.channels):
        if spk not in keep_channel or ch < keep_channel[spk]:
            keep_channel[spk] = ch
    idx = [i for i, (spk, ch) in enumerate(zip(eset.speakers, eset.channels))
           if keep_channel[spk] == ch]
    return eset.select(idx)


# -- synthetic generator ---------------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    """Parameters of the synthetic two-domain generator.

    ``speaker_rank`` / ``channel_rank`` restrict speaker and channel factors to
    random subspaces of that rank (``None`` means full rank). Inside its
    subspace each factor has an exponentially decaying spectrum: the i-th of
    ``r`` random orthonormal directions carries standard deviation
    proportional to ``exp(-spectrum_decay * i / r)``, scaled so the factor
    contributes ``dimension`` units of total variance. The rotation is
    applied with the same angle in the first ``rotation_planes`` coordinate
    planes ``(0, 1), (2, 3), ...``; ``None`` rotates every such plane.
    """

    dimension: int = 50
    speakers_per_domain: int = 300
    channels_per_speaker: int = 4
    sessions_per_channel: int = 2
    speaker_scale: float = 1.0
    channel_scale: float = 1.0
    noise_scale: float = 0.3
    domain_shift: Union[float, Sequence[float]] = 2.0
    domain_rotation_angle: float = 0.3
    seed: int = 0
    speaker_rank: Optional[int] = None
    channel_rank: Optional[int] = None
    rotation_planes: Optional[int] = None
    spectrum_decay: float = 2.0
    mean_offset: float = 0.0
    eval_speakers: int = 100
    target_trials: int = 2000
    nontarget_trials: int = 20000

    def __post_init__(self):
        if isinstance(self.domain_shift, (list, tuple, np.ndarray)):
            object.__setattr__(self, "domain_shift",
                               tuple(float(v) for v in self.domain_shift))
        self.validate()

    def validate(self):
        for name in ("dimension", "speakers_per_domain"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("channels_per_speaker", "sessions_per_channel"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("speaker_scale", "channel_scale", "noise_scale"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ConfigError(f"{name} must be > 0")
        for name in ("speaker_rank", "channel_rank"):
            r = getattr(self, name)
            if r is not None and not 1 <= r <= self.dimension:
                raise ConfigError(f"{name} must lie in [1, dimension]")
        if not (math.isfinite(self.spectrum_decay) and self.spectrum_decay >= 0):
            raise ConfigError("spectrum_decay must be >= 0")
        if self.rotation_planes is not None and self.rotation_planes < 0:
            raise ConfigError("rotation_planes must be >= 0")
        if isinstance(self.domain_shift, tuple) and len(self.domain_shift) != self.dimension:
            raise ConfigError("domain_shift vector must have length dimension")
        if self.eval_speakers < 0 or self.target_trials < 0 or self.nontarget_trials < 0:
            raise ConfigError("eval_speakers and trial counts must be >= 0")
        if 0 < self.eval_speakers < 2 and self.nontarget_trials > 0:
            raise ConfigError("nontarget trials need at least 2 eval speakers")

    def to_dict(self):
        d = asdict(self)
        if isinstance(d["domain_shift"], tuple):
            d["domain_shift"] = list(d["domain_shift"])
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown synth config keys: {sorted(unknown)}")
        return cls(**d)


class SyntheticData(NamedTuple):
    in_set: EmbeddingSet
    out_set: EmbeddingSet
    eval_set: EmbeddingSet
    eval_trials: TrialList


def derived_rng(seed, *purpose):
    """Independent generator for one named purpose under a master seed."""
    key = tuple(zlib.crc32(p.encode()) for p in purpose)
    return np.random.default_rng(np.random.SeedSequence(int(seed) & (2**64 - 1),
                                                        spawn_key=key))


def _orthonormal(rng, n, k):
    q, r = np.linalg.qr(rng.standard_normal((n, k)))
    return q * np.sign(np.diag(r))


def _loadings(rng, cfg):
    """Speaker and channel loadings with decaying spectra on random bases."""
    m = cfg.dimension
    out = []
    for rank in (cfg.speaker_rank, cfg.channel_rank):
        rank = m if rank is None else rank
        scales = np.exp(-cfg.spectrum_decay * np.arange(rank) / rank)
        scales *= math.sqrt(m) / np.linalg.norm(scales)
        out.append(_orthonormal(rng, m, rank) * scales)
    return tuple(out)


def rotation_matrix(m, angle, planes=None):
    """Block Givens rotation by ``angle`` in planes (0,1), (2,3), ..."""
    R = np.eye(m)
    n_planes = m // 2 if planes is None else min(planes, m // 2)
    c, s = math.cos(angle), math.sin(angle)
    for p in range(n_planes):
        i, j = 2 * p, 2 * p + 1
        R[i, i], R[i, j], R[j, i], R[j, j] = c, -s, s, c
    return R


def _draw_domain(cfg, prefix, n_speakers, loadings, mean, transform, shift, domain):
    m = cfg.dimension
    L_s, L_c = loadings
    n_ch, n_sess = cfg.channels_per_speaker, cfg.sessions_per_channel
    y = derived_rng(cfg.seed, prefix, "speakers").standard_normal((n_speakers, L_s.shape[1]))
    c = derived_rng(cfg.seed, prefix, "channels").standard_normal(
        (n_speakers, n_ch, L_c.shape[1]))
    eps = derived_rng(cfg.seed, prefix, "noise").standard_normal((n_speakers, n_ch, n_sess, m))

    spk_part = cfg.speaker_scale * (y @ L_s.T)
    ch_part = cfg.channel_scale * (c @ L_c.T)
    X = (mean + spk_part[:, None, None, :] + ch_part[:, :, None, :]
         + cfg.noise_scale * eps).reshape(-1, m)
    if transform is not None:
        X = X @ transform.T
    if shift is not None:
        X = X + shift

    ids, speakers, channels = [], [], []
    for s in range(n_speakers):
        for k in range(n_ch):
            for t in range(n_sess):
                ids.append(f"{prefix}-spk{s:05d}-ch{k:02d}-s{t:02d}")
                speakers.append(f"{prefix}-spk{s:05d}")
                channels.append(f"ch{k:02d}")
    return EmbeddingSet(X, ids, speakers, channels, domain, m)


def _draw_trials(cfg, eset):
    rng = derived_rng(cfg.seed, "trials")
    spk = np.array(eset.speakers)
    ch = np.array(eset.channels)
    n = len(eset)
    if n == 0:
        return TrialList((), (), ())
    ii, jj = np.triu_indices(n, k=1)
    same = spk[ii] == spk[jj]
    if cfg.channels_per_speaker > 1:
        same &= ch[ii] != ch[jj]
    cand = np.flatnonzero(same)
    n_tar = min(cfg.target_trials, cand.size)
    tar = np.sort(rng.choice(cand, size=n_tar, replace=False)) if n_tar else cand[:0]

    # nontargets sampled directly to avoid materializing every cross pair
    n_cross = int(np.count_nonzero(spk[ii] != spk[jj]))
    n_non = min(cfg.nontarget_trials, n_cross)
    chosen = set()
    non_pairs = []
    while len(non_pairs) < n_non:
        a, b = rng.integers(0, n, size=2)
        if a == b or spk[a] == spk[b]:
            continue
        a, b = (a, b) if a < b else (b, a)
        if (a, b) in chosen:
            continue
        chosen.add((a, b))
        non_pairs.append((a, b))
    non_pairs.sort()

    pairs = [(ii[p], jj[p], True) for p in tar] + [(a, b, False) for a, b in non_pairs]
    return TrialList(tuple(eset.ids[a] for a, _, _ in pairs),
                     tuple(eset.ids[b] for _, b, _ in pairs),
                     tuple(t for _, _, t in pairs))


def generate_synthetic(config):
    """Draw training sets for both domains plus a held-out evaluation set with trials.

    Returns
    -------
    SyntheticData
        ``in_set`` (labeled, all channels), ``out_set``, ``eval_set`` drawn from
        the in-domain distribution on disjoint speakers, and ``eval_trials``
        over ``eval_set``. Target trials pair sessions from different channels
        whenever a speaker has more than one.
    """
    cfg = config
    cfg.validate()
    m = cfg.dimension
    loadings = _loadings(derived_rng(cfg.seed, "subspaces"), cfg)

    mean = np.zeros(m)
    if cfg.mean_offset:
        d = derived_rng(cfg.seed, "mean").standard_normal(m)
        mean = cfg.mean_offset * d / np.linalg.norm(d)
    if isinstance(cfg.domain_shift, tuple):
        shift = np.array(cfg.domain_shift)
    else:
        d = derived_rng(cfg.seed, "shift").standard_normal(m)
        shift = float(cfg.domain_shift) * d / np.linalg.norm(d)
    R = rotation_matrix(m, cfg.domain_rotation_angle, cfg.rotation_planes)

    n_spk = cfg.speakers_per_domain
    in_set = _draw_domain(cfg, "in", n_spk, loadings, mean, None, None, Domain.IN_DOMAIN)
    out_set = _draw_domain(cfg, "out", n_spk, loadings, mean, R, shift, Domain.OUT_OF_DOMAIN)
    eval_set = _draw_domain(cfg, "eval", cfg.eval_speakers, loadings, mean, None, None,
                            Domain.IN_DOMAIN)
    return SyntheticData(in_set, out_set, eval_set, _draw_trials(cfg, eval_set))
