"""Experiment orchestration: single systems and suites of systems on one data bundle.

A system is described by a :class:`SystemSpec`. Running it fits the whitener,
optionally adapts the out-of-domain set (AEDA or the DAE baseline, both on
raw vectors), preprocesses the PLDA training source, trains PLDA, scores the
evaluation trials and reduces the scores to a :class:`ScoreReport`.

Run directory layout::

    spec.json     system spec, seed and input checksums
    models/       whitener.json, plda.json and aeda.json or dae.json
    scores.csv    enroll_id,test_id,target,llr
    report.json   ScoreReport
    trace.csv     training losses (header only without adaptation)
"""

import csv
import hashlib
import io
import json
import os
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from .container import dumps_model
from .datasets import Domain, EmbeddingSet, SyntheticData, TrialList, subset_one_channel
from .evaluation import DCF08, DCF10, ScoreReport, score_report, score_trials, variability_stats
from .exceptions import ConfigError, DimensionMismatchError, MissingLabelsError, SchemaError
from .network import TrainConfig, TrainTrace, adapt, train_aeda, train_dae_baseline
from .plda import interpolate_covariances, train_plda
from .preprocess import fit_whitener, preprocess_matrix

ADAPTATIONS = ("none", "interpolated", "dae", "aeda")
PLDA_SOURCES = ("in_domain", "in_domain_full", "out_of_domain", "adapted", "interpolated")
WHITENER_SOURCES = ("in_domain", "in_domain_full", "adapted")
METRICS = ("eer", "min_dcf_08", "min_dcf_10")
RELATIONS = ("<", "<=")

_HYPER_KEYS = {"train", "alpha_wc", "alpha_ac", "eigenvoice_rank"}


def _strict(d, allowed, what):
    if not isinstance(d, dict):
        raise ConfigError(f"{what} must be a JSON object")
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown {what} keys: {sorted(unknown)}")


@dataclass(frozen=True)
class SystemSpec:
    """One row of a comparison table.

    ``hyperparameters`` may hold ``train`` (a :class:`TrainConfig` mapping
    without ``seed``; the run seed is used), ``alpha_wc`` / ``alpha_ac`` for
    interpolation (weights of the in-domain model, default 0.6 / 0.3) and
    ``eigenvoice_rank`` for PLDA.
    """

    name: str
    adaptation: str = "none"
    wc_ac_source: str = "out_of_domain"
    whitener_source: str = "in_domain"
    hyperparameters: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.name or "/" in self.name or self.name.startswith("."):
            raise ConfigError(f"invalid system name {self.name!r}")
        if self.adaptation not in ADAPTATIONS:
            raise ConfigError(f"adaptation must be one of {ADAPTATIONS}")
        if self.wc_ac_source not in PLDA_SOURCES:
            raise ConfigError(f"wc_ac_source must be one of {PLDA_SOURCES}")
        if self.whitener_source not in WHITENER_SOURCES:
            raise ConfigError(f"whitener_source must be one of {WHITENER_SOURCES}")
        learned = self.adaptation in ("dae", "aeda")
        if (self.wc_ac_source == "adapted") != learned:
            raise ConfigError("wc_ac_source 'adapted' goes with adaptation dae or aeda, "
                              "and those adaptations train PLDA on the adapted set")
        if (self.wc_ac_source == "interpolated") != (self.adaptation == "interpolated"):
            raise ConfigError("wc_ac_source 'interpolated' goes with adaptation 'interpolated'")
        if self.whitener_source == "adapted" and not learned:
            raise ConfigError("whitener_source 'adapted' needs an adapted set")
        hp = dict(self.hyperparameters)
        _strict(hp, _HYPER_KEYS, "hyperparameter")
        train = hp.get("train", {})
        _strict(train, {f.name for f in fields(TrainConfig)} - {"seed"}, "train")
        TrainConfig.from_dict(train)
        for key in ("alpha_wc", "alpha_ac"):
            if key in hp and not 0.0 <= float(hp[key]) <= 1.0:
                raise ConfigError(f"{key} must lie in [0, 1]")
        rank = hp.get("eigenvoice_rank")
        if rank is not None and (not isinstance(rank, int) or rank < 1):
            raise ConfigError("eigenvoice_rank must be a positive integer")
        object.__setattr__(self, "hyperparameters", hp)

    def train_config(self, seed):
        return TrainConfig.from_dict({**self.hyperparameters.get("train", {}), "seed": int(seed)})

    def to_dict(self):
        return {"name": self.name, "adaptation": self.adaptation,
                "wc_ac_source": self.wc_ac_source, "whitener_source": self.whitener_source,
                "hyperparameters": self.hyperparameters}

    @classmethod
    def from_dict(cls, d):
        _strict(d, {f.name for f in fields(cls)}, "system spec")
        if "name" not in d:
            raise ConfigError("system spec needs a name")
        return cls(**d)


@dataclass(frozen=True)
class OrderingAssertion:
    """``metric(lhs) + margin  relation  metric(rhs)``."""

    lhs: str
    rhs: str
    relation: str = "<"
    metric: str = "eer"
    margin: float = 0.0

    def __post_init__(self):
        if self.relation not in RELATIONS:
            raise ConfigError(f"relation must be one of {RELATIONS}")
        if self.metric not in METRICS:
            raise ConfigError(f"metric must be one of {METRICS}")
        if not self.margin >= 0:
            raise ConfigError("margin must be >= 0")

    def evaluate(self, reports):
        for name in (self.lhs, self.rhs):
            if name not in reports:
                raise ConfigError(f"assertion refers to unknown system {name!r}")
        a = getattr(reports[self.lhs], self.metric)
        b = getattr(reports[self.rhs], self.metric)
        ok = a + self.margin < b if self.relation == "<" else a + self.margin <= b
        return {**self.to_dict(), "lhs_value": a, "rhs_value": b, "passed": bool(ok)}

    def to_dict(self):
        return {"lhs": self.lhs, "rhs": self.rhs, "relation": self.relation,
                "metric": self.metric, "margin": self.margin}

    @classmethod
    def from_dict(cls, d):
        _strict(d, {f.name for f in fields(cls)}, "assertion")
        return cls(**d)


@dataclass(frozen=True)
class Suite:
    name: str
    systems: tuple
    assertions: tuple = ()

    def __post_init__(self):
        names = [s.name for s in self.systems]
        if not names:
            raise ConfigError("a suite needs at least one system")
        if len(set(names)) != len(names):
            raise ConfigError("system names within a suite must be unique")
        for a in self.assertions:
            for n in (a.lhs, a.rhs):
                if n not in names:
                    raise ConfigError(f"assertion refers to unknown system {n!r}")

    def to_dict(self):
        return {"name": self.name, "systems": [s.to_dict() for s in self.systems],
                "assertions": [a.to_dict() for a in self.assertions]}

    @classmethod
    def from_dict(cls, d):
        _strict(d, {"name", "systems", "assertions"}, "suite")
        return cls(d.get("name", "suite"),
                   tuple(SystemSpec.from_dict(s) for s in d.get("systems", [])),
                   tuple(OrderingAssertion.from_dict(a) for a in d.get("assertions", [])))

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            try:
                return cls.from_dict(json.load(f))
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}: not valid JSON: {exc}") from None


def shipped_suite(name):
    """One of the suite files installed with the package (``table2``, ``table3``)."""
    path = os.path.join(os.path.dirname(__file__), "suites", f"{name}.json")
    if not os.path.exists(path):
        raise ConfigError(f"no shipped suite named {name!r}")
    return Suite.load(path)


@dataclass(frozen=True)
class DataBundle:
    """Inputs shared by every system of a comparison.

    ``in_domain`` is the small in-domain set (labels needed only when PLDA is
    trained on it); ``in_domain_full`` is an optional fully labeled in-domain
    set for the matched upper-bound systems.
    """

    in_domain: EmbeddingSet
    out_of_domain: EmbeddingSet
    eval_set: EmbeddingSet
    trials: TrialList
    in_domain_full: Optional[EmbeddingSet] = None

    def __post_init__(self):
        m = self.in_domain.dimension
        for s in (self.out_of_domain, self.eval_set, self.in_domain_full):
            if s is not None and s.dimension != m:
                raise DimensionMismatchError("all sets in a bundle must share one dimension")
        self.trials.check_against(self.eval_set)

    @classmethod
    def from_synthetic(cls, data: SyntheticData):
        return cls(subset_one_channel(data.in_set), data.out_set, data.eval_set,
                   data.eval_trials, in_domain_full=data.in_set)

    def checksums(self):
        sums = {"in_domain": self.in_domain.checksum(),
                "out_of_domain": self.out_of_domain.checksum(),
                "eval": self.eval_set.checksum(),
                "trials": _sha256(self.trials.to_csv())}
        if self.in_domain_full is not None:
            sums["in_domain_full"] = self.in_domain_full.checksum()
        return sums


def _sha256(text):
    return hashlib.sha256(text.encode()).hexdigest()


@dataclass
class SystemOutcome:
    spec: SystemSpec
    report: ScoreReport
    scores: np.ndarray
    plda_source: EmbeddingSet
    models: dict
    trace: TrainTrace


def _in_full(bundle, spec):
    if bundle.in_domain_full is None:
        raise ConfigError(f"system {spec.name!r} needs a full in-domain set")
    return bundle.in_domain_full


def _labeled(eset, spec, role):
    if len(eset) and not eset.has_speakers:
        raise MissingLabelsError(f"system {spec.name!r} trains PLDA on the {role} set, "
                                 "which has no speaker labels")
    return eset


def _plda_on(eset, whitener, rank):
    return train_plda(preprocess_matrix(whitener, eset.X), eset.speaker_labels(), rank)


def execute_system(spec, bundle, seed=0, n_jobs=1, dcf08=DCF08, dcf10=DCF10):
    """Run one system in memory and keep every intermediate artifact."""
    hp = spec.hyperparameters
    rank = hp.get("eigenvoice_rank")
    models, trace = {}, TrainTrace()

    adapted = None
    if spec.adaptation == "aeda":
        out = bundle.out_of_domain
        _labeled(out, spec, "adapted")
        net, trace = train_aeda(bundle.in_domain, out, spec.train_config(seed), n_jobs=n_jobs)
        adapted = adapt(net, out)
        models["aeda"] = net
    elif spec.adaptation == "dae":
        out = _labeled(bundle.out_of_domain, spec, "adapted")
        net, trace = train_dae_baseline(out, spec.train_config(seed))
        adapted = out.with_values(net.forward(out.X), Domain.ADAPTED)
        models["dae"] = net

    wsrc = {"in_domain": lambda: bundle.in_domain,
            "in_domain_full": lambda: _in_full(bundle, spec),
            "adapted": lambda: adapted}[spec.whitener_source]()
    whitener = fit_whitener(wsrc)
    models["whitener"] = whitener

    src = spec.wc_ac_source
    if src == "interpolated":
        ind = _labeled(bundle.in_domain, spec, "in-domain")
        out = _labeled(bundle.out_of_domain, spec, "out-of-domain")
        plda = interpolate_covariances(_plda_on(ind, whitener, rank),
                                       _plda_on(out, whitener, rank),
                                       float(hp.get("alpha_wc", 0.6)),
                                       float(hp.get("alpha_ac", 0.3)))
        source = out
    else:
        source = {"in_domain": lambda: bundle.in_domain,
                  "in_domain_full": lambda: _in_full(bundle, spec),
                  "out_of_domain": lambda: bundle.out_of_domain,
                  "adapted": lambda: adapted}[src]()
        source = _labeled(source, spec, src.replace("_", "-"))
        plda = _plda_on(source, whitener, rank)
    models["plda"] = plda

    scores = score_trials(plda, bundle.eval_set, bundle.trials, whitener)
    report = score_report(scores, bundle.trials.target_mask, dcf08, dcf10)
    return SystemOutcome(spec, report, scores, source, models, trace)


def scores_to_csv(trials, scores):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["enroll_id", "test_id", "target", "llr"])
    for e, t, y, s in zip(trials.enroll_ids, trials.test_ids, trials.targets, scores):
        w.writerow([e, t, int(y), repr(float(s))])
    return buf.getvalue()


def load_scores(path):
    """Read a score file back into ``(scores, targets)``."""
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        if next(reader, None) != ["enroll_id", "test_id", "target", "llr"]:
            raise SchemaError(f"{path}: bad score file header")
        rows = list(reader)
    try:
        scores = np.array([float(r[3]) for r in rows])
        targets = np.array([r[2] == "1" for r in rows])
    except (IndexError, ValueError) as exc:
        raise SchemaError(f"{path}: malformed score row: {exc}") from None
    return scores, targets


def _dump_json(obj, path):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, sort_keys=True, indent=2)
        f.write("\n")


def persist_outcome(outcome, run_dir, bundle, seed):
    os.makedirs(os.path.join(run_dir, "models"), exist_ok=True)
    echo = outcome.spec.to_dict()
    _dump_json({"spec": echo, "seed": int(seed), "checksums": bundle.checksums()},
               os.path.join(run_dir, "spec.json"))
    for kind, model in sorted(outcome.models.items()):
        with open(os.path.join(run_dir, "models", f"{kind}.json"), "w", encoding="utf-8") as f:
            f.write(dumps_model(model, echo, int(seed)))
    with open(os.path.join(run_dir, "scores.csv"), "w", encoding="utf-8", newline="") as f:
        f.write(scores_to_csv(bundle.trials, outcome.scores))
    _dump_json(outcome.report.to_dict(), os.path.join(run_dir, "report.json"))
    with open(os.path.join(run_dir, "trace.csv"), "w", encoding="utf-8", newline="") as f:
        f.write(outcome.trace.to_csv())


def run_system(spec, bundle, run_dir=None, seed=0, n_jobs=1, dcf08=DCF08, dcf10=DCF10):
    """Run one system end to end; artifacts go to ``run_dir`` when given."""
    outcome = execute_system(spec, bundle, seed, n_jobs, dcf08, dcf10)
    if run_dir is not None:
        persist_outcome(outcome, run_dir, bundle, seed)
    return outcome.report


def report_from_run_dir(run_dir, dcf08=DCF08, dcf10=DCF10):
    """Recompute a system's report from its persisted scores."""
    scores, targets = load_scores(os.path.join(run_dir, "scores.csv"))
    return score_report(scores, targets, dcf08, dcf10)


@dataclass
class ComparisonReport:
    suite: str
    seed: int
    checksums: dict
    systems: dict
    assertions: list

    @property
    def passed(self):
        return all(a["passed"] for a in self.assertions)

    def report(self, name):
        return self.systems[name]["report"]

    def to_dict(self):
        return {"suite": self.suite, "seed": self.seed, "checksums": self.checksums,
                "systems": {n: {"spec": b["spec"].to_dict(), "report": b["report"].to_dict(),
                                "variability": b["variability"]}
                            for n, b in self.systems.items()},
                "assertions": self.assertions, "passed": self.passed}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def run_comparison(suite, bundle, out_dir=None, seed=0, n_jobs=1, dcf08=DCF08, dcf10=DCF10):
    """Run every system of ``suite`` on ``bundle`` and evaluate its assertions.

    Systems run one after another with the same seed. With ``out_dir`` each
    system gets a run directory under ``out_dir/systems/<name>`` and the
    comparison is written to ``out_dir/report.json``.
    """
    if isinstance(suite, SystemSpec):
        suite = Suite(suite.name, (suite,))
    elif not isinstance(suite, Suite):
        suite = Suite("suite", tuple(suite))
    before = bundle.checksums()
    systems = {}
    for spec in suite.systems:
        outcome = execute_system(spec, bundle, seed, n_jobs, dcf08, dcf10)
        if out_dir is not None:
            persist_outcome(outcome, os.path.join(out_dir, "systems", spec.name), bundle, seed)
        systems[spec.name] = {"spec": spec, "report": outcome.report,
                              "variability": variability_stats(outcome.plda_source).to_dict()}
    if bundle.checksums() != before:
        raise RuntimeError("input data changed during the comparison")
    reports = {n: b["report"] for n, b in systems.items()}
    verdicts = [a.evaluate(reports) for a in suite.assertions]
    comparison = ComparisonReport(suite.name, int(seed), before, systems, verdicts)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as f:
            f.write(comparison.to_json())
    return comparison
