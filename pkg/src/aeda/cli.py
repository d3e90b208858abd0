"""Command-line frontend.

Every subcommand validates its whole configuration before writing anything,
so a rejected config leaves no partial outputs behind. Errors are reported on
stderr as one JSON object and mapped to the exit codes listed in ``--help``.
"""

import argparse
import json
import os
import sys
import tempfile
import warnings
from dataclasses import dataclass, field, fields

import numpy as np

from .container import load_model, save_model
from .datasets import (Domain, SynthConfig, TrialList, dumps_set, generate_synthetic,
                       load_set, subset_one_channel)
from .evaluation import DCF08, DCF10, DcfParams
from .exceptions import AedaError, ConfigError
from .network import AedaModel, TrainConfig, adapt, train_aeda, train_dae_baseline
from .pipeline import (DataBundle, Suite, SystemSpec, execute_system, persist_outcome,
                       run_comparison, shipped_suite)

EXIT_MISSING_FILE = 3
EXIT_ASSERTION = 9

EXIT_CODES = """\
exit codes:
  0  success
  1  other runtime error
  2  invalid configuration or command line
  3  missing input file
  4  malformed input file (schema violation)
  5  dimension mismatch between inputs
  6  training diverged (non-finite loss)
  7  iterative solver did not converge
  8  speaker labels required but absent
  9  compare --strict: an ordering assertion failed
"""

DATA_FILES = {
    "in_domain_full": "in_domain_full.jsonl",
    "in_domain": "in_domain.jsonl",
    "out_of_domain": "out_of_domain.jsonl",
    "eval": "eval.jsonl",
    "trials": "trials.csv",
}


def _dcf_from(d, default):
    if d is None:
        return default
    if not isinstance(d, dict):
        raise ConfigError("DCF parameters must be a JSON object")
    allowed = {f.name for f in fields(DcfParams)}
    if set(d) - allowed:
        raise ConfigError(f"unknown DCF keys: {sorted(set(d) - allowed)}")
    return DcfParams(**d)


@dataclass(frozen=True)
class RunConfig:
    """Top-level configuration file.

    Keys: ``synth`` (SynthConfig), ``train`` (TrainConfig used by ``train``),
    ``dcf08`` / ``dcf10`` (DcfParams), ``suite`` (shipped suite name, path or
    inline object), ``system`` (inline SystemSpec for ``eval``), ``seed``,
    ``threads`` and ``out``.
    """

    synth: SynthConfig = field(default_factory=SynthConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    dcf08: DcfParams = DCF08
    dcf10: DcfParams = DCF10
    suite: object = None
    system: object = None
    seed: int = 0
    threads: int = 1
    out: str = None

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("configuration must be a JSON object")
        allowed = {f.name for f in fields(cls)}
        unknown = set(d) - allowed
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        seed = d.get("seed", 0)
        threads = d.get("threads", 1)
        if not isinstance(seed, int) or isinstance(seed, bool):
            raise ConfigError("seed must be an integer")
        if not isinstance(threads, int) or threads < 1:
            raise ConfigError("threads must be a positive integer")
        suite = d.get("suite")
        if isinstance(suite, dict):
            suite = Suite.from_dict(suite)
        elif suite is not None and not isinstance(suite, str):
            raise ConfigError("suite must be a name, a path or an object")
        system = d.get("system")
        if system is not None:
            system = SystemSpec.from_dict(system)
        synth = d.get("synth", {})
        train = d.get("train", {})
        if not isinstance(synth, dict) or not isinstance(train, dict):
            raise ConfigError("synth and train must be JSON objects")
        return cls(SynthConfig.from_dict(synth), TrainConfig.from_dict(train),
                   _dcf_from(d.get("dcf08"), DCF08), _dcf_from(d.get("dcf10"), DCF10),
                   suite, system, seed, threads, d.get("out"))


class MissingFileError(AedaError):
    exit_code = EXIT_MISSING_FILE


def _need_file(path, what):
    if path is None:
        raise ConfigError(f"{what} path is required")
    if not os.path.isfile(path):
        raise MissingFileError(f"{what} not found: {path}")
    return path


def _read_config(args):
    data = {}
    if args.config is not None:
        with open(_need_file(args.config, "config file"), encoding="utf-8") as f:
            try:
                data = json.load(f)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{args.config}: not valid JSON: {exc}") from None
    cfg = RunConfig.from_dict(data)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        overrides["threads"] = args.threads
    if args.out is not None:
        overrides["out"] = args.out
    if overrides:
        cfg = RunConfig(**{**{f.name: getattr(cfg, f.name) for f in fields(cfg)}, **overrides})
    return cfg


def _atomic_write(path, text):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json_text(obj):
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _out_dir(cfg, default="."):
    return cfg.out if cfg.out is not None else default


# -- commands ----------------------------------------------------------------

def cmd_generate(cfg, out_dir):
    """Write synthetic in-domain (full and one-channel), out-of-domain and eval sets."""
    synth = SynthConfig.from_dict({**cfg.synth.to_dict(), "seed": cfg.seed})
    data = generate_synthetic(synth)
    texts = {
        DATA_FILES["in_domain_full"]: dumps_set(data.in_set),
        DATA_FILES["in_domain"]: dumps_set(subset_one_channel(data.in_set)),
        DATA_FILES["out_of_domain"]: dumps_set(data.out_set),
        DATA_FILES["eval"]: dumps_set(data.eval_set),
        DATA_FILES["trials"]: data.eval_trials.to_csv(),
        "synth_config.json": _json_text(synth.to_dict()),
    }
    for name, text in texts.items():
        _atomic_write(os.path.join(out_dir, name), text)
    return sorted(texts)


def cmd_train(cfg, in_path, out_path, model_out, kind="aeda", trace_out=None):
    """Train AEDA (or the DAE baseline) and write the model container and trace."""
    train = TrainConfig.from_dict({**cfg.train.to_dict(), "seed": cfg.seed})
    out_set = load_set(_need_file(out_path, "out-of-domain set"))
    if kind == "aeda":
        in_set = load_set(_need_file(in_path, "in-domain set"))
        model, trace = train_aeda(in_set, out_set, train, n_jobs=cfg.threads)
    elif kind == "dae":
        model, trace = train_dae_baseline(out_set, train)
    else:
        raise ConfigError(f"unknown model kind {kind!r}")
    save_model(model, model_out, {"train": train.to_dict()}, cfg.seed)
    trace_out = trace_out or os.path.splitext(model_out)[0] + ".trace.csv"
    _atomic_write(trace_out, trace.to_csv())
    return model_out, trace_out


def cmd_adapt(model_path, set_path, out_path):
    """Map a set through the trained network's out-of-domain branch."""
    model = load_model(_need_file(model_path, "model"), kind=("aeda", "dae"))
    eset = load_set(_need_file(set_path, "embedding set"))
    if isinstance(model, AedaModel):
        adapted = adapt(model, eset)
    else:
        adapted = eset.with_values(model.forward(eset.X), Domain.ADAPTED)
    _atomic_write(out_path, dumps_set(adapted))
    return out_path


def load_bundle(data_dir=None, **paths):
    """Assemble a :class:`DataBundle` from a ``generate`` directory and/or explicit paths."""
    resolved = {}
    for key, fname in DATA_FILES.items():
        p = paths.get(key)
        if p is None and data_dir is not None:
            p = os.path.join(data_dir, fname)
            if key == "in_domain_full" and not os.path.isfile(p):
                p = None
        resolved[key] = p
    sets = {}
    for key in ("in_domain", "out_of_domain", "eval"):
        sets[key] = load_set(_need_file(resolved[key], key.replace("_", "-") + " set"))
    full = None
    if resolved["in_domain_full"] is not None:
        full = load_set(_need_file(resolved["in_domain_full"], "full in-domain set"))
    trials = TrialList.load(_need_file(resolved["trials"], "trial list"))
    return DataBundle(sets["in_domain"], sets["out_of_domain"], sets["eval"], trials, full)


def _resolve_suite(ref):
    if isinstance(ref, Suite):
        return ref
    if ref is None:
        raise ConfigError("no suite given (use --suite or the config's 'suite' key)")
    if os.path.sep in ref or ref.endswith(".json"):
        return Suite.load(_need_file(ref, "suite file"))
    return shipped_suite(ref)


def cmd_eval(cfg, system, bundle, report_out=None, run_dir=None):
    """Run one system end to end; returns its ScoreReport."""
    outcome = execute_system(system, bundle, cfg.seed, cfg.threads, cfg.dcf08, cfg.dcf10)
    run_dir = run_dir or _out_dir(cfg, os.path.join(".", system.name))
    persist_outcome(outcome, run_dir, bundle, cfg.seed)
    if report_out is not None:
        _atomic_write(report_out, _json_text(outcome.report.to_dict()))
    return outcome.report


def cmd_compare(cfg, suite, bundle, report_out=None, out_dir=None):
    """Run a suite on one bundle; writes ``report.json`` and per-system run directories."""
    out_dir = out_dir or _out_dir(cfg, "compare-out")
    report = run_comparison(suite, bundle, out_dir, cfg.seed, cfg.threads,
                            cfg.dcf08, cfg.dcf10)
    if report_out is not None:
        _atomic_write(report_out, report.to_json())
    return report


# -- argument parsing ----------------------------------------------------------

def _global_flags(parser, suppress):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", metavar="PATH", default=default,
                        help="JSON run configuration (unknown keys are rejected)")
    parser.add_argument("--seed", type=int, metavar="INT", default=default,
                        help="master seed, overrides the config")
    parser.add_argument("--threads", type=int, metavar="INT", default=default,
                        help="cap on worker threads (default 1)")
    parser.add_argument("--out", metavar="DIR", default=default, help="output directory")


def _data_flags(parser):
    parser.add_argument("--data", metavar="DIR",
                        help="directory written by 'generate'; individual paths override it")
    parser.add_argument("--in-domain", metavar="PATH")
    parser.add_argument("--in-domain-full", metavar="PATH")
    parser.add_argument("--out-of-domain", metavar="PATH")
    parser.add_argument("--eval-set", metavar="PATH")
    parser.add_argument("--trials", metavar="PATH")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="aeda", description="Autoencoder domain adaptation for speaker embeddings.",
        epilog=EXIT_CODES, formatter_class=argparse.RawDescriptionHelpFormatter)
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_, description=help_, epilog=EXIT_CODES,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        _global_flags(p, suppress=True)
        return p

    add("generate", "write a synthetic benchmark to --out")

    p = add("train", "train an AEDA network or the DAE baseline")
    p.add_argument("--in-domain", metavar="PATH", help="unlabeled in-domain set (AEDA only)")
    p.add_argument("--out-of-domain", metavar="PATH", required=True)
    p.add_argument("--model-out", metavar="PATH", required=True)
    p.add_argument("--kind", choices=("aeda", "dae"), default="aeda")
    p.add_argument("--trace-out", metavar="PATH")

    p = add("adapt", "map a set through a trained network")
    p.add_argument("--model", metavar="PATH", required=True)
    p.add_argument("--set", metavar="PATH", required=True, dest="set_path")
    p.add_argument("--output", metavar="PATH", required=True)

    p = add("eval", "run one system end to end")
    p.add_argument("--system", metavar="PATH", help="SystemSpec JSON (else the config's 'system')")
    p.add_argument("--report", metavar="PATH")
    _data_flags(p)

    p = add("compare", "run a suite of systems and check its orderings")
    p.add_argument("--suite", metavar="NAME|PATH",
                   help="shipped suite name (table2, table3) or a suite JSON file")
    p.add_argument("--report", metavar="PATH")
    p.add_argument("--strict", action="store_true",
                   help="exit with code 9 when an ordering assertion fails")
    _data_flags(p)
    return parser


def _bundle_from_args(args, cfg):
    paths = {"in_domain": args.in_domain, "in_domain_full": args.in_domain_full,
             "out_of_domain": args.out_of_domain, "eval": args.eval_set,
             "trials": args.trials}
    if args.data is None and not any(paths.values()):
        synth = SynthConfig.from_dict({**cfg.synth.to_dict(), "seed": cfg.seed})
        return DataBundle.from_synthetic(generate_synthetic(synth))
    return load_bundle(args.data, **paths)


def _dispatch(args):
    cfg = _read_config(args)
    if args.command == "generate":
        files = cmd_generate(cfg, _out_dir(cfg))
        return {"written": files}, 0
    if args.command == "train":
        model_out, trace_out = cmd_train(cfg, args.in_domain, args.out_of_domain,
                                         args.model_out, args.kind, args.trace_out)
        return {"model": model_out, "trace": trace_out}, 0
    if args.command == "adapt":
        return {"written": cmd_adapt(args.model, args.set_path, args.output)}, 0
    if args.command == "eval":
        if args.system is not None:
            with open(_need_file(args.system, "system spec"), encoding="utf-8") as f:
                try:
                    system = SystemSpec.from_dict(json.load(f))
                except json.JSONDecodeError as exc:
                    raise ConfigError(f"{args.system}: not valid JSON: {exc}") from None
        elif cfg.system is not None:
            system = cfg.system
        else:
            raise ConfigError("no system given (use --system or the config's 'system' key)")
        bundle = _bundle_from_args(args, cfg)
        report = cmd_eval(cfg, system, bundle, args.report)
        return report.to_dict(), 0
    if args.command == "compare":
        suite = _resolve_suite(args.suite or cfg.suite)
        bundle = _bundle_from_args(args, cfg)
        report = cmd_compare(cfg, suite, bundle, args.report)
        summary = {"suite": report.suite, "passed": report.passed,
                   "eer": {n: b["report"].eer for n, b in report.systems.items()}}
        return summary, (EXIT_ASSERTION if args.strict and not report.passed else 0)
    raise ConfigError(f"unknown command {args.command!r}")


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            summary, code = _dispatch(args)
    except AedaError as exc:
        print(json.dumps({"error": type(exc).__name__, "exit_code": exc.exit_code,
                          "message": str(exc)}), file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        code = EXIT_MISSING_FILE if isinstance(exc, FileNotFoundError) else 1
        print(json.dumps({"error": type(exc).__name__, "exit_code": code,
                          "message": str(exc)}), file=sys.stderr)
        return code
    except (ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(json.dumps({"error": type(exc).__name__, "exit_code": 1,
                          "message": str(exc)}), file=sys.stderr)
        return 1
    print(json.dumps(summary, sort_keys=True))
    return code


if __name__ == "__main__":
    sys.exit(main())
