"""JSON model container shared by every command.

Layout::

    {"format": "aeda-model/1", "kind": "aeda" | "dae" | "plda" | "whitener",
     "dims": {...}, "parameters": {...}, "config_echo": {...}, "seed": int}

Matrices are nested arrays of round-trip-safe decimals, so containers are
bit-exact and byte-stable across runs.
"""

import json

from .exceptions import SchemaError
from .network import AedaModel, DaeBaselineModel
from .plda import PldaModel
from .preprocess import WhiteningTransform

MODEL_FORMAT = "aeda-model/1"

_KINDS = {
    "aeda": AedaModel,
    "dae": DaeBaselineModel,
    "plda": PldaModel,
    "whitener": WhiteningTransform,
}


def kind_of(model):
    for kind, cls in _KINDS.items():
        if isinstance(model, cls):
            return kind
    raise TypeError(f"cannot store objects of type {type(model).__name__}")


def _dims(model):
    if isinstance(model, AedaModel):
        return {"input_dim": model.input_dim, "hidden_dim": model.hidden_dim}
    if isinstance(model, DaeBaselineModel):
        return {"input_dim": model.input_dim, "hidden_dim": model.hidden_dim}
    return {"input_dim": model.dimension}


def to_container(model, config_echo=None, seed=None):
    doc = {
        "format": MODEL_FORMAT,
        "kind": kind_of(model),
        "dims": _dims(model),
        "parameters": model.to_dict(),
        "config_echo": config_echo or {},
        "seed": seed,
    }
    if isinstance(model, AedaModel):
        doc["activation"] = model.activation
    return doc


def dumps_model(model, config_echo=None, seed=None):
    return json.dumps(to_container(model, config_echo, seed), sort_keys=True) + "\n"


def save_model(model, path, config_echo=None, seed=None):
    with open(path, "w", encoding="utf-8") as f:
        f.write(dumps_model(model, config_echo, seed))


def load_container(path):
    with open(path, encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise SchemaError(f"{path}: not an {MODEL_FORMAT} container")
    if doc.get("kind") not in _KINDS:
        raise SchemaError(f"{path}: unknown model kind {doc.get('kind')!r}")
    return doc


def load_model(path, kind=None):
    """Load a model object; ``kind`` restricts which kinds are accepted."""
    doc = load_container(path)
    if kind is not None and doc["kind"] not in ((kind,) if isinstance(kind, str) else kind):
        raise SchemaError(f"{path}: expected a {kind} model, found {doc['kind']}")
    try:
        return _KINDS[doc["kind"]].from_dict(doc["parameters"])
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"{path}: malformed parameters: {exc}") from None
