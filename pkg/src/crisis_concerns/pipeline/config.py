"""Strict JSON run configuration.

Unknown keys are errors, every violation is collected before reporting, and
relative paths resolve against the directory holding the config file.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

from ..activity.encoder import EncoderConfig
from ..activity.training import OptimizerSettings
from ..choice.model import EstimationSettings
from ..classifiers import ALGORITHMS
from ..errors import ConfigError
from ..names import resolve_hyperparameters
from ..rng import SEED_MASK

REQUIRED = object()
INPUT_KEYS = (
    "posts",
    "geography",
    "socio",
    "ssa_names",
    "census_surnames",
    "labeled_tweets",
    "mnl_spec",
)
OPTIONAL_INPUT_KEYS = ("lexicon", "stopwords", "negators", "relevance_rules")


def _enc_defaults():
    d = EncoderConfig().to_dict()
    d.pop("num_classes")
    return d


def _opt_defaults():
    return {f.name: getattr(OptimizerSettings(), f.name) for f in fields(OptimizerSettings)}


def _mnl_defaults():
    s = EstimationSettings()
    return {"max_iter": s.max_iter, "tol": s.tol, "ridge": s.ridge}


# leaf spec: (kind, default)
SCHEMA = {
    "seed": ("int", REQUIRED),
    "output_dir": ("path", "out"),
    "inputs": {
        **{k: ("file", REQUIRED) for k in INPUT_KEYS},
        **{k: ("file?", None) for k in OPTIONAL_INPUT_KEYS},
    },
    "cleaning": {"lemmatize": ("bool", True), "relevance_rules": ("strlist?", None)},
    "names": {
        "gender_algorithm": ("str", "RandomForest"),
        "race_algorithm": ("str", "LinearSVM"),
        "algorithms": ("strlist", list(ALGORITHMS)),
        "cv_folds": ("int", 10),
        "test_fraction": ("number", 0.3),
        "hyperparameters": ("dict", {}),
    },
    "encoder": {k: ("number" if isinstance(v, float) else "int", v) for k, v in _enc_defaults().items()},
    "optimizer": {k: ("number" if isinstance(v, float) else "int", v) for k, v in _opt_defaults().items()},
    "sentiment": {
        "pos_threshold": ("number", 0.5),
        "neg_threshold": ("number", -0.5),
        "negators": ("strlist?", None),
    },
    "mnl": {k: ("number" if isinstance(v, float) else "int", v) for k, v in _mnl_defaults().items()},
}


def _check_leaf(kind, value, key, errors):
    base = kind.rstrip("?")
    if kind.endswith("?") and value is None:
        return
    ok = {
        "int": isinstance(value, int) and not isinstance(value, bool),
        "number": isinstance(value, (int, float)) and not isinstance(value, bool),
        "bool": isinstance(value, bool),
        "str": isinstance(value, str),
        "path": isinstance(value, str) and value != "",
        "file": isinstance(value, str) and value != "",
        "strlist": isinstance(value, list) and all(isinstance(v, str) for v in value),
        "dict": isinstance(value, dict),
    }[base]
    if not ok:
        errors.append(f"{key}: expected {base}, got {type(value).__name__}")


def _walk(schema, doc, prefix, errors, out):
    if not isinstance(doc, dict):
        errors.append(f"{prefix or 'config'}: expected an object")
        return
    for key in sorted(set(doc) - set(schema)):
        errors.append(f"{prefix}{key}: unknown key")
    for key, spec in schema.items():
        full = prefix + key
        if isinstance(spec, dict):
            sub = {}
            _walk(spec, doc.get(key, {}), full + ".", errors, sub)
            out[key] = sub
            continue
        kind, default = spec
        if key not in doc:
            if default is REQUIRED:
                errors.append(f"{full}: required key missing")
                continue
            out[key] = copy.deepcopy(default)
            continue
        _check_leaf(kind, doc[key], full, errors)
        out[key] = doc[key]


@dataclass
class PipelineConfig:
    values: dict
    base_dir: Path

    @property
    def seed(self) -> int:
        return self.values["seed"]

    @property
    def output_dir(self) -> Path:
        return self.base_dir / self.values["output_dir"]

    def input_path(self, key) -> Optional[Path]:
        v = self.values["inputs"][key]
        return None if v is None else self.base_dir / v

    def input_paths(self) -> dict:
        return {k: self.input_path(k) for k in (*INPUT_KEYS, *OPTIONAL_INPUT_KEYS) if self.input_path(k)}

    @property
    def encoder(self) -> EncoderConfig:
        return EncoderConfig(**self.values["encoder"])

    @property
    def optimizer(self) -> OptimizerSettings:
        return OptimizerSettings(**self.values["optimizer"])

    @property
    def estimation(self) -> EstimationSettings:
        return EstimationSettings(**self.values["mnl"])

    def hyperparameters(self, algorithm) -> dict:
        return resolve_hyperparameters(algorithm, self.values["names"]["hyperparameters"].get(algorithm))

    def canonical(self) -> dict:
        """Values with input paths reduced to file names (no machine paths)."""
        doc = copy.deepcopy(self.values)
        doc.pop("output_dir")
        doc["inputs"] = {k: (None if v is None else os.path.basename(v)) for k, v in doc["inputs"].items()}
        return doc

    def digest(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


def _semantic_checks(cfg: PipelineConfig, errors):
    v = cfg.values
    seed = v.get("seed")
    if isinstance(seed, int) and not 0 <= seed <= SEED_MASK:
        errors.append("seed: must be a 64-bit unsigned integer")
    for key in (*INPUT_KEYS, *OPTIONAL_INPUT_KEYS):
        p = v["inputs"].get(key)
        if isinstance(p, str) and p and not (cfg.base_dir / p).is_file():
            errors.append(f"inputs.{key}: file not found: {p}")
    names = v["names"]
    algos = names.get("algorithms")
    for key in ("gender_algorithm", "race_algorithm"):
        a = names.get(key)
        if isinstance(a, str) and a not in ALGORITHMS:
            errors.append(f"names.{key}: unknown algorithm {a!r}")
    if isinstance(algos, list):
        for a in algos:
            if a not in ALGORITHMS:
                errors.append(f"names.algorithms: unknown algorithm {a!r}")
    if isinstance(names.get("cv_folds"), int) and names["cv_folds"] < 2:
        errors.append("names.cv_folds: must be >= 2")
    tf = names.get("test_fraction")
    if isinstance(tf, (int, float)) and not 0 < tf < 1:
        errors.append("names.test_fraction: must lie in (0, 1)")
    if isinstance(names.get("hyperparameters"), dict):
        for a, hp in names["hyperparameters"].items():
            try:
                resolve_hyperparameters(a, hp if isinstance(hp, dict) else None)
            except ConfigError as exc:
                errors.append(f"names.hyperparameters: {exc}")
    for section, build in (("encoder", lambda: cfg.encoder), ("optimizer", lambda: cfg.optimizer)):
        try:
            build()
        except (ConfigError, TypeError) as exc:
            errors.append(f"{section}: {exc}")
    m = v["mnl"]
    if isinstance(m.get("max_iter"), int) and m["max_iter"] < 1:
        errors.append("mnl.max_iter: must be >= 1")
    if isinstance(m.get("tol"), (int, float)) and not m["tol"] > 0:
        errors.append("mnl.tol: must be > 0")
    if isinstance(m.get("ridge"), (int, float)) and m["ridge"] < 0:
        errors.append("mnl.ridge: must be >= 0")
    s = v["sentiment"]
    if isinstance(s.get("neg_threshold"), (int, float)) and isinstance(s.get("pos_threshold"), (int, float)):
        if not s["neg_threshold"] < 0 < s["pos_threshold"]:
            errors.append("sentiment: thresholds must satisfy neg < 0 < pos")


def apply_overrides(doc: dict, overrides) -> dict:
    """Set dotted keys (``encoder.model_dim``) on a copy of ``doc``.

    Values are parsed as JSON when possible, else kept as strings.  String
    values for input paths given on the command line resolve against the
    current directory.
    """
    doc = copy.deepcopy(doc)
    for key, raw in overrides:
        key = key.replace("-", "_")
        try:
            value = json.loads(raw)
        except (json.JSONDecodeError, TypeError):
            value = raw
        parts = key.split(".")
        if parts[0] in ("inputs", "output_dir") and isinstance(value, str):
            value = str(Path(value).resolve())
        node = doc
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--{key}: {p} is not a section")
        node[parts[-1]] = value
    return doc


def validate_document(doc, base_dir) -> tuple:
    """``(config, errors)``; ``config`` is None when errors is non-empty."""
    errors: list = []
    values: dict = {}
    _walk(SCHEMA, doc, "", errors, values)
    if errors:
        return None, errors
    cfg = PipelineConfig(values, Path(base_dir))
    _semantic_checks(cfg, errors)
    return (None, errors) if errors else (cfg, [])


def validate_config(path, overrides=()) -> tuple:
    """Load, override and validate; returns ``(config, errors)``."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text("utf-8"))
    except OSError as exc:
        return None, [f"cannot read config: {exc}"]
    except json.JSONDecodeError as exc:
        return None, [f"config is not valid JSON: {exc}"]
    try:
        doc = apply_overrides(doc, overrides)
    except ConfigError as exc:
        return None, [str(exc)]
    return validate_document(doc, path.resolve().parent)


def load_config(path, overrides=()) -> PipelineConfig:
    cfg, errors = validate_config(path, overrides)
    if errors:
        err = ConfigError("invalid configuration:\n  " + "\n  ".join(errors))
        err.errors = errors
        raise err
    return cfg
