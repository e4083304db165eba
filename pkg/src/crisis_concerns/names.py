"""Gender and race inference from names via letter-count features.

Gender is learned from SSA first-name files (``name,sex,count``); race from
Census surname files (``name,rank,count,pct_white,pct_black,pct_api,
pct_hispanic``).  Every name becomes a 26-vector of a-z occurrence counts.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import statistics
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .classifiers import ALGORITHMS
from .errors import DataError, ValidationError
from .metrics import EvalReport, evaluate_predictions
from .rng import derive_rng

log = logging.getLogger(__name__)

ALPHABET = "abcdefghijklmnopqrstuvwxyz"
GENDER_CLASSES = ("Male", "Female")
RACE_CLASSES = ("Asian", "Black", "Hispanic", "White")
TASK_CLASSES = {"gender": GENDER_CLASSES, "race": RACE_CLASSES}
MODEL_FORMAT_VERSION = 1

DEFAULT_HYPERPARAMETERS = {
    "NaiveBayes": {"alpha": 1.0},
    "KNN": {"k": 5},
    "DecisionTree": {"max_depth": 12, "min_leaf": 5, "max_features": None},
    "RandomForest": {
        "n_trees": 100,
        "max_depth": 12,
        "min_leaf": 5,
        "max_features": "sqrt",
        "bootstrap": True,
    },
    "LinearSVM": {"epochs": 10, "lam": 1e-4, "eta0": 0.05},
}


class DegenerateModelError(DataError):
    pass


def letter_counts(name: str) -> np.ndarray:
    """Counts of a..z in ``name`` after lowercasing and dropping other chars."""
    counts = np.zeros(26, dtype=np.int64)
    for ch in name.lower():
        o = ord(ch) - 97
        if 0 <= o < 26:
            counts[o] += 1
    if not counts.any():
        raise ValidationError(f"name {name!r} has no a-z characters")
    return counts


@dataclass
class NameDataset:
    task: str
    names: list
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        if self.task not in TASK_CLASSES:
            raise ValueError(f"unknown task {self.task!r}")
        self.X = np.asarray(self.X, dtype=np.int64).reshape(-1, 26)
        self.y = np.asarray(self.y, dtype=np.int64)
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= len(self.classes)):
            raise ValueError("label outside the task's class set")

    @property
    def classes(self):
        return TASK_CLASSES[self.task]

    def __len__(self):
        return len(self.y)

    def subset(self, idx) -> "NameDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return NameDataset(self.task, [self.names[i] for i in idx], self.X[idx], self.y[idx])

    @classmethod
    def from_labeled(cls, task, pairs) -> "NameDataset":
        """Build from ``(name, label)`` pairs; unnormalizable names are skipped."""
        classes = TASK_CLASSES[task]
        names, rows, labels = [], [], []
        skipped = 0
        for name, label in pairs:
            try:
                rows.append(letter_counts(name))
            except ValidationError:
                skipped += 1
                continue
            names.append(name)
            labels.append(classes.index(label))
        if skipped:
            log.warning("excluded %d names without a-z characters", skipped)
        X = np.vstack(rows) if rows else np.zeros((0, 26), dtype=np.int64)
        return cls(task, names, X, np.asarray(labels, dtype=np.int64))


# ---------------------------------------------------------------------------
# Sources


def read_ssa_names(path) -> list:
    """Aggregate SSA yearly rows into one ``(name, label)`` per unique name.

    Names recorded under both sexes take the sex with the larger total count;
    exact ties are dropped.
    """
    totals = defaultdict(lambda: [0, 0])
    order = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (lineno == 1 and row[0].strip().lower() == "name"):
                continue
            try:
                name, sex, count = row[0].strip(), row[1].strip().upper(), int(row[2])
            except (IndexError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: malformed SSA row") from exc
            if sex not in ("M", "F"):
                raise DataError(f"{path}:{lineno}: sex must be M or F")
            key = name.lower()
            if key not in totals:
                order.append(key)
            totals[key][0 if sex == "M" else 1] += count
    pairs = []
    ties = 0
    for key in order:
        m, f = totals[key]
        if m == f:
            ties += 1
            continue
        pairs.append((key, "Male" if m > f else "Female"))
    if ties:
        log.info("dropped %d names with equal male/female counts", ties)
    return pairs


CENSUS_PCT_COLUMNS = {
    "Asian": "pct_api",
    "Black": "pct_black",
    "Hispanic": "pct_hispanic",
    "White": "pct_white",
}


def _pct(value: str) -> float:
    try:
        return float(value)
    except ValueError:
        # "(S)" marks suppressed small counts
        return 0.0


def read_census_surnames(path) -> list:
    """Map each surname to the race with the largest percentage.

    Accepts the published header spelling (``pctwhite``) as well as the
    underscored one (``pct_white``).  Ties go to the earlier class in
    ``RACE_CLASSES``.
    """
    pairs = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        resolved, missing = {}, []
        for cls, col in CENSUS_PCT_COLUMNS.items():
            alias = col.replace("_", "")
            if col in cols:
                resolved[cls] = col
            elif alias in cols:
                resolved[cls] = alias
            else:
                missing.append(col)
        if "name" not in cols or missing:
            raise DataError(f"{path}: census header lacks name/{'/'.join(missing)}")
        for row in reader:
            name = row["name"].strip()
            if not name or name.upper() == "ALL OTHER NAMES":
                continue
            pcts = [_pct(row[resolved[c]]) for c in RACE_CLASSES]
            pairs.append((name.lower(), RACE_CLASSES[int(np.argmax(pcts))]))
    return pairs


def load_dataset(task: str, path) -> NameDataset:
    reader = read_ssa_names if task == "gender" else read_census_surnames
    return NameDataset.from_labeled(task, reader(path))


# ---------------------------------------------------------------------------
# Splits


def _class_indices(y, n_classes, rng):
    out = []
    for c in range(n_classes):
        idx = np.flatnonzero(y == c)
        out.append(idx[rng.permutation(len(idx))])
    return out


def split_dataset(ds: NameDataset, seed: int, test_fraction: float = 0.3):
    """Stratified train/validation partition."""
    if len(ds) < 10:
        raise DataError("need at least 10 rows to split")
    rng = derive_rng(seed, "split")
    train, test = [], []
    for c, idx in enumerate(_class_indices(ds.y, len(ds.classes), rng)):
        n = len(idx)
        if n == 0:
            continue
        if n < 2:
            raise DataError(f"class {ds.classes[c]!r} has fewer than 2 rows; cannot stratify")
        n_test = min(n - 1, max(1, int(math.floor(test_fraction * n + 0.5))))
        test.extend(idx[:n_test])
        train.extend(idx[n_test:])
    return ds.subset(np.sort(train)), ds.subset(np.sort(test))


def stratified_folds(y, n_classes, k, seed) -> np.ndarray:
    """Fold id per row; each class is dealt round-robin after a seeded shuffle."""
    counts = np.bincount(y, minlength=n_classes)
    small = [c for c in range(n_classes) if 0 < counts[c] < k]
    if small:
        raise DataError(f"class index {small} has fewer than {k} rows for {k}-fold CV")
    rng = derive_rng(seed, "folds")
    fold = np.empty(len(y), dtype=np.int64)
    offset = 0
    for idx in _class_indices(y, n_classes, rng):
        fold[idx] = (np.arange(len(idx)) + offset) % k
        offset += len(idx)
    return fold


# ---------------------------------------------------------------------------
# Models


@dataclass
class NameClassifier:
    algorithm: str
    task: str
    model: object
    train_seed: int
    hyperparameters: dict = field(default_factory=dict)

    @property
    def class_set(self):
        return TASK_CLASSES[self.task]

    @property
    def oob_accuracy(self) -> Optional[float]:
        return getattr(self.model, "oob_accuracy", None)

    def predict_features(self, X):
        return self.model.predict(np.asarray(X, dtype=np.float64))

    def predict(self, name: str):
        labels, scores = self.predict_features(letter_counts(name)[None, :])
        return self.class_set[int(labels[0])], float(scores[0])

    def predict_many(self, names: Sequence[str]):
        """Predict a batch; unnormalizable names give ``(None, None)``."""
        rows, pos = [], []
        out = [(None, None)] * len(names)
        for i, name in enumerate(names):
            try:
                rows.append(letter_counts(name))
                pos.append(i)
            except ValidationError:
                pass
        if rows:
            labels, scores = self.predict_features(np.vstack(rows))
            for i, lab, sc in zip(pos, labels, scores):
                out[i] = (self.class_set[int(lab)], float(sc))
        return out

    def to_json(self) -> str:
        return json.dumps(
            {
                "format": "crisis_concerns.name_classifier",
                "version": MODEL_FORMAT_VERSION,
                "algorithm": self.algorithm,
                "task": self.task,
                "class_set": list(self.class_set),
                "train_seed": self.train_seed,
                "hyperparameters": self.hyperparameters,
                "parameters": self.model.get_state(),
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "NameClassifier":
        doc = json.loads(text)
        if doc.get("format") != "crisis_concerns.name_classifier":
            raise DataError("not a name-classifier model file")
        if doc.get("version") != MODEL_FORMAT_VERSION:
            raise DataError(f"unsupported model version {doc.get('version')}")
        if list(TASK_CLASSES[doc["task"]]) != doc["class_set"]:
            raise DataError("class set does not match task")
        model = ALGORITHMS[doc["algorithm"]].from_state(doc["parameters"])
        return cls(doc["algorithm"], doc["task"], model, doc["train_seed"], doc["hyperparameters"])


def resolve_hyperparameters(algorithm: str, overrides: Optional[dict] = None) -> dict:
    from .errors import ConfigError

    if algorithm not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {algorithm!r}; choose from {sorted(ALGORITHMS)}")
    params = dict(DEFAULT_HYPERPARAMETERS[algorithm])
    for key, val in (overrides or {}).items():
        if key not in params:
            raise ConfigError(f"{algorithm}: unknown hyperparameter {key!r}")
        params[key] = val
    return params


def train(ds: NameDataset, algorithm: str, hyperparameters=None, seed: int = 0) -> NameClassifier:
    params = resolve_hyperparameters(algorithm, hyperparameters)
    if len(np.unique(ds.y)) < 2:
        raise DegenerateModelError("training split contains a single class")
    model = ALGORITHMS[algorithm](**params)
    model.fit(ds.X, ds.y, len(ds.classes), seed)
    return NameClassifier(algorithm, ds.task, model, seed, params)


def evaluate(model: NameClassifier, test: NameDataset) -> EvalReport:
    labels, _ = model.predict_features(test.X)
    return evaluate_predictions(test.y, labels, test.classes, oob_accuracy=model.oob_accuracy)


@dataclass
class CVResult:
    folds: list
    mean_accuracy: float
    std_accuracy: float
    mean_macro_f1: float


def kfold_cv(ds: NameDataset, algorithm: str, k: int = 10, seed: int = 0, hyperparameters=None) -> CVResult:
    fold = stratified_folds(ds.y, len(ds.classes), k, seed)
    reports = []
    for j in range(k):
        tr = ds.subset(np.flatnonzero(fold != j))
        va = ds.subset(np.flatnonzero(fold == j))
        model = train(tr, algorithm, hyperparameters, seed)
        reports.append(evaluate(model, va))
    accs = [r.accuracy for r in reports]
    return CVResult(
        folds=reports,
        mean_accuracy=statistics.fmean(accs),
        std_accuracy=statistics.stdev(accs) if k > 1 else 0.0,
        mean_macro_f1=statistics.fmean(r.macro_f1 for r in reports),
    )
