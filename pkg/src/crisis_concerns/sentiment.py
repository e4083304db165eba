"""Signed-lexicon sentiment scoring and the category x sentiment matrix."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .activity.labels import ACTIVITY_LABELS, label_index
from .errors import DataError
from .ingest import load_word_list

SENTIMENT_CLASSES = ("negative", "neutral", "positive")


@dataclass(frozen=True)
class Lexicon:
    weights: dict
    negators: frozenset = frozenset()
    pos_threshold: float = 0.5
    neg_threshold: float = -0.5

    def __post_init__(self):
        if not self.neg_threshold < 0 < self.pos_threshold:
            raise ValueError("thresholds must satisfy neg < 0 < pos")
        if not all(math.isfinite(w) for w in self.weights.values()):
            raise ValueError("lexicon weights must be finite")


def read_lexicon_csv(path=None) -> dict:
    if path is None:
        fh = resources.files("crisis_concerns.data").joinpath("lexicon.csv").open("r", encoding="utf-8")
    else:
        fh = open(path, newline="", encoding="utf-8")
    with fh:
        reader = csv.reader(fh)
        if next(reader, None) != ["word", "weight"]:
            raise DataError("lexicon header must be word,weight")
        weights = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                weights[row[0].strip().lower()] = float(row[1])
            except (IndexError, ValueError) as exc:
                raise DataError(f"lexicon line {lineno}: {exc}") from exc
    return weights


def load_lexicon(path=None, negators: Optional[Iterable[str]] = None, pos_threshold=0.5, neg_threshold=-0.5) -> Lexicon:
    neg = load_word_list(name="negators.txt") if negators is None else frozenset(w.lower() for w in negators)
    return Lexicon(read_lexicon_csv(path), neg, pos_threshold, neg_threshold)


def score_post(tokens: Sequence[str], lexicon: Lexicon):
    """``(raw, class)``: summed weights, a weight flipped when the previous
    token is a negator."""
    raw = 0.0
    prev = None
    for tok in tokens:
        w = lexicon.weights.get(tok)
        if w is not None:
            raw += -w if prev in lexicon.negators else w
        prev = tok
    if raw > lexicon.pos_threshold:
        cls = "positive"
    elif raw < lexicon.neg_threshold:
        cls = "negative"
    else:
        cls = "neutral"
    return raw, cls


@dataclass
class CategorySentimentMatrix:
    counts: np.ndarray = field(default_factory=lambda: np.zeros((len(ACTIVITY_LABELS), 3), dtype=np.int64))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def row_sums(self) -> dict:
        return {lab: int(self.counts[i].sum()) for i, lab in enumerate(ACTIVITY_LABELS)}

    def rows(self):
        for i, lab in enumerate(ACTIVITY_LABELS):
            yield (lab, *(int(v) for v in self.counts[i]))

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["label", *SENTIMENT_CLASSES])
            w.writerows(self.rows())

    @classmethod
    def read_csv(cls, path) -> "CategorySentimentMatrix":
        m = cls()
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            if next(reader) != ["label", *SENTIMENT_CLASSES]:
                raise DataError("sentiment matrix header mismatch")
            for row in reader:
                m.counts[label_index(row[0])] = [int(v) for v in row[1:]]
        return m


def aggregate_matrix(pairs: Iterable) -> CategorySentimentMatrix:
    """Count ``(activity_label, sentiment_class)`` pairs into the 8x3 matrix."""
    m = CategorySentimentMatrix()
    for label, sent in pairs:
        m.counts[label_index(label), SENTIMENT_CLASSES.index(sent)] += 1
    return m


def default_lexicon_path() -> Path:
    return Path(str(resources.files("crisis_concerns.data").joinpath("lexicon.csv")))
