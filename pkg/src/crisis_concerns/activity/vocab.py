"""Subword vocabulary construction and WordPiece-style tokenization."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from ..errors import ConfigError

PAD, UNK, CLS = "[PAD]", "[UNK]", "[CLS]"
RESERVED = (PAD, UNK, CLS)
PAD_ID, UNK_ID, CLS_ID = 0, 1, 2
CONT = "##"


class Vocabulary:
    def __init__(self, entries: Sequence[str]):
        entries = list(entries)
        if tuple(entries[:3]) != RESERVED:
            raise ValueError("vocabulary must start with [PAD], [UNK], [CLS]")
        if len(set(entries)) != len(entries):
            raise ValueError("vocabulary entries must be unique")
        self.entries = entries
        self.index = {piece: i for i, piece in enumerate(entries)}

    def __len__(self):
        return len(self.entries)

    def __contains__(self, piece):
        return piece in self.index

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.entries == other.entries

    def id(self, piece: str) -> int:
        return self.index.get(piece, UNK_ID)


def _merge(a: str, b: str) -> str:
    return a + b[len(CONT):]


def build_vocab(corpus: Iterable[Sequence[str]], target_size: int) -> Vocabulary:
    """Greedy frequency-ranked pair merging over character splits.

    Words start as ``c, ##c, ##c, ...``.  Each round merges the most frequent
    adjacent pair (ties: lexicographically smallest pair) and appends the new
    piece, until ``target_size`` is reached or no pair remains.
    """
    word_freq = Counter(w for doc in corpus for w in doc if w)
    if not word_freq:
        raise ConfigError("cannot build a vocabulary from an empty corpus")
    splits = {w: [w[0]] + [CONT + c for c in w[1:]] for w in word_freq}
    alphabet = sorted({s for sym in splits.values() for s in sym})
    if target_size < len(RESERVED) + len(alphabet):
        raise ConfigError(
            f"target_size {target_size} < {len(RESERVED) + len(alphabet)} "
            "(reserved tokens + observed characters)"
        )
    entries = list(RESERVED) + alphabet
    known = set(entries)
    while len(entries) < target_size:
        pairs = Counter()
        for w, sym in splits.items():
            f = word_freq[w]
            for a, b in zip(sym, sym[1:]):
                pairs[(a, b)] += f
        if not pairs:
            break
        top = max(pairs.values())
        a, b = min(p for p, c in pairs.items() if c == top)
        new = _merge(a, b)
        for w, sym in splits.items():
            if len(sym) < 2:
                continue
            out, i = [], 0
            while i < len(sym):
                if i + 1 < len(sym) and sym[i] == a and sym[i + 1] == b:
                    out.append(new)
                    i += 2
                else:
                    out.append(sym[i])
                    i += 1
            splits[w] = out
        if new not in known:
            known.add(new)
            entries.append(new)
    return Vocabulary(entries)


@dataclass
class TokenSequence:
    ids: np.ndarray
    attention_mask: np.ndarray
    segment_ids: np.ndarray

    @property
    def length(self) -> int:
        return int(self.attention_mask.sum())


def wordpiece(word: str, vocab: Vocabulary) -> list:
    """Greedy longest-match-first split; an unmatchable word is ``[UNK]``."""
    pieces, start = [], 0
    while start < len(word):
        end = len(word)
        found = None
        while end > start:
            piece = word[start:end] if start == 0 else CONT + word[start:end]
            if piece in vocab:
                found = piece
                break
            end -= 1
        if found is None:
            return [UNK_ID]
        pieces.append(vocab.index[found])
        start = end
    return pieces


def tokenize(words: Sequence[str], vocab: Vocabulary, max_len: int) -> TokenSequence:
    if max_len < 2:
        raise ConfigError("max_len must be >= 2")
    ids = [CLS_ID]
    for w in words:
        ids.extend(wordpiece(w, vocab))
        if len(ids) >= max_len:
            break
    ids = ids[:max_len]
    n = len(ids)
    arr = np.full(max_len, PAD_ID, dtype=np.int64)
    arr[:n] = ids
    mask = np.zeros(max_len, dtype=np.int64)
    mask[:n] = 1
    return TokenSequence(arr, mask, np.zeros(max_len, dtype=np.int64))
