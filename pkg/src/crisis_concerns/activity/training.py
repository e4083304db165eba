"""Supervised training of the activity encoder, checkpoints, corpus labelling."""

from __future__ import annotations

import json
import math
import struct
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from ..errors import ConfigError, DataError, NumericFault
from ..metrics import EvalReport, evaluate_predictions
from ..rng import derive_rng
from .encoder import EncoderConfig, backward, check_params, cross_entropy, forward, init_params
from .labels import ACTIVITY_LABELS, NUM_CLASSES, label_index
from .vocab import TokenSequence, Vocabulary, tokenize

CHECKPOINT_MAGIC = b"CCENCODR"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class OptimizerSettings:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 30
    batch_size: int = 16
    holdout_fraction: float = 0.2

    def __post_init__(self):
        if not (self.learning_rate > 0 and math.isfinite(self.learning_rate)):
            raise ConfigError("learning_rate must be a positive finite number")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if not 0 <= self.holdout_fraction < 1:
            raise ConfigError("holdout_fraction must lie in [0, 1)")


class Adam:
    def __init__(self, params: dict, settings: OptimizerSettings):
        self.s = settings
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict):
        s = self.s
        self.t += 1
        c1 = 1.0 - s.beta1**self.t
        c2 = 1.0 - s.beta2**self.t
        for k in params:
            g = grads[k]
            self.m[k] = s.beta1 * self.m[k] + (1 - s.beta1) * g
            self.v[k] = s.beta2 * self.v[k] + (1 - s.beta2) * g * g
            params[k] -= s.learning_rate * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + s.eps)


def _stack(seqs: Sequence[TokenSequence]):
    ids = np.vstack([s.ids for s in seqs])
    mask = np.vstack([s.attention_mask for s in seqs])
    seg = np.vstack([s.segment_ids for s in seqs])
    return ids, mask, seg


def predict_proba(params, cfg: EncoderConfig, seqs: Sequence[TokenSequence], batch_size=256):
    out = np.zeros((len(seqs), cfg.num_classes))
    for start in range(0, len(seqs), batch_size):
        ids, mask, seg = _stack(seqs[start : start + batch_size])
        out[start : start + len(ids)], _ = forward(params, cfg, ids, mask, seg)
    return out


def holdout_split(labels: np.ndarray, fraction: float, seed: int):
    """Stratified (train_idx, heldout_idx); singleton classes stay in training."""
    rng = derive_rng(seed, "holdout")
    train, held = [], []
    for c in range(NUM_CLASSES):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(len(idx))]
        n_held = int(math.floor(fraction * len(idx) + 0.5)) if len(idx) > 1 else 0
        n_held = min(n_held, len(idx) - 1)
        held.extend(idx[:n_held])
        train.extend(idx[n_held:])
    return np.sort(np.asarray(train, dtype=np.int64)), np.sort(np.asarray(held, dtype=np.int64))


def train_classifier(labeled, config: EncoderConfig, settings: OptimizerSettings = OptimizerSettings(), seed: int = 0):
    """Fit encoder weights by minibatch Adam on mean cross-entropy.

    ``labeled`` is a sequence of ``(TokenSequence, label)`` pairs.  Returns
    ``(params, log, report)`` where ``log`` holds one dict per epoch (epoch 0
    is the loss at initialization) and ``report`` evaluates the held-out split,
    or the training split when ``holdout_fraction`` is 0.
    """
    if not labeled:
        raise DataError("no labeled examples")
    seqs = [s for s, _ in labeled]
    y = np.asarray([label_index(lab) for _, lab in labeled], dtype=np.int64)
    for s in seqs:
        if len(s.ids) != config.max_len:
            raise ConfigError(f"token sequences must have length max_len={config.max_len}")
        if s.ids.max() >= config.vocab_size:
            raise ConfigError("token id exceeds vocab_size")
    tr, held = holdout_split(y, settings.holdout_fraction, seed)
    missing = sorted(set(range(NUM_CLASSES)) - set(y[tr].tolist()))
    if missing:
        names = ", ".join(ACTIVITY_LABELS[m] for m in missing)
        raise DataError(f"training split lacks examples of: {names}")

    params = init_params(config, derive_rng(seed, "init"))
    ids, mask, seg = _stack(seqs)
    ids_tr, mask_tr, seg_tr, y_tr = ids[tr], mask[tr], seg[tr], y[tr]
    opt = Adam(params, settings)
    order_rng = derive_rng(seed, "batches")
    drop_rng = derive_rng(seed, "dropout")

    probs = predict_proba(params, config, [seqs[i] for i in tr])
    init_loss, _ = cross_entropy(probs, y_tr)
    log = [{"epoch": 0, "loss": init_loss, "train_accuracy": float(np.mean(probs.argmax(1) == y_tr))}]
    for epoch in range(1, settings.epochs + 1):
        order = order_rng.permutation(len(tr))
        losses, weights = [], []
        for start in range(0, len(order), settings.batch_size):
            b = order[start : start + settings.batch_size]
            p, cache = forward(params, config, ids_tr[b], mask_tr[b], seg_tr[b], train=True, rng=drop_rng)
            loss, dlogits = cross_entropy(p, y_tr[b])
            if not math.isfinite(loss):
                raise NumericFault(f"training loss diverged at epoch {epoch}")
            grads = backward(params, config, cache, dlogits)
            opt.step(params, grads)
            losses.append(loss)
            weights.append(len(b))
        train_pred = predict_proba(params, config, [seqs[i] for i in tr]).argmax(1)
        log.append(
            {
                "epoch": epoch,
                "loss": float(np.average(losses, weights=weights)),
                "train_accuracy": float(np.mean(train_pred == y_tr)),
            }
        )
    eval_idx = held if len(held) else tr
    pred = predict_proba(params, config, [seqs[i] for i in eval_idx]).argmax(1)
    report = evaluate_predictions(y[eval_idx], pred, ACTIVITY_LABELS)
    report.extra["split"] = "heldout" if len(held) else "train"
    return params, log, report


# ---------------------------------------------------------------------------
# Model bundle and checkpoint


@dataclass
class ActivityModel:
    config: EncoderConfig
    vocab: Vocabulary
    params: dict
    optimizer: OptimizerSettings = None

    def sequence(self, tokens) -> TokenSequence:
        return tokenize(tokens, self.vocab, self.config.max_len)

    def classify_tokens(self, token_lists):
        seqs = [self.sequence(t) for t in token_lists]
        if not seqs:
            return np.zeros(0, dtype=np.int64), np.zeros((0, self.config.num_classes))
        probs = predict_proba(self.params, self.config, seqs)
        return probs.argmax(axis=1), probs


def save_checkpoint(model: ActivityModel, path):
    """Binary checkpoint.

    Layout: 8-byte magic ``CCENCODR``; uint32 LE format version; uint64 LE
    header length ``h``; ``h`` bytes of UTF-8 JSON (config, optimizer,
    vocabulary entries, label order, tensor index); then every tensor as
    C-order float64 little-endian, at the byte offsets given in the index
    (relative to the end of the header).
    """
    check_params(model.params, model.config)
    index, offset = [], 0
    names = sorted(model.params)
    for name in names:
        arr = model.params[name]
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 8
    header = json.dumps(
        {
            "config": model.config.to_dict(),
            "optimizer": asdict(model.optimizer) if model.optimizer else None,
            "vocab": model.vocab.entries,
            "labels": list(ACTIVITY_LABELS),
            "tensors": index,
        },
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        for name in names:
            fh.write(np.ascontiguousarray(model.params[name], dtype="<f8").tobytes())


def load_checkpoint(path) -> ActivityModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: not an encoder checkpoint")
    version, hlen = struct.unpack_from("<IQ", blob, 8)
    if version != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    start = 8 + struct.calcsize("<IQ")
    header = json.loads(blob[start : start + hlen].decode("utf-8"))
    if header["labels"] != list(ACTIVITY_LABELS):
        raise DataError(f"{path}: label order mismatch")
    data = start + hlen
    params = {}
    for t in header["tensors"]:
        count = int(np.prod(t["shape"])) if t["shape"] else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=data + t["offset"])
        params[t["name"]] = arr.astype(np.float64).reshape(t["shape"])
    config = EncoderConfig(**header["config"])
    opt = OptimizerSettings(**header["optimizer"]) if header.get("optimizer") else None
    model = ActivityModel(config, Vocabulary(header["vocab"]), params, opt)
    check_params(params, config)
    return model


def classify_corpus(model: ActivityModel, posts):
    """Label each post (argmax, ties to the smaller index) and tabulate.

    ``posts`` are objects with ``id`` and ``tokens``.  Returns
    ``(assignments, table)`` where ``table`` rows are
    ``(label, count, percent)`` in canonical order.
    """
    posts = list(posts)
    labels, probs = model.classify_tokens([p.tokens for p in posts])
    assignments = [
        {"id": p.id, "label": ACTIVITY_LABELS[int(k)], "probability": float(probs[i, k])}
        for i, (p, k) in enumerate(zip(posts, labels))
    ]
    return assignments, distribution_table([a["label"] for a in assignments])


def distribution_table(labels: Sequence[str]):
    counts = Counter(labels)
    total = len(labels)
    if total == 0:
        return []
    return [
        (lab, counts.get(lab, 0), 100.0 * counts.get(lab, 0) / total)
        for lab in ACTIVITY_LABELS
    ]


def evaluate_model(model: ActivityModel, token_lists, labels) -> EvalReport:
    pred, _ = model.classify_tokens(token_lists)
    return evaluate_predictions([label_index(l) for l in labels], pred, ACTIVITY_LABELS)
