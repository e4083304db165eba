"""Transformer encoder with a [CLS] softmax head, forward and backward in numpy.

Layers are post-norm: ``h = LN(x + MHA(x))``, ``out = LN(h + FFN(h))`` with
a tanh-approximated GELU in the feed-forward block.  Linear maps act on row
vectors (``y = x @ W + b``).  All arithmetic is float64.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ConfigError, NumericFault
from .labels import NUM_CLASSES

LN_EPS = 1e-12
INIT_STD = 0.02
_GELU_C = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class EncoderConfig:
    num_layers: int = 2
    num_heads: int = 2
    model_dim: int = 32
    ff_dim: int = 64
    max_len: int = 48
    vocab_size: int = 2000
    num_classes: int = NUM_CLASSES
    dropout: float = 0.1

    def __post_init__(self):
        problems = []
        if self.num_layers < 1:
            problems.append("num_layers must be >= 1")
        if self.num_heads < 1 or self.model_dim % self.num_heads:
            problems.append("model_dim must be divisible by num_heads")
        if self.max_len < 2:
            problems.append("max_len must be >= 2")
        if self.num_classes != NUM_CLASSES:
            problems.append(f"num_classes must be {NUM_CLASSES}")
        if self.vocab_size < 3 or self.ff_dim < 1:
            problems.append("vocab_size >= 3 and ff_dim >= 1 required")
        if not 0.0 <= self.dropout < 1.0:
            problems.append("dropout must lie in [0, 1)")
        if problems:
            raise ConfigError("; ".join(problems))

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads

    def to_dict(self):
        return asdict(self)


def parameter_shapes(cfg: EncoderConfig) -> dict:
    d, f = cfg.model_dim, cfg.ff_dim
    shapes = {
        "tok_emb": (cfg.vocab_size, d),
        "pos_emb": (cfg.max_len, d),
        "seg_emb": (2, d),
    }
    for l in range(cfg.num_layers):
        p = f"layer{l}."
        for name in ("Wq", "Wk", "Wv", "Wo"):
            shapes[p + name] = (d, d)
        for name in ("bq", "bk", "bv", "bo", "ln1_b", "ln2_b", "b2", "ln1_g", "ln2_g"):
            shapes[p + name] = (d,)
        shapes[p + "W1"] = (d, f)
        shapes[p + "b1"] = (f,)
        shapes[p + "W2"] = (f, d)
    shapes["cls_W"] = (d, cfg.num_classes)
    shapes["cls_b"] = (cfg.num_classes,)
    return shapes


def _truncated_normal(rng, shape, std):
    x = rng.standard_normal(shape)
    bad = np.abs(x) > 2.0
    while bad.any():
        x[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(x) > 2.0
    return x * std


def init_params(cfg: EncoderConfig, rng: np.random.Generator) -> dict:
    """Truncated-normal weights, zero biases/shifts, unit layer-norm scales."""
    params = {}
    for name, shape in parameter_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf.endswith("_g"):
            params[name] = np.ones(shape)
        elif leaf.startswith("b") or leaf.endswith("_b"):
            params[name] = np.zeros(shape)
        else:
            params[name] = _truncated_normal(rng, shape, INIT_STD)
    return params


def check_params(params: dict, cfg: EncoderConfig):
    for name, shape in parameter_shapes(cfg).items():
        arr = params.get(name)
        if arr is None or arr.shape != shape:
            raise ConfigError(f"parameter {name} missing or not shaped {shape}")
        if not np.all(np.isfinite(arr)):
            raise NumericFault(f"parameter {name} is not finite")


# ---------------------------------------------------------------------------
# Building blocks


def softmax(z, axis=-1):
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def attention(Q, K, V, mask=None, return_weights=False):
    """Scaled dot-product attention for one head.

    ``S = Q K^T / sqrt(d_k)``; key positions where ``mask`` is 0 get a score
    of -inf; ``O = softmax(S) V``.
    """
    Q = np.asarray(Q, dtype=np.float64)
    K = np.asarray(K, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    n = Q.shape[0]
    if n == 0:
        out = np.zeros((0, V.shape[1] if V.ndim == 2 else 0))
        return (out, np.zeros((0, 0))) if return_weights else out
    if K.shape[0] != V.shape[0] or Q.shape[1] != K.shape[1]:
        raise ValueError("Q, K, V shapes do not conform")
    S = Q @ K.T / math.sqrt(Q.shape[1])
    if mask is not None:
        valid = np.asarray(mask, dtype=bool)
        if not valid.any():
            raise ValueError("attention row has no valid positions")
        S = np.where(valid[None, :], S, -np.inf)
    A = softmax(S, axis=-1)
    O = A @ V
    return (O, A) if return_weights else O


def _layer_norm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * rstd
    return xhat * g + b, (xhat, rstd)


def _layer_norm_back(dy, g, cache):
    xhat, rstd = cache
    dg = np.einsum("bnd,bnd->d", dy, xhat)
    db = dy.sum(axis=(0, 1))
    dxh = dy * g
    dx = rstd * (
        dxh - dxh.mean(axis=-1, keepdims=True) - xhat * (dxh * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dg, db


def _gelu(z):
    t = np.tanh(_GELU_C * (z + 0.044715 * z**3))
    return 0.5 * z * (1.0 + t), t


def _gelu_back(dy, z, t):
    dt = (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * z * z)
    return dy * (0.5 * (1.0 + t) + 0.5 * z * dt)


def _split(x, H):
    B, n, d = x.shape
    return x.reshape(B, n, H, d // H).transpose(0, 2, 1, 3)


def _merge(x):
    B, H, n, dk = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, n, H * dk)


def _dropout(x, rate, rng, train):
    if not train or rate == 0.0:
        return x, None
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * keep, keep


# ---------------------------------------------------------------------------
# Forward / backward


def forward(params, cfg: EncoderConfig, ids, mask, segment_ids=None, train=False, rng=None):
    """Class probabilities for a batch, plus the cache needed by :func:`backward`.

    ``ids``/``mask``/``segment_ids`` are ``(B, n)`` integer arrays with
    ``n <= max_len``.
    """
    ids = np.atleast_2d(np.asarray(ids, dtype=np.int64))
    mask = np.atleast_2d(np.asarray(mask)).astype(bool)
    seg = np.zeros_like(ids) if segment_ids is None else np.atleast_2d(np.asarray(segment_ids))
    B, n = ids.shape
    if n > cfg.max_len:
        raise ConfigError(f"sequence length {n} exceeds max_len {cfg.max_len}")
    if not mask.any(axis=1).all():
        raise ValueError("every sequence needs at least one valid position")
    H = cfg.num_heads
    scale = 1.0 / math.sqrt(cfg.head_dim)
    key_bias = np.where(mask, 0.0, -np.inf)[:, None, None, :]

    x = params["tok_emb"][ids] + params["pos_emb"][:n][None] + params["seg_emb"][seg]
    x, drop_emb = _dropout(x, cfg.dropout, rng, train)
    caches = []
    for l in range(cfg.num_layers):
        p = f"layer{l}."
        c = {"x": x}
        q = _split(x @ params[p + "Wq"] + params[p + "bq"], H)
        k = _split(x @ params[p + "Wk"] + params[p + "bk"], H)
        v = _split(x @ params[p + "Wv"] + params[p + "bv"], H)
        a = softmax(q @ k.transpose(0, 1, 3, 2) * scale + key_bias)
        ctx = _merge(a @ v)
        att = ctx @ params[p + "Wo"] + params[p + "bo"]
        att, c["drop1"] = _dropout(att, cfg.dropout, rng, train)
        h1, c["ln1"] = _layer_norm(x + att, params[p + "ln1_g"], params[p + "ln1_b"])
        z = h1 @ params[p + "W1"] + params[p + "b1"]
        gz, t = _gelu(z)
        f = gz @ params[p + "W2"] + params[p + "b2"]
        f, c["drop2"] = _dropout(f, cfg.dropout, rng, train)
        x, c["ln2"] = _layer_norm(h1 + f, params[p + "ln2_g"], params[p + "ln2_b"])
        if not np.all(np.isfinite(x)):
            raise NumericFault(f"non-finite activation in encoder layer {l}")
        c.update(q=q, k=k, v=v, a=a, ctx=ctx, h1=h1, z=z, t=t, gz=gz)
        caches.append(c)
    cls = x[:, 0, :]
    logits = cls @ params["cls_W"] + params["cls_b"]
    probs = softmax(logits)
    cache = {
        "ids": ids,
        "seg": seg,
        "n": n,
        "layers": caches,
        "out": x,
        "drop_emb": drop_emb,
    }
    return probs, cache


def backward(params, cfg: EncoderConfig, cache, dlogits):
    """Gradients of a scalar loss given its gradient w.r.t. the head logits."""
    H = cfg.num_heads
    scale = 1.0 / math.sqrt(cfg.head_dim)
    grads = {name: np.zeros_like(val) for name, val in params.items()}
    out = cache["out"]
    grads["cls_W"] = out[:, 0, :].T @ dlogits
    grads["cls_b"] = dlogits.sum(axis=0)
    dx = np.zeros_like(out)
    dx[:, 0, :] = dlogits @ params["cls_W"].T

    for l in reversed(range(cfg.num_layers)):
        p = f"layer{l}."
        c = cache["layers"][l]
        dr2, grads[p + "ln2_g"], grads[p + "ln2_b"] = _layer_norm_back(dx, params[p + "ln2_g"], c["ln2"])
        df = dr2 if c["drop2"] is None else dr2 * c["drop2"]
        grads[p + "W2"] = np.einsum("bnf,bnd->fd", c["gz"], df)
        grads[p + "b2"] = df.sum(axis=(0, 1))
        dgz = df @ params[p + "W2"].T
        dz = _gelu_back(dgz, c["z"], c["t"])
        grads[p + "W1"] = np.einsum("bnd,bnf->df", c["h1"], dz)
        grads[p + "b1"] = dz.sum(axis=(0, 1))
        dh1 = dr2 + dz @ params[p + "W1"].T
        dr1, grads[p + "ln1_g"], grads[p + "ln1_b"] = _layer_norm_back(dh1, params[p + "ln1_g"], c["ln1"])
        datt = dr1 if c["drop1"] is None else dr1 * c["drop1"]
        grads[p + "Wo"] = np.einsum("bnd,bne->de", c["ctx"], datt)
        grads[p + "bo"] = datt.sum(axis=(0, 1))
        dctx = _split(datt @ params[p + "Wo"].T, H)
        a, q, k, v = c["a"], c["q"], c["k"], c["v"]
        da = dctx @ v.transpose(0, 1, 3, 2)
        dv = a.transpose(0, 1, 3, 2) @ dctx
        ds = a * (da - np.sum(da * a, axis=-1, keepdims=True)) * scale
        dq = ds @ k
        dk = ds.transpose(0, 1, 3, 2) @ q
        x = c["x"]
        dxl = dr1.copy()
        for name, dh in (("q", dq), ("k", dk), ("v", dv)):
            dm = _merge(dh)
            grads[p + "W" + name] = np.einsum("bnd,bne->de", x, dm)
            grads[p + "b" + name] = dm.sum(axis=(0, 1))
            dxl += dm @ params[p + "W" + name].T
        dx = dxl

    if cache["drop_emb"] is not None:
        dx = dx * cache["drop_emb"]
    d = dx.shape[-1]
    np.add.at(grads["tok_emb"], cache["ids"].ravel(), dx.reshape(-1, d))
    grads["pos_emb"][: cache["n"]] = dx.sum(axis=0)
    np.add.at(grads["seg_emb"], cache["seg"].ravel(), dx.reshape(-1, d))
    return grads


def cross_entropy(probs, labels):
    """Mean negative log-likelihood and its gradient w.r.t. the logits."""
    B = len(labels)
    p = probs[np.arange(B), labels]
    loss = -float(np.mean(np.log(np.maximum(p, 1e-300))))
    dlogits = probs.copy()
    dlogits[np.arange(B), labels] -= 1.0
    return loss, dlogits / B


def encode_and_classify(params, cfg: EncoderConfig, seq) -> np.ndarray:
    """Eight-way probability vector for one :class:`TokenSequence` (inference mode)."""
    probs, _ = forward(
        params, cfg, seq.ids[None, :], seq.attention_mask[None, :], seq.segment_ids[None, :]
    )
    return probs[0]
