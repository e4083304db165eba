import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crisis_concerns.activity.encoder import (
    EncoderConfig,
    attention,
    encode_and_classify,
    forward,
    init_params,
    softmax,
)
from crisis_concerns.activity.labels import ACTIVITY_LABELS
from crisis_concerns.activity.training import (
    ActivityModel,
    OptimizerSettings,
    classify_corpus,
    distribution_table,
    load_checkpoint,
    save_checkpoint,
    train_classifier,
)
from crisis_concerns.activity.vocab import CLS_ID, PAD_ID, UNK_ID, Vocabulary, build_vocab, tokenize, wordpiece
from crisis_concerns.errors import ConfigError, DataError, NumericFault

from oracles import encoder_gradient_errors, toy_labeled


# --- vocabulary and tokenization ------------------------------------------


def test_vocab_hand_merge():
    v = build_vocab([["aa", "aa", "ab"]], 10)
    # alphabet {a, ##a, ##b}; merges (a,##a) x2 then (a,##b) x1
    assert v.entries == ["[PAD]", "[UNK]", "[CLS]", "##a", "##b", "a", "aa", "ab"]


def test_vocab_reserved_and_deterministic():
    corpus = [["smoke", "smoky", "air"], ["air", "quality"]]
    a, b = build_vocab(corpus, 30), build_vocab(corpus, 30)
    assert a.entries[:3] == ["[PAD]", "[UNK]", "[CLS]"]
    assert a == b
    for w in ("smoke", "smoky", "air", "quality"):
        assert UNK_ID not in wordpiece(w, a)


def test_vocab_too_small():
    with pytest.raises(ConfigError):
        build_vocab([["abc"]], 4)


def test_tokenize_longest_match():
    v = Vocabulary(["[PAD]", "[UNK]", "[CLS]", "s", "smoke", "##y", "air"])
    seq = tokenize(["smokey", "air"], v, 6)
    ids = [v.entries[i] for i in seq.ids]
    assert ids == ["[CLS]", "smoke", "##y", "air", "[PAD]", "[PAD]"]
    assert seq.attention_mask.tolist() == [1, 1, 1, 1, 0, 0]
    assert seq.segment_ids.tolist() == [0] * 6


def test_tokenize_unknown_and_empty():
    v = Vocabulary(["[PAD]", "[UNK]", "[CLS]", "a"])
    assert tokenize(["zzz"], v, 4).ids.tolist() == [CLS_ID, UNK_ID, PAD_ID, PAD_ID]
    empty = tokenize([], v, 4)
    assert empty.ids.tolist() == [CLS_ID, 0, 0, 0]
    assert empty.attention_mask.tolist() == [1, 0, 0, 0]


def test_tokenize_truncates():
    v = Vocabulary(["[PAD]", "[UNK]", "[CLS]", "a"])
    seq = tokenize(["a"] * 10, v, 5)
    assert len(seq.ids) == 5 and seq.attention_mask.sum() == 5


# --- attention ---------------------------------------------------------------


def test_attention_hand_example():
    Q = np.array([[1.0], [0.0]])
    K = np.array([[1.0], [0.0]])
    V = np.array([[2.0], [4.0]])
    O, A = attention(Q, K, V, return_weights=True)
    # scores row 1: (1, 0) -> softmax (e/(1+e), 1/(1+e))
    a1 = math.e / (1 + math.e)
    assert A[0] == pytest.approx([a1, 1 - a1], abs=1e-12)
    assert A[0] == pytest.approx([0.7311, 0.2689], abs=1e-4)
    assert O[0, 0] == pytest.approx(2 * a1 + 4 * (1 - a1), abs=1e-12)
    assert O[0, 0] == pytest.approx(2.5378, abs=1e-4)
    assert O[1, 0] == pytest.approx(3.0, abs=1e-12)


def test_attention_singleton_and_uniform():
    rng = np.random.default_rng(0)
    V = rng.normal(size=(1, 3))
    assert np.allclose(attention(rng.normal(size=(1, 2)), rng.normal(size=(1, 2)), V), V)
    V = rng.normal(size=(4, 3))
    mask = np.array([1, 1, 0, 1])
    O = attention(np.zeros((4, 2)), rng.normal(size=(4, 2)), V, mask)
    assert np.allclose(O, V[mask == 1].mean(axis=0))


def test_attention_edge_cases():
    assert attention(np.zeros((0, 2)), np.zeros((0, 2)), np.zeros((0, 3))).shape == (0, 3)
    with pytest.raises(ValueError):
        attention(np.ones((2, 1)), np.ones((2, 1)), np.ones((2, 1)), mask=[0, 0])


def _instance(data):
    n = data.draw(st.integers(1, 6))
    dk = data.draw(st.integers(1, 4))
    seed = data.draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    mask = rng.random(n) < 0.7
    mask[rng.integers(n)] = True
    return rng, rng.normal(size=(n, dk)) * 3, rng.normal(size=(n, dk)) * 3, rng.normal(size=(n, 3)), mask


@settings(max_examples=1000, deadline=None)
@given(st.data())
def test_attention_properties(data):
    rng, Q, K, V, mask = _instance(data)
    O, A = attention(Q, K, V, mask, return_weights=True)
    # rows normalized over valid keys, zero on masked keys
    assert np.allclose(A.sum(axis=1), 1.0, atol=1e-6)
    assert np.all((A >= 0) & (A <= 1))
    assert np.all(A[:, ~mask] == 0)
    # adding one vector u to every key shifts each score row by Q_i.u/sqrt(d_k)
    u = rng.normal(size=K.shape[1]) * 5
    assert np.allclose(attention(Q, K + u, V, mask), O, atol=1e-9)
    # padded keys/values can hold anything
    K2, V2 = K.copy(), V.copy()
    K2[~mask] = rng.normal(size=K2[~mask].shape) * 100
    V2[~mask] = rng.normal(size=V2[~mask].shape) * 100
    assert np.allclose(attention(Q, K2, V2, mask), O, atol=1e-9)


def test_softmax_stable():
    p = softmax(np.array([1000.0, 1000.0, -1000.0]))
    assert np.allclose(p, [0.5, 0.5, 0.0])


# --- encoder -----------------------------------------------------------------


def _cfg(**kw):
    base = dict(num_layers=2, num_heads=2, model_dim=8, ff_dim=16, max_len=10, vocab_size=20, dropout=0.0)
    base.update(kw)
    return EncoderConfig(**base)


def test_config_validation():
    with pytest.raises(ConfigError):
        EncoderConfig(model_dim=10, num_heads=3)
    with pytest.raises(ConfigError):
        EncoderConfig(num_classes=5)
    with pytest.raises(ConfigError):
        EncoderConfig(max_len=1)


def test_zero_head_gives_uniform():
    cfg = _cfg()
    params = init_params(cfg, np.random.default_rng(0))
    params["cls_W"][:] = 0
    v = Vocabulary(["[PAD]", "[UNK]", "[CLS]", *"abcdefghijklmnopq"])
    p = encode_and_classify(params, cfg, tokenize(["abc", "de"], v, 10))
    assert np.allclose(p, 0.125, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 9))
def test_probabilities_on_simplex(seed, length):
    cfg = _cfg()
    rng = np.random.default_rng(seed)
    params = init_params(cfg, rng)
    ids = np.zeros((1, 10), dtype=int)
    ids[0, 0] = CLS_ID
    ids[0, 1:length] = rng.integers(3, 20, size=length - 1)
    mask = (np.arange(10) < length).astype(int)[None]
    probs, _ = forward(params, cfg, ids, mask)
    assert np.all(probs >= 0) and abs(probs.sum() - 1) < 1e-6


def test_permutation_equivariance_without_positions():
    cfg = _cfg(max_len=7)
    rng = np.random.default_rng(1)
    params = init_params(cfg, rng)
    for k in params:
        params[k] = params[k] + rng.normal(0, 0.3, params[k].shape)
    params["pos_emb"][:] = 0
    ids = np.array([[CLS_ID, 5, 9, 11, 3, 17, 8]])
    mask = np.ones_like(ids)
    perm = np.concatenate([[0], 1 + rng.permutation(6)])
    p1, c1 = forward(params, cfg, ids, mask)
    p2, c2 = forward(params, cfg, ids[:, perm], mask)
    assert np.allclose(p1, p2, atol=1e-12)
    assert np.allclose(c1["out"][:, perm], c2["out"], atol=1e-12)


def test_padding_does_not_leak():
    cfg = _cfg(max_len=12)
    rng = np.random.default_rng(2)
    params = init_params(cfg, rng)
    for k in params:
        params[k] = params[k] + rng.normal(0, 0.3, params[k].shape)
    ids = np.array([[CLS_ID, 4, 7, 9]])
    p_short, _ = forward(params, cfg, ids, np.ones_like(ids))
    long = np.zeros((1, 12), dtype=int)
    long[0, :4] = ids
    long[0, 4:] = rng.integers(0, 20, size=8)  # garbage under the mask
    m = np.zeros((1, 12), dtype=int)
    m[0, :4] = 1
    p_long, _ = forward(params, cfg, long, m)
    assert np.allclose(p_short, p_long, atol=1e-6)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numeric_fault_names_layer():
    cfg = _cfg()
    params = init_params(cfg, np.random.default_rng(0))
    params["layer1.W1"][0, 0] = np.inf
    with pytest.raises(NumericFault, match="layer 1"):
        forward(params, cfg, np.array([[2, 4]]), np.array([[1, 1]]))


def test_gradients_match_finite_differences():
    errors = encoder_gradient_errors()
    worst = max(errors, key=errors.get)
    assert errors[worst] < 1e-4, (worst, errors[worst])


# --- training ----------------------------------------------------------------


TOY_CFG = dict(num_layers=2, num_heads=2, model_dim=16, ff_dim=32, max_len=24, dropout=0.0)
TOY_OPT = OptimizerSettings(learning_rate=3e-3, epochs=200, batch_size=8, holdout_fraction=0.0)


@pytest.fixture(scope="module")
def toy_fit():
    vocab, labeled = toy_labeled()
    cfg = EncoderConfig(vocab_size=len(vocab), **TOY_CFG)
    params, log, report = train_classifier(labeled, cfg, TOY_OPT, seed=0)
    return vocab, labeled, cfg, params, log, report


def test_init_loss_near_uniform(toy_fit):
    *_, log, _ = toy_fit
    assert abs(log[0]["loss"] - math.log(8)) < 0.1


def test_toy_set_overfits(toy_fit):
    *_, log, report = toy_fit
    first = next(e["epoch"] for e in log if e["train_accuracy"] >= 0.99)
    assert first <= 200
    assert report.accuracy >= 0.99 and report.extra["split"] == "train"


def test_training_deterministic():
    vocab, labeled = toy_labeled()
    cfg = EncoderConfig(vocab_size=len(vocab), **{**TOY_CFG, "dropout": 0.1})
    opt = OptimizerSettings(learning_rate=3e-3, epochs=3, batch_size=8, holdout_fraction=0.25)
    a = train_classifier(labeled, cfg, opt, seed=5)
    b = train_classifier(labeled, cfg, opt, seed=5)
    assert all(np.array_equal(a[0][k], b[0][k]) for k in a[0])
    assert a[1] == b[1]
    assert a[2].extra["split"] == "heldout" and a[2].n == 8


def test_training_rejects_missing_class():
    vocab, labeled = toy_labeled()
    cfg = EncoderConfig(vocab_size=len(vocab), **TOY_CFG)
    with pytest.raises(DataError):
        train_classifier([x for x in labeled if x[1] != "Evacuation"], cfg, TOY_OPT)


def test_bad_optimizer_settings():
    with pytest.raises(ConfigError):
        OptimizerSettings(learning_rate=0)
    with pytest.raises(ConfigError):
        OptimizerSettings(batch_size=0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_a_numeric_fault():
    vocab, labeled = toy_labeled()
    cfg = EncoderConfig(vocab_size=len(vocab), **TOY_CFG)
    opt = OptimizerSettings(learning_rate=1e200, epochs=2, batch_size=8, holdout_fraction=0.0)
    with pytest.raises(NumericFault):
        train_classifier(labeled, cfg, opt)


def test_checkpoint_round_trip(toy_fit, tmp_path):
    vocab, labeled, cfg, params, *_ = toy_fit
    model = ActivityModel(cfg, vocab, params, TOY_OPT)
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    assert path.read_bytes()[:8] == b"CCENCODR"
    back = load_checkpoint(path)
    assert back.vocab == vocab and back.config == cfg
    assert all(np.array_equal(back.params[k], params[k]) for k in params)
    words = [["smoke", "subway"], ["bus"], []]
    assert np.array_equal(back.classify_tokens(words)[1], model.classify_tokens(words)[1])


def test_checkpoint_rejects_garbage(tmp_path):
    p = tmp_path / "x.ckpt"
    p.write_bytes(b"not a checkpoint")
    with pytest.raises(DataError):
        load_checkpoint(p)


class _P:
    def __init__(self, i, tokens):
        self.id, self.tokens = i, tokens


def test_classify_corpus_conserves(toy_fit):
    vocab, labeled, cfg, params, *_ = toy_fit
    model = ActivityModel(cfg, vocab, params)
    rng = np.random.default_rng(0)
    pool = [e for e in vocab.entries[3:] if not e.startswith("##")]
    posts = [_P(str(i), list(rng.choice(pool, size=rng.integers(0, 6)))) for i in range(100)]
    assignments, table = classify_corpus(model, posts)
    assert len(assignments) == 100
    assert sum(r[1] for r in table) == 100
    assert [r[0] for r in table] == list(ACTIVITY_LABELS)
    assert sum(r[2] for r in table) == pytest.approx(100.0)
    assert classify_corpus(model, []) == ([], [])
    assert distribution_table([]) == []
