"""From-scratch classifiers over small non-negative feature vectors.

All models share one surface:

``fit(X, y, n_classes, seed)``
    learn from a float feature matrix and integer labels ``0..n_classes-1``
``class_scores(X)``
    per-class internal scores; the predicted label is always their argmax
``predict(X)``
    ``(labels, confidence)`` with confidence in ``[0, 1]``
``get_state()`` / ``from_state(state)``
    JSON-safe learned parameters

Ties at any argmax resolve to the smallest class index.
"""

from __future__ import annotations

import math

import numpy as np

from .rng import derive_rng


def _softmax_rows(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class NaiveBayes:
    """Multinomial naive Bayes with additive (Laplace) smoothing."""

    algorithm = "NaiveBayes"

    def __init__(self, alpha: float = 1.0):
        if alpha <= 0:
            raise ValueError("alpha must be positive")
        self.alpha = float(alpha)

    def fit(self, X, y, n_classes, seed=0):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        self.n_classes = n_classes
        class_count = np.bincount(y, minlength=n_classes).astype(np.float64)
        feat = np.zeros((n_classes, X.shape[1]))
        np.add.at(feat, y, X)
        smoothed = feat + self.alpha
        self.log_prior = np.log(class_count / class_count.sum())
        self.log_prob = np.log(smoothed / smoothed.sum(axis=1, keepdims=True))
        return self

    def class_scores(self, X):
        """Joint log-likelihood ``log P(c) + sum_f x_f log theta_cf``."""
        return np.asarray(X, dtype=np.float64) @ self.log_prob.T + self.log_prior

    def predict_proba(self, X):
        return _softmax_rows(self.class_scores(X))

    def predict(self, X):
        proba = self.predict_proba(X)
        labels = np.argmax(proba, axis=1)
        return labels, proba[np.arange(len(labels)), labels]

    def get_state(self):
        return {
            "alpha": self.alpha,
            "n_classes": self.n_classes,
            "log_prior": self.log_prior.tolist(),
            "log_prob": self.log_prob.tolist(),
        }

    @classmethod
    def from_state(cls, state):
        obj = cls(alpha=state["alpha"])
        obj.n_classes = state["n_classes"]
        obj.log_prior = np.asarray(state["log_prior"])
        obj.log_prob = np.asarray(state["log_prob"])
        return obj


class KNearestNeighbors:
    """Euclidean k-NN with majority vote.

    Equal distances are ordered by training row index, so the neighbour set
    is fully determined.
    """

    algorithm = "KNN"

    def __init__(self, k: int = 5, chunk_size: int = 512):
        if k < 1:
            raise ValueError("k must be >= 1")
        self.k = int(k)
        self.chunk_size = chunk_size

    def fit(self, X, y, n_classes, seed=0):
        self.X = np.asarray(X, dtype=np.float64)
        self.y = np.asarray(y, dtype=np.int64)
        self.n_classes = n_classes
        self._sq = np.einsum("ij,ij->i", self.X, self.X)
        self._integral = bool(np.all(self.X == np.round(self.X)))
        return self

    def neighbors(self, X):
        X = np.asarray(X, dtype=np.float64)
        n_train = len(self.X)
        k = min(self.k, n_train)
        out = np.empty((len(X), k), dtype=np.int64)
        idx = np.arange(n_train, dtype=np.float64)
        for start in range(0, len(X), self.chunk_size):
            q = X[start : start + self.chunk_size]
            d2 = np.einsum("ij,ij->i", q, q)[:, None] - 2.0 * q @ self.X.T + self._sq[None, :]
            if self._integral and np.max(d2, initial=0.0) * n_train < 2**52:
                # exact integer distances: fold the row index into the key
                key = np.round(d2) * n_train + idx[None, :]
                part = np.argpartition(key, k - 1, axis=1)[:, :k]
                order = np.argsort(np.take_along_axis(key, part, axis=1), axis=1)
                out[start : start + len(q)] = np.take_along_axis(part, order, axis=1)
            else:
                out[start : start + len(q)] = np.argsort(d2, axis=1, kind="stable")[:, :k]
        return out

    def class_scores(self, X):
        """Vote fraction per class among the k neighbours."""
        nb = self.neighbors(X)
        labels = self.y[nb]
        votes = np.zeros((len(nb), self.n_classes))
        for c in range(self.n_classes):
            votes[:, c] = (labels == c).sum(axis=1)
        return votes / nb.shape[1]

    def predict(self, X):
        scores = self.class_scores(X)
        labels = np.argmax(scores, axis=1)
        return labels, scores[np.arange(len(labels)), labels]

    def get_state(self):
        return {
            "k": self.k,
            "n_classes": self.n_classes,
            "X": self.X.astype(np.int64).tolist() if self._integral else self.X.tolist(),
            "y": self.y.tolist(),
        }

    @classmethod
    def from_state(cls, state):
        obj = cls(k=state["k"])
        return obj.fit(np.asarray(state["X"], dtype=np.float64), state["y"], state["n_classes"])


# ---------------------------------------------------------------------------
# CART


def _resolve_max_features(max_features, n_features):
    if max_features is None:
        return n_features
    if max_features == "sqrt":
        return max(1, int(math.sqrt(n_features)))
    return max(1, min(int(max_features), n_features))


def grow_tree(X, y, n_classes, weights, max_depth, min_leaf, max_features, rng):
    """Grow a Gini CART tree breadth-first, one vectorized pass per depth.

    ``weights`` are per-row multiplicities (bootstrap counts, or ones).
    At each node the split minimizing weighted child impurity is taken,
    scanning features then thresholds in ascending order; the first minimum
    wins.  Returns flat node arrays.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    w = np.asarray(weights, dtype=np.float64)
    n, F = X.shape
    C = n_classes
    mtry = _resolve_max_features(max_features, F)

    uniques = [np.unique(X[w > 0, f]) for f in range(F)]
    V = max(1, max(len(u) for u in uniques))
    bins = np.zeros((n, F), dtype=np.int64)
    thresh = np.full((F, V), np.nan)
    n_valid = np.zeros(F, dtype=np.int64)
    for f, u in enumerate(uniques):
        if len(u):
            bins[:, f] = np.clip(np.searchsorted(u, X[:, f]), 0, len(u) - 1)
        if len(u) > 1:
            thresh[f, : len(u) - 1] = 0.5 * (u[:-1] + u[1:])
            n_valid[f] = len(u) - 1
    valid_thr = np.arange(V)[None, :] < n_valid[:, None]  # (F, V)

    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(counts):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(counts)
        return len(feature) - 1

    rows = np.flatnonzero(w > 0)
    root_counts = np.bincount(y[rows], weights=w[rows], minlength=C)
    new_node(root_counts)
    active = [0]
    node_rows = [rows]
    depth = 0
    while active and depth < max_depth:
        m = len(active)
        local = np.concatenate([np.full(len(r), i) for i, r in enumerate(node_rows)])
        srows = np.concatenate(node_rows)
        b = bins[srows]  # (s, F)
        flat = ((local[:, None] * F + np.arange(F)[None, :]) * V + b) * C + y[srows][:, None]
        hist = np.bincount(
            flat.ravel(), weights=np.repeat(w[srows], F), minlength=m * F * V * C
        ).reshape(m, F, V, C)
        lc = np.cumsum(hist, axis=2)
        tot = lc[:, :, -1:, :]
        rc = tot - lc
        nl = lc.sum(axis=3)
        nr = rc.sum(axis=3)
        with np.errstate(divide="ignore", invalid="ignore"):
            imp = (nl - (lc**2).sum(axis=3) / nl) + (nr - (rc**2).sum(axis=3) / nr)
        ok = valid_thr[None] & (nl >= min_leaf) & (nr >= min_leaf)
        if mtry < F:
            pick = np.argsort(rng.random((m, F)), axis=1)[:, :mtry]
            fmask = np.zeros((m, F), dtype=bool)
            np.put_along_axis(fmask, pick, True, axis=1)
            ok &= fmask[:, :, None]
        imp = np.where(ok, imp, np.inf)
        best = np.argmin(imp.reshape(m, -1), axis=1)
        best_imp = imp.reshape(m, -1)[np.arange(m), best]
        ntot = tot[:, 0, 0, :]
        parent_imp = ntot.sum(axis=1) - (ntot**2).sum(axis=1) / ntot.sum(axis=1)

        next_active, next_rows = [], []
        for i, node in enumerate(active):
            if not np.isfinite(best_imp[i]) or best_imp[i] >= parent_imp[i] - 1e-9:
                continue
            f, j = divmod(int(best[i]), V)
            thr = float(thresh[f, j])
            r = node_rows[i]
            go_left = X[r, f] <= thr
            lrows, rrows = r[go_left], r[~go_left]
            feature[node] = f
            threshold[node] = thr
            lid = new_node(np.bincount(y[lrows], weights=w[lrows], minlength=C))
            rid = new_node(np.bincount(y[rrows], weights=w[rrows], minlength=C))
            left[node], right[node] = lid, rid
            for cid, cr in ((lid, lrows), (rid, rrows)):
                if len(cr) and np.count_nonzero(value[cid]) > 1:
                    next_active.append(cid)
                    next_rows.append(cr)
        active, node_rows = next_active, next_rows
        depth += 1

    return {
        "feature": np.asarray(feature, dtype=np.int64),
        "threshold": np.asarray(threshold, dtype=np.float64),
        "left": np.asarray(left, dtype=np.int64),
        "right": np.asarray(right, dtype=np.int64),
        "value": np.asarray(value, dtype=np.float64).reshape(-1, C),
    }


def tree_apply(tree, X):
    """Leaf index reached by every row."""
    X = np.asarray(X, dtype=np.float64)
    node = np.zeros(len(X), dtype=np.int64)
    rows = np.arange(len(X))
    while True:
        f = tree["feature"][node]
        internal = f >= 0
        if not internal.any():
            return node
        r = rows[internal]
        nd = node[internal]
        go_left = X[r, f[internal]] <= tree["threshold"][nd]
        node[internal] = np.where(go_left, tree["left"][nd], tree["right"][nd])


def _tree_to_state(tree):
    return {k: v.tolist() for k, v in tree.items()}


def _tree_from_state(state):
    return {
        "feature": np.asarray(state["feature"], dtype=np.int64),
        "threshold": np.asarray(state["threshold"], dtype=np.float64),
        "left": np.asarray(state["left"], dtype=np.int64),
        "right": np.asarray(state["right"], dtype=np.int64),
        "value": np.asarray(state["value"], dtype=np.float64),
    }


class DecisionTree:
    algorithm = "DecisionTree"

    def __init__(self, max_depth=12, min_leaf=5, max_features=None):
        self.max_depth = int(max_depth)
        self.min_leaf = int(min_leaf)
        self.max_features = max_features

    def fit(self, X, y, n_classes, seed=0):
        self.n_classes = n_classes
        # same stream a forest hands to its first tree
        rng = derive_rng(seed, "tree", 0)
        weights = np.ones(len(y))
        self.tree = grow_tree(
            X, y, n_classes, weights, self.max_depth, self.min_leaf, self.max_features, rng
        )
        return self

    def class_scores(self, X):
        """Class distribution of the leaf each row lands in."""
        v = self.tree["value"][tree_apply(self.tree, X)]
        return v / v.sum(axis=1, keepdims=True)

    def predict(self, X):
        scores = self.class_scores(X)
        labels = np.argmax(scores, axis=1)
        return labels, scores[np.arange(len(labels)), labels]

    def get_state(self):
        return {
            "max_depth": self.max_depth,
            "min_leaf": self.min_leaf,
            "max_features": self.max_features,
            "n_classes": self.n_classes,
            "tree": _tree_to_state(self.tree),
        }

    @classmethod
    def from_state(cls, state):
        obj = cls(state["max_depth"], state["min_leaf"], state["max_features"])
        obj.n_classes = state["n_classes"]
        obj.tree = _tree_from_state(state["tree"])
        return obj


class RandomForest:
    """Bagged CART trees with per-split feature sampling and OOB tracking."""

    algorithm = "RandomForest"

    def __init__(self, n_trees=100, max_depth=12, min_leaf=5, max_features="sqrt", bootstrap=True):
        if n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        self.n_trees = int(n_trees)
        self.max_depth = int(max_depth)
        self.min_leaf = int(min_leaf)
        self.max_features = max_features
        self.bootstrap = bool(bootstrap)
        self.oob_accuracy = None

    def fit(self, X, y, n_classes, seed=0):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        n = len(y)
        self.n_classes = n_classes
        self.trees = []
        oob_votes = np.zeros((n, n_classes))
        for t in range(self.n_trees):
            rng = derive_rng(seed, "tree", t)
            if self.bootstrap:
                weights = np.bincount(rng.integers(0, n, size=n), minlength=n).astype(np.float64)
            else:
                weights = np.ones(n)
            tree = grow_tree(
                X, y, n_classes, weights, self.max_depth, self.min_leaf, self.max_features, rng
            )
            self.trees.append(tree)
            out = np.flatnonzero(weights == 0)
            if len(out):
                pred = np.argmax(tree["value"][tree_apply(tree, X[out])], axis=1)
                oob_votes[out, pred] += 1
        has_vote = oob_votes.sum(axis=1) > 0
        if has_vote.any():
            oob_pred = np.argmax(oob_votes[has_vote], axis=1)
            self.oob_accuracy = float(np.mean(oob_pred == y[has_vote]))
        return self

    def class_scores(self, X):
        """Fraction of trees voting for each class."""
        X = np.asarray(X, dtype=np.float64)
        votes = np.zeros((len(X), self.n_classes))
        rows = np.arange(len(X))
        for tree in self.trees:
            pred = np.argmax(tree["value"][tree_apply(tree, X)], axis=1)
            votes[rows, pred] += 1
        return votes / len(self.trees)

    def predict(self, X):
        scores = self.class_scores(X)
        labels = np.argmax(scores, axis=1)
        return labels, scores[np.arange(len(labels)), labels]

    def get_state(self):
        return {
            "n_trees": self.n_trees,
            "max_depth": self.max_depth,
            "min_leaf": self.min_leaf,
            "max_features": self.max_features,
            "bootstrap": self.bootstrap,
            "n_classes": self.n_classes,
            "oob_accuracy": self.oob_accuracy,
            "trees": [_tree_to_state(t) for t in self.trees],
        }

    @classmethod
    def from_state(cls, state):
        obj = cls(
            state["n_trees"],
            state["max_depth"],
            state["min_leaf"],
            state["max_features"],
            state["bootstrap"],
        )
        obj.n_classes = state["n_classes"]
        obj.oob_accuracy = state["oob_accuracy"]
        obj.trees = [_tree_from_state(t) for t in state["trees"]]
        return obj


class LinearSVM:
    """One-vs-rest linear SVM trained by averaged SGD on the hinge loss.

    Step size follows ``eta0 / (1 + eta0 * lam * t)`` with ``t`` the global
    update count; rows are visited in a seeded permutation each epoch.
    Confidence is the logistic function of the winning margin.
    """

    algorithm = "LinearSVM"

    def __init__(self, epochs=10, lam=1e-4, eta0=0.05):
        self.epochs = int(epochs)
        self.lam = float(lam)
        self.eta0 = float(eta0)

    def fit(self, X, y, n_classes, seed=0):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        n, F = X.shape
        self.n_classes = n_classes
        Y = -np.ones((n, n_classes))
        Y[np.arange(n), y] = 1.0
        W = np.zeros((n_classes, F))
        b = np.zeros(n_classes)
        W_avg = np.zeros_like(W)
        b_avg = np.zeros_like(b)
        rng = derive_rng(seed, "svm")
        t = 0
        for _epoch in range(self.epochs):
            for i in rng.permutation(n):
                eta = self.eta0 / (1.0 + self.eta0 * self.lam * t)
                x = X[i]
                yi = Y[i]
                viol = yi * (W @ x + b) < 1.0
                W *= 1.0 - eta * self.lam
                if viol.any():
                    W[viol] += eta * yi[viol, None] * x[None, :]
                    b[viol] += eta * yi[viol]
                t += 1
                W_avg += (W - W_avg) / t
                b_avg += (b - b_avg) / t
        self.W = W_avg
        self.b = b_avg
        return self

    def class_scores(self, X):
        """Signed margins of the per-class one-vs-rest hyperplanes."""
        return np.asarray(X, dtype=np.float64) @ self.W.T + self.b

    def predict(self, X):
        margins = self.class_scores(X)
        labels = np.argmax(margins, axis=1)
        top = margins[np.arange(len(labels)), labels]
        return labels, 1.0 / (1.0 + np.exp(-top))

    def get_state(self):
        return {
            "epochs": self.epochs,
            "lam": self.lam,
            "eta0": self.eta0,
            "n_classes": self.n_classes,
            "W": self.W.tolist(),
            "b": self.b.tolist(),
        }

    @classmethod
    def from_state(cls, state):
        obj = cls(state["epochs"], state["lam"], state["eta0"])
        obj.n_classes = state["n_classes"]
        obj.W = np.asarray(state["W"])
        obj.b = np.asarray(state["b"])
        return obj


ALGORITHMS = {
    cls.algorithm: cls for cls in (NaiveBayes, KNearestNeighbors, DecisionTree, RandomForest, LinearSVM)
}
