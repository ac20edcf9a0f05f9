"""Random forest classifier, implemented from scratch.

CART trees with Gini split search, bootstrap aggregation, out-of-bag
bookkeeping, leave-one-out evaluation, and permutation attribute importance.
The per-node split search and tree traversal are numba-compiled; tree
randomness comes from independent substreams derived from (master seed,
tree index), so results do not depend on scheduling.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from .metrics import roc_auc

MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_features: int | None = None  # default ceil(sqrt(d))
    min_leaf: int = 1
    max_depth: int = 0  # 0 = unlimited
    bootstrap_size: int | None = None  # default n
    seed: int = 0

    def resolved_max_features(self, d: int) -> int:
        m = self.max_features if self.max_features is not None else math.ceil(math.sqrt(d))
        if not 1 <= m <= d:
            raise ValueError(f"max_features {m} outside [1, {d}]")
        return m


@njit(cache=True)
def _grow_tree(X, y, boot_idx, max_features, min_leaf, max_depth, seed):
    """Grow one CART tree on a bootstrap sample; returns flat node arrays."""
    np.random.seed(seed)
    n = boot_idx.size
    d = X.shape[1]
    max_nodes = 2 * n + 1
    feat = np.full(max_nodes, -1, np.int32)
    thr = np.zeros(max_nodes, np.float64)
    left = np.full(max_nodes, -1, np.int32)
    right = np.full(max_nodes, -1, np.int32)
    prob = np.zeros(max_nodes, np.float64)

    idx = boot_idx.copy()
    # explicit stack of (node, start, end, depth)
    stack = np.zeros((max_nodes, 4), np.int64)
    stack[0, 2] = n
    top = 1
    n_nodes = 1
    featbuf = np.arange(d)

    while top > 0:
        top -= 1
        node = stack[top, 0]
        start = stack[top, 1]
        end = stack[top, 2]
        depth = stack[top, 3]
        m = end - start
        pos = 0
        for i in range(start, end):
            pos += y[idx[i]]
        prob[node] = pos / m
        if pos == 0 or pos == m or m < 2 * min_leaf or (max_depth > 0 and depth >= max_depth):
            continue

        # sample max_features distinct features (partial Fisher-Yates)
        for i in range(max_features):
            j = i + np.random.randint(0, d - i)
            featbuf[i], featbuf[j] = featbuf[j], featbuf[i]
        chosen = np.sort(featbuf[:max_features])

        parent_gini = 1.0 - (pos / m) ** 2 - ((m - pos) / m) ** 2
        best_cost = parent_gini
        best_f = -1
        best_t = 0.0
        vals = np.empty(m, np.float64)
        ybuf = np.empty(m, np.int64)
        for fi in range(max_features):
            f = chosen[fi]
            for i in range(m):
                vals[i] = X[idx[start + i], f]
            order = np.argsort(vals)
            npos_left = 0
            for cut in range(1, m):
                npos_left += y[idx[start + order[cut - 1]]]
                if vals[order[cut]] == vals[order[cut - 1]]:
                    continue
                if cut < min_leaf or m - cut < min_leaf:
                    continue
                nl = cut
                nr = m - cut
                pl = npos_left / nl
                pr = (pos - npos_left) / nr
                cost = (
                    nl * (1.0 - pl * pl - (1.0 - pl) * (1.0 - pl))
                    + nr * (1.0 - pr * pr - (1.0 - pr) * (1.0 - pr))
                ) / m
                # strict < plus ascending (feature, threshold) scan order
                # implements the lowest-feature, lowest-threshold tie-break
                if cost < best_cost - 1e-12:
                    best_cost = cost
                    best_f = f
                    best_t = 0.5 * (vals[order[cut - 1]] + vals[order[cut]])
        if best_f < 0:
            continue

        # stable partition of idx[start:end] by threshold
        k = 0
        for i in range(start, end):
            if X[idx[i], best_f] <= best_t:
                vals[k] = idx[i]  # reuse vals as scratch for left indices
                k += 1
        kk = k
        j2 = 0
        for i in range(start, end):
            if X[idx[i], best_f] > best_t:
                ybuf[j2] = idx[i]
                j2 += 1
        for i in range(k):
            idx[start + i] = int(vals[i])
        for i in range(j2):
            idx[start + k + i] = ybuf[i]

        feat[node] = best_f
        thr[node] = best_t
        left[node] = n_nodes
        right[node] = n_nodes + 1
        stack[top, 0] = n_nodes
        stack[top, 1] = start
        stack[top, 2] = start + kk
        stack[top, 3] = depth + 1
        stack[top + 1, 0] = n_nodes + 1
        stack[top + 1, 1] = start + kk
        stack[top + 1, 2] = end
        stack[top + 1, 3] = depth + 1
        top += 2
        n_nodes += 2

    return feat[:n_nodes], thr[:n_nodes], left[:n_nodes], right[:n_nodes], prob[:n_nodes]


@njit(cache=True)
def _predict_tree(feat, thr, left, right, prob, X, out):
    for i in range(X.shape[0]):
        node = 0
        while feat[node] >= 0:
            if X[i, feat[node]] <= thr[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = prob[node]


@dataclass
class Tree:
    feat: np.ndarray
    thr: np.ndarray
    left: np.ndarray
    right: np.ndarray
    prob: np.ndarray

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        out = np.empty(X.shape[0], np.float64)
        _predict_tree(self.feat, self.thr, self.left, self.right, self.prob, X, out)
        return out


@dataclass
class Forest:
    trees: list[Tree]
    config: ForestConfig
    feature_names: list[str]
    oob_masks: np.ndarray  # (n_trees, n_train) bool

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise ValueError(
                f"feature dimension mismatch: got {X.shape[1]}, forest has {self.n_features}"
            )
        acc = np.zeros(X.shape[0])
        for t in self.trees:
            acc += t.predict_proba(X)
        return acc / len(self.trees)

    def to_json(self) -> dict:
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "config": {
                "n_trees": self.config.n_trees,
                "max_features": self.config.max_features,
                "min_leaf": self.config.min_leaf,
                "max_depth": self.config.max_depth,
                "bootstrap_size": self.config.bootstrap_size,
                "seed": self.config.seed,
            },
            "feature_names": self.feature_names,
            "trees": [
                {
                    "feature": t.feat.tolist(),
                    "threshold": t.thr.tolist(),
                    "left": t.left.tolist(),
                    "right": t.right.tolist(),
                    "leaf_prob": t.prob.tolist(),
                }
                for t in self.trees
            ],
            "oob_masks": [m.nonzero()[0].tolist() for m in self.oob_masks],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Forest":
        if doc.get("format_version") != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported model format {doc.get('format_version')!r}")
        trees = [
            Tree(
                feat=np.asarray(t["feature"], np.int32),
                thr=np.asarray(t["threshold"], np.float64),
                left=np.asarray(t["left"], np.int32),
                right=np.asarray(t["right"], np.int32),
                prob=np.asarray(t["leaf_prob"], np.float64),
            )
            for t in doc["trees"]
        ]
        n = max((max(m) + 1 for m in doc["oob_masks"] if m), default=0)
        masks = np.zeros((len(trees), n), bool)
        for i, m in enumerate(doc["oob_masks"]):
            masks[i, m] = True
        return cls(
            trees=trees,
            config=ForestConfig(**doc["config"]),
            feature_names=list(doc["feature_names"]),
            oob_masks=masks,
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path: str | Path) -> "Forest":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass
class EvalReport:
    scores: np.ndarray
    labels: np.ndarray
    auc: float
    roc_points: list[tuple[float, float]]
    per_class_counts: dict[str, int]
    skipped_folds: int = 0


@dataclass
class ImportanceReport:
    feature_names: list[str]
    mean_error_increase: np.ndarray
    sd_over_trees: np.ndarray
    score: np.ndarray
    degenerate: np.ndarray  # True where sd == 0

    def ranking(self) -> list[int]:
        return list(np.argsort(-self.score, kind="stable"))


def synthetic_corpus(
    n: int = 200, d: int = 30, n_informative: int = 3, seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Bundled separable synthetic corpus for classifier sanity checks.

    The first n_informative features carry the signal (label = sign of their
    sum); the remaining features are independent noise.
    """
    rng = np.random.default_rng(seed)
    X = rng.normal(0.0, 1.0, (n, d))
    y = (X[:, :n_informative].sum(axis=1) > 0).astype(np.int64)
    if y.min() == y.max():
        y[0] = 1 - y[0]
    return X, y


def _as_matrix(X, y) -> tuple[np.ndarray, np.ndarray]:
    X = np.ascontiguousarray(X, np.float64)
    y = np.asarray(y, np.int64)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be (n, d) and y (n,)")
    return X, y


def train(X, y, cfg: ForestConfig, feature_names: list[str] | None = None) -> Forest:
    """Grow cfg.n_trees CART trees on bootstrap samples; deterministic per seed."""
    X, y = _as_matrix(X, y)
    n, d = X.shape
    if n < 2:
        raise ValueError("need at least 2 samples")
    if len(np.unique(y)) < 2:
        raise ValueError("training data contains a single class")
    if cfg.n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    max_features = cfg.resolved_max_features(d)
    boot_n = cfg.bootstrap_size or n
    names = feature_names or [f"f{i}" for i in range(d)]
    if len(names) != d:
        raise ValueError("feature_names length mismatch")

    children = np.random.SeedSequence(cfg.seed).spawn(cfg.n_trees)
    trees = []
    oob = np.zeros((cfg.n_trees, n), bool)
    for t, child in enumerate(children):
        rng = np.random.default_rng(child)
        boot = rng.integers(0, n, size=boot_n)
        oob[t] = ~np.isin(np.arange(n), boot)
        node_seed = int(rng.integers(0, 2**31 - 1))
        arrays = _grow_tree(X, y, boot.astype(np.int64), max_features, cfg.min_leaf, cfg.max_depth, node_seed)
        trees.append(Tree(*arrays))
    return Forest(trees=trees, config=cfg, feature_names=list(names), oob_masks=oob)


def predict_proba(f: Forest, x) -> np.ndarray:
    return f.predict_proba(x)


def loo_evaluate(X, y, cfg: ForestConfig, feature_names: list[str] | None = None) -> EvalReport:
    """Leave-one-out: train n forests on fresh seed substreams, pool scores.

    Folds whose training remainder is single-class are skipped and counted.
    """
    X, y = _as_matrix(X, y)
    n = X.shape[0]
    if n < 3:
        raise ValueError("leave-one-out needs at least 3 samples")
    if len(np.unique(y)) < 2:
        raise ValueError("both classes must be present")
    fold_seeds = np.random.SeedSequence(cfg.seed).spawn(n)
    scores, labels = [], []
    skipped = 0
    mask = np.ones(n, bool)
    for i in range(n):
        mask[i] = False
        y_tr = y[mask]
        if len(np.unique(y_tr)) < 2:
            skipped += 1
            mask[i] = True
            continue
        fold_cfg = ForestConfig(
            n_trees=cfg.n_trees,
            max_features=cfg.max_features,
            min_leaf=cfg.min_leaf,
            max_depth=cfg.max_depth,
            bootstrap_size=cfg.bootstrap_size,
            seed=int(np.random.default_rng(fold_seeds[i]).integers(0, 2**63 - 1)),
        )
        forest = train(X[mask], y_tr, fold_cfg, feature_names)
        scores.append(float(forest.predict_proba(X[i])[0]))
        labels.append(int(y[i]))
        mask[i] = True
    scores_a = np.asarray(scores)
    labels_a = np.asarray(labels)
    if len(np.unique(labels_a)) < 2:
        # skipped folds removed one class entirely; no pooled ROC exists
        auc, points = float("nan"), []
    else:
        auc, points = roc_auc(scores_a, labels_a)
    return EvalReport(
        scores=scores_a,
        labels=labels_a,
        auc=auc,
        roc_points=points,
        per_class_counts={"HIGH": int(labels_a.sum()), "LOW": int((1 - labels_a).sum())},
        skipped_folds=skipped,
    )


def importance(f: Forest, X, y, seed: int = 0) -> ImportanceReport:
    """Permutation importance on out-of-bag samples.

    Per tree and feature: OOB misclassification error with that feature's
    values permuted, minus the baseline OOB error; mean over trees divided
    by the standard deviation over trees.
    """
    X, y = _as_matrix(X, y)
    n, d = X.shape
    if f.oob_masks.shape[1] != n:
        raise ValueError("X does not match the forest's training set")
    if not f.oob_masks.any(axis=1).all():
        raise ValueError("a tree has no out-of-bag samples")
    rng = np.random.default_rng(seed)
    increases = np.zeros((len(f.trees), d))
    for t, tree in enumerate(f.trees):
        oob_idx = np.flatnonzero(f.oob_masks[t])
        X_oob = X[oob_idx]
        y_oob = y[oob_idx]
        base_pred = (tree.predict_proba(X_oob) >= 0.5).astype(int)
        base_err = float(np.mean(base_pred != y_oob))
        for j in range(d):
            perm = rng.permutation(len(oob_idx))
            X_perm = X_oob.copy()
            X_perm[:, j] = X_oob[perm, j]
            pred = (tree.predict_proba(X_perm) >= 0.5).astype(int)
            increases[t, j] = float(np.mean(pred != y_oob)) - base_err
    mean = increases.mean(axis=0)
    sd = increases.std(axis=0)
    degenerate = sd == 0
    score = np.where(degenerate, 0.0, mean / np.where(degenerate, 1.0, sd))
    return ImportanceReport(
        feature_names=list(f.feature_names),
        mean_error_increase=mean,
        sd_over_trees=sd,
        score=score,
        degenerate=degenerate,
    )
