"""Beam-pair classification: CART decision tree, top-K ranking and policies.

The tree is plain greedy CART over the UAV coordinates (x, y, z) with Gini
impurity and midpoint thresholds, trained on NLOS rows only. Baselines are a
uniform random pair picker and the full-sweep oracle.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass

import numpy as np

from .phy import pair_index

logger = logging.getLogger(__name__)

N_PAIRS = 256
TOPK_GRID = (1, 2, 3, 4, 5, 10, 25, 50, 75, 100)


@dataclass
class BeamDataset:
    """One row per retained snapshot: position, LOS class, best pair, sweep gains."""

    positions: np.ndarray  # (n, 3)
    los: np.ndarray  # (n,) str
    best_pair: np.ndarray  # (n,) int
    gains: np.ndarray  # (n, 256)

    def __len__(self) -> int:
        return self.positions.shape[0]

    def subset(self, idx) -> "BeamDataset":
        return BeamDataset(
            positions=self.positions[idx],
            los=self.los[idx],
            best_pair=self.best_pair[idx],
            gains=self.gains[idx],
        )

    @classmethod
    def from_rows(cls, rows) -> "BeamDataset":
        if rows:
            positions = np.array([r[0] for r in rows], dtype=float)
            los = np.array([r[1] for r in rows], dtype=object)
            best = np.array([r[2] for r in rows], dtype=np.int64)
            gains = np.array([r[3] for r in rows], dtype=float)
        else:
            positions = np.zeros((0, 3))
            los = np.zeros(0, dtype=object)
            best = np.zeros(0, dtype=np.int64)
            gains = np.zeros((0, N_PAIRS))
        return cls(positions, los, best, gains)

    def save_csv(self, path) -> None:
        header = ["x", "y", "z", "los", "best_pair"] + [f"g{i}" for i in range(N_PAIRS)]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for i in range(len(self)):
                row = [repr(float(v)) for v in self.positions[i]]
                row += [str(self.los[i]), str(int(self.best_pair[i]))]
                row += [repr(float(g)) for g in self.gains[i]]
                writer.writerow(row)

    @classmethod
    def load_csv(cls, path) -> "BeamDataset":
        rows = []
        with open(path, "r", newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header[:5] != ["x", "y", "z", "los", "best_pair"]:
                raise ValueError(f"unexpected dataset header in {path}")
            for rec in reader:
                pos = (float(rec[0]), float(rec[1]), float(rec[2]))
                gains = np.array([float(v) for v in rec[5:]], dtype=float)
                rows.append((pos, rec[3], int(rec[4]), gains))
        return cls.from_rows(rows)


def filter_nlos(dataset: BeamDataset) -> BeamDataset:
    """Keep NLOS rows only; LOS and outage rows are dropped."""
    keep = np.array([c == "NLOS" for c in dataset.los], dtype=bool)
    out = dataset.subset(keep)
    if len(out) == 0:
        logger.warning("NLOS filter produced an empty dataset")
    return out


def split_dataset(dataset: BeamDataset, train_frac: float = 0.7, seed: int = 0):
    """Seeded shuffle, then split into (train, validation); disjoint by construction."""
    if not 0.0 < train_frac < 1.0:
        raise ValueError("train_frac must be in (0, 1)")
    n = len(dataset)
    if n < 2:
        raise ValueError("need at least 2 rows to split")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(np.floor(train_frac * n))
    return dataset.subset(perm[:n_train]), dataset.subset(perm[n_train:])


# ---------------------------------------------------------------------------
# CART
# ---------------------------------------------------------------------------


class TreeNode:
    __slots__ = ("feature", "threshold", "left", "right", "counts")

    def __init__(self, feature=-1, threshold=0.0, left=None, right=None, counts=None):
        self.feature = feature
        self.threshold = threshold
        self.left = left
        self.right = right
        self.counts = counts

    @property
    def is_leaf(self) -> bool:
        return self.counts is not None


@dataclass
class DecisionTreeModel:
    root: TreeNode
    max_depth: int
    n_classes: int = N_PAIRS

    def leaf_for(self, position) -> TreeNode:
        node = self.root
        while not node.is_leaf:
            node = node.left if position[node.feature] <= node.threshold else node.right
        return node

    def predict(self, position) -> int:
        counts = self.leaf_for(position).counts
        return int(np.argmax(counts))

    def depth(self) -> int:
        def walk(node):
            if node.is_leaf:
                return 0
            return 1 + max(walk(node.left), walk(node.right))

        return walk(self.root)

    def to_json(self) -> str:
        def encode(node):
            if node.is_leaf:
                nz = np.nonzero(node.counts)[0]
                return {"counts": {str(int(i)): int(node.counts[i]) for i in nz}}
            return {
                "feature": int(node.feature),
                "threshold": float(node.threshold),
                "left": encode(node.left),
                "right": encode(node.right),
            }

        return json.dumps(
            {"max_depth": self.max_depth, "n_classes": self.n_classes, "root": encode(self.root)},
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "DecisionTreeModel":
        doc = json.loads(text)
        n_classes = int(doc.get("n_classes", N_PAIRS))

        def decode(d) -> TreeNode:
            if "counts" in d:
                counts = np.zeros(n_classes, dtype=np.int64)
                for k, v in d["counts"].items():
                    counts[int(k)] = int(v)
                return TreeNode(counts=counts)
            return TreeNode(
                feature=d["feature"],
                threshold=d["threshold"],
                left=decode(d["left"]),
                right=decode(d["right"]),
            )

        return cls(root=decode(doc["root"]), max_depth=int(doc["max_depth"]), n_classes=n_classes)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "DecisionTreeModel":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def _gini_from_counts(counts, total):
    return 1.0 - np.sum((counts / total) ** 2)


def _best_split(x, y, n_classes, min_leaf):
    """Lowest weighted-Gini split; ties go to the lowest feature, then threshold.

    Returns (weighted_gini, feature, threshold) or None when no valid split
    exists.
    """
    n = x.shape[0]
    best = None
    for f in range(x.shape[1]):
        order = np.argsort(x[:, f], kind="stable")
        xs = x[order, f]
        ys = y[order]
        onehot = np.zeros((n, n_classes), dtype=np.float64)
        onehot[np.arange(n), ys] = 1.0
        cum = np.cumsum(onehot, axis=0)  # cum[k-1] = class counts of first k rows
        total = cum[-1]
        ks = np.arange(min_leaf, n - min_leaf + 1)
        ks = ks[(ks >= 1) & (ks <= n - 1)]
        if ks.size == 0:
            continue
        distinct = xs[ks - 1] < xs[ks]
        ks = ks[distinct]
        if ks.size == 0:
            continue
        left = cum[ks - 1]
        right = total[None, :] - left
        kf = ks.astype(np.float64)
        gini_l = 1.0 - np.sum((left / kf[:, None]) ** 2, axis=1)
        gini_r = 1.0 - np.sum((right / (n - kf)[:, None]) ** 2, axis=1)
        weighted = (kf * gini_l + (n - kf) * gini_r) / n
        i = int(np.argmin(weighted))
        thr = 0.5 * (xs[ks[i] - 1] + xs[ks[i]])
        cand = (float(weighted[i]), f, float(thr))
        if best is None or cand[0] < best[0]:
            best = cand
    return best


def train_tree(train: BeamDataset, max_depth: int = 15, min_leaf: int = 1) -> DecisionTreeModel:
    """Greedy CART fit; deterministic given the input row order."""
    if len(train) == 0:
        raise ValueError("cannot train on an empty dataset")
    x = np.asarray(train.positions, dtype=np.float64)
    y = np.asarray(train.best_pair, dtype=np.int64)

    def build(idx, depth) -> TreeNode:
        ys = y[idx]
        counts = np.bincount(ys, minlength=N_PAIRS)
        if depth >= max_depth or idx.size <= min_leaf or np.unique(ys).size == 1:
            return TreeNode(counts=counts)
        split = _best_split(x[idx], ys, N_PAIRS, min_leaf)
        if split is None:
            return TreeNode(counts=counts)
        weighted, feature, threshold = split
        if weighted >= _gini_from_counts(counts, idx.size) - 1e-12:
            return TreeNode(counts=counts)
        mask = x[idx, feature] <= threshold
        return TreeNode(
            feature=feature,
            threshold=threshold,
            left=build(idx[mask], depth + 1),
            right=build(idx[~mask], depth + 1),
        )

    return DecisionTreeModel(root=build(np.arange(len(train)), 0), max_depth=max_depth)


def _rank_desc(values) -> np.ndarray:
    """Indices sorted by value descending, ties toward the lower index."""
    values = np.asarray(values)
    return np.lexsort((np.arange(values.shape[0]), -values))


def predict_topk(model: DecisionTreeModel, position, k: int) -> list:
    """Top-k pair indices by leaf class frequency; unseen classes pad by index."""
    if not 1 <= k <= model.n_classes:
        raise ValueError(f"k must be in [1, {model.n_classes}]")
    counts = model.leaf_for(position).counts
    return [int(i) for i in _rank_desc(counts)[:k]]


def truth_topk(gains, k: int) -> np.ndarray:
    return _rank_desc(gains)[:k]


def topk_accuracy(model: DecisionTreeModel, eval_ds: BeamDataset, k: int) -> float:
    """Fraction of rows whose predicted top-k meets the gains' true top-k."""
    if len(eval_ds) == 0:
        raise ValueError("evaluation dataset is empty")
    hits = 0
    for i in range(len(eval_ds)):
        pred = predict_topk(model, eval_ds.positions[i], k)
        best = set(int(j) for j in truth_topk(eval_ds.gains[i], k))
        if any(p in best for p in pred):
            hits += 1
    return hits / len(eval_ds)


# ---------------------------------------------------------------------------
# policies
# ---------------------------------------------------------------------------


@dataclass
class Policy:
    kind: str  # "random" | "tree" | "oracle"
    model: DecisionTreeModel | None = None

    def __post_init__(self):
        if self.kind not in ("random", "tree", "oracle"):
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.kind == "tree" and self.model is None:
            raise ValueError("tree policy requires a trained model")


def policy_decide(policy: Policy, position, gains, rng) -> int:
    """Pick a beam pair: uniform random, tree top-1 or the sweep oracle."""
    if policy.kind == "random":
        return pair_index(int(rng.integers(0, 4)), int(rng.integers(0, 64)))
    if policy.kind == "tree":
        return predict_topk(policy.model, position, 1)[0]
    if gains is None:
        raise ValueError("oracle policy requires the snapshot's gains vector")
    return int(np.argmax(gains))
