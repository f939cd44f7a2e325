"""Decision tree and random forest over the four traffic features.

Trees are grown on weighted unique rows: captured traffic is heavily
duplicated, so collapsing identical feature vectors and carrying multiplicity
as sample weight gives identical splits at a fraction of the cost. Bootstrap
resampling draws per-row multinomial counts, equivalent to resampling the
expanded multiset. All randomness flows from per-tree generators derived from
the model seed, so fitting is deterministic and trees are independent of each
other's order of construction.
"""

from __future__ import annotations

import numpy as np

from ..engine import derive_seed

GINI_EPS = 1e-12


def _unique_weighted(X: np.ndarray, y: np.ndarray, weights: np.ndarray | None = None):
    """Collapse duplicate rows; returns (rows, pos_weight, total_weight)."""
    if weights is None:
        weights = np.ones(len(X))
    rows, inverse = np.unique(X, axis=0, return_inverse=True)
    total = np.zeros(len(rows))
    positive = np.zeros(len(rows))
    np.add.at(total, inverse, weights)
    np.add.at(positive, inverse, weights * y)
    return rows, positive, total


class DecisionTree:
    """CART-style binary tree, Gini impurity, <= threshold goes left."""

    def __init__(self, max_depth: int | None, min_samples_split: int, max_features: int | None):
        self.max_depth = max_depth
        self.min_samples_split = min_samples_split
        self.max_features = max_features
        # parallel arrays; leaves carry feature -1 and the label in `label`
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.label: list[int] = []

    def fit(self, rows: np.ndarray, positive: np.ndarray, total: np.ndarray, rng) -> None:
        self._rows = rows
        self._grow(np.arange(len(rows)), positive, total, rng, depth=0)
        del self._rows

    def _leaf(self, positive_sum: float, total_sum: float) -> int:
        node = len(self.feature)
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        # majority label; ties resolve to attack (fail-safe toward detection)
        self.label.append(1 if positive_sum * 2 >= total_sum else 0)
        return node

    def _grow(self, idx: np.ndarray, positive: np.ndarray, total: np.ndarray, rng, depth: int) -> int:
        pos_sum = float(positive[idx].sum())
        tot_sum = float(total[idx].sum())
        pure = pos_sum < GINI_EPS or pos_sum > tot_sum - GINI_EPS
        if (
            pure
            or len(idx) < 2
            or tot_sum < self.min_samples_split
            or (self.max_depth is not None and depth >= self.max_depth)
        ):
            return self._leaf(pos_sum, tot_sum)

        n_features = self._rows.shape[1]
        if self.max_features is None or self.max_features >= n_features:
            candidates = np.arange(n_features)
        else:
            candidates = rng.choice(n_features, self.max_features, replace=False)

        parent_gini = self._gini(pos_sum, tot_sum)
        best = None  # (gain, feature, threshold, order, split_at)
        for f in candidates:
            values = self._rows[idx, f]
            order = np.argsort(values, kind="mergesort")
            sv = values[order]
            distinct = np.nonzero(sv[1:] != sv[:-1])[0]  # split after these positions
            if len(distinct) == 0:
                continue
            cum_pos = np.cumsum(positive[idx][order])
            cum_tot = np.cumsum(total[idx][order])
            left_pos = cum_pos[distinct]
            left_tot = cum_tot[distinct]
            right_pos = pos_sum - left_pos
            right_tot = tot_sum - left_tot
            weighted = (
                left_tot * self._gini_vec(left_pos, left_tot)
                + right_tot * self._gini_vec(right_pos, right_tot)
            ) / tot_sum
            gains = parent_gini - weighted
            at = int(np.argmax(gains))  # first maximum: lowest threshold wins ties
            gain = float(gains[at])
            if gain > GINI_EPS and (best is None or gain > best[0] + GINI_EPS):
                pos = distinct[at]
                threshold = float((sv[pos] + sv[pos + 1]) / 2.0)
                best = (gain, int(f), threshold, order, pos)
        if best is None:
            return self._leaf(pos_sum, tot_sum)

        _, f, threshold, order, pos = best
        left_idx = idx[order[: pos + 1]]
        right_idx = idx[order[pos + 1:]]
        node = len(self.feature)
        self.feature.append(f)
        self.threshold.append(threshold)
        self.left.append(-1)
        self.right.append(-1)
        self.label.append(-1)
        self.left[node] = self._grow(left_idx, positive, total, rng, depth + 1)
        self.right[node] = self._grow(right_idx, positive, total, rng, depth + 1)
        return node

    @staticmethod
    def _gini(pos: float, tot: float) -> float:
        if tot <= 0:
            return 0.0
        p = pos / tot
        return 2.0 * p * (1.0 - p)

    @staticmethod
    def _gini_vec(pos: np.ndarray, tot: np.ndarray) -> np.ndarray:
        p = np.divide(pos, tot, out=np.zeros_like(pos), where=tot > 0)
        return 2.0 * p * (1.0 - p)

    def predict(self, X: np.ndarray) -> np.ndarray:
        out = np.zeros(len(X), dtype=np.int64)
        node_of = np.zeros(len(X), dtype=np.int64)
        feature = np.asarray(self.feature)
        threshold = np.asarray(self.threshold)
        left = np.asarray(self.left)
        right = np.asarray(self.right)
        label = np.asarray(self.label)
        active = np.arange(len(X))
        while len(active):
            nodes = node_of[active]
            at_leaf = feature[nodes] == -1
            done = active[at_leaf]
            out[done] = label[node_of[done]]
            active = active[~at_leaf]
            if not len(active):
                break
            nodes = node_of[active]
            goes_left = X[active, feature[nodes]] <= threshold[nodes]
            node_of[active] = np.where(goes_left, left[nodes], right[nodes])
        return out

    def to_dict(self) -> dict:
        return {
            "feature": self.feature,
            "threshold": self.threshold,
            "left": self.left,
            "right": self.right,
            "label": self.label,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DecisionTree":
        tree = cls(max_depth=None, min_samples_split=2, max_features=None)
        tree.feature = [int(v) for v in data["feature"]]
        tree.threshold = [float(v) for v in data["threshold"]]
        tree.left = [int(v) for v in data["left"]]
        tree.right = [int(v) for v in data["right"]]
        tree.label = [int(v) for v in data["label"]]
        return tree


class RandomForestDetector:
    """Bootstrap ensemble of Gini trees with per-node random feature subsets."""

    def __init__(
        self,
        n_trees: int = 100,
        max_depth: int | None = 16,
        min_samples_split: int = 2,
        max_features: str | int | None = "sqrt",
        bootstrap: bool = True,
        seed: int = 0,
    ):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.min_samples_split = min_samples_split
        self.max_features = max_features
        self.bootstrap = bootstrap
        self.seed = seed
        self.trees: list[DecisionTree] = []

    def _resolved_max_features(self, n_features: int) -> int | None:
        if self.max_features == "sqrt":
            return max(1, int(np.sqrt(n_features)))
        if self.max_features is None:
            return None
        return int(self.max_features)

    def fit(self, X: np.ndarray, y: np.ndarray) -> "RandomForestDetector":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        classes = np.unique(y)
        if len(classes) < 2:
            raise ValueError(
                f"random forest needs both classes in the training set, got only {classes.tolist()}"
            )
        rows, positive, total = _unique_weighted(X, y)
        n = int(total.sum())
        k = self._resolved_max_features(X.shape[1])
        self.trees = []
        for i in range(self.n_trees):
            rng = np.random.default_rng(derive_seed(self.seed, f"tree:{i}"))
            if self.bootstrap:
                counts = rng.multinomial(n, total / n)
                scale = np.divide(counts, total, out=np.zeros_like(total), where=total > 0)
                tree_pos = positive * scale
                tree_tot = total * scale
                keep = tree_tot > 0
                tree = DecisionTree(self.max_depth, self.min_samples_split, k)
                tree.fit(rows[keep], tree_pos[keep], tree_tot[keep], rng)
            else:
                tree = DecisionTree(self.max_depth, self.min_samples_split, k)
                tree.fit(rows, positive, total, rng)
            self.trees.append(tree)
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        if not self.trees:
            raise ValueError("model not fitted")
        X = np.asarray(X, dtype=np.float64)
        votes = np.zeros(len(X), dtype=np.int64)
        for tree in self.trees:
            votes += tree.predict(X)
        # majority; exact ties go to attack
        return (votes * 2 >= len(self.trees)).astype(np.int64)

    def to_dict(self) -> dict:
        return {
            "n_trees": self.n_trees,
            "max_depth": self.max_depth,
            "min_samples_split": self.min_samples_split,
            "max_features": self.max_features,
            "bootstrap": self.bootstrap,
            "seed": self.seed,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RandomForestDetector":
        det = cls(
            n_trees=int(data["n_trees"]),
            max_depth=data["max_depth"],
            min_samples_split=int(data["min_samples_split"]),
            max_features=data["max_features"],
            bootstrap=bool(data["bootstrap"]),
            seed=int(data["seed"]),
        )
        det.trees = [DecisionTree.from_dict(t) for t in data["trees"]]
        return det
