"""Histogram gradient-boosted trees with squared and absolute error.

Small from-scratch booster tailored to this pipeline: quantile-binned
histograms, leaf-wise growth, a reserved zero/missing bin routed by a
learned default direction, and early stopping on a validation set.

The squared-error objective uses gradient pred - y with unit hessian,
so a leaf's optimal value is the shrunk mean residual. The absolute
error objective boosts on sign gradients for split search and refits
each leaf to the median residual, which is what makes the group-level
model estimate a median rather than a mean.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._kernels import (
    MAX_PATH,
    best_splits,
    build_histogram,
    predict_trees,
)
from .binning import Binner

__all__ = ["TrainConfig", "Tree", "GbdtModel", "fit", "OBJECTIVES"]

OBJECTIVES = ("mse", "mae")
GAIN_EPS = 1e-12
MAX_DEPTH = MAX_PATH - 4  # structural guard for the attribution buffers


@dataclass(frozen=True)
class TrainConfig:
    num_trees: int = 500
    learning_rate: float = 0.05
    max_leaves: int = 31
    min_data_in_leaf: int = 20
    max_bins: int = 255
    early_stopping_rounds: int = 50
    l2_reg: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.num_trees < 1:
            raise ValueError("num_trees must be positive")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must lie in (0, 1]")
        if self.max_leaves < 2:
            raise ValueError("max_leaves must be at least 2")
        if self.min_data_in_leaf < 1:
            raise ValueError("min_data_in_leaf must be positive")
        if not 1 <= self.max_bins <= 255:
            raise ValueError("max_bins must lie in [1, 255]")
        if self.l2_reg < 0:
            raise ValueError("l2_reg must be non-negative")
        if self.early_stopping_rounds < 0:
            raise ValueError("early_stopping_rounds must be non-negative")


@dataclass
class Tree:
    """Array-of-nodes tree; left < 0 marks a leaf at that node."""

    feature: np.ndarray      # int32
    threshold: np.ndarray    # float64, raw value; value <= threshold goes left
    default_left: np.ndarray # uint8, routing for zeros and NaNs
    left: np.ndarray         # int32, -1 for leaves
    right: np.ndarray        # int32
    value: np.ndarray        # float64, leaf outputs (zero on internal nodes)
    cover: np.ndarray        # float64, training rows through each node
    gain: np.ndarray         # float64, split gain (zero on leaves)

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    @property
    def n_leaves(self) -> int:
        return int((self.left < 0).sum())

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int32)
        active = np.flatnonzero(self.left[node] >= 0)
        while active.size:
            j = node[active]
            f = self.feature[j]
            xv = X[active, f]
            missing = (xv == 0.0) | np.isnan(xv)
            go_left = np.where(missing, self.default_left[j] == 1, xv <= self.threshold[j])
            node[active] = np.where(go_left, self.left[j], self.right[j])
            active = active[self.left[node[active]] >= 0]
        return self.value[node]

    def expected_value(self) -> float:
        """Cover-weighted mean output, the training-set expectation."""
        leaves = self.left < 0
        return float((self.value[leaves] * self.cover[leaves]).sum() / self.cover[0])

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "default_left": self.default_left.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "cover": self.cover.tolist(),
            "gain": self.gain.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            feature=np.asarray(d["feature"], dtype=np.int32),
            threshold=np.asarray(d["threshold"], dtype=np.float64),
            default_left=np.asarray(d["default_left"], dtype=np.uint8),
            left=np.asarray(d["left"], dtype=np.int32),
            right=np.asarray(d["right"], dtype=np.int32),
            value=np.asarray(d["value"], dtype=np.float64),
            cover=np.asarray(d["cover"], dtype=np.float64),
            gain=np.asarray(d["gain"], dtype=np.float64),
        )


@dataclass
class GbdtModel:
    objective: str
    base_score: float
    learning_rate: float
    trees: list[Tree]
    best_iteration: int  # predictions use trees[:best_iteration]
    feature_names: list[str]
    train_losses: list[float] = field(default_factory=list)
    valid_losses: list[float] | None = None

    def __post_init__(self):
        self._flat_cache: dict[int, tuple] = {}

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @classmethod
    def constant(cls, value: float, feature_names: Sequence[str], objective: str = "mae") -> "GbdtModel":
        return cls(
            objective=objective,
            base_score=float(value),
            learning_rate=1.0,
            trees=[],
            best_iteration=0,
            feature_names=list(feature_names),
        )

    @property
    def is_constant(self) -> bool:
        return self.best_iteration == 0

    def flat_arrays(self, n_trees: int | None = None) -> tuple:
        """Concatenated node arrays for the first n_trees trees."""
        count = self.best_iteration if n_trees is None else n_trees
        count = min(count, len(self.trees))
        if count in self._flat_cache:
            return self._flat_cache[count]
        if count == 0:
            empty_i = np.empty(0, dtype=np.int32)
            flat = (
                empty_i, np.empty(0, dtype=np.float64), np.empty(0, dtype=np.uint8),
                empty_i, empty_i.copy(), np.empty(0, dtype=np.float64),
                np.empty(0, dtype=np.float64), np.empty(0, dtype=np.int64),
            )
            self._flat_cache[count] = flat
            return flat
        roots = np.zeros(count, dtype=np.int64)
        offset = 0
        feats, thrs, dls, lefts, rights, values, covers = [], [], [], [], [], [], []
        for t, tree in enumerate(self.trees[:count]):
            roots[t] = offset
            feats.append(tree.feature)
            thrs.append(tree.threshold)
            dls.append(tree.default_left)
            shift_left = tree.left.copy()
            shift_right = tree.right.copy()
            internal = tree.left >= 0
            shift_left[internal] += offset
            shift_right[internal] += offset
            lefts.append(shift_left)
            rights.append(shift_right)
            values.append(tree.value)
            covers.append(tree.cover)
            offset += tree.n_nodes
        flat = (
            np.concatenate(feats), np.concatenate(thrs), np.concatenate(dls),
            np.concatenate(lefts), np.concatenate(rights),
            np.concatenate(values), np.concatenate(covers), roots,
        )
        self._flat_cache[count] = flat
        return flat

    def predict(self, X: np.ndarray) -> np.ndarray:
        """base_score + learning_rate * sum of tree outputs."""
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected (n, {self.n_features}) feature matrix")
        out = np.empty(X.shape[0], dtype=np.float64)
        if self.best_iteration == 0:
            out[:] = 0.0
        else:
            feat, thr, dleft, left, right, value, _, roots = self.flat_arrays()
            predict_trees(X, feat, thr, dleft, left, right, value, roots, out)
        return self.base_score + self.learning_rate * out

    def predict_row(self, x: np.ndarray) -> float:
        return float(self.predict(np.asarray(x, dtype=np.float64).reshape(1, -1))[0])

    def feature_importance(self) -> dict[str, dict[str, float]]:
        """Split counts and total gain per feature over the used trees."""
        out = {name: {"splits": 0, "gain": 0.0} for name in self.feature_names}
        for tree in self.trees[:self.best_iteration]:
            internal = tree.left >= 0
            for f, g in zip(tree.feature[internal], tree.gain[internal]):
                name = self.feature_names[f]
                out[name]["splits"] += 1
                out[name]["gain"] += float(g)
        return out

    def n_features_used(self) -> int:
        return sum(1 for v in self.feature_importance().values() if v["splits"] > 0)

    def total_splits(self) -> int:
        return sum(v["splits"] for v in self.feature_importance().values())

    # -- persistence --------------------------------------------------------

    def to_json_dict(self) -> dict:
        return {
            "format_version": 1,
            "objective": self.objective,
            "base_score": self.base_score,
            "learning_rate": self.learning_rate,
            "best_iteration": self.best_iteration,
            "feature_names": self.feature_names,
            "train_losses": self.train_losses,
            "valid_losses": self.valid_losses,
            "trees": [t.to_dict() for t in self.trees],
        }

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json_dict(cls, d: dict) -> "GbdtModel":
        if d.get("format_version") != 1:
            raise ValueError(f"unsupported model format: {d.get('format_version')!r}")
        return cls(
            objective=d["objective"],
            base_score=d["base_score"],
            learning_rate=d["learning_rate"],
            trees=[Tree.from_dict(t) for t in d["trees"]],
            best_iteration=d["best_iteration"],
            feature_names=list(d["feature_names"]),
            train_losses=list(d["train_losses"]),
            valid_losses=None if d["valid_losses"] is None else list(d["valid_losses"]),
        )

    @classmethod
    def load(cls, path: str) -> "GbdtModel":
        with open(path) as fh:
            return cls.from_json_dict(json.load(fh))


# ---------------------------------------------------------------------------
# training


class _LeafCandidate:
    __slots__ = ("node_id", "rows", "hist_g", "hist_n", "depth", "gain", "feature", "bin", "default_left")

    def __init__(self, node_id, rows, hist_g, hist_n, depth):
        self.node_id = node_id
        self.rows = rows
        self.hist_g = hist_g
        self.hist_n = hist_n
        self.depth = depth
        self.gain = 0.0
        self.feature = -1
        self.bin = -1
        self.default_left = 1


def _leaf_value(objective: str, grad: np.ndarray, residual: np.ndarray, rows: np.ndarray, l2: float) -> float:
    if objective == "mse":
        return float(-grad[rows].sum() / (rows.size + l2))
    return float(np.median(residual[rows]))


def _loss(objective: str, pred: np.ndarray, y: np.ndarray) -> float:
    if objective == "mse":
        diff = pred - y
        return float(np.mean(diff * diff))
    return float(np.mean(np.abs(pred - y)))


def _grow_tree(codes, n_bins, grad, residual, objective, cfg: TrainConfig):
    """Grow one tree leaf-wise on binned data; returns (Tree, leaf_rows)."""
    n_rows = grad.shape[0]
    nodes_feature = [0]
    nodes_threshold_bin = [-1]
    nodes_default = [1]
    nodes_left = [-1]
    nodes_right = [-1]
    nodes_cover = [float(n_rows)]
    nodes_gain = [0.0]
    leaf_rows: dict[int, np.ndarray] = {}

    def new_candidate(node_id, rows, hist_g, hist_n, depth):
        cand = _LeafCandidate(node_id, rows, hist_g, hist_n, depth)
        if depth < MAX_DEPTH and rows.size >= 2 * cfg.min_data_in_leaf:
            out_gain = np.empty(hist_g.shape[0], dtype=np.float64)
            out_bin = np.empty(hist_g.shape[0], dtype=np.int32)
            out_dl = np.empty(hist_g.shape[0], dtype=np.uint8)
            best_splits(hist_g, hist_n, n_bins, cfg.l2_reg, float(cfg.min_data_in_leaf),
                        out_gain, out_bin, out_dl)
            f = int(np.argmax(out_gain))
            if out_gain[f] > GAIN_EPS:
                cand.gain = float(out_gain[f])
                cand.feature = f
                cand.bin = int(out_bin[f])
                cand.default_left = int(out_dl[f])
        return cand

    all_rows = np.arange(n_rows, dtype=np.int64)
    n_features = codes.shape[0]
    bins_dim = int(n_bins.max(initial=0)) + 1
    root_g = np.empty((n_features, bins_dim), dtype=np.float64)
    root_n = np.empty((n_features, bins_dim), dtype=np.float64)
    build_histogram(codes, all_rows, grad, root_g, root_n)
    frontier = [new_candidate(0, all_rows, root_g, root_n, 0)]
    n_leaves = 1

    while n_leaves < cfg.max_leaves:
        best = None
        for cand in frontier:
            if cand.feature >= 0 and (best is None or cand.gain > best.gain):
                best = cand
        if best is None:
            break
        frontier.remove(best)
        f, b, dl = best.feature, best.bin, best.default_left
        col = codes[f][best.rows]
        if dl:
            mask = col <= b
        else:
            mask = (col >= 1) & (col <= b)
        rows_left = best.rows[mask]
        rows_right = best.rows[~mask]

        # smaller child gets a fresh histogram; the sibling is derived
        if rows_left.size <= rows_right.size:
            small_rows, big_rows = rows_left, rows_right
        else:
            small_rows, big_rows = rows_right, rows_left
        small_g = np.empty_like(best.hist_g)
        small_n = np.empty_like(best.hist_n)
        build_histogram(codes, small_rows, grad, small_g, small_n)
        big_g = best.hist_g - small_g
        big_n = best.hist_n - small_n
        if rows_left.size <= rows_right.size:
            left_hists, right_hists = (small_g, small_n), (big_g, big_n)
        else:
            left_hists, right_hists = (big_g, big_n), (small_g, small_n)

        node_id = best.node_id
        left_id = len(nodes_feature)
        right_id = left_id + 1
        nodes_feature[node_id] = f
        nodes_threshold_bin[node_id] = b
        nodes_default[node_id] = dl
        nodes_left[node_id] = left_id
        nodes_right[node_id] = right_id
        nodes_gain[node_id] = best.gain
        for rows_child in (rows_left, rows_right):
            nodes_feature.append(0)
            nodes_threshold_bin.append(-1)
            nodes_default.append(1)
            nodes_left.append(-1)
            nodes_right.append(-1)
            nodes_cover.append(float(rows_child.size))
            nodes_gain.append(0.0)
        frontier.append(new_candidate(left_id, rows_left, *left_hists, best.depth + 1))
        frontier.append(new_candidate(right_id, rows_right, *right_hists, best.depth + 1))
        n_leaves += 1

    values = np.zeros(len(nodes_feature), dtype=np.float64)
    for cand in frontier:
        values[cand.node_id] = _leaf_value(objective, grad, residual, cand.rows, cfg.l2_reg)
        leaf_rows[cand.node_id] = cand.rows
    return (
        {
            "feature": np.asarray(nodes_feature, dtype=np.int32),
            "threshold_bin": np.asarray(nodes_threshold_bin, dtype=np.int32),
            "default_left": np.asarray(nodes_default, dtype=np.uint8),
            "left": np.asarray(nodes_left, dtype=np.int32),
            "right": np.asarray(nodes_right, dtype=np.int32),
            "value": values,
            "cover": np.asarray(nodes_cover, dtype=np.float64),
            "gain": np.asarray(nodes_gain, dtype=np.float64),
        },
        leaf_rows,
    )


def fit(
    X: np.ndarray,
    y: np.ndarray,
    X_valid: np.ndarray | None = None,
    y_valid: np.ndarray | None = None,
    objective: str = "mse",
    config: TrainConfig | None = None,
    feature_names: Sequence[str] | None = None,
) -> GbdtModel:
    """Train a boosted ensemble; early-stops on the validation loss.

    With a validation pair and early_stopping_rounds > 0, training
    stops once the validation loss has not improved for that many
    rounds and best_iteration marks the minimum of the curve.
    """
    if objective not in OBJECTIVES:
        raise ValueError(f"objective must be one of {OBJECTIVES}")
    cfg = config or TrainConfig()
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be (n, F) with matching y")
    if X.shape[0] < 1:
        raise ValueError("need at least one training row")
    if (X_valid is None) != (y_valid is None):
        raise ValueError("X_valid and y_valid go together")
    names = list(feature_names) if feature_names is not None else [f"f{i}" for i in range(X.shape[1])]
    if len(names) != X.shape[1]:
        raise ValueError("feature_names length mismatch")

    binner = Binner(max_bins=cfg.max_bins).fit(X)
    codes = binner.transform(X)
    n_bins = binner.n_bins()

    base = float(np.mean(y)) if objective == "mse" else float(np.median(y))
    pred = np.full(y.shape[0], base, dtype=np.float64)
    if X_valid is not None:
        X_valid = np.ascontiguousarray(X_valid, dtype=np.float64)
        y_valid = np.asarray(y_valid, dtype=np.float64)
        vpred = np.full(y_valid.shape[0], base, dtype=np.float64)

    trees: list[Tree] = []
    train_losses: list[float] = []
    valid_losses: list[float] | None = [] if X_valid is not None else None
    best_loss = np.inf
    best_round = 0

    for _ in range(cfg.num_trees):
        if objective == "mse":
            grad = pred - y
        else:
            grad = np.sign(pred - y)
        residual = y - pred
        raw, leaf_rows = _grow_tree(codes, n_bins, grad, residual, objective, cfg)

        thresholds = np.zeros(raw["feature"].shape[0], dtype=np.float64)
        internal = raw["left"] >= 0
        for j in np.flatnonzero(internal):
            thresholds[j] = binner.threshold_for(int(raw["feature"][j]), int(raw["threshold_bin"][j]))
        tree = Tree(
            feature=raw["feature"],
            threshold=thresholds,
            default_left=raw["default_left"],
            left=raw["left"],
            right=raw["right"],
            value=raw["value"],
            cover=raw["cover"],
            gain=raw["gain"],
        )
        trees.append(tree)
        for node_id, rows in leaf_rows.items():
            pred[rows] += cfg.learning_rate * tree.value[node_id]
        train_losses.append(_loss(objective, pred, y))

        if X_valid is not None:
            vpred += cfg.learning_rate * tree.predict(X_valid)
            vloss = _loss(objective, vpred, y_valid)
            valid_losses.append(vloss)
            if vloss < best_loss:
                best_loss = vloss
                best_round = len(trees)
            elif cfg.early_stopping_rounds and len(trees) - best_round >= cfg.early_stopping_rounds:
                break

    best_iteration = best_round if X_valid is not None and best_round > 0 else len(trees)
    return GbdtModel(
        objective=objective,
        base_score=base,
        learning_rate=cfg.learning_rate,
        trees=trees,
        best_iteration=best_iteration,
        feature_names=names,
        train_losses=train_losses,
        valid_losses=valid_losses,
    )
