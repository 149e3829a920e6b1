"""Second-order gradient-boosted regression trees with exact greedy splits.

The engine is deliberately small and exact: datasets in this domain are a few
thousand rows, so every split scans all features and all midpoints between
consecutive distinct sorted values.  Objectives are callbacks evaluated over
the full current prediction vector, which lets a loss couple rows within a
(category, week) group; per-row-isolated callbacks cannot express that.

Determinism: split search has no randomness and ties are broken by lowest
feature index, then lowest threshold, so identical inputs and config produce
bit-identical ensembles.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import (
    ContractViolationError,
    DegenerateLeafError,
    EmptyInputError,
    NumericError,
    ShapeError,
)
from .objectives import ObjectiveEval

# Per-row hessians are floored here before accumulation so that zero-curvature
# objectives (e.g. a linear penalty term) cannot blow up leaf weights.
HESSIAN_FLOOR = 1e-6

FORMAT_HEADER = "cforecast-ensemble v1"

Objective = Callable[[np.ndarray], ObjectiveEval]


@dataclass(frozen=True)
class FeatureMatrix:
    """Dense feature matrix with an explicit per-cell missing mask.

    Missing cells are flagged in ``missing``, never encoded as a sentinel
    magnitude; the stored value under a flagged cell is zero and never read.
    """

    values: np.ndarray
    missing: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        missing = np.asarray(self.missing, dtype=bool)
        if values.ndim != 2 or missing.shape != values.shape:
            raise ShapeError(
                f"values {values.shape} and missing {missing.shape} must be "
                "matching two-dimensional arrays"
            )
        if not np.all(np.isfinite(values[~missing])):
            raise NumericError("feature matrix contains non-finite present values")
        values = np.where(missing, 0.0, values)
        values.setflags(write=False)
        missing = missing.copy()
        missing.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "missing", missing)

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[float | None]]) -> "FeatureMatrix":
        """Build from nested lists where ``None`` marks a missing cell."""
        n = len(rows)
        d = len(rows[0]) if n else 0
        values = np.zeros((n, d))
        missing = np.zeros((n, d), dtype=bool)
        for i, row in enumerate(rows):
            if len(row) != d:
                raise ShapeError(f"row {i} has {len(row)} columns, expected {d}")
            for j, cell in enumerate(row):
                if cell is None:
                    missing[i, j] = True
                else:
                    values[i, j] = float(cell)
        return cls(values=values, missing=missing)

    @property
    def n_rows(self) -> int:
        return int(self.values.shape[0])

    @property
    def n_cols(self) -> int:
        return int(self.values.shape[1])


@dataclass(frozen=True)
class TrainConfig:
    """Boosting hyperparameters.

    ``base_score=None`` means "mean of the training labels" when labels are
    supplied to :func:`fit`, else 0.  ``seed`` is recorded for manifests; the
    engine itself is deterministic.
    """

    n_rounds: int = 100
    learning_rate: float = 0.1
    max_depth: int = 4
    reg_lambda: float = 1.0
    gamma: float = 0.0
    min_child_weight: float = 0.0
    min_samples_leaf: int = 1
    base_score: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_rounds < 1:
            raise ShapeError("n_rounds must be >= 1")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ShapeError("learning_rate must be in (0, 1]")
        if self.max_depth < 1:
            raise ShapeError("max_depth must be >= 1")
        if self.reg_lambda < 0 or self.gamma < 0 or self.min_child_weight < 0:
            raise ShapeError("reg_lambda, gamma, min_child_weight must be >= 0")
        if self.min_samples_leaf < 1:
            raise ShapeError("min_samples_leaf must be >= 1")
        if self.seed < 0:
            raise ShapeError("seed must be non-negative")


@dataclass
class TreeNode:
    """Internal node (feature/threshold/children) or leaf (weight).

    Rows with the split feature missing follow the recorded default branch.
    Present values go left iff ``value < threshold``.
    """

    feature: int | None = None
    threshold: float = 0.0
    default_left: bool = True
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    weight: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.feature is None


@dataclass(frozen=True)
class Split:
    feature: int
    threshold: float
    gain: float
    default_left: bool


def leaf_weight(grad_sum: float, hess_sum: float, reg_lambda: float) -> float:
    """Optimal leaf weight ``-G / (H + lambda)`` of the second-order objective."""
    denom = hess_sum + reg_lambda
    if denom <= 0.0:
        raise DegenerateLeafError(f"hessian sum + lambda = {denom} is not positive")
    return -grad_sum / denom


def _gain_term(g: np.ndarray | float, h: np.ndarray | float, reg_lambda: float):
    return (g * g) / (h + reg_lambda)


def best_split(
    features: FeatureMatrix,
    rows: np.ndarray,
    grads: np.ndarray,
    hess: np.ndarray,
    config: TrainConfig,
) -> Split | None:
    """Exact greedy split over all features and candidate midpoints.

    Gain is ``0.5*(G_L^2/(H_L+l) + G_R^2/(H_R+l) - G^2/(H+l)) - gamma``; a
    split is returned only when its gain is strictly positive and both
    children satisfy ``min_child_weight`` and ``min_samples_leaf``.  Rows with
    the feature missing are sent wholesale to whichever side yields the higher
    gain, and that side is recorded as the node's default branch.
    """
    if rows.size == 0:
        return None
    g_all = grads[rows]
    h_all = hess[rows]
    g_total = float(g_all.sum())
    h_total = float(h_all.sum())
    parent_term = _gain_term(g_total, h_total, config.reg_lambda)

    best: Split | None = None
    for f in range(features.n_cols):
        col = features.values[rows, f]
        miss = features.missing[rows, f]
        present = ~miss
        n_present = int(present.sum())
        if n_present < 2:
            continue
        vals = col[present]
        g_p = g_all[present]
        h_p = h_all[present]
        order = np.argsort(vals, kind="stable")
        sv = vals[order]
        boundaries = np.flatnonzero(sv[:-1] < sv[1:])
        if boundaries.size == 0:
            continue
        cg = np.cumsum(g_p[order])
        ch = np.cumsum(h_p[order])
        thresholds = 0.5 * (sv[boundaries] + sv[boundaries + 1])
        gl = cg[boundaries]
        hl = ch[boundaries]
        nl = boundaries + 1
        g_miss = g_total - cg[-1]
        h_miss = h_total - ch[-1]
        n_miss = rows.size - n_present

        cand = None
        for default_left in (True, False):
            if default_left:
                gl_d, hl_d, nl_d = gl + g_miss, hl + h_miss, nl + n_miss
            else:
                gl_d, hl_d, nl_d = gl, hl, nl
            gr_d = g_total - gl_d
            hr_d = h_total - hl_d
            nr_d = rows.size - nl_d
            gains = (
                0.5
                * (
                    _gain_term(gl_d, hl_d, config.reg_lambda)
                    + _gain_term(gr_d, hr_d, config.reg_lambda)
                    - parent_term
                )
                - config.gamma
            )
            ok = (
                (hl_d >= config.min_child_weight)
                & (hr_d >= config.min_child_weight)
                & (nl_d >= config.min_samples_leaf)
                & (nr_d >= config.min_samples_leaf)
            )
            gains = np.where(ok, gains, -np.inf)
            j = int(np.argmax(gains))
            if gains[j] == -np.inf:
                continue
            # Ties between directions prefer default-left; between thresholds,
            # argmax already picks the lowest (ascending order).
            if cand is None or gains[j] > cand.gain:
                cand = Split(
                    feature=f,
                    threshold=float(thresholds[j]),
                    gain=float(gains[j]),
                    default_left=default_left,
                )
            elif gains[j] == cand.gain and thresholds[j] < cand.threshold:
                cand = Split(
                    feature=f,
                    threshold=float(thresholds[j]),
                    gain=float(gains[j]),
                    default_left=default_left,
                )
        if cand is not None and cand.gain > 0.0:
            if best is None or cand.gain > best.gain:
                best = cand
    return best


def _partition(
    features: FeatureMatrix, rows: np.ndarray, split: Split
) -> tuple[np.ndarray, np.ndarray]:
    col = features.values[rows, split.feature]
    miss = features.missing[rows, split.feature]
    go_left = np.where(miss, split.default_left, col < split.threshold)
    return rows[go_left], rows[~go_left]


def _build_tree(
    features: FeatureMatrix,
    rows: np.ndarray,
    grads: np.ndarray,
    hess: np.ndarray,
    config: TrainConfig,
    depth: int = 0,
) -> TreeNode:
    split = None
    if depth < config.max_depth:
        split = best_split(features, rows, grads, hess, config)
    if split is None:
        g = float(grads[rows].sum())
        h = float(hess[rows].sum())
        return TreeNode(weight=leaf_weight(g, h, config.reg_lambda))
    left_rows, right_rows = _partition(features, rows, split)
    return TreeNode(
        feature=split.feature,
        threshold=split.threshold,
        default_left=split.default_left,
        left=_build_tree(features, left_rows, grads, hess, config, depth + 1),
        right=_build_tree(features, right_rows, grads, hess, config, depth + 1),
    )


def _tree_predict(node: TreeNode, features: FeatureMatrix) -> np.ndarray:
    out = np.empty(features.n_rows)
    stack = [(node, np.arange(features.n_rows))]
    while stack:
        cur, rows = stack.pop()
        if rows.size == 0:
            continue
        if cur.is_leaf:
            out[rows] = cur.weight
            continue
        col = features.values[rows, cur.feature]
        miss = features.missing[rows, cur.feature]
        go_left = np.where(miss, cur.default_left, col < cur.threshold)
        stack.append((cur.left, rows[go_left]))
        stack.append((cur.right, rows[~go_left]))
    return out


@dataclass
class BoostedEnsemble:
    """Additive model: ``base_score + learning_rate * sum(tree outputs)``."""

    trees: list[TreeNode]
    learning_rate: float
    base_score: float
    n_features: int
    loss_history: list[float] = field(default_factory=list, compare=False, repr=False)

    def predict(self, features: FeatureMatrix) -> np.ndarray:
        if features.n_cols != self.n_features:
            raise ShapeError(
                f"ensemble expects {self.n_features} features, got {features.n_cols}"
            )
        preds = np.full(features.n_rows, self.base_score)
        for tree in self.trees:
            preds += self.learning_rate * _tree_predict(tree, features)
        return preds

    def to_text(self) -> str:
        """Serialize to the versioned text format (lossless round trip)."""
        lines = [
            FORMAT_HEADER,
            f"learning_rate {self.learning_rate!r}",
            f"base_score {self.base_score!r}",
            f"n_features {self.n_features}",
            f"n_trees {len(self.trees)}",
        ]
        for t, root in enumerate(self.trees):
            lines.append(f"tree {t}")
            order: list[TreeNode] = []
            ids: dict[int, int] = {}
            stack = [root]
            while stack:
                node = stack.pop()
                ids[id(node)] = len(order)
                order.append(node)
                if not node.is_leaf:
                    stack.append(node.right)
                    stack.append(node.left)
            for nid, node in enumerate(order):
                if node.is_leaf:
                    lines.append(f"node {nid} leaf {node.weight!r}")
                else:
                    default = "L" if node.default_left else "R"
                    lines.append(
                        f"node {nid} split {node.feature} {node.threshold!r} "
                        f"{ids[id(node.left)]} {ids[id(node.right)]} {default}"
                    )
            lines.append(f"end tree {t}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "BoostedEnsemble":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0] != FORMAT_HEADER:
            raise ShapeError(f"not a {FORMAT_HEADER!r} file")
        header: dict[str, str] = {}
        i = 1
        while i < len(lines) and not lines[i].startswith("tree "):
            key, _, val = lines[i].partition(" ")
            header[key] = val
            i += 1
        try:
            learning_rate = float(header["learning_rate"])
            base_score = float(header["base_score"])
            n_features = int(header["n_features"])
            n_trees = int(header["n_trees"])
        except (KeyError, ValueError) as exc:
            raise ShapeError(f"malformed ensemble header: {exc}") from exc
        trees = []
        while i < len(lines):
            if not lines[i].startswith("tree "):
                raise ShapeError(f"expected 'tree', got {lines[i]!r}")
            i += 1
            raw: dict[int, tuple] = {}
            while i < len(lines) and not lines[i].startswith("end tree"):
                parts = lines[i].split()
                if parts[0] != "node":
                    raise ShapeError(f"expected 'node', got {lines[i]!r}")
                nid = int(parts[1])
                if parts[2] == "leaf":
                    raw[nid] = ("leaf", float(parts[3]))
                elif parts[2] == "split":
                    raw[nid] = (
                        "split",
                        int(parts[3]),
                        float(parts[4]),
                        int(parts[5]),
                        int(parts[6]),
                        parts[7] == "L",
                    )
                else:
                    raise ShapeError(f"unknown node kind in {lines[i]!r}")
                i += 1
            if i == len(lines):
                raise ShapeError("unterminated tree block")
            i += 1

            def link(nid: int) -> TreeNode:
                entry = raw[nid]
                if entry[0] == "leaf":
                    return TreeNode(weight=entry[1])
                _, feature, threshold, left_id, right_id, default_left = entry
                return TreeNode(
                    feature=feature,
                    threshold=threshold,
                    default_left=default_left,
                    left=link(left_id),
                    right=link(right_id),
                )

            trees.append(link(0))
        if len(trees) != n_trees:
            raise ShapeError(f"header says {n_trees} trees, found {len(trees)}")
        return cls(
            trees=trees,
            learning_rate=learning_rate,
            base_score=base_score,
            n_features=n_features,
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path) -> "BoostedEnsemble":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())


def fit(
    features: FeatureMatrix,
    objective: Objective,
    config: TrainConfig,
    labels: np.ndarray | None = None,
) -> BoostedEnsemble:
    """Train ``config.n_rounds`` trees against a full-vector objective.

    Each round evaluates the objective at the current prediction vector, fits
    one tree to the second-order approximation, and applies shrinkage.
    ``labels``, when given, only seed the default base score (their mean).
    """
    n = features.n_rows
    if n == 0:
        raise EmptyInputError("cannot fit on zero rows")
    if config.base_score is not None:
        base = float(config.base_score)
    elif labels is not None:
        base = float(np.mean(np.asarray(labels, dtype=float)))
    else:
        base = 0.0
    preds = np.full(n, base)
    all_rows = np.arange(n)
    trees: list[TreeNode] = []
    history: list[float] = []
    for rnd in range(config.n_rounds):
        ev = objective(preds)
        grad = np.asarray(ev.grad, dtype=float)
        hess = np.asarray(ev.hess, dtype=float)
        if grad.shape != (n,) or hess.shape != (n,):
            raise ContractViolationError(
                f"objective returned vectors of shape {grad.shape}/{hess.shape}, "
                f"expected ({n},)"
            )
        if not (np.all(np.isfinite(grad)) and np.all(np.isfinite(hess))):
            raise NumericError(f"non-finite gradient or hessian in round {rnd}")
        hess = np.maximum(hess, HESSIAN_FLOOR)
        tree = _build_tree(features, all_rows, grad, hess, config)
        preds = preds + config.learning_rate * _tree_predict(tree, features)
        trees.append(tree)
        history.append(ev.loss_value)
    return BoostedEnsemble(
        trees=trees,
        learning_rate=config.learning_rate,
        base_score=base,
        n_features=features.n_cols,
        loss_history=history,
    )
