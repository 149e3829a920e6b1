"""Loss functions for the three-stage framework.

Three losses, each evaluated over the full prediction vector so that rows
belonging to the same (category, week) group can be coupled:

* squared error: ``mean((p_i - y_i)^2)``
* sum-constrained: squared error plus a per-week penalty on the gap between
  the predicted category sum and the known category total S
* fine-tune: the per-week sum penalty plus an anchor pulling each row toward
  its share ``r_i * S_w`` of the known total

Reported loss values keep the full ``1/n`` (and per-week ``1/count``)
normalization for auditability.  Gradients drop the global ``1/n`` factor,
which leaf weights ``-G/(H+lambda)`` are insensitive to, but preserve the
relative weighting between terms.  Hessians are the diagonal of the true
second derivative; cross-row curvature inside a week is discarded because
tree boosting consumes per-row curvature only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Mapping, Sequence

import numpy as np

from .errors import ConstraintDataError, ContractViolationError, ShapeError

# Group prediction sums with magnitude at or below this fall back to uniform shares.
RATIO_DENOM_EPS = 1e-12

FINETUNE_MODES = ("squared", "literal")


@dataclass(frozen=True)
class ObjectiveEval:
    """Per-row gradient/hessian vectors plus the reported loss value."""

    grad: np.ndarray
    hess: np.ndarray
    loss_value: float


@dataclass(frozen=True)
class GroupIndex:
    """Row-to-group mapping with per-group counts and known totals.

    ``totals`` holds NaN for groups whose category total was not supplied;
    the constrained losses refuse to run on such groups.
    """

    row_group: np.ndarray
    keys: tuple
    counts: np.ndarray
    totals: np.ndarray

    @classmethod
    def build(
        cls,
        keys_per_row: Sequence[Hashable],
        totals: Mapping[Hashable, float] | None = None,
    ) -> "GroupIndex":
        """Index rows by group key, in first-seen order."""
        ordinal: dict[Hashable, int] = {}
        row_group = np.empty(len(keys_per_row), dtype=np.intp)
        for i, key in enumerate(keys_per_row):
            if key not in ordinal:
                ordinal[key] = len(ordinal)
            row_group[i] = ordinal[key]
        keys = tuple(ordinal)
        counts = np.bincount(row_group, minlength=len(keys)).astype(np.intp)
        total_arr = np.full(len(keys), np.nan)
        if totals is not None:
            for g, key in enumerate(keys):
                if key in totals:
                    total_arr[g] = float(totals[key])
        row_group.setflags(write=False)
        counts.setflags(write=False)
        total_arr.setflags(write=False)
        return cls(row_group=row_group, keys=keys, counts=counts, totals=total_arr)

    @property
    def n_rows(self) -> int:
        return int(self.row_group.shape[0])

    @property
    def n_groups(self) -> int:
        return len(self.keys)

    def group_sums(self, values: np.ndarray) -> np.ndarray:
        """Sum ``values`` within each group."""
        return np.bincount(self.row_group, weights=values, minlength=self.n_groups)

    def per_row(self, group_values: np.ndarray) -> np.ndarray:
        """Broadcast a per-group vector back to rows."""
        return np.asarray(group_values)[self.row_group]

    def require_totals(self) -> None:
        missing = np.flatnonzero(~np.isfinite(self.totals))
        if missing.size:
            raise ConstraintDataError(
                f"no category total for group {self.keys[missing[0]]!r}"
            )


def _as_vector(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be one-dimensional, got shape {arr.shape}")
    return arr


def _check_same_length(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"{what}: {a.shape[0]} vs {b.shape[0]}")


def se_eval(preds, labels) -> ObjectiveEval:
    """Squared-error loss: value ``mean((p - y)^2)``, grad ``2(p - y)``, hess 2."""
    p = _as_vector(preds, "preds")
    y = _as_vector(labels, "labels")
    _check_same_length(p, y, "preds/labels length mismatch")
    resid = p - y
    grad = 2.0 * resid
    hess = np.full_like(p, 2.0)
    loss = float(np.mean(resid * resid)) if p.size else 0.0
    return ObjectiveEval(grad=grad, hess=hess, loss_value=loss)


def sum_constraint_eval(preds, labels, groups: GroupIndex) -> ObjectiveEval:
    """Squared error plus the per-week category-sum penalty.

    With ``D_w = sum_{i in w} p_i - S_w``:

    * grad_i = ``2(p_i - y_i) + 2 D_w``
    * hess_i = 4
    * value  = ``(1/n) sum_i (y_i - p_i)^2 + (1/n) sum_i D_w(i)^2 / count_w(i)``
    """
    p = _as_vector(preds, "preds")
    y = _as_vector(labels, "labels")
    _check_same_length(p, y, "preds/labels length mismatch")
    _check_same_length(p, groups.row_group, "preds/groups length mismatch")
    groups.require_totals()
    n = p.shape[0]
    resid = p - y
    dev = groups.group_sums(p) - groups.totals
    grad = 2.0 * resid + 2.0 * groups.per_row(dev)
    hess = np.full_like(p, 4.0)
    loss = float((np.sum(resid * resid) + np.sum(dev * dev)) / n)
    return ObjectiveEval(grad=grad, hess=hess, loss_value=loss)


def finetune_eval(
    preds, ratios, groups: GroupIndex, mode: str = "squared"
) -> ObjectiveEval:
    """Category-sum penalty plus the stage-1 share anchor ``r_i * S_w``.

    The anchor term is squared by default; ``mode="literal"`` keeps it linear
    (gradient 1, zero curvature) for fidelity experiments.
    """
    if mode not in FINETUNE_MODES:
        raise ContractViolationError(f"unknown fine-tune mode {mode!r}")
    p = _as_vector(preds, "preds")
    r = _as_vector(ratios, "ratios")
    _check_same_length(p, r, "preds/ratios length mismatch")
    _check_same_length(p, groups.row_group, "preds/groups length mismatch")
    if not np.all(np.isfinite(r)):
        bad = int(np.flatnonzero(~np.isfinite(r))[0])
        raise ContractViolationError(f"missing prediction ratio for row {bad}")
    groups.require_totals()
    n = p.shape[0]
    dev = groups.group_sums(p) - groups.totals
    grad = 2.0 * groups.per_row(dev)
    anchor_resid = p - r * groups.per_row(groups.totals)
    group_part = float(np.sum(dev * dev) / n)
    if mode == "squared":
        grad = grad + 2.0 * anchor_resid
        hess = np.full_like(p, 4.0)
        loss = group_part + float(np.sum(anchor_resid * anchor_resid) / n)
    else:
        grad = grad + 1.0
        hess = np.full_like(p, 2.0)
        loss = group_part + float(np.sum(anchor_resid) / n)
    return ObjectiveEval(grad=grad, hess=hess, loss_value=loss)


def prediction_ratios(preds, groups: GroupIndex) -> np.ndarray:
    """Per-row share of the group's predicted sum.

    ``r_i = p_i / sum_{j in group(i)} p_j``; groups whose predicted sum has
    magnitude <= 1e-12 fall back to the uniform share ``1/count``.
    """
    p = _as_vector(preds, "preds")
    _check_same_length(p, groups.row_group, "preds/groups length mismatch")
    sums = groups.group_sums(p)
    degenerate = np.abs(sums) <= RATIO_DENOM_EPS
    safe_sums = np.where(degenerate, 1.0, sums)
    shares = p / groups.per_row(safe_sums)
    uniform = 1.0 / groups.per_row(groups.counts.astype(float))
    return np.where(groups.per_row(degenerate), uniform, shares)
