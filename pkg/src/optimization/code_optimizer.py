"""Discrete cyclic coordinate descent over the binary code matrix.

With the SVM weights fixed, each code column is the exact minimizer of

    gamma * |sum_i b_ij| + sum_i L(b_ij, i, j)

over {-1, +1}^n. Points are sorted by how much they prefer -1 and the column
is cut into a -1 prefix and a +1 suffix; the cut position is found with prefix
sums.

The multi-class terms are tracked through a class-score cache
``S[i, k] = sum_u b~_iu (Wb[u, k] - Wb[u, y_i])`` over the code with its bias
entry appended, updated in O(nK) whenever a column changes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from src.common.exceptions import ValidationError
from src.common.logging import get_logger

logger = get_logger(__name__)

_IMPROVEMENT_TOL = 1e-12


class CodeMatrix:
    """An n x m matrix over {-1, +1} with one revision counter per column."""

    def __init__(self, bits: np.ndarray, revisions: np.ndarray | None = None) -> None:
        values = np.asarray(bits)
        if values.ndim != 2 or values.shape[1] < 1:
            raise ValidationError(f"code matrix must be n x m with m >= 1, got {values.shape}")
        if not np.all(np.abs(values) == 1):
            raise ValidationError("code entries must be -1 or +1")
        self._bits = values.astype(np.int8)
        if revisions is None:
            self._revisions = np.zeros(values.shape[1], dtype=np.int64)
        else:
            revisions = np.asarray(revisions, dtype=np.int64).reshape(-1)
            if revisions.shape[0] != values.shape[1]:
                raise ValidationError("one revision counter is required per column")
            self._revisions = revisions.copy()

    @property
    def n(self) -> int:
        return int(self._bits.shape[0])

    @property
    def m(self) -> int:
        return int(self._bits.shape[1])

    @property
    def values(self) -> np.ndarray:
        view = self._bits.view()
        view.setflags(write=False)
        return view

    @property
    def revisions(self) -> np.ndarray:
        return self._revisions.copy()

    def as_float(self) -> np.ndarray:
        return self._bits.astype(np.float64)

    def with_bias(self) -> np.ndarray:
        return np.hstack([self.as_float(), np.ones((self.n, 1))])

    def column(self, j: int) -> np.ndarray:
        return self._bits[:, j].copy()

    def set_column(self, j: int, column: np.ndarray) -> bool:
        """Overwrite column ``j``; returns whether any entry changed."""
        column = np.asarray(column).astype(np.int8).reshape(-1)
        if column.shape[0] != self.n or not np.all(np.abs(column) == 1):
            raise ValidationError(f"column must hold {self.n} entries of -1 or +1")
        if np.array_equal(column, self._bits[:, j]):
            return False
        self._bits[:, j] = column
        self._revisions[j] += 1
        return True

    def copy(self) -> CodeMatrix:
        return CodeMatrix(self._bits.copy(), self._revisions)

    def rows(self, mask: np.ndarray) -> CodeMatrix:
        return CodeMatrix(self._bits[np.asarray(mask)], self._revisions)

    def append_rows(self, rows: np.ndarray) -> CodeMatrix:
        rows = np.atleast_2d(np.asarray(rows))
        if rows.shape[0] == 0:
            return self.copy()
        if rows.shape[1] != self.m:
            raise ValidationError(f"rows have {rows.shape[1]} bits, expected {self.m}")
        return CodeMatrix(np.vstack([self._bits, rows.astype(np.int8)]), self._revisions)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CodeMatrix):
            return NotImplemented
        return np.array_equal(self._bits, other._bits)

    def __repr__(self) -> str:
        return f"CodeMatrix(n={self.n}, m={self.m})"


@dataclass(frozen=True)
class BitLossInputs:
    """Everything a column update needs besides the codes themselves.

    ``scores[i, j]`` is the bit-j SVM score of point i and ``wb`` is the
    (m + 1) x K multi-class weight matrix whose last row multiplies the bias
    entry. ``codes`` is only needed by the single-column helpers;
    :func:`dcc_optimize` takes the codes from its ``CodeMatrix``.
    """

    scores: np.ndarray = field(repr=False)
    wb: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)
    lam: float
    cx: float
    cb: float
    gamma: float
    codes: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        scores = np.asarray(self.scores, dtype=np.float64)
        wb = np.asarray(self.wb, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if scores.ndim != 2:
            raise ValidationError(f"scores must be n x m, got {scores.shape}")
        n, m = scores.shape
        if wb.ndim != 2 or wb.shape[0] != m + 1:
            raise ValidationError(f"multi-class weights must be {m + 1} x K, got {wb.shape}")
        if labels.shape[0] != n:
            raise ValidationError(f"{labels.shape[0]} labels for {n} points")
        if labels.size and (labels.min() < 0 or labels.max() >= wb.shape[1]):
            raise ValidationError(f"labels must lie in 0..{wb.shape[1] - 1}")
        if self.gamma < 0 or self.lam < 0:
            raise ValidationError("gamma and lambda must be non-negative")
        if not (self.cx > 0 and self.cb > 0):
            raise ValidationError("Cx and Cb must be positive")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "wb", wb)
        object.__setattr__(self, "labels", labels)
        if self.codes is not None:
            codes = np.asarray(self.codes, dtype=np.float64)
            if codes.shape != (n, m) or not np.all(np.abs(codes) == 1.0):
                raise ValidationError(f"codes must be a {n} x {m} matrix of -1/+1")
            object.__setattr__(self, "codes", codes)

    @property
    def n(self) -> int:
        return int(self.scores.shape[0])

    @property
    def m(self) -> int:
        return int(self.scores.shape[1])

    @property
    def num_classes(self) -> int:
        return int(self.wb.shape[1])

    def _require_codes(self) -> np.ndarray:
        if self.codes is None:
            raise ValidationError("these inputs carry no code matrix")
        return self.codes


def _with_bias(codes: np.ndarray) -> np.ndarray:
    return np.hstack([codes, np.ones((codes.shape[0], 1))])


def _indicator(labels: np.ndarray, num_classes: int) -> np.ndarray:
    ind = np.ones((labels.shape[0], num_classes))
    ind[np.arange(labels.shape[0]), labels] = 0.0
    return ind


def _class_offsets(wb_row: np.ndarray, labels: np.ndarray) -> np.ndarray:
    # D[i, k] = wb_row[k] - wb_row[y_i]
    return wb_row[None, :] - wb_row[labels][:, None]


def class_scores(codes: np.ndarray, inputs: BitLossInputs) -> np.ndarray:
    btilde = _with_bias(np.asarray(codes, dtype=np.float64))
    return btilde @ inputs.wb - (btilde * inputs.wb[:, inputs.labels].T).sum(axis=1)[:, None]


def bit_flip_loss(z: int, i: int, j: int, inputs: BitLossInputs) -> float:
    """L(z, i, j): the hinge losses of point i that depend on its bit j."""
    if z not in (-1, 1):
        raise ValidationError(f"bit value must be -1 or +1, got {z}")
    codes = inputs._require_codes()
    y = int(inputs.labels[i])
    btilde = np.append(codes[i], 1.0)
    diff = inputs.wb - inputs.wb[:, [y]]
    theta = btilde @ diff - btilde[j] * diff[j]
    indicator = np.ones(inputs.num_classes)
    indicator[y] = 0.0
    multiclass = float(np.max(indicator + z * diff[j] + theta))
    binary = max(0.0, 1.0 - z * float(inputs.scores[i, j]))
    return inputs.lam * inputs.cb * multiclass + inputs.cx * binary


def column_losses(
    j: int, codes: np.ndarray, scores_cache: np.ndarray, inputs: BitLossInputs
) -> tuple[np.ndarray, np.ndarray]:
    """Vectors L(-1, i, j) and L(+1, i, j) over all points."""
    offsets = _class_offsets(inputs.wb[j], inputs.labels)
    theta = scores_cache - codes[:, j][:, None] * offsets
    indicator = _indicator(inputs.labels, inputs.num_classes)
    weight = inputs.lam * inputs.cb
    column_scores = inputs.scores[:, j]
    loss_minus = weight * np.max(indicator - offsets + theta, axis=1) + inputs.cx * np.maximum(
        0.0, 1.0 + column_scores
    )
    loss_plus = weight * np.max(indicator + offsets + theta, axis=1) + inputs.cx * np.maximum(
        0.0, 1.0 - column_scores
    )
    return loss_minus, loss_plus


def column_deltas(j: int, inputs: BitLossInputs) -> tuple[np.ndarray, np.ndarray]:
    """delta_i = L(-1, i, j) - L(+1, i, j) and its stable ascending order."""
    codes = inputs._require_codes()
    loss_minus, loss_plus = column_losses(j, codes, class_scores(codes, inputs), inputs)
    delta = loss_minus - loss_plus
    return delta, np.argsort(delta, kind="stable")


def cut_objectives(
    sorted_minus: np.ndarray, sorted_plus: np.ndarray, gamma: float
) -> np.ndarray:
    """Objective of every cut l = 0..n: the first l sorted points take -1."""
    n = sorted_minus.shape[0]
    prefix_minus = np.concatenate([[0.0], np.cumsum(sorted_minus)])
    prefix_plus = np.concatenate([[0.0], np.cumsum(sorted_plus)])
    suffix_plus = prefix_plus[-1] - prefix_plus
    cuts = np.arange(n + 1)
    return gamma * np.abs(2 * cuts - n) + prefix_minus + suffix_plus


def optimal_cut(sorted_minus: np.ndarray, sorted_plus: np.ndarray, gamma: float) -> int:
    """Best cut; ties prefer the cut nearest n/2, then the smaller cut."""
    sorted_minus = np.asarray(sorted_minus, dtype=np.float64).reshape(-1)
    sorted_plus = np.asarray(sorted_plus, dtype=np.float64).reshape(-1)
    if sorted_minus.shape != sorted_plus.shape:
        raise ValidationError("loss vectors must have equal length")
    if gamma < 0:
        raise ValidationError(f"gamma must be non-negative, got {gamma}")
    n = sorted_minus.shape[0]
    objectives = cut_objectives(sorted_minus, sorted_plus, gamma)
    best = objectives.min()
    candidates = np.flatnonzero(objectives <= best + _IMPROVEMENT_TOL * max(1.0, abs(best)))
    imbalance = np.abs(2 * candidates - n)
    return int(candidates[np.lexsort((candidates, imbalance))[0]])


def column_objective(
    column: np.ndarray, loss_minus: np.ndarray, loss_plus: np.ndarray, gamma: float
) -> float:
    column = np.asarray(column)
    losses = np.where(column < 0, loss_minus, loss_plus)
    return gamma * abs(float(column.sum())) + float(losses.sum())


def fixed_weights_objective(codes: np.ndarray, inputs: BitLossInputs) -> float:
    """Code-dependent part of the joint objective with all weights held fixed."""
    codes = np.asarray(codes, dtype=np.float64)
    scores_cache = class_scores(codes, inputs)
    indicator = _indicator(inputs.labels, inputs.num_classes)
    multiclass = float(np.max(indicator + scores_cache, axis=1).sum())
    binary = float(np.maximum(0.0, 1.0 - codes * inputs.scores).sum())
    imbalance = float(np.abs(codes.sum(axis=0)).sum())
    return inputs.lam * inputs.cb * multiclass + inputs.cx * binary + inputs.gamma * imbalance


class DCCResult(NamedTuple):
    codes: CodeMatrix
    changed: np.ndarray
    sweeps: int


def update_column(
    j: int, codes: np.ndarray, scores_cache: np.ndarray, inputs: BitLossInputs
) -> np.ndarray | None:
    """Optimal column j, or None when it does not strictly beat the current one."""
    loss_minus, loss_plus = column_losses(j, codes, scores_cache, inputs)
    order = np.argsort(loss_minus - loss_plus, kind="stable")
    cut = optimal_cut(loss_minus[order], loss_plus[order], inputs.gamma)
    column = np.ones(codes.shape[0])
    column[order[:cut]] = -1.0

    current = column_objective(codes[:, j], loss_minus, loss_plus, inputs.gamma)
    proposed = column_objective(column, loss_minus, loss_plus, inputs.gamma)
    if proposed < current - _IMPROVEMENT_TOL * max(1.0, abs(current)):
        return column
    return None


def dcc_optimize(B: CodeMatrix, inputs: BitLossInputs, max_sweeps: int = 5) -> DCCResult:
    """Cyclic column updates until a sweep changes nothing or ``max_sweeps`` is hit.

    A column is replaced only when the new column strictly lowers its
    objective, so the fixed-weights objective decreases on every change.
    """
    if max_sweeps < 1:
        raise ValidationError(f"max_sweeps must be positive, got {max_sweeps}")
    if B.n != inputs.n or B.m != inputs.m:
        raise ValidationError(
            f"code matrix {B.n} x {B.m} does not match inputs {inputs.n} x {inputs.m}"
        )

    result = B.copy()
    codes = result.as_float()
    scores_cache = class_scores(codes, inputs)
    changed = np.zeros(B.m, dtype=bool)

    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        sweep_changed = False
        for j in range(B.m):
            column = update_column(j, codes, scores_cache, inputs)
            if column is None:
                continue
            step = column - codes[:, j]
            scores_cache += step[:, None] * _class_offsets(inputs.wb[j], inputs.labels)
            codes[:, j] = column
            result.set_column(j, column)
            changed[j] = True
            sweep_changed = True
        if not sweep_changed:
            break

    logger.debug(
        "Code optimization finished",
        extra={"sweeps": sweeps, "changed_columns": int(changed.sum())},
    )
    return DCCResult(codes=result, changed=changed, sweeps=sweeps)
