"""Cutting-plane solver for regularized risk minimization.

Minimizes F(w) = 0.5 * ||w||^2 + C * R(w) for a convex, non-negative risk R
given by a :class:`RiskOracle`. Two risks are provided: the binary hinge loss
used for the per-bit hash SVMs and the Crammer-Singer multi-class loss used
for the code-to-class SVM.

Each iteration adds a cutting plane of R, minimizes the piecewise-linear model
in its dual, then moves the best-so-far point by an exact line search toward
the model minimizer. The next plane is cut at a point mixed between the two,
which keeps the iteration count low. Warm starts seed the best-so-far point.
"""

from __future__ import annotations

import csv
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize

from src.common.exceptions import SolverError, ValidationError
from src.common.logging import get_logger
from src.common.utils import ensure_directory

logger = get_logger(__name__)

_LINE_SEARCH_TOL = 1e-6
_BRACKET_LIMIT = 2.0**40
_REDUCED_REL_GAP = 1e-9
_REDUCED_MAX_STEPS = 10000


@dataclass(frozen=True)
class SolverConfig:
    C: float
    epsilon: float | None = None
    max_planes: int = 500
    max_iterations: int = 1000
    cut_mix: float = 0.1

    def __post_init__(self) -> None:
        if not self.C > 0:
            raise SolverError(f"C must be positive, got {self.C}")
        if self.epsilon is not None and not self.epsilon > 0:
            raise SolverError(f"epsilon must be positive, got {self.epsilon}")
        if self.max_planes < 2:
            raise SolverError(f"max_planes must be at least 2, got {self.max_planes}")
        if self.max_iterations < 1:
            raise SolverError(f"max_iterations must be positive, got {self.max_iterations}")
        if not 0.0 <= self.cut_mix <= 1.0:
            raise SolverError(f"cut_mix must lie in [0, 1], got {self.cut_mix}")


@dataclass(frozen=True)
class TracePoint:
    iteration: int
    f_best: float
    lower_bound: float
    gap: float


@dataclass
class SolverState:
    w_best: np.ndarray
    w_current: np.ndarray
    f_best: float
    f_initial: float
    lower_bound: float
    gap: float
    epsilon: float
    iterations: int = 0
    converged: bool = False
    num_planes: int = 0
    trace: list[TracePoint] = field(default_factory=list)
    planes: CuttingPlaneSet | None = None


def write_trace_csv(state: SolverState, path: str | Path) -> None:
    path = Path(path)
    ensure_directory(path.parent)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["iteration", "f_best", "gap"])
        for point in state.trace:
            writer.writerow([point.iteration, repr(point.f_best), repr(point.gap)])


# --------------------------------------------------------------------------
# Risks
# --------------------------------------------------------------------------


def binary_risk(
    w: np.ndarray, phi: np.ndarray, targets: np.ndarray
) -> tuple[float, np.ndarray]:
    """Hinge risk sum_i max(0, 1 - y_i w.phi_i) and a subgradient.

    Points exactly on the margin are left out of the active set.
    """
    margins = targets * (phi @ w)
    active = margins < 1.0
    risk = float(np.sum(1.0 - margins[active]))
    subgradient = -(targets[active] @ phi[active])
    return risk, np.asarray(subgradient, dtype=np.float64).reshape(-1)


def _crammer_singer_terms(
    scores: np.ndarray, labels: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    rows = np.arange(scores.shape[0])
    true = scores[rows, labels]
    margins = 1.0 + scores - true[:, None]
    margins[rows, labels] = 0.0
    kstar = np.argmax(margins, axis=1)
    best = margins[rows, kstar]
    # ties with the true class resolve to it (zero subgradient)
    kstar = np.where(best > 0.0, kstar, labels)
    return np.maximum(best, 0.0), kstar


def multiclass_risk(
    W: np.ndarray, codes: np.ndarray, labels: np.ndarray
) -> tuple[float, np.ndarray]:
    """Crammer-Singer risk sum_i max_k(1[y_i != k] + (w_k - w_{y_i}).b_i).

    ``W`` is (p, K) with one column per class; ``codes`` is (n, p) and already
    carries the bias column.
    """
    labels = np.asarray(labels, dtype=np.int64)
    losses, kstar = _crammer_singer_terms(codes @ W, labels)
    violated = kstar != labels
    indicator = np.zeros((codes.shape[0], W.shape[1]))
    rows = np.flatnonzero(violated)
    indicator[rows, kstar[violated]] += 1.0
    indicator[rows, labels[violated]] -= 1.0
    return float(losses.sum()), codes.T @ indicator


class RiskOracle(ABC):
    """Convex non-negative risk R with subgradients bounded by ``subgradient_bound``."""

    dim: int
    subgradient_bound: float

    @abstractmethod
    def evaluate(self, w: np.ndarray) -> tuple[float, np.ndarray]:
        ...  # pragma: no cover

    @abstractmethod
    def line_search(
        self, w_from: np.ndarray, w_to: np.ndarray, C: float
    ) -> tuple[float, np.ndarray]:
        ...  # pragma: no cover

    def objective(self, w: np.ndarray, C: float) -> float:
        risk, _ = self.evaluate(w)
        return 0.5 * float(w @ w) + C * risk


class BinaryHingeRisk(RiskOracle):
    def __init__(self, phi: np.ndarray, targets: np.ndarray) -> None:
        phi = np.asarray(phi, dtype=np.float64)
        targets = np.asarray(targets, dtype=np.float64).reshape(-1)
        if phi.ndim != 2 or phi.shape[0] != targets.shape[0]:
            raise ValidationError(
                f"embedded matrix {phi.shape} does not match {targets.shape[0]} targets"
            )
        if not np.all(np.abs(targets) == 1.0):
            raise ValidationError("binary targets must be -1 or +1")
        self.phi = phi
        self.targets = targets
        self.dim = int(phi.shape[1])
        self.subgradient_bound = float(np.linalg.norm(phi, axis=1).sum())

    def evaluate(self, w: np.ndarray) -> tuple[float, np.ndarray]:
        return binary_risk(w, self.phi, self.targets)

    def line_search(
        self, w_from: np.ndarray, w_to: np.ndarray, C: float
    ) -> tuple[float, np.ndarray]:
        """Exact minimization of the piecewise quadratic along the segment ray.

        g(k) = 0.5||w + k d||^2 + C sum_i max(0, c_i + k s_i), walked through the
        sorted hinge breakpoints.
        """
        direction = w_to - w_from
        dd = float(direction @ direction)
        if dd == 0.0:
            return 0.0, w_from.copy()

        c = 1.0 - self.targets * (self.phi @ w_from)
        s = -self.targets * (self.phi @ direction)

        active = (c > 0.0) | ((c == 0.0) & (s > 0.0))
        slope = float(w_from @ direction) + C * float(s[active].sum())
        if slope >= 0.0:
            return 0.0, w_from.copy()

        moving = s != 0.0
        kinks = -c[moving] / s[moving]
        jumps = C * np.abs(s[moving])
        ahead = kinks > 0.0
        kinks, jumps = kinks[ahead], jumps[ahead]
        order = np.argsort(kinks, kind="stable")
        kinks, jumps = kinks[order], jumps[order]

        k_star = -slope / dd
        i = 0
        while i < kinks.shape[0]:
            kink = kinks[i]
            k_star = -slope / dd
            if k_star <= kink:
                break
            while i < kinks.shape[0] and kinks[i] == kink:
                slope += jumps[i]
                i += 1
            if slope + kink * dd >= 0.0:
                k_star = kink
                break
        else:
            k_star = -slope / dd

        k_star = max(0.0, float(k_star))
        return k_star, w_from + k_star * direction


class MulticlassRisk(RiskOracle):
    """Crammer-Singer risk over a flattened (p, K) weight matrix."""

    def __init__(self, codes: np.ndarray, labels: np.ndarray, num_classes: int) -> None:
        codes = np.asarray(codes, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        if codes.ndim != 2 or codes.shape[0] != labels.shape[0]:
            raise ValidationError(
                f"code matrix {codes.shape} does not match {labels.shape[0]} labels"
            )
        if num_classes < 1 or labels.min() < 0 or labels.max() >= num_classes:
            raise ValidationError(f"labels must lie in 0..{num_classes - 1}")
        self.codes = codes
        self.labels = labels
        self.num_classes = int(num_classes)
        self.shape = (int(codes.shape[1]), self.num_classes)
        self.dim = self.shape[0] * self.shape[1]
        self.subgradient_bound = float(2.0 * np.linalg.norm(codes, axis=1).sum())

    def evaluate(self, w: np.ndarray) -> tuple[float, np.ndarray]:
        risk, grad = multiclass_risk(w.reshape(self.shape), self.codes, self.labels)
        return risk, grad.reshape(-1)

    def line_search(
        self, w_from: np.ndarray, w_to: np.ndarray, C: float
    ) -> tuple[float, np.ndarray]:
        """Bounded scalar minimization of the convex restriction g(k), k >= 0."""
        direction = w_to - w_from
        dd = float(direction @ direction)
        if dd == 0.0:
            return 0.0, w_from.copy()

        base_scores = self.codes @ w_from.reshape(self.shape)
        step_scores = self.codes @ direction.reshape(self.shape)
        ww = float(w_from @ w_from)
        wd = float(w_from @ direction)

        def g(k: float) -> float:
            losses, _ = _crammer_singer_terms(base_scores + k * step_scores, self.labels)
            return 0.5 * (ww + 2.0 * k * wd + k * k * dd) + C * float(losses.sum())

        g0 = g(0.0)
        hi, g_hi = 1.0, g(1.0)
        while hi < _BRACKET_LIMIT:
            g_next = g(2.0 * hi)
            if g_next >= g_hi:
                break
            hi, g_hi = 2.0 * hi, g_next
        res = optimize.minimize_scalar(
            g, method="bounded", bounds=(0.0, 2.0 * hi), options={"xatol": _LINE_SEARCH_TOL}
        )
        k_star, g_star = float(res.x), float(res.fun)
        if g_hi < g_star:
            k_star, g_star = hi, g_hi
        if g_star >= g0:
            return 0.0, w_from.copy()
        return float(k_star), w_from + k_star * direction


def exact_line_search(
    w_from: np.ndarray, w_to: np.ndarray, oracle: RiskOracle, C: float
) -> tuple[float, np.ndarray]:
    return oracle.line_search(
        np.asarray(w_from, dtype=np.float64), np.asarray(w_to, dtype=np.float64), C
    )


# --------------------------------------------------------------------------
# Piecewise-linear model
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ReducedSolution:
    w: np.ndarray
    value: float
    dual: float
    alpha: np.ndarray
    steps: int


class CuttingPlaneSet:
    """Planes a.w + b <= R(w) with their Gram matrix and warm dual weights.

    When full, the plane that has gone longest without a positive dual weight
    is evicted; the most recently added plane is never evicted.
    """

    def __init__(self, dim: int, capacity: int = 500) -> None:
        if capacity < 2:
            raise SolverError(f"plane capacity must be at least 2, got {capacity}")
        self.dim = int(dim)
        self.capacity = int(capacity)
        self._a = np.empty((0, self.dim))
        self._b = np.empty(0)
        self._gram = np.empty((0, 0))
        self._alpha = np.empty(0)
        self._last_active = np.empty(0, dtype=np.int64)
        self._clock = 0

    def __len__(self) -> int:
        return int(self._b.shape[0])

    @property
    def planes(self) -> list[tuple[np.ndarray, float]]:
        return [(self._a[t].copy(), float(self._b[t])) for t in range(len(self))]

    @property
    def alpha(self) -> np.ndarray:
        return self._alpha.copy()

    def add(self, a: np.ndarray, b: float) -> None:
        a = np.asarray(a, dtype=np.float64).reshape(-1)
        if a.shape[0] != self.dim:
            raise ValidationError(f"plane has dimension {a.shape[0]}, expected {self.dim}")
        if len(self) >= self.capacity:
            self._evict()
        cross = self._a @ a
        t = len(self)
        gram = np.empty((t + 1, t + 1))
        gram[:t, :t] = self._gram
        gram[:t, t] = cross
        gram[t, :t] = cross
        gram[t, t] = float(a @ a)
        self._gram = gram
        self._a = np.vstack([self._a, a[None, :]])
        self._b = np.append(self._b, float(b))
        self._alpha = np.append(self._alpha, 0.0)
        self._last_active = np.append(self._last_active, self._clock)

    def _evict(self) -> None:
        victim = int(np.argmin(self._last_active[:-1]))
        keep = np.arange(len(self)) != victim
        self._a = self._a[keep]
        self._b = self._b[keep]
        self._gram = self._gram[np.ix_(keep, keep)]
        self._alpha = self._alpha[keep]
        self._last_active = self._last_active[keep]
        logger.debug("Evicted cutting plane", extra={"planes": len(self)})

    def model_risk(self, w: np.ndarray) -> float:
        if len(self) == 0:
            return 0.0
        return max(0.0, float(np.max(self._a @ w + self._b)))

    def model_objective(self, w: np.ndarray, C: float) -> float:
        return 0.5 * float(w @ w) + C * self.model_risk(w)

    def solve(self, C: float) -> ReducedSolution:
        """Minimize 0.5||w||^2 + C max(0, max_t a_t.w + b_t) through its dual.

        Dual: max_{alpha >= 0, sum alpha <= C} sum_t alpha_t b_t - 0.5 ||sum_t alpha_t a_t||^2,
        with w = -sum_t alpha_t a_t. The inequality is turned into an equality
        with a slack weight on a zero plane; pairs of weights are then updated
        (SMO style) until the duality gap closes.
        """
        t = len(self)
        if t == 0:
            raise SolverError("reduced problem needs at least one plane")
        self._clock += 1

        gram = np.zeros((t + 1, t + 1))
        gram[:t, :t] = self._gram
        b = np.append(self._b, 0.0)
        alpha = np.append(self._alpha, 0.0)
        alpha[t] = max(0.0, C - float(alpha[:t].sum()))
        h_alpha = gram @ alpha

        steps = 0
        while True:
            grad = b - h_alpha
            i = int(np.argmax(grad))
            gap = C * max(float(grad[i]), 0.0) - float(alpha @ grad)
            dual = float(alpha @ b) - 0.5 * float(alpha @ h_alpha)
            if gap <= _REDUCED_REL_GAP * max(1.0, abs(dual)) or steps >= _REDUCED_MAX_STEPS:
                break
            holders = np.flatnonzero(alpha > 0.0)
            j = int(holders[np.argmin(grad[holders])])
            if i == j or grad[i] <= grad[j]:
                break
            eta = gram[i, i] + gram[j, j] - 2.0 * gram[i, j]
            delta = (grad[i] - grad[j]) / eta if eta > 0.0 else alpha[j]
            delta = min(float(delta), float(alpha[j]))
            alpha[i] += delta
            alpha[j] -= delta
            if alpha[j] < 0.0:
                alpha[j] = 0.0
            h_alpha += delta * (gram[:, i] - gram[:, j])
            steps += 1

        self._alpha = alpha[:t].copy()
        self._last_active[self._alpha > 0.0] = self._clock
        w = -(self._alpha @ self._a)
        dual = float(self._alpha @ self._b) - 0.5 * float(w @ w)
        return ReducedSolution(
            w=w,
            value=self.model_objective(w, C),
            dual=dual,
            alpha=self._alpha.copy(),
            steps=steps,
        )


def reduced_minimizer(planes: CuttingPlaneSet, C: float) -> np.ndarray:
    return planes.solve(C).w


# --------------------------------------------------------------------------
# Solver
# --------------------------------------------------------------------------


def iteration_bound(F0: float, C: float, G: float, epsilon: float) -> float:
    """Worst-case iteration count: log2(F0 / 4C^2G^2) + 8C^2G^2 / eps - 2, at least 1."""
    for name, value in (("F0", F0), ("C", C), ("G", G), ("epsilon", epsilon)):
        if not value > 0:
            raise SolverError(f"{name} must be positive, got {value}")
    scale = 4.0 * C * C * G * G
    return max(1.0, math.log2(F0 / scale) + 2.0 * scale / epsilon - 2.0)


def warm_start_savings(n: int, C: float, f_w0: float) -> float:
    """Iterations saved by starting at w0 instead of zero: log2(nC / F(w0))."""
    if n < 1 or not C > 0 or not f_w0 > 0:
        raise SolverError("n, C and F(w0) must be positive")
    return math.log2(n * C / f_w0)


def cp_solve(
    oracle: RiskOracle,
    w0: np.ndarray | None,
    config: SolverConfig,
    planes: CuttingPlaneSet | None = None,
) -> tuple[np.ndarray, SolverState]:
    """Minimize F from w0 (zero when None).

    ``planes`` continues a previous solve: every plane in it must still lower
    bound this oracle's risk, which holds for the same data (and for the hinge
    risk after appending samples). The set is extended in place and returned in
    the state.
    """
    C = config.C
    w0 = np.zeros(oracle.dim) if w0 is None else np.asarray(w0, dtype=np.float64).reshape(-1)
    if w0.shape[0] != oracle.dim:
        raise ValidationError(f"initial point has {w0.shape[0]} entries, expected {oracle.dim}")

    cut_risk, cut_grad = oracle.evaluate(w0)
    f_best = 0.5 * float(w0 @ w0) + C * cut_risk
    epsilon = config.epsilon if config.epsilon is not None else 1e-3 * max(1.0, f_best)

    w_best = w0.copy()
    w_cut = w0.copy()
    if planes is None:
        planes = CuttingPlaneSet(oracle.dim, config.max_planes)
    elif planes.dim != oracle.dim:
        raise ValidationError(f"plane set has dimension {planes.dim}, expected {oracle.dim}")
    state = SolverState(
        w_best=w_best,
        w_current=w0.copy(),
        f_best=f_best,
        f_initial=f_best,
        lower_bound=0.0,
        gap=f_best,
        epsilon=epsilon,
    )
    lower = 0.0

    for iteration in range(1, config.max_iterations + 1):
        planes.add(cut_grad, cut_risk - float(cut_grad @ w_cut))
        reduced = planes.solve(C)
        w_current = reduced.w
        # the model minimum only grows as planes are added
        lower = max(lower, reduced.dual)

        k_star, w_new = exact_line_search(w_best, w_current, oracle, C)
        if k_star > 0.0:
            f_new = oracle.objective(w_new, C)
            if f_new < f_best:
                w_best, f_best = w_new, f_new

        gap = f_best - lower
        state.trace.append(TracePoint(iteration, f_best, lower, gap))
        state.iterations = iteration
        state.w_current = w_current
        if gap <= epsilon:
            state.converged = True
            break

        w_cut = (1.0 - config.cut_mix) * w_best + config.cut_mix * w_current
        cut_risk, cut_grad = oracle.evaluate(w_cut)
        f_cut = 0.5 * float(w_cut @ w_cut) + C * cut_risk
        if f_cut < f_best:
            w_best, f_best = w_cut.copy(), f_cut

    state.w_best = w_best
    state.f_best = f_best
    state.lower_bound = lower
    state.gap = max(0.0, f_best - lower)
    state.num_planes = len(planes)
    state.planes = planes

    if not state.converged:
        logger.warning(
            "Cutting-plane solver stopped before reaching tolerance",
            extra={"iterations": state.iterations, "gap": state.gap, "epsilon": epsilon},
        )
    else:
        logger.debug(
            "Cutting-plane solver converged",
            extra={"iterations": state.iterations, "f_best": f_best, "gap": state.gap},
        )
    return w_best, state
