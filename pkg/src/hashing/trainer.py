"""Learning kernelized hash functions by alternating SVM training and code updates.

Each outer iteration trains one binary SVM per code bit (features to bit),
the multi-class SVM (codes to classes) and then re-optimizes the code matrix
with the SVM weights fixed. Bit SVMs are warm-started from their previous
weights and skipped when their code column did not change.
"""

from __future__ import annotations

import time
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, NamedTuple, TextIO

import numpy as np

from src.common.config import SCHEMA_DIR, ConfigLoader
from src.common.exceptions import ConfigurationError, TrainingError, ValidationError
from src.common.logging import get_logger
from src.common.utils import ensure_directory, spawn_rngs
from src.data_processing.dataset import (
    Dataset,
    PreprocessStats,
    apply_preprocessor,
    fit_preprocessor,
)
from src.data_processing.kernel_map import (
    AnchorSet,
    embed_batch,
    estimate_sigma,
    sample_anchors,
)
from src.optimization.code_optimizer import BitLossInputs, CodeMatrix, dcc_optimize
from src.optimization.cutting_plane_svm import (
    BinaryHingeRisk,
    MulticlassRisk,
    SolverConfig,
    SolverState,
    binary_risk,
    cp_solve,
    multiclass_risk,
)

logger = get_logger(__name__)

CODEBOOK_ATTEMPTS = 100
OBJECTIVE_RTOL = 1e-9
TRAINING_SCHEMA = "training"


@dataclass(frozen=True)
class TrainConfig:
    bits: int
    anchors: int
    cx: float = 16.0
    cb: float = 1e-3
    lam: float | None = None
    gamma: float = 1e5
    max_iter: int = 5
    sigma: float | None = None
    epsilon: float | None = None
    seed: int = 0
    threads: int = 1
    max_sweeps: int = 5
    max_planes: int = 500
    solver_max_iterations: int = 1000
    sigma_sample_pairs: int = 10000

    def __post_init__(self) -> None:
        if self.bits < 1:
            raise ConfigurationError(f"bits must be >= 1, got {self.bits}")
        if self.anchors < 1:
            raise ConfigurationError(f"anchors must be >= 1, got {self.anchors}")
        if not (self.cx > 0 and self.cb > 0):
            raise ConfigurationError("cx and cb must be positive")
        if self.lam is not None and self.lam < 0:
            raise ConfigurationError(f"lam must be non-negative, got {self.lam}")
        if self.gamma < 0:
            raise ConfigurationError(f"gamma must be non-negative, got {self.gamma}")
        if self.max_iter < 1:
            raise ConfigurationError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.sigma is not None and not self.sigma > 0:
            raise ConfigurationError(f"sigma must be positive, got {self.sigma}")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ConfigurationError(f"epsilon must be positive, got {self.epsilon}")
        if self.seed < 0:
            raise ConfigurationError(f"seed must be non-negative, got {self.seed}")
        for name in ("threads", "max_sweeps", "solver_max_iterations", "sigma_sample_pairs"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.max_planes < 2:
            raise ConfigurationError(f"max_planes must be >= 2, got {self.max_planes}")

    @property
    def effective_lambda(self) -> float:
        return float(self.lam) if self.lam is not None else self.bits * 1e8

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> TrainConfig:
        data = data.get("training", data)
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigurationError(f"Unknown training options: {', '.join(unknown)}")
        if "bits" not in data or "anchors" not in data:
            raise ConfigurationError("training options must include bits and anchors")
        return cls(**data)

    @classmethod
    def from_file(cls, path: str | Path, loader: ConfigLoader | None = None) -> TrainConfig:
        loader = loader or ConfigLoader(schema_dir=SCHEMA_DIR)
        return cls.from_dict(loader.load(path, schema_name=TRAINING_SCHEMA, use_cache=False))

    def to_dict(self, include_threads: bool = True) -> dict[str, Any]:
        data = asdict(self)
        if not include_threads:
            data.pop("threads")
        return data

    def with_overrides(self, **overrides: Any) -> TrainConfig:
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})


@dataclass(frozen=True)
class PhaseRecord:
    iteration: int
    phase: str
    objective: float
    changed: int
    seconds: float = 0.0

    def to_dict(self, include_time: bool = True) -> dict[str, Any]:
        data = asdict(self)
        if not include_time:
            data.pop("seconds")
        return data

    def progress_line(self) -> str:
        return (
            f"iteration={self.iteration} phase={self.phase} objective={self.objective!r} "
            f"changed={self.changed} seconds={self.seconds:.6f}"
        )


@dataclass
class TrainingHistory:
    """Objective after every phase plus solver bookkeeping."""

    records: list[PhaseRecord] = field(default_factory=list)
    trained_bits: list[list[int]] = field(default_factory=list)
    bit_solver_calls: list[int] = field(default_factory=list)
    bit_solver_iterations: list[int] = field(default_factory=list)
    multiclass_solver_calls: int = 0
    multiclass_solver_iterations: int = 0
    unconverged_solves: int = 0
    bit_epsilon: float = 0.0
    multiclass_epsilon: float = 0.0
    lam: float = 0.0
    iterations: int = 0
    converged: bool = False

    @classmethod
    def for_bits(cls, m: int) -> TrainingHistory:
        return cls(bit_solver_calls=[0] * m, bit_solver_iterations=[0] * m)

    @property
    def objectives(self) -> list[float]:
        return [record.objective for record in self.records]

    @property
    def solver_iterations(self) -> int:
        return sum(self.bit_solver_iterations) + self.multiclass_solver_iterations

    @property
    def objective_tolerance(self) -> float:
        """Rounding slack between recorded objectives.

        Warm-started solves never return a worse point and code updates need a
        strict decrease, so the objective can only grow by summation error.
        """
        scale = max((abs(value) for value in self.objectives), default=0.0)
        return OBJECTIVE_RTOL * max(1.0, scale)

    def to_dict(self, include_times: bool = True) -> dict[str, Any]:
        data = asdict(self)
        data["records"] = [r.to_dict(include_time=include_times) for r in self.records]
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> TrainingHistory:
        data = dict(data)
        records = [PhaseRecord(**r) for r in data.pop("records", [])]
        return cls(records=records, **data)


@dataclass(frozen=True, eq=False)
class HashModel:
    preprocess: PreprocessStats
    anchors: AnchorSet
    wx: np.ndarray = field(repr=False)
    wb: np.ndarray = field(repr=False)
    class_names: tuple[str, ...]
    config: TrainConfig
    history: TrainingHistory = field(default_factory=TrainingHistory)

    def __post_init__(self) -> None:
        wx = np.array(self.wx, dtype=np.float64, copy=True)
        wb = np.array(self.wb, dtype=np.float64, copy=True)
        if wx.ndim != 2 or wx.shape[0] != self.anchors.output_dim:
            raise ValidationError(
                f"bit weights must have {self.anchors.output_dim} rows, got {wx.shape}"
            )
        if wb.shape != (wx.shape[1] + 1, len(self.class_names)):
            raise ValidationError(
                f"class weights must be {wx.shape[1] + 1} x {len(self.class_names)}, "
                f"got {wb.shape}"
            )
        if self.preprocess.dim != self.anchors.d:
            raise ValidationError("preprocessing and anchors disagree on feature width")
        wx.setflags(write=False)
        wb.setflags(write=False)
        object.__setattr__(self, "wx", wx)
        object.__setattr__(self, "wb", wb)
        object.__setattr__(self, "class_names", tuple(self.class_names))

    @property
    def num_bits(self) -> int:
        return int(self.wx.shape[1])

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def feature_dim(self) -> int:
        return self.preprocess.dim

    def scores(self, features: np.ndarray, threads: int = 1) -> np.ndarray:
        x = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if x.shape[1] != self.feature_dim:
            raise ValidationError(
                f"feature width {x.shape[1]} does not match model width {self.feature_dim}"
            )
        phi = embed_batch(apply_preprocessor(self.preprocess, x), self.anchors, threads)
        return phi @ self.wx


class TrainResult(NamedTuple):
    model: HashModel
    codes: CodeMatrix
    history: TrainingHistory


def sign_bits(scores: np.ndarray) -> np.ndarray:
    return np.where(scores >= 0.0, 1, -1).astype(np.int8)


def encode_batch(model: HashModel, features: np.ndarray, threads: int = 1) -> np.ndarray:
    return sign_bits(model.scores(features, threads))


def encode(model: HashModel, x: np.ndarray) -> np.ndarray:
    """H(x) = sign(Wx^T phi(x)); a zero score maps to +1."""
    vector = np.asarray(x, dtype=np.float64)
    if vector.ndim != 1:
        raise ValidationError("encode takes a single feature vector")
    return encode_batch(model, vector[None, :])[0]


# --------------------------------------------------------------------------
# Codes
# --------------------------------------------------------------------------


def _balanced_codebook(num_classes: int, m: int, rng: np.random.Generator) -> np.ndarray:
    positives = -(-num_classes // 2)
    column = np.concatenate(
        [np.ones(positives, dtype=np.int8), -np.ones(num_classes - positives, dtype=np.int8)]
    )
    return np.stack([rng.permutation(column) for _ in range(m)], axis=1)


def _random_codebook(num_classes: int, m: int, rng: np.random.Generator) -> np.ndarray:
    return np.where(rng.random((num_classes, m)) < 0.5, -1, 1).astype(np.int8)


def _codebook_distinct(book: np.ndarray, existing: np.ndarray | None) -> bool:
    rows = book if existing is None else np.vstack([existing, book])
    return np.unique(rows, axis=0).shape[0] == rows.shape[0]


def sample_codewords(
    num_classes: int,
    m: int,
    gamma: float,
    rng: np.random.Generator,
    existing: np.ndarray | None = None,
) -> np.ndarray:
    """One codeword per class, distinct from each other and from ``existing``.

    With gamma > 0 every column holds ceil(K/2) entries of +1 across the K new
    codewords. A codebook with a collision is redrawn as a whole.
    """
    draw = _balanced_codebook if gamma > 0 else _random_codebook
    book = draw(num_classes, m, rng)
    for _ in range(CODEBOOK_ATTEMPTS - 1):
        if _codebook_distinct(book, existing):
            return book
        book = draw(num_classes, m, rng)
    if not _codebook_distinct(book, existing):
        logger.warning(
            "Could not draw distinct codewords, keeping a colliding codebook",
            extra={"classes": num_classes, "bits": m, "attempts": CODEBOOK_ATTEMPTS},
        )
    return book


def init_codes(
    labels: np.ndarray, m: int, gamma: float, seed: int | np.random.Generator
) -> CodeMatrix:
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size == 0:
        raise ValidationError("cannot initialize codes without labels")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    book = sample_codewords(int(labels.max()) + 1, m, gamma, rng)
    return CodeMatrix(book[labels])


# --------------------------------------------------------------------------
# Objective
# --------------------------------------------------------------------------


def total_objective(
    B: CodeMatrix | np.ndarray,
    wx: np.ndarray,
    wb: np.ndarray,
    phi: np.ndarray,
    labels: np.ndarray,
    config: TrainConfig,
) -> float:
    codes = B.as_float() if isinstance(B, CodeMatrix) else np.asarray(B, dtype=np.float64)
    btilde = np.hstack([codes, np.ones((codes.shape[0], 1))])
    multiclass, _ = multiclass_risk(wb, btilde, labels)
    hinge = float(np.maximum(0.0, 1.0 - codes * (phi @ wx)).sum())
    imbalance = float(np.abs(codes.sum(axis=0)).sum())
    return (
        config.effective_lambda * (0.5 * float(np.sum(wb * wb)) + config.cb * multiclass)
        + 0.5 * float(np.sum(wx * wx))
        + config.cx * hinge
        + config.gamma * imbalance
    )


def bit_objective(w: np.ndarray, phi: np.ndarray, column: np.ndarray, cx: float) -> float:
    risk, _ = binary_risk(w, phi, column)
    return 0.5 * float(w @ w) + cx * risk


# --------------------------------------------------------------------------
# Alternation
# --------------------------------------------------------------------------


@dataclass
class _Weights:
    wx: np.ndarray
    wb: np.ndarray
    wb_cold: bool


def solver_tolerances(n: int, config: TrainConfig) -> tuple[float, float]:
    """Stopping tolerances for the bit and multi-class SVMs.

    Scaled by F(0) = nC rather than F(w0) so warm and cold solves share one
    tolerance.
    """
    if config.epsilon is not None:
        return config.epsilon, config.epsilon
    return 1e-3 * max(1.0, n * config.cx), 1e-3 * max(1.0, n * config.cb)


def _record(
    history: TrainingHistory,
    record: PhaseRecord,
    progress: TextIO | None,
    on_phase: Callable[[PhaseRecord], None] | None,
) -> None:
    history.records.append(record)
    logger.info(
        "Training phase finished",
        extra={
            "iteration": record.iteration,
            "phase": record.phase,
            "objective": record.objective,
            "changed": record.changed,
        },
    )
    if progress is not None:
        progress.write(record.progress_line() + "\n")
        progress.flush()
    if on_phase is not None:
        on_phase(record)


def run_alternation(
    phi: np.ndarray,
    labels: np.ndarray,
    num_classes: int,
    codes: CodeMatrix,
    wx: np.ndarray,
    wb: np.ndarray,
    wb_cold: bool,
    config: TrainConfig,
    progress: TextIO | None = None,
    on_phase: Callable[[PhaseRecord], None] | None = None,
) -> tuple[CodeMatrix, np.ndarray, np.ndarray, TrainingHistory]:
    """Alternate SVM training and code optimization from the given starting point.

    Every bit is trained in the first outer iteration; afterwards only bits
    whose column revision moved are retrained.
    """
    n, m = codes.n, codes.m
    labels = np.asarray(labels, dtype=np.int64)
    weights = _Weights(np.array(wx, dtype=np.float64), np.array(wb, dtype=np.float64), wb_cold)
    bit_eps, class_eps = solver_tolerances(n, config)
    bit_solver = SolverConfig(
        C=config.cx,
        epsilon=bit_eps,
        max_planes=config.max_planes,
        max_iterations=config.solver_max_iterations,
    )
    class_solver = replace(bit_solver, C=config.cb, epsilon=class_eps)
    history = TrainingHistory.for_bits(m)
    history.bit_epsilon = bit_eps
    history.multiclass_epsilon = class_eps
    history.lam = config.effective_lambda

    trained_revision = np.full(m, -1, dtype=np.int64)
    wb_shape = (m + 1, num_classes)

    def train_bit(job: tuple[int, np.ndarray, np.ndarray]) -> tuple[np.ndarray, SolverState]:
        _, column, w0 = job
        return cp_solve(BinaryHingeRisk(phi, column), w0, bit_solver)

    with ThreadPoolExecutor(max_workers=config.threads) as pool:
        for iteration in range(1, config.max_iter + 1):
            started = time.perf_counter()
            revisions = codes.revisions
            dirty = [j for j in range(m) if revisions[j] != trained_revision[j]]
            targets = codes.as_float()
            jobs = [(j, targets[:, j], weights.wx[:, j].copy()) for j in dirty]
            if config.threads > 1 and len(jobs) > 1:
                solved = list(pool.map(train_bit, jobs))
            else:
                solved = [train_bit(job) for job in jobs]

            # merge in bit order so results do not depend on scheduling
            for j, (w, state) in zip(dirty, solved):
                weights.wx[:, j] = w
                trained_revision[j] = revisions[j]
                history.bit_solver_calls[j] += 1
                history.bit_solver_iterations[j] += state.iterations
                history.unconverged_solves += 0 if state.converged else 1
            history.trained_bits.append(dirty)

            if dirty or weights.wb_cold:
                oracle = MulticlassRisk(codes.with_bias(), labels, num_classes)
                w0 = None if weights.wb_cold else weights.wb.reshape(-1)
                w, state = cp_solve(oracle, w0, class_solver)
                weights.wb = w.reshape(wb_shape)
                weights.wb_cold = False
                history.multiclass_solver_calls += 1
                history.multiclass_solver_iterations += state.iterations
                history.unconverged_solves += 0 if state.converged else 1

            objective = total_objective(codes, weights.wx, weights.wb, phi, labels, config)
            _record(
                history,
                PhaseRecord(iteration, "svm", objective, len(dirty), time.perf_counter() - started),
                progress,
                on_phase,
            )

            started = time.perf_counter()
            inputs = BitLossInputs(
                scores=phi @ weights.wx,
                wb=weights.wb,
                labels=labels,
                lam=config.effective_lambda,
                cx=config.cx,
                cb=config.cb,
                gamma=config.gamma,
            )
            result = dcc_optimize(codes, inputs, config.max_sweeps)
            codes = result.codes
            changed = int(result.changed.sum())
            objective = total_objective(codes, weights.wx, weights.wb, phi, labels, config)
            _record(
                history,
                PhaseRecord(iteration, "codes", objective, changed, time.perf_counter() - started),
                progress,
                on_phase,
            )
            history.iterations = iteration
            if changed == 0:
                history.converged = True
                break

    if not history.converged:
        logger.warning(
            "Code matrix still changing at the iteration limit",
            extra={"max_iter": config.max_iter},
        )
    return codes, weights.wx, weights.wb, history


def prepare_features(
    train: Dataset, config: TrainConfig
) -> tuple[PreprocessStats, AnchorSet, np.ndarray]:
    """Fit preprocessing, sample anchors, choose sigma and embed the training set."""
    if train.n < 2:
        raise TrainingError(f"training needs at least 2 samples, got {train.n}")
    if np.all(train.features == train.features[0]):
        raise TrainingError("all training samples are identical")
    if config.anchors > train.n:
        raise TrainingError(
            f"cannot sample {config.anchors} anchors from {train.n} training samples"
        )

    anchor_rng, sigma_rng = spawn_rngs(config.seed, 3)[:2]
    stats = fit_preprocessor(train)
    processed = Dataset(
        features=apply_preprocessor(stats, train.features),
        labels=train.labels,
        class_names=train.class_names,
    )
    anchors = sample_anchors(processed, config.anchors, anchor_rng)
    sigma = config.sigma
    if sigma is None:
        sigma = estimate_sigma(processed, anchors, config.sigma_sample_pairs, sigma_rng)
    anchors = anchors.with_sigma(sigma)
    phi = embed_batch(processed.features, anchors, config.threads)
    logger.info(
        "Embedded training set",
        extra={"n": train.n, "anchors": anchors.r, "sigma": sigma, "bytes": phi.nbytes},
    )
    return stats, anchors, phi


def open_progress_log(path: str | Path | None) -> TextIO | None:
    if path is None:
        return None
    path = Path(path)
    ensure_directory(path.parent)
    return open(path, "w", encoding="utf-8")


def train(
    train_set: Dataset,
    config: TrainConfig,
    progress_log: str | Path | None = None,
    on_phase: Callable[[PhaseRecord], None] | None = None,
) -> TrainResult:
    if train_set.num_classes < 2:
        logger.warning("Training with a single class, the multi-class stage is degenerate")
    stats, anchors, phi = prepare_features(train_set, config)
    code_rng = spawn_rngs(config.seed, 3)[2]
    codes = init_codes(train_set.labels, config.bits, config.gamma, code_rng)

    progress = open_progress_log(progress_log)
    try:
        codes, wx, wb, history = run_alternation(
            phi,
            train_set.labels,
            train_set.num_classes,
            codes,
            np.zeros((anchors.output_dim, config.bits)),
            np.zeros((config.bits + 1, train_set.num_classes)),
            wb_cold=True,
            config=config,
            progress=progress,
            on_phase=on_phase,
        )
    finally:
        if progress is not None:
            progress.close()

    model = HashModel(
        preprocess=stats,
        anchors=anchors,
        wx=wx,
        wb=wb,
        class_names=train_set.class_names,
        config=config,
        history=history,
    )
    logger.info(
        "Training finished",
        extra={
            "iterations": history.iterations,
            "converged": history.converged,
            "objective": history.objectives[-1],
        },
    )
    return TrainResult(model=model, codes=codes, history=history)
