from src.optimization.code_optimizer import (
    BitLossInputs,
    CodeMatrix,
    DCCResult,
    bit_flip_loss,
    class_scores,
    column_deltas,
    column_losses,
    column_objective,
    dcc_optimize,
    fixed_weights_objective,
    optimal_cut,
)
from src.optimization.cutting_plane_svm import (
    BinaryHingeRisk,
    CuttingPlaneSet,
    MulticlassRisk,
    ReducedSolution,
    RiskOracle,
    SolverConfig,
    SolverState,
    TracePoint,
    binary_risk,
    cp_solve,
    exact_line_search,
    iteration_bound,
    multiclass_risk,
    reduced_minimizer,
    warm_start_savings,
    write_trace_csv,
)

__all__ = [
    "SolverConfig",
    "SolverState",
    "TracePoint",
    "RiskOracle",
    "BinaryHingeRisk",
    "MulticlassRisk",
    "binary_risk",
    "multiclass_risk",
    "CuttingPlaneSet",
    "ReducedSolution",
    "reduced_minimizer",
    "exact_line_search",
    "cp_solve",
    "iteration_bound",
    "warm_start_savings",
    "write_trace_csv",
    "CodeMatrix",
    "BitLossInputs",
    "DCCResult",
    "bit_flip_loss",
    "class_scores",
    "column_losses",
    "column_deltas",
    "column_objective",
    "optimal_cut",
    "dcc_optimize",
    "fixed_weights_objective",
]
