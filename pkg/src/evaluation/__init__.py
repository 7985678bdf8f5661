from src.evaluation.retrieval_eval import (
    CodeDatabase,
    EvalReport,
    QueryHit,
    average_precision,
    evaluate,
    hamming_distance,
    hamming_distances,
    pack_codes,
    popcount,
    precision_at_radius,
    query_top,
    rank_by_hamming,
    unpack_codes,
    write_report,
)

__all__ = [
    "CodeDatabase",
    "EvalReport",
    "QueryHit",
    "pack_codes",
    "unpack_codes",
    "popcount",
    "hamming_distance",
    "hamming_distances",
    "rank_by_hamming",
    "query_top",
    "average_precision",
    "precision_at_radius",
    "evaluate",
    "write_report",
]
