from src.data_processing.dataset import (
    DATASET_MAGIC,
    Dataset,
    DatasetFormat,
    PreprocessStats,
    apply_preprocessor,
    fit_preprocessor,
    generate_blobs,
    load_dataset,
    save_csv,
    save_dataset,
)
from src.data_processing.kernel_map import (
    AnchorSet,
    embed,
    embed_batch,
    estimate_sigma,
    sample_anchors,
)

__all__ = [
    "DATASET_MAGIC",
    "Dataset",
    "DatasetFormat",
    "PreprocessStats",
    "load_dataset",
    "save_dataset",
    "save_csv",
    "fit_preprocessor",
    "apply_preprocessor",
    "generate_blobs",
    "AnchorSet",
    "sample_anchors",
    "estimate_sigma",
    "embed",
    "embed_batch",
]
