from src.storage.model_io import (
    CODES_MAGIC,
    MODEL_MAGIC,
    MODEL_VERSION,
    decode_model,
    encode_model,
    load_codes,
    load_model,
    load_state,
    save_codes,
    save_model,
)

__all__ = [
    "MODEL_MAGIC",
    "MODEL_VERSION",
    "CODES_MAGIC",
    "encode_model",
    "decode_model",
    "save_model",
    "load_model",
    "load_state",
    "save_codes",
    "load_codes",
]
