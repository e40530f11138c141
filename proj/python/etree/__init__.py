"""Product quantization with encoding trees (E-Tree) and forests (E-Forest)."""

from ._core import (
    Codebook,
    EtreeError,
    Forest,
    IvfIndex,
    adc_scan,
    decode,
    distance_table,
    encode,
    load_codes,
    read_vectors,
    save_codes,
    train_pq,
    write_fvecs,
)

__all__ = [
    "Codebook",
    "EtreeError",
    "Forest",
    "IvfIndex",
    "adc_scan",
    "decode",
    "distance_table",
    "encode",
    "load_codes",
    "read_vectors",
    "save_codes",
    "train_pq",
    "write_fvecs",
]
