"""Writer for the toolkit's binary embedding format.

The format is the interface between this package and the analysis
toolkit: magic b"EMB1", u32-LE row count, u32-LE dimension, then
float32-LE row-major values. Reimplemented here (a dozen lines) so the
embedder has no import dependency on the consumer.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"EMB1"
_HEADER = struct.Struct("<II")


def write_emb(path, rows: np.ndarray) -> None:
    arr = np.ascontiguousarray(np.asarray(rows, dtype="<f4"))
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D row matrix, got {arr.ndim}-D")
    if not np.isfinite(arr).all():
        raise ValueError("refusing to write NaN/Inf embedding components")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(arr.shape[0], arr.shape[1]))
        fh.write(arr.tobytes(order="C"))
