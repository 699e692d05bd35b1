"""Writer for the attention-dump interchange format (XMAD v1).

Deliberately independent of the consumer pipeline's own I/O code: this module
implements the documented byte layout from scratch, and the tests prove the
two sides agree by round-tripping files through the consumer's reader.

Layout, all little-endian::

    magic "XMAD" | version u32=1 | layer_count u32 | n_checkpoints u32
    | n_examples u64
    | index: n_examples x u64 absolute byte offset of each record
    | records: example_id u64, then per checkpoint
          { n_txt u32, n_img u32, n_txt*n_img f32 row-major }

Entries must be finite and lie in [0, layer_count]; example ids must be
dense 0..n-1. The writer refuses anything else — the consumer's reader
validates and never repairs, so a sloppy writer would only fail later.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

_MAGIC = b"XMAD"
_VERSION = 1
_HEADER = struct.Struct("<4sIIIQ")
_RECORD_ID = struct.Struct("<Q")
_MATRIX_HEADER = struct.Struct("<II")


def write_xmad(path: Path, layer_count: int, matrices_by_example, n_checkpoints=None) -> None:
    """Write one dump. ``matrices_by_example`` is a list over dense example
    ids; each element is the per-checkpoint list of (n_txt, n_img) arrays."""
    if layer_count < 1:
        raise ValueError(f"layer_count must be >= 1, got {layer_count}")
    n_examples = len(matrices_by_example)
    if n_checkpoints is None:
        n_checkpoints = len(matrices_by_example[0]) if n_examples else 1
    if n_checkpoints < 1:
        raise ValueError(f"n_checkpoints must be >= 1, got {n_checkpoints}")
    for ex_id, mats in enumerate(matrices_by_example):
        if len(mats) != n_checkpoints:
            raise ValueError(
                f"example {ex_id} has {len(mats)} checkpoints, "
                f"expected {n_checkpoints}"
            )
        for ckpt, m in enumerate(mats):
            m = np.asarray(m)
            if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
                raise ValueError(
                    f"example {ex_id} checkpoint {ckpt}: need a non-empty "
                    f"2-D matrix, got shape {m.shape}"
                )
            if not np.all(np.isfinite(m)):
                raise ValueError(f"example {ex_id} checkpoint {ckpt}: non-finite entry")
            if m.min() < 0.0 or m.max() > layer_count:
                raise ValueError(
                    f"example {ex_id} checkpoint {ckpt}: entries outside "
                    f"[0, {layer_count}]"
                )

    offsets = []
    cursor = _HEADER.size + 8 * n_examples
    for mats in matrices_by_example:
        offsets.append(cursor)
        cursor += _RECORD_ID.size
        for m in mats:
            n_txt, n_img = np.asarray(m).shape
            cursor += _MATRIX_HEADER.size + 4 * n_txt * n_img

    path = Path(path)
    with path.open("wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, layer_count, n_checkpoints, n_examples))
        fh.write(struct.pack(f"<{n_examples}Q", *offsets))
        for ex_id, mats in enumerate(matrices_by_example):
            fh.write(_RECORD_ID.pack(ex_id))
            for m in mats:
                m = np.asarray(m, dtype=np.float64)
                fh.write(_MATRIX_HEADER.pack(m.shape[0], m.shape[1]))
                fh.write(np.ascontiguousarray(m, dtype="<f4").tobytes())
