"""Binary persistence for attention dumps and trajectory tables.

Two little-endian formats make up the storage boundary of the pipeline:

XMAD v1 (per-example, per-checkpoint cross-modal attention matrices)::

    magic "XMAD" | version u32=1 | layer_count u32 | n_checkpoints u32
    | n_examples u64
    | index: n_examples x u64 absolute byte offset of each record
    | records: example_id u64, then per checkpoint
          { n_txt u32, n_img u32, n_txt*n_img f32 row-major }

XMAT v1 (alignment scores, one row per example, one column per checkpoint)::

    magic "XMAT" | version u32=1 | n_examples u64 | n_checkpoints u32
    | n_examples*n_checkpoints f32 row-major

Entries are stored as 32-bit floats; everything in memory is float64.
Readers validate, they never repair: entries must be finite and lie in
[0, layer_count] (each layer contributes a softmax output in [0, 1] and
matrices are layer sums), example ids must be dense and unique, and every
example must carry the same number of checkpoints.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable

import numpy as np

_DUMP_MAGIC = b"XMAD"
_TABLE_MAGIC = b"XMAT"
_VERSION = 1

_DUMP_HEADER = struct.Struct("<4sIIIQ")
_TABLE_HEADER = struct.Struct("<4sIQI")
_RECORD_ID = struct.Struct("<Q")
_MATRIX_HEADER = struct.Struct("<II")


class FormatError(Exception):
    """A file does not conform to the XMAD/XMAT contract."""


class BadMagicError(FormatError):
    pass


class BadVersionError(FormatError):
    pass


class TruncationError(FormatError):
    def __init__(self, message: str, expected: int, actual: int):
        super().__init__(f"{message}: expected {expected} bytes, got {actual}")
        self.expected = expected
        self.actual = actual


class BadValueError(FormatError):
    """An entry violates the value invariants (finite, within [0, L])."""

    def __init__(self, message: str, example_id: int | None = None, checkpoint: int | None = None):
        super().__init__(message)
        self.example_id = example_id
        self.checkpoint = checkpoint


class SinkError(OSError):
    """Write to the destination failed; ``offset`` is the byte position."""

    def __init__(self, offset: int, cause: OSError):
        super().__init__(f"write failed at byte offset {offset}: {cause}")
        self.offset = offset


@dataclass
class ExampleRecord:
    example_id: int
    matrices: list[np.ndarray]  # one (n_txt, n_img) float64 matrix per checkpoint


@dataclass
class AttentionDump:
    layer_count: int
    n_checkpoints: int
    records: list[ExampleRecord] = field(default_factory=list)

    @property
    def n_examples(self) -> int:
        return len(self.records)

    def validate(self) -> None:
        if self.layer_count < 1:
            raise BadValueError(f"layer_count must be >= 1, got {self.layer_count}")
        if self.n_checkpoints < 1:
            raise BadValueError(f"n_checkpoints must be >= 1, got {self.n_checkpoints}")
        seen = set()
        for rec in self.records:
            if rec.example_id in seen:
                raise BadValueError(f"duplicate example_id {rec.example_id}", rec.example_id)
            seen.add(rec.example_id)
            if len(rec.matrices) != self.n_checkpoints:
                raise BadValueError(
                    f"example {rec.example_id} has {len(rec.matrices)} checkpoints, "
                    f"expected {self.n_checkpoints}",
                    rec.example_id,
                )
            for ckpt, m in enumerate(rec.matrices):
                _check_entries(np.asarray(m), self.layer_count, rec.example_id, ckpt)
        if seen and (min(seen) != 0 or max(seen) != len(seen) - 1):
            raise BadValueError(
                f"example ids must be dense in [0, {len(seen)}), got range "
                f"[{min(seen)}, {max(seen)}]"
            )


@dataclass
class TrajectoryTable:
    scores: np.ndarray  # (n_examples, n_checkpoints) float64

    @property
    def n_examples(self) -> int:
        return int(self.scores.shape[0])

    @property
    def n_checkpoints(self) -> int:
        return int(self.scores.shape[1])

    def validate(self) -> None:
        s = np.asarray(self.scores)
        if s.ndim != 2:
            raise BadValueError(f"scores must be 2-D, got shape {s.shape}")
        if s.shape[1] < 1:
            raise BadValueError("table needs at least one checkpoint column")
        if s.size and not np.isfinite(s).all():
            i, j = np.argwhere(~np.isfinite(s))[0]
            raise BadValueError(f"non-finite score at example {i}, checkpoint {j}", int(i), int(j))
        if s.size and (s < 0).any():
            i, j = np.argwhere(s < 0)[0]
            raise BadValueError(f"negative score at example {i}, checkpoint {j}", int(i), int(j))


def _check_entries(m: np.ndarray, layer_count: int, example_id: int, ckpt: int) -> None:
    if m.ndim != 2:
        raise BadValueError(
            f"example {example_id} checkpoint {ckpt}: matrix must be 2-D, got shape {m.shape}",
            example_id,
            ckpt,
        )
    if m.size == 0:
        raise BadValueError(
            f"example {example_id} checkpoint {ckpt}: empty matrix", example_id, ckpt
        )
    if not np.isfinite(m).all():
        raise BadValueError(
            f"example {example_id} checkpoint {ckpt}: non-finite entry", example_id, ckpt
        )
    if (m < 0).any() or (m > layer_count).any():
        raise BadValueError(
            f"example {example_id} checkpoint {ckpt}: entry outside [0, {layer_count}]",
            example_id,
            ckpt,
        )


class _CountingSink:
    """Wraps a binary sink so write failures report the byte offset."""

    def __init__(self, raw: BinaryIO):
        self._raw = raw
        self.offset = 0

    def write(self, data: bytes) -> None:
        try:
            self._raw.write(data)
        except OSError as exc:
            raise SinkError(self.offset, exc) from exc
        self.offset += len(data)


def _open_maybe(dest, mode: str):
    if isinstance(dest, (str, Path)):
        return open(dest, mode), True
    return dest, False


def write_attention_dump(dump: AttentionDump, destination) -> None:
    """Serialize ``dump`` as XMAD v1. The dump is validated first."""
    dump.validate()
    records = sorted(dump.records, key=lambda r: r.example_id)

    offsets = []
    pos = _DUMP_HEADER.size + 8 * len(records)
    for rec in records:
        offsets.append(pos)
        pos += _RECORD_ID.size
        for m in rec.matrices:
            pos += _MATRIX_HEADER.size + 4 * m.shape[0] * m.shape[1]

    raw, close = _open_maybe(destination, "wb")
    sink = _CountingSink(raw)
    try:
        sink.write(
            _DUMP_HEADER.pack(
                _DUMP_MAGIC, _VERSION, dump.layer_count, dump.n_checkpoints, len(records)
            )
        )
        sink.write(np.asarray(offsets, dtype="<u8").tobytes())
        for rec in records:
            sink.write(_RECORD_ID.pack(rec.example_id))
            for m in rec.matrices:
                n_txt, n_img = m.shape
                sink.write(_MATRIX_HEADER.pack(n_txt, n_img))
                sink.write(np.ascontiguousarray(m, dtype="<f4").tobytes())
    finally:
        if close:
            raw.close()


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncationError(f"truncated while reading {what}", self.pos + n, len(self.data))
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out


def read_attention_dump(source) -> AttentionDump:
    """Parse and fully validate an XMAD v1 file."""
    raw, close = _open_maybe(source, "rb")
    try:
        data = raw.read()
    finally:
        if close:
            raw.close()
    cur = _Cursor(data)

    magic, version, layer_count, n_ckpts, n_examples = _DUMP_HEADER.unpack(
        cur.take(_DUMP_HEADER.size, "header")
    )
    if magic != _DUMP_MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {_DUMP_MAGIC!r}")
    if version != _VERSION:
        raise BadVersionError(f"unsupported version {version}, expected {_VERSION}")

    offsets = np.frombuffer(cur.take(8 * n_examples, "offset index"), dtype="<u8")

    records = []
    for idx in range(n_examples):
        if cur.pos != offsets[idx]:
            raise FormatError(
                f"record {idx} starts at byte {cur.pos}, index says {int(offsets[idx])}"
            )
        (example_id,) = _RECORD_ID.unpack(cur.take(_RECORD_ID.size, f"record {idx} id"))
        matrices = []
        for ckpt in range(n_ckpts):
            n_txt, n_img = _MATRIX_HEADER.unpack(
                cur.take(_MATRIX_HEADER.size, f"example {example_id} checkpoint {ckpt} shape")
            )
            if n_txt == 0 or n_img == 0:
                raise BadValueError(
                    f"example {example_id} checkpoint {ckpt}: zero-sized matrix "
                    f"({n_txt}x{n_img})",
                    example_id,
                    ckpt,
                )
            payload = cur.take(
                4 * n_txt * n_img, f"example {example_id} checkpoint {ckpt} payload"
            )
            m = np.frombuffer(payload, dtype="<f4").reshape(n_txt, n_img).astype(np.float64)
            _check_entries(m, layer_count, example_id, ckpt)
            matrices.append(m)
        records.append(ExampleRecord(example_id=example_id, matrices=matrices))
    if cur.pos != len(data):
        raise FormatError(f"{len(data) - cur.pos} trailing bytes after last record")

    dump = AttentionDump(layer_count=layer_count, n_checkpoints=n_ckpts, records=records)
    dump.validate()
    return dump


def write_trajectory_table(table: TrajectoryTable, destination) -> None:
    """Serialize ``table`` as XMAT v1."""
    table.validate()
    scores = np.asarray(table.scores, dtype=np.float64)
    raw, close = _open_maybe(destination, "wb")
    sink = _CountingSink(raw)
    try:
        sink.write(_TABLE_HEADER.pack(_TABLE_MAGIC, _VERSION, scores.shape[0], scores.shape[1]))
        sink.write(np.ascontiguousarray(scores, dtype="<f4").tobytes())
    finally:
        if close:
            raw.close()


def read_trajectory_table(source) -> TrajectoryTable:
    """Parse and validate an XMAT v1 file."""
    raw, close = _open_maybe(source, "rb")
    try:
        data = raw.read()
    finally:
        if close:
            raw.close()
    cur = _Cursor(data)
    magic, version, n_examples, n_ckpts = _TABLE_HEADER.unpack(
        cur.take(_TABLE_HEADER.size, "header")
    )
    if magic != _TABLE_MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {_TABLE_MAGIC!r}")
    if version != _VERSION:
        raise BadVersionError(f"unsupported version {version}, expected {_VERSION}")
    payload = cur.take(4 * n_examples * n_ckpts, "score payload")
    if cur.pos != len(data):
        raise FormatError(f"{len(data) - cur.pos} trailing bytes after scores")
    scores = (
        np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(n_examples, n_ckpts)
    )
    table = TrajectoryTable(scores=scores)
    table.validate()
    return table


def iter_checkpoint_matrices(dump: AttentionDump) -> Iterable[tuple[int, int, np.ndarray]]:
    """Yield (example_id, checkpoint, matrix) in storage order."""
    for rec in dump.records:
        for ckpt, m in enumerate(rec.matrices):
            yield rec.example_id, ckpt, m
