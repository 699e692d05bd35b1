"""Attention-dump extraction for the xmas selection pipeline.

Adapters pull per-layer decoder attention out of a (mock or real) model at a
list of checkpoints; the driver layer-sums the text-to-image block and writes
an XMAD v1 dump that the downstream pipeline reads natively.
"""

from xmas_extract.adapters import (
    CheckpointLoadError,
    MockOneHotAdapter,
    MockUniformAdapter,
    SpanError,
    UnknownModelError,
    resolve_model,
)
from xmas_extract.extract import extract
from xmas_extract.spec import ExtractionSpec

__version__ = "0.1.0"
