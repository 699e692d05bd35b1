"""Extraction job description."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

HEAD_MODES = ("mean", "concat")


@dataclass
class ExtractionSpec:
    """Everything needed to turn one model into one attention dump.

    ``layers`` is either the string ``"all"`` or an explicit list of 0-based
    decoder layer indices; the selected layers are summed and their count is
    declared as the dump's layer_count. ``heads`` picks the head-handling
    rule: ``mean`` averages the per-head attention maps of each layer,
    ``concat`` asks the adapter for its single-softmax-over-concatenated-
    projections variant.
    """

    model_id: str
    checkpoints: list[str]
    out_path: Path
    heads: str = "mean"
    layers: object = "all"  # "all" | list[int]
    skipped: list[int] = field(default_factory=list)  # filled during extraction

    def __post_init__(self):
        if not self.checkpoints:
            raise ValueError("checkpoint list must be non-empty")
        if self.heads not in HEAD_MODES:
            raise ValueError(f"heads must be one of {HEAD_MODES}, got {self.heads!r}")
        if self.layers != "all":
            self.layers = [int(x) for x in self.layers]
            if not self.layers:
                raise ValueError("layer set must be non-empty")
            if len(set(self.layers)) != len(self.layers):
                raise ValueError("layer set must not repeat indices")
        self.out_path = Path(self.out_path)
