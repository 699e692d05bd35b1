"""Extraction driver: adapter out, attention dump in."""

from __future__ import annotations

import logging

import numpy as np

from xmas_extract.adapters import SpanError, resolve_model
from xmas_extract.dump_writer import write_xmad
from xmas_extract.spec import ExtractionSpec

log = logging.getLogger("xmas_extract")

_ROW_SUM_TOL = 1e-8


def _selected_layers(spec: ExtractionSpec, layer_count: int) -> list[int]:
    if spec.layers == "all":
        return list(range(layer_count))
    bad = [l for l in spec.layers if not 0 <= l < layer_count]
    if bad:
        raise ValueError(
            f"layer indices {bad} out of range for a {layer_count}-layer model"
        )
    return list(spec.layers)


def _cross_modal_sum(maps: np.ndarray, layers: list[int], n_img: int, n_txt: int):
    """Layer-sum of the bottom-left text-to-image block."""
    n = n_img + n_txt
    if maps.shape[1:] != (n, n):
        raise ValueError(
            f"adapter returned attention of shape {maps.shape[1:]}, "
            f"spans say {n}x{n}"
        )
    rows = maps.sum(axis=2)
    if np.any(np.abs(rows - 1.0) > _ROW_SUM_TOL) or maps.min() < 0.0:
        raise ValueError("adapter returned non-row-stochastic attention")
    return sum(maps[l][n_img:, :n_img] for l in layers)


def extract(spec: ExtractionSpec) -> int:
    """Run one extraction job; returns the number of examples written.

    Examples whose image/text token boundary cannot be located are skipped
    and logged (their input indices land in ``spec.skipped``); surviving
    examples are renumbered densely in input order. A checkpoint that fails
    to load aborts the whole run.
    """
    adapter = resolve_model(spec.model_id)
    layers = _selected_layers(spec, adapter.layer_count)

    survivors = []
    for i in range(adapter.n_examples):
        try:
            spans = adapter.token_spans(i)
        except SpanError as exc:
            log.warning("skipping example %d: %s", i, exc)
            spec.skipped.append(i)
            continue
        survivors.append((i, spans))

    matrices = [[] for _ in survivors]
    for tag in spec.checkpoints:
        adapter.load_checkpoint(tag)  # CheckpointLoadError propagates: fatal
        for pos, (i, (n_img, n_txt)) in enumerate(survivors):
            maps = np.asarray(adapter.attention_maps(i, spec.heads), dtype=np.float64)
            matrices[pos].append(_cross_modal_sum(maps, layers, n_img, n_txt))

    write_xmad(spec.out_path, len(layers), matrices, n_checkpoints=len(spec.checkpoints))
    log.info(
        "wrote %s: %d examples x %d checkpoints, %d layers summed",
        spec.out_path, len(survivors), len(spec.checkpoints), len(layers),
    )
    return len(survivors)
