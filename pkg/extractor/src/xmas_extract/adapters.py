"""Model adapters: everything the extractor needs from a model, behind a
small interface.

An adapter owns the model, its tokenizer/processor, and its attention
internals. The extractor only asks three things of it:

* ``load_checkpoint(tag)`` — switch weights; raising CheckpointLoadError is
  fatal for the whole run.
* ``token_spans(i)`` — the token-boundary rule: how many image tokens and how
  many text tokens example ``i`` produces. Raising SpanError skips just that
  example.
* ``attention_maps(i, mode)`` — an (L, N, N) stack of row-stochastic
  attention matrices for example ``i`` under the chosen head-handling rule,
  in evaluation mode (no dropout), image tokens first.

Only mock adapters run in continuous testing. Hooking a real model is a
manual workflow:

1. Subclass the interface below; in ``__init__`` load the processor and
   enumerate the example corpus.
2. In ``load_checkpoint`` load the checkpoint weights and register forward
   hooks on every decoder self-attention module that capture the post-softmax
   attention probabilities (shape (H, N, N) per layer).
3. In ``token_spans`` locate the image-token span from the processor output
   (most processors mark image positions with a dedicated token id); return
   SpanError when the marker is absent.
4. In ``attention_maps`` run one forward pass and return the hooked maps —
   averaged over heads for ``mean`` mode, or recomputed with Q/K projections
   concatenated across heads and a single softmax for ``concat`` mode.
5. Register the class in ``_REGISTRY`` under a new model id.
"""

from __future__ import annotations

import numpy as np


class SpanError(RuntimeError):
    """Image/text token boundary could not be located for one example."""


class CheckpointLoadError(RuntimeError):
    """A checkpoint named by the extraction job could not be loaded; fatal."""


class UnknownModelError(ValueError):
    pass


# reserved checkpoint tag that every mock fails to load; a cheap stand-in for
# a missing checkpoint file
FAILING_CHECKPOINT = "missing"


class MockAdapter:
    """Shared scaffolding for weight-free mock models."""

    def __init__(self, n_img=2, n_txt=2, layers=1, heads=1, examples=3, bad_spans=()):
        if n_img < 1 or n_txt < 1:
            raise ValueError("need at least one image and one text token")
        if layers < 1 or heads < 1 or examples < 1:
            raise ValueError("layers, heads and examples must be >= 1")
        self.n_img = n_img
        self.n_txt = n_txt
        self.layer_count = layers
        self.head_count = heads
        self.n_examples = examples
        self.bad_spans = frozenset(int(b) for b in bad_spans)

    def load_checkpoint(self, tag: str) -> None:
        if tag == FAILING_CHECKPOINT:
            raise CheckpointLoadError(f"cannot load checkpoint {tag!r}")

    def token_spans(self, i: int) -> tuple[int, int]:
        if i in self.bad_spans:
            raise SpanError(f"no image-token marker in example {i}")
        return self.n_img, self.n_txt

    def attention_maps(self, i: int, mode: str) -> np.ndarray:
        per_head = self._head_maps(i)  # (L, H, N, N)
        if mode == "mean":
            return per_head.mean(axis=1)
        # concat: mocks emit the same map from every head, so the
        # single-softmax variant coincides with any one head
        return per_head[:, 0]

    def _head_maps(self, i: int) -> np.ndarray:
        raise NotImplementedError


class MockUniformAdapter(MockAdapter):
    """Every attention row uniform: entry 1/N everywhere, all layers/heads."""

    def _head_maps(self, i):
        n = self.n_img + self.n_txt
        return np.full((self.layer_count, self.head_count, n, n), 1.0 / n)


class MockOneHotAdapter(MockAdapter):
    """Every token attends entirely to the first image token (column 0)."""

    def _head_maps(self, i):
        n = self.n_img + self.n_txt
        maps = np.zeros((self.layer_count, self.head_count, n, n))
        maps[:, :, :, 0] = 1.0
        return maps


_REGISTRY = {
    "mock-uniform": MockUniformAdapter,
    "mock-onehot": MockOneHotAdapter,
}


def resolve_model(model_id: str):
    """Instantiate the adapter for ``model_id``.

    Mock ids take an optional parameter suffix,
    e.g. ``mock-uniform:n_img=2,n_txt=2,layers=2,heads=4,examples=3`` —
    integer fields of the adapter constructor; ``bad_spans`` is +-separated.
    """
    name, _, params = model_id.partition(":")
    if name not in _REGISTRY:
        raise UnknownModelError(
            f"unknown model id {name!r}; known: {sorted(_REGISTRY)}"
        )
    kwargs = {}
    if params:
        for item in params.split(","):
            key, sep, value = item.partition("=")
            if not sep:
                raise ValueError(f"malformed model parameter {item!r}")
            if key == "bad_spans":
                kwargs[key] = tuple(int(v) for v in value.split("+") if v)
            else:
                kwargs[key] = int(value)
    return _REGISTRY[name](**kwargs)
