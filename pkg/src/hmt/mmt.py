"""Section-level multi-modal transformer.

Runs an unmasked pre-norm transformer over [CLS_p; sections; images] and
exports two things: the CLS row as the section-level document summary, and
the first layer's post-softmax attention, which the mask-transfer stage
mines for section-image relations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import transformer_stack
from .tensor import Graph, Tensor


@dataclass
class MmtOutput:
    summary: Tensor        # (d,) CLS row of the final layer
    attention: np.ndarray  # (heads, T, T) detached first-layer attention


def mmt_forward(g: Graph, section_seq: Tensor, params, heads: int,
                layers: int = 1) -> MmtOutput:
    out, attn = transformer_stack(g, section_seq, params, "mmt", heads, layers)
    d = out.shape[1]
    summary = g.reshape(g.slice_rows(out, 0, 1), (d,))
    return MmtOutput(summary=summary, attention=attn)
