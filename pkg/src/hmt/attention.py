"""Masked multi-head self-attention and the pre-norm transformer block.

Shared by the section-level and sentence-level transformers. Masks come in
two flavours:

* ``exclusive`` (default): blocked positions are excluded from the softmax
  normalization and receive weight exactly 0.
* ``literal``: logits are multiplied by the binary mask before an unmasked
  softmax, so blocked logits sit at 0 and still receive exp(0) mass. Kept
  for algebraic comparison; nobody should train with it.

A branch can additionally be "boosted": logits are multiplied elementwise by
(1 + transfer_mask) and by a learnable gain matrix before the softmax, which
is how section-level attention evidence is pushed into the sentence level.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .errors import ConfigError
from .tensor import Graph, Tensor

MASK_MODES = ("exclusive", "literal")


def attend(g: Graph, x_norm: Tensor, params, prefix: str, heads: int, *,
           allow: Optional[np.ndarray] = None,
           boost: Optional[np.ndarray] = None,
           gain: Optional[Tensor] = None,
           mask_mode: str = "exclusive"):
    """Multi-head self-attention over a normalized sequence.

    Returns (output rows, detached per-head attention (h, T, T)). ``boost``
    and ``gain`` must be given together.
    """
    if mask_mode not in MASK_MODES:
        raise ConfigError(f"unknown mask mode '{mask_mode}'")
    if (boost is None) != (gain is None):
        raise ConfigError("boost and gain must be given together")
    d = x_norm.shape[1]
    if d % heads:
        raise ConfigError(f"feature dim {d} not divisible by {heads} heads")
    wq = [params[f"{prefix}.head{i}.wq"] for i in range(heads)]
    wk = [params[f"{prefix}.head{i}.wk"] for i in range(heads)]
    wv = [params[f"{prefix}.head{i}.wv"] for i in range(heads)]
    ctx, attn = g.masked_attention(x_norm, wq, wk, wv, allow=allow,
                                   boost=boost, gain=gain, mask_mode=mask_mode)
    merged = g.matmul(ctx, params[f"{prefix}.wo"])
    return merged, attn


def transformer_block(g: Graph, x: Tensor, params, prefix: str, heads: int, *,
                      allow: Optional[np.ndarray] = None,
                      boost: Optional[np.ndarray] = None,
                      gain: Optional[Tensor] = None,
                      mask_mode: str = "exclusive"):
    """Pre-norm block: x + MHSA(LN(x)), then + MLP(LN(.)).

    Returns (rows, detached (heads, T, T) post-softmax attention).
    """
    xn = g.layer_norm(x, params[f"{prefix}.ln1.gain"], params[f"{prefix}.ln1.bias"])
    mixed, attn = attend(g, xn, params, prefix, heads, allow=allow,
                         boost=boost, gain=gain, mask_mode=mask_mode)
    e = g.add(x, mixed)
    en = g.layer_norm(e, params[f"{prefix}.ln2.gain"], params[f"{prefix}.ln2.bias"])
    hidden = g.gelu(g.affine(en, params[f"{prefix}.mlp.w1"], params[f"{prefix}.mlp.b1"]))
    out = g.add(e, g.affine(hidden, params[f"{prefix}.mlp.w2"], params[f"{prefix}.mlp.b2"]))
    return out, attn


def transformer_stack(g: Graph, x: Tensor, params, prefix: str, heads: int,
                      layers: int, **kw):
    """Stack of blocks; attention is reported from the first layer."""
    first_attn = None
    for j in range(layers):
        x, attn = transformer_block(g, x, params, f"{prefix}.{j}", heads, **kw)
        if j == 0:
            first_attn = attn
    return x, first_attn
