"""Sentence-level transformer with multi-scale window masks and dynamic fusion.

The sentence sequence is run through several parallel branches:

* a text-only branch over [CLS_s; sentences] (no image rows at all), which
  keeps uncorrelated images from polluting the summary;
* one masked multi-modal branch per configured window size. A window of
  size w lets sentence i attend to sentences within |i-j| <= w//2; CLS and
  image positions always attend and are attended globally. ``full`` is the
  all-ones branch. All multi-modal branches share one set of weights; only
  the masks differ.

Branch CLS outputs are fused with per-channel softmax weights generated by a
small bottleneck MLP, so each feature channel picks its own blend of scales.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence, Union

import numpy as np

from .attention import transformer_stack
from .errors import ConfigError
from .tensor import Graph, Tensor

FULL_WINDOW = "full"
WindowSize = Union[int, str]


@dataclass
class WindowMask:
    size: WindowSize
    allow: np.ndarray  # (n+m+1, n+m+1) binary


@lru_cache(maxsize=256)
def _window_allow(n: int, m: int, w: Union[int, None]) -> np.ndarray:
    t = n + m + 1
    if w is None:
        allow = np.ones((t, t))
    else:
        allow = np.ones((t, t))
        idx = np.arange(n)
        band = (np.abs(idx[:, None] - idx[None, :]) <= w // 2).astype(np.float64)
        allow[1:n + 1, 1:n + 1] = band
    allow.setflags(write=False)
    return allow


def build_window_mask(n: int, m: int, w: WindowSize) -> WindowMask:
    """Binary attention mask for one scale; ``w`` odd, or "full" for all-ones."""
    if w == FULL_WINDOW:
        return WindowMask(size=w, allow=_window_allow(n, m, None))
    w = int(w)
    if w < 1 or w % 2 == 0:
        raise ConfigError(f"window size must be odd and >= 1, got {w}")
    return WindowMask(size=w, allow=_window_allow(n, m, w))


def masked_mm_forward(g: Graph, sentence_seq: Tensor, window: WindowMask,
                      params, heads: int, layers: int = 1, *,
                      boost: Optional[np.ndarray] = None,
                      gain: Optional[Tensor] = None,
                      mask_mode: str = "exclusive"):
    """One multi-modal branch; returns (CLS row, first-layer attention)."""
    t = sentence_seq.shape[0]
    if window.allow.shape != (t, t):
        raise ConfigError(f"window mask {window.allow.shape} != ({t}, {t})")
    if boost is not None and boost.shape != (heads, t, t):
        raise ConfigError(f"boost shape {boost.shape} != ({heads}, {t}, {t})")
    out, attn = transformer_stack(
        g, sentence_seq, params, "dmmt.mm", heads, layers,
        allow=window.allow, boost=boost, gain=gain, mask_mode=mask_mode,
    )
    d = out.shape[1]
    return g.reshape(g.slice_rows(out, 0, 1), (d,)), attn


def text_branch_forward(g: Graph, text_seq: Tensor, params, heads: int,
                        layers: int = 1) -> Tensor:
    """Unmasked transformer over [CLS_s; sentences]; returns the CLS row."""
    out, _ = transformer_stack(g, text_seq, params, "dmmt.text", heads, layers)
    d = out.shape[1]
    return g.reshape(g.slice_rows(out, 0, 1), (d,))


def dynamic_fuse(g: Graph, branch_outputs: Sequence[Tensor], params):
    """Per-channel softmax blend of branch CLS vectors.

    Returns (fused (d,), weights (k, d)); every weight column sums to 1.
    """
    if not branch_outputs:
        raise ConfigError("dynamic_fuse needs at least one branch")
    d = branch_outputs[0].shape[0]
    stack = g.concat_rows([g.reshape(y, (1, d)) for y in branch_outputs])
    hidden = g.relu(g.affine(stack, params["dmmt.fuse.w1"], params["dmmt.fuse.b1"]))
    scores = g.affine(hidden, params["dmmt.fuse.w2"], params["dmmt.fuse.b2"])
    weights = g.transpose(g.softmax_rows(g.transpose(scores)))
    k = len(branch_outputs)
    fused = g.matmul(Tensor(np.ones((1, k))), g.elementwise_mul(weights, stack))
    return g.reshape(fused, (d,)), weights


def uniform_fuse(g: Graph, branch_outputs: Sequence[Tensor]):
    """Equal-weight blend (the no-dynamic-fusion ablation)."""
    d = branch_outputs[0].shape[0]
    k = len(branch_outputs)
    stack = g.concat_rows([g.reshape(y, (1, d)) for y in branch_outputs])
    weights = Tensor(np.full((k, d), 1.0 / k))
    fused = g.matmul(Tensor(np.ones((1, k)) / k), stack)
    return g.reshape(fused, (d,)), weights
