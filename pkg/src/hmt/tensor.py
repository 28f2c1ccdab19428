"""Dense float64 tensors with a recorded computation graph and reverse-mode gradients.

Everything downstream (attention blocks, masks, the training loop) is built
from the primitives here. Design choices that matter for verification:

* float64 everywhere, single thread: identical inputs give bit-identical
  outputs, and central finite differences resolve gradients to ~1e-10.
* masking lives inside ``softmax_rows`` (excluded entries never enter the
  normalization and come out exactly 0) instead of -inf sentinels;
  multiply-by-mask "literal" semantics can be composed from
  ``elementwise_mul`` + unmasked ``softmax_rows``.
* max-pool ties break to the lowest row index so backward is deterministic.

Tensors are immutable once built; new values enter the system either as new
tensors or through :meth:`Tensor.replace_data` (optimizer updates, parameter
loading), never through in-place edits of a recorded graph.
"""

from __future__ import annotations

import math
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import erf

from .errors import (
    DegenerateRowError,
    EmptyPoolError,
    NumericError,
    RankError,
    ShapeError,
)

_INV_SQRT_2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Tensor:
    """A dense row-major float64 array plus an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:  # ascontiguousarray would 1-d-ify scalars
            arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def value(self) -> np.ndarray:
        """Read-only view of the underlying array."""
        return self.data

    def copy_value(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.size != 1:
            raise RankError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def replace_data(self, data) -> None:
        """Swap the stored values (optimizer step / checkpoint load).

        Not a recorded operation: callers must not hold a live graph that
        references this tensor's previous values.
        """
        arr = np.ascontiguousarray(data, dtype=np.float64)
        if arr.shape != self.data.shape:
            raise ShapeError(
                f"replace_data shape {arr.shape} != existing {self.data.shape}"
            )
        arr.setflags(write=False)
        self.data = arr

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


class _Node:
    __slots__ = ("out", "inputs", "backward_fn")

    def __init__(self, out: Tensor, inputs: tuple, backward_fn: Callable):
        self.out = out
        self.inputs = inputs
        self.backward_fn = backward_fn


class Graph:
    """An append-only tape of primitive applications.

    A graph and its tensors belong to one worker at a time; create one per
    forward pass. With ``record=False`` the ops still validate and compute
    but skip the tape, which speeds up finite-difference sweeps.
    """

    def __init__(self, record: bool = True):
        self.record = record
        self.nodes: list[_Node] = []

    # -- plumbing ----------------------------------------------------------

    def _emit(self, data: np.ndarray, inputs: tuple, backward_fn) -> Tensor:
        # cheap screen first: a non-finite entry makes the sum non-finite
        if not math.isfinite(float(data.sum())) and not np.all(np.isfinite(data)):
            raise NumericError("operation produced a non-finite value")
        needs = self.record and any(t.requires_grad for t in inputs)
        out = Tensor(data, requires_grad=needs)
        if needs:
            self.nodes.append(_Node(out, inputs, backward_fn))
        return out

    # -- primitives --------------------------------------------------------

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul shapes {a.shape} x {b.shape} do not chain")
        out = a.data @ b.data

        def bw(g):
            return g @ b.data.T, a.data.T @ g

        return self._emit(out, (a, b), bw)

    def transpose(self, x: Tensor) -> Tensor:
        if x.ndim != 2:
            raise ShapeError(f"transpose needs a matrix, got {x.shape}")
        out = np.ascontiguousarray(x.data.T)

        def bw(g):
            return (np.ascontiguousarray(g.T),)

        return self._emit(out, (x,), bw)

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise ShapeError(f"add shapes {a.shape} != {b.shape}")

        def bw(g):
            return g, g

        return self._emit(a.data + b.data, (a, b), bw)

    def scale(self, x: Tensor, c: float) -> Tensor:
        c = float(c)

        def bw(g):
            return (g * c,)

        return self._emit(x.data * c, (x,), bw)

    def elementwise_mul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise ShapeError(f"elementwise_mul shapes {a.shape} != {b.shape}")

        def bw(g):
            return g * b.data, g * a.data

        return self._emit(a.data * b.data, (a, b), bw)

    def affine(self, x: Tensor, w: Tensor, b: Tensor) -> Tensor:
        """Row-wise x @ w + b with b broadcast over rows."""
        if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
            raise ShapeError(f"affine shapes {x.shape} x {w.shape} do not chain")
        if b.shape != (w.shape[1],):
            raise ShapeError(f"affine bias {b.shape} != ({w.shape[1]},)")
        out = x.data @ w.data + b.data

        def bw(g):
            return g @ w.data.T, x.data.T @ g, g.sum(axis=0)

        return self._emit(out, (x, w, b), bw)

    def relu(self, x: Tensor) -> Tensor:
        mask = x.data > 0

        def bw(g):
            return (g * mask,)

        return self._emit(np.where(mask, x.data, 0.0), (x,), bw)

    def gelu(self, x: Tensor) -> Tensor:
        """Exact erf-based GELU: 0.5 * x * (1 + erf(x / sqrt(2)))."""
        e = erf(x.data * _INV_SQRT_2)
        out = 0.5 * x.data * (1.0 + e)

        def bw(g):
            pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT_2PI
            return (g * (0.5 * (1.0 + e) + x.data * pdf),)

        return self._emit(out, (x,), bw)

    def softmax_rows(self, x: Tensor, allow: Optional[np.ndarray] = None) -> Tensor:
        """Row softmax; entries where ``allow`` is 0 are excluded and come out 0.

        ``allow`` is a constant binary matrix (masks never carry gradients).
        """
        if x.ndim != 2:
            raise ShapeError(f"softmax_rows needs a matrix, got {x.shape}")
        if allow is None:
            shifted = x.data - x.data.max(axis=1, keepdims=True)
            e = np.exp(shifted)
        else:
            allow = np.asarray(allow)
            if allow.shape != x.shape:
                raise ShapeError(f"mask shape {allow.shape} != logits {x.shape}")
            ok = allow != 0
            counts = ok.sum(axis=1)
            if (counts == 0).any():
                raise DegenerateRowError(int(np.argmin(counts)))
            row_max = np.where(ok, x.data, -np.inf).max(axis=1, keepdims=True)
            shifted = np.where(ok, x.data - row_max, -np.inf)
            e = np.exp(shifted)
        out = e / e.sum(axis=1, keepdims=True)

        def bw(g):
            dot = (g * out).sum(axis=1, keepdims=True)
            return (out * (g - dot),)

        return self._emit(out, (x,), bw)

    def layer_norm(self, x: Tensor, gain: Tensor, bias: Tensor,
                   eps: float = 1e-5) -> Tensor:
        if x.ndim != 2:
            raise ShapeError(f"layer_norm needs a matrix, got {x.shape}")
        d = x.shape[1]
        if gain.shape != (d,) or bias.shape != (d,):
            raise ShapeError(
                f"layer_norm gain/bias {gain.shape}/{bias.shape} != ({d},)"
            )
        inv_d = 1.0 / d
        mu = x.data.sum(axis=1, keepdims=True) * inv_d
        centered = x.data - mu
        var = (centered * centered).sum(axis=1, keepdims=True) * inv_d
        inv = 1.0 / np.sqrt(var + eps)
        norm = centered * inv
        out = norm * gain.data + bias.data

        def bw(g):
            gy = g * gain.data
            term = gy - gy.sum(axis=1, keepdims=True) * inv_d \
                - norm * (gy * norm).sum(axis=1, keepdims=True) * inv_d
            return term * inv, (g * norm).sum(axis=0), g.sum(axis=0)

        return self._emit(out, (x, gain, bias), bw)

    def col_max_pool(self, x: Tensor,
                     row_select: Optional[np.ndarray] = None) -> Tensor:
        """Column-wise max over (selected) rows; returns a 1-D tensor.

        Backward routes each column's gradient to the first row attaining
        the max (lowest index wins ties).
        """
        if x.ndim != 2:
            raise ShapeError(f"col_max_pool needs a matrix, got {x.shape}")
        if row_select is None:
            rows = np.arange(x.shape[0])
        else:
            row_select = np.asarray(row_select)
            if row_select.shape != (x.shape[0],):
                raise ShapeError(
                    f"row_select shape {row_select.shape} != ({x.shape[0]},)"
                )
            rows = np.flatnonzero(row_select != 0)
        if rows.size == 0:
            raise EmptyPoolError("col_max_pool over an empty row selection")
        sub = x.data[rows]
        out = sub.max(axis=0)
        arg = rows[sub.argmax(axis=0)]  # argmax is first-hit: lowest index

        def bw(g):
            gx = np.zeros_like(x.data)
            gx[arg, np.arange(x.shape[1])] = g
            return (gx,)

        return self._emit(out, (x,), bw)

    def group_max_pool(self, x: Tensor, group_ids: np.ndarray, groups: int) -> Tensor:
        """Column max over each id group in one shot; row g-1 pools ids == g.

        Equivalent to stacking ``col_max_pool(x, row_select=ids == g)`` for
        g = 1..groups (id 0 marks rows that belong to no group). Ties break
        to the lowest row index, matching col_max_pool.
        """
        if x.ndim != 2:
            raise ShapeError(f"group_max_pool needs a matrix, got {x.shape}")
        ids = np.asarray(group_ids).reshape(-1)
        if ids.shape[0] != x.shape[0]:
            raise ShapeError(
                f"group ids {ids.shape} != row count ({x.shape[0]},)"
            )
        cols = x.shape[1]
        out = np.empty((groups, cols))
        arg = np.empty((groups, cols), dtype=np.int64)
        for gid in range(1, groups + 1):
            rows = np.flatnonzero(ids == gid)
            if rows.size == 0:
                raise EmptyPoolError(f"group {gid} has no member rows")
            sub = x.data[rows]
            out[gid - 1] = sub.max(axis=0)
            arg[gid - 1] = rows[sub.argmax(axis=0)]

        def bw(g):
            gx = np.zeros_like(x.data)
            col = np.arange(cols)
            for gid in range(groups):
                gx[arg[gid], col] += g[gid]
            return (gx,)

        return self._emit(out, (x,), bw)

    def masked_attention(self, x: Tensor, wq: Sequence[Tensor],
                         wk: Sequence[Tensor], wv: Sequence[Tensor], *,
                         allow: Optional[np.ndarray] = None,
                         boost: Optional[np.ndarray] = None,
                         gain: Optional[Tensor] = None,
                         mask_mode: str = "exclusive"):
        """All attention heads in one primitive, for speed.

        Computes, per head i: softmax((x wq_i)(x wk_i)^T / sqrt(dk), masked)
        @ (x wv_i), optionally multiplying the scaled logits by
        (1 + boost_i) and by the learnable ``gain`` first. Heads are
        concatenated along columns in head order. Returns (output tensor,
        detached post-softmax attention array of shape (heads, T, T)).

        Masking follows softmax_rows: ``exclusive`` removes blocked entries
        from the normalization entirely; ``literal`` multiplies logits by
        the binary mask before an unmasked softmax.
        """
        heads = len(wq)
        if not (len(wk) == len(wv) == heads and heads >= 1):
            raise ShapeError("wq, wk, wv must be equal-length non-empty lists")
        t, d = x.shape
        dk = wq[0].shape[1]
        for w in (*wq, *wk, *wv):
            if w.shape != (d, dk):
                raise ShapeError(f"head weight {w.shape} != ({d}, {dk})")
        if mask_mode not in ("exclusive", "literal"):
            raise ShapeError(f"unknown mask mode '{mask_mode}'")
        if (boost is None) != (gain is None):
            raise ShapeError("boost and gain must be given together")

        wq_cat = np.concatenate([w.data for w in wq], axis=1)  # (d, h*dk)
        wk_cat = np.concatenate([w.data for w in wk], axis=1)
        wv_cat = np.concatenate([w.data for w in wv], axis=1)
        q = (x.data @ wq_cat).reshape(t, heads, dk).transpose(1, 0, 2)
        k = (x.data @ wk_cat).reshape(t, heads, dk).transpose(1, 0, 2)
        v = (x.data @ wv_cat).reshape(t, heads, dk).transpose(1, 0, 2)
        inv_sqrt = 1.0 / math.sqrt(dk)
        base = np.matmul(q, k.transpose(0, 2, 1)) * inv_sqrt
        logits = base
        if boost is not None:
            boost = np.asarray(boost)
            if boost.shape != (heads, t, t):
                raise ShapeError(f"boost {boost.shape} != ({heads}, {t}, {t})")
            if gain.shape != (t, t):
                raise ShapeError(f"gain {gain.shape} != ({t}, {t})")
            boosted = logits * (1.0 + boost)
            logits = boosted * gain.data[None, :, :]
        if allow is not None:
            allow = np.asarray(allow)
            if allow.shape != (t, t):
                raise ShapeError(f"mask {allow.shape} != ({t}, {t})")
        if mask_mode == "literal" and allow is not None:
            logits = logits * allow[None, :, :]
            shifted = logits - logits.max(axis=2, keepdims=True)
        elif allow is not None:
            ok = allow != 0
            counts = ok.sum(axis=1)
            if (counts == 0).any():
                raise DegenerateRowError(int(np.argmin(counts)))
            row_max = np.where(ok, logits, -np.inf).max(axis=2, keepdims=True)
            shifted = np.where(ok, logits - row_max, -np.inf)
        else:
            shifted = logits - logits.max(axis=2, keepdims=True)
        e = np.exp(shifted)
        attn = e / e.sum(axis=2, keepdims=True)
        ctx = np.matmul(attn, v)
        out = ctx.transpose(1, 0, 2).reshape(t, heads * dk)

        inputs = (x, *wq, *wk, *wv) + ((gain,) if gain is not None else ())

        def bw(g):
            gctx = g.reshape(t, heads, dk).transpose(1, 0, 2)
            dattn = np.matmul(gctx, v.transpose(0, 2, 1))
            dv = np.matmul(attn.transpose(0, 2, 1), gctx)
            dlog = attn * (dattn - (dattn * attn).sum(axis=2, keepdims=True))
            if mask_mode == "literal" and allow is not None:
                dlog = dlog * allow[None, :, :]
            dgain = None
            if boost is not None:
                dgain = (dlog * boosted).sum(axis=0)
                dlog = dlog * gain.data[None, :, :]
                dlog = dlog * (1.0 + boost)
            dbase = dlog * inv_sqrt
            dq = np.matmul(dbase, k)
            dkk = np.matmul(dbase.transpose(0, 2, 1), q)
            dq_flat = dq.transpose(1, 0, 2).reshape(t, heads * dk)
            dk_flat = dkk.transpose(1, 0, 2).reshape(t, heads * dk)
            dv_flat = dv.transpose(1, 0, 2).reshape(t, heads * dk)
            dx = dq_flat @ wq_cat.T + dk_flat @ wk_cat.T + dv_flat @ wv_cat.T
            dwq_cat = x.data.T @ dq_flat
            dwk_cat = x.data.T @ dk_flat
            dwv_cat = x.data.T @ dv_flat
            grads = [dx]
            for cat in (dwq_cat, dwk_cat, dwv_cat):
                grads.extend(cat[:, i * dk:(i + 1) * dk] for i in range(heads))
            if gain is not None:
                grads.append(dgain)
            return tuple(grads)

        return self._emit(out, inputs, bw), attn

    def concat_rows(self, parts: Sequence[Tensor]) -> Tensor:
        parts = list(parts)
        if not parts:
            raise ShapeError("concat_rows of nothing")
        cols = parts[0].shape[1] if parts[0].ndim == 2 else None
        for p in parts:
            if p.ndim != 2 or p.shape[1] != cols:
                raise ShapeError(
                    f"concat_rows column mismatch: {[p.shape for p in parts]}"
                )
        sizes = [p.shape[0] for p in parts]
        splits = np.cumsum(sizes)[:-1]

        def bw(g):
            return tuple(np.ascontiguousarray(s) for s in np.split(g, splits))

        return self._emit(np.concatenate([p.data for p in parts]), tuple(parts), bw)

    def concat_cols(self, parts: Sequence[Tensor]) -> Tensor:
        parts = list(parts)
        if not parts:
            raise ShapeError("concat_cols of nothing")
        rows = parts[0].shape[0] if parts[0].ndim == 2 else None
        for p in parts:
            if p.ndim != 2 or p.shape[0] != rows:
                raise ShapeError(
                    f"concat_cols row mismatch: {[p.shape for p in parts]}"
                )
        sizes = [p.shape[1] for p in parts]
        splits = np.cumsum(sizes)[:-1]

        def bw(g):
            return tuple(np.ascontiguousarray(s)
                         for s in np.split(g, splits, axis=1))

        return self._emit(
            np.concatenate([p.data for p in parts], axis=1), tuple(parts), bw
        )

    def slice_rows(self, x: Tensor, start: int, stop: int) -> Tensor:
        if x.ndim != 2 or not (0 <= start < stop <= x.shape[0]):
            raise ShapeError(f"slice_rows [{start}:{stop}] of {x.shape}")

        def bw(g):
            gx = np.zeros_like(x.data)
            gx[start:stop] = g
            return (gx,)

        return self._emit(x.data[start:stop].copy(), (x,), bw)

    def slice_cols(self, x: Tensor, start: int, stop: int) -> Tensor:
        if x.ndim != 2 or not (0 <= start < stop <= x.shape[1]):
            raise ShapeError(f"slice_cols [{start}:{stop}] of {x.shape}")

        def bw(g):
            gx = np.zeros_like(x.data)
            gx[:, start:stop] = g
            return (gx,)

        return self._emit(np.ascontiguousarray(x.data[:, start:stop]), (x,), bw)

    def reshape(self, x: Tensor, shape: Sequence[int]) -> Tensor:
        shape = tuple(int(s) for s in shape)
        if int(np.prod(shape)) != x.size:
            raise ShapeError(f"reshape {x.shape} -> {shape}")

        def bw(g):
            return (g.reshape(x.shape),)

        return self._emit(x.data.reshape(shape), (x,), bw)

    def sum_all(self, x: Tensor) -> Tensor:
        def bw(g):
            return (np.full(x.shape, np.asarray(g).reshape(-1)[0]),)

        return self._emit(np.asarray(x.data.sum()), (x,), bw)

    def cross_entropy(self, logits: Tensor, label: int) -> Tensor:
        """Numerically stable -log softmax(logits)[label]; scalar output."""
        z = logits.data.reshape(-1)
        n = z.size
        label = int(label)
        if not 0 <= label < n:
            raise ShapeError(f"label {label} out of range for {n} classes")
        m = z.max()
        e = np.exp(z - m)
        total = e.sum()
        loss = (m + np.log(total)) - z[label]

        def bw(g):
            p = e / total
            p[label] -= 1.0
            return ((float(g) * p).reshape(logits.shape),)

        return self._emit(np.asarray(loss), (logits,), bw)


def backward(loss: Tensor, graph: Graph) -> None:
    """Accumulate dLoss/dT into ``t.grad`` for every requires_grad ancestor.

    Repeated calls keep accumulating; optimizers reset grads explicitly.
    """
    if loss.size != 1:
        raise RankError(f"backward needs a scalar loss, got shape {loss.shape}")
    flowing: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    holders: dict[int, Tensor] = {id(loss): loss}
    for node in reversed(graph.nodes):
        g = flowing.get(id(node.out))
        if g is None:
            continue
        grads_in = node.backward_fn(g)
        for t, gi in zip(node.inputs, grads_in):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            holders[key] = t
            prev = flowing.get(key)
            flowing[key] = gi if prev is None else prev + gi
    for key, t in holders.items():
        g = flowing[key]
        t.grad = g.copy() if t.grad is None else t.grad + g
