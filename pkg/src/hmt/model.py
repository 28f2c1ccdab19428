"""The full classifier: parameter set, forward pass, loss, and checkpoints.

Forward pipeline (per document):

    bundle -> sequences -> section transformer -> [mask transfer]
           -> sentence branches -> dynamic fusion
           -> column max over the two summaries -> linear head -> logits

Parameters live in a name-addressed map so checkpoints and gradient checks
can reach every array individually. Values are kept f32-exact (computation
is f64) so that the f32 on-disk checkpoint format round-trips bit-for-bit.

HMTP v1 layout (little-endian, no padding):

    magic "HMTP" | version u32=1 | param_count u32
    per entry: name_len u32 | name UTF-8 | rank u32 | dims u32*rank | f32 data

Checkpoints embed the run configuration as a reserved "meta.config" entry so
that evaluation needs nothing but the model file.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO, Optional, Union

import numpy as np

from .assembly import AssembledDoc, build_sequences
from .bundles import DocFeatureBundle
from .config import TrainConfig, config_from_floats, config_to_floats
from .dmmt import (
    build_window_mask,
    dynamic_fuse,
    masked_mm_forward,
    text_branch_forward,
    uniform_fuse,
)
from .dmt import TransferMasks, dmt_pipeline
from .errors import FormatError, TruncationError, ValidationError
from .mmt import mmt_forward
from .tensor import Graph, Tensor, parameter

PARAMS_MAGIC = b"HMTP"
PARAMS_VERSION = 1
META_CONFIG = "meta.config"


def _f32_exact(arr: np.ndarray) -> np.ndarray:
    return arr.astype(np.float32).astype(np.float64)


class ModelParams:
    """Ordered name -> Tensor map of every learnable array."""

    def __init__(self, tensors: dict[str, Tensor]):
        self.tensors = dict(tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def names(self) -> list[str]:
        return list(self.tensors)

    def items(self):
        return self.tensors.items()

    def zero_grads(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    def clone(self) -> "ModelParams":
        return ModelParams(
            {k: parameter(v.copy_value()) for k, v in self.tensors.items()}
        )


def _block_names(prefix: str, d: int, heads: int, layers: int):
    dk = d // heads
    hidden = 4 * d
    for j in range(layers):
        p = f"{prefix}.{j}"
        for i in range(heads):
            yield f"{p}.head{i}.wq", (d, dk), "w"
            yield f"{p}.head{i}.wk", (d, dk), "w"
            yield f"{p}.head{i}.wv", (d, dk), "w"
        yield f"{p}.wo", (d, d), "w"
        yield f"{p}.ln1.gain", (d,), "one"
        yield f"{p}.ln1.bias", (d,), "zero"
        yield f"{p}.ln2.gain", (d,), "one"
        yield f"{p}.ln2.bias", (d,), "zero"
        yield f"{p}.mlp.w1", (d, hidden), "w"
        yield f"{p}.mlp.b1", (hidden,), "zero"
        yield f"{p}.mlp.w2", (hidden, d), "w"
        yield f"{p}.mlp.b2", (d,), "zero"


def _param_layout(cfg: TrainConfig):
    d = cfg.d
    bottleneck = max(1, d // 4)
    yield "stg.weight", (d, d), "w"
    yield "stg.bias", (d,), "zero"
    yield "img_proj.weight", (d, d), "w"
    yield "img_proj.bias", (d,), "zero"
    yield "sent_fusion.weight", (2 * d, d), "w"
    yield "sent_fusion.bias", (d,), "zero"
    yield "cls.section", (1, d), "w"
    yield "cls.sentence", (1, d), "w"
    yield "pos.section", (cfg.l_max, d), "w"
    yield "pos.sentence", (cfg.n_max, d), "w"
    yield from _block_names("mmt", d, cfg.h, cfg.layers)
    yield from _block_names("dmmt.mm", d, cfg.h, cfg.layers)
    yield from _block_names("dmmt.text", d, cfg.h, cfg.layers)
    yield "dmmt.fuse.w1", (d, bottleneck), "w"
    yield "dmmt.fuse.b1", (bottleneck,), "zero"
    yield "dmmt.fuse.w2", (bottleneck, d), "w"
    yield "dmmt.fuse.b2", (d,), "zero"
    yield "dmmt.boost_gain", (cfg.seq_cap, cfg.seq_cap), "one"
    yield "head.weight", (d, cfg.num_classes), "w"
    yield "head.bias", (cfg.num_classes,), "zero"


def init_params(cfg: TrainConfig, seed: Optional[int] = None) -> ModelParams:
    """Deterministic initialization: N(0, 0.02) weights, zero biases, unit gains."""
    rng = np.random.default_rng([seed if seed is not None else cfg.seed, 0x504152])
    tensors = {}
    for name, shape, kind in _param_layout(cfg):
        if kind == "w":
            arr = 0.02 * rng.standard_normal(shape)
        elif kind == "one":
            arr = np.ones(shape)
        else:
            arr = np.zeros(shape)
        tensors[name] = parameter(_f32_exact(arr))
    return ModelParams(tensors)


@dataclass
class Diagnostics:
    mmt_attention: np.ndarray                  # (h, T_p, T_p)
    branch_attentions: list                    # per window: (h, T_s, T_s)
    branch_windows: list                       # window sizes in branch order
    fusion_weights: Optional[np.ndarray]       # (k, d) or None if DMMT off
    transfer: Optional[TransferMasks]
    assembled: AssembledDoc


def check_dims(bundle: DocFeatureBundle, cfg: TrainConfig) -> None:
    if bundle.dim != cfg.d or bundle.section_len != cfg.r:
        raise ValidationError(
            f"doc '{bundle.doc_id}' has (d={bundle.dim}, r={bundle.section_len}), "
            f"config wants (d={cfg.d}, r={cfg.r})"
        )
    if bundle.section_count > cfg.l_max or bundle.sentence_count > cfg.n_max \
            or bundle.image_count > cfg.m_max:
        raise ValidationError(
            f"doc '{bundle.doc_id}' exceeds caps: l={bundle.section_count}/{cfg.l_max} "
            f"n={bundle.sentence_count}/{cfg.n_max} m={bundle.image_count}/{cfg.m_max}"
        )
    if bundle.label >= cfg.num_classes:
        raise ValidationError(
            f"doc '{bundle.doc_id}' label {bundle.label} >= {cfg.num_classes}"
        )


def model_forward(g: Graph, bundle: DocFeatureBundle, params: ModelParams,
                  cfg: TrainConfig, collect: bool = False,
                  frozen_transfer: Optional[TransferMasks] = None):
    """Logits for one document; optionally gather attention/mask diagnostics.

    ``frozen_transfer`` bypasses the mask-transfer pipeline with a
    precomputed result; finite-difference checks use it to hold the
    discrete selection constant, matching its stop-gradient semantics.
    """
    check_dims(bundle, cfg)
    if not cfg.enable_mmt_images:
        bundle = DocFeatureBundle(
            doc_id=bundle.doc_id, label=bundle.label,
            section_count=bundle.section_count, section_len=bundle.section_len,
            dim=bundle.dim, sentence_count=bundle.sentence_count,
            image_count=bundle.image_count,
            section_feats=bundle.section_feats, word_feats=bundle.word_feats,
            sentence_mask=bundle.sentence_mask,
            image_feats=np.zeros_like(bundle.image_feats),
        )
    assembled = build_sequences(g, bundle, params)
    n, m = bundle.sentence_count, bundle.image_count
    d = cfg.d

    mmt_out = mmt_forward(g, assembled.section_seq, params, cfg.h, cfg.layers)
    summaries = [mmt_out.summary]

    transfer = None
    fusion_weights = None
    branch_attentions = []
    if cfg.enable_dmmt:
        boost = None
        gain = None
        if cfg.enable_dmt:
            transfer = frozen_transfer if frozen_transfer is not None \
                else dmt_pipeline(mmt_out, assembled, bundle.section_feats,
                                  cfg.eta, cfg.h)
            t = n + m + 1
            gain = g.slice_cols(
                g.slice_rows(params["dmmt.boost_gain"], 0, t), 0, t
            )
            boost = transfer.boost
        branch_outputs = []
        if cfg.enable_text_branch:
            text_seq = g.slice_rows(assembled.sentence_seq, 0, n + 1)
            branch_outputs.append(
                text_branch_forward(g, text_seq, params, cfg.h, cfg.layers)
            )
        for w in cfg.windows:
            window = build_window_mask(n, m, w)
            y, attn = masked_mm_forward(
                g, assembled.sentence_seq, window, params, cfg.h, cfg.layers,
                boost=boost, gain=gain, mask_mode=cfg.mask_mode,
            )
            branch_outputs.append(y)
            if collect:
                branch_attentions.append(attn)
        if cfg.enable_dynamic_fusion:
            sentence_summary, weights = dynamic_fuse(g, branch_outputs, params)
        else:
            sentence_summary, weights = uniform_fuse(g, branch_outputs)
        fusion_weights = weights.value() if collect else None
        summaries.append(sentence_summary)

    stack = g.concat_rows([g.reshape(y, (1, d)) for y in summaries])
    document = g.reshape(g.col_max_pool(stack), (1, d))
    logits = g.reshape(
        g.affine(document, params["head.weight"], params["head.bias"]),
        (cfg.num_classes,),
    )
    diag = None
    if collect:
        diag = Diagnostics(
            mmt_attention=mmt_out.attention,
            branch_attentions=branch_attentions,
            branch_windows=list(cfg.windows),
            fusion_weights=fusion_weights,
            transfer=transfer,
            assembled=assembled,
        )
    return logits, diag


def loss_ce(g: Graph, logits: Tensor, label: int) -> Tensor:
    """Cross-entropy of one document, numerically stabilized."""
    if not 0 <= int(label) < logits.size:
        raise ValidationError(
            f"label {label} out of range for {logits.size} classes"
        )
    return g.cross_entropy(logits, int(label))


# -- checkpoints --------------------------------------------------------------


def save_params(params: ModelParams, destination: Union[str, BinaryIO],
                cfg: TrainConfig) -> int:
    """Write an HMTP v1 checkpoint (config embedded); returns byte count."""
    if isinstance(destination, str):
        with open(destination, "wb") as fh:
            return save_params(params, fh, cfg)
    entries = [(META_CONFIG, np.asarray(config_to_floats(cfg)))]
    entries.extend((name, t.value()) for name, t in params.items())
    written = destination.write(
        PARAMS_MAGIC + struct.pack("<II", PARAMS_VERSION, len(entries))
    )
    for name, arr in entries:
        blob = name.encode("utf-8")
        head = struct.pack("<I", len(blob)) + blob
        head += struct.pack("<I", arr.ndim)
        head += struct.pack(f"<{arr.ndim}I", *arr.shape)
        body = arr.astype("<f4").tobytes()
        destination.write(head)
        destination.write(body)
        written += len(head) + len(body)
    return written


def load_params(source: Union[str, BinaryIO]):
    """Read an HMTP v1 checkpoint; returns (ModelParams, TrainConfig).

    Entry names must exactly match the layout implied by the embedded
    config: unknown or missing names are errors.
    """
    if isinstance(source, str):
        with open(source, "rb") as fh:
            return load_params(fh)
    offset = 0

    def take(count, what):
        nonlocal offset
        buf = source.read(count)
        if len(buf) != count:
            raise TruncationError(
                f"checkpoint ended reading {what} ({len(buf)}/{count} bytes)",
                offset + len(buf),
            )
        offset += count
        return buf

    magic = take(4, "magic")
    if magic != PARAMS_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {PARAMS_MAGIC!r}")
    version, count = struct.unpack("<II", take(8, "header"))
    if version != PARAMS_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    arrays = {}
    for _ in range(count):
        name_len = struct.unpack("<I", take(4, "name length"))[0]
        name = take(name_len, "name").decode("utf-8")
        rank = struct.unpack("<I", take(4, "rank"))[0]
        dims = struct.unpack(f"<{rank}I", take(4 * rank, "dims")) if rank else ()
        size = int(np.prod(dims)) if dims else 1
        raw = take(4 * size, f"data for {name}")
        arrays[name] = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(dims)
    if source.read(1):
        raise FormatError("trailing bytes after declared parameters")
    if META_CONFIG not in arrays:
        raise FormatError("checkpoint lacks the embedded config entry")
    cfg = config_from_floats(arrays.pop(META_CONFIG))
    expected = {name: shape for name, shape, _ in _param_layout(cfg)}
    unknown = sorted(set(arrays) - set(expected))
    if unknown:
        raise ValidationError(f"unknown parameter names: {unknown}")
    missing = sorted(set(expected) - set(arrays))
    if missing:
        raise ValidationError(f"missing parameter names: {missing}")
    tensors = {}
    for name, shape, _ in _param_layout(cfg):
        arr = arrays[name]
        if arr.shape != shape:
            raise ValidationError(
                f"parameter '{name}' has shape {arr.shape}, expected {shape}"
            )
        tensors[name] = parameter(arr)
    return ModelParams(tensors), cfg
