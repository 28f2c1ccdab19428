"""Feature bundles: the HMTB v1 container, validation, and synthetic fixtures.

One bundle holds everything the model needs for a single document: section
features, word features with a sentence mask, image features, and a label.
Features are stored as little-endian f32 on disk and widened to f64 in
memory; bundle constructors funnel every array through f32 so that
write -> read round-trips are bit-exact.

HMTB v1 layout (little-endian, no padding):

    magic "HMTB" | version u32=1 | doc_count u64
    per document:
        id_len u32 | id bytes (UTF-8) | label u32
        l u32 | r u32 | d u32 | n u32 | m u32
        section feats   l*d   f32
        word feats      l*r*d f32
        sentence mask   l*r   u32   (0 = padding, 1..n = sentence id)
        image feats     m*d   f32
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from typing import BinaryIO, Union

import numpy as np

from .errors import ConfigError, FormatError, TruncationError, ValidationError

MAGIC = b"HMTB"
VERSION = 1


def _f32_exact(arr) -> np.ndarray:
    """Round-trip through float32 so disk and memory agree bit-for-bit."""
    return np.asarray(arr, dtype=np.float32).astype(np.float64)


@dataclass
class DocFeatureBundle:
    """Pre-extracted features for one document."""

    doc_id: str
    label: int
    section_count: int      # l
    section_len: int        # r
    dim: int                # d
    sentence_count: int     # n
    image_count: int        # m
    section_feats: np.ndarray   # (l, d)
    word_feats: np.ndarray      # (l*r, d)
    sentence_mask: np.ndarray   # (l*r,) uint32
    image_feats: np.ndarray     # (m, d)

    def __post_init__(self):
        self.section_feats = _f32_exact(self.section_feats)
        self.word_feats = _f32_exact(self.word_feats)
        self.image_feats = _f32_exact(self.image_feats)
        self.sentence_mask = np.asarray(self.sentence_mask, dtype=np.uint32)


@dataclass
class DatasetSplit:
    """An ordered collection of bundles sharing dim and section length."""

    docs: list
    tag: str = "train"
    num_classes: int = 0

    def __post_init__(self):
        if self.docs:
            d0, r0 = self.docs[0].dim, self.docs[0].section_len
            for b in self.docs:
                if b.dim != d0 or b.section_len != r0:
                    raise ValidationError(
                        f"doc '{b.doc_id}' has (d={b.dim}, r={b.section_len}), "
                        f"split requires (d={d0}, r={r0})"
                    )
            if self.num_classes <= 0:
                self.num_classes = max(b.label for b in self.docs) + 1
            for b in self.docs:
                if b.label >= self.num_classes:
                    raise ValidationError(
                        f"doc '{b.doc_id}' label {b.label} >= {self.num_classes}"
                    )

    def __len__(self):
        return len(self.docs)

    def __iter__(self):
        return iter(self.docs)


def validate_bundle(b: DocFeatureBundle) -> list[tuple[str, str]]:
    """Return every violated invariant as (code, detail); empty means ok."""
    out = []
    l, r, d, n, m = (b.section_count, b.section_len, b.dim,
                     b.sentence_count, b.image_count)
    if l < 1:
        out.append(("l-zero", f"section count {l} < 1"))
    if m < 1:
        out.append(("m-zero", f"image count {m} < 1"))
    if b.section_feats.shape != (l, d):
        out.append(("shape", f"section feats {b.section_feats.shape} != {(l, d)}"))
    if b.word_feats.shape != (l * r, d):
        out.append(("shape", f"word feats {b.word_feats.shape} != {(l * r, d)}"))
    if b.image_feats.shape != (m, d):
        out.append(("shape", f"image feats {b.image_feats.shape} != {(m, d)}"))
    if b.sentence_mask.shape != (l * r,):
        out.append(("shape", f"sentence mask {b.sentence_mask.shape} != ({l * r},)"))
        return out  # mask-dependent checks are meaningless now
    mask = b.sentence_mask.astype(np.int64)
    if n < 1:
        out.append(("no-sentences", f"sentence count {n} < 1"))
    if mask.size and mask.max(initial=0) != n:
        out.append(("n-mismatch", f"max sentence id {mask.max(initial=0)} != n={n}"))
    if (mask > n).any():
        bad = int(np.flatnonzero(mask > n)[0])
        out.append(("s-mask-range", f"slot {bad} holds id {mask[bad]} > n={n}"))
    present = set(mask[mask > 0].tolist())
    missing = [i for i in range(1, n + 1) if i not in present]
    if missing:
        out.append(("missing-sentence", f"sentence ids {missing} never occur"))
    nz = mask[mask > 0]
    if nz.size and (np.diff(nz) < 0).any():
        out.append(("non-monotone", "nonzero sentence ids decrease along the mask"))
    for sec in range(l):
        span = mask[sec * r:(sec + 1) * r]
        zeros = np.flatnonzero(span == 0)
        if zeros.size and (span[zeros[0]:] != 0).any():
            out.append(("pad-interior",
                        f"section {sec} has a sentence id after padding"))
    for name, arr in (("section", b.section_feats), ("word", b.word_feats),
                      ("image", b.image_feats)):
        if arr.size and not np.all(np.isfinite(arr)):
            out.append(("non-finite", f"{name} features contain NaN/Inf"))
    return out


# -- binary io ---------------------------------------------------------------


class _Reader:
    def __init__(self, stream: BinaryIO):
        self.stream = stream
        self.offset = 0

    def take(self, count: int, what: str) -> bytes:
        buf = self.stream.read(count)
        if len(buf) != count:
            raise TruncationError(
                f"stream ended reading {what} ({len(buf)}/{count} bytes)",
                self.offset + len(buf),
            )
        self.offset += count
        return buf

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what: str) -> int:
        return struct.unpack("<Q", self.take(8, what))[0]

    def f32_array(self, count: int, what: str) -> np.ndarray:
        raw = self.take(4 * count, what)
        return np.frombuffer(raw, dtype="<f4").astype(np.float64)

    def u32_array(self, count: int, what: str) -> np.ndarray:
        raw = self.take(4 * count, what)
        return np.frombuffer(raw, dtype="<u4").astype(np.uint32)


def _write_doc(out: BinaryIO, b: DocFeatureBundle) -> int:
    ident = b.doc_id.encode("utf-8")
    head = struct.pack("<I", len(ident)) + ident + struct.pack(
        "<6I", b.label, b.section_count, b.section_len, b.dim,
        b.sentence_count, b.image_count,
    )
    body = (
        b.section_feats.astype("<f4").tobytes()
        + b.word_feats.astype("<f4").tobytes()
        + b.sentence_mask.astype("<u4").tobytes()
        + b.image_feats.astype("<f4").tobytes()
    )
    out.write(head)
    out.write(body)
    return len(head) + len(body)


def write_hmtb(split: DatasetSplit, destination: Union[str, BinaryIO]) -> int:
    """Serialize a split; every bundle is validated first. Returns byte count."""
    for b in split:
        violations = validate_bundle(b)
        if violations:
            code, detail = violations[0]
            raise ValidationError(f"doc '{b.doc_id}': [{code}] {detail}")
    if isinstance(destination, str):
        with open(destination, "wb") as fh:
            return write_hmtb(split, fh)
    n = destination.write(MAGIC + struct.pack("<I", VERSION)
                          + struct.pack("<Q", len(split.docs)))
    for b in split:
        n += _write_doc(destination, b)
    return n


def read_hmtb(source: Union[str, bytes, BinaryIO], tag: str = "unknown") -> DatasetSplit:
    """Parse and validate a split; trailing bytes after the last doc are rejected."""
    if isinstance(source, str):
        with open(source, "rb") as fh:
            return read_hmtb(fh, tag=tag)
    if isinstance(source, bytes):
        return read_hmtb(io.BytesIO(source), tag=tag)
    rd = _Reader(source)
    magic = rd.take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version = rd.u32("version")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    count = rd.u64("doc count")
    docs = []
    for i in range(count):
        id_len = rd.u32("id length")
        ident = rd.take(id_len, "doc id").decode("utf-8")
        label = rd.u32("label")
        l = rd.u32("section count")
        r = rd.u32("section length")
        d = rd.u32("feature dim")
        n = rd.u32("sentence count")
        m = rd.u32("image count")
        b = DocFeatureBundle(
            doc_id=ident, label=label, section_count=l, section_len=r,
            dim=d, sentence_count=n, image_count=m,
            section_feats=rd.f32_array(l * d, f"doc {ident} sections").reshape(l, d),
            word_feats=rd.f32_array(l * r * d, f"doc {ident} words").reshape(l * r, d),
            sentence_mask=rd.u32_array(l * r, f"doc {ident} mask"),
            image_feats=rd.f32_array(m * d, f"doc {ident} images").reshape(m, d),
        )
        violations = validate_bundle(b)
        if violations:
            code, detail = violations[0]
            raise ValidationError(f"doc '{ident}': [{code}] {detail}")
        docs.append(b)
    if source.read(1):
        raise FormatError(f"trailing bytes after {count} documents")
    return DatasetSplit(docs=docs, tag=tag)


# -- synthetic fixtures -------------------------------------------------------


@dataclass
class SynthSpec:
    """Geometry and signal parameters for generated splits.

    ``planted`` adds a class-specific unit direction to all features;
    ``xor`` hides one latent bit in the text features and another in the
    image features, labeling by their XOR, so neither modality alone can
    beat chance in expectation.
    """

    docs: int
    num_classes: int
    dim: int = 32
    sections: int = 2
    section_len: int = 16
    images: int = 3
    sigma: float = 0.3
    mode: str = "planted"
    seed: int = 0


def _cut_sentences(rng, sections: int, section_len: int,
                   max_per_section: int = 5) -> np.ndarray:
    """Global 1-based sentence ids per word slot; 0-padding at section tails."""
    mask = np.zeros(sections * section_len, dtype=np.uint32)
    next_id = 1
    for sec in range(sections):
        pad = int(rng.integers(0, max(1, section_len // 4) + 1))
        live = section_len - pad
        k = int(rng.integers(2, max_per_section + 1))
        k = min(k, live)
        # k-1 interior cut points over `live` slots, each sentence >= 1 token
        cuts = np.sort(rng.choice(np.arange(1, live), size=k - 1, replace=False)) \
            if k > 1 else np.array([], dtype=int)
        bounds = np.concatenate(([0], cuts, [live]))
        base = sec * section_len
        for s in range(k):
            mask[base + bounds[s]:base + bounds[s + 1]] = next_id
            next_id += 1
    return mask


def synth_generate(spec: SynthSpec, tag: str = "train") -> DatasetSplit:
    """Deterministic planted-signal generator standing in for pretrained encoders."""
    if spec.dim < 8:
        raise ConfigError(f"dim {spec.dim} < 8")
    if spec.num_classes < 2:
        raise ConfigError(f"num_classes {spec.num_classes} < 2")
    if spec.mode not in ("planted", "xor"):
        raise ConfigError(f"unknown mode '{spec.mode}'")
    if spec.mode == "xor" and spec.num_classes != 2:
        raise ConfigError("xor mode requires exactly 2 classes")
    if spec.docs < 1 or spec.sections < 1 or spec.images < 1:
        raise ConfigError("docs, sections, and images must all be >= 1")
    if spec.section_len < 5:
        raise ConfigError(f"section_len {spec.section_len} too small to cut sentences")

    rng = np.random.default_rng([spec.seed, 0x484D54])
    d = spec.dim
    # class directions: distinct standard basis vectors (unit norm)
    if spec.mode == "planted" and spec.num_classes > d:
        raise ConfigError(f"num_classes {spec.num_classes} > dim {d}")
    directions = np.eye(d)[:spec.num_classes]
    text_axis = np.eye(d)[0]
    image_axis = np.eye(d)[1]

    docs = []
    for idx in range(spec.docs):
        l, r, m = spec.sections, spec.section_len, spec.images
        if spec.mode == "planted":
            label = int(rng.integers(0, spec.num_classes))
            text_shift = directions[label]
            image_shift = directions[label]
        else:
            a = int(rng.integers(0, 2))
            b = int(rng.integers(0, 2))
            label = a ^ b
            text_shift = (2 * a - 1) * text_axis
            image_shift = (2 * b - 1) * image_axis
        sections = text_shift + spec.sigma * rng.standard_normal((l, d))
        words = text_shift + spec.sigma * rng.standard_normal((l * r, d))
        images = image_shift + spec.sigma * rng.standard_normal((m, d))
        mask = _cut_sentences(rng, l, r)
        docs.append(DocFeatureBundle(
            doc_id=f"{spec.mode}-{spec.seed}-{idx:05d}",
            label=label,
            section_count=l, section_len=r, dim=d,
            sentence_count=int(mask.max()), image_count=m,
            section_feats=sections, word_feats=words,
            sentence_mask=mask, image_feats=images,
        ))
    return DatasetSplit(docs=docs, tag=tag, num_classes=spec.num_classes)
