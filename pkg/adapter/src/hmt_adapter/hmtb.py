"""Standalone HMTB v1 writer with pre-write validation.

Implements the container exactly as the consumer documents it:

    magic "HMTB" | version u32=1 | doc_count u64
    per document:
        id_len u32 | id UTF-8 | label u32 | l u32 | r u32 | d u32 | n u32 | m u32
        section feats l*d f32 | word feats l*r*d f32
        sentence mask l*r u32 | image feats m*d f32

Little-endian throughout, no padding bytes. Sentence masks use 0 for
padding and 1..n for sentence ids; nonzero ids are nondecreasing, every id
in 1..n occurs, and within a section padding only trails.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"HMTB"
VERSION = 1


@dataclass
class BundleRecord:
    doc_id: str
    label: int
    sections: int
    section_len: int
    dim: int
    sentence_count: int
    image_count: int
    section_feats: np.ndarray
    word_feats: np.ndarray
    sentence_mask: np.ndarray
    image_feats: np.ndarray


def check_record(rec: BundleRecord) -> list[str]:
    """Every violated container rule, as human-readable strings."""
    problems = []
    l, r, d, n, m = (rec.sections, rec.section_len, rec.dim,
                     rec.sentence_count, rec.image_count)
    if l < 1:
        problems.append("section count < 1")
    if m < 1:
        problems.append("image count < 1")
    if n < 1:
        problems.append("sentence count < 1")
    if rec.section_feats.shape != (l, d):
        problems.append(f"section feats shape {rec.section_feats.shape}")
    if rec.word_feats.shape != (l * r, d):
        problems.append(f"word feats shape {rec.word_feats.shape}")
    if rec.image_feats.shape != (m, d):
        problems.append(f"image feats shape {rec.image_feats.shape}")
    if rec.sentence_mask.shape != (l * r,):
        problems.append(f"sentence mask shape {rec.sentence_mask.shape}")
        return problems
    mask = rec.sentence_mask.astype(np.int64)
    if mask.max(initial=0) != n:
        problems.append(f"max sentence id {mask.max(initial=0)} != n={n}")
    seen = set(mask[mask > 0].tolist())
    missing = [i for i in range(1, n + 1) if i not in seen]
    if missing:
        problems.append(f"missing sentence ids {missing}")
    nz = mask[mask > 0]
    if nz.size and (np.diff(nz) < 0).any():
        problems.append("sentence ids decrease")
    for sec in range(l):
        span = mask[sec * r:(sec + 1) * r]
        zeros = np.flatnonzero(span == 0)
        if zeros.size and (span[zeros[0]:] != 0).any():
            problems.append(f"section {sec}: sentence id after padding")
    for name, arr in (("section", rec.section_feats),
                      ("word", rec.word_feats),
                      ("image", rec.image_feats)):
        if not np.all(np.isfinite(arr)):
            problems.append(f"non-finite {name} features")
    return problems


def write_bundles(records: list[BundleRecord], path: str) -> int:
    """Validates and serializes; returns the byte count written."""
    for rec in records:
        problems = check_record(rec)
        if problems:
            raise ValueError(f"doc '{rec.doc_id}': " + "; ".join(problems))
    with open(path, "wb") as out:
        written = out.write(MAGIC + struct.pack("<I", VERSION)
                            + struct.pack("<Q", len(records)))
        for rec in records:
            ident = rec.doc_id.encode("utf-8")
            head = struct.pack("<I", len(ident)) + ident + struct.pack(
                "<6I", rec.label, rec.sections, rec.section_len, rec.dim,
                rec.sentence_count, rec.image_count)
            body = (rec.section_feats.astype("<f4").tobytes()
                    + rec.word_feats.astype("<f4").tobytes()
                    + rec.sentence_mask.astype("<u4").tobytes()
                    + rec.image_feats.astype("<f4").tobytes())
            out.write(head)
            out.write(body)
            written += len(head) + len(body)
    return written
