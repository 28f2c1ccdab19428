"""Document corpus -> HMTB bundles.

A corpus directory holds one subdirectory per document: a ``text.txt`` plus
any number of embedded images (png/jpg/jpeg/bmp/gif, taken in sorted name
order). Labels come from a CSV of ``doc_id,label`` rows; string labels are
mapped to 0-based indices in sorted order.

Text is whitespace-tokenized, sentences split on [.!?] boundaries by a
fixed regex (recorded in each doc_id as a "::sent-regex1" suffix), and the
token stream is chunked into non-overlapping sections of exactly r tokens;
the final section is padded with zero word vectors and mask value 0.
Documents that are empty or exceed the section cap are skipped with a
recorded reason; image lists are truncated to the image cap, and a document
with no images gets one synthetic all-zero image row.
"""

from __future__ import annotations

import csv
import os
import re
from dataclasses import dataclass, field

import numpy as np

from .encoders import get_image_encoder, get_text_encoder
from .hmtb import BundleRecord, write_bundles

SPLITTER_TAG = "sent-regex1"
_SENTENCE_RE = re.compile(r"[^.!?]+[.!?]*", re.S)
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".gif")


@dataclass
class ExtractionJob:
    input_dir: str
    output_path: str
    section_len: int
    labels_csv: str
    dim: int = 32
    l_max: int = 8
    m_max: int = 9
    text_encoder: str = "hashed"
    image_encoder: str = "hashed"


@dataclass
class ExtractionReport:
    written: int = 0
    bytes_written: int = 0
    skipped: list = field(default_factory=list)   # (doc_id, reason)
    warnings: list = field(default_factory=list)
    label_map: dict = field(default_factory=dict)


def split_sentences(text: str) -> list[str]:
    return [s.strip() for s in _SENTENCE_RE.findall(text) if s.strip()]


def tokenize(sentence: str) -> list[str]:
    return sentence.split()


def load_labels(path: str) -> dict[str, int]:
    """doc_id -> class index; string labels map to sorted-order indices."""
    raw = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().lower() in ("doc_id", "doc", "id"):
                continue
            raw[row[0].strip()] = row[1].strip()
    values = set(raw.values())
    if all(v.lstrip("-").isdigit() for v in values):
        return {k: int(v) for k, v in raw.items()}
    order = {name: idx for idx, name in enumerate(sorted(values))}
    return {k: order[v] for k, v in raw.items()}


def _token_stream(text: str):
    """(token, 1-based global sentence id) pairs in document order."""
    out = []
    for sid, sentence in enumerate(split_sentences(text), start=1):
        for token in tokenize(sentence):
            out.append((token, sid))
    return out


def build_document(name: str, text: str, image_paths: list[str],
                   label: int, job: ExtractionJob, text_enc, image_enc,
                   report: ExtractionReport):
    """One BundleRecord, or None if the document must be skipped."""
    stream = _token_stream(text)
    if not stream:
        report.skipped.append((name, "empty document"))
        return None
    r, d = job.section_len, job.dim
    sections = [stream[i:i + r] for i in range(0, len(stream), r)]
    if len(sections) > job.l_max:
        report.skipped.append(
            (name, f"over-length: {len(sections)} sections > cap {job.l_max}"))
        return None

    section_rows = []
    word_rows = []
    mask = []
    for chunk in sections:
        tokens = [t for t, _ in chunk]
        cls_vec, words = text_enc.encode_section(tokens)
        if len(chunk) < r:  # trailing section: zero-pad words, 0-mask slots
            pad = np.zeros((r - len(chunk), d))
            words = np.concatenate([words, pad])
        section_rows.append(cls_vec)
        word_rows.append(words)
        mask.extend([sid for _, sid in chunk] + [0] * (r - len(chunk)))

    images = image_paths[:job.m_max]
    if len(image_paths) > job.m_max:
        report.warnings.append(
            f"{name}: kept {job.m_max} of {len(image_paths)} images")
    if images:
        image_rows = np.stack([image_enc.encode_image(p) for p in images])
    else:
        report.warnings.append(f"{name}: no images, wrote a zero image row")
        image_rows = np.zeros((1, d))

    # sentence ids are contiguous 1..n because the whole stream is kept
    sentence_count = max(sid for _, sid in stream)
    return BundleRecord(
        doc_id=f"{name}::{SPLITTER_TAG}",
        label=label,
        sections=len(sections),
        section_len=r,
        dim=d,
        sentence_count=sentence_count,
        image_count=image_rows.shape[0],
        section_feats=np.stack(section_rows),
        word_feats=np.concatenate(word_rows),
        sentence_mask=np.asarray(mask, dtype=np.uint32),
        image_feats=image_rows,
    )


def discover_documents(input_dir: str):
    """Sorted (name, text path, image paths) triples for each doc directory."""
    docs = []
    for name in sorted(os.listdir(input_dir)):
        doc_dir = os.path.join(input_dir, name)
        if not os.path.isdir(doc_dir):
            continue
        text_path = os.path.join(doc_dir, "text.txt")
        if not os.path.exists(text_path):
            continue
        images = sorted(
            os.path.join(doc_dir, f) for f in os.listdir(doc_dir)
            if f.lower().endswith(IMAGE_SUFFIXES)
        )
        docs.append((name, text_path, images))
    return docs


def extract(job: ExtractionJob) -> ExtractionReport:
    report = ExtractionReport()
    labels = load_labels(job.labels_csv)
    report.label_map = labels
    text_enc = get_text_encoder(job.text_encoder, job.dim)
    image_enc = get_image_encoder(job.image_encoder, job.dim)

    records = []
    for name, text_path, images in discover_documents(job.input_dir):
        if name not in labels:
            report.skipped.append((name, "no label in CSV"))
            continue
        with open(text_path, "r", encoding="utf-8") as fh:
            text = fh.read()
        record = build_document(name, text, images, labels[name], job,
                                text_enc, image_enc, report)
        if record is not None:
            records.append(record)
    if not records:
        raise ValueError("no documents survived extraction")
    report.written = len(records)
    report.bytes_written = write_bundles(records, job.output_path)
    return report
