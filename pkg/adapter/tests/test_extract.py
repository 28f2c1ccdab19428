"""Adapter tests: extraction structure, determinism, and primary acceptance.

The package under test writes HMTB files from raw documents; the consumer
(the `hmt` package and its CLI) is treated as an external system reached
through its file format and command line.
"""

import hashlib
import json
import struct
import subprocess
import sys

import numpy as np
import pytest
from PIL import Image

from hmt_adapter import (
    ExtractionJob,
    check_record,
    extract,
    load_labels,
    split_sentences,
)

TRAIN_CONFIG = """
num_classes = 2
d = 32
h = 4
r = 8
l_max = 4
n_max = 12
m_max = 4
windows = 3, full
lr = 1e-3
weight_decay = 0.1
batch = 4
epochs = 1
patience = 5
seed = 0
"""


def make_png(path, color, size=(12, 12)):
    img = Image.new("RGB", size, color)
    img.putpixel((3, 3), (255, 255, 255))
    img.save(path)


TOY_DOCS = {
    "alpha": ("The battery cathode improved. Capacity rose sharply. "
              "Cycling stayed stable over time.", 2, (200, 30, 30)),
    "bravo": ("Graphene sheets align. Conductivity jumps. "
              "Thermal behavior is excellent. Applications multiply fast.",
              1, (30, 200, 30)),
    "charlie": ("Alloy grains refine under heat. Strength follows. "
                "Ductility is retained throughout.", 2, (30, 30, 200)),
    "delta": ("Separator films block dendrites. Safety improves. "
              "Manufacturing cost drops quickly every year.", 1, (200, 200, 30)),
    "echo": ("Composite layers bond well. Stiffness increases. "
             "Weight drops. Fatigue life extends considerably.", 2, (30, 200, 200)),
}


@pytest.fixture()
def toy_corpus(tmp_path):
    corpus = tmp_path / "corpus"
    rows = ["doc_id,label"]
    for name, (text, images, color) in TOY_DOCS.items():
        doc_dir = corpus / name
        doc_dir.mkdir(parents=True)
        (doc_dir / "text.txt").write_text(text, encoding="utf-8")
        for i in range(images):
            make_png(doc_dir / f"fig{i}.png",
                     tuple((c + 40 * i) % 256 for c in color))
        label = "battery" if name in ("alpha", "delta") else "materials"
        rows.append(f"{name},{label}")
    labels = tmp_path / "labels.csv"
    labels.write_text("\n".join(rows) + "\n", encoding="utf-8")
    return corpus, labels


def run_extract(corpus, labels, out, r=8, dim=32):
    job = ExtractionJob(input_dir=str(corpus), output_path=str(out),
                        section_len=r, labels_csv=str(labels), dim=dim,
                        l_max=4, m_max=4)
    return extract(job)


# -- structure -----------------------------------------------------------------


def test_sentence_splitter_is_deterministic_and_reasonable():
    text = "First one. Second here! Third, finally? Trailing bits"
    parts = split_sentences(text)
    assert parts == ["First one.", "Second here!", "Third, finally?",
                     "Trailing bits"]


def test_label_csv_maps_names_to_sorted_indices(tmp_path):
    path = tmp_path / "labels.csv"
    path.write_text("doc_id,label\na,zebra\nb,apple\nc,zebra\n")
    assert load_labels(str(path)) == {"a": 1, "b": 0, "c": 1}
    path.write_text("a,3\nb,0\n")
    assert load_labels(str(path)) == {"a": 3, "b": 0}


def test_two_section_three_sentence_document(tmp_path):
    corpus = tmp_path / "c"
    doc = corpus / "toy"
    doc.mkdir(parents=True)
    # 3 sentences, 13 tokens total; r=8 chunks them into 2 sections
    doc_text = "one two three four five. six seven eight nine ten. " \
               "eleven twelve thirteen."
    (doc / "text.txt").write_text(doc_text, encoding="utf-8")
    make_png(doc / "img.png", (100, 100, 100))
    labels = tmp_path / "labels.csv"
    labels.write_text("toy,0\n")
    out = tmp_path / "toy.hmtb"
    report = run_extract(corpus, labels, out)
    assert report.written == 1

    import hmt
    split = hmt.read_hmtb(str(out))
    bundle = split.docs[0]
    assert bundle.section_count == 2
    assert bundle.sentence_count == 3
    assert bundle.doc_id == "toy::sent-regex1"
    assert hmt.validate_bundle(bundle) == []
    # padding sits at the tail of the last section only
    assert list(bundle.sentence_mask[:13]) == [1] * 5 + [2] * 5 + [3] * 3
    assert list(bundle.sentence_mask[13:]) == [0, 0, 0]


def test_rerun_produces_identical_file_hash(toy_corpus, tmp_path):
    corpus, labels = toy_corpus
    a, b = tmp_path / "a.hmtb", tmp_path / "b.hmtb"
    run_extract(corpus, labels, a)
    run_extract(corpus, labels, b)
    assert hashlib.sha256(a.read_bytes()).hexdigest() == \
        hashlib.sha256(b.read_bytes()).hexdigest()


def test_header_dims_match_encoder_width(toy_corpus, tmp_path):
    corpus, labels = toy_corpus
    out = tmp_path / "dims.hmtb"
    run_extract(corpus, labels, out, dim=24)
    blob = out.read_bytes()
    assert blob[:4] == b"HMTB"
    (count,) = struct.unpack_from("<Q", blob, 8)
    assert count == 5
    offset = 16
    (id_len,) = struct.unpack_from("<I", blob, offset)
    offset += 4 + id_len
    label, l, r, d, n, m = struct.unpack_from("<6I", blob, offset)
    assert d == 24 and r == 8


def test_skip_records_for_empty_and_overlength_documents(tmp_path):
    corpus = tmp_path / "c"
    for name, text in (("empty", "   "),
                       ("runaway", " ".join(f"tok{i}." for i in range(200)))):
        doc = corpus / name
        doc.mkdir(parents=True)
        (doc / "text.txt").write_text(text, encoding="utf-8")
        make_png(doc / "i.png", (5, 5, 5))
    keep = corpus / "keeper"
    keep.mkdir()
    (keep / "text.txt").write_text("short and sweet. truly.", encoding="utf-8")
    make_png(keep / "i.png", (5, 5, 5))
    labels = tmp_path / "labels.csv"
    labels.write_text("empty,0\nrunaway,0\nkeeper,1\n")
    out = tmp_path / "skips.hmtb"
    report = run_extract(corpus, labels, out)
    assert report.written == 1
    reasons = dict(report.skipped)
    assert "empty" in reasons and "empty document" in reasons["empty"]
    assert "runaway" in reasons and "over-length" in reasons["runaway"]


def test_zero_image_document_gets_synthetic_row_and_warning(tmp_path):
    corpus = tmp_path / "c"
    doc = corpus / "noimg"
    doc.mkdir(parents=True)
    (doc / "text.txt").write_text("words fill sections. more words here.",
                                  encoding="utf-8")
    labels = tmp_path / "labels.csv"
    labels.write_text("noimg,0\n")
    out = tmp_path / "noimg.hmtb"
    report = run_extract(corpus, labels, out)
    assert any("zero image row" in w for w in report.warnings)
    import hmt
    bundle = hmt.read_hmtb(str(out)).docs[0]
    assert bundle.image_count == 1
    assert np.all(bundle.image_feats == 0.0)


def test_check_record_catches_bad_masks(toy_corpus, tmp_path):
    corpus, labels = toy_corpus
    out = tmp_path / "x.hmtb"
    run_extract(corpus, labels, out)
    import hmt
    bundle = hmt.read_hmtb(str(out)).docs[0]
    from hmt_adapter import BundleRecord
    rec = BundleRecord(
        doc_id="bad", label=0, sections=bundle.section_count,
        section_len=bundle.section_len, dim=bundle.dim,
        sentence_count=bundle.sentence_count, image_count=bundle.image_count,
        section_feats=bundle.section_feats, word_feats=bundle.word_feats,
        sentence_mask=bundle.sentence_mask[::-1].copy(),
        image_feats=bundle.image_feats,
    )
    assert check_record(rec)


# -- acceptance: the primary consumes adapter output ----------------------------


def test_primary_accepts_adapter_output_and_trains_one_epoch(toy_corpus,
                                                             tmp_path):
    corpus, labels = toy_corpus
    data = tmp_path / "data"
    data.mkdir()
    run_extract(corpus, labels, data / "train.hmtb")
    run_extract(corpus, labels, data / "val.hmtb")

    # the primary validates every bundle on read: zero violations
    import hmt
    split = hmt.read_hmtb(str(data / "train.hmtb"))
    assert len(split.docs) == 5
    for bundle in split:
        assert hmt.validate_bundle(bundle) == []

    cfg = tmp_path / "cfg.txt"
    cfg.write_text(TRAIN_CONFIG, encoding="utf-8")
    proc = subprocess.run(
        [sys.executable, "-m", "hmt.cli", "train", "--data", str(data),
         "--config", str(cfg), "--out", str(tmp_path / "model.hmtp"),
         "--log", str(tmp_path / "log.jsonl")],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    summary = json.loads(proc.stdout.strip().splitlines()[-1])
    assert summary["epochs"] == 1
    record = json.loads((tmp_path / "log.jsonl").read_text().splitlines()[0])
    assert np.isfinite(record["train_loss"])
    print("[PASS] adapter output accepted by the primary: "
          f"one epoch, loss {record['train_loss']:.4f}")


def test_cli_entrypoint(toy_corpus, tmp_path):
    corpus, labels = toy_corpus
    out = tmp_path / "cli.hmtb"
    proc = subprocess.run(
        [sys.executable, "-m", "hmt_adapter.cli", "--in", str(corpus),
         "--out", str(out), "--section-len", "8", "--labels", str(labels)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    summary = json.loads(proc.stdout.strip().splitlines()[-1])
    assert summary["written"] == 5
    assert out.exists()


def _hf_weights_available():
    try:
        from transformers import AutoModel
        AutoModel.from_pretrained("bert-base-uncased", local_files_only=True)
        return True
    except Exception:
        return False


@pytest.mark.skipif(not _hf_weights_available(),
                    reason="no local pretrained weights")
def test_pretrained_text_encoder_path(toy_corpus, tmp_path):
    corpus, labels = toy_corpus
    out = tmp_path / "hf.hmtb"
    job = ExtractionJob(input_dir=str(corpus), output_path=str(out),
                        section_len=8, labels_csv=str(labels), dim=32,
                        l_max=4, m_max=4, text_encoder="hf:bert-base-uncased")
    report = extract(job)
    assert report.written == 5
