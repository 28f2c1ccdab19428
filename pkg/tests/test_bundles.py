"""Feature-bundle container: round trips, validation, synthetic fixtures."""

import hashlib
import io

import numpy as np
import pytest

import hmt.bundles as bundles
from hmt.bundles import (
    DatasetSplit,
    DocFeatureBundle,
    SynthSpec,
    read_hmtb,
    synth_generate,
    validate_bundle,
    write_hmtb,
)
from hmt.errors import ConfigError, FormatError, TruncationError, ValidationError


def tiny_bundle(**overrides):
    fields = dict(
        doc_id="doc", label=0, section_count=1, section_len=4, dim=8,
        sentence_count=2, image_count=1,
        section_feats=np.ones((1, 8)),
        word_feats=np.arange(32.0).reshape(4, 8),
        sentence_mask=np.array([1, 1, 2, 0]),
        image_feats=np.ones((1, 8)),
    )
    fields.update(overrides)
    return DocFeatureBundle(**fields)


# -- serialization --------------------------------------------------------------


def test_empty_split_is_sixteen_bytes():
    sink = io.BytesIO()
    n = write_hmtb(DatasetSplit(docs=[], num_classes=2), sink)
    assert n == 16
    assert len(sink.getvalue()) == 16
    assert sink.getvalue()[:4] == b"HMTB"


def test_single_doc_round_trip_is_bit_exact():
    split = DatasetSplit(docs=[tiny_bundle()], num_classes=1)
    sink = io.BytesIO()
    write_hmtb(split, sink)
    back = read_hmtb(sink.getvalue())
    a, b = split.docs[0], back.docs[0]
    assert a.doc_id == b.doc_id and a.label == b.label
    for field in ("section_feats", "word_feats", "image_feats"):
        assert np.array_equal(getattr(a, field), getattr(b, field))
    assert np.array_equal(a.sentence_mask, b.sentence_mask)


def test_generated_split_round_trips_with_equal_hash():
    split = synth_generate(SynthSpec(docs=50, num_classes=3, seed=5))
    first = io.BytesIO()
    write_hmtb(split, first)
    reread = read_hmtb(first.getvalue())
    second = io.BytesIO()
    write_hmtb(reread, second)
    h1 = hashlib.sha256(first.getvalue()).hexdigest()
    h2 = hashlib.sha256(second.getvalue()).hexdigest()
    assert h1 == h2


def test_bad_magic_is_a_format_error():
    with pytest.raises(FormatError):
        read_hmtb(b"XXXX" + b"\x00" * 20)


def test_truncated_stream_reports_offset():
    sink = io.BytesIO()
    write_hmtb(DatasetSplit(docs=[tiny_bundle()], num_classes=1), sink)
    blob = sink.getvalue()
    with pytest.raises(TruncationError) as exc:
        read_hmtb(blob[:len(blob) - 10])
    assert exc.value.offset <= len(blob) - 10


def test_trailing_garbage_rejected():
    sink = io.BytesIO()
    write_hmtb(DatasetSplit(docs=[tiny_bundle()], num_classes=1), sink)
    with pytest.raises(FormatError):
        read_hmtb(sink.getvalue() + b"\x00")


def test_write_rejects_invalid_bundle_with_doc_id():
    bad = tiny_bundle(sentence_mask=np.array([2, 2, 1, 0]))
    with pytest.raises(ValidationError) as exc:
        write_hmtb(DatasetSplit(docs=[bad], num_classes=1), io.BytesIO())
    assert "doc" in str(exc.value)


# -- validation -----------------------------------------------------------------


def test_validate_accepts_tiny_bundle():
    assert validate_bundle(tiny_bundle()) == []


def test_validate_flags_pad_interior():
    codes = [c for c, _ in validate_bundle(
        tiny_bundle(sentence_mask=np.array([1, 0, 2, 2])))]
    assert "pad-interior" in codes


def test_validate_flags_non_monotone():
    codes = [c for c, _ in validate_bundle(
        tiny_bundle(sentence_mask=np.array([2, 2, 1, 0])))]
    assert "non-monotone" in codes


def test_validate_flags_missing_sentence_and_mismatched_count():
    codes = [c for c, _ in validate_bundle(
        tiny_bundle(sentence_mask=np.array([1, 1, 3, 0]), sentence_count=3))]
    assert "missing-sentence" in codes
    codes = [c for c, _ in validate_bundle(
        tiny_bundle(sentence_mask=np.array([1, 1, 2, 0]), sentence_count=5))]
    assert "n-mismatch" in codes


def test_generator_output_always_validates():
    split = synth_generate(SynthSpec(docs=30, num_classes=4, mode="planted",
                                     seed=9, sections=3, images=2))
    for b in split:
        assert validate_bundle(b) == []


# -- synthetic generator ----------------------------------------------------------


def test_planted_zero_noise_centroids_and_nearest_centroid_rule():
    split = synth_generate(SynthSpec(docs=60, num_classes=2, sigma=0.0, seed=3))
    by_class = {0: [], 1: []}
    for b in split:
        by_class[b.label].append(b.section_feats.mean(axis=0))
    mu0 = np.mean(by_class[0], axis=0)
    mu1 = np.mean(by_class[1], axis=0)
    assert abs(np.linalg.norm(mu0 - mu1) - np.sqrt(2.0)) < 1e-12
    correct = 0
    for b in split:
        feat = b.section_feats.mean(axis=0)
        pred = int(np.linalg.norm(feat - mu1) < np.linalg.norm(feat - mu0))
        correct += pred == b.label
    assert correct == len(split.docs)


def test_xor_text_only_probe_is_chance_level():
    sklearn = pytest.importorskip("sklearn.linear_model")
    split = synth_generate(SynthSpec(docs=1000, num_classes=2, mode="xor",
                                     sigma=0.3, seed=13))
    feats = np.stack([b.section_feats.mean(axis=0) for b in split])
    labels = np.array([b.label for b in split])
    probe = sklearn.LogisticRegression(max_iter=1000)
    probe.fit(feats[:500], labels[:500])
    accuracy = probe.score(feats[500:], labels[500:])
    assert abs(accuracy - 0.5) <= 0.05


def test_same_seed_is_bit_identical():
    spec = SynthSpec(docs=10, num_classes=2, mode="xor", seed=21)
    a, b = synth_generate(spec), synth_generate(spec)
    for da, db in zip(a, b):
        assert da.doc_id == db.doc_id and da.label == db.label
        assert np.array_equal(da.word_feats, db.word_feats)
        assert np.array_equal(da.image_feats, db.image_feats)
        assert np.array_equal(da.sentence_mask, db.sentence_mask)


def test_generator_rejects_bad_specs():
    with pytest.raises(ConfigError):
        synth_generate(SynthSpec(docs=1, num_classes=2, dim=4))
    with pytest.raises(ConfigError):
        synth_generate(SynthSpec(docs=1, num_classes=3, mode="xor"))
    with pytest.raises(ConfigError):
        synth_generate(SynthSpec(docs=1, num_classes=1))


def test_split_rejects_label_outside_class_count():
    with pytest.raises(ValidationError):
        DatasetSplit(docs=[tiny_bundle(label=7)], num_classes=2)


def test_features_are_f32_exact_in_memory():
    b = tiny_bundle(section_feats=np.full((1, 8), 0.1))  # 0.1 is not f32-exact
    assert b.section_feats[0, 0] == np.float64(np.float32(0.1))
