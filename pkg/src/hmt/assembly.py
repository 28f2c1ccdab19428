"""Turning a feature bundle into model-ready token sequences.

Two sequences come out of here:

* the section-level sequence ``[CLS_p; sections(+pos); images]``
* the sentence-level sequence ``[CLS_s; fused sentences(+pos); images]``

Sentence features are pooled out of the word features with the sentence
mask (column-wise max over each sentence's slots, then an affine map), and
each sentence is pre-fused with the max-pooled image summary. Positional
embeddings are learned and added to section/sentence rows only; image rows
stay position-free because document images are unordered.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bundles import DocFeatureBundle
from .errors import EmptyPoolError, ShapeError, ValidationError
from .tensor import Graph, Tensor


@dataclass
class AssembledDoc:
    section_seq: Tensor       # (l+m+1, d)
    sentence_seq: Tensor      # (n+m+1, d)
    sentence_feats: Tensor    # (n, d) raw pooled sentences, pre-position
    membership: np.ndarray    # (n, l) binary sentence->section matrix


def stg(g: Graph, word_feats: Tensor, sentence_mask: np.ndarray,
        weight: Tensor, bias: Tensor) -> Tensor:
    """Sentence features: per-id masked column max-pool, then an affine map."""
    mask = np.asarray(sentence_mask)
    if mask.ndim != 1 or mask.shape[0] != word_feats.shape[0]:
        raise ShapeError(
            f"sentence mask {mask.shape} != word rows ({word_feats.shape[0]},)"
        )
    n = int(mask.max(initial=0))
    if n < 1:
        raise ValidationError("sentence mask names no sentences")
    try:
        pooled = g.group_max_pool(word_feats, mask, n)
    except EmptyPoolError as exc:
        raise ValidationError(str(exc)) from exc
    return g.affine(pooled, weight, bias)


def project_images(g: Graph, raw: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Row-wise affine map of image embeddings into the shared feature space."""
    return g.affine(raw, weight, bias)


def fuse_sentences(g: Graph, sentences: Tensor, images: Tensor,
                   weight: Tensor, bias: Tensor) -> Tensor:
    """Concatenate each sentence with the pooled image summary and project.

    ``weight`` is (2d, d): the first d input channels see the sentence, the
    last d see the column-max image feature.
    """
    n, d = sentences.shape
    pooled = g.reshape(g.col_max_pool(images), (1, d))
    tiled = g.concat_rows([pooled] * n)
    return g.affine(g.concat_cols([sentences, tiled]), weight, bias)


def build_membership(sentence_mask: np.ndarray, sections: int,
                     section_len: int) -> np.ndarray:
    """Binary (n, l) sentence->section matrix.

    A sentence split by section chunking goes to the section holding the
    majority of its slots; ties go to the earlier section.
    """
    mask = np.asarray(sentence_mask).reshape(sections, section_len)
    n = int(mask.max(initial=0))
    member = np.zeros((n, sections), dtype=np.float64)
    for sid in range(1, n + 1):
        counts = (mask == sid).sum(axis=1)
        member[sid - 1, int(np.argmax(counts))] = 1.0  # argmax: earliest max
    return member


def build_sequences(g: Graph, bundle: DocFeatureBundle, params) -> AssembledDoc:
    """Assemble both model input sequences for one document."""
    l, n, m = bundle.section_count, bundle.sentence_count, bundle.image_count
    sections = Tensor(bundle.section_feats)
    words = Tensor(bundle.word_feats)
    raw_images = Tensor(bundle.image_feats)

    sent = stg(g, words, bundle.sentence_mask, params["stg.weight"], params["stg.bias"])
    images = project_images(g, raw_images, params["img_proj.weight"],
                            params["img_proj.bias"])
    fused = fuse_sentences(g, sent, images, params["sent_fusion.weight"],
                           params["sent_fusion.bias"])

    pos_p = params["pos.section"]
    pos_s = params["pos.sentence"]
    if l > pos_p.shape[0] or n > pos_s.shape[0]:
        raise ValidationError(
            f"doc '{bundle.doc_id}' exceeds positional tables "
            f"(l={l}>{pos_p.shape[0]} or n={n}>{pos_s.shape[0]})"
        )
    section_rows = g.add(sections, g.slice_rows(pos_p, 0, l))
    sentence_rows = g.add(fused, g.slice_rows(pos_s, 0, n))

    section_seq = g.concat_rows([params["cls.section"], section_rows, images])
    sentence_seq = g.concat_rows([params["cls.sentence"], sentence_rows, images])
    membership = build_membership(bundle.sentence_mask, l, bundle.section_len)
    return AssembledDoc(section_seq=section_seq, sentence_seq=sentence_seq,
                        sentence_feats=sent, membership=membership)
