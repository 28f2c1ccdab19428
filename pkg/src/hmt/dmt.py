"""Dynamic mask transfer: section-image attention -> sentence-image boosts.

Pipeline, per attention head:

1. cut the section->image and image->section blocks out of the section-level
   attention matrix;
2. per section, renormalize the image scores and keep the smallest set of
   images whose cumulative mass exceeds the threshold (ties broken toward
   lower image index);
3. drop sentences whose pooled feature disagrees with their section
   (cosine <= 0), zeroing their membership row;
4. multiply membership into the section-image selections to get
   sentence-image masks, and assemble the full (n+m+1)^2 boost matrix with
   zeros everywhere except the two cross-modal blocks.

Everything here is a constant with respect to differentiation: selection is
discrete routing, so no gradient flows through it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .assembly import AssembledDoc, build_membership  # noqa: F401  (re-export)
from .errors import ConfigError, ShapeError
from .mmt import MmtOutput

__all__ = [
    "TransferMasks", "extract_cross_blocks", "topk_select", "build_membership",
    "sparsify_transfer", "compose_masks", "dmt_pipeline", "masks_to_json",
]


@dataclass
class TransferMasks:
    image_pick: np.ndarray       # (h, l, m) binary: images kept per section
    section_pick: np.ndarray     # (h, m, l) binary: sections kept per image
    sentence_keep: np.ndarray    # (n,) binary cosine filter
    membership_kept: np.ndarray  # (n, l) filtered sentence->section matrix
    sent_image: np.ndarray       # (h, n, m)
    image_sent: np.ndarray       # (h, m, n)
    boost: np.ndarray            # (h, n+m+1, n+m+1) assembled mask


def extract_cross_blocks(attention: np.ndarray, sections: int, images: int):
    """Cut (h, l, m) and (h, m, l) cross-modal blocks out of full attention."""
    h, t, t2 = attention.shape
    if t != t2 or t != sections + images + 1:
        raise ShapeError(
            f"attention {attention.shape} inconsistent with "
            f"l={sections}, m={images}"
        )
    sec = slice(1, 1 + sections)
    img = slice(1 + sections, 1 + sections + images)
    return attention[:, sec, img].copy(), attention[:, img, sec].copy()


def topk_select(scores: np.ndarray, threshold: float) -> np.ndarray:
    """Minimal per-row prefix of softmax mass strictly above ``threshold``.

    Rows are renormalized with a softmax; candidates are taken in order of
    decreasing probability (ascending index on ties) until the cumulative
    mass exceeds the threshold.
    """
    if not 0.0 < threshold < 1.0:
        raise ConfigError(f"threshold must be in (0, 1), got {threshold}")
    scores = np.asarray(scores, dtype=np.float64)
    rows, m = scores.shape
    if m < 1:
        raise ShapeError("topk_select needs at least one column")
    picked = np.zeros_like(scores)
    for i in range(rows):
        z = scores[i] - scores[i].max()
        p = np.exp(z)
        p /= p.sum()
        order = np.argsort(-p, kind="stable")  # stable: ties keep low index
        csum = np.cumsum(p[order])
        k = int(np.argmax(csum > threshold)) + 1 if (csum > threshold).any() else m
        picked[i, order[:k]] = 1.0
    return picked


def sparsify_transfer(sentence_feats: np.ndarray, section_feats: np.ndarray,
                      membership: np.ndarray):
    """Cosine filter between each sentence and its own section.

    Returns (keep flags (n,), filtered membership (n, l)). Zero-norm vectors
    count as cosine 0 and are dropped; the test is strictly > 0.
    """
    sentence_feats = np.asarray(sentence_feats, dtype=np.float64)
    section_feats = np.asarray(section_feats, dtype=np.float64)
    membership = np.asarray(membership, dtype=np.float64)
    own_section = membership @ section_feats          # (n, d)
    dots = (sentence_feats * own_section).sum(axis=1)
    norms = np.linalg.norm(sentence_feats, axis=1) * \
        np.linalg.norm(own_section, axis=1)
    cos = np.divide(dots, norms, out=np.zeros_like(dots), where=norms > 0)
    keep = (cos > 0).astype(np.float64)
    return keep, keep[:, None] * membership


def compose_masks(membership_kept: np.ndarray, image_pick: np.ndarray,
                  section_pick: np.ndarray):
    """Propagate section-image picks to sentence-image pairs, then assemble.

    Entries stay binary because each filtered membership row is one-hot or
    zero. The assembled matrix is zero on the CLS row/column and inside each
    modality; only the two cross-modal blocks carry the transfer.
    """
    h, l, m = image_pick.shape
    n = membership_kept.shape[0]
    sent_image = np.einsum("nl,hlm->hnm", membership_kept, image_pick)
    image_sent = np.einsum("hml,ln->hmn", section_pick, membership_kept.T)
    t = n + m + 1
    boost = np.zeros((h, t, t))
    boost[:, 1:n + 1, n + 1:t] = sent_image
    boost[:, n + 1:t, 1:n + 1] = image_sent
    return sent_image, image_sent, boost


def dmt_pipeline(mmt_out: MmtOutput, assembled: AssembledDoc,
                 section_feats: np.ndarray, threshold: float,
                 heads: int) -> TransferMasks:
    """Full transfer: attention blocks -> top-K picks -> cosine filter -> boost."""
    if mmt_out.attention.shape[0] != heads:
        raise ConfigError(
            f"attention has {mmt_out.attention.shape[0]} heads, expected {heads}"
        )
    membership = assembled.membership
    n, l = membership.shape
    t = mmt_out.attention.shape[1]
    m = t - l - 1
    sec_img, img_sec = extract_cross_blocks(mmt_out.attention, l, m)
    image_pick = np.stack([topk_select(sec_img[i], threshold) for i in range(heads)])
    section_pick = np.stack([topk_select(img_sec[i], threshold) for i in range(heads)])
    keep, membership_kept = sparsify_transfer(
        assembled.sentence_feats.value(), section_feats, membership
    )
    sent_image, image_sent, boost = compose_masks(
        membership_kept, image_pick, section_pick
    )
    return TransferMasks(
        image_pick=image_pick, section_pick=section_pick, sentence_keep=keep,
        membership_kept=membership_kept, sent_image=sent_image,
        image_sent=image_sent, boost=boost,
    )


def masks_to_json(doc_id: str, threshold: float, masks: TransferMasks) -> str:
    """Head-major nested-array dump for external inspection."""
    payload = {
        "doc_id": doc_id,
        "threshold": threshold,
        "heads": int(masks.boost.shape[0]),
        "image_pick": masks.image_pick.astype(int).tolist(),
        "section_pick": masks.section_pick.astype(int).tolist(),
        "sentence_keep": masks.sentence_keep.astype(int).tolist(),
        "membership_kept": masks.membership_kept.astype(int).tolist(),
        "sent_image": masks.sent_image.astype(int).tolist(),
        "image_sent": masks.image_sent.astype(int).tolist(),
        "boost": masks.boost.astype(int).tolist(),
    }
    return json.dumps(payload)
