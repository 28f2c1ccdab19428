"""Window masks and the section-to-sentence mask transfer, step by step.

Run:  python demos/03_masks_and_transfer.py
"""

import numpy as np

from hmt.assembly import build_membership, build_sequences
from hmt.bundles import SynthSpec, synth_generate
from hmt.config import TrainConfig
from hmt.dmmt import build_window_mask
from hmt.dmt import dmt_pipeline, topk_select
from hmt.mmt import mmt_forward
from hmt.model import init_params
from hmt.tensor import Graph

# A window mask limits sentence-to-sentence attention to a band while the
# CLS position and all image positions stay globally connected.
mask = build_window_mask(n=6, m=2, w=3)
print("window w=3, sentence block:")
print(mask.allow[1:7, 1:7].astype(int))

# Critical-image selection: per section, softmax the cross-attention row and
# keep the smallest prefix whose mass exceeds the threshold (0.65 here).
scores = np.array([[2.0, 1.0, 0.1],
                   [0.0, 0.0, 0.0]])
print("top-K picks at eta=0.65:")
print(topk_select(scores, 0.65).astype(int))  # row 2 ties -> lowest indices

# Membership ties sentences to sections; a sentence split across sections
# goes with the majority of its word slots.
membership = build_membership(np.array([1, 1, 2, 2, 2, 3, 3, 0]), 2, 4)
print("membership (sentence x section):")
print(membership.astype(int))

# End to end: run the section-level transformer, transfer its cross-modal
# attention down to sentence-image pairs, and assemble the boost mask.
cfg = TrainConfig(num_classes=2, d=32, h=4, r=16, l_max=2, n_max=10, m_max=3,
                  windows=(3, "full"), lr=1e-3)
params = init_params(cfg, 0)
bundle = synth_generate(SynthSpec(docs=1, num_classes=2, sections=2, images=3,
                                  seed=5)).docs[0]
g = Graph(record=False)
doc = build_sequences(g, bundle, params)
out = mmt_forward(g, doc.section_seq, params, cfg.h)
masks = dmt_pipeline(out, doc, bundle.section_feats, cfg.eta, cfg.h)
print("images kept per section (head 0):")
print(masks.image_pick[0].astype(int))
print("sentences kept by the cosine filter:", masks.sentence_keep.astype(int))
print("assembled boost mask shape:", masks.boost.shape,
      "| nonzeros:", int(masks.boost.sum()))
