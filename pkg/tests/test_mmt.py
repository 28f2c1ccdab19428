"""Section-level transformer: residual identities, permutation behavior."""

import numpy as np

from hmt.config import TrainConfig
from hmt.gradcheck import numeric_gradient, relative_error
from hmt.mmt import mmt_forward
from hmt.model import init_params
from hmt.tensor import Graph, Tensor, backward


def zeroed_attention_params(cfg, seed=0):
    params = init_params(cfg, seed)
    for name, t in params.items():
        if name.startswith("mmt.") and (".head" in name or ".wo" in name
                                        or ".mlp.w" in name or ".mlp.b" in name):
            t.replace_data(np.zeros(t.shape))
    return params


def test_zero_weights_give_residual_identity_and_uniform_attention():
    cfg = TrainConfig(num_classes=2, d=8, h=2, l_max=2, n_max=4, m_max=1,
                      windows=("full",))
    params = zeroed_attention_params(cfg)
    rng = np.random.default_rng(0)
    seq = rng.standard_normal((4, 8))  # l=2, m=1 -> 4 rows
    g = Graph()
    out = mmt_forward(g, Tensor(seq), params, cfg.h)
    assert np.array_equal(out.summary.value(), seq[0])
    assert np.allclose(out.attention, 1.0 / 4.0, atol=1e-15)
    assert out.attention.shape == (2, 4, 4)


def test_image_row_permutation_leaves_summary_unchanged():
    cfg = TrainConfig(num_classes=2, d=8, h=2, l_max=2, n_max=4, m_max=3,
                      windows=("full",))
    params = init_params(cfg, 1)
    rng = np.random.default_rng(2)
    cls = rng.standard_normal((1, 8))
    sections = rng.standard_normal((2, 8))
    images = rng.standard_normal((3, 8))
    perm = [2, 0, 1]
    seq = np.concatenate([cls, sections, images])
    seq_perm = np.concatenate([cls, sections, images[perm]])
    g = Graph()
    a = mmt_forward(g, Tensor(seq), params, cfg.h)
    b = mmt_forward(g, Tensor(seq_perm), params, cfg.h)
    assert np.allclose(a.summary.value(), b.summary.value(), atol=1e-12)
    # attention columns for image rows permute accordingly
    img = 3  # first image row index (1 CLS + 2 sections)
    expected_cols = a.attention[:, 0, [img + p for p in perm]]
    assert np.allclose(b.attention[:, 0, img:img + 3], expected_cols, atol=1e-12)


def test_attention_rows_are_simplex_vectors():
    cfg = TrainConfig(num_classes=2, d=16, h=4, l_max=3, n_max=4, m_max=2,
                      windows=("full",))
    params = init_params(cfg, 3)
    rng = np.random.default_rng(4)
    seq = rng.standard_normal((6, 16))
    g = Graph()
    out = mmt_forward(g, Tensor(seq), params, cfg.h)
    assert np.all(out.attention >= 0)
    assert np.abs(out.attention.sum(axis=2) - 1.0).max() < 1e-9


def test_multi_layer_exports_first_layer_attention():
    cfg = TrainConfig(num_classes=2, d=8, h=2, layers=2, l_max=2, n_max=4,
                      m_max=1, windows=("full",))
    params = init_params(cfg, 5)
    rng = np.random.default_rng(6)
    seq = Tensor(rng.standard_normal((4, 8)))
    g = Graph()
    two_layer = mmt_forward(g, seq, params, cfg.h, layers=2)
    one_layer = mmt_forward(g, seq, params, cfg.h, layers=1)
    assert np.array_equal(two_layer.attention, one_layer.attention)
    assert not np.allclose(two_layer.summary.value(), one_layer.summary.value())


def test_block_gradient_small_config():
    cfg = TrainConfig(num_classes=2, d=8, h=2, l_max=2, n_max=4, m_max=1,
                      windows=("full",))
    params = init_params(cfg, 7)
    rng = np.random.default_rng(8)
    seq = Tensor(rng.standard_normal((4, 8)))
    mixer = Tensor(rng.standard_normal(8))

    def build():
        g = Graph()
        out = mmt_forward(g, seq, params, cfg.h)
        return g.sum_all(g.elementwise_mul(out.summary, mixer)), g

    loss, graph = build()
    params.zero_grads()
    backward(loss, graph)
    for name in ("mmt.0.head0.wq", "mmt.0.wo", "mmt.0.mlp.w1", "mmt.0.ln1.gain"):
        t = params[name]
        err = relative_error(t.grad, numeric_gradient(
            lambda: build()[0].item(), t))
        assert err < 1e-6, f"{name}: {err:.2e}"
