"""Central finite differences against the recorded-graph gradients.

The numeric side only ever runs forward passes (no tape), so it stays an
independent check on every backward rule. Relative error uses a floored
denominator: err = |a - f| / max(|a|, |f|, 1e-4), a true relative error for
gradients above 1e-4 and a scaled absolute error below. Central differences
at h = 1e-5 carry ~|loss| * 1e-10 of f64 rounding noise, so the floor keeps
exact-zero gradients (masked positions, inactive relu cells) from reading
as spurious mismatches.
"""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from .bundles import SynthSpec, synth_generate
from .config import TrainConfig
from .errors import ConfigError
from .model import init_params, loss_ce, model_forward
from .tensor import Graph, Tensor, backward

REL_FLOOR = 1e-4


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), REL_FLOOR)
    return float((np.abs(analytic - numeric) / denom).max())


def numeric_gradient(loss_fn: Callable[[], float], tensor: Tensor,
                     h: float = 1e-5) -> np.ndarray:
    """d loss / d tensor by central differences, perturbing one entry at a time."""
    base = tensor.copy_value()
    grad = np.zeros_like(base)
    flat = grad.reshape(-1)
    for idx in range(base.size):
        for sign in (+1.0, -1.0):
            bumped = base.copy().reshape(-1)
            bumped[idx] += sign * h
            tensor.replace_data(bumped.reshape(base.shape))
            flat[idx] += sign * loss_fn()
    tensor.replace_data(base)
    return grad / (2.0 * h)


def check_tensor(loss_builder, tensor: Tensor, h: float = 1e-5) -> float:
    """Max relative error for one tensor. ``loss_builder()`` must rebuild the
    graph from current tensor values and return the scalar loss Tensor with
    its graph: (loss, graph)."""
    loss, graph = loss_builder()
    tensor.zero_grad()
    backward(loss, graph)
    analytic = tensor.grad.copy() if tensor.grad is not None \
        else np.zeros(tensor.shape)
    numeric = numeric_gradient(lambda: loss_builder()[0].item(), tensor, h=h)
    return relative_error(analytic, numeric)


def _gradcheck_bundle(cfg: TrainConfig, seed: int):
    """A deterministic document that fits the config caps."""
    split = synth_generate(SynthSpec(
        docs=32, num_classes=cfg.num_classes, dim=cfg.d,
        sections=cfg.l_max, section_len=cfg.r, images=cfg.m_max,
        sigma=0.3, mode="planted", seed=seed,
    ))
    for b in split:
        if b.sentence_count <= cfg.n_max:
            return b
    raise ConfigError(
        f"no generated document fits n_max={cfg.n_max}; widen the cap"
    )


def model_gradient_check(cfg: TrainConfig, seed: Optional[int] = None,
                         h: float = 1e-5, bundle=None) -> dict[str, float]:
    """End-to-end check of dLoss/dParam for every parameter tensor.

    The transfer masks are computed once at the base point and held fixed
    across perturbations: selection is discrete routing with stop-gradient
    semantics, so the differentiable function under test keeps them
    constant. Returns {param name: max relative error} plus an
    "__overall__" entry.
    """
    seed = cfg.seed if seed is None else seed
    if bundle is None:
        bundle = _gradcheck_bundle(cfg, seed)
    params = init_params(cfg, seed)

    frozen = None
    if cfg.enable_dmt and cfg.enable_dmmt:
        probe = Graph(record=False)
        _, diag = model_forward(probe, bundle, params, cfg, collect=True)
        frozen = diag.transfer

    def forward_loss() -> float:
        g = Graph(record=False)
        logits, _ = model_forward(g, bundle, params, cfg,
                                  frozen_transfer=frozen)
        return loss_ce(g, logits, bundle.label).item()

    g = Graph()
    logits, _ = model_forward(g, bundle, params, cfg, frozen_transfer=frozen)
    loss = loss_ce(g, logits, bundle.label)
    params.zero_grads()
    backward(loss, g)

    report = {}
    worst = 0.0
    for name, p in params.items():
        analytic = p.grad if p.grad is not None else np.zeros(p.shape)
        numeric = numeric_gradient(forward_loss, p, h=h)
        err = relative_error(analytic, numeric)
        report[name] = err
        worst = max(worst, err)
    report["__overall__"] = worst
    return report
