"""Training loop, evaluation metrics, and the AdamW optimizer.

The mini-batch is realized by gradient accumulation over single-document
passes (documents vary in sentence and image counts, so there is nothing to
pad); accumulated gradients are scaled by 1/batch before the step, which is
arithmetically identical to true batching. Shuffling is re-seeded per epoch
from (seed, epoch) and training state never touches global RNGs, so a run
is a pure function of (data, config).

Early stopping tracks validation macro-F1: strictly-greater is an
improvement, and the best parameter snapshot is returned after `patience`
epochs without one.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .bundles import DatasetSplit
from .config import TrainConfig
from .errors import EmptySplitError, NumericError
from .model import ModelParams, check_dims, init_params, loss_ce, model_forward
from .tensor import Graph, backward


def _f32_exact(arr: np.ndarray) -> np.ndarray:
    return arr.astype(np.float32).astype(np.float64)


class AdamW:
    """Decoupled-weight-decay Adam; parameters stay f32-exact after each step."""

    def __init__(self, params: ModelParams, lr: float, weight_decay: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = {k: np.zeros(t.shape) for k, t in params.items()}
        self.v = {k: np.zeros(t.shape) for k, t in params.items()}

    def zero_grad(self) -> None:
        self.params.zero_grads()

    def step(self) -> None:
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros(p.shape)
            m = self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            v = self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            new = p.value() - self.lr * update - self.lr * self.weight_decay * p.value()
            p.replace_data(_f32_exact(new))


@dataclass
class MetricsReport:
    accuracy: float
    per_class_precision: list
    per_class_recall: list
    per_class_f1: list
    macro_precision: float
    macro_recall: float
    macro_f1: float
    confusion: list  # confusion[true][pred] counts

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "per_class_precision": self.per_class_precision,
            "per_class_recall": self.per_class_recall,
            "per_class_f1": self.per_class_f1,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "confusion": self.confusion,
        }


def compute_metrics(labels, predictions, num_classes: int) -> MetricsReport:
    """One-vs-rest precision/recall/F1 per class; 0/0 counts as 0; macro = mean."""
    labels = np.asarray(labels, dtype=np.int64)
    predictions = np.asarray(predictions, dtype=np.int64)
    if labels.size == 0:
        raise EmptySplitError("no samples to score")
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    for t, p in zip(labels, predictions):
        confusion[t, p] += 1
    precision, recall, f1 = [], [], []
    for c in range(num_classes):
        tp = confusion[c, c]
        fp = confusion[:, c].sum() - tp
        fn = confusion[c, :].sum() - tp
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        precision.append(float(p))
        recall.append(float(r))
        f1.append(float(f))
    return MetricsReport(
        accuracy=float((labels == predictions).mean()),
        per_class_precision=precision,
        per_class_recall=recall,
        per_class_f1=f1,
        macro_precision=float(np.mean(precision)),
        macro_recall=float(np.mean(recall)),
        macro_f1=float(np.mean(f1)),
        confusion=confusion.tolist(),
    )


def predict(bundle, params: ModelParams, cfg: TrainConfig) -> int:
    g = Graph(record=False)
    logits, _ = model_forward(g, bundle, params, cfg)
    return int(np.argmax(logits.value()))  # argmax: lowest index wins ties


def evaluate(split: DatasetSplit, params: ModelParams,
             cfg: TrainConfig) -> MetricsReport:
    if len(split) == 0:
        raise EmptySplitError(f"split '{split.tag}' is empty")
    labels = [b.label for b in split]
    preds = [predict(b, params, cfg) for b in split]
    return compute_metrics(labels, preds, cfg.num_classes)


def train(train_split: DatasetSplit, val_split: DatasetSplit,
          cfg: TrainConfig):
    """Returns (best params by validation macro-F1, per-epoch log records)."""
    if len(train_split) == 0 or len(val_split) == 0:
        raise EmptySplitError("train and validation splits must be non-empty")
    for b in list(train_split) + list(val_split):
        check_dims(b, cfg)

    params = init_params(cfg)
    opt = AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    best = params.clone()
    best_f1 = -1.0
    stale = 0
    log = []
    docs = train_split.docs
    for epoch in range(cfg.epochs):
        started = time.monotonic()
        order = np.random.default_rng([cfg.seed, epoch, 0x5348]).permutation(len(docs))
        losses = []
        for lo in range(0, len(order), cfg.batch):
            chunk = order[lo:lo + cfg.batch]
            opt.zero_grad()
            for idx in chunk:
                bundle = docs[int(idx)]
                try:
                    g = Graph()
                    logits, _ = model_forward(g, bundle, params, cfg)
                    loss = loss_ce(g, logits, bundle.label)
                    backward(g.scale(loss, 1.0 / len(chunk)), g)
                except NumericError as exc:
                    raise NumericError(
                        f"epoch {epoch}, doc '{bundle.doc_id}': {exc}"
                    ) from exc
                losses.append(loss.item())
            opt.step()
        report = evaluate(val_split, params, cfg)
        log.append({
            "epoch": epoch,
            "train_loss": float(np.mean(losses)),
            "val_accuracy": report.accuracy,
            "val_macro_f1": report.macro_f1,
            "seconds": time.monotonic() - started,
        })
        if report.macro_f1 > best_f1:
            best_f1 = report.macro_f1
            best = params.clone()
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return best, log
