"""Average pooling + linear softmax classifier, and Top-1 / MCA metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


@dataclass
class ClassifierParams:
    weight: ad.Tensor   # (num_classes, C)
    bias: ad.Tensor     # (num_classes,)

    @classmethod
    def init(cls, num_classes, channels, rng, requires_grad=True):
        bound = 1.0 / np.sqrt(channels)
        return cls(
            ad.Tensor(rng.uniform(-bound, bound, size=(num_classes, channels)), requires_grad=requires_grad),
            ad.Tensor(np.zeros(num_classes), requires_grad=requires_grad),
        )


def pool(h):
    """Mean over the node axis of ``(..., N, C)``."""
    return h.mean(axis=-2)


def classify(pooled, params):
    return pooled @ params.weight.T + params.bias


def pool_and_classify(h, params):
    """Return ``(logits, probabilities)``; probabilities are a plain array."""
    logits = classify(pool(h), params)
    return logits, ad.softmax_lastdim(ad.Tensor(logits.data)).data


cross_entropy = ad.cross_entropy


def predict(logits):
    """Argmax over classes; ties go to the lowest class index."""
    data = logits.data if isinstance(logits, ad.Tensor) else np.asarray(logits)
    return np.argmax(data, axis=-1)


@dataclass
class EvalReport:
    top1: float
    mca: float
    per_class_recall: np.ndarray
    confusion: np.ndarray
    excluded_classes: int = 0
    loss: float = float("nan")

    def to_text(self):
        lines = [
            f"top1={self.top1!r}",
            f"mca={self.mca!r}",
            f"loss={self.loss!r}",
            f"excluded_classes={self.excluded_classes}",
            "per_class_recall=" + ",".join(repr(float(r)) for r in self.per_class_recall),
            "confusion=" + ";".join(",".join(str(int(v)) for v in row) for row in self.confusion),
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        kv = dict(line.split("=", 1) for line in text.splitlines() if "=" in line)
        confusion = np.array([[int(v) for v in row.split(",")] for row in kv["confusion"].split(";")])
        return cls(
            top1=float(kv["top1"]),
            mca=float(kv["mca"]),
            per_class_recall=np.array([float(v) for v in kv["per_class_recall"].split(",")]),
            confusion=confusion,
            excluded_classes=int(kv["excluded_classes"]),
            loss=float(kv["loss"]),
        )

    def __eq__(self, other):
        if not isinstance(other, EvalReport):
            return NotImplemented
        return (
            self.top1 == other.top1 and self.mca == other.mca
            and np.array_equal(self.confusion, other.confusion)
            and np.array_equal(self.per_class_recall, other.per_class_recall, equal_nan=True)
            and self.excluded_classes == other.excluded_classes
            and (self.loss == other.loss or (np.isnan(self.loss) and np.isnan(other.loss)))
        )


def evaluate(predictions, truths, num_classes=None, loss=float("nan")):
    """Top-1 and mean class accuracy.

    Classes without any true sample are excluded from the MCA mean and
    counted in ``excluded_classes``.
    """
    predictions = np.asarray(predictions, dtype=np.int64)
    truths = np.asarray(truths, dtype=np.int64)
    if predictions.shape != truths.shape:
        raise ValueError("predictions and truths differ in length")
    if truths.size == 0:
        raise ValueError("cannot evaluate an empty set")
    if num_classes is None:
        num_classes = int(max(predictions.max(), truths.max())) + 1
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(confusion, (truths, predictions), 1)
    counts = confusion.sum(axis=1)
    present = counts > 0
    recall = np.full(num_classes, np.nan)
    recall[present] = np.diag(confusion)[present] / counts[present]
    return EvalReport(
        top1=float(np.mean(predictions == truths)),
        mca=float(recall[present].mean()),
        per_class_recall=recall,
        confusion=confusion,
        excluded_classes=int((~present).sum()),
        loss=float(loss),
    )
