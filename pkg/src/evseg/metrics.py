"""Segmentation metrics: confusion matrix, per-class IoU, mIoU, pixel accuracy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError


@dataclass
class SegMetrics:
    confusion: np.ndarray          # (K, K) counts, rows = label, cols = prediction
    per_class_iou: list            # float per class, None where undefined
    miou: float
    pixel_acc: float
    params: int = 0
    macs: int = 0

    def to_json_dict(self) -> dict:
        return {
            "miou": self.miou,
            "pixel_acc": self.pixel_acc,
            "per_class_iou": self.per_class_iou,
            "params": int(self.params),
            "macs": int(self.macs),
            "confusion": self.confusion.astype(int).tolist(),
        }


def predictions(logits: np.ndarray) -> np.ndarray:
    """Argmax over the class axis of (K, H, W) logits; ties break to the
    lowest class index."""
    return logits.argmax(axis=0)


def metrics(pred: np.ndarray, label: np.ndarray, num_classes: int,
            ignore_index: int = 255) -> SegMetrics:
    """IoU_k = TP / (TP + FP + FN); classes absent from both prediction and
    label are excluded from the mIoU mean."""
    pred = np.asarray(pred)
    label = np.asarray(label)
    if pred.shape != label.shape:
        raise DataError(f"prediction shape {pred.shape} != label shape {label.shape}")
    valid = label != ignore_index
    if not valid.any():
        raise DataError("all pixels carry the ignore index; metrics undefined")
    p = pred[valid].astype(np.int64)
    l = label[valid].astype(np.int64)
    if (p < 0).any() or (p >= num_classes).any():
        raise DataError("prediction class outside [0, K)")
    if (l < 0).any() or (l >= num_classes).any():
        raise DataError("label class outside [0, K)")
    confusion = np.bincount(l * num_classes + p,
                            minlength=num_classes * num_classes
                            ).reshape(num_classes, num_classes)
    tp = np.diag(confusion)
    fp = confusion.sum(axis=0) - tp
    fn = confusion.sum(axis=1) - tp
    union = tp + fp + fn
    per_class = [float(tp[k] / union[k]) if union[k] else None for k in range(num_classes)]
    present = [v for v in per_class if v is not None]
    return SegMetrics(
        confusion=confusion,
        per_class_iou=per_class,
        miou=float(np.mean(present)),
        pixel_acc=float(tp.sum() / confusion.sum()),
    )
