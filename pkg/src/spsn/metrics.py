"""Saliency evaluation: MAE, adaptive-threshold F-measure, PR curve."""

from dataclasses import dataclass

import numpy as np

PR_THRESHOLDS = 256


@dataclass
class MetricsReport:
    mae: float
    f_beta: float
    pr_curve: np.ndarray  # (256, 2) columns (precision, recall)

    def csv_rows(self):
        lines = ["metric,value",
                 f"mae,{self.mae:.8g}",
                 f"f_beta,{self.f_beta:.8g}"]
        lines.append("threshold,precision,recall")
        for i, (p, r) in enumerate(self.pr_curve):
            lines.append(f"{i / (PR_THRESHOLDS - 1):.8g},{p:.8g},{r:.8g}")
        return lines


def mae(pred, gt):
    return float(np.abs(np.asarray(pred, dtype=np.float64) - np.asarray(gt, dtype=np.float64)).mean())


def _precision_recall(binary_pred, gt):
    tp = float(np.logical_and(binary_pred, gt).sum())
    fp = float(np.logical_and(binary_pred, ~gt).sum())
    fn = float(np.logical_and(~binary_pred, gt).sum())
    precision = tp / (tp + fp) if tp + fp > 0 else 1.0
    recall = tp / (tp + fn) if tp + fn > 0 else 1.0
    return precision, recall


def f_beta(pred, gt, beta_squared=0.3):
    """F-measure at the adaptive threshold 2 * mean(pred), clamped to [0,1]."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt).astype(bool)
    thresh = min(1.0, 2.0 * pred.mean())
    p, r = _precision_recall(pred >= thresh, gt)
    denom = beta_squared * p + r
    if denom == 0:
        return 0.0
    return (1 + beta_squared) * p * r / denom


def pr_curve(pred, gt):
    """Precision/recall at 256 uniform thresholds in [0, 1]."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt).astype(bool)
    out = np.empty((PR_THRESHOLDS, 2))
    for i in range(PR_THRESHOLDS):
        t = i / (PR_THRESHOLDS - 1)
        out[i] = _precision_recall(pred >= t, gt)
    return out


def evaluate(preds, gts, beta_squared=0.3):
    """Mean MAE / F-beta / PR over aligned prediction-ground-truth pairs."""
    preds = list(preds)
    gts = list(gts)
    if not preds or len(preds) != len(gts):
        raise ValueError("evaluate needs equally many predictions and ground truths")
    maes = []
    fbs = []
    curves = np.zeros((PR_THRESHOLDS, 2))
    for p, g in zip(preds, gts):
        if np.asarray(p).shape != np.asarray(g).shape:
            raise ValueError("prediction and ground truth shapes differ")
        maes.append(mae(p, g))
        fbs.append(f_beta(p, g, beta_squared))
        curves += pr_curve(p, g)
    curves /= len(preds)
    return MetricsReport(mae=float(np.mean(maes)), f_beta=float(np.mean(fbs)), pr_curve=curves)
