"""Saliency decoder and the training objectives (IoU, auxiliary BCE, reliance L1)."""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Tensor
from .nn import Conv2d, ConvBNReLU

BCE_CLAMP = 1e-6
IOU_EPS = 1e-8
DEFAULT_LAMBDAS = (1.0, 1.0, 10.0)


@dataclass
class LossReport:
    l_mask: float
    l_psnm_rgb: float
    l_psnm_depth: float
    l_rsm: float
    total: float
    lambdas: tuple

    CSV_HEADER = "step,epoch,lr,l_mask,l_psnm_rgb,l_psnm_depth,l_rsm,total"

    def csv_row(self, step, epoch, lr):
        return (f"{step},{epoch},{lr:.10g},{self.l_mask:.8g},{self.l_psnm_rgb:.8g},"
                f"{self.l_psnm_depth:.8g},{self.l_rsm:.8g},{self.total:.8g}")


class Decoder:
    """Three conv-bn-relu blocks, 1x1 projection, x8 bilinear upsample, sigmoid."""

    def __init__(self, store, name, n_slots, rng=None, dtype=np.float32):
        c = 2 * n_slots
        self.blocks = [
            ConvBNReLU(store, f"{name}.block0", c, 128, rng=rng, dtype=dtype),
            ConvBNReLU(store, f"{name}.block1", 128, 64, rng=rng, dtype=dtype),
            ConvBNReLU(store, f"{name}.block2", 64, 32, rng=rng, dtype=dtype),
        ]
        self.head = Conv2d(store, f"{name}.head", 32, 1, 1, rng=rng, dtype=dtype)

    def set_training(self, flag):
        for b in self.blocks:
            b.set_training(flag)

    def __call__(self, fused):
        x = fused.f_rsm
        h, w = x.shape[-2:]
        x = x.reshape(1, *x.shape)
        for b in self.blocks:
            x = b(x)
        x = self.head(x)
        x = ad.bilinear_upsample(x, 8 * h, 8 * w)
        return ad.sigmoid(x.reshape(8 * h, 8 * w))


def decode(fused, decoder):
    return decoder(fused)


def iou_loss(pred, gt):
    """1 - sum(min(pred, gt)) / sum(max(pred, gt)); 0 when both maps are empty."""
    gt_arr = np.asarray(gt, dtype=pred.dtype)
    if pred.shape != gt_arr.shape:
        raise DimensionError(f"pred shape {pred.shape} != gt shape {gt_arr.shape}")
    if gt_arr.max(initial=0.0) == 0.0 and float(np.abs(pred.data).max(initial=0.0)) == 0.0:
        return Tensor(np.zeros((), dtype=pred.dtype))
    gt_t = Tensor(gt_arr)
    inter = ad.minimum(pred, gt_t).sum()
    union = ad.maximum(pred, gt_t).sum()
    # max-guard keeps pred == gt at exactly 0 and disjoint maps at exactly 1
    return 1.0 - inter / ad.maximum(union, IOU_EPS)


def bce_loss(pred, target):
    """Mean binary cross entropy; predictions clamped away from {0, 1}."""
    target_arr = np.asarray(target, dtype=pred.dtype)
    if pred.shape != target_arr.shape:
        raise DimensionError(f"pred shape {pred.shape} != target shape {target_arr.shape}")
    p = ad.clamp(pred, BCE_CLAMP, 1.0 - BCE_CLAMP)
    t = Tensor(target_arr)
    return -(t * ad.log(p) + (1.0 - t) * ad.log(1.0 - p)).mean()


def psnm_loss(am_pred, am_gt):
    """Auxiliary BCE between the predicted and ground-truth superpixel maps."""
    return bce_loss(am_pred, am_gt)


def rsm_loss(w):
    """L1 distance between the predicted reliance weights and their targets."""
    if w.pred is None or w.gt is None:
        raise ValueError("rsm_loss needs both predictions and targets")
    return ad.tabs(w.pred - Tensor(np.asarray(w.gt, dtype=w.pred.dtype))).sum()


def total_loss(l_mask, l_psnm_rgb, l_psnm_depth, l_rsm, lambdas=DEFAULT_LAMBDAS):
    """Weighted sum of the three objectives; returns (scalar Tensor, report)."""
    lm, lp, lr = lambdas
    total = lm * l_mask + lp * (l_psnm_rgb + l_psnm_depth) + lr * l_rsm
    report = LossReport(
        l_mask=l_mask.item(), l_psnm_rgb=l_psnm_rgb.item(),
        l_psnm_depth=l_psnm_depth.item(), l_rsm=l_rsm.item(),
        total=total.item(), lambdas=tuple(lambdas))
    return total, report
