"""Reliance selection module.

Fuses the RGB and depth correlation pyramids into F_RSM, predicts the two
reliance weights with a small conv net, derives the pseudo ground truth
(min-max normalized channel sum), and reweights the fused channels.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Tensor
from .encoder import FUSION_CHANNELS
from .nn import Conv2d, ConvBNReLU, Linear

DEGENERATE_EPS = 1e-8


@dataclass
class FusedRGBD:
    f_rsm: Tensor      # (2*n_slots, H/8, W/8); channels [0, n) RGB, [n, 2n) depth
    n_slots: int


@dataclass
class RelianceWeights:
    pred: Tensor = field(default=None)       # (2,) sigmoid outputs (rely_r, rely_d)
    gt: np.ndarray = field(default=None)     # (2,) with gt_r + gt_d == 1

    @property
    def rely_r(self):
        return float(self.pred.data[0])

    @property
    def rely_d(self):
        return float(self.pred.data[1])

    @property
    def gt_r(self):
        return float(self.gt[0])

    @property
    def gt_d(self):
        return float(self.gt[1])


class RGBDFusion:
    """Per-scale 1x1 conv + upsample to 1/8 + sum, RGB channels first."""

    def __init__(self, store, name, n_slots, rng=None, dtype=np.float32):
        c = 2 * n_slots
        self.n_slots = n_slots
        self.convs = [Conv2d(store, f"{name}.scale{i}", c, c, 1, rng=rng, dtype=dtype)
                      for i in range(3)]
        # Correlation channels are inner products over the 128-dim feature
        # space, so they arrive at a magnitude of tens while the reliance
        # pseudo ground truth lives in [0,1]. Shrinking the initial fusion
        # weights by that feature width puts the fused channels on the
        # target's unit scale, where the per-modality L1 distances respond
        # to map similarity instead of raw activation magnitude. The decoder
        # is scale-invariant to this choice (bias-free conv followed by
        # instance norm), so it only affects the reliance targets.
        for conv in self.convs:
            conv.w.data /= FUSION_CHANNELS

    def __call__(self, rgb, depth):
        scales = [(rgb.g8, depth.g8), (rgb.g16, depth.g16), (rgb.g32, depth.g32)]
        h, w = rgb.g8.shape[-2:]
        total = None
        for conv, (gr, gd) in zip(self.convs, scales):
            if gr.shape != gd.shape:
                raise DimensionError(
                    f"RGB/depth correlation scales differ: {gr.shape} vs {gd.shape}")
            cat = ad.concat([gr, gd], axis=0)
            if cat.shape[0] != 2 * self.n_slots:
                raise DimensionError(
                    f"expected {2 * self.n_slots} fused channels, got {cat.shape[0]}")
            x = conv(cat.reshape(1, *cat.shape))
            x = ad.bilinear_upsample(x, h, w)
            total = x if total is None else total + x
        return FusedRGBD(f_rsm=total.reshape(total.shape[1], h, w), n_slots=self.n_slots)


class RelianceNet:
    """Three stride-2 conv-bn-relu blocks, flatten, linear to 2, sigmoid.

    The flatten size binds the weights to the training resolution; the
    checkpoint records the resolution so a mismatch is caught on load.
    """

    MIN_INPUT = 8  # spatial size at 1/8 scale needed for three useful halvings

    def __init__(self, store, name, n_slots, spatial, rng=None, dtype=np.float32):
        if spatial < self.MIN_INPUT:
            raise ValueError(
                f"reliance net input {spatial}px at 1/8 scale is below the minimum "
                f"{self.MIN_INPUT}px; use images of at least {self.MIN_INPUT * 8}px")
        self.blocks = [
            ConvBNReLU(store, f"{name}.block0", 2 * n_slots, 64, stride=2, rng=rng, dtype=dtype),
            ConvBNReLU(store, f"{name}.block1", 64, 32, stride=2, rng=rng, dtype=dtype),
            ConvBNReLU(store, f"{name}.block2", 32, 16, stride=2, rng=rng, dtype=dtype),
        ]
        out = spatial
        for _ in range(3):
            out = (out - 1) // 2 + 1
        self.fc = Linear(store, f"{name}.fc", 16 * out * out, 2, rng=rng, dtype=dtype)

    def set_training(self, flag):
        for b in self.blocks:
            b.set_training(flag)

    def __call__(self, fused):
        x = fused.f_rsm
        x = x.reshape(1, *x.shape)
        for b in self.blocks:
            x = b(x)
        pred = ad.sigmoid(self.fc(x.reshape(1, -1)).reshape(-1))
        return RelianceWeights(pred=pred)


def fuse_rgbd(rgb, depth, fusion):
    return fusion(rgb, depth)


def rely_weights(fused, net):
    return net(fused)


def pseudo_gt(fused):
    """Min-max normalized channel sum of F_RSM; all zeros when constant."""
    s = np.asarray(fused.f_rsm.data).sum(axis=0)
    lo, hi = s.min(), s.max()
    if hi - lo < DEGENERATE_EPS:
        return np.zeros_like(s)
    return (s - lo) / (hi - lo)


def rsm_ground_truth(fused):
    """Reliance targets from per-modality L1 agreement with the pseudo GT.

    No gradients flow through this: it is a target computed from detached
    values each forward pass.
    """
    pg = pseudo_gt(fused)
    f = np.asarray(fused.f_rsm.data)
    n = fused.n_slots
    dist = np.abs(f - pg[None])
    d_r = dist[:n].mean()
    d_d = dist[n:].mean()
    total = d_r + d_d
    if total < DEGENERATE_EPS:
        gt = np.array([0.5, 0.5])
    else:
        gt = np.array([d_d / total, d_r / total])
    return gt


def apply_reliance(fused, w):
    """Scale RGB channels by rely_r and depth channels by rely_d."""
    n = fused.n_slots
    idx = np.concatenate([np.zeros(n, dtype=np.int64), np.ones(n, dtype=np.int64)])
    scale = ad.take_rows(w.pred.reshape(2, 1), idx)  # (2n, 1)
    out = fused.f_rsm * scale.reshape(2 * n, 1, 1)
    return FusedRGBD(f_rsm=out, n_slots=n)
