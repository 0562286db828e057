"""Compact three-scale encoder and the feature fusion module (with ASPP).

The encoder is a stand-in stack of stride-2 conv blocks producing features
at 1/8, 1/16 and 1/32 of the input. The FFM reduces each scale to 128
channels with 1x1 convolutions (those outputs form the channel-reduced
pyramid), sums the upsampled results at 1/8, and refines the sum with an
atrous spatial pyramid (dilations 1/2/4 plus a global-average branch).
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Tensor
from .nn import Conv2d, ConvBNReLU, InstanceNorm2d

FUSION_CHANNELS = 128


@dataclass
class EncoderFeatures:
    e1: Tensor  # (1, C1, H/8,  W/8)
    e2: Tensor  # (1, C2, H/16, W/16)
    e3: Tensor  # (1, C3, H/32, W/32)


@dataclass
class FusionOutputs:
    f: Tensor       # (1, 128, H/8, W/8)
    ecr_8: Tensor   # (1, 128, H/8, W/8)
    ecr_16: Tensor  # (1, 128, H/16, W/16)
    ecr_32: Tensor  # (1, 128, H/32, W/32)


class Encoder:
    """Five conv-bn-relu blocks: three stride-2 to 1/8, then one each to 1/16, 1/32."""

    def __init__(self, store, name, widths=(64, 128, 256), rng=None, dtype=np.float32):
        w1, w2, w3 = widths
        self.blocks = [
            ConvBNReLU(store, f"{name}.block0", 3, w1, stride=2, rng=rng, dtype=dtype),
            ConvBNReLU(store, f"{name}.block1", w1, w1, stride=2, rng=rng, dtype=dtype),
            ConvBNReLU(store, f"{name}.block2", w1, w1, stride=2, rng=rng, dtype=dtype),
            ConvBNReLU(store, f"{name}.block3", w1, w2, stride=2, rng=rng, dtype=dtype),
            ConvBNReLU(store, f"{name}.block4", w2, w3, stride=2, rng=rng, dtype=dtype),
        ]
        self.widths = tuple(widths)

    def set_training(self, flag):
        for b in self.blocks:
            b.set_training(flag)

    def __call__(self, image):
        """image: (1, 3, H, W) or (1, 1, H, W); depth is replicated to 3 channels."""
        if image.ndim != 4:
            raise DimensionError(f"encoder expects NCHW input, got shape {image.shape}")
        h, w = image.shape[2:]
        if h % 32 or w % 32:
            raise DimensionError(
                f"input {h}x{w} not divisible by 32; pad the image first")
        x = image
        if x.shape[1] == 1:
            x = ad.concat([x, x, x], axis=1)
        x = self.blocks[0](x)
        x = self.blocks[1](x)
        e1 = self.blocks[2](x)
        e2 = self.blocks[3](e1)
        e3 = self.blocks[4](e2)
        return EncoderFeatures(e1=e1, e2=e2, e3=e3)


class ASPP:
    """Dilated 3x3 branches (rates 1/2/4, replicate padding) + global average branch."""

    def __init__(self, store, name, c, rng=None, dtype=np.float32):
        self.branches = [
            ConvBNReLU(store, f"{name}.rate{d}", c, c, k=3, dilation=d,
                       pad_mode="replicate", rng=rng, dtype=dtype)
            for d in (1, 2, 4)
        ]
        self.global_conv = Conv2d(store, f"{name}.global", c, c, 1, rng=rng, dtype=dtype)
        self.merge = Conv2d(store, f"{name}.merge", 4 * c, c, 1, bias=False, rng=rng, dtype=dtype)
        self.merge_bn = InstanceNorm2d(store, f"{name}.merge_bn", c, dtype=dtype)

    def set_training(self, flag):
        for b in self.branches:
            b.set_training(flag)
        self.merge_bn.training = flag

    def __call__(self, x):
        h, w = x.shape[2:]
        outs = [b(x) for b in self.branches]
        g = ad.adaptive_avg_pool(x, 1, 1)
        g = ad.relu(self.global_conv(g))
        outs.append(ad.bilinear_upsample(g, h, w))
        return ad.relu(self.merge_bn(self.merge(ad.concat(outs, axis=1))))


class FFM:
    def __init__(self, store, name, encoder_widths=(64, 128, 256), rng=None, dtype=np.float32):
        w1, w2, w3 = encoder_widths
        c = FUSION_CHANNELS
        self.reduce1 = Conv2d(store, f"{name}.reduce1", w1, c, 1, rng=rng, dtype=dtype)
        self.reduce2 = Conv2d(store, f"{name}.reduce2", w2, c, 1, rng=rng, dtype=dtype)
        self.reduce3 = Conv2d(store, f"{name}.reduce3", w3, c, 1, rng=rng, dtype=dtype)
        self.aspp = ASPP(store, f"{name}.aspp", c, rng=rng, dtype=dtype)

    def set_training(self, flag):
        self.aspp.set_training(flag)

    def __call__(self, ef):
        ecr_8 = self.reduce1(ef.e1)
        ecr_16 = self.reduce2(ef.e2)
        ecr_32 = self.reduce3(ef.e3)
        h, w = ecr_8.shape[2:]
        merged = ecr_8 + ad.bilinear_upsample(ecr_16, h, w) + ad.bilinear_upsample(ecr_32, h, w)
        return FusionOutputs(f=self.aspp(merged), ecr_8=ecr_8, ecr_16=ecr_16, ecr_32=ecr_32)
