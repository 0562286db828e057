"""Prototype generating module: masked average pooling under soft superpixel masks."""

from dataclasses import dataclass

import numpy as np

from .autodiff import DimensionError, Tensor

EMPTY_MASK_EPS = 1e-8


@dataclass
class PrototypeBlock:
    protos: Tensor       # (n_slots, C)
    valid: np.ndarray    # (n_slots,) bool; invalid rows are exactly zero
    modality: str        # "rgb" or "depth"


def masked_average_pool(f, soft_mask):
    """Per-channel mean of feature map f (C,h,w) under a soft mask (h,w).

    An (almost) empty mask yields the zero vector; callers should treat
    that prototype as invalid.
    """
    if f.shape[1:] != soft_mask.shape:
        raise DimensionError(
            f"feature spatial dims {f.shape[1:]} != mask dims {soft_mask.shape}")
    total = float(soft_mask.sum())
    if total < EMPTY_MASK_EPS:
        return Tensor(np.zeros(f.shape[0], dtype=f.dtype))
    c = f.shape[0]
    m = Tensor(soft_mask.reshape(-1, 1).astype(f.dtype))
    return ((f.reshape(c, -1) @ m) * (1.0 / total)).reshape(c)


def build_prototype_block(f, mg, modality="rgb"):
    """Stack masked-average-pooled prototypes, one row per mask channel.

    f: Tensor (C, h, w) or (1, C, h, w); mg.soft_masks must be at f's resolution.
    """
    if f.ndim == 4:
        if f.shape[0] != 1:
            raise DimensionError("build_prototype_block expects a single sample")
        f = f.reshape(f.shape[1], f.shape[2], f.shape[3])
    soft = mg.soft_masks
    if soft is None:
        raise ValueError("mask group has no soft masks; call downsample_mask_group first")
    if f.shape[1:] != soft.shape[1:]:
        raise DimensionError(
            f"feature resolution {f.shape[1:]} != soft mask resolution {soft.shape[1:]}")
    n_slots = soft.shape[0]
    c = f.shape[0]
    sums = soft.reshape(n_slots, -1).sum(axis=1)
    valid = sums >= EMPTY_MASK_EPS
    weights = np.zeros((n_slots, soft.shape[1] * soft.shape[2]), dtype=np.float64)
    weights[valid] = soft.reshape(n_slots, -1)[valid] / sums[valid, None]
    protos = Tensor(weights.astype(f.dtype)) @ f.reshape(c, -1).T
    return PrototypeBlock(protos=protos, valid=valid, modality=modality)
