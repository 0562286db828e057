"""Prototype sampling network module.

Part A: residual scaled dot-product attention over prototypes.
Part B: three EdgeConv layers on dynamically recomputed k-NN graphs,
        followed by a per-row scoring MLP and sigmoid.
Part C: training-only auxiliary maps built from full-resolution masks.
Part D: correlation pyramids from prototypes used as 1x1 kernels.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Tensor
from .nn import BatchNorm1d, Linear, MLPBlock
from .pgm import PrototypeBlock

ATTENTION_DIM = 64
PROTO_CHANNELS = 128
LEAKY_SLOPE = 0.2


class AttentionParams:
    """K/Q/V/W MLP blocks for Part A. d * n_heads must equal 64."""

    def __init__(self, store, name, n_heads=1, rng=None, dtype=np.float32):
        if ATTENTION_DIM % n_heads:
            raise ValueError(f"n_heads={n_heads} must divide {ATTENTION_DIM}")
        self.n_heads = n_heads
        self.d = ATTENTION_DIM // n_heads
        self.mlp_k = MLPBlock(store, f"{name}.mlp_k", PROTO_CHANNELS, ATTENTION_DIM, rng=rng, dtype=dtype)
        self.mlp_q = MLPBlock(store, f"{name}.mlp_q", PROTO_CHANNELS, ATTENTION_DIM, rng=rng, dtype=dtype)
        self.mlp_v = MLPBlock(store, f"{name}.mlp_v", PROTO_CHANNELS, ATTENTION_DIM, rng=rng, dtype=dtype)
        self.mlp_w = MLPBlock(store, f"{name}.mlp_w", ATTENTION_DIM, PROTO_CHANNELS, rng=rng, dtype=dtype)


class EdgeConvLayer:
    """h_theta on [P_i, P_j - P_i]: linear 256->128, batchnorm, leaky relu."""

    def __init__(self, store, name, rng=None, dtype=np.float32):
        self.fc = Linear(store, f"{name}.fc", 2 * PROTO_CHANNELS, PROTO_CHANNELS, rng=rng, dtype=dtype)
        self.bn = BatchNorm1d(store, f"{name}.bn", PROTO_CHANNELS, dtype=dtype)


class SamplerParams:
    """Part B stack: three EdgeConv layers and the scoring MLP."""

    def __init__(self, store, name, a_k=10, rng=None, dtype=np.float32):
        self.a_k = a_k
        self.edge_layers = [EdgeConvLayer(store, f"{name}.edge{i}", rng=rng, dtype=dtype)
                            for i in range(3)]
        self.mlp_f = MLPBlock(store, f"{name}.mlp_f", PROTO_CHANNELS, 1,
                              hidden=ATTENTION_DIM, rng=rng, dtype=dtype)

    def set_training(self, flag):
        for layer in self.edge_layers:
            layer.bn.training = flag


@dataclass
class SamplerVector:
    scores: Tensor       # (n_slots,) in (0,1) on valid rows, 0 on invalid rows
    valid: np.ndarray    # (n_slots,) bool


@dataclass
class CorrelationPyramid:
    g8: Tensor   # (n_slots, H/8,  W/8)
    g16: Tensor  # (n_slots, H/16, W/16)
    g32: Tensor  # (n_slots, H/32, W/32)


@dataclass
class AuxMaps:
    am_pred: Tensor      # (H, W) in [0,1]
    am_gt: np.ndarray    # (H, W) binary


def _valid_row_mask(valid, dtype):
    return Tensor(valid.astype(dtype).reshape(-1, 1))


def attention_enhance(pb, params):
    """Part A: PB + MLP_W(softmax(Q K^T / sqrt(d)) V), invalid keys masked out."""
    if not pb.valid.any():
        raise ValueError("attention_enhance: all prototypes are invalid")
    q = params.mlp_q(pb.protos)
    k = params.mlp_k(pb.protos)
    v = params.mlp_v(pb.protos)
    key_bias = np.where(pb.valid, 0.0, -1e30).astype(q.dtype).reshape(1, -1)
    heads = []
    for h in range(params.n_heads):
        lo, hi = h * params.d, (h + 1) * params.d
        qh = ad.narrow(q, 1, lo, hi)
        kh = ad.narrow(k, 1, lo, hi)
        vh = ad.narrow(v, 1, lo, hi)
        scores = (qh @ kh.T) * (1.0 / np.sqrt(params.d)) + Tensor(key_bias)
        heads.append(ad.softmax(scores, axis=1) @ vh)
    attended = heads[0] if len(heads) == 1 else ad.concat(heads, axis=1)
    out = pb.protos + params.mlp_w(attended)
    out = out * _valid_row_mask(pb.valid, out.dtype)
    return PrototypeBlock(protos=out, valid=pb.valid, modality=pb.modality)


def knn_graph(pb, a_k):
    """Index table (n_slots, a_k): for each valid row, its a_k nearest valid rows.

    Self is excluded; ties break toward the lower index. Invalid rows get
    self-referencing padding entries (their outputs are zeroed downstream).
    """
    valid_idx = np.nonzero(pb.valid)[0]
    n_valid = len(valid_idx)
    if a_k < 1:
        raise ValueError("a_k must be >= 1")
    if a_k >= n_valid:
        raise ValueError(
            f"knn_graph needs at least a_k+1={a_k + 1} valid prototypes, got {n_valid}")
    x = np.asarray(pb.protos.data, dtype=np.float64)[valid_idx]
    sq = (x * x).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.fill_diagonal(d2, np.inf)
    order = np.argsort(d2, axis=1, kind="stable")  # stable sort = index tie-break
    n_slots = pb.protos.shape[0]
    neighbors = np.tile(np.arange(n_slots, dtype=np.int64)[:, None], (1, a_k))
    neighbors[valid_idx] = valid_idx[order[:, :a_k]]
    return neighbors


def edgeconv(pb_in, neighbors, layer):
    """One EdgeConv layer: max over a_k edge features h_theta([P_i, P_j - P_i])."""
    n_slots, a_k = neighbors.shape
    if n_slots != pb_in.protos.shape[0]:
        raise DimensionError("neighbor table row count != prototype count")
    protos = pb_in.protos
    pj = ad.take_rows(protos, neighbors.reshape(-1))              # (n*a_k, C)
    pi = ad.take_rows(protos, np.repeat(np.arange(n_slots), a_k))  # (n*a_k, C)
    edges = ad.concat([pi, pj - pi], axis=1)
    feat = ad.leaky_relu(layer.bn(layer.fc(edges)), LEAKY_SLOPE)
    feat = feat.reshape(n_slots, a_k, PROTO_CHANNELS)
    out = ad.max_over_axis(feat, axis=1)
    out = out * _valid_row_mask(pb_in.valid, out.dtype)
    return PrototypeBlock(protos=out, valid=pb_in.valid, modality=pb_in.modality)


def sample_scores(pb_att, params):
    """Part B forward: dynamic-graph EdgeConv x3, scoring MLP, sigmoid."""
    block = pb_att
    for layer in params.edge_layers:
        neighbors = knn_graph(block, params.a_k)
        block = edgeconv(block, neighbors, layer)
    logits = params.mlp_f(block.protos).reshape(-1)
    scores = ad.sigmoid(logits) * Tensor(pb_att.valid.astype(logits.dtype))
    return SamplerVector(scores=scores, valid=pb_att.valid)


def apply_sampler(pb_att, s):
    """PB^s: scale each prototype row by its sampler score."""
    if s.scores.shape[0] != pb_att.protos.shape[0]:
        raise DimensionError("sampler length != prototype count")
    out = pb_att.protos * s.scores.reshape(-1, 1)
    return PrototypeBlock(protos=out, valid=pb_att.valid, modality=pb_att.modality)


def auxiliary_maps(s, mg, gt):
    """Part C (training only): auxiliary prediction and ground-truth maps.

    am_pred(x, y) = score of the superpixel owning (x, y), differentiable in
    the scores. am_gt is the union of superpixels whose overlap ratio with
    gt strictly exceeds 0.5.
    """
    gt = np.asarray(gt)
    if not np.isin(gt, (0, 1)).all():
        raise ValueError("ground truth mask must be binary")
    n_slots, h, w = mg.masks.shape
    if gt.shape != (h, w):
        raise DimensionError(f"gt shape {gt.shape} != mask shape {(h, w)}")
    flat = Tensor(mg.masks.reshape(n_slots, -1).astype(s.scores.dtype))
    am_pred = (s.scores.reshape(1, -1) @ flat).reshape(h, w)

    area = mg.masks.reshape(n_slots, -1).sum(axis=1)
    overlap = (mg.masks.reshape(n_slots, -1) * gt.reshape(1, -1)).sum(axis=1)
    chosen = np.zeros(n_slots, dtype=bool)
    nz = area > 0
    chosen[nz] = overlap[nz] / area[nz] > 0.5
    am_gt = (mg.masks[chosen].sum(axis=0) > 0).astype(np.uint8)
    return AuxMaps(am_pred=am_pred, am_gt=am_gt)


def correlation_maps(pb_s, ecr_8, ecr_16, ecr_32):
    """Part D: each prototype row acts as a 1x1 kernel over the reduced pyramid."""
    maps = []
    for ecr in (ecr_8, ecr_16, ecr_32):
        e = ecr
        if e.ndim == 4:
            e = e.reshape(e.shape[1], e.shape[2], e.shape[3])
        c, h, w = e.shape
        if c != pb_s.protos.shape[1]:
            raise DimensionError(
                f"prototype width {pb_s.protos.shape[1]} != feature channels {c}")
        maps.append((pb_s.protos @ e.reshape(c, -1)).reshape(pb_s.protos.shape[0], h, w))
    return CorrelationPyramid(g8=maps[0], g16=maps[1], g32=maps[2])


class PSNM:
    """Parameter bundle for one modality stream (Parts A and B)."""

    def __init__(self, store, name, a_k=10, n_heads=1, rng=None, dtype=np.float32):
        self.attention = AttentionParams(store, f"{name}.attn", n_heads=n_heads, rng=rng, dtype=dtype)
        self.sampler = SamplerParams(store, f"{name}.sampler", a_k=a_k, rng=rng, dtype=dtype)

    def set_training(self, flag):
        self.sampler.set_training(flag)

    def __call__(self, pb):
        pb_att = attention_enhance(pb, self.attention)
        # too few valid prototypes for the configured a_k: shrink the graph
        n_valid = int(pb.valid.sum())
        a_k = min(self.sampler.a_k, n_valid - 1)
        if a_k < 1:
            raise ValueError("PSNM needs at least 2 valid prototypes")
        saved = self.sampler.a_k
        self.sampler.a_k = a_k
        try:
            s = sample_scores(pb_att, self.sampler)
        finally:
            self.sampler.a_k = saved
        pb_s = apply_sampler(pb_att, s)
        return pb_att, s, pb_s
