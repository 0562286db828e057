"""Dual-stream model assembly and the end-to-end forward pass."""

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .encoder import FFM, Encoder
from .losses import Decoder
from .nn import ParamStore
from .pgm import build_prototype_block
from .psnm import PSNM, correlation_maps
from .rsm import RGBDFusion, RelianceNet, apply_reliance, rsm_ground_truth
from .slic import build_mask_group, downsample_mask_group, slic_segment


@dataclass
class Intermediates:
    pb_rgb: object = None
    pb_depth: object = None
    s_pred_rgb: object = None
    s_pred_depth: object = None
    gamma_rgb: object = None
    gamma_depth: object = None
    fused: object = None
    rely: object = None
    weighted: object = None
    mask_group_rgb: object = None
    mask_group_depth: object = None
    fusion_rgb: object = None
    fusion_depth: object = None


class SPSNModel:
    def __init__(self, config, dtype=np.float32):
        self.config = config
        self.store = ParamStore()
        rng = np.random.default_rng(config.seed)
        ws = config.encoder_widths
        spatial = config.image_size // 8
        kw = dict(rng=rng, dtype=dtype)
        self.rgb_encoder = Encoder(self.store, "rgb_encoder", ws, **kw)
        self.depth_encoder = Encoder(self.store, "depth_encoder", ws, **kw)
        self.rgb_ffm = FFM(self.store, "rgb_ffm", ws, **kw)
        self.depth_ffm = FFM(self.store, "depth_ffm", ws, **kw)
        self.rgb_psnm = PSNM(self.store, "rgb_psnm", a_k=config.a_k,
                             n_heads=config.n_heads, **kw)
        self.depth_psnm = PSNM(self.store, "depth_psnm", a_k=config.a_k,
                               n_heads=config.n_heads, **kw)
        self.fusion = RGBDFusion(self.store, "rgbd_fusion", config.n_superpixels, **kw)
        self.reliance = RelianceNet(self.store, "reliance", config.n_superpixels,
                                    spatial, **kw)
        self.decoder = Decoder(self.store, "decoder", config.n_superpixels, **kw)
        self._training = True

    def set_training(self, flag):
        self._training = flag
        for part in (self.rgb_encoder, self.depth_encoder, self.rgb_ffm,
                     self.depth_ffm, self.rgb_psnm, self.depth_psnm,
                     self.reliance, self.decoder):
            part.set_training(flag)

    # ------------------------------------------------------------------ SLIC

    def segment(self, rgb, depth):
        """Superpixel mask groups for one RGB-D pair (plain numpy, cacheable)."""
        cfg = self.config
        hw = cfg.image_size // 8
        mg = []
        for image, source in ((np.moveaxis(rgb, 0, -1), "rgb"), (depth[0], "depth")):
            labels = slic_segment(image, cfg.n_superpixels,
                                  compactness=cfg.slic_compactness,
                                  iterations=cfg.slic_iterations)
            group = build_mask_group(labels, cfg.n_superpixels)
            mg.append(downsample_mask_group(group, hw, hw))
        return mg[0], mg[1]

    # --------------------------------------------------------------- forward

    def forward(self, rgb, depth, mask_rgb=None, mask_depth=None):
        """Predicted saliency map (H, W) plus all intermediates.

        rgb: (3, H, W), depth: (1, H, W), both float in [0,1]. Mask groups may
        be passed in to reuse cached SLIC results.
        """
        if mask_rgb is None or mask_depth is None:
            mask_rgb, mask_depth = self.segment(rgb, depth)
        inter = Intermediates(mask_group_rgb=mask_rgb, mask_group_depth=mask_depth)

        streams = {}
        for key, image, mg, enc, ffm, psnm in (
                ("rgb", rgb, mask_rgb, self.rgb_encoder, self.rgb_ffm, self.rgb_psnm),
                ("depth", depth, mask_depth, self.depth_encoder, self.depth_ffm,
                 self.depth_psnm)):
            x = Tensor(image[None])
            fo = ffm(enc(x))
            pb = build_prototype_block(fo.f, mg, modality=key)
            pb_att, s, pb_s = psnm(pb)
            gamma = correlation_maps(pb_s, fo.ecr_8, fo.ecr_16, fo.ecr_32)
            streams[key] = (fo, pb, s, gamma)

        inter.fusion_rgb, inter.pb_rgb, inter.s_pred_rgb, inter.gamma_rgb = streams["rgb"]
        inter.fusion_depth, inter.pb_depth, inter.s_pred_depth, inter.gamma_depth = streams["depth"]

        fused = self.fusion(inter.gamma_rgb, inter.gamma_depth)
        rely = self.reliance(fused)
        rely.gt = rsm_ground_truth(fused)
        weighted = apply_reliance(fused, rely)
        pred = self.decoder(weighted)

        inter.fused = fused
        inter.rely = rely
        inter.weighted = weighted
        return pred, inter


def forward_full(rgb, depth, config, model=None):
    """Convenience single-shot forward; builds a fresh model when none is given."""
    if model is None:
        model = SPSNModel(config)
        model.set_training(False)
    return model.forward(rgb, depth)
