"""Synthetic RGB-D sample generation, directory loading, and PNG helpers.

Synthetic samples place 1-3 random ellipses/rectangles over a textured
background. Depth renders objects nearer (higher values); an optional
degradation (noise / flattened / inverted) exercises the reliance module.
"""

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

MIN_OBJECT_FRAC = 0.01   # per-object area bounds, fraction of image area
MAX_OBJECT_FRAC = 0.25


@dataclass
class SampleRecord:
    rgb: np.ndarray     # (3, H, W) float32 in [0,1]
    depth: np.ndarray   # (1, H, W) float32 in [0,1]
    gt: np.ndarray      # (H, W) uint8 binary
    name: str
    degraded: bool = False


def _smooth_noise(rng, h, w, scale=8):
    coarse = rng.random((max(2, h // scale), max(2, w // scale)))
    ys = np.linspace(0, coarse.shape[0] - 1, h)
    xs = np.linspace(0, coarse.shape[1] - 1, w)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, coarse.shape[0] - 1)
    x1 = np.minimum(x0 + 1, coarse.shape[1] - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    return ((coarse[y0][:, x0] * (1 - fy) * (1 - fx))
            + coarse[y1][:, x0] * fy * (1 - fx)
            + coarse[y0][:, x1] * (1 - fy) * fx
            + coarse[y1][:, x1] * fy * fx)


def _object_mask(rng, h, w):
    """One random ellipse or axis-aligned rectangle within the area bounds."""
    area = h * w
    for _ in range(50):
        cy = rng.uniform(0.2 * h, 0.8 * h)
        cx = rng.uniform(0.2 * w, 0.8 * w)
        ry = rng.uniform(0.08 * h, 0.3 * h)
        rx = rng.uniform(0.08 * w, 0.3 * w)
        yy, xx = np.mgrid[0:h, 0:w]
        if rng.random() < 0.5:
            mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        else:
            mask = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
        frac = mask.sum() / area
        if MIN_OBJECT_FRAC <= frac <= MAX_OBJECT_FRAC:
            return mask
    return mask  # last attempt; bounds checked statistically in tests


def generate_synthetic(n, image_size, seed=0, depth_degrade=0.3):
    """Deterministic synthetic RGB-D dataset of `n` samples."""
    if n < 1:
        raise ValueError("need at least one sample")
    h = w = image_size
    samples = []
    for i in range(n):
        # per-sample streams: the scene stays identical across degradation settings
        rng = np.random.default_rng([seed, i, 0])
        drng = np.random.default_rng([seed, i, 1])
        n_obj = int(rng.integers(1, 4))
        gt = np.zeros((h, w), dtype=bool)
        for _ in range(n_obj):
            gt |= _object_mask(rng, h, w)

        bg_color = rng.uniform(0.1, 0.6, size=3)
        obj_color = rng.uniform(0.4, 1.0, size=3)
        while np.abs(obj_color - bg_color).sum() < 0.6:
            obj_color = rng.uniform(0.4, 1.0, size=3)
        texture = _smooth_noise(rng, h, w)
        rgb = np.empty((3, h, w), dtype=np.float32)
        for c in range(3):
            base = np.where(gt, obj_color[c], bg_color[c])
            rgb[c] = np.clip(base + 0.15 * (texture - 0.5), 0, 1)

        bg_depth = 0.15 + 0.2 * _smooth_noise(rng, h, w, scale=16)
        obj_depth = rng.uniform(0.65, 0.95)
        depth = np.where(gt, obj_depth, bg_depth).astype(np.float32)

        degraded = bool(drng.random() < depth_degrade)
        if degraded:
            mode = drng.choice(["noise", "flattened", "inverted"])
            if mode == "noise":
                depth = np.clip(depth + drng.normal(0, 0.35, size=depth.shape), 0, 1)
            elif mode == "flattened":
                depth = np.full_like(depth, float(depth.mean()))
            else:
                depth = 1.0 - depth
            depth = depth.astype(np.float32)

        samples.append(SampleRecord(
            rgb=rgb, depth=depth[None], gt=gt.astype(np.uint8),
            name=f"synthetic_{i:04d}", degraded=degraded))
    return samples


# ------------------------------------------------------------------- PNG I/O


def save_png(path, array):
    """Save (H,W) in [0,1] as 8-bit grayscale or (H,W,3) / (3,H,W) as RGB."""
    arr = np.asarray(array)
    if arr.ndim == 3 and arr.shape[0] in (1, 3):
        arr = np.moveaxis(arr, 0, -1)
        if arr.shape[-1] == 1:
            arr = arr[..., 0]
    if arr.dtype != np.uint8:
        arr = np.rint(np.clip(arr, 0, 1) * 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def load_rgb(path, size=None):
    img = Image.open(path).convert("RGB")
    if size is not None:
        img = img.resize((size, size), Image.BILINEAR)
    arr = np.asarray(img, dtype=np.float32) / 255.0
    return np.moveaxis(arr, -1, 0)


def load_depth(path, size=None):
    """8- or 16-bit grayscale PNG, normalized by its bit depth."""
    img = Image.open(path)
    if img.mode not in ("L", "I", "I;16"):
        img = img.convert("L")
    if size is not None:
        img = img.resize((size, size), Image.BILINEAR)
    arr = np.asarray(img).astype(np.float32)
    scale = 65535.0 if arr.max(initial=0) > 255 else 255.0
    return (arr / scale)[None]


def load_gt(path, size=None):
    img = Image.open(path).convert("L")
    if size is not None:
        img = img.resize((size, size), Image.NEAREST)
    return (np.asarray(img) > 127).astype(np.uint8)


def load_directory(root, size):
    """Load samples from root/{rgb,depth,gt}/<stem>.png with matching stems."""
    rgb_dir = os.path.join(root, "rgb")
    depth_dir = os.path.join(root, "depth")
    gt_dir = os.path.join(root, "gt")
    for d in (rgb_dir, depth_dir):
        if not os.path.isdir(d):
            raise FileNotFoundError(f"expected directory {d}")
    has_gt = os.path.isdir(gt_dir)
    samples = []
    for fname in sorted(os.listdir(rgb_dir)):
        stem, ext = os.path.splitext(fname)
        if ext.lower() != ".png":
            continue
        depth_path = os.path.join(depth_dir, fname)
        if not os.path.exists(depth_path):
            raise FileNotFoundError(f"missing depth map for {stem}")
        gt = None
        if has_gt:
            gt_path = os.path.join(gt_dir, fname)
            if os.path.exists(gt_path):
                gt = load_gt(gt_path, size)
        samples.append(SampleRecord(
            rgb=load_rgb(os.path.join(rgb_dir, fname), size),
            depth=load_depth(depth_path, size),
            gt=gt, name=stem))
    if not samples:
        raise FileNotFoundError(f"no PNG samples found under {root}")
    return samples


def save_dataset(samples, out_dir):
    for sub in ("rgb", "depth", "gt"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)
    for s in samples:
        save_png(os.path.join(out_dir, "rgb", s.name + ".png"), s.rgb)
        save_png(os.path.join(out_dir, "depth", s.name + ".png"), s.depth)
        save_png(os.path.join(out_dir, "gt", s.name + ".png"), s.gt.astype(np.float32))
