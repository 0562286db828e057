"""SLIC superpixel segmentation and superpixel mask groups.

RGB images are clustered in CIELAB + xy space; depth maps use raw
intensity + xy with the same compactness term. Everything here is
deterministic: fixed seed grid, fixed scan orders, index tie-breaking.
"""

from collections import deque
from dataclasses import dataclass, field

import numpy as np


@dataclass
class SuperpixelLabelMap:
    labels: np.ndarray  # (H, W) int32 in [0, n_actual)
    n_actual: int
    source: str  # "rgb" or "depth"


@dataclass
class MaskGroup:
    masks: np.ndarray  # (n_slots, H, W) uint8 binary, channels >= n_actual are zero
    n_actual: int
    soft_masks: np.ndarray = field(default=None)  # (n_slots, h, w) float32 coverage


def rgb_to_lab(rgb):
    """sRGB in [0,1] (H,W,3) -> CIELAB (D65)."""
    rgb = np.asarray(rgb, dtype=np.float64)
    lin = np.where(rgb > 0.04045, ((rgb + 0.055) / 1.055) ** 2.4, rgb / 12.92)
    m = np.array([[0.4124564, 0.3575761, 0.1804375],
                  [0.2126729, 0.7151522, 0.0721750],
                  [0.0193339, 0.1191920, 0.9503041]])
    xyz = lin @ m.T
    white = np.array([0.95047, 1.0, 1.08883])
    t = xyz / white
    f = np.where(t > (6 / 29) ** 3, np.cbrt(t), t / (3 * (6 / 29) ** 2) + 4 / 29)
    lab = np.empty_like(xyz)
    lab[..., 0] = 116 * f[..., 1] - 16
    lab[..., 1] = 500 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200 * (f[..., 1] - f[..., 2])
    return lab


def _seed_grid(h, w, n):
    """Seed centres on an ny x nx grid with ny*nx <= n, pixel-centre convention."""
    ny = max(1, int(round(np.sqrt(n * h / w))))
    ny = min(ny, n)
    nx = max(1, n // ny)
    step_y = h / ny
    step_x = w / nx
    ys = (np.arange(ny) + 0.5) * step_y - 0.5
    xs = (np.arange(nx) + 0.5) * step_x - 0.5
    cy, cx = np.meshgrid(ys, xs, indexing="ij")
    return np.stack([cy.ravel(), cx.ravel()], axis=1), step_y, step_x


def _perturb_seeds(seeds, feat):
    """Move each seed within its 3x3 neighbourhood to a strictly lower gradient."""
    h, w = feat.shape[:2]
    gy = np.zeros((h, w))
    gx = np.zeros((h, w))
    gy[1:-1] = ((feat[2:] - feat[:-2]) ** 2).sum(axis=-1)
    gx[:, 1:-1] = ((feat[:, 2:] - feat[:, :-2]) ** 2).sum(axis=-1)
    grad = gy + gx
    out = seeds.copy()
    for idx, (cy, cx) in enumerate(seeds):
        iy = int(np.clip(round(cy), 0, h - 1))
        ix = int(np.clip(round(cx), 0, w - 1))
        best = grad[iy, ix]
        by, bx = iy, ix
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                y, x = iy + dy, ix + dx
                if 0 <= y < h and 0 <= x < w and grad[y, x] < best:
                    best = grad[y, x]
                    by, bx = y, x
        if (by, bx) != (iy, ix):
            out[idx] = (by, bx)
    return out


def slic_segment(image, n_superpixels, compactness=10.0, iterations=10):
    """Segment an RGB (H,W,3 in [0,1]) or depth (H,W) image into superpixels."""
    image = np.asarray(image)
    if image.ndim == 3 and image.shape[2] == 3:
        feat = rgb_to_lab(image)
        source = "rgb"
    elif image.ndim == 2:
        feat = image.astype(np.float64)[..., None]
        source = "depth"
    else:
        raise ValueError(f"expected HxWx3 RGB or HxW depth, got shape {image.shape}")
    h, w = feat.shape[:2]
    if h == 0 or w == 0:
        raise ValueError("empty image")
    if n_superpixels < 1:
        raise ValueError("n_superpixels must be >= 1")
    if n_superpixels > h * w:
        raise ValueError(f"n_superpixels={n_superpixels} exceeds pixel count {h * w}")
    if compactness <= 0:
        raise ValueError("compactness must be positive")

    if n_superpixels == 1:
        return SuperpixelLabelMap(np.zeros((h, w), dtype=np.int32), 1, source)

    seeds, step_y, step_x = _seed_grid(h, w, n_superpixels)
    seeds = _perturb_seeds(seeds, feat)
    k = len(seeds)
    s = np.sqrt(step_y * step_x)
    ratio = (compactness / s) ** 2

    centers_xy = seeds.astype(np.float64)
    iy = np.clip(np.round(centers_xy[:, 0]).astype(int), 0, h - 1)
    ix = np.clip(np.round(centers_xy[:, 1]).astype(int), 0, w - 1)
    centers_feat = feat[iy, ix]

    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    hy = int(np.ceil(step_y))
    hx = int(np.ceil(step_x))
    labels = np.full((h, w), -1, dtype=np.int32)

    for _ in range(iterations):
        best = np.full((h, w), np.inf)
        labels.fill(-1)
        for ci in range(k):
            cy, cx = centers_xy[ci]
            y0 = max(0, int(np.floor(cy)) - hy)
            y1 = min(h, int(np.ceil(cy)) + hy + 1)
            x0 = max(0, int(np.floor(cx)) - hx)
            x1 = min(w, int(np.ceil(cx)) + hx + 1)
            fpatch = feat[y0:y1, x0:x1]
            dc = ((fpatch - centers_feat[ci]) ** 2).sum(axis=-1)
            ds = (yy[y0:y1, x0:x1] - cy) ** 2 + (xx[y0:y1, x0:x1] - cx) ** 2
            d = dc + ratio * ds
            bpatch = best[y0:y1, x0:x1]
            upd = d < bpatch
            bpatch[upd] = d[upd]
            labels[y0:y1, x0:x1][upd] = ci
        # orphans outside every search window: assign by full distance pass
        if (labels < 0).any():
            miss = labels < 0
            my, mx = np.nonzero(miss)
            dall = ((feat[my, mx, None, :] - centers_feat[None, :, :]) ** 2).sum(-1) \
                + ratio * ((my[:, None] - centers_xy[None, :, 0]) ** 2
                           + (mx[:, None] - centers_xy[None, :, 1]) ** 2)
            labels[my, mx] = dall.argmin(axis=1)
        # update centres
        flat = labels.ravel()
        counts = np.bincount(flat, minlength=k).astype(np.float64)
        occupied = counts > 0
        sum_y = np.bincount(flat, weights=yy.ravel(), minlength=k)
        sum_x = np.bincount(flat, weights=xx.ravel(), minlength=k)
        centers_xy[occupied, 0] = sum_y[occupied] / counts[occupied]
        centers_xy[occupied, 1] = sum_x[occupied] / counts[occupied]
        for c in range(feat.shape[2]):
            sc = np.bincount(flat, weights=feat[..., c].ravel(), minlength=k)
            centers_feat[occupied, c] = sc[occupied] / counts[occupied]

    labels = _enforce_connectivity(labels, min_size=max(1, (h * w) // (4 * n_superpixels)))
    labels = _cap_component_count(labels, n_superpixels)
    n_actual = int(labels.max()) + 1
    return SuperpixelLabelMap(labels, n_actual, source)


def _cap_component_count(labels, n_max):
    """Merge the smallest components into their dominant neighbours.

    Connectivity enforcement can split one cluster into several large
    components, pushing the label count past the requested number; the
    downstream mask stack has exactly n_max channels, so the invariant
    n_actual <= n_max must hold.
    """
    while True:
        n = int(labels.max()) + 1
        if n <= n_max:
            return labels
        counts = np.bincount(labels.ravel(), minlength=n)
        smallest = int(counts.argmin())
        # shared-boundary length with each other component (4-connectivity)
        adj = np.zeros(n, dtype=np.int64)
        for a, b in ((labels[:-1, :], labels[1:, :]),
                     (labels[:, :-1], labels[:, 1:])):
            sel = (a == smallest) & (b != smallest)
            np.add.at(adj, b[sel], 1)
            sel = (b == smallest) & (a != smallest)
            np.add.at(adj, a[sel], 1)
        target = int(adj.argmax())  # ties break toward the lower label
        labels = np.where(labels == smallest, target, labels)
        uniq = np.unique(labels)
        remap = np.zeros(uniq.max() + 1, dtype=np.int32)
        remap[uniq] = np.arange(len(uniq), dtype=np.int32)
        labels = remap[labels]


def _enforce_connectivity(labels, min_size):
    """Relabel connected components; absorb fragments below min_size into a neighbour."""
    h, w = labels.shape
    out = np.full((h, w), -1, dtype=np.int32)
    next_label = 0
    for sy in range(h):
        for sx in range(w):
            if out[sy, sx] >= 0:
                continue
            src = labels[sy, sx]
            # label of an already-relabelled 4-neighbour, for potential absorption
            adjacent = -1
            if sy > 0 and out[sy - 1, sx] >= 0:
                adjacent = out[sy - 1, sx]
            elif sx > 0 and out[sy, sx - 1] >= 0:
                adjacent = out[sy, sx - 1]
            component = [(sy, sx)]
            out[sy, sx] = next_label
            q = deque(component)
            while q:
                y, x = q.popleft()
                for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                    ny, nx = y + dy, x + dx
                    if 0 <= ny < h and 0 <= nx < w and out[ny, nx] < 0 and labels[ny, nx] == src:
                        out[ny, nx] = next_label
                        component.append((ny, nx))
                        q.append((ny, nx))
            if len(component) < min_size and adjacent >= 0:
                for y, x in component:
                    out[y, x] = adjacent
            else:
                next_label += 1
    # compact labels (absorption can leave gaps when adjacent == a later id)
    uniq = np.unique(out)
    remap = np.full(uniq.max() + 1, -1, dtype=np.int32)
    remap[uniq] = np.arange(len(uniq), dtype=np.int32)
    return remap[out]


def build_mask_group(label_map, n_slots):
    """Binary indicator stack, one channel per superpixel, zero-padded to n_slots."""
    if n_slots < label_map.n_actual:
        raise ValueError(
            f"n_slots={n_slots} smaller than n_actual={label_map.n_actual}")
    h, w = label_map.labels.shape
    masks = np.zeros((n_slots, h, w), dtype=np.uint8)
    for i in range(label_map.n_actual):
        masks[i] = label_map.labels == i
    return MaskGroup(masks=masks, n_actual=label_map.n_actual)


def downsample_mask_group(mg, target_h, target_w):
    """Fill soft_masks with fractional-coverage average pooling of the binary stack."""
    n, h, w = mg.masks.shape
    if target_h > h or target_w > w:
        raise ValueError(f"target {target_h}x{target_w} larger than source {h}x{w}")
    soft = np.empty((n, target_h, target_w), dtype=np.float32)
    y_edges = [( (i * h) // target_h, -(-((i + 1) * h) // target_h)) for i in range(target_h)]
    x_edges = [( (j * w) // target_w, -(-((j + 1) * w) // target_w)) for j in range(target_w)]
    m = mg.masks.astype(np.float32)
    for i, (y0, y1) in enumerate(y_edges):
        for j, (x0, x1) in enumerate(x_edges):
            soft[:, i, j] = m[:, y0:y1, x0:x1].mean(axis=(1, 2))
    return MaskGroup(masks=mg.masks, n_actual=mg.n_actual, soft_masks=soft)


def label_visualization(label_map, rng_seed=0):
    """Colour-coded label image (H,W,3 uint8) for the `superpixels` subcommand."""
    rng = np.random.default_rng(rng_seed)
    colors = rng.integers(40, 255, size=(label_map.n_actual, 3), dtype=np.uint8)
    return colors[label_map.labels]
