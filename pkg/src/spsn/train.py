"""Training loop: cosine-annealed Adam over the combined objective."""

import math
import os

import numpy as np

from .checkpoint import save_checkpoint
from .losses import iou_loss, psnm_loss, rsm_loss, total_loss
from .model import SPSNModel
from .psnm import auxiliary_maps


def cosine_lr(epoch, total_epochs, lr_max, lr_min):
    """lr(e) = lr_min + 0.5 (lr_max - lr_min) (1 + cos(pi e / E))."""
    span = max(total_epochs - 1, 1)
    return lr_min + 0.5 * (lr_max - lr_min) * (1 + math.cos(math.pi * epoch / span))


class TrainingDiverged(RuntimeError):
    pass


def train(config, dataset, out_dir, max_steps=None, log=print):
    """Train a fresh model; returns (model, checkpoint path, loss CSV rows)."""
    if not dataset:
        raise ValueError("training dataset is empty")
    for s in dataset:
        if s.gt is None:
            raise ValueError(f"sample {s.name} has no ground truth mask")
    os.makedirs(out_dir, exist_ok=True)

    model = SPSNModel(config)
    model.set_training(True)

    # SLIC is deterministic per image: segment each sample once up front
    cached_masks = [model.segment(s.rgb, s.depth) for s in dataset]

    order_rng = np.random.default_rng(config.seed + 1)
    csv_rows = [None]  # header slot filled below
    from .losses import LossReport
    csv_rows[0] = LossReport.CSV_HEADER

    step = 0
    n = len(dataset)
    stop = False
    for epoch in range(config.epochs):
        lr = cosine_lr(epoch, config.epochs, config.lr_max, config.lr_min)
        perm = order_rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = perm[start:start + config.batch_size]
            model.store.zero_grad()
            total = None
            acc = np.zeros(4)
            for idx in batch:
                sample = dataset[idx]
                mg_rgb, mg_depth = cached_masks[idx]
                pred, inter = model.forward(sample.rgb, sample.depth, mg_rgb, mg_depth)
                l_mask = iou_loss(pred, sample.gt)
                aux_r = auxiliary_maps(inter.s_pred_rgb, mg_rgb, sample.gt)
                aux_d = auxiliary_maps(inter.s_pred_depth, mg_depth, sample.gt)
                l_pr = psnm_loss(aux_r.am_pred, aux_r.am_gt)
                l_pd = psnm_loss(aux_d.am_pred, aux_d.am_gt)
                l_rsm = rsm_loss(inter.rely)
                loss, report = total_loss(l_mask, l_pr, l_pd, l_rsm, config.lambdas)
                if not math.isfinite(report.total):
                    raise TrainingDiverged(
                        f"non-finite loss at step {step} (sample {sample.name}): {report}")
                acc += (report.l_mask, report.l_psnm_rgb, report.l_psnm_depth, report.l_rsm)
                scaled = loss * (1.0 / len(batch))
                total = scaled if total is None else total + scaled
            total.backward()
            model.store.adam_step(lr, betas=config.adam_betas, eps=config.adam_eps)

            acc /= len(batch)
            lm, lpr, lpd, lrs = acc
            tot = (config.lambdas[0] * lm + config.lambdas[1] * (lpr + lpd)
                   + config.lambdas[2] * lrs)
            csv_rows.append(f"{step},{epoch},{lr:.10g},{lm:.8g},{lpr:.8g},"
                            f"{lpd:.8g},{lrs:.8g},{tot:.8g}")
            step += 1
            if max_steps is not None and step >= max_steps:
                stop = True
                break
        if log and (epoch % 10 == 0 or epoch == config.epochs - 1 or stop):
            log(f"epoch {epoch}: lr={lr:.3g} " + csv_rows[-1])
        if stop:
            break

    csv_path = os.path.join(out_dir, "loss_curve.csv")
    with open(csv_path, "w") as fh:
        fh.write("\n".join(csv_rows) + "\n")
    ckpt_path = os.path.join(out_dir, "model.spsn")
    save_checkpoint(ckpt_path, model.store, config)
    return model, ckpt_path, csv_rows


def predict_dataset(model, dataset, cached_masks=None):
    """Inference over a dataset; never touches ground truth."""
    model.set_training(False)
    preds = []
    relys = []
    for i, s in enumerate(dataset):
        masks = cached_masks[i] if cached_masks else (None, None)
        pred, inter = model.forward(s.rgb, s.depth, *masks)
        preds.append(np.asarray(pred.data))
        relys.append(np.asarray(inter.rely.pred.data).copy())
    return preds, np.array(relys)
