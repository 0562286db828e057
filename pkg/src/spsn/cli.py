"""Command line interface: train / infer / eval / synth / superpixels / ablate."""

import argparse
import os
import sys

import numpy as np

from . import checkpoint as ckpt
from . import data, metrics
from .config import load_config
from .model import SPSNModel
from .slic import label_visualization, slic_segment
from .train import predict_dataset, train


def _add_config_args(p):
    p.add_argument("--config", help="config JSON file")
    p.add_argument("--preset", help="config preset (paper, desk96, desk64)")
    p.add_argument("--image-size", type=int, dest="image_size")
    p.add_argument("--n-superpixels", type=int, dest="n_superpixels")
    p.add_argument("--a-k", type=int, dest="a_k")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--seed", type=int)
    p.add_argument("--lr-max", type=float, dest="lr_max")
    p.add_argument("--lr-min", type=float, dest="lr_min")
    p.add_argument("--depth-degrade", type=float, dest="depth_degrade")


def _config_from(args):
    keys = ("image_size", "n_superpixels", "a_k", "epochs", "batch_size",
            "seed", "lr_max", "lr_min", "depth_degrade")
    overrides = {k: getattr(args, k, None) for k in keys}
    return load_config(path=args.config, preset=args.preset, overrides=overrides)


def _load_data(args, cfg):
    if args.synthetic is not None:
        return data.generate_synthetic(args.synthetic, cfg.image_size,
                                       seed=cfg.seed, depth_degrade=cfg.depth_degrade)
    if args.data is None:
        raise SystemExit("provide --data DIR or --synthetic N")
    return data.load_directory(args.data, cfg.image_size)


def cmd_train(args):
    cfg = _config_from(args)
    dataset = _load_data(args, cfg)
    _, ckpt_path, _ = train(cfg, dataset, args.out, max_steps=args.max_steps)
    print(f"checkpoint written to {ckpt_path}")


def cmd_infer(args):
    cfg, _ = ckpt.load_checkpoint(args.ckpt)
    model = SPSNModel(cfg)
    ckpt.load_checkpoint(args.ckpt, store=model.store, expected_config=cfg)
    model.set_training(False)
    rgb = data.load_rgb(args.rgb, cfg.image_size)
    depth = data.load_depth(args.depth, cfg.image_size)
    pred, inter = model.forward(rgb, depth)
    data.save_png(args.out, np.asarray(pred.data))
    print(f"saliency map written to {args.out}")
    if args.dump_debug:
        _dump_debug(args.dump_debug, inter)


def _dump_debug(out_dir, inter):
    from .rsm import pseudo_gt
    os.makedirs(out_dir, exist_ok=True)
    for key, s, mg in (("rgb", inter.s_pred_rgb, inter.mask_group_rgb),
                       ("depth", inter.s_pred_depth, inter.mask_group_depth)):
        scores = np.asarray(s.scores.data)
        np.savetxt(os.path.join(out_dir, f"s_pred_{key}.csv"), scores,
                   delimiter=",", header="score", comments="")
        am = (scores[:, None, None] * mg.masks).sum(axis=0)
        data.save_png(os.path.join(out_dir, f"am_pred_{key}.png"), am)
    data.save_png(os.path.join(out_dir, "pseudo_gt.png"), pseudo_gt(inter.fused))
    with open(os.path.join(out_dir, "reliance.csv"), "w") as fh:
        fh.write("rely_r,rely_d,gt_r,gt_d\n")
        r = inter.rely
        fh.write(f"{r.rely_r:.8g},{r.rely_d:.8g},{r.gt_r:.8g},{r.gt_d:.8g}\n")


def cmd_eval(args):
    cfg, _ = ckpt.load_checkpoint(args.ckpt)
    model = SPSNModel(cfg)
    ckpt.load_checkpoint(args.ckpt, store=model.store, expected_config=cfg)
    dataset = _load_data(args, cfg)
    if any(s.gt is None for s in dataset):
        raise SystemExit("evaluation requires ground truth masks")
    preds, _ = predict_dataset(model, dataset)
    report = metrics.evaluate(preds, [s.gt for s in dataset], cfg.f_beta_squared)
    with open(args.report, "w") as fh:
        fh.write("\n".join(report.csv_rows()) + "\n")
    print(f"mae={report.mae:.4f} f_beta={report.f_beta:.4f} -> {args.report}")


def cmd_synth(args):
    cfg = _config_from(args)
    samples = data.generate_synthetic(args.n, cfg.image_size, seed=cfg.seed,
                                      depth_degrade=cfg.depth_degrade)
    data.save_dataset(samples, args.out)
    print(f"wrote {len(samples)} samples to {args.out}")


def cmd_superpixels(args):
    image = data.load_rgb(args.image)
    labels = slic_segment(np.moveaxis(image, 0, -1), args.n)
    data.save_png(args.out, label_visualization(labels))
    print(f"{labels.n_actual} superpixels -> {args.out}")


def cmd_ablate(args):
    cfg = _config_from(args)
    ns_list = [int(x) for x in args.ns.split(",")]
    dataset = _load_data(args, cfg)
    rows = ["n_superpixels,mae,f_beta"]
    results = []
    for ns in ns_list:
        run_cfg = load_config(overrides=None)
        run_cfg.__dict__.update(cfg.__dict__)
        run_cfg.n_superpixels = ns
        run_cfg.a_k = min(cfg.a_k, max(1, ns - 2))
        run_cfg.validate()
        out_dir = os.path.join(args.out, f"ns_{ns}")
        model, _, _ = train(run_cfg, dataset, out_dir, max_steps=args.max_steps,
                            log=None)
        cached = [model.segment(s.rgb, s.depth) for s in dataset]
        preds, _ = predict_dataset(model, dataset, cached)
        rep = metrics.evaluate(preds, [s.gt for s in dataset], cfg.f_beta_squared)
        rows.append(f"{ns},{rep.mae:.8g},{rep.f_beta:.8g}")
        results.append((ns, rep.mae, rep.f_beta))
        print(rows[-1])
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "ablation.csv")
    with open(csv_path, "w") as fh:
        fh.write("\n".join(rows) + "\n")
    _plot_ablation(results, os.path.join(args.out, "ablation.png"))
    print(f"ablation table -> {csv_path}")


def _plot_ablation(results, path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    ns = [r[0] for r in results]
    fig, ax1 = plt.subplots(figsize=(6, 4))
    ax1.plot(ns, [r[1] for r in results], "o-", color="tab:red", label="MAE")
    ax1.set_xlabel("number of superpixels")
    ax1.set_ylabel("MAE", color="tab:red")
    ax2 = ax1.twinx()
    ax2.plot(ns, [r[2] for r in results], "s-", color="tab:blue", label="F-beta")
    ax2.set_ylabel("F-beta", color="tab:blue")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def main(argv=None):
    parser = argparse.ArgumentParser(prog="spsn",
                                     description="superpixel prototype sampling network")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on a directory or synthetic data")
    _add_config_args(p)
    p.add_argument("--data", help="dataset directory with rgb/ depth/ gt/")
    p.add_argument("--synthetic", type=int, help="generate N synthetic samples")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--max-steps", type=int, dest="max_steps")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="run inference on one RGB-D pair")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--rgb", required=True)
    p.add_argument("--depth", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-debug", dest="dump_debug")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data")
    p.add_argument("--synthetic", type=int)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="write a synthetic dataset to disk")
    _add_config_args(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("superpixels", help="visualize SLIC labels for an image")
    p.add_argument("--image", required=True)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_superpixels)

    p = sub.add_parser("ablate", help="superpixel-count sweep")
    _add_config_args(p)
    p.add_argument("--ns", required=True, help="comma-separated superpixel counts")
    p.add_argument("--data")
    p.add_argument("--synthetic", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--max-steps", type=int, dest="max_steps")
    p.set_defaults(func=cmd_ablate)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
