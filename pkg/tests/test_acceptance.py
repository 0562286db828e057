"""Acceptance suite: one test per top-level criterion.

Each test name states its criterion; the pytest -v pass/fail line for that
test is the per-criterion verdict. The heavier fixtures (a 300-step training
run, the superpixel-count sweep) are shared across criteria.
"""

import os
import time

import numpy as np
import pytest

from spsn import autodiff as ad
from spsn.autodiff import Tensor, grad_check
from spsn.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from spsn.cli import main as cli_main
from spsn.config import load_config
from spsn.data import generate_synthetic
from spsn.losses import (Decoder, bce_loss, iou_loss, rsm_loss, total_loss)
from spsn.metrics import evaluate, f_beta
from spsn.model import SPSNModel
from spsn.nn import ParamStore
from spsn.pgm import PrototypeBlock, build_prototype_block
from spsn.psnm import (ATTENTION_DIM, LEAKY_SLOPE, AttentionParams,
                       SamplerParams, SamplerVector, attention_enhance,
                       auxiliary_maps, correlation_maps, edgeconv, knn_graph,
                       sample_scores)
from spsn.rsm import (FusedRGBD, RGBDFusion, RelianceNet, RelianceWeights,
                      apply_reliance, pseudo_gt, rsm_ground_truth)
from spsn.slic import MaskGroup, build_mask_group, slic_segment
from spsn.train import predict_dataset, train


def _rng(seed):
    return np.random.default_rng(seed)


def _block(n, seed, dtype=np.float64):
    protos = _rng(seed).normal(size=(n, 128)).astype(dtype)
    return PrototypeBlock(protos=Tensor(protos), valid=np.ones(n, dtype=bool),
                          modality="rgb")


# --------------------------------------------------------------------------
# criterion 1: gradient integrity of every composed module forward (64-bit)
# --------------------------------------------------------------------------


def test_criterion_1_gradient_integrity():
    t0 = time.monotonic()
    n_slots = 6
    store = ParamStore()
    rng = _rng(100)
    kw = dict(rng=rng, dtype=np.float64)

    # prototype pooling
    soft = np.abs(_rng(101).normal(size=(n_slots, 4, 4)))
    mg = MaskGroup(masks=None, n_actual=n_slots)
    mg.soft_masks = soft
    err = grad_check(
        lambda t: (build_prototype_block(t, mg).protos ** 2).sum(),
        Tensor(_rng(102).normal(size=(128, 4, 4))))
    assert err < 1e-3, f"prototype pooling gradient error {err}"

    # attention enhancement
    attn = AttentionParams(store, "attn", **kw)
    valid = np.ones(n_slots, dtype=bool)

    def f_attn(t):
        pb = PrototypeBlock(protos=t, valid=valid, modality="rgb")
        return (attention_enhance(pb, attn).protos ** 2).sum()

    err = grad_check(f_attn, Tensor(_rng(103).normal(size=(n_slots, 128))))
    assert err < 1e-3, f"attention gradient error {err}"

    # edge-graph sampler (fixed neighbour table keeps the function smooth)
    sampler = SamplerParams(store, "sampler", a_k=2, **kw)
    sampler.set_training(False)
    base = _block(n_slots, 104)
    nb = knn_graph(base, 2)

    def f_edge(t):
        pb = PrototypeBlock(protos=t, valid=valid, modality="rgb")
        out = edgeconv(pb, nb, sampler.edge_layers[0])
        return (ad.sigmoid(sampler.mlp_f(out.protos)) ** 2).sum()

    err = grad_check(f_edge, Tensor(base.protos.data.copy()))
    assert err < 1e-3, f"sampler gradient error {err}"

    # correlation maps
    e8 = Tensor(_rng(105).normal(size=(128, 4, 4)))
    e16 = Tensor(_rng(106).normal(size=(128, 2, 2)))
    e32 = Tensor(_rng(107).normal(size=(128, 1, 1)))

    def f_corr(t):
        pb = PrototypeBlock(protos=t, valid=valid, modality="rgb")
        cp = correlation_maps(pb, e8, e16, e32)
        return (cp.g8 ** 2).sum() + (cp.g16 ** 2).sum() + (cp.g32 ** 2).sum()

    err = grad_check(f_corr, Tensor(_rng(108).normal(size=(n_slots, 128))))
    assert err < 1e-3, f"correlation gradient error {err}"

    # fusion + reliance + reweighting
    fusion = RGBDFusion(store, "fusion", n_slots, **kw)
    reliance = RelianceNet(store, "reliance", n_slots, spatial=8, **kw)
    reliance.set_training(False)
    from spsn.psnm import CorrelationPyramid
    depth_cp = CorrelationPyramid(
        g8=Tensor(_rng(109).normal(size=(n_slots, 8, 8))),
        g16=Tensor(_rng(110).normal(size=(n_slots, 4, 4))),
        g32=Tensor(_rng(111).normal(size=(n_slots, 2, 2))))

    def f_rsm(t):
        rgb_cp = CorrelationPyramid(g8=t, g16=depth_cp.g16, g32=depth_cp.g32)
        fused = fusion(rgb_cp, depth_cp)
        w = reliance(fused)
        return (apply_reliance(fused, w).f_rsm ** 2).sum()

    err = grad_check(f_rsm, Tensor(_rng(112).normal(size=(n_slots, 8, 8))))
    assert err < 1e-3, f"reliance gradient error {err}"

    # decoder
    decoder = Decoder(store, "decoder", 1, **kw)
    decoder.set_training(False)
    err = grad_check(
        lambda t: (decoder(FusedRGBD(f_rsm=t, n_slots=1)) ** 2).sum(),
        Tensor(_rng(113).normal(size=(2, 2, 2))))
    assert err < 1e-3, f"decoder gradient error {err}"

    # the three losses
    gt = (_rng(114).random((5, 5)) > 0.5).astype(np.float64)
    point = Tensor(_rng(115).random((5, 5)) * 0.8 + 0.1)
    assert grad_check(lambda t: iou_loss(t, gt), point) < 1e-3
    assert grad_check(lambda t: bce_loss(t, gt), point) < 1e-3
    assert grad_check(
        lambda t: rsm_loss(RelianceWeights(pred=t, gt=np.array([0.75, 0.25]))),
        Tensor(np.array([0.6, 0.4]))) < 1e-3

    elapsed = time.monotonic() - t0
    assert elapsed < 60.0, f"gradient suite took {elapsed:.1f}s"


# --------------------------------------------------------------------------
# criterion 2: closed-form equation oracles
# --------------------------------------------------------------------------


def test_criterion_2_equation_oracles():
    # attention vs dense numpy computation
    store = ParamStore()
    attn = AttentionParams(store, "attn", rng=_rng(200), dtype=np.float64)
    pb = _block(6, 201)

    def mlp(m, x):
        h = np.maximum(x @ m.fc1.w.data + m.fc1.b.data, 0.0)
        return h @ m.fc2.w.data + m.fc2.b.data

    x = pb.protos.data
    q, k, v = mlp(attn.mlp_q, x), mlp(attn.mlp_k, x), mlp(attn.mlp_v, x)
    scores = q @ k.T / np.sqrt(ATTENTION_DIM)
    scores -= scores.max(axis=1, keepdims=True)
    w = np.exp(scores)
    w /= w.sum(axis=1, keepdims=True)
    expect = x + mlp(attn.mlp_w, w @ v)
    got = attention_enhance(pb, attn).protos.data
    assert np.abs(got - expect).max() <= 1e-5

    # edge aggregation vs nested-loop enumeration
    sampler = SamplerParams(store, "sampler", a_k=3, rng=_rng(202), dtype=np.float64)
    sampler.set_training(False)
    layer = sampler.edge_layers[0]
    nb = knn_graph(pb, 3)
    got = edgeconv(pb, nb, layer).protos.data
    expect = np.zeros_like(x)
    for i in range(6):
        feats = []
        for j in nb[i]:
            e = np.concatenate([x[i], x[j] - x[i]]) @ layer.fc.w.data + layer.fc.b.data
            e = ((e - layer.bn.running_mean) / np.sqrt(layer.bn.running_var + 1e-5)
                 * layer.bn.gamma.data + layer.bn.beta.data)
            feats.append(np.where(e > 0, e, LEAKY_SLOPE * e))
        expect[i] = np.max(feats, axis=0)
    assert np.abs(got - expect).max() <= 1e-5

    # correlation maps vs per-pixel dot products
    e8 = _rng(203).normal(size=(128, 3, 3))
    cp = correlation_maps(pb, Tensor(e8), Tensor(e8[:, :2, :2].copy()),
                          Tensor(e8[:, :1, :1].copy()))
    for i in range(6):
        for yy in range(3):
            for xx in range(3):
                assert abs(cp.g8.data[i, yy, xx] - x[i] @ e8[:, yy, xx]) <= 1e-5

    # reliance targets: distances 1 and 3 give weights (0.75, 0.25) exactly
    pgm = np.array([[[0.0, 1.0]]])
    fused = FusedRGBD(f_rsm=Tensor(np.concatenate([pgm + 1.0, pgm - 3.0])), n_slots=1)
    assert np.array_equal(pseudo_gt(fused), pgm[0])
    gt = rsm_ground_truth(fused)
    assert gt[0] == 0.75 and gt[1] == 0.25


# --------------------------------------------------------------------------
# criterion 3: bit-exact permutation equivariance of the sampler scores
# --------------------------------------------------------------------------


def test_criterion_3_permutation_equivariance():
    store = ParamStore()
    sampler = SamplerParams(store, "sampler", a_k=4, rng=_rng(300))
    sampler.set_training(False)
    rng = _rng(301)
    for trial in range(50):
        n = int(rng.integers(8, 20))
        protos = rng.normal(size=(n, 128)).astype(np.float32)
        d2 = ((protos[:, None] - protos[None]) ** 2).sum(-1)
        upper = d2[np.triu_indices(n, k=1)]
        assert len(np.unique(upper)) == len(upper), "pairwise distance tie; reseed"
        pb = PrototypeBlock(protos=Tensor(protos), valid=np.ones(n, dtype=bool),
                            modality="rgb")
        base = sample_scores(pb, sampler).scores.data
        perm = rng.permutation(n)
        pb_p = PrototypeBlock(protos=Tensor(protos[perm].copy()),
                              valid=pb.valid[perm], modality="rgb")
        got = sample_scores(pb_p, sampler).scores.data
        assert np.array_equal(got, base[perm]), f"trial {trial} not bit-exact"


# --------------------------------------------------------------------------
# criterion 4: partition and auxiliary-map properties on 100 synthetic images
# --------------------------------------------------------------------------


def test_criterion_4_partition_and_auxiliary_maps():
    samples = generate_synthetic(100, 64, seed=400, depth_degrade=0.0)
    rng = _rng(401)
    for s in samples:
        lm = slic_segment(np.moveaxis(s.rgb, 0, -1), 25)
        labels = lm.labels
        # partition: every pixel labelled, every label non-empty, count bounded
        assert labels.min() == 0
        assert lm.n_actual <= 25
        assert set(np.unique(labels)) == set(range(lm.n_actual))

        mg = build_mask_group(lm, 25)
        scores_arr = rng.random(25).astype(np.float32)
        sv = SamplerVector(scores=Tensor(scores_arr),
                           valid=np.arange(25) < lm.n_actual)
        am = auxiliary_maps(sv, mg, s.gt)

        # ground-truth map vs an independent overlap-counting oracle
        expect_gt = np.zeros_like(s.gt)
        for i in range(lm.n_actual):
            region = labels == i
            if s.gt[region].sum() / region.sum() > 0.5:
                expect_gt[region] = 1
        assert np.array_equal(am.am_gt, expect_gt)

        # prediction map is constant on each superpixel, equal to its score
        pred = am.am_pred.data
        for i in range(lm.n_actual):
            vals = pred[labels == i]
            assert (vals == scores_arr[i]).all()

    # strict > 0.5 at exactly half coverage: two-channel hand construction
    masks = np.zeros((2, 2, 2), dtype=np.uint8)
    masks[0, 0] = 1
    masks[1, 1] = 1
    mg = MaskGroup(masks=masks, n_actual=2)
    gt = np.array([[1, 0], [1, 1]], dtype=np.uint8)  # overlaps: 1/2 and 2/2
    sv = SamplerVector(scores=Tensor(np.array([0.9, 0.9], dtype=np.float32)),
                       valid=np.ones(2, dtype=bool))
    am = auxiliary_maps(sv, mg, gt)
    np.testing.assert_array_equal(am.am_gt, [[0, 0], [1, 1]])


# --------------------------------------------------------------------------
# criterion 5: loss identities
# --------------------------------------------------------------------------


def test_criterion_5_loss_identities():
    gt = (_rng(500).random((16, 16)) > 0.5).astype(np.float64)
    assert iou_loss(Tensor(gt.copy()), gt).item() == 0.0

    disjoint = 1.0 - gt
    assert iou_loss(Tensor(disjoint), gt).item() == 1.0

    pred_half = Tensor(np.full((16, 16), 0.5))
    assert abs(bce_loss(pred_half, gt).item() - np.log(2.0)) <= 1e-6

    parts = (0.31, 0.17, 0.23, 0.011)
    total, report = total_loss(*[Tensor(np.asarray(v)) for v in parts],
                               lambdas=(1.0, 1.0, 10.0))
    expect = parts[0] + (parts[1] + parts[2]) + 10.0 * parts[3]
    assert abs(total.item() - expect) <= 1e-7
    assert abs(report.total - expect) <= 1e-7


# --------------------------------------------------------------------------
# criteria 6 and 7 share one 300-step desk-scale training run
# --------------------------------------------------------------------------


@pytest.fixture(scope="module")
def desk96_run(tmp_path_factory):
    cfg = load_config(preset="desk96", overrides={
        "seed": 0, "depth_degrade": 0.5, "epochs": 150})
    dataset = generate_synthetic(8, cfg.image_size, seed=cfg.seed,
                                 depth_degrade=cfg.depth_degrade)
    out = tmp_path_factory.mktemp("desk96")
    t0 = time.monotonic()
    model, ckpt_path, rows = train(cfg, dataset, str(out), max_steps=300, log=None)
    elapsed = time.monotonic() - t0
    return dict(cfg=cfg, dataset=dataset, model=model, rows=rows,
                elapsed=elapsed, out=out)


def test_criterion_6_trainability(desk96_run):
    assert desk96_run["elapsed"] < 15 * 60, \
        f"training took {desk96_run['elapsed']:.0f}s"
    final = desk96_run["rows"][-1].split(",")
    l_mask = float(final[3])
    assert l_mask < 0.15, f"final region-overlap loss {l_mask}"

    model = desk96_run["model"]
    dataset = desk96_run["dataset"]
    preds, _ = predict_dataset(model, dataset)
    rep = evaluate(preds, [s.gt for s in dataset])
    assert rep.f_beta > 0.85, f"training-set F-measure {rep.f_beta}"


def test_criterion_7_reliance_direction(desk96_run):
    model = desk96_run["model"]
    size = desk96_run["cfg"].image_size
    clean = generate_synthetic(12, size, seed=99, depth_degrade=0.0)
    degraded = generate_synthetic(12, size, seed=99, depth_degrade=1.0)
    _, rely_clean = predict_dataset(model, clean)
    _, rely_degraded = predict_dataset(model, degraded)
    mean_clean = rely_clean[:, 1].mean()
    mean_degraded = rely_degraded[:, 1].mean()
    assert mean_degraded < mean_clean, \
        f"depth reliance {mean_degraded:.4f} !< {mean_clean:.4f} on degraded input"


# --------------------------------------------------------------------------
# criterion 8: superpixel-count sweep
# --------------------------------------------------------------------------


def _run_sweep(out_dir):
    cli_main(["ablate", "--preset", "desk64", "--synthetic", "6", "--seed", "0",
              "--depth-degrade", "0", "--epochs", "30", "--ns", "4,25,100",
              "--max-steps", "40", "--out", str(out_dir)])
    rows = (out_dir / "ablation.csv").read_text().splitlines()
    return rows


def test_criterion_8_ablation_shape(tmp_path):
    rows_a = _run_sweep(tmp_path / "a")
    rows_b = _run_sweep(tmp_path / "b")
    assert rows_a == rows_b, "sweep is not deterministic"
    assert rows_a[0] == "n_superpixels,mae,f_beta"
    assert (tmp_path / "a" / "ablation.png").exists()
    scores = {int(r.split(",")[0]): float(r.split(",")[2]) for r in rows_a[1:]}
    assert set(scores) == {4, 25, 100}
    assert scores[4] < max(scores.values()), \
        f"coarsest setting ties or beats the sweep: {scores}"


# --------------------------------------------------------------------------
# criterion 9: reproducibility and serialization
# --------------------------------------------------------------------------


def test_criterion_9_reproducibility_and_serialization(tmp_path):
    cfg = load_config(preset="desk64", overrides={"seed": 0, "epochs": 2})
    dataset = generate_synthetic(3, 64, seed=0, depth_degrade=0.0)

    _, ckpt_a, rows_a = train(cfg, dataset, str(tmp_path / "a"), max_steps=4, log=None)
    _, _, rows_b = train(cfg, dataset, str(tmp_path / "b"), max_steps=4, log=None)
    assert rows_a == rows_b, "loss curves differ between identical runs"
    csv_a = (tmp_path / "a" / "loss_curve.csv").read_bytes()
    csv_b = (tmp_path / "b" / "loss_curve.csv").read_bytes()
    assert csv_a == csv_b

    # save -> load -> infer reproduces the original predictions bit for bit
    model = SPSNModel(cfg)
    load_checkpoint(ckpt_a, store=model.store, expected_config=cfg)
    model.set_training(False)
    preds_direct, _ = predict_dataset(model, dataset)

    reload_path = str(tmp_path / "re.spsn")
    save_checkpoint(reload_path, model.store, cfg)
    model2 = SPSNModel(cfg)
    load_checkpoint(reload_path, store=model2.store, expected_config=cfg)
    model2.set_training(False)
    preds_reload, _ = predict_dataset(model2, dataset)
    for a, b in zip(preds_direct, preds_reload):
        assert np.array_equal(a, b)

    # corrupted checkpoints are rejected without touching the store
    data = open(ckpt_a, "rb").read()
    bad = str(tmp_path / "bad.spsn")
    open(bad, "wb").write(data[:-7])
    model3 = SPSNModel(cfg)
    before = {k: v.copy() for k, v in model3.store.named_arrays().items()}
    with pytest.raises(CheckpointError):
        load_checkpoint(bad, store=model3.store)
    for k, v in model3.store.named_arrays().items():
        assert np.array_equal(v, before[k])

    open(bad, "wb").write(b"NOPE" + data[4:])
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)
