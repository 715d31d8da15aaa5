"""End-to-end acceptance criteria; each test prints one PASS/FAIL line.

Criterion 8 needs a CDnet2014 video on disk: point ``ADNN_CDNET_VIDEO`` at
a directory holding ``input/``, ``groundtruth/`` and ``temporalROI.txt``.
"""

import os
import time
from pathlib import Path

import numpy as np
import pytest

from adnn import addist, cli, histio, metrics, net
from adnn.histfeat import HistoryConfig, extract_training_batch
from adnn.histio import SyntheticConfig
from adnn.net import NetworkConfig, TrainConfig
from adnn.refine import RefineConfig, refine
from conftest import triangle_hist, two_point_hist, uniform_hist
from test_addist import brute_product, brute_sum


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'} | {detail}")
    return emit


def test_criterion_1_monte_carlo_agreement(report):
    start = time.perf_counter()
    cases = [
        ("product", uniform_hist(0.2, 0.6), uniform_hist(-0.5, 0.9)),
        ("product", triangle_hist(0.3, 0.3), uniform_hist(0.5, 1.0)),
        ("product", triangle_hist(-0.4, 0.3), triangle_hist(0.7, 0.25)),
        ("product", uniform_hist(-1, 1), two_point_hist(0.5, -0.9)),
        ("product", triangle_hist(0.3, 0.3), two_point_hist(0.5, -0.9)),
        ("sum", uniform_hist(0.2, 0.6), uniform_hist(-0.5, 0.9)),
        ("sum", triangle_hist(0.3, 0.3), uniform_hist(0.5, 1.0)),
        ("sum", two_point_hist(-0.5, 0.8, 0.3), triangle_hist(0.6, 0.2)),
        ("sum", uniform_hist(-1, 1), two_point_hist(0.5, -0.9)),
    ]
    worst = 0.0
    for op, x, k in cases:
        if op == "product":
            z, ref = addist.product_forward(x, k), addist.mc_product_oracle(x, k, samples=1_000_000)
        else:
            z, ref = addist.sum_forward(x, k), addist.mc_sum_oracle(x, k, samples=1_000_000)
        worst = max(worst, np.abs(z / z.sum() - ref).sum())
    x = uniform_hist(-0.3, 0.8)
    neg = np.zeros(201)
    neg[0] = 1.0
    exact = (np.array_equal(addist.product_forward(x, addist.identity_kernel("product")), x)
             and np.array_equal(addist.sum_forward(x, addist.identity_kernel("sum")), x)
             and np.array_equal(addist.product_forward(x, neg), x[::-1]))
    elapsed = time.perf_counter() - start
    ok = worst <= 0.1 and exact and elapsed < 60
    report(1, ok, f"worst L1 {worst:.4f} over {len(cases)} pairs (<= 0.1), identity/reflection exact={exact}, "
                  f"{elapsed:.1f}s (< 60s)")
    assert ok


def _network_gradient_error(cfg, seed):
    rng = np.random.default_rng(seed)
    params = {k: v + rng.normal(scale=0.05, size=v.shape)
              for k, v in net.init_params(cfg, seed, np.float64).items()}
    X = rng.random((4, 3, cfg.hist_width))
    X /= X.sum(axis=-1, keepdims=True)
    y = np.array([0, 1, 0, 1])
    grads = net.backward(params, net.forward(params, X, cfg)[1], y, cfg)
    worst = 0.0
    for name, value in params.items():
        flat = value.reshape(-1)
        coords = rng.choice(flat.size, min(flat.size, 20), replace=False)
        fd = []
        for c in coords:
            old = flat[c]
            flat[c] = old + 1e-6
            up = net.nll_loss(net.forward(params, X, cfg)[0], y)
            flat[c] = old - 1e-6
            down = net.nll_loss(net.forward(params, X, cfg)[0], y)
            flat[c] = old
            fd.append((up - down) / 2e-6)
        got = grads[name].reshape(-1)[coords]
        fd = np.array(fd)
        worst = max(worst, np.linalg.norm(got - fd) / max(np.linalg.norm(got), np.linalg.norm(fd), 1e-10))
    return worst


def test_criterion_2_gradients(report):
    start = time.perf_counter()
    worst_layer = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        width = 201 if seed < 3 else 21
        x, k, dz = rng.random(width), rng.normal(size=width), rng.normal(size=width)
        for fwd, bwd in ((addist.product_forward, addist.product_backward),
                         (addist.sum_forward, addist.sum_backward)):
            gk, gx = bwd(x, k, dz)
            for idx in range(width):
                e = np.zeros(width)
                e[idx] = 1e-6
                fk = (dz @ fwd(x, k + e) - dz @ fwd(x, k - e)) / 2e-6
                fx = (dz @ fwd(x + e, k) - dz @ fwd(x - e, k)) / 2e-6
                worst_layer = max(worst_layer, abs(gk[idx] - fk) / max(abs(gk[idx]), abs(fk), 1e-8),
                                  abs(gx[idx] - fx) / max(abs(gx[idx]), abs(fx), 1e-8))
    worst_net = max(_network_gradient_error(cfg, s) for s, cfg in enumerate([
        NetworkConfig(), NetworkConfig(adl_filters=1, hidden_units=0),
        NetworkConfig(adl_depth=2, hidden_units=32), NetworkConfig(architecture="cnn1")]))
    elapsed = time.perf_counter() - start
    ok = worst_layer <= 1e-4 and worst_net <= 1e-3 and elapsed < 120
    report(2, ok, f"layer max rel err {worst_layer:.2e} (<= 1e-4), network {worst_net:.2e} (<= 1e-3), "
                  f"{elapsed:.1f}s (< 120s)")
    assert ok


def test_criterion_3_brute_force(report):
    mismatches = 0
    for seed in range(50):
        rng = np.random.default_rng(500 + seed)
        width = 201 if seed % 10 == 0 else 41
        x, k = rng.random(width), rng.normal(size=width)
        mismatches += not np.array_equal(addist.sum_forward(x, k), brute_sum(x, k))
        mismatches += not np.array_equal(addist.product_forward(x, k), brute_product(x, k))
    report(3, mismatches == 0, f"{mismatches} bitwise mismatches over 50 instances x 2 operators")
    assert mismatches == 0


def _pooled_fm(pred_masks, gt_masks):
    total = metrics.Confusion()
    for p, g in zip(pred_masks, gt_masks):
        total = total + metrics.confusion(p, g)
    return metrics.re_pr_fm(total)[2]


def test_criterion_4_synthetic_end_to_end(report):
    start = time.perf_counter()
    seq, masks = histio.generate_synthetic(SyntheticConfig())
    train_idx = 30
    X, y = extract_training_batch(seq, masks[train_idx], train_idx, HistoryConfig(),
                                  max_per_class=500, seed=7)
    cfg = NetworkConfig()
    params, _ = net.train(X, y, cfg, TrainConfig(seed=7))
    frames = [t for t in range(1, seq.count) if t != train_idx]
    raw = [net.classify_frame(seq, t, params, cfg) for t in frames]
    refined = [refine(seq.frames[t], m, RefineConfig()) for t, m in zip(frames, raw)]
    gts = [masks[t] for t in frames]
    fm_raw, fm_ref = _pooled_fm(raw, gts), _pooled_fm(refined, gts)

    clean, clean_masks = histio.generate_synthetic(SyntheticConfig(noise=0.0))
    gt = clean_masks[train_idx]
    flips = np.random.default_rng(0).random(gt.shape) < 0.05
    noisy = np.where(flips, 1 - gt, gt).astype(np.uint8)
    cleaned = refine(clean.frames[train_idx], noisy, RefineConfig(iterations=20))
    removed = float(np.mean(cleaned[flips] == gt[flips]))
    elapsed = time.perf_counter() - start
    ok = fm_raw >= 0.9 and fm_ref >= fm_raw and removed >= 0.9 and elapsed < 300
    report(4, ok, f"ADNN Fm {fm_raw:.4f} (>= 0.90), refined {fm_ref:.4f} (no decrease), "
                  f"noise removed {removed:.3f} (>= 0.90), {elapsed:.1f}s (< 300s)")
    assert ok


def test_criterion_5_adnn_beats_cnn(report):
    seq, masks = histio.generate_synthetic(SyntheticConfig(noise=0.1))
    X, y = extract_training_batch(seq, masks[30], 30, max_per_class=500, seed=7)
    frames = [t for t in range(1, seq.count) if t != 30]
    scores = {}
    for name, cfg in (("ADNN", NetworkConfig()),
                      ("ADNN1", NetworkConfig(adl_filters=1, hidden_units=0)),
                      ("CNN1", NetworkConfig(architecture="cnn1"))):
        params, _ = net.train(X, y, cfg, TrainConfig(seed=7))
        scores[name] = _pooled_fm([net.classify_frame(seq, t, params, cfg) for t in frames],
                                  [masks[t] for t in frames])
    ok = scores["ADNN"] >= scores["CNN1"] and scores["ADNN1"] >= scores["CNN1"]
    report(5, ok, ", ".join(f"{k} Fm {v:.4f}" for k, v in scores.items()) + " (ADNN >= CNN1)")
    assert ok


def test_criterion_6_metrics(report):
    pred = np.array([[1, 1, 0], [0, 1, 0], [0, 0, 0]])
    gt = np.array([[1, 0, 0], [1, 1, 0], [0, 0, 0]])
    counts = metrics.confusion(pred, gt)
    fm = metrics.re_pr_fm((0.9603, 0.8697))[2]
    ok = counts == metrics.Confusion(2, 1, 1, 5) and abs(fm - 0.9127) <= 1e-4
    report(6, ok, f"hand case {counts}, Fm(0.9603, 0.8697) = {fm:.5f} (0.9127 +- 1e-4)")
    assert ok


def test_criterion_7_determinism(report, tmp_path):
    snapshots = []
    for name in ("first", "second"):
        out = tmp_path / name
        assert cli.main(["pipeline", "--out", str(out), "--deterministic", "--threads", "1",
                         "--seed", "11"]) == 0
        snapshots.append({p.relative_to(out): p.read_bytes() for p in out.rglob("*") if p.is_file()})
    same = snapshots[0] == snapshots[1]
    report(7, same, f"{len(snapshots[0])} output files, byte-identical={same}")
    assert same


CDNET = os.environ.get("ADNN_CDNET_VIDEO")


@pytest.mark.skipif(not CDNET, reason="set ADNN_CDNET_VIDEO to a CDnet2014 video directory")
def test_criterion_8_cdnet_video(report):
    root = Path(CDNET)
    seq = histio.load_sequence(root / "input", "in%06d.jpg")
    first, last = map(int, (root / "temporalROI.txt").read_text().split()[:2])
    train_numbers = [first, (first + last) // 2]
    hcfg = HistoryConfig()
    xs, ys = [], []
    for k, number in enumerate(train_numbers):
        gt = histio.load_gt_mask(root / "groundtruth" / f"gt{number:06d}.png")
        X, y = extract_training_batch(seq, gt, seq.index_of(number), hcfg, seed=k)
        xs.append(X)
        ys.append(y)
    cfg = NetworkConfig(adl_filters=1, hidden_units=0)
    params, _ = net.train(np.concatenate(xs), np.concatenate(ys), cfg, TrainConfig(seed=0))
    total = metrics.Confusion()
    step = int(os.environ.get("ADNN_CDNET_STEP", "10"))
    for number in range(first, last + 1, step):
        if number in train_numbers:
            continue
        idx = seq.index_of(number)
        mask = refine(seq.frames[idx], net.classify_frame(seq, idx, params, cfg, hcfg))
        gt = histio.load_gt_mask(root / "groundtruth" / f"gt{number:06d}.png")
        total = total + metrics.confusion(mask, gt)
    fm = metrics.re_pr_fm(total)[2]
    ok = abs(fm - 0.9542) <= 0.10
    report(8, ok, f"{root.name} Fm {fm:.4f} (0.9542 +- 0.10)")
    assert ok
