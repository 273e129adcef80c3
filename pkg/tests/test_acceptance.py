"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

The lines are printed at the end of the pytest run (see conftest.py) and also
inline when pytest runs with ``-s``. Thresholds are the stated ones; nothing
here is tuned to make a criterion pass.
"""

import json
import math
import time
from math import comb

import numpy as np
import pytest
import torch
from sklearn.metrics import precision_recall_fscore_support

from conftest import ACCEPTANCE
from oracles import bce_mix_loop, ce_loop, fps_bruteforce, infonce_loop, metrics_from_matrix, softmix_loop
from spatial_uda import benchmark as bm
from spatial_uda import cli
from spatial_uda.config import load_config
from spatial_uda.data import PointMap, SplitSpec, fps_indices
from spatial_uda.encoder import EdgeConv, EncoderConfig, SpatialDAModel, encode
from spatial_uda.evaluation import MetricReport, colocation_features, interpret_place_type, weighted_metrics
from spatial_uda.mixmask import (
    MixConfig,
    loss_cls_maskmix,
    loss_cls_mix,
    loss_cls_softmix,
    spatial_mask_mix,
    spatial_mixup,
)
from spatial_uda.scpc import ContextPredictor, LatentBatch, PairingPlan, admissible_pairs, build_pairing_plan, scpc_loss
from spatial_uda.synthetic import generate_place_type

SEEDS = (0, 1, 2)


def record(n: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[n] = (bool(ok), detail)
    print(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


# -- 1. loss oracles ---------------------------------------------------------------


def test_criterion_01_loss_oracles():
    rng = np.random.default_rng(101)
    started = time.perf_counter()
    worst = {"cls_mix": 0.0, "cls_maskMix": 0.0, "cls_softMix": 0.0, "scpc": 0.0}
    for _ in range(100):
        n = int(rng.integers(1, 17))
        p = rng.uniform(0, 1, n)
        o = rng.integers(0, 3, n)
        worst["cls_mix"] = max(worst["cls_mix"], abs(loss_cls_mix(p, o).item() - bce_mix_loop(p.tolist(), o.tolist())))
        P = rng.dirichlet(np.ones(3), n)
        y = rng.integers(0, 3, n)
        worst["cls_maskMix"] = max(worst["cls_maskMix"], abs(loss_cls_maskmix(P, y).item() - ce_loop(P.tolist(), y.tolist())))
        ps, a = rng.uniform(0, 1, n), rng.uniform(0, 1, n)
        Q, R = np.column_stack([ps, 1 - ps]), np.column_stack([a, 1 - a])
        worst["cls_softMix"] = max(worst["cls_softMix"], abs(loss_cls_softmix(Q, R).item() - softmix_loop(Q.tolist(), R.tolist())))

        ids = np.array([0] * 4 + [1] * 4)
        lat = torch.tensor(rng.normal(size=(8, 6)))
        pred = torch.tensor(rng.normal(size=(4, 6)))
        positives, negatives = [], []
        for s in range(4):
            pos = int(rng.integers(8))
            positives.append((s, pos))
            negatives.append(np.flatnonzero(ids != ids[pos]).tolist())
        got = scpc_loss(LatentBatch(lat, ids, pred, 0.1), PairingPlan(positives, negatives)).item()
        ref = infonce_loop(lat.tolist(), pred.tolist(), positives, negatives, 0.1)
        worst["scpc"] = max(worst["scpc"], abs(got - ref))
    elapsed = time.perf_counter() - started
    ok = max(worst.values()) <= 1e-9 and elapsed < 10
    record(1, ok, f"max |impl - loop| = {max(worst.values()):.2e} over 4x100 batches in {elapsed:.1f}s")


# -- 2. analytic boundary values -----------------------------------------------------


def test_criterion_02_analytic_values():
    errs = []
    errs.append(abs(loss_cls_mix([0.5], [0]).item() - math.log(2)))
    errs.append(abs(loss_cls_maskmix(np.full((4, 3), 1 / 3), [0, 1, 2, 1]).item() - math.log(3)))
    for K in (1, 4, 9):
        lat = torch.ones(K + 1, 3, dtype=torch.float64)
        batch = LatentBatch(lat, np.array([0] + [1] * K), torch.ones(1, 3, dtype=torch.float64))
        errs.append(abs(scpc_loss(batch, PairingPlan([(0, 0)], [list(range(1, K + 1))])).item() - math.log(K + 1)))
    rng = np.random.default_rng(2)
    src = PointMap("s", rng.uniform(size=(64, 2)), rng.integers(0, 4, 64))
    tgt = PointMap("t", rng.uniform(size=(64, 2)), rng.integers(0, 4, 64))
    exact = True
    for lam, ref in ((1.0, src), (0.0, tgt)):
        out = spatial_mixup(src, tgt, MixConfig(), rng, lam=lam, shuffle_pairs=False).map
        exact &= np.array_equal(out.xy, ref.xy) and np.array_equal(out.categories, ref.categories)
    ok = max(errs) <= 1e-12 and exact
    record(2, ok, f"max analytic error {max(errs):.1e}; mix-up boundaries bit-exact: {exact}")


# -- 3. soft-label example ---------------------------------------------------------------


def test_criterion_03_soft_label_example():
    got = loss_cls_softmix([[0.8, 0.2]], [[0.8, 0.2]]).item()
    expected = -(0.8 * math.log(0.8) + 0.2 * math.log(0.2))
    record(3, abs(got - expected) <= 1e-12, f"loss {got:.12f} vs direct {expected:.12f}")


# -- 4. gradient checks ---------------------------------------------------------------------


def test_criterion_04_gradient_checks():
    started = time.perf_counter()
    torch.manual_seed(4)
    rng = np.random.default_rng(4)
    d = torch.float64
    checks = {}

    def gc(name, fn, *inputs):
        checks[name] = torch.autograd.gradcheck(fn, inputs, rtol=1e-4, atol=1e-6, raise_exception=False)

    cfg = EncoderConfig(n_categories=3, k_neighbors=4, layer_widths=(6, 6), global_dim=8, head_hidden=5, context_dim=4, pooling="mean")
    model = SpatialDAModel(cfg).to(d)
    xy = torch.tensor(rng.uniform(size=(1, 16, 2)), dtype=d)
    cats = torch.tensor(rng.integers(0, 3, (1, 16)))
    feats = model.encoder.point_features(xy, cats).detach().requires_grad_(True)
    conv = EdgeConv(feats.shape[-1], 6, 4).to(d)
    gc("edge_conv", lambda x: conv(x, xy), feats)
    xy_leaf = xy.clone().requires_grad_(True)
    gc("encoder_wrt_xy", lambda p: model.encoder(p, cats), xy_leaf)
    emb = model.encoder.embed.weight.detach().clone().requires_grad_(True)

    def via_embedding(w):
        return torch.func.functional_call(model.encoder, {"embed.weight": w}, (xy, cats))

    gc("encoder_wrt_embedding", via_embedding, emb)
    z = torch.randn(3, 8, dtype=d, requires_grad=True)
    for head in ("supervised", "cls_mix", "cls_maskMix", "cls_softMix"):
        gc(f"head_{head}", lambda t, h=head: model.head_probs(t, h), z)
    w = model.heads["supervised"].net[0].weight.detach().clone().requires_grad_(True)
    gc("head_wrt_weight", lambda W: torch.func.functional_call(model.heads["supervised"], {"net.0.weight": W}, (z.detach(),)), w)

    p = torch.tensor(rng.uniform(0.1, 0.9, 6), dtype=d, requires_grad=True)
    o = rng.integers(0, 3, 6)
    gc("loss_cls_mix", lambda t: loss_cls_mix(t, o), p)
    L3 = torch.tensor(rng.normal(size=(6, 3)), dtype=d, requires_grad=True)
    y = rng.integers(0, 3, 6)
    gc("loss_cls_maskmix", lambda t: loss_cls_maskmix(torch.softmax(t, 1), y), L3)
    L2 = torch.tensor(rng.normal(size=(6, 2)), dtype=d, requires_grad=True)
    a = rng.uniform(0, 1, 6)
    gc("loss_cls_softmix", lambda t: loss_cls_softmix(torch.softmax(t, 1), np.column_stack([a, 1 - a])), L2)

    ids = np.array([0, 0, 0, 1, 1, 1])
    plan = build_pairing_plan(ids, rng, window=2)
    lat = torch.randn(6, 8, dtype=d, requires_grad=True)
    gc("scpc_loss_wrt_latents", lambda t: scpc_loss(LatentBatch(t, ids, model.context(t, plan)[1]), plan), lat)
    cp = ContextPredictor(8, 4).to(d)
    seq = torch.randn(3, 8, dtype=d, requires_grad=True)
    gc("context_and_projection", lambda s: cp.predict_latent(cp.build_context(s)), seq)

    elapsed = time.perf_counter() - started
    failed = [k for k, v in checks.items() if not v]
    ok = not failed and elapsed < 120
    record(4, ok, f"{len(checks) - len(failed)}/{len(checks)} gradchecks pass in {elapsed:.1f}s" + (f"; failed {failed}" if failed else ""))


# -- 5. permutation invariance ------------------------------------------------------------


def test_criterion_05_permutation_invariance():
    torch.manual_seed(5)
    model = SpatialDAModel(bm.default_encoder_config())
    rng = np.random.default_rng(5)
    pm = PointMap.from_raw("m", rng.uniform(size=(256, 2)), rng.integers(0, 5, 256))
    with torch.no_grad():
        z0 = encode(pm, model)
        worst = 0.0
        coloc0 = colocation_features(pm, 0.05, 3, 5).values
        coloc_exact = True
        for _ in range(50):
            perm = rng.permutation(len(pm))
            z = encode(pm.take(perm), model)
            worst = max(worst, float(torch.linalg.norm(z - z0) / torch.linalg.norm(z0)))
            coloc_exact &= np.array_equal(colocation_features(PointMap("p", pm.xy[perm], pm.categories[perm]), 0.05, 3, 5).values, coloc0)
    ok = worst < 1e-5 and coloc_exact
    record(5, ok, f"max relative change in z over 50 permutations {worst:.1e}; co-location exact: {coloc_exact}")


# -- 6. FPS -------------------------------------------------------------------------------


def test_criterion_06_fps_bruteforce():
    rng = np.random.default_rng(6)
    mismatches = 0
    for _ in range(200):
        n = int(rng.integers(1, 65))
        xy = rng.uniform(size=(n, 2))
        if rng.uniform() < 0.3:
            xy = np.round(xy * 4) / 4  # lattice points force distance ties
        k = int(rng.integers(1, n + 1))
        mismatches += fps_indices(xy, k).tolist() != fps_bruteforce(xy.tolist(), k)
    record(6, mismatches == 0, f"{200 - mismatches}/200 index sequences identical to the brute-force oracle")


# -- 7. mask-mix bookkeeping --------------------------------------------------------------


def test_criterion_07_mask_mix_bookkeeping():
    rng = np.random.default_rng(7)
    cfg = MixConfig()
    bad = 0
    for i in range(1000):
        ns, nt = rng.integers(16, 300, 2)
        src = PointMap("s", rng.uniform(size=(ns, 2)), rng.integers(0, 5, ns))
        tgt = PointMap("t", rng.uniform(size=(nt, 2)), rng.integers(0, 5, nt))
        out = spatial_mask_mix(src, tgt, cfg, rng)
        a, b = out.ratios()
        bad += not (a + b == 1.0 and out.source_ratio + out.target_ratio == 1)
        bad += not (out.source_ratio * out.total == out.retained_source == int(out.per_point_origin.sum()))
    record(7, bad == 0, f"{1000 - bad}/1000 draws with exact alpha+beta=1 and alpha*total = retained count")


# -- 8. SCPC pair accounting ----------------------------------------------------------------


def test_criterion_08_pair_accounting():
    rng = np.random.default_rng(8)
    bad = 0
    for _ in range(200):
        n_s, n_t = (int(v) for v in rng.integers(0, 21, 2))
        pos, neg = admissible_pairs(["s"] * n_s + ["t"] * n_t)
        bad += len(pos) + len(neg) != comb(n_s, 2) + comb(n_t, 2) + n_s * n_t
    record(8, bad == 0, f"{200 - bad}/200 random (n_s, n_t) <= 20 match C(n_s,2)+C(n_t,2)+n_s*n_t")


# -- 9 & 10. frozen benchmark ----------------------------------------------------------------


@pytest.fixture(scope="module")
def benchmark_results():
    """Target-test accuracy of every method on every acceptance seed, trained once."""
    started = time.perf_counter()
    acc = {m: [] for m in bm.METHODS}
    for seed in SEEDS:
        data = bm.build_benchmark(seed)
        for method in bm.METHODS:
            target, _, _ = bm.run_method(data, method, seed)
            acc[method].append(target.accuracy)
    return {m: float(np.mean(v)) for m, v in acc.items()}, acc, time.perf_counter() - started


def test_criterion_09_adaptation_gain(benchmark_results):
    mean, per_seed, elapsed = benchmark_results
    runtime = elapsed * 3 / 5  # the three rows this criterion needs, of five trained per seed
    gain = mean["full"] - mean["no_adaptation"]
    ok = gain >= 0.05 and mean["supervised"] >= mean["full"] and runtime < 1800
    detail = (
        f"mean target acc: full {mean['full']:.3f}, no_adaptation {mean['no_adaptation']:.3f} "
        f"(gain {gain:+.3f}, need >= +0.050), supervised {mean['supervised']:.3f}; "
        f"per seed {json.dumps({m: [round(a, 3) for a in per_seed[m]] for m in ('full', 'no_adaptation', 'supervised')})}; "
        f"~{runtime / 60:.1f} min"
    )
    record(9, ok, detail)


def test_criterion_10_ablation_sanity(benchmark_results):
    mean, _, _ = benchmark_results
    base = mean["no_adaptation"]
    g_smum, g_scpc = mean["smum_only"] - base, mean["scpc_only"] - base
    best = max(mean["smum_only"], mean["scpc_only"])
    ok = g_smum >= 0 and g_scpc >= 0 and mean["full"] >= best - 0.02
    record(10, ok, f"gains over no_adaptation: smum_only {g_smum:+.3f}, scpc_only {g_scpc:+.3f}; full {mean['full']:.3f} vs max ablation {best:.3f}")


# -- 11. interpretability -------------------------------------------------------------------------


def test_criterion_11_interpretability():
    firsts = []
    for seed in SEEDS:
        ds = generate_place_type(bm.target_config(seed))
        rep = interpret_place_type(ds, SplitSpec(seed=seed))
        firsts.append(rep.top(1)[0][0])
    hits = sum(f == "<A,B,C>" for f in firsts)
    record(11, hits >= 2, f"<A,B,C> ranked first in {hits}/3 seeds (top features: {firsts})")


# -- 12. determinism through the CLI --------------------------------------------------------------


def test_criterion_12_cli_determinism(tmp_path):
    cfg_path = tmp_path / "exp.json"
    cfg_path.write_text(json.dumps({"seed": 0, "methods": ["full"]}))
    out = tmp_path / "run"
    assert cli.main(["generate", "--config", str(cfg_path), "--out", str(out)]) == 0
    cfg = load_config(cfg_path)
    first = cli.cmd_train(cfg, out)["full"].to_json()
    saved = (out / "runs" / "full" / "report.json").read_bytes()
    second = cli.cmd_train(cfg, out, overwrite=True)["full"].to_json()
    ok = first == second and saved == (out / "runs" / "full" / "report.json").read_bytes()
    record(12, ok, f"two cmd_train runs of the full method, report bytes identical: {ok}")


# -- 13. weighted metrics -------------------------------------------------------------------------


def test_criterion_13_weighted_metrics():
    rng = np.random.default_rng(13)
    worst = 0.0
    for _ in range(50):
        k = int(rng.integers(2, 5))
        C = rng.integers(0, 30, (k, k))
        C[0, 0] += 1
        rep = MetricReport.from_confusion(C)
        ref = metrics_from_matrix(C.tolist())
        worst = max(worst, *(abs(getattr(rep, m) - v) for m, v in ref.items()))
    macro_gap = 0.0
    for _ in range(50):
        truth = np.repeat([0, 1], 40)
        pred = rng.integers(0, 2, 80)
        rep = weighted_metrics(pred, truth)
        _, _, macro, _ = precision_recall_fscore_support(truth, pred, average="macro", zero_division=0)
        macro_gap = max(macro_gap, abs(rep.f1 - macro))
    ok = worst <= 1e-12 and macro_gap <= 1e-12
    record(13, ok, f"max deviation from matrix oracle {worst:.1e}; balanced weighted-F1 vs macro-F1 {macro_gap:.1e}")
