"""Acceptance suite: every criterion at its stated tolerance, one printed
pass/fail line per criterion.

The toy end-to-end criteria (training runs) are the slow part; everything
is seeded, so the whole suite is reproducible. Heavy artifacts are shared
through module-scoped fixtures.
"""

import math
import time

import numpy as np
import pytest

from faptp import autodiff as ad
from faptp import datasets, decoder, haze, losses, metrics, scan, social, temporal, training
from faptp.config import AblationSpec, ModelConfig, TrainConfig
from faptp.model import FAPTPModel

from conftest import assert_grad_matches_fd, central_diff, rel_err
from test_model import tiny_model_config


def report(tag, ok, detail):
    print(f"\n[{tag}] {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"{tag}: {detail}"


# ---------------------------------------------------------------------------
# A1 haze round trip
# ---------------------------------------------------------------------------


def test_a1_haze_round_trip():
    rng = np.random.default_rng(11)
    t0 = time.time()
    worst = 0.0
    for _ in range(1000):
        h, w = int(rng.integers(2, 12)), int(rng.integers(2, 12))
        img = rng.uniform(0, 1, (h, w))
        params = haze.ScatterParams(
            float(rng.uniform(0, 3)), [float(rng.uniform(0.5, 1.0))], rng.uniform(0, 1, (h, w))
        )
        back = haze.dehaze(haze.apply_haze(img, params), params)
        worst = max(worst, float(np.max(np.abs(back - img))))
    elapsed = time.time() - t0
    report(
        "A1",
        worst <= 1e-6 and elapsed < 10.0,
        f"1000 round trips: max abs err {worst:.2e} (<=1e-6), {elapsed:.1f}s (<10s)",
    )


# ---------------------------------------------------------------------------
# A2 scan parity
# ---------------------------------------------------------------------------


def test_a2_scan_parity():
    rng = np.random.default_rng(21)
    t0 = time.time()
    worst = {np.float32: 0.0, np.float64: 0.0}
    tol = {np.float32: 1e-5, np.float64: 1e-10}
    for T in (8, 64, 512, 4096):
        n_cases = 200 if T < 4096 else 50  # case count trades off with length
        for _ in range(n_cases):
            D = int(rng.integers(1, 6))
            N = int(rng.integers(1, 5))
            for dtype in (np.float32, np.float64):
                dt = rng.uniform(0.01, 0.4, (T, D)).astype(dtype)
                A = -rng.uniform(0.2, 3.0, (D, N)).astype(dtype)
                B = rng.standard_normal((T, N)).astype(dtype)
                C = rng.standard_normal((T, N)).astype(dtype)
                x = rng.standard_normal((T, D)).astype(dtype)
                y_seq = scan.scan_sequential(dt, A, B, C, x, backend="reference", validate=False)
                y_par = scan.scan_parallel(dt, A, B, C, x, validate=False)
                worst[dtype] = max(worst[dtype], float(np.max(np.abs(y_seq - y_par))))
    elapsed = time.time() - t0
    ok = worst[np.float32] <= tol[np.float32] and worst[np.float64] <= tol[np.float64]
    report(
        "A2",
        ok and elapsed < 120,
        f"parallel vs sequential: single {worst[np.float32]:.2e} (<=1e-5), "
        f"double {worst[np.float64]:.2e} (<=1e-10), {elapsed:.0f}s (<120s)",
    )


# ---------------------------------------------------------------------------
# A3 linear complexity
# ---------------------------------------------------------------------------


def test_a3_linear_complexity():
    t0 = time.time()
    t_values = [256, 512, 1024, 2048, 4096, 8192]
    rows = scan.bench_scan(t_values, d_inner=16, n_state=8, repeats=5, seed=3)
    backend = "native" if scan.HAS_NUMBA else "reference"
    scan_slope = scan.loglog_slope(t_values, [r[backend] for r in rows])
    attn_slope = scan.loglog_slope(t_values, [r["attention"] for r in rows])
    elapsed = time.time() - t0
    report(
        "A3",
        0.85 <= scan_slope <= 1.2 and attn_slope >= 1.7 and elapsed < 300,
        f"scan[{backend}] slope {scan_slope:.3f} (in [0.85, 1.2]), "
        f"attention slope {attn_slope:.3f} (>=1.7), {elapsed:.0f}s (<300s)",
    )


# ---------------------------------------------------------------------------
# A4 gradient suite
# ---------------------------------------------------------------------------


def _fd_check_params(build_loss, module, picks, h=1e-6):
    module.zero_grad()
    build_loss().backward()
    named = dict(module.named_parameters())
    for name in picks:
        p = named[name]
        grad = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        take = min(6, flat.size)
        idx = np.linspace(0, flat.size - 1, take).astype(int)

        def scalar(v, p=p, idx=idx):
            old = p.data.copy()
            p.data = p.data.copy()
            p.data.reshape(-1)[idx] = v
            val = float(build_loss().data)
            p.data = old
            return val

        assert_grad_matches_fd(
            scalar, flat[idx].copy(), grad.reshape(-1)[idx], tol=1e-4, h=h,
            min_consistent=0.5,
        )


def test_a4_gradient_suite():
    from faptp.phyfusion import PhyFusion, PhyFusionConfig
    from faptp.social import SocialConfig, SocialGraph
    from faptp.temporal import SSMBlock, TemporalConfig
    from test_model import SceneProxy
    from test_social import make_window

    t0 = time.time()
    rng = np.random.default_rng(41)
    checked = []

    # estimation + fusion paths on a 16x16 toy image
    pf = PhyFusion(
        PhyFusionConfig(unet_base=2, airlight_hidden=8, beta_channels=(2, 3, 4, 4),
                        beta_head=(8, 4), shared_channels=(3, 4)),
        rng,
    )
    img = rng.uniform(0.2, 0.8, (1, 3, 16, 16))
    w_img = rng.standard_normal((1, 4, 16, 16))

    def pf_loss():
        out = pf(ad.Tensor(img), [(2, 2, 10, 10)])
        return (out["f_inv"] * ad.Tensor(w_img)).sum()

    _fd_check_params(
        pf_loss, pf,
        ["depth_net.enc.0.w", "airlight_net.alpha_raw", "beta_net.head.layers.0.w",
         "shared.convs.0.w", "gamma", "delta", "alpha_logit", "airlight_proj.w"],
    )
    checked.append("phyfusion")

    # selective-scan block
    blk = SSMBlock(TemporalConfig(d_model=6, n_state=3, n_blocks=1, dt_rank=2, dropout=0.0),
                   rng, np.random.default_rng(0))
    blk.train(False)
    xb = rng.standard_normal((1, 6, 6))
    wb = rng.standard_normal((1, 6, 6))

    def blk_loss():
        return (blk(ad.Tensor(xb)) * ad.Tensor(wb)).sum()

    _fd_check_params(
        blk_loss, blk,
        ["inner.w", "gate.w", "conv.w", "dt_lo.w", "dt_hi.w", "dt_bias",
         "b_proj.w", "c_proj.w", "a_log", "out.w", "norm.gain"],
    )
    checked.append("ssm-block")

    # heterogeneous layer + group ops on a 4-node toy graph
    g = SocialGraph(
        SocialConfig(ped_dim=4, group_dim=8, n_heads=2, d_model=6, n_layers=1,
                     modulator_hidden=4),
        rng,
    )
    windows = [make_window(i, (0.4 * i, 0.1 * i), (1.0, 0.1 * i)) for i in range(4)]
    feats = rng.standard_normal((4, 8, 6))
    wg = rng.standard_normal((4, 6))

    def g_loss():
        return (g(ad.Tensor(feats), windows, ad.Tensor(np.array(1.0))) * ad.Tensor(wg)).sum()

    _fd_check_params(
        g_loss, g,
        ["layers.0.p2p.w.0.w", "layers.0.p2p.att.0", "layers.0.skip_ped.P2P.w",
         "modulators.P2P.w1_raw", "modulators.P2P.w2_raw", "pool.proj.w",
         "pool.scorer.w", "gcn.w.w", "gcn.gamma_raw", "similarity.w_logits"],
    )
    checked.append("hetero-layer+gcn")

    # fusion, pedestrian projection, CVAE with frozen noise
    cfg = decoder.DecoderConfig(d_model=6, latent_dim=3, psi_hidden=8,
                                enc_hidden=8, dec_hidden=8)
    fus = decoder.SpatioTemporalFusion(cfg, rng)
    proj = decoder.PedestrianProjection(cfg, rng)
    cv = decoder.CVAEDecoder(cfg, rng)
    fm = rng.standard_normal((3, 8, 6))
    fg = rng.standard_normal((3, 6))
    fut = rng.standard_normal((3, 12, 2))
    eps = rng.standard_normal((3, 3))
    last = rng.standard_normal((3, 2))
    wd = rng.standard_normal((3, 12, 2))

    class Bundle:
        def __init__(self):
            self.fusion = fus
            self.projection = proj
            self.cvae = cv

        def named_parameters(self):
            yield from fus.named_parameters("fusion.")
            yield from proj.named_parameters("projection.")
            yield from cv.named_parameters("cvae.")

        def zero_grad(self):
            for _, p in self.named_parameters():
                p.grad = None

    bundle = Bundle()

    def cv_loss():
        f_final = fus(ad.Tensor(fm), ad.Tensor(fg), ad.Tensor(np.array(1.2)))
        f_p = proj(f_final)
        q = cv.posterior(f_p, fut - last[:, None, :])
        z = q.sample(eps)
        y = cv.decode(z, f_p, last)
        p = cv.prior(f_p)
        return (y * ad.Tensor(wd)).sum() + 0.1 * decoder.gaussian_kl(q, p)

    _fd_check_params(
        cv_loss, bundle,
        ["fusion.lambda_raw", "fusion.delta", "fusion.beta_proj.w",
         "projection.mlp.layers.0.w", "cvae.posterior_net.layers.0.w",
         "cvae.prior_net.layers.0.w", "cvae.decode_net.layers.0.w"],
    )
    checked.append("fusion+psi+cvae")

    elapsed = time.time() - t0
    report(
        "A4",
        elapsed < 300,
        f"FD rel err <=1e-4 for every learned mapping in {', '.join(checked)}; "
        f"{elapsed:.0f}s (<300s)",
    )


# ---------------------------------------------------------------------------
# A5 metric oracles
# ---------------------------------------------------------------------------


def test_a5_metric_oracles():
    from test_metrics import brute_force_min_ade, brute_force_min_fde

    rng = np.random.default_rng(51)
    # min ADE / FDE against exhaustive enumeration, <=3 pedestrians
    for _ in range(50):
        k, n = int(rng.integers(1, 5)), int(rng.integers(1, 4))
        samples = rng.standard_normal((k, n, 12, 2))
        gt = rng.standard_normal((n, 12, 2))
        assert abs(metrics.min_ade(samples, gt) - brute_force_min_ade(samples, gt)) <= 1e-9
        assert abs(metrics.min_fde(samples, gt) - brute_force_min_fde(samples, gt)) <= 1e-9

    # collision rate on a hand case incl. a sub-step crossing
    a = np.array([[0.0, 0.0], [1.0, 0.0]])
    b = np.array([[0.5, -0.7], [0.6, 0.7]])
    c = np.array([[0.0, 9.0], [1.0, 9.0]])
    cr, _ = metrics.collision_rate(np.stack([a, b, c]))
    assert abs(cr - 100.0 / 3.0) <= 1e-9

    # social consistency against a literal scalar reimplementation
    def social_oracle(y_pred, y_gt, g):
        n, t_steps = y_pred.shape[0], y_pred.shape[1]
        total = 0.0
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                for t in range(t_steps):
                    dp = y_pred[i, t] - y_pred[j, t]
                    dg = y_gt[i, t] - y_gt[j, t]
                    total += ((dp - dg) ** 2).sum() * g[i, j]
        return total / (n * (n - 1) * t_steps)

    for _ in range(20):
        n = int(rng.integers(2, 4))
        y_pred = rng.standard_normal((n, 5, 2))
        y_gt = rng.standard_normal((n, 5, 2))
        g = rng.uniform(0.1, 1.0, (n, n))
        mine = float(losses.l_social(ad.Tensor(y_pred), y_gt, g).data)
        assert abs(mine - social_oracle(y_pred, y_gt, g)) <= 1e-9

    # KL closed form vs 1e6-sample Monte Carlo
    q = decoder.LatentGaussian(ad.Tensor(np.array([[0.4, -0.3, 0.1]])),
                               ad.Tensor(np.array([[0.3, -0.2, 0.5]])))
    p = decoder.LatentGaussian(ad.Tensor(np.array([[0.0, 0.2, -0.1]])),
                               ad.Tensor(np.array([[0.0, 0.1, 0.2]])))
    closed = float(decoder.gaussian_kl(q, p).data)
    mu_q, sd_q = q.mu.data[0], np.exp(0.5 * q.log_var.data[0])
    mu_p, sd_p = p.mu.data[0], np.exp(0.5 * p.log_var.data[0])
    z = mu_q + sd_q * rng.standard_normal((1_000_000, 3))
    log_q = -0.5 * (((z - mu_q) / sd_q) ** 2 + np.log(2 * np.pi) + q.log_var.data[0])
    log_p = -0.5 * (((z - mu_p) / sd_p) ** 2 + np.log(2 * np.pi) + p.log_var.data[0])
    mc = float((log_q - log_p).sum(axis=1).mean())
    kl_rel = abs(mc - closed) / abs(closed)
    report(
        "A5",
        kl_rel < 0.01,
        f"minADE/minFDE/CR/social match brute force to 1e-9; "
        f"KL closed form vs 1e6-sample MC rel err {kl_rel:.4f} (<0.01)",
    )


# ---------------------------------------------------------------------------
# A6 graph properties
# ---------------------------------------------------------------------------


def test_a6_graph_properties():
    from test_social import dbscan_oracle, partitions_equal, tiny_cfg

    rng = np.random.default_rng(61)
    cfg = tiny_cfg()

    # base attention normalization and modulation bound
    layer = social.HeteroLayer(cfg, rng)
    mod = social.HazeModulator(cfg, rng)
    n = 6
    h = ad.Tensor(rng.standard_normal((n, cfg.ped_dim)))
    adj = ~np.eye(n, dtype=bool)
    dists = rng.uniform(0.5, 9.0, (n, n))
    gate = ad.reshape(mod(ad.Tensor(np.array(1.5)), dists.reshape(-1)), (n, n))
    edges = {"pp": adj, "pg_to_ped": np.zeros((n, 0), dtype=bool),
             "ped_to_group": np.zeros((0, n), dtype=bool), "gg": np.zeros((0, 0), dtype=bool)}
    _, _, stats = layer(h, None, edges, {"pp": gate, "pg_to_ped": None,
                                         "ped_to_group": None, "gg": None})
    norm_ok = all(
        np.allclose(b.data.sum(axis=1), 1.0, atol=1e-6) for b in stats["pp_base"]
    )
    bound_ok = all(
        np.all(m.data <= b.data + 1e-12)
        for b, m in zip(stats["pp_base"], stats["pp_mod"])
    )

    # monotone modulation over a 20x20 grid
    betas = np.linspace(0, 3, 20)
    ds = np.linspace(0, 15, 20)
    grid = np.stack([mod(ad.Tensor(np.array(b)), ds).data.reshape(-1) for b in betas])
    mono_ok = np.all(np.diff(grid, axis=0) <= 1e-12) and np.all(np.diff(grid, axis=1) <= 1e-12)

    # DBSCAN vs exhaustive oracle over 500 random scenes, n <= 12
    dbscan_ok = True
    for _ in range(500):
        n_pts = int(rng.integers(1, 13))
        pts = rng.uniform(0, 1, (n_pts, 2))
        dist = np.linalg.norm(pts[:, None] - pts[None, :], axis=2)
        eps = float(rng.uniform(0.05, 0.6))
        if not partitions_equal(
            social.dbscan(dist, eps, 2), dbscan_oracle(dist, eps, 2)
        ):
            dbscan_ok = False
            break
    report(
        "A6",
        norm_ok and bound_ok and mono_ok and dbscan_ok,
        f"attention normalized 1 +/- 1e-6: {norm_ok}; modulated <= base: {bound_ok}; "
        f"monotone 20x20 grid: {mono_ok}; DBSCAN = oracle on 500 scenes: {dbscan_ok}",
    )


# ---------------------------------------------------------------------------
# A7 / A8 / A10 toy end-to-end (shared trained artifacts)
# ---------------------------------------------------------------------------

DESK_TRAIN = dict(batch_groups=4, image_update_every=4, lr=3e-4, ema_decay=0.995)


@pytest.fixture(scope="module")
def a7_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("a7")
    ds_dir = out / "data"
    datasets.build_dataset(ds_dir, 200, seed=42, behavior_beta=1.0)
    scenes, splits, _ = datasets.load_dataset(ds_dir)
    tr, _va, te = datasets.split_scenes(scenes, splits)
    cfg = TrainConfig(epochs=10, seed=0, **DESK_TRAIN)
    model = FAPTPModel(ModelConfig.desk_scale(seed=0))
    t0 = time.time()
    training.train(model, tr, cfg, beta_level=1.0, out_dir=out / "run", checkpoint_every=0)
    train_s = time.time() - t0
    ema_model = FAPTPModel(ModelConfig.desk_scale(seed=0))
    training.load_checkpoint(out / "run" / "model.npz", ema_model, ema_model.cfg, cfg,
                             use_ema=True)
    return ema_model, te, train_s


@pytest.fixture(scope="module")
def mixed_run(tmp_path_factory):
    """Full + no_phyfusion models trained on the four-level benchmark."""
    out = tmp_path_factory.mktemp("mixed")
    train_scenes = []
    eval_sets = {}
    for i, b in enumerate((0.0, 0.5, 1.0, 2.0)):
        ds_dir = out / f"data_b{b}"
        datasets.build_dataset(ds_dir, 32, seed=(2000 + i), behavior_beta=b)
        sc, sp, _ = datasets.load_dataset(ds_dir)
        tr, _va, te = datasets.split_scenes(sc, sp)
        train_scenes.extend(tr[:25])
        eval_sets[b] = te
    cfg = TrainConfig(epochs=16, seed=0, **DESK_TRAIN)
    models = {}
    for tag, ablation in (("full", AblationSpec()),
                          ("no_phyfusion", AblationSpec(no_phyfusion=True))):
        model = FAPTPModel(ModelConfig.desk_scale(ablation=ablation, seed=0))
        training.train(model, train_scenes, cfg, beta_level=None,
                       out_dir=out / tag, checkpoint_every=0)
        ema_model = FAPTPModel(ModelConfig.desk_scale(ablation=ablation, seed=0))
        training.load_checkpoint(out / tag / "model.npz", ema_model, ema_model.cfg,
                                 cfg, use_ema=True)
        models[tag] = ema_model
    return models, eval_sets


def test_a7_toy_end_to_end(a7_run):
    model, test_scenes, train_s = a7_run
    rep = training.evaluate_scenes(model, test_scenes, 1.0, k_samples=20, seed=7)
    base = training.evaluate_scenes(model, test_scenes, 1.0, baseline=True)
    ratio = rep["min_ade"] / base["min_ade"]
    report(
        "A7",
        train_s <= 900 and ratio <= 0.9 and rep["frd"] >= 0.8,
        f"trained {train_s:.0f}s (<=900s); minADE {rep['min_ade']:.3f} vs "
        f"constant-velocity {base['min_ade']:.3f} (ratio {ratio:.2f} <= 0.9); "
        f"FRD {rep['frd']:.3f} (>=0.8)",
    )


def test_a8_degradation_trend(mixed_run):
    models, eval_sets = mixed_run
    model = models["full"]
    curve = []
    for b in (0.0, 0.5, 1.0, 2.0):
        rep = training.evaluate_scenes(model, eval_sets[b], b, k_samples=20, seed=7)
        curve.append(rep["min_ade"])
    mono = all(y >= x for x, y in zip(curve, curve[1:]))
    report(
        "A8",
        mono,
        "minADE over beta {0, 0.5, 1, 2} = "
        + ", ".join(f"{v:.3f}" for v in curve)
        + f" (monotone non-decreasing: {mono})",
    )


def test_a9_parameter_budget():
    model = FAPTPModel(ModelConfig.paper_scale())
    counts = model.component_params()
    budgets = {"phyfusion": 2.1e6, "temporal": 1.66e6, "social_decoder": 3.8e6}
    lines = []
    ok = True
    for name, budget in budgets.items():
        ratio = counts[name] / budget
        ok &= 1 / 1.5 <= ratio <= 1.5
        lines.append(f"{name} {counts[name] / 1e6:.2f}M vs {budget / 1e6:.2f}M (x{ratio:.2f})")
    report("A9", ok, "; ".join(lines) + f"; total {counts['total'] / 1e6:.2f}M")


def test_a10_ablation_direction(mixed_run):
    models, eval_sets = mixed_run
    full = training.evaluate_scenes(models["full"], eval_sets[2.0], 2.0,
                                    k_samples=20, seed=7)
    ablated = training.evaluate_scenes(models["no_phyfusion"], eval_sets[2.0], 2.0,
                                       k_samples=20, seed=7)
    report(
        "A10",
        ablated["min_ade"] > full["min_ade"],
        f"beta=2.0 minADE: full {full['min_ade']:.3f} < no_phyfusion "
        f"{ablated['min_ade']:.3f} (disabling the physics branch hurts)",
    )
