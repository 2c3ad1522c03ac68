"""Command-line interface.

Subcommands: synth-data, synth-haze, make-splits, train, eval, bench-scan,
gen-scan-vectors, plot, param-count. Exit status 0 on success, 2 on
configuration/usage errors, 1 on runtime errors. The FAPTP_SCAN environment
variable (or --scan) selects the scan backend.
"""

import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__, datasets, haze, metrics, plots, scan, trajectories, training
from .config import AblationSpec, ModelConfig, TrainConfig, config_hash, load_config
from .exceptions import ConfigError, FaptpError
from .model import FAPTPModel
from .simulate import SimConfig


def _add_common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scan", choices=["reference", "native"], default=None,
                   help="scan backend (defaults to FAPTP_SCAN or native)")


def _apply_scan_choice(args):
    if getattr(args, "scan", None):
        os.environ[scan.ENV_VAR] = args.scan


def cmd_synth_data(args):
    sim_cfg = SimConfig(raster_size=args.raster_size, n_frames=args.frames)
    meta = datasets.build_dataset(
        args.out, args.scenes, seed=args.seed, behavior_beta=args.beta, sim_config=sim_cfg
    )
    print(f"wrote {meta['n_scenes']} scenes (behavior beta={args.beta}) to {args.out}")
    return 0


def cmd_synth_haze(args):
    scenes, _, _ = datasets.load_dataset(args.dataset, extract=False)
    levels = [haze.HazeLevel(b, v) for b, v in haze.PAPER_HAZE_LEVELS if b in args.levels]

    class _Scene:
        def __init__(self, s):
            self.scene_id = s.scene_id
            self.clear = s.clear
            self.depth = s.depth

    out_dir = args.out or os.path.join(args.dataset, "rasters")
    recs = haze.synthesize_benchmark([_Scene(s) for s in scenes], levels, out_dir,
                                     seed=args.seed)
    print(f"wrote {len(recs)} hazy rasters to {out_dir}")
    return 0


def cmd_make_splits(args):
    scene_windows = {}
    for name in sorted(os.listdir(args.tracks)):
        if not name.endswith(".txt"):
            continue
        scene_id = name[:-4]
        records = trajectories.load_trajectories(os.path.join(args.tracks, name))
        scene_windows[scene_id] = trajectories.extract_windows(records, scene_id=scene_id)
    spec = trajectories.SplitSpec(held_out_scene=args.held_out)
    splits = trajectories.make_splits(scene_windows, spec)
    with open(args.out, "w") as fh:
        json.dump(splits.keys(), fh, indent=0)
    print(
        f"splits: train={len(splits.train)} val={len(splits.val)} "
        f"test={len(splits.test)} -> {args.out}"
    )
    return 0


def _load_configs(args):
    if args.config:
        model_cfg, train_cfg = load_config(args.config)
    else:
        model_cfg, train_cfg = ModelConfig.desk_scale(), TrainConfig()
    ablation = AblationSpec(
        no_phyfusion=args.no_phyfusion, no_mamba=args.no_mamba,
        no_dynahetero=args.no_dynahetero, use_transformer=args.use_transformer,
        homo_graph=args.homo_graph,
    )
    if ablation != AblationSpec():
        model_cfg = ModelConfig(
            phyfusion=model_cfg.phyfusion, temporal=model_cfg.temporal,
            social=model_cfg.social, decoder=model_cfg.decoder,
            ablation=ablation, seed=model_cfg.seed,
        )
    if args.seed is not None:
        train_cfg.seed = args.seed
    if getattr(args, "epochs", None):
        train_cfg.epochs = args.epochs
    return model_cfg, train_cfg


def _add_ablation_flags(p):
    p.add_argument("--no-phyfusion", dest="no_phyfusion", action="store_true")
    p.add_argument("--no-mamba", dest="no_mamba", action="store_true")
    p.add_argument("--no-dynahetero", dest="no_dynahetero", action="store_true")
    p.add_argument("--use-transformer", dest="use_transformer", action="store_true")
    p.add_argument("--homo-graph", dest="homo_graph", action="store_true")


def cmd_train(args):
    _apply_scan_choice(args)
    model_cfg, train_cfg = _load_configs(args)
    scenes, splits, meta = datasets.load_dataset(args.dataset)
    train_scenes, _, _ = datasets.split_scenes(scenes, splits)
    model = FAPTPModel(model_cfg)
    result = training.train(
        model, train_scenes, train_cfg, beta_level=args.beta, out_dir=args.out
    )
    print(
        f"trained {result.steps} steps; scan version {scan.active_backend()}/"
        f"{__version__}; checkpoint {result.checkpoint}"
    )
    return 0


def cmd_eval(args):
    _apply_scan_choice(args)
    model_cfg, train_cfg = _load_configs(args)
    model = FAPTPModel(model_cfg)
    training.load_checkpoint(args.checkpoint, model, model_cfg, train_cfg,
                             use_ema=not args.raw_weights)
    scenes_by_beta = {}
    for b in args.betas:
        scenes, splits, _ = datasets.load_dataset(args.dataset)
        _, _, test_scenes = datasets.split_scenes(scenes, splits)
        scenes_by_beta[b] = test_scenes
    rows = training.evaluate_grid(
        model, scenes_by_beta, args.label, k_samples=args.k, seed=args.seed,
        run_id=args.run_id, cfg_hash=config_hash(model_cfg, train_cfg),
        measure_timing=args.timing, include_baseline=args.baseline,
    )
    metrics.write_results_csv(args.out, rows)
    print(f"wrote {len(rows)} result rows to {args.out}")
    return 0


def cmd_bench_scan(args):
    _apply_scan_choice(args)
    rows = scan.bench_scan(
        args.t_values, d_inner=args.d_inner, n_state=args.n_state,
        repeats=args.repeats, seed=args.seed,
        dtype=np.float32 if args.single else np.float64,
    )
    for row in rows:
        parts = [f"T={row['T']}"]
        parts += [f"{k}={v * 1e3:.3f}ms" for k, v in row.items() if k != "T"]
        print("  ".join(parts))
    ts = [r["T"] for r in rows]
    report = {"rows": rows, "slopes": {}}
    for key in rows[0]:
        if key == "T":
            continue
        slope = scan.loglog_slope(ts, [r[key] for r in rows])
        report["slopes"][key] = slope
        print(f"log-log slope[{key}] = {slope:.3f}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(report, fh, indent=2)
    return 0


def cmd_gen_scan_vectors(args):
    cases = scan.generate_test_vectors(args.cases, seed=args.seed)
    scan.write_test_vectors(args.out, cases)
    print(f"wrote {len(cases)} scan test vectors to {args.out}")
    if args.bench_reference:
        t, d, n = (int(v) for v in args.bench_reference.split(","))
        rng = np.random.default_rng(args.seed)
        dt = rng.uniform(0.05, 0.2, (t, d)).astype(np.float32)
        a = -rng.uniform(0.5, 2.0, (d, n)).astype(np.float32)
        bb = rng.standard_normal((t, n)).astype(np.float32)
        cc = rng.standard_normal((t, n)).astype(np.float32)
        x = rng.standard_normal((t, d)).astype(np.float32)
        best = np.inf
        for _ in range(args.repeats):
            t0 = time.perf_counter()
            scan.scan_sequential(dt, a, bb, cc, x, backend="reference", validate=False)
            best = min(best, time.perf_counter() - t0)
        doc = {
            "T": t, "D_inner": d, "N": n, "seed": args.seed,
            "reference_ms": best * 1e3, "backend": "reference",
        }
        path = str(args.out) + ".reference_timing.json"
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2)
        print(f"reference scan at T={t},D={d},N={n}: {best * 1e3:.1f} ms -> {path}")
    return 0


def cmd_plot(args):
    paths = plots.plot_degradation(args.results, args.out)
    for p in paths:
        print(f"wrote {p}")
    return 0


def cmd_param_count(args):
    cfg = ModelConfig.paper_scale() if args.paper_scale else ModelConfig.desk_scale()
    model = FAPTPModel(cfg)
    counts = model.component_params()
    budgets = {"phyfusion": 2.1e6, "temporal": 1.66e6, "social_decoder": 3.8e6}
    print(f"scale: {'paper' if args.paper_scale else 'desk'}")
    for name, count in counts.items():
        line = f"{name:16s} {count / 1e6:8.3f}M"
        if name in budgets and args.paper_scale:
            ratio = count / budgets[name]
            line += f"   target {budgets[name] / 1e6:.2f}M  ratio {ratio:.2f}"
            if not (1 / 1.5 <= ratio <= 1.5):
                line += "  [OUT OF BUDGET]"
        print(line)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="faptp", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth-data", help="generate a synthetic scene dataset")
    sp.add_argument("--out", required=True)
    sp.add_argument("--scenes", type=int, default=50)
    sp.add_argument("--beta", type=float, default=1.0, help="behavioral haze level")
    sp.add_argument("--raster-size", type=int, default=64)
    sp.add_argument("--frames", type=int, default=26)
    _add_common(sp)
    sp.set_defaults(fn=cmd_synth_data)

    sp = sub.add_parser("synth-haze", help="re-haze a dataset's clear rasters")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--out", default=None)
    sp.add_argument("--levels", type=float, nargs="+", default=[0.0, 0.5, 1.0, 2.0])
    _add_common(sp)
    sp.set_defaults(fn=cmd_synth_haze)

    sp = sub.add_parser("make-splits", help="leave-one-out splits over scene files")
    sp.add_argument("--tracks", required=True, help="directory of <scene>.txt files")
    sp.add_argument("--held-out", required=True)
    sp.add_argument("--out", required=True)
    _add_common(sp)
    sp.set_defaults(fn=cmd_make_splits)

    sp = sub.add_parser("train", help="train on a dataset directory")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--config", default=None)
    sp.add_argument("--beta", type=float, default=1.0, help="haze level of training rasters")
    sp.add_argument("--epochs", type=int, default=None)
    _add_ablation_flags(sp)
    _add_common(sp)
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint over haze levels")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--config", default=None)
    sp.add_argument("--betas", type=float, nargs="+", default=[0.0, 0.5, 1.0, 2.0])
    sp.add_argument("--k", type=int, default=20)
    sp.add_argument("--label", default="heldout")
    sp.add_argument("--run-id", default="")
    sp.add_argument("--timing", action="store_true")
    sp.add_argument("--baseline", action="store_true",
                    help="also emit constant-velocity baseline rows")
    sp.add_argument("--raw-weights", action="store_true",
                    help="evaluate raw instead of EMA weights")
    _add_ablation_flags(sp)
    _add_common(sp)
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("bench-scan", help="scan backend runtime scaling")
    sp.add_argument("--t-values", type=int, nargs="+",
                    default=[256, 512, 1024, 2048, 4096, 8192])
    sp.add_argument("--d-inner", type=int, default=16)
    sp.add_argument("--n-state", type=int, default=8)
    sp.add_argument("--repeats", type=int, default=5)
    sp.add_argument("--single", action="store_true", help="float32 buffers")
    sp.add_argument("--json", default=None)
    _add_common(sp)
    sp.set_defaults(fn=cmd_bench_scan)

    sp = sub.add_parser("gen-scan-vectors", help="emit kernel parity test vectors")
    sp.add_argument("--out", required=True)
    sp.add_argument("--cases", type=int, default=1000)
    sp.add_argument("--repeats", type=int, default=5)
    sp.add_argument("--bench-reference", default=None, metavar="T,D,N",
                    help="also time the reference scan at this size")
    _add_common(sp)
    sp.set_defaults(fn=cmd_gen_scan_vectors)

    sp = sub.add_parser("plot", help="degradation curves from a results CSV")
    sp.add_argument("results")
    sp.add_argument("--out", default="plots")
    sp.set_defaults(fn=cmd_plot)

    sp = sub.add_parser("param-count", help="per-component parameter counts")
    sp.add_argument("--paper-scale", action="store_true")
    sp.set_defaults(fn=cmd_param_count)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses 2 for usage errors
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except FaptpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
