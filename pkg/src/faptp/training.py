"""Training loop, optimizer, EMA, checkpointing, and the evaluation driver.

One optimizer step consumes a handful of frame groups (co-present window
batches). Trajectory losses run every step; the image-side losses (depth
supervision, physical reconstruction, parameter regression) run on a fixed
stride to keep desk-scale CPU training inside its budget while every loss
term still trains its branch.
"""

import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import losses, metrics, scan
from .config import config_hash
from .decoder import gaussian_kl
from .exceptions import CheckpointError, TrainingAbort
from .model import FAPTPModel, constant_velocity_baseline
from .phyfusion import as_model_image

CHECKPOINT_VERSION = 1


class AdamW:
    """Adam with decoupled weight decay."""

    def __init__(self, params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self):
        self.t += 1
        b1, b2 = self.betas
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            mhat = self.m[i] / (1 - b1**self.t)
            vhat = self.v[i] / (1 - b2**self.t)
            if self.weight_decay:
                p.data = p.data - self.lr * self.weight_decay * p.data
            p.data = p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


def cosine_lr(step, total_steps, lr0, floor=1e-6):
    if total_steps <= 1:
        return lr0
    frac = min(max(step / (total_steps - 1), 0.0), 1.0)
    return floor + 0.5 * (lr0 - floor) * (1.0 + np.cos(np.pi * frac))


def clip_global_norm(params, max_norm):
    """Scale gradients so the global norm is at most max_norm; returns the
    pre-clip norm."""
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad**2).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


class EMA:
    """Exponential moving average of named parameters."""

    def __init__(self, model, decay):
        self.decay = decay
        self.shadow = {name: p.data.copy() for name, p in model.named_parameters()}
        self._backup = None

    def update(self, model):
        d = self.decay
        for name, p in model.named_parameters():
            self.shadow[name] = d * self.shadow[name] + (1.0 - d) * p.data

    def swap_in(self, model):
        self._backup = {name: p.data for name, p in model.named_parameters()}
        for name, p in model.named_parameters():
            p.data = self.shadow[name].copy()

    def swap_out(self, model):
        for name, p in model.named_parameters():
            p.data = self._backup[name]
        self._backup = None


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path, model, step, model_cfg, train_cfg=None, ema=None):
    state = model.state_dict()
    arrays = {f"param/{k}": v for k, v in state.items()}
    if ema is not None:
        arrays.update({f"ema/{k}": v for k, v in ema.shadow.items()})
    np.savez_compressed(path, **arrays)
    manifest = {
        "version": CHECKPOINT_VERSION,
        "module": "faptp.model.FAPTPModel",
        "step": int(step),
        "ema": ema is not None,
        "config_hash": config_hash(model_cfg, train_cfg),
        "shapes": {k: list(v.shape) for k, v in state.items()},
    }
    with open(str(path) + ".manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def load_checkpoint(path, model, model_cfg=None, train_cfg=None, use_ema=False):
    with open(str(path) + ".manifest.json") as fh:
        manifest = json.load(fh)
    if manifest["version"] != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {manifest['version']} unsupported")
    if model_cfg is not None:
        expect = config_hash(model_cfg, train_cfg)
        if manifest["config_hash"] != expect:
            raise CheckpointError(
                f"config hash mismatch: checkpoint {manifest['config_hash']} vs {expect}"
            )
    blob = np.load(path)
    prefix = "ema/" if use_ema else "param/"
    if use_ema and not manifest.get("ema"):
        raise CheckpointError("checkpoint carries no EMA weights")
    state = {k[len(prefix):]: blob[k] for k in blob.files if k.startswith(prefix)}
    model.load_state_dict(state)
    return manifest


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    steps: int
    log: list
    checkpoint: str
    last_good_checkpoint: str
    ema: object


def _image_losses(model, scene, beta_level, weights):
    """Depth, reconstruction and parameter-regression terms for one scene."""
    from .phyfusion import dehaze_diff

    phy = model.estimate_physics(scene.raster_at(beta_level), scene.boxes)
    hazy_t = ad.Tensor(as_model_image(scene.raster_at(beta_level)))
    depth_gt = ad.Tensor(scene.depth[None])
    comps = {}
    comps["depth"] = losses.l_depth(
        phy["depth"], depth_gt, hazy_t, lambdas=weights.depth_lambdas
    )
    # clamping the clear estimate into physical range is what makes the
    # reconstruction non-trivially sensitive to bad parameter estimates
    # (an unclamped inversion re-hazes back to the input identically)
    clear_hat = ad.clip(
        dehaze_diff(hazy_t, phy["beta"], phy["airlight"], phy["depth"]), 0.0, 1.0
    )
    recon = losses.l_recon(hazy_t, clear_hat, phy["beta"], phy["airlight"], phy["depth"])
    # parameter regression folded into the reconstruction component: the
    # synthetic benchmark records the true airlight and coefficient. The
    # coefficient term carries extra weight because everything downstream
    # conditions on it and its cue saturates at heavy haze.
    a_gt = ad.Tensor(np.asarray(scene.airlight, dtype=np.float64))
    recon = recon + ad.abs_(phy["airlight"] - a_gt).mean()
    recon = recon + 3.0 * ad.abs_(phy["beta"] - beta_level)
    comps["recon"] = recon
    return comps, phy


def train(model, scenes, train_cfg, weights=None, beta_level=1.0, out_dir=None,
          log_every=20, checkpoint_every=200, scan_backend=None):
    """Optimize the full objective over the scenes' frame groups.

    ``beta_level`` fixes the haze level of the training rasters; passing
    None uses each scene's own generation level (mixed-level training over
    the full benchmark). Deterministic given the config seed: batch order,
    dropout and latent draws all derive from it. Returns the training log
    and checkpoint paths. NaN losses abort with a reference to the last
    good checkpoint.
    """
    weights = weights or losses.LossWeights()
    out_dir = out_dir or "."
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(train_cfg.seed)
    model.train(True)

    groups = []
    for si, scene in enumerate(scenes):
        for g in scene.groups:
            groups.append((si, g))
    if not groups:
        raise TrainingAbort("no frame groups to train on")

    params = model.parameters()
    opt = AdamW(params, lr=train_cfg.lr, weight_decay=train_cfg.weight_decay)
    ema = EMA(model, train_cfg.ema_decay)
    steps_per_epoch = max(1, len(groups) // train_cfg.batch_groups)
    total_steps = train_cfg.epochs * steps_per_epoch
    log = []
    last_good = None
    ckpt_path = os.path.join(out_dir, "model.npz")
    step = 0
    t_start = time.time()

    # between image-loss steps the scene's estimated coefficient is reused
    # as a constant; each scene's estimate refreshes when its image step fires
    beta_cache = {}

    precision = (
        scan.scan_precision(np.float32) if train_cfg.mixed_precision else _NullCtx()
    )
    with precision:
        for epoch in range(train_cfg.epochs):
            if train_cfg.deterministic:
                order = np.random.default_rng((train_cfg.seed, epoch)).permutation(len(groups))
            else:
                order = rng.permutation(len(groups))
            for start in range(0, len(order) - train_cfg.batch_groups + 1,
                               train_cfg.batch_groups):
                batch = [groups[i] for i in order[start : start + train_cfg.batch_groups]]
                opt.lr = cosine_lr(step, total_steps, train_cfg.lr, train_cfg.lr_floor)

                # image-side terms run as their own interleaved optimizer
                # steps: their gradients neither eat the clip budget of the
                # trajectory terms nor replace any trajectory update
                if (model.phyfusion is not None
                        and step % train_cfg.image_update_every == 0):
                    opt.zero_grad()
                    opt.lr = opt.lr * train_cfg.image_lr_scale
                    img_total = None
                    img_log = {}
                    for si, _group in batch:
                        scene = scenes[si]
                        lvl = beta_level if beta_level is not None else scene.level
                        comps, phy = _image_losses(model, scene, lvl, weights)
                        beta_cache[scene.scene_id] = float(phy["beta"].data)
                        loss = losses.l_total(comps, weights)
                        img_total = loss if img_total is None else img_total + loss
                        for k, v in comps.items():
                            img_log[k] = img_log.get(k, 0.0) + float(v.data)
                    img_total = img_total * (1.0 / len(batch))
                    if not np.isfinite(float(img_total.data)):
                        raise TrainingAbort("non-finite image loss", last_good)
                    img_total.backward()
                    clip_global_norm(params, train_cfg.grad_clip)
                    opt.step()
                    ema.update(model)
                    if step % log_every == 0:
                        log.append({
                            "step": step, "epoch": epoch, "kind": "image",
                            "loss": float(img_total.data), "lr": opt.lr,
                            "wall_s": time.time() - t_start,
                            **{f"loss_{k}": v / len(batch) for k, v in img_log.items()},
                        })
                    opt.lr = opt.lr / train_cfg.image_lr_scale

                opt.zero_grad()
                comps_log = {}
                total = None
                for si, group in batch:
                    scene = scenes[si]
                    lvl = beta_level if beta_level is not None else scene.level
                    comps = {}
                    if model.phyfusion is not None:
                        if scene.scene_id not in beta_cache:
                            with ad.no_grad():
                                est = model.estimate_physics(
                                    scene.raster_at(lvl), scene.boxes
                                )
                            beta_cache[scene.scene_id] = float(est["beta"].data)
                        phy = {"beta": ad.Tensor(np.array(beta_cache[scene.scene_id]))}
                    else:
                        phy = None
                    out = model.forward_group(
                        group,
                        ped_boxes=scene.boxes,
                        phy=phy,
                        scan_backend=scan_backend,
                        sample_seed=int(rng.integers(2**31)),
                    )
                    kl_w = weights.kl_at(step, total_steps)
                    fut = group.futures()
                    comps["traj"] = losses.l_traj(out.y_pred, fut, out.kl, kl_w)
                    comps["ade"] = losses.l_ade(out.y_pred, fut)
                    comps["fde"] = losses.l_fde(out.y_pred, fut)
                    gates = model.gates_matrix(group, out.beta_hat)
                    comps["social"] = losses.l_social(out.y_pred, fut, gates)
                    loss = losses.l_total(comps, weights)
                    total = loss if total is None else total + loss
                    for k, v in comps.items():
                        comps_log[k] = comps_log.get(k, 0.0) + float(v.data)
                total = total * (1.0 / len(batch))
                if not np.isfinite(float(total.data)):
                    raise TrainingAbort("non-finite total loss", last_good)
                total.backward()
                pre_norm = clip_global_norm(params, train_cfg.grad_clip)
                opt.step()
                ema.update(model)
                if step % log_every == 0:
                    row = {
                        "step": step,
                        "epoch": epoch,
                        "kind": "trajectory",
                        "loss": float(total.data),
                        "lr": opt.lr,
                        "grad_norm": pre_norm,
                        "wall_s": time.time() - t_start,
                    }
                    row.update({f"loss_{k}": v / len(batch) for k, v in comps_log.items()})
                    log.append(row)
                if checkpoint_every and step and step % checkpoint_every == 0:
                    save_checkpoint(ckpt_path, model, step, model.cfg, train_cfg, ema)
                    last_good = ckpt_path
                step += 1

    save_checkpoint(ckpt_path, model, step, model.cfg, train_cfg, ema)
    with open(os.path.join(out_dir, "train_log.json"), "w") as fh:
        json.dump(log, fh)
    return TrainResult(steps=step, log=log, checkpoint=ckpt_path,
                       last_good_checkpoint=last_good or ckpt_path, ema=ema)


class _NullCtx:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def evaluate_scenes(model, scenes, beta_level, k_samples=20, seed=0,
                    scan_backend=None, with_frd=True, baseline=False):
    """Aggregate metrics over held-out scenes at one haze level.

    Returns a dict with min_ade/min_fde/cr/srs/frd; with ``baseline=True``
    the constant-velocity predictor is measured instead of the model.
    """
    model.eval()
    ades, fdes, crs, srss = [], [], [], []
    frd_hazy, frd_clear = [], []
    with ad.no_grad():
        for scene in scenes:
            phy = None
            if model.phyfusion is not None:
                phy = model.estimate_physics(scene.raster_at(beta_level), scene.boxes)
                if with_frd:
                    clear_feat = model.phyfusion.shared(
                        ad.Tensor(as_model_image(scene.clear))
                    )
                    frd_hazy.append(phy["f_inv"].data)
                    frd_clear.append(clear_feat.data)
            for group in scene.groups:
                fut = group.futures()
                if baseline:
                    pred = constant_velocity_baseline(group)
                    samples = pred[None]
                else:
                    out = model.forward_group(
                        group, phy=phy, scan_backend=scan_backend,
                        k_samples=k_samples, sample_seed=seed,
                        train_futures=False,
                    )
                    samples = out.prediction_set.samples
                ades.append(metrics.min_ade(samples, fut))
                fdes.append(metrics.min_fde(samples, fut))
                selected = metrics.select_min_ade_sample(samples, fut)
                cr, flag = metrics.collision_rate(selected)
                if flag:
                    crs.append(cr)
                if group.n >= 2:
                    beta_for_gates = (
                        phy["beta"] if phy is not None else ad.Tensor(np.array(0.0))
                    )
                    gates = model.gates_matrix(group, beta_for_gates)
                    srss.append(metrics.srs(selected, fut, beta_level, gates.data))
    report = {
        "min_ade": float(np.mean(ades)) if ades else float("nan"),
        "min_fde": float(np.mean(fdes)) if fdes else float("nan"),
        "cr": float(np.mean(crs)) if crs else 0.0,
        "srs": float(np.mean(srss)) if srss else float("nan"),
        "frd": metrics.frd(frd_hazy, frd_clear) if frd_hazy else float("nan"),
        "n_groups": sum(len(s.groups) for s in scenes),
    }
    return report


def evaluate_grid(model, scenes_by_beta, scene_label, k_samples=20, seed=0,
                  run_id="", cfg_hash="", measure_timing=False,
                  include_baseline=False):
    """MetricReport rows over the beta grid (and optional baseline rows)."""
    rows = []
    for beta_level, scenes in sorted(scenes_by_beta.items()):
        rep = evaluate_scenes(model, scenes, beta_level, k_samples=k_samples, seed=seed)
        timing = {"latency_ms": float("nan"), "fps": float("nan")}
        if measure_timing and scenes and scenes[0].groups:
            group = scenes[0].groups[0]
            with ad.no_grad():
                timing = metrics.timing(
                    lambda: model.forward_group(group, train_futures=False, k_samples=1),
                    n_runs=100, warmup=10,
                )
        rows.append(
            metrics.MetricReport(
                scene=scene_label, beta=beta_level, min_ade=rep["min_ade"],
                min_fde=rep["min_fde"], frd=rep["frd"], srs=rep["srs"], cr=rep["cr"],
                latency_ms=timing["latency_ms"], fps=timing["fps"],
                run_id=run_id, config_hash=cfg_hash,
            )
        )
        if include_baseline:
            base = evaluate_scenes(model, scenes, beta_level, baseline=True)
            rows.append(
                metrics.MetricReport(
                    scene=f"{scene_label}:constant-velocity", beta=beta_level,
                    min_ade=base["min_ade"], min_fde=base["min_fde"], frd=float("nan"),
                    srs=base["srs"], cr=base["cr"], run_id=run_id, config_hash=cfg_hash,
                )
            )
    return rows
