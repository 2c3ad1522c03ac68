"""Evaluation metrics: best-of-K displacement errors, feature-recovery
cosine, collision rate with sub-step interpolation, the composite social
rationality score, and latency measurement. Plain numpy throughout.
"""

import csv
import platform
import time
from dataclasses import dataclass, field, fields

import numpy as np

COLLISION_THRESHOLD_M = 0.2
COLLISION_SUBSTEPS = 10

# artifact-defined SRS composite (the metric is named but not specified
# upstream): collision, social-consistency and speed-plausibility terms
SRS_WEIGHTS = (0.4, 0.4, 0.2)
SPEED_LIMIT_BASE = 2.5  # m/s at beta = 0, scaled by 1/(1 + 0.15 beta)


def ade(y_pred, y_gt):
    """Per-pedestrian average displacement error, (N,) vector."""
    d = np.linalg.norm(np.asarray(y_pred) - np.asarray(y_gt), axis=-1)
    return d.mean(axis=-1)


def fde(y_pred, y_gt):
    d = np.linalg.norm(np.asarray(y_pred) - np.asarray(y_gt), axis=-1)
    return d[..., -1]


def min_ade(samples, y_gt, return_pick=False):
    """Best-of-K ADE: per pedestrian the minimum over samples, then the mean.

    Ties break toward the lowest sample index (np.argmin convention).
    """
    per = np.stack([ade(s, y_gt) for s in samples])  # (K, N)
    pick = per.argmin(axis=0)
    value = float(per.min(axis=0).mean())
    return (value, pick) if return_pick else value


def min_fde(samples, y_gt, return_pick=False):
    per = np.stack([fde(s, y_gt) for s in samples])
    pick = per.argmin(axis=0)
    value = float(per.min(axis=0).mean())
    return (value, pick) if return_pick else value


def select_min_ade_sample(samples, y_gt):
    """Assemble the (N, T, 2) trajectory set from each pedestrian's best sample."""
    _, pick = min_ade(samples, y_gt, return_pick=True)
    n = samples.shape[1]
    return samples[pick, np.arange(n)]


def frd(features_hazy, features_clear, eps=1e-8):
    """Mean cosine similarity between flattened feature pairs, in [-1, 1].

    Arguments are parallel sequences of per-sample feature arrays (any
    shape); each pair is flattened before the cosine.
    """
    sims = []
    for a, b in zip(features_hazy, features_clear):
        va = np.asarray(a, dtype=np.float64).ravel()
        vb = np.asarray(b, dtype=np.float64).ravel()
        den = max(np.linalg.norm(va) * np.linalg.norm(vb), eps)
        sims.append(float(va @ vb / den))
    return float(np.mean(sims))


def pair_min_distance(traj_i, traj_j, substeps=COLLISION_SUBSTEPS):
    """Minimum distance between two trajectories under linear interpolation.

    Both trajectories are (T, 2); each frame gap is checked at ``substeps``
    interior points so crossings between frames are not aliased away.
    """
    ti = np.asarray(traj_i, dtype=np.float64)
    tj = np.asarray(traj_j, dtype=np.float64)
    best = float(np.linalg.norm(ti[0] - tj[0]))
    fracs = np.linspace(0.0, 1.0, substeps + 1)
    for t in range(len(ti) - 1):
        pi = ti[t][None] + fracs[:, None] * (ti[t + 1] - ti[t])[None]
        pj = tj[t][None] + fracs[:, None] * (tj[t + 1] - tj[t])[None]
        best = min(best, float(np.linalg.norm(pi - pj, axis=1).min()))
    return best


def collision_rate(trajectories, threshold=COLLISION_THRESHOLD_M,
                   substeps=COLLISION_SUBSTEPS):
    """Percentage of co-present pairs whose interpolated distance drops
    below the threshold. Returns (percent, flag); the flag is False when
    fewer than two pedestrians are present (the rate is then defined as 0).
    """
    trajs = np.asarray(trajectories, dtype=np.float64)
    n = len(trajs)
    if n < 2:
        return 0.0, False
    pairs = 0
    hits = 0
    for i in range(n):
        for j in range(i + 1, n):
            pairs += 1
            if pair_min_distance(trajs[i], trajs[j], substeps) < threshold:
                hits += 1
    return 100.0 * hits / pairs, True


def social_consistency_error(y_pred, y_gt, gates):
    """Numpy mirror of the pairwise consistency loss (ordered pairs, mean)."""
    y_pred = np.asarray(y_pred, dtype=np.float64)
    y_gt = np.asarray(y_gt, dtype=np.float64)
    n = len(y_pred)
    if n < 2:
        return 0.0
    rel_p = y_pred[:, None] - y_pred[None, :]
    rel_t = y_gt[:, None] - y_gt[None, :]
    sq = ((rel_p - rel_t) ** 2).sum(axis=-1)  # (n, n, T)
    g = np.asarray(gates, dtype=np.float64)
    off = ~np.eye(n, dtype=bool)
    return float((sq * g[:, :, None])[off].mean())


def speed_violation_rate(trajectories, beta, dt=0.4, base=SPEED_LIMIT_BASE):
    """Fraction of predicted steps faster than the haze-scaled speed limit."""
    trajs = np.asarray(trajectories, dtype=np.float64)
    speed = np.linalg.norm(np.diff(trajs, axis=1), axis=-1) / dt
    limit = base / (1.0 + 0.15 * float(beta))
    return float((speed > limit).mean())


def srs(trajectories, y_gt, beta, gates, dt=0.4, weights=SRS_WEIGHTS,
        return_parts=False):
    """Social rationality score in [0, 1] (artifact-defined composite).

    1 - clamp(w1 * CR/100 + w2 * (1 - exp(-social error)) + w3 * speed
    violation rate). Sub-scores are returned for reproducibility.
    """
    cr, _ = collision_rate(trajectories)
    soc = social_consistency_error(trajectories, y_gt, gates)
    spd = speed_violation_rate(trajectories, beta, dt=dt)
    parts = {
        "collision": cr / 100.0,
        "social": 1.0 - np.exp(-soc),
        "speed": spd,
    }
    penalty = weights[0] * parts["collision"] + weights[1] * parts["social"] + weights[2] * parts["speed"]
    score = 1.0 - float(np.clip(penalty, 0.0, 1.0))
    return (score, parts) if return_parts else score


def timing(fn, n_runs=100, warmup=10):
    """Median latency of ``fn()`` plus FPS and a hardware string."""
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(n_runs):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    latency_ms = float(np.median(times) * 1000.0)
    return {
        "latency_ms": latency_ms,
        "fps": 1000.0 / latency_ms if latency_ms > 0 else float("inf"),
        "hardware": f"{platform.machine()} {platform.processor() or 'cpu'}",
        "n_runs": n_runs,
    }


@dataclass
class MetricReport:
    """One evaluation cell: held-out scene at one haze level."""

    scene: str
    beta: float
    min_ade: float
    min_fde: float
    frd: float
    srs: float
    cr: float
    latency_ms: float = float("nan")
    fps: float = float("nan")
    run_id: str = ""
    config_hash: str = ""

    def validate(self):
        assert self.min_fde >= 0
        assert 0 <= self.cr <= 100
        assert -1 <= self.frd <= 1 or np.isnan(self.frd)
        assert 0 <= self.srs <= 1 or np.isnan(self.srs)


RESULTS_HEADER = [f.name for f in fields(MetricReport)]


def write_results_csv(path, reports):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULTS_HEADER)
        for r in reports:
            writer.writerow([getattr(r, name) for name in RESULTS_HEADER])


def read_results_csv(path):
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            out.append(
                MetricReport(
                    scene=row["scene"],
                    beta=float(row["beta"]),
                    min_ade=float(row["min_ade"]),
                    min_fde=float(row["min_fde"]),
                    frd=float(row["frd"]),
                    srs=float(row["srs"]),
                    cr=float(row["cr"]),
                    latency_ms=float(row["latency_ms"]),
                    fps=float(row["fps"]),
                    run_id=row["run_id"],
                    config_hash=row["config_hash"],
                )
            )
    return out
