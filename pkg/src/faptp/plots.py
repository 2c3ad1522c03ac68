"""Plot emitters: degradation curves over haze levels, social-attention
heatmaps from graph dumps, and a 2-D feature-projection hook."""

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from . import metrics


def plot_degradation(results_csv, out_dir, stem="degradation"):
    """minADE / minFDE against the scattering coefficient, one line per
    scene label. Returns the written file paths."""
    rows = metrics.read_results_csv(results_csv)
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for field, label in (("min_ade", "minADE (m)"), ("min_fde", "minFDE (m)")):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        by_scene = {}
        for r in rows:
            by_scene.setdefault(r.scene, []).append(r)
        for scene, cells in sorted(by_scene.items()):
            cells = sorted(cells, key=lambda r: r.beta)
            ax.plot(
                [c.beta for c in cells],
                [getattr(c, field) for c in cells],
                marker="o",
                label=scene,
            )
        ax.set_xlabel("scattering coefficient")
        ax.set_ylabel(label)
        ax.legend(fontsize=7)
        ax.grid(alpha=0.3)
        fig.tight_layout()
        path = os.path.join(out_dir, f"{stem}_{field}.png")
        fig.savefig(path, dpi=120)
        plt.close(fig)
        paths.append(path)
    return paths


def plot_attention_heatmap(dump, out_path, layer="layer0"):
    """Base vs modulated pedestrian-pedestrian attention for one scene."""
    base = np.mean(dump.base_weights[layer]["pp_base"], axis=0)
    mod = np.mean(dump.modulated_weights[layer], axis=0)
    fig, axes = plt.subplots(1, 2, figsize=(7, 3))
    for ax, mat, title in ((axes[0], base, "base"), (axes[1], mod, "haze-modulated")):
        im = ax.imshow(mat, cmap="viridis", vmin=0)
        ax.set_title(title, fontsize=9)
        ax.set_xlabel("neighbor")
        ax.set_ylabel("pedestrian")
        fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def project_features_2d(features):
    """SVD projection of flattened feature vectors onto two components
    (embedding hook for feature-distribution figures)."""
    x = np.stack([np.asarray(f, dtype=np.float64).ravel() for f in features])
    x = x - x.mean(axis=0, keepdims=True)
    _, _, vt = np.linalg.svd(x, full_matrices=False)
    return x @ vt[:2].T


def plot_feature_projection(features_by_label, out_path):
    """Scatter of 2-D feature projections, one color per label."""
    labels = []
    feats = []
    for label, fs in features_by_label.items():
        for f in fs:
            labels.append(label)
            feats.append(f)
    proj = project_features_2d(feats)
    fig, ax = plt.subplots(figsize=(4.5, 4))
    for label in sorted(set(labels)):
        mask = np.array([l == label for l in labels])
        ax.scatter(proj[mask, 0], proj[mask, 1], s=12, label=str(label), alpha=0.7)
    ax.legend(fontsize=7)
    ax.set_xlabel("component 1")
    ax.set_ylabel("component 2")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path
