"""Spatio-temporal feature fusion, pedestrian projection, and the CVAE
trajectory decoder.

Temporal and social features are blended by a learnable balance and scaled
by a haze-conditioned enhancement vector; adaptive time pooling plus an MLP
yields one representation per pedestrian. A conditional VAE decodes futures
in displacement space (cumulatively summed from the last observed position,
so predictions are continuous with the observation). Training uses the
posterior over the observed future; inference samples a conditional prior.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from .exceptions import DimensionError, UsageError


@dataclass
class DecoderConfig:
    d_model: int = 64
    latent_dim: int = 32
    pred_len: int = 12
    k_samples: int = 20
    psi_hidden: int = 128
    enc_hidden: int = 128
    dec_hidden: int = 128
    lambda_init: float = 0.5

    @staticmethod
    def paper_scale():
        return DecoderConfig(d_model=256, psi_hidden=1024, enc_hidden=1024, dec_hidden=1024)


@dataclass
class LatentGaussian:
    """Diagonal Gaussian (mu, log sigma^2); tensors keep the graph alive."""

    mu: object
    log_var: object

    @property
    def dim(self):
        return self.mu.shape[-1]

    def sample(self, eps):
        """Reparameterized draw with externally supplied standard noise."""
        return self.mu + ad.exp(0.5 * self.log_var) * ad.as_tensor(eps)

    def numpy(self):
        return self.mu.data if isinstance(self.mu, ad.Tensor) else self.mu


def gaussian_kl(q, p):
    """KL(q || p) between diagonal Gaussians, summed over latent dims,
    averaged over the batch."""
    var_q = ad.exp(q.log_var)
    var_p = ad.exp(p.log_var)
    per_dim = 0.5 * (
        p.log_var - q.log_var + (var_q + (q.mu - p.mu) ** 2) / var_p - 1.0
    )
    total = per_dim.sum(axis=-1)
    return total.mean() if total.ndim else total


@dataclass
class PredictionSet:
    """K sampled futures per pedestrian plus the draws that produced them."""

    samples: np.ndarray  # (K, N, pred_len, 2)
    latents: np.ndarray  # (K, N, latent_dim)
    seed: int

    @property
    def k(self):
        return self.samples.shape[0]


def save_predictions(path, entries):
    """Prediction dump: per (scene, window) the K x N x 12 x 2 samples plus
    alignment metadata, consumable by the metric suite and the plot CLI.

    ``entries`` is a list of dicts with keys scene_id, start_frame, ped_ids,
    prediction_set, and optionally y_gt.
    """
    arrays = {}
    index = []
    for i, e in enumerate(entries):
        ps = e["prediction_set"]
        arrays[f"samples/{i}"] = ps.samples
        arrays[f"latents/{i}"] = ps.latents
        arrays[f"ped_ids/{i}"] = np.asarray(e["ped_ids"])
        if e.get("y_gt") is not None:
            arrays[f"y_gt/{i}"] = np.asarray(e["y_gt"])
        index.append((e["scene_id"], int(e["start_frame"]), int(ps.seed)))
    arrays["index_scene"] = np.asarray([r[0] for r in index])
    arrays["index_start"] = np.asarray([r[1] for r in index])
    arrays["index_seed"] = np.asarray([r[2] for r in index])
    np.savez_compressed(path, **arrays)


def load_predictions(path):
    blob = np.load(path)
    n = len(blob["index_scene"])
    out = []
    for i in range(n):
        out.append(
            {
                "scene_id": str(blob["index_scene"][i]),
                "start_frame": int(blob["index_start"][i]),
                "ped_ids": blob[f"ped_ids/{i}"],
                "prediction_set": PredictionSet(
                    samples=blob[f"samples/{i}"],
                    latents=blob[f"latents/{i}"],
                    seed=int(blob["index_seed"][i]),
                ),
                "y_gt": blob[f"y_gt/{i}"] if f"y_gt/{i}" in blob.files else None,
            }
        )
    return out


class SpatioTemporalFusion(nn.Module):
    """(lambda * F_multi + (1 - lambda) * F_graph) * (1 + delta * tanh(W_b * beta))."""

    def __init__(self, cfg, rng):
        super().__init__()
        self.lambda_raw = nn.Parameter(np.array(nn.logit(cfg.lambda_init)))
        self.delta = nn.Parameter(np.array(0.1))
        self.beta_proj = nn.Linear(1, cfg.d_model, rng, bias=False)

    def balance(self):
        return ad.sigmoid(self.lambda_raw)

    def __call__(self, f_multi, f_graph, beta):
        if f_multi.shape[0] != f_graph.shape[0] or f_multi.shape[2] != f_graph.shape[1]:
            raise DimensionError(
                f"fusion shapes differ: {f_multi.shape} vs {f_graph.shape}"
            )
        lam = self.balance()
        blend = lam * f_multi + (1.0 - lam) * ad.reshape(
            f_graph, (f_graph.shape[0], 1, f_graph.shape[1])
        )
        enh = 1.0 + self.delta * ad.tanh(self.beta_proj(ad.reshape(beta, (1, 1))))
        return blend * ad.reshape(enh, (1, 1, -1))


class PedestrianProjection(nn.Module):
    """Adaptive mean pooling over time followed by a two-layer MLP."""

    def __init__(self, cfg, rng):
        super().__init__()
        self.mlp = nn.MLP([cfg.d_model, cfg.psi_hidden, cfg.d_model], rng, act="relu")

    def __call__(self, f_final):
        return self.mlp(f_final.mean(axis=1))


class CVAEDecoder(nn.Module):
    """Conditional posterior/prior heads and the displacement decoder."""

    def __init__(self, cfg, rng):
        super().__init__()
        self.cfg = cfg
        out = 2 * cfg.latent_dim
        flat_future = 2 * cfg.pred_len
        self.posterior_net = nn.MLP([cfg.d_model + flat_future, cfg.enc_hidden, out], rng)
        self.prior_net = nn.MLP([cfg.d_model, cfg.enc_hidden, out], rng, zero_last=True)
        self.decode_net = nn.MLP(
            [cfg.latent_dim + cfg.d_model, cfg.dec_hidden, cfg.dec_hidden, flat_future], rng
        )

    def _split(self, packed):
        d = self.cfg.latent_dim
        return LatentGaussian(packed[:, :d], packed[:, d:])

    def posterior(self, f_p, y_future_rel):
        """q(z | condition, future); training only.

        ``y_future_rel`` is the future relative to the last observed
        position, (N, pred_len, 2), keeping the encoder translation-invariant
        like the displacement decoder.
        """
        if not self.training:
            raise UsageError("posterior is a training-time operation")
        y = ad.reshape(ad.as_tensor(y_future_rel), (f_p.shape[0], -1))
        return self._split(self.posterior_net(ad.concat([f_p, y], axis=1)))

    def prior(self, f_p):
        """Conditional prior p(z | condition); N(0, I) at initialization."""
        return self._split(self.prior_net(f_p))

    def decode(self, z, f_p, last_pos):
        """12 displacement steps, cumulatively summed from the last position."""
        out = self.decode_net(ad.concat([z, f_p], axis=1))
        disp = ad.reshape(out, (f_p.shape[0], self.cfg.pred_len, 2))
        cum = ad.cumsum(disp, axis=1)
        return cum + ad.reshape(ad.as_tensor(last_pos), (-1, 1, 2))

    def sample_noise(self, shape, seed, index):
        """Counter-based noise keyed on (seed, sample index): parallel and
        serial sampling agree bit-exactly."""
        bitgen = np.random.Philox(key=(np.uint64(seed) << np.uint64(32)) + np.uint64(index))
        return np.random.Generator(bitgen).standard_normal(shape)

    def sample_k(self, f_p, last_pos, k=None, seed=0):
        """K i.i.d. prior draws decoded to trajectories; deterministic given seed."""
        k = self.cfg.k_samples if k is None else k
        if k < 1:
            raise ValueError("k must be >= 1")
        prior = self.prior(f_p)
        n = f_p.shape[0]
        samples = np.empty((k, n, self.cfg.pred_len, 2))
        latents = np.empty((k, n, self.cfg.latent_dim))
        with ad.no_grad():
            for i in range(k):
                eps = self.sample_noise((n, self.cfg.latent_dim), seed, i)
                z = prior.sample(eps)
                latents[i] = z.data
                samples[i] = self.decode(z, f_p, last_pos).data
        return PredictionSet(samples=samples, latents=latents, seed=seed)
