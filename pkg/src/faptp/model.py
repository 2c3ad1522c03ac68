"""Full prediction model: physical estimation, temporal encoding, social
graph, fusion, and the CVAE decoder, with the ablation switches wired in.

The unit of computation is one frame group: the pedestrians of one scene
whose observation windows share a start frame (they are exactly the
co-present agents a social graph can connect). Scene imagery enters once
per group through the estimated scattering coefficient.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import nn
from .decoder import CVAEDecoder, PedestrianProjection, SpatioTemporalFusion, gaussian_kl
from .phyfusion import PhyFusion, as_model_image
from .social import SocialGraph
from .temporal import TemporalConfig, TemporalEncoder, causal_attention


@dataclass
class FrameGroup:
    """Co-present windows of one scene at one start frame."""

    scene_id: str
    start_frame: int
    windows: list

    @property
    def n(self):
        return len(self.windows)

    def obs_features(self):
        xs = [np.concatenate([w.obs, w.feat], axis=1) for w in self.windows]
        return np.stack(xs)  # (n, 8, 7)

    def futures(self):
        return np.stack([w.fut for w in self.windows])

    def last_positions(self):
        return np.stack([w.last_obs for w in self.windows])


def group_windows_by_frame(windows):
    """Bucket windows into FrameGroups keyed by (scene, start_frame)."""
    buckets = {}
    for w in windows:
        buckets.setdefault((w.scene_id, w.start_frame), []).append(w)
    groups = []
    for (scene, start), ws in sorted(buckets.items()):
        ws = sorted(ws, key=lambda w: w.ped_id)
        groups.append(FrameGroup(scene_id=scene, start_frame=start, windows=ws))
    return groups


class LSTMEncoder(nn.Module):
    """Recurrent baseline used by the no_mamba ablation."""

    def __init__(self, cfg, rng):
        super().__init__()
        d_in, d = cfg.d_input, cfg.d_model
        self.d_model = d
        self.w_x = nn.Linear(d_in, 4 * d, rng)
        self.w_h = nn.Linear(d, 4 * d, rng, bias=False)
        self.out_norm = nn.LayerNorm(d)

    def __call__(self, x, scan_backend=None, return_layers=False):
        n, T, _ = x.shape
        d = self.d_model
        h = ad.Tensor(np.zeros((n, d)))
        c = ad.Tensor(np.zeros((n, d)))
        outs = []
        for t in range(T):
            gates = self.w_x(x[:, t, :]) + self.w_h(h)
            i = ad.sigmoid(gates[:, :d])
            f = ad.sigmoid(gates[:, d : 2 * d])
            o = ad.sigmoid(gates[:, 2 * d : 3 * d])
            g = ad.tanh(gates[:, 3 * d :])
            c = f * c + i * g
            h = o * ad.tanh(c)
            outs.append(ad.reshape(h, (n, 1, d)))
        seq = self.out_norm(ad.concat(outs, axis=1))
        return (seq, [seq]) if return_layers else seq


class TransformerEncoder(nn.Module):
    """Quadratic-attention baseline used by the use_transformer ablation."""

    def __init__(self, cfg, rng, n_layers=2):
        super().__init__()
        d = cfg.d_model
        self.proj = nn.Linear(cfg.d_input, d, rng)
        self.norms = [nn.LayerNorm(d) for _ in range(n_layers)]
        self.ffns = [nn.MLP([d, 2 * d, d], rng, act="relu") for _ in range(n_layers)]
        self.alphas = [nn.Parameter(np.array(1.0)) for _ in range(n_layers)]

    def __call__(self, x, scan_backend=None, return_layers=False):
        cur = self.proj(x)
        layers = []
        for norm, ffn, alpha in zip(self.norms, self.ffns, self.alphas):
            attended = causal_attention(cur, cur, alpha)
            cur = norm(attended + ffn(attended))
            layers.append(cur)
        return (cur, layers) if return_layers else cur


@dataclass
class SceneForward:
    """Everything one forward pass produces for a frame group."""

    y_pred: object = None
    prediction_set: object = None
    f_multi: object = None
    f_graph: object = None
    f_p: object = None
    beta_hat: object = None
    kl: object = None
    phy: dict = field(default_factory=dict)
    gates: object = None


class FAPTPModel(nn.Module):
    """Composed predictor with ablation switches."""

    def __init__(self, cfg, rng=None):
        super().__init__()
        self.cfg = cfg
        rng = rng or np.random.default_rng(cfg.seed)
        self.dropout_rng = np.random.default_rng(cfg.seed + 1)
        ab = cfg.ablation
        self.phyfusion = None if ab.no_phyfusion else PhyFusion(cfg.phyfusion, rng)
        if ab.no_mamba:
            self.encoder = LSTMEncoder(cfg.temporal, rng)
        elif ab.use_transformer:
            self.encoder = TransformerEncoder(cfg.temporal, rng)
        else:
            self.encoder = TemporalEncoder(cfg.temporal, rng, dropout_rng=self.dropout_rng)
        social_cfg = cfg.social
        if ab.homo_graph:
            social_cfg = type(social_cfg)(**{**vars(social_cfg), "homogeneous": True})
        self.social = None if ab.no_dynahetero else SocialGraph(social_cfg, rng)
        self.fusion = SpatioTemporalFusion(cfg.decoder, rng)
        self.projection = PedestrianProjection(cfg.decoder, rng)
        self.cvae = CVAEDecoder(cfg.decoder, rng)

    # -- image side ---------------------------------------------------------

    def estimate_physics(self, image, ped_boxes):
        """Run the estimation branch on an (H, W) raster; None without it."""
        if self.phyfusion is None or image is None:
            return None
        return self.phyfusion(ad.Tensor(as_model_image(image)), list(ped_boxes or []))

    # -- trajectory side ------------------------------------------------------

    def forward_group(self, group, image=None, ped_boxes=None, phy=None,
                      scan_backend=None, k_samples=None, sample_seed=0,
                      train_futures=True):
        """Forward one frame group; trains with futures, else samples K."""
        if phy is None:
            phy = self.estimate_physics(image, ped_boxes)
        beta_hat = phy["beta"] if phy else ad.Tensor(np.array(0.0))

        x = ad.Tensor(group.obs_features())
        backend = scan_backend
        f_multi = self.encoder(x, scan_backend=backend)

        if self.social is not None:
            f_graph = self.social(f_multi, group.windows, beta_hat)
        else:
            f_graph = ad.Tensor(np.zeros((group.n, self.cfg.decoder.d_model)))

        f_final = self.fusion(f_multi, f_graph, beta_hat)
        f_p = self.projection(f_final)
        last = group.last_positions()

        out = SceneForward(f_multi=f_multi, f_graph=f_graph, f_p=f_p,
                           beta_hat=beta_hat, phy=phy or {})
        if self.social is not None:
            out.gates = self.social.modulation(
                "P2P", beta_hat, self._pair_distances(group).reshape(-1)
            )
        if self.training and train_futures:
            fut = group.futures()
            fut_rel = fut - last[:, None, :]
            q = self.cvae.posterior(f_p, fut_rel)
            eps = self.cvae.sample_noise((group.n, self.cfg.decoder.latent_dim),
                                         sample_seed, 0)
            z = q.sample(eps)
            out.y_pred = self.cvae.decode(z, f_p, last)
            p = self.cvae.prior(f_p)
            out.kl = gaussian_kl(q, p)
        else:
            out.prediction_set = self.cvae.sample_k(
                f_p, last, k=k_samples, seed=sample_seed
            )
        return out

    def gates_matrix(self, group, beta_hat):
        """P2P haze gates as an (n, n) tensor; stays differentiable so the
        social-consistency loss trains the modulator and the coefficient
        estimate behind it."""
        if self.social is None:
            return ad.Tensor(np.ones((group.n, group.n)))
        g = self.social.modulation("P2P", beta_hat,
                                   self._pair_distances(group).reshape(-1))
        return ad.reshape(g, (group.n, group.n))

    @staticmethod
    def _pair_distances(group):
        pos = group.last_positions()
        return np.linalg.norm(pos[:, None] - pos[None, :], axis=2)

    # -- reporting ------------------------------------------------------------

    def component_params(self):
        """Parameter counts grouped the way the architecture is organized:
        estimation+fusion front end, temporal encoder, and the social
        graph together with the decoder stack it feeds."""
        front = self.phyfusion.n_params() if self.phyfusion else 0
        temporal = self.encoder.n_params()
        social = self.social.n_params() if self.social else 0
        decoder = (
            self.fusion.n_params() + self.projection.n_params() + self.cvae.n_params()
        )
        return {
            "phyfusion": front,
            "temporal": temporal,
            "social_decoder": social + decoder,
            "total": front + temporal + social + decoder,
        }


def constant_velocity_baseline(group, pred_len=12, dt=0.4):
    """Extrapolate each pedestrian's last observed velocity."""
    preds = []
    for w in group.windows:
        v = (w.obs[-1] - w.obs[-2]) / dt
        steps = w.obs[-1][None, :] + v[None, :] * dt * np.arange(1, pred_len + 1)[:, None]
        preds.append(steps)
    return np.stack(preds)
