"""Selective state-space temporal encoder for per-pedestrian sequences.

Input is a batch of (T, 2+F) trajectories (coordinates plus kinematic
features). A layer-normalized affine projection lifts them to the model
width; a stack of gated state-space blocks with causal depthwise
convolutions models time; causal cross-layer attention connects
non-adjacent layers; a learned pyramid collapses the per-layer outputs
into the final multi-scale feature sequence.

Everything here is causal: the output at step t never depends on inputs
after t.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from .scan import scan_op_batched


@dataclass
class TemporalConfig:
    d_input: int = 7  # 2 coordinates + 5 kinematic features
    d_model: int = 64
    n_state: int = 16
    n_blocks: int = 2
    expand: int = 2
    d_conv: int = 4
    dt_rank: int = 8
    dropout: float = 0.1
    dt_min: float = 0.001
    dt_max: float = 0.1
    alpha_init: float = 0.1

    @property
    def d_inner(self):
        return self.expand * self.d_model

    @staticmethod
    def paper_scale():
        return TemporalConfig(d_model=256, n_state=128, n_blocks=4, dt_rank=16)


class InputProjection(nn.Module):
    """LayerNorm over the feature axis followed by an affine lift."""

    def __init__(self, cfg, rng):
        super().__init__()
        self.norm = nn.LayerNorm(cfg.d_input)
        self.proj = nn.Linear(cfg.d_input, cfg.d_model, rng)

    def __call__(self, x):
        return self.proj(self.norm(x))


class CausalDepthwiseConv(nn.Module):
    """Per-channel causal convolution of width ``k`` over (B, T, C)."""

    def __init__(self, channels, k, rng):
        super().__init__()
        self.w = nn.Parameter(nn.uniform_init(rng, (k, channels), k))
        self.b = nn.Parameter(np.zeros(channels))
        self.k = k

    def __call__(self, x):
        k = self.k
        xp = ad.pad2d(ad.swapaxes(x, 1, 2), 0, k - 1)  # (B, C, T + 2(k-1))
        xp = ad.swapaxes(xp, 1, 2)
        T = x.shape[1]
        out = None
        for i in range(k):
            # tap i sees input delayed by (k - 1 - i) steps
            piece = xp[:, i : i + T, :] * self.w[i]
            out = piece if out is None else out + piece
        return out + self.b


class SSMBlock(nn.Module):
    """Gated selective-scan block with a residual, normalized output.

    dt/B/C are input-dependent; dt goes through a low-rank map and a
    softplus (strictly positive), the state matrix is stored as
    ``-exp(A_log)`` so it stays strictly negative under optimization.
    """

    def __init__(self, cfg, rng, shared_dropout_rng):
        super().__init__()
        d, di, n = cfg.d_model, cfg.d_inner, cfg.n_state
        self.cfg = cfg
        self.inner = nn.Linear(d, di, rng)
        self.gate = nn.Linear(d, di, rng)
        self.conv = CausalDepthwiseConv(di, cfg.d_conv, rng)
        self.dt_lo = nn.Linear(d, cfg.dt_rank, rng, bias=False)
        self.dt_hi = nn.Linear(cfg.dt_rank, di, rng, bias=False)
        # bias chosen so softplus(bias) lands inside [dt_min, dt_max]
        u = rng.uniform(np.log(cfg.dt_min), np.log(cfg.dt_max), di)
        self.dt_bias = nn.Parameter(np.log(np.expm1(np.exp(u))))
        self.b_proj = nn.Linear(d, n, rng)
        self.c_proj = nn.Linear(d, n, rng)
        self.a_log = nn.Parameter(np.log(np.tile(np.arange(1.0, n + 1.0), (di, 1))))
        self.out = nn.Linear(di, d, rng)
        self.norm = nn.LayerNorm(d)
        self.drop = nn.Dropout(cfg.dropout, shared_dropout_rng)

    def __call__(self, x, scan_backend=None):
        u = ad.silu(self.conv(self.inner(x)))
        dt = ad.softplus(self.dt_hi(self.dt_lo(x)) + self.dt_bias)
        bmat = self.b_proj(x)
        cmat = self.c_proj(x)
        a = -ad.exp(self.a_log)
        y_state = scan_op_batched(dt, a, bmat, cmat, u, backend=scan_backend)
        y = y_state * ad.silu(self.gate(x))
        return self.norm(x + self.drop(self.out(y)))


def causal_attention(q, kv, alpha):
    """Single-head scaled dot-product over time with a causal mask.

    Residual form: q + alpha * Attn(Q=q, K=V=kv). Shapes are (B, T, D).
    """
    T = q.shape[1]
    d = q.shape[2]
    scores = ad.matmul(q, ad.swapaxes(kv, 1, 2)) * (1.0 / np.sqrt(d))
    mask = np.tril(np.ones((T, T), dtype=bool))[None, :, :]
    attn = ad.masked_softmax(scores, mask, axis=-1)
    return q + alpha * ad.matmul(attn, kv)


class PyramidFusion(nn.Module):
    """Mix layer outputs with softmax weights through one shared projection.

    Sharing the projection keeps the mix weight-independent when all layers
    agree; identity initialization makes the single-layer case an exact
    pass-through at the start of training.
    """

    def __init__(self, n_layers, d_model, rng):
        super().__init__()
        self.proj = nn.Linear(d_model, d_model, rng)
        self.proj.w.data = np.eye(d_model)
        self.logits = nn.Parameter(np.zeros(n_layers))

    def __call__(self, layer_outputs):
        w = ad.softmax(self.logits, axis=-1)
        out = None
        for i, f in enumerate(layer_outputs):
            piece = f * w[i]
            out = piece if out is None else out + piece
        return self.proj(out)

    def weights(self):
        return ad.softmax(self.logits, axis=-1).data


class TemporalEncoder(nn.Module):
    """Full encoder: projection, SSM blocks, cross-layer links, pyramid."""

    def __init__(self, cfg, rng, dropout_rng=None):
        super().__init__()
        self.cfg = cfg
        drop_rng = dropout_rng if dropout_rng is not None else np.random.default_rng(0)
        self.input_proj = InputProjection(cfg, rng)
        self.blocks = [SSMBlock(cfg, rng, drop_rng) for _ in range(cfg.n_blocks)]
        self.alphas = [
            nn.Parameter(np.array(cfg.alpha_init)) for _ in range(max(cfg.n_blocks - 1, 0))
        ]
        self.pyramid = PyramidFusion(cfg.n_blocks, cfg.d_model, rng)

    def __call__(self, x, scan_backend=None, return_layers=False):
        xh = self.input_proj(x)
        layers = []
        prev = xh  # F_0: the projected input feeds the first cross-layer link
        cur_in = xh
        for i, block in enumerate(self.blocks):
            f = block(cur_in, scan_backend=scan_backend)
            layers.append(f)
            if i < len(self.blocks) - 1:
                cur_in = causal_attention(f, prev, self.alphas[i])
                prev = f
        out = self.pyramid(layers)
        if return_layers:
            return out, layers
        return out
