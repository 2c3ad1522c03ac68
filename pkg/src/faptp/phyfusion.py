"""Physical parameter estimation (depth, airlight, scattering coefficient)
and the dual-path haze-invariant feature fusion.

The estimation side reads a hazy image and produces the scattering state:
a U-Net depth map in [0, 1], a per-channel airlight in [0, 1]^3 from pooled
per-pixel descriptors, and a scalar coefficient in [0, 3] from fused global
and pedestrian-region features.

The fusion side runs two weight-tied feature paths: one on the physically
inverted (dehazed) image, one on the raw image with a learned scattering
modulation, blended by a single learnable weight.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from .exceptions import InputError


@dataclass
class PhyFusionConfig:
    unet_base: int = 8  # first encoder width; doubles per level, capped below
    unet_levels: int = 5
    airlight_hidden: int = 128
    beta_channels: tuple = (8, 16, 24, 32)
    beta_head: tuple = (64, 16)
    shared_channels: tuple = (8, 12)
    alpha_fuse_init: float = 0.8  # physics-dominant blend at initialization
    gamma_init: float = 0.1
    delta_init: float = 0.01

    @staticmethod
    def paper_scale():
        return PhyFusionConfig(
            unet_base=16,
            beta_channels=(64, 128, 256, 512),
            beta_head=(256, 64),
            shared_channels=(32, 64),
        )


def _unet_widths(base, levels):
    return [min(base * 2**i, 32 * base) for i in range(levels)]


def _pad_bottom_right(x, ph, pw):
    """Zero-pad the bottom/right of an NCHW tensor (differentiable)."""
    data = np.pad(x.data, ((0, 0), (0, 0), (0, ph), (0, pw)))
    h, w = x.shape[2], x.shape[3]

    def backward(g):
        return (g[:, :, :h, :w],)

    return ad._make(data, (x,), backward)


class DepthUNet(nn.Module):
    """Encoder-decoder depth estimator; output matches the input shape.

    Five 3x3 conv + ReLU encoder levels, each followed by 2x average
    pooling; five decoder levels of nearest upsampling, skip concatenation
    and 3x3 conv + ReLU; terminal 1x1 conv + sigmoid. Inputs whose spatial
    size is not divisible by 2^levels are zero-padded and cropped back.
    """

    def __init__(self, cfg, rng):
        super().__init__()
        widths = _unet_widths(cfg.unet_base, cfg.unet_levels)
        self.levels = cfg.unet_levels
        self.enc = []
        c_in = 3
        for w in widths:
            self.enc.append(nn.Conv2d(c_in, w, 3, rng))
            c_in = w
        c = widths[-1]
        self.dec_convs = []
        for i in range(self.levels - 1, 0, -1):
            skip_c = widths[i]
            out_c = widths[i - 1]
            self.dec_convs.append(nn.Conv2d(c + skip_c, out_c, 3, rng))
            c = out_c
        self.dec_final = nn.Conv2d(c + widths[0], widths[0], 3, rng)
        self.head = nn.Conv2d(widths[0], 1, 1, rng, padding=0)

    def __call__(self, image):
        x = ad.as_tensor(image)
        _, _, h, w = x.shape
        mult = 2**self.levels
        ph = (-h) % mult
        pw = (-w) % mult
        if ph or pw:
            x = _pad_bottom_right(x, ph, pw)
        skips = []
        cur = x
        for conv in self.enc:
            cur = ad.relu(conv(cur))
            skips.append(cur)
            cur = ad.avg_pool2d(cur, 2)
        for i, conv in enumerate(self.dec_convs):
            cur = ad.upsample_nearest2(cur, 2)
            skip = skips[self.levels - 1 - i]
            cur = ad.relu(conv(ad.concat([cur, skip], axis=1)))
        cur = ad.upsample_nearest2(cur, 2)
        cur = ad.relu(self.dec_final(ad.concat([cur, skips[0]], axis=1)))
        depth = ad.sigmoid(self.head(cur))
        if ph or pw:
            depth = depth[:, :, :h, :w]
        return depth[:, 0]  # (N, H, W)


def airlight_pixel_features(image, depth, alpha):
    """Per-pixel descriptor rows [v (3), p (2), exp(-alpha * d)] as (P, 6).

    Mean pooling over the row axis makes the estimate invariant to any
    permutation applied jointly to the (v, p, d) tuples.
    """
    img = ad.as_tensor(image)  # (1, 3, H, W)
    d = ad.as_tensor(depth)  # (1, H, W)
    _, _, H, W = img.shape
    rows = np.broadcast_to(np.linspace(0.0, 1.0, H)[:, None], (H, W)).reshape(-1, 1)
    cols = np.broadcast_to(np.linspace(0.0, 1.0, W)[None, :], (H, W)).reshape(-1, 1)
    v = ad.swapaxes(ad.reshape(img, (3, H * W)), 0, 1)  # (P, 3)
    att = ad.reshape(ad.exp(-alpha * d), (H * W, 1))
    return ad.concat([v, ad.Tensor(rows), ad.Tensor(cols), att], axis=1)


class AirlightEstimator(nn.Module):
    """Pooled per-pixel descriptors [value, position, exp(-alpha * depth)]
    through a small MLP; sigmoid keeps every channel inside [0, 1]."""

    def __init__(self, cfg, rng):
        super().__init__()
        h = cfg.airlight_hidden
        self.mlp = nn.MLP([6, h, h, 3], rng, act="relu", final_act="sigmoid")
        self.alpha_raw = nn.Parameter(np.array(np.log(np.e - 1.0)))  # softplus -> 1.0

    def alpha(self):
        return ad.softplus(self.alpha_raw)

    def head(self, pixel_features):
        pooled = pixel_features.mean(axis=0)
        return self.mlp(pooled)

    def __call__(self, image, depth):
        return self.head(airlight_pixel_features(image, depth, self.alpha()))


def _pool_box(feature_map, box, scale):
    """Mean-pool a feature map crop for one pedestrian box.

    ``box`` is (r0, c0, r1, c1) in image pixels; ``scale`` maps image to
    feature-map coordinates. Equivalent to a uniform 4x4 grid pool followed
    by a mean.
    """
    _, C, H, W = feature_map.shape
    r0 = min(max(box[0] // scale, 0), H - 1)
    c0 = min(max(box[1] // scale, 0), W - 1)
    r1 = max(min((box[2] + scale - 1) // scale, H), r0 + 1)
    c1 = max(min((box[3] + scale - 1) // scale, W), c0 + 1)
    crop = feature_map[:, :, int(r0) : int(r1), int(c0) : int(c1)]
    return ad.global_mean_pool2d(crop)[0]  # (C,)


class BetaEstimator(nn.Module):
    """Scalar scattering coefficient in [0, 3] from global scene features
    fused with mean-pooled pedestrian region features.

    The global feature carries the backbone's pooled activations plus the
    image's first two moments: brightness and contrast are the sufficient
    statistics the scattering level physically controls, and handing them
    to the head directly makes the estimate robust at heavy haze.
    """

    def __init__(self, cfg, rng):
        super().__init__()
        chans = cfg.beta_channels
        self.convs = []
        c_in = 3
        for c in chans:
            self.convs.append(nn.Conv2d(c_in, c, 3, rng))
            c_in = c
        self.region_default = nn.Parameter(np.zeros(chans[1]))
        head_dims = [chans[-1] + chans[1] + 2, *cfg.beta_head, 1]
        self.head = nn.MLP(head_dims, rng, act="relu")
        self.region_layer = 2  # region features from the second conv map (stride 4)

    def __call__(self, image, ped_boxes):
        x = ad.as_tensor(image)
        _, _, H, W = x.shape
        for r0, c0, r1, c1 in ped_boxes:
            if not (0 <= r0 < r1 <= H and 0 <= c0 < c1 <= W):
                raise InputError(f"pedestrian box {(r0, c0, r1, c1)} outside {H}x{W} image")
        region_map = None
        cur = x
        for i, conv in enumerate(self.convs):
            cur = ad.relu(conv(cur))
            if i + 1 == self.region_layer:
                region_map = cur
            cur = ad.avg_pool2d(cur, 2)
        mean = x.mean()
        contrast = ad.sqrt(((x - mean) ** 2).mean() + 1e-12)
        moments = ad.concat([ad.reshape(mean, (1,)), ad.reshape(contrast, (1,))], axis=0)
        f_global = ad.concat([ad.global_mean_pool2d(cur)[0], moments], axis=0)
        if ped_boxes:
            scale = 2**self.region_layer
            regions = [_pool_box(region_map, b, scale) for b in ped_boxes]
            f_region = regions[0] * (1.0 / len(regions))
            for r in regions[1:]:
                f_region = f_region + r * (1.0 / len(regions))
        else:
            f_region = self.region_default
        fused = ad.concat([f_global, f_region], axis=0)
        return 3.0 * ad.sigmoid(self.head(fused)[0])


class SharedCNN(nn.Module):
    """Feature extractor shared verbatim by the physical and adapted paths."""

    def __init__(self, cfg, rng):
        super().__init__()
        chans = cfg.shared_channels
        self.convs = []
        c_in = 3
        for c in chans:
            self.convs.append(nn.Conv2d(c_in, c, 3, rng))
            c_in = c
        self.out_channels = chans[-1]

    def __call__(self, image):
        cur = ad.as_tensor(image)
        for conv in self.convs:
            cur = ad.relu(conv(cur))
        return cur


def dehaze_diff(image, beta, airlight, depth):
    """Differentiable scattering inversion used inside the estimation graph.

    beta in [0, 3] and depth in [0, 1] keep the transmission >= exp(-3), so
    no clamping is required; the output is intentionally left unclamped.
    """
    img = ad.as_tensor(image)  # (1, 3, H, W)
    t = ad.exp(-beta * depth)  # (1, H, W)
    t4 = ad.reshape(t, (1, 1) + t.shape[1:])
    a4 = ad.reshape(airlight, (1, 3, 1, 1))
    return (img - a4 * (1.0 - t4)) / t4


def fuse(f_phys, f_adapt, alpha):
    """Convex blend alpha * F_phys + (1 - alpha) * F_adapt."""
    f_phys = ad.as_tensor(f_phys)
    f_adapt = ad.as_tensor(f_adapt)
    if f_phys.shape != f_adapt.shape:
        from .exceptions import DimensionError

        raise DimensionError(f"fuse shapes differ: {f_phys.shape} vs {f_adapt.shape}")
    return alpha * f_phys + (1.0 - alpha) * f_adapt


class PhyFusion(nn.Module):
    """Estimation + dual-path fusion; one hazy image in, one feature map out."""

    def __init__(self, cfg, rng):
        super().__init__()
        self.cfg = cfg
        self.depth_net = DepthUNet(cfg, rng)
        self.airlight_net = AirlightEstimator(cfg, rng)
        self.beta_net = BetaEstimator(cfg, rng)
        self.shared = SharedCNN(cfg, rng)
        self.gamma = nn.Parameter(np.array(cfg.gamma_init))
        self.delta = nn.Parameter(np.array(cfg.delta_init))
        self.alpha_logit = nn.Parameter(np.array(nn.logit(cfg.alpha_fuse_init)))
        self.airlight_proj = nn.Linear(3, cfg.shared_channels[-1], rng)

    def alpha_fuse(self):
        return ad.sigmoid(self.alpha_logit)

    def estimate(self, image, ped_boxes):
        depth = self.depth_net(image)
        airlight = self.airlight_net(image, depth)
        beta = self.beta_net(image, ped_boxes)
        return depth, airlight, beta

    def phys_features(self, image, beta, airlight, depth):
        return self.shared(dehaze_diff(image, beta, airlight, depth))

    def adapt_features(self, image, beta, airlight, d_mean):
        base = self.shared(image)
        modulation = 1.0 + self.gamma * ad.exp(-beta * d_mean)
        bias = self.delta * self.airlight_proj(airlight)
        return base * modulation + ad.reshape(bias, (1, -1, 1, 1))

    def __call__(self, image, ped_boxes):
        depth, airlight, beta = self.estimate(image, ped_boxes)
        d_mean = depth.mean()
        f_phys = self.phys_features(image, beta, airlight, depth)
        f_adapt = self.adapt_features(image, beta, airlight, d_mean)
        f_inv = fuse(f_phys, f_adapt, self.alpha_fuse())
        return {
            "depth": depth,
            "airlight": airlight,
            "beta": beta,
            "d_mean": d_mean,
            "f_phys": f_phys,
            "f_adapt": f_adapt,
            "f_inv": f_inv,
        }


def as_model_image(raster):
    """Lift an (H, W) grayscale raster to the (1, 3, H, W) model layout."""
    arr = np.asarray(raster, dtype=np.float64)
    if arr.ndim == 2:
        arr = np.repeat(arr[None, :, :], 3, axis=0)
    elif arr.ndim == 3 and arr.shape[2] in (1, 3):
        arr = np.moveaxis(arr, 2, 0)
        if arr.shape[0] == 1:
            arr = np.repeat(arr, 3, axis=0)
    return arr[None]
