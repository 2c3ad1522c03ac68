"""Training losses: depth supervision, physical reconstruction, trajectory
CVAE objective, displacement metrics as losses, and social consistency.

All functions operate on autodiff tensors and return scalars; the weighted
total aborts training loudly on a NaN component instead of poisoning the
optimizer state.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .exceptions import TrainingAbort


@dataclass
class LossWeights:
    """Coefficients of the total objective and its sub-terms."""

    alpha: tuple = (0.3, 0.2, 1.0, 0.5, 0.5, 0.3)  # depth, recon, traj, ade, fde, social
    depth_lambdas: tuple = (1.0, 0.5, 0.5)  # l1, edge, gradient-consistency
    kl_weight: float = 0.1
    kl_warmup_frac: float = 0.1  # linear 0 -> kl_weight over this fraction of steps

    def kl_at(self, step, total_steps):
        if total_steps <= 0:
            return self.kl_weight
        ramp_end = self.kl_warmup_frac * total_steps
        if ramp_end <= 0 or step >= ramp_end:
            return self.kl_weight
        return self.kl_weight * step / ramp_end


def _grads2d(x):
    """Forward differences along the two trailing spatial axes."""
    gy = x[..., 1:, :] - x[..., :-1, :]
    gx = x[..., :, 1:] - x[..., :, :-1]
    return gy, gx


def l_depth(d_pred, d_gt, image, lambdas=(1.0, 0.5, 0.5)):
    """Absolute depth error + edge-aware and gradient-consistency terms.

    The edge term weights depth-gradient mismatches by the image gradient
    magnitude, so depth discontinuities are pushed to coincide with image
    edges; the last term matches raw depth gradients everywhere.
    """
    d_pred = ad.as_tensor(d_pred)
    d_gt = ad.as_tensor(d_gt)
    img = ad.as_tensor(image)
    l1, l2, l3 = lambdas
    loss = l1 * ad.abs_(d_pred - d_gt).mean()
    if img.ndim == d_pred.ndim + 1:  # channel-first image over a (.., H, W) depth
        img = img.mean(axis=-3)
    gy_p, gx_p = _grads2d(d_pred)
    gy_t, gx_t = _grads2d(d_gt)
    if l2:
        wy, wx = _grads2d(img)
        edge = (ad.abs_(wy.data) * ad.abs_(gy_p - gy_t)).mean() + (
            ad.abs_(wx.data) * ad.abs_(gx_p - gx_t)
        ).mean()
        loss = loss + l2 * edge
    if l3:
        grad = ad.abs_(gy_p - gy_t).mean() + ad.abs_(gx_p - gx_t).mean()
        loss = loss + l3 * grad
    return loss


def l_recon(hazy, clear_hat, beta, airlight, depth):
    """Mean L1 between the observed hazy image and the re-hazed estimate.

    Re-hazing composes the forward scattering model on the estimated clear
    image with the estimated physical parameters, so gradients reach every
    estimator branch.
    """
    hazy = ad.as_tensor(hazy)  # (1, 3, H, W)
    clear_hat = ad.as_tensor(clear_hat)
    t = ad.exp(-beta * depth)  # (1, H, W)
    t4 = ad.reshape(t, (1, 1) + t.shape[1:])
    a4 = ad.reshape(airlight, (1, 3, 1, 1))
    rehazed = clear_hat * t4 + a4 * (1.0 - t4)
    return ad.abs_(hazy - rehazed).mean()


def l_traj(y_pred, y_gt, kl_value=None, kl_weight=0.0):
    """Mean squared Euclidean error plus the weighted latent KL."""
    y_pred = ad.as_tensor(y_pred)
    diff = y_pred - ad.as_tensor(y_gt)
    sq = (diff**2).sum(axis=-1)  # squared Euclidean per (ped, step)
    loss = sq.mean()
    if kl_value is not None and kl_weight:
        loss = loss + kl_weight * kl_value
    return loss


def l_ade(y_pred, y_gt):
    """Mean over pedestrians of the per-step mean Euclidean distance."""
    diff = ad.as_tensor(y_pred) - ad.as_tensor(y_gt)
    dist = ad.sqrt((diff**2).sum(axis=-1) + 1e-12)
    return dist.mean()


def l_fde(y_pred, y_gt):
    """Mean final-step Euclidean distance."""
    diff = ad.as_tensor(y_pred) - ad.as_tensor(y_gt)
    dist = ad.sqrt((diff**2).sum(axis=-1) + 1e-12)
    return dist[:, -1].mean()


def l_social(y_pred, y_gt, gates):
    """Pairwise relative-displacement consistency, weighted by the haze gate.

    ``gates`` is an (N, N) array or Tensor of g(beta, d_ij) values; pairs are
    ordered (i != j). Returns 0 for fewer than two pedestrians. Predictions
    that preserve every relative displacement score 0 even when absolutely
    wrong.
    """
    y_pred = ad.as_tensor(y_pred)
    y_gt = ad.as_tensor(y_gt)
    n = y_pred.shape[0]
    if n < 2:
        return ad.Tensor(np.array(0.0))
    rel_pred = ad.reshape(y_pred, (n, 1, -1, 2)) - ad.reshape(y_pred, (1, n, -1, 2))
    rel_gt = ad.reshape(y_gt, (n, 1, -1, 2)) - ad.reshape(y_gt, (1, n, -1, 2))
    sq = ((rel_pred - rel_gt) ** 2).sum(axis=-1)  # (n, n, T)
    g = ad.as_tensor(gates)
    weighted = sq * ad.reshape(g, (n, n, 1))
    off = ~np.eye(n, dtype=bool)
    t_steps = y_pred.shape[1]
    total = (weighted * off[:, :, None]).sum()
    return total * (1.0 / (n * (n - 1) * t_steps))


TOTAL_ORDER = ("depth", "recon", "traj", "ade", "fde", "social")


def l_total(components, weights):
    """alpha-weighted sum of the six components, in the documented order.

    Raises :class:`TrainingAbort` naming the first non-finite component.
    """
    total = None
    for name, alpha in zip(TOTAL_ORDER, weights.alpha):
        comp = components.get(name)
        if comp is None:
            continue
        value = float(comp.data) if isinstance(comp, ad.Tensor) else float(comp)
        if not np.isfinite(value):
            raise TrainingAbort(f"loss component {name!r} is not finite ({value})")
        term = alpha * ad.as_tensor(comp)
        total = term if total is None else total + term
    return total if total is not None else ad.Tensor(np.array(0.0))
