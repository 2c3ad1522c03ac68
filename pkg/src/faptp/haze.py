"""Koschmieder scattering forward model, its exact inverse, and the graded
hazy-benchmark synthesizer.

The image formation model is

    I(x) = I0(x) * t(x) + A * (1 - t(x)),      t(x) = exp(-beta * d(x))

with a dimensionless scattering coefficient ``beta`` applied to a depth map
normalized to [0, 1]. The inverse recovers I0 exactly as long as every
transmission value stays above a small floor. All operations are pure
functions; no shared mutable state.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DimensionError, DomainError, SingularTransmissionError

BETA_MAX = 3.0
T_MIN = 0.01  # division guard; exp(-3) ~= 0.0498 so it never binds in-range

# (beta, approximate visibility in meters). The visibility column is carried
# as metadata only and never enters any computation.
PAPER_HAZE_LEVELS = ((0.0, 140.0), (0.5, 70.0), (1.0, 45.0), (2.0, 30.0))


@dataclass(frozen=True)
class HazeLevel:
    """One graded haze condition: scattering coefficient plus metadata."""

    beta: float
    visibility_m: float

    @staticmethod
    def paper_levels():
        return [HazeLevel(b, v) for b, v in PAPER_HAZE_LEVELS]


@dataclass
class ScatterParams:
    """Physical state of a hazy scene: beta, per-channel airlight, depth map."""

    beta: float
    airlight: np.ndarray  # shape (C,) with C in {1, 3}, each channel in [0, 1]
    depth: np.ndarray  # shape (H, W), values in [0, 1]

    def __post_init__(self):
        self.airlight = np.atleast_1d(np.asarray(self.airlight, dtype=np.float64))
        self.depth = np.asarray(self.depth, dtype=np.float64)
        self.validate()

    def validate(self):
        if not (0.0 <= self.beta <= BETA_MAX):
            raise DomainError(f"beta={self.beta} outside [0, {BETA_MAX}]")
        if self.airlight.min() < 0.0 or self.airlight.max() > 1.0:
            raise DomainError("airlight channels must lie in [0, 1]")
        if self.depth.size and (self.depth.min() < 0.0 or self.depth.max() > 1.0):
            raise DomainError("depth values must lie in [0, 1]")

    def transmission(self):
        return transmission(self.beta, self.depth)


def transmission(beta, depth):
    """Per-pixel transmission exp(-beta * depth), shape-preserving."""
    depth = np.asarray(depth, dtype=np.float64)
    if beta < 0:
        raise DomainError(f"beta must be non-negative, got {beta}")
    if depth.size and (depth.min() < 0.0 or depth.max() > 1.0):
        raise DomainError("depth values must lie in [0, 1]")
    return np.exp(-beta * depth)


def _spread_airlight(airlight, image):
    """Broadcast per-channel airlight against an (H, W) or (H, W, C) image."""
    a = np.atleast_1d(np.asarray(airlight, dtype=np.float64))
    if image.ndim == 2:
        if a.size == 1:
            return a[0]
        # grayscale raster with a replicated 3-channel airlight
        if np.ptp(a) > 0:
            raise DimensionError(
                "grayscale image needs a scalar or channel-identical airlight"
            )
        return a[0]
    if image.ndim == 3:
        if a.size == 1:
            return a[0]
        if a.size != image.shape[2]:
            raise DimensionError(
                f"airlight has {a.size} channels, image has {image.shape[2]}"
            )
        return a[None, None, :]
    raise DimensionError(f"image must be 2-D or 3-D, got shape {image.shape}")


def _expand_t(t, image):
    if image.ndim == 3:
        return t[:, :, None]
    return t


def apply_haze(clear, params):
    """Forward scattering model: I = I0 * t + A * (1 - t).

    The output is a per-pixel convex combination of the clear image and the
    airlight, so it stays inside [0, 1] whenever its inputs do.
    """
    clear = np.asarray(clear, dtype=np.float64)
    params.validate()
    if clear.size and (clear.min() < 0.0 or clear.max() > 1.0):
        raise DomainError("clear image values must lie in [0, 1]")
    if clear.shape[:2] != params.depth.shape:
        raise DimensionError(
            f"image spatial shape {clear.shape[:2]} != depth shape {params.depth.shape}"
        )
    t = _expand_t(transmission(params.beta, params.depth), clear)
    a = _spread_airlight(params.airlight, clear)
    return clear * t + a * (1.0 - t)


def dehaze(hazy, params, clamp=False):
    """Exact algebraic inverse of :func:`apply_haze` under identical params.

    I0 = (I - A * (1 - t)) / t. Raises :class:`SingularTransmissionError`
    when any transmission value falls below ``T_MIN``. The result is left
    unclamped by default; pass ``clamp=True`` to clip into [0, 1].
    """
    hazy = np.asarray(hazy, dtype=np.float64)
    params.validate()
    if hazy.shape[:2] != params.depth.shape:
        raise DimensionError(
            f"image spatial shape {hazy.shape[:2]} != depth shape {params.depth.shape}"
        )
    t = transmission(params.beta, params.depth)
    bad = int(np.count_nonzero(t < T_MIN))
    if bad:
        raise SingularTransmissionError(bad, T_MIN)
    t = _expand_t(t, hazy)
    a = _spread_airlight(params.airlight, hazy)
    clear = (hazy - a * (1.0 - t)) / t
    if clamp:
        clear = np.clip(clear, 0.0, 1.0)
    return clear


def apply_haze_grads(clear, params):
    """Analytic partial derivatives of the forward model.

    Returns a dict with d_clear (dI/dI0, per pixel), d_beta (dI/dbeta),
    d_airlight (dI/dA) and d_depth (dI/dd), each broadcast to the hazy
    image's shape. Used by tests against central finite differences and by
    the differentiable estimation path.
    """
    clear = np.asarray(clear, dtype=np.float64)
    t = _expand_t(transmission(params.beta, params.depth), clear)
    a = _spread_airlight(params.airlight, clear)
    d = _expand_t(params.depth, clear)
    return {
        "d_clear": np.broadcast_to(t, clear.shape).copy(),
        "d_airlight": np.broadcast_to(1.0 - t, clear.shape).copy(),
        "d_beta": (a - clear) * d * t,
        "d_depth": (a - clear) * params.beta * t,
    }


# ---------------------------------------------------------------------------
# Benchmark synthesis + raster I/O
# ---------------------------------------------------------------------------

MANIFEST_NAME = "rasters.manifest.jsonl"


@dataclass
class HazyRecord:
    """One manifest row: where a hazy raster came from."""

    scene_id: str
    beta: float
    airlight: tuple
    visibility_m: float
    raster_path: str
    depth_path: str
    clear_path: str
    seed: int

    def to_json(self):
        return json.dumps(
            {
                "scene_id": self.scene_id,
                "beta": self.beta,
                "airlight": list(self.airlight),
                "visibility_m": self.visibility_m,
                "raster_path": self.raster_path,
                "depth_path": self.depth_path,
                "clear_path": self.clear_path,
                "seed": self.seed,
            }
        )

    @staticmethod
    def from_json(line):
        d = json.loads(line)
        d["airlight"] = tuple(d["airlight"])
        return HazyRecord(**d)


def save_raster(path, array):
    """Lossless float32 raster file."""
    np.save(path, np.asarray(array, dtype=np.float32))


def load_raster(path):
    return np.load(path).astype(np.float64)


def quantize8(array):
    """Round a [0, 1] raster onto the 8-bit grid (used by byte-level checks)."""
    return np.clip(np.rint(np.asarray(array) * 255.0), 0, 255).astype(np.uint8)


def synthesize_benchmark(scenes, levels, out_dir, seed=0):
    """Emit one hazy raster per (scene, level) with ground-truth params.

    Each scene must expose ``scene_id``, ``clear`` (H x W raster in [0, 1])
    and ``depth`` (H x W map in [0, 1]); a missing depth map is an error, not
    a silent constant-depth fallback. Airlight is drawn once per scene from
    a seeded generator, replicated across three channels so grayscale rasters
    stay grayscale. Fully deterministic given ``seed``.

    Returns the list of :class:`HazyRecord` rows that were also written to
    the sidecar manifest.
    """
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    records = []
    for scene in scenes:
        depth = getattr(scene, "depth", None)
        if depth is None:
            raise DomainError(f"scene {scene.scene_id!r} is missing a depth map")
        clear = np.asarray(scene.clear, dtype=np.float64)
        a_gray = float(rng.uniform(0.75, 0.95))
        airlight = (a_gray, a_gray, a_gray)
        clear_path = os.path.join(out_dir, f"{scene.scene_id}_clear.npy")
        depth_path = os.path.join(out_dir, f"{scene.scene_id}_depth.npy")
        save_raster(clear_path, clear)
        save_raster(depth_path, depth)
        for level in levels:
            params = ScatterParams(level.beta, np.array(airlight[:1]), depth)
            hazy = apply_haze(clear, params)
            raster_path = os.path.join(
                out_dir, f"{scene.scene_id}_beta{level.beta:g}.npy"
            )
            save_raster(raster_path, hazy)
            records.append(
                HazyRecord(
                    scene_id=scene.scene_id,
                    beta=level.beta,
                    airlight=airlight,
                    visibility_m=level.visibility_m,
                    raster_path=os.path.basename(raster_path),
                    depth_path=os.path.basename(depth_path),
                    clear_path=os.path.basename(clear_path),
                    seed=seed,
                )
            )
    with open(os.path.join(out_dir, MANIFEST_NAME), "w") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")
    return records


def load_manifest(out_dir):
    path = os.path.join(out_dir, MANIFEST_NAME)
    with open(path) as fh:
        return [HazyRecord.from_json(line) for line in fh if line.strip()]
