"""Versioned dataset directories for the synthetic benchmark.

Layout of a dataset directory:

    meta.json               n_scenes, seed, behavior_beta, levels, version
    tracks/<scene_id>.txt   whitespace rows: frame_id ped_id x y
    rasters/                clear/depth/hazy float32 .npy + JSONL manifest
    boxes.json              scene_id -> pedestrian pixel boxes (raster frame)
    splits.json             train/val/test scene id lists (60/20/20 by index)

Trajectories round-trip through the same text format and parser that real
scene files use.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import haze, simulate, trajectories
from .exceptions import ConfigError
from .model import group_windows_by_frame

DATASET_VERSION = 1


@dataclass
class SceneData:
    scene_id: str
    records: list
    clear: np.ndarray
    depth: np.ndarray
    boxes: list
    airlight: tuple
    rasters: dict  # beta -> hazy raster
    level: float = None  # behavioral haze level the scene was generated at
    windows: list = field(default_factory=list)
    groups: list = field(default_factory=list)

    def raster_at(self, beta):
        if beta not in self.rasters:
            raise ConfigError(
                f"scene {self.scene_id} has no raster at beta={beta}; "
                f"available: {sorted(self.rasters)}"
            )
        return self.rasters[beta]


def scene_splits(scene_ids, fractions=(0.6, 0.2, 0.2)):
    """Deterministic 60/20/20 split of synthetic scenes by index order."""
    ids = list(scene_ids)
    n = len(ids)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    return {
        "train": ids[:n_train],
        "val": ids[n_train : n_train + n_val],
        "test": ids[n_train + n_val :],
    }


def write_tracks(path, records):
    with open(path, "w") as fh:
        ordered = sorted(records, key=lambda r: (r.frame_id, r.ped_id))
        for r in ordered:
            fh.write(f"{r.frame_id} {r.ped_id} {r.x:.6f} {r.y:.6f}\n")


def build_dataset(out_dir, n_scenes, seed, behavior_beta=1.0, levels=None,
                  sim_config=None):
    """Generate scenes, render and haze them, write the directory."""
    levels = levels if levels is not None else haze.HazeLevel.paper_levels()
    os.makedirs(out_dir, exist_ok=True)
    tracks_dir = os.path.join(out_dir, "tracks")
    rasters_dir = os.path.join(out_dir, "rasters")
    os.makedirs(tracks_dir, exist_ok=True)
    scenes = simulate.synth_scenes(
        n_scenes, seed=seed, haze_behavior=behavior_beta, config=sim_config
    )
    for scene in scenes:
        write_tracks(os.path.join(tracks_dir, f"{scene.scene_id}.txt"), scene.records)
    haze.synthesize_benchmark(scenes, levels, rasters_dir, seed=seed)
    boxes = {s.scene_id: [list(b) for b in s.ped_boxes] for s in scenes}
    with open(os.path.join(out_dir, "boxes.json"), "w") as fh:
        json.dump(boxes, fh)
    with open(os.path.join(out_dir, "splits.json"), "w") as fh:
        json.dump(scene_splits([s.scene_id for s in scenes]), fh, indent=0)
    meta = {
        "version": DATASET_VERSION,
        "n_scenes": n_scenes,
        "seed": seed,
        "behavior_beta": behavior_beta,
        "levels": [lv.beta for lv in levels],
    }
    with open(os.path.join(out_dir, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2)
    return meta


def load_dataset(out_dir, extract=True):
    """Read a dataset directory back into SceneData objects plus the split."""
    with open(os.path.join(out_dir, "meta.json")) as fh:
        meta = json.load(fh)
    if meta.get("version") != DATASET_VERSION:
        raise ConfigError(f"unsupported dataset version {meta.get('version')}")
    with open(os.path.join(out_dir, "boxes.json")) as fh:
        boxes = json.load(fh)
    with open(os.path.join(out_dir, "splits.json")) as fh:
        splits = json.load(fh)
    manifest = haze.load_manifest(os.path.join(out_dir, "rasters"))
    by_scene = {}
    for rec in manifest:
        by_scene.setdefault(rec.scene_id, []).append(rec)
    scenes = []
    for scene_id in sorted(by_scene):
        recs = by_scene[scene_id]
        rdir = os.path.join(out_dir, "rasters")
        clear = haze.load_raster(os.path.join(rdir, recs[0].clear_path))
        depth = haze.load_raster(os.path.join(rdir, recs[0].depth_path))
        rasters = {
            r.beta: haze.load_raster(os.path.join(rdir, r.raster_path)) for r in recs
        }
        records = trajectories.load_trajectories(
            os.path.join(out_dir, "tracks", f"{scene_id}.txt")
        )
        scene = SceneData(
            scene_id=scene_id,
            records=records,
            clear=clear,
            depth=depth,
            boxes=[tuple(b) for b in boxes.get(scene_id, [])],
            airlight=recs[0].airlight,
            rasters=rasters,
            level=meta.get("behavior_beta"),
        )
        if extract:
            scene.windows = trajectories.extract_windows(records, scene_id=scene_id)
            scene.groups = group_windows_by_frame(scene.windows)
        scenes.append(scene)
    return scenes, splits, meta


def split_scenes(scenes, splits):
    by_id = {s.scene_id: s for s in scenes}
    return (
        [by_id[i] for i in splits["train"] if i in by_id],
        [by_id[i] for i in splits["val"] if i in by_id],
        [by_id[i] for i in splits["test"] if i in by_id],
    )
