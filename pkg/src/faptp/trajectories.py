"""Trajectory ingestion, observation/prediction windows, and dataset splits.

Input files follow the common whitespace-separated convention of one row per
(frame, pedestrian) pair: ``frame_id ped_id x y`` with coordinates in meters.
Frames are resampled onto a uniform 0.4 s grid by nearest-frame selection,
8 observed frames predict the following 12.
"""

import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .exceptions import ConfigError, ParseError

DT = 0.4  # seconds per grid frame
OBS_LEN = 8
PRED_LEN = 12
WINDOW_LEN = OBS_LEN + PRED_LEN
N_FEATURES = 5  # vx, vy, ax, ay, heading


class TrackRecord(NamedTuple):
    frame_id: int
    ped_id: int
    x: float
    y: float


@dataclass
class TrajectoryWindow:
    """One pedestrian's 8-frame observation plus 12-frame future."""

    scene_id: str
    ped_id: int
    start_frame: int
    obs: np.ndarray  # (8, 2) meters
    fut: np.ndarray  # (12, 2) meters
    feat: np.ndarray  # (8, 5) derived kinematics
    neighbors: tuple  # ped_ids co-present on all 8 observation frames
    dt: float = DT

    def key(self):
        return (self.scene_id, self.ped_id, self.start_frame)

    @property
    def last_obs(self):
        return self.obs[-1]


@dataclass
class ExtractionReport:
    n_tracks: int = 0
    n_short_tracks: int = 0
    n_windows: int = 0


def load_trajectories(path):
    """Parse one scene file into records sorted by (ped_id, frame_id).

    Malformed rows are rejected with their line numbers; duplicate
    (frame, ped) pairs and non-increasing frames per pedestrian are parse
    errors. An empty file yields an empty scene with a warning.
    """
    records = []
    bad_lines = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 4:
                bad_lines.append((lineno, "expected 4 columns"))
                continue
            try:
                frame = float(parts[0])
                ped = float(parts[1])
                x = float(parts[2])
                y = float(parts[3])
            except ValueError:
                bad_lines.append((lineno, "non-numeric field"))
                continue
            if frame != int(frame) or ped != int(ped):
                bad_lines.append((lineno, "frame_id/ped_id must be integral"))
                continue
            records.append(TrackRecord(int(frame), int(ped), x, y))
    if bad_lines:
        detail = "; ".join(f"line {n}: {msg}" for n, msg in bad_lines[:10])
        raise ParseError(f"{path}: {len(bad_lines)} malformed line(s): {detail}")
    if not records:
        warnings.warn(f"{path}: empty scene", stacklevel=2)
        return []
    seen = set()
    prev = {}
    for r in records:  # file order: each pedestrian's frames must increase
        key = (r.frame_id, r.ped_id)
        if key in seen:
            raise ParseError(f"{path}: duplicate (frame, ped) pair {key}")
        seen.add(key)
        if r.ped_id in prev and r.frame_id <= prev[r.ped_id]:
            raise ParseError(
                f"{path}: frames not strictly increasing for pedestrian {r.ped_id}"
            )
        prev[r.ped_id] = r.frame_id
    records.sort(key=lambda r: (r.ped_id, r.frame_id))
    return records


def infer_frame_stride(records):
    """Most common positive frame difference within pedestrian tracks."""
    diffs = defaultdict(int)
    by_ped = defaultdict(list)
    for r in records:
        by_ped[r.ped_id].append(r.frame_id)
    for frames in by_ped.values():
        for a, b in zip(frames, frames[1:]):
            if b > a:
                diffs[b - a] += 1
    if not diffs:
        return 1
    return max(diffs.items(), key=lambda kv: (kv[1], -kv[0]))[0]


def resample_track(frames, xy, stride):
    """Snap a track onto the stride grid by nearest-frame selection.

    Returns a list of contiguous (grid_frames, positions) segments; a grid
    point with no sample within half a stride breaks the segment.
    """
    frames = np.asarray(frames)
    xy = np.asarray(xy, dtype=np.float64)
    segments = []
    cur_f, cur_p = [], []
    grid = np.arange(frames[0], frames[-1] + 1, stride)
    half = stride / 2.0
    for g in grid:
        idx = int(np.argmin(np.abs(frames - g)))
        if abs(int(frames[idx]) - int(g)) < half or frames[idx] == g:
            cur_f.append(int(g))
            cur_p.append(xy[idx])
        else:
            if cur_f:
                segments.append((cur_f, np.asarray(cur_p)))
            cur_f, cur_p = [], []
    if cur_f:
        segments.append((cur_f, np.asarray(cur_p)))
    return segments


def kinematic_features(obs, dt=DT):
    """Velocity, acceleration and heading rows for an (8, 2) observation.

    First differences are padded by replicating the first row so the feature
    tensor stays rectangular; heading is 0 whenever speed < 1e-6 m/s.
    """
    obs = np.asarray(obs, dtype=np.float64)
    v = np.diff(obs, axis=0) / dt
    v = np.vstack([v[:1], v])
    a = np.diff(v, axis=0) / dt
    a = np.vstack([a[:1], a])
    speed = np.linalg.norm(v, axis=1)
    heading = np.where(speed < 1e-6, 0.0, np.arctan2(v[:, 1], v[:, 0]))
    return np.column_stack([v, a, heading])


def extract_windows(records, scene_id="scene", with_report=False):
    """Sliding 20-frame windows (stride 1) for every sufficiently long track.

    Pedestrians with fewer than 20 consecutive grid frames silently yield no
    windows; their count is available through the report. Neighbor lists hold
    the pedestrians co-present on all 8 observation frames.
    """
    report = ExtractionReport()
    if not records:
        return ([], report) if with_report else []
    stride = infer_frame_stride(records)
    by_ped = defaultdict(list)
    for r in records:
        by_ped[r.ped_id].append(r)
    # presence[frame] = set of ped_ids observed at that grid frame
    presence = defaultdict(set)
    segments_by_ped = {}
    for ped_id, rows in by_ped.items():
        report.n_tracks += 1
        frames = [r.frame_id for r in rows]
        xy = [(r.x, r.y) for r in rows]
        segs = resample_track(frames, xy, stride)
        segments_by_ped[ped_id] = segs
        for seg_frames, _ in segs:
            for f in seg_frames:
                presence[f].add(ped_id)

    windows = []
    for ped_id in sorted(segments_by_ped):
        made_any = False
        for seg_frames, seg_xy in segments_by_ped[ped_id]:
            n = len(seg_frames)
            if n < WINDOW_LEN:
                continue
            for s in range(n - WINDOW_LEN + 1):
                obs = seg_xy[s : s + OBS_LEN]
                fut = seg_xy[s + OBS_LEN : s + WINDOW_LEN]
                obs_frames = seg_frames[s : s + OBS_LEN]
                co = set(presence[obs_frames[0]])
                for f in obs_frames[1:]:
                    co &= presence[f]
                co.discard(ped_id)
                windows.append(
                    TrajectoryWindow(
                        scene_id=scene_id,
                        ped_id=ped_id,
                        start_frame=seg_frames[s],
                        obs=np.array(obs),
                        fut=np.array(fut),
                        feat=kinematic_features(obs),
                        neighbors=tuple(sorted(co)),
                    )
                )
                made_any = True
        if not made_any:
            report.n_short_tracks += 1
    report.n_windows = len(windows)
    return (windows, report) if with_report else windows


@dataclass
class SplitSpec:
    held_out_scene: str
    fractions: tuple = (0.6, 0.2, 0.2)

    def __post_init__(self):
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must sum to 1, got {self.fractions}")


@dataclass
class Splits:
    train: list = field(default_factory=list)
    val: list = field(default_factory=list)
    test: list = field(default_factory=list)

    def keys(self):
        return {
            name: sorted(w.key() for w in part)
            for name, part in (("train", self.train), ("val", self.val), ("test", self.test))
        }


def split_scene_windows(windows, fractions=(0.6, 0.2, 0.2)):
    """Temporal 60/20/20 split of one scene's windows (ordered, atomic)."""
    ordered = sorted(windows, key=lambda w: (w.start_frame, w.ped_id))
    n = len(ordered)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    return ordered[:n_train], ordered[n_train : n_train + n_val], ordered[n_train + n_val :]


def make_splits(scene_windows, spec):
    """Leave-one-out splits over a {scene_name: windows} mapping.

    The held-out scene becomes the test set in full; every retained scene
    contributes its temporally first 60% of windows to train and the next
    20% to val (the retained scenes' own trailing 20% stays unused, keeping
    the leave-one-out protocol clean).
    """
    if len(scene_windows) < 2:
        raise ConfigError("leave-one-out split needs at least 2 scenes")
    if spec.held_out_scene not in scene_windows:
        raise ConfigError(
            f"held-out scene {spec.held_out_scene!r} not among {sorted(scene_windows)}"
        )
    out = Splits()
    for name in sorted(scene_windows):
        if name == spec.held_out_scene:
            out.test.extend(scene_windows[name])
            continue
        tr, va, _unused = split_scene_windows(scene_windows[name], spec.fractions)
        out.train.extend(tr)
        out.val.extend(va)
    return out
