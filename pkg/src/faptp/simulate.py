"""Synthetic social scenes: goal-directed point agents with pairwise repulsion.

A light social-force integrator drives agents across a square world; each
scene also renders a grayscale occupancy raster and a ground-truth depth map
so the scattering physics can be exercised without real video frames.

Haze changes behavior, not just appearance: with ``haze_behavior`` set, the
preferred speed scales by 1/(1 + 0.15*beta), preferred in-group spacing
shrinks by 1/(1 + 0.1*beta), and per-step heading jitter grows linearly in
beta (pedestrians correct course more erratically at low visibility, which
makes futures genuinely harder to predict as haze thickens).
"""

from dataclasses import dataclass, field

import numpy as np

from .trajectories import DT, TrackRecord


@dataclass
class SimConfig:
    world_size: float = 20.0  # meters, square
    n_frames: int = 26
    substeps: int = 4
    mean_speed: float = 1.34
    speed_std: float = 0.2
    relax_time: float = 0.5
    repulsion: float = 2.0
    repulsion_range: float = 0.5
    body_radius: float = 0.3
    cohesion: float = 0.8
    group_spacing: float = 1.2
    heading_noise: float = 0.03  # radians/step at beta = 0
    heading_noise_per_beta: float = 0.3  # extra radians/step per unit beta
    # stop-and-go hesitations: onset probability per frame grows with haze,
    # making futures genuinely harder to extrapolate at low visibility
    hesitate_prob_per_beta: float = 0.06
    hesitate_frames: tuple = (2, 5)  # inclusive duration range
    hesitate_factor: float = 0.2  # preferred-speed multiplier while hesitating
    # slowly wandering preferred speed (first-order autoregressive); its
    # amplitude grows with haze and, unlike hesitations, never saturates
    speed_wander_per_beta: float = 0.05
    speed_wander_rho: float = 0.9
    # scattering also degrades the tracker: recorded positions carry noise
    # proportional to haze density (applied to every stored coordinate)
    track_noise_per_beta: float = 0.04  # meters std per unit beta
    # visibility window on pairwise interactions: agents only react to
    # neighbors they can see, and the range contracts with haze, so social
    # influence in the data genuinely shortens as beta grows
    vis_range0: float = 8.0  # meters at beta = 0
    vis_range_per_beta: float = 0.45  # r_vis = vis_range0 / (1 + this * beta)
    # anticipatory avoidance: approaching pairs steer sideways well before
    # contact -- the long-range social channel that haze removes
    anticipation: float = 1.2
    anticipation_range: float = 4.0  # meters
    n_obstacles: int = 1
    obstacle_radius: float = 1.2
    min_agents: int = 4
    max_agents: int = 8
    raster_size: int = 64


@dataclass
class SyntheticScene:
    scene_id: str
    records: list
    clear: np.ndarray  # (H, W) grayscale raster in [0, 1]
    depth: np.ndarray  # (H, W) ground-truth depth in [0, 1]
    ped_boxes: list  # (r0, c0, r1, c1) pixel boxes at the raster frame
    raster_frame: int
    beta_behavior: float
    seed: int
    world_size: float
    obstacles: list = field(default_factory=list)


def _sample_groups(rng, n_agents):
    """Partition agents into groups of 1-3."""
    groups = []
    left = n_agents
    while left > 0:
        size = int(rng.integers(1, min(3, left) + 1))
        groups.append(size)
        left -= size
    return groups


def _edge_point(rng, side, L):
    u = rng.uniform(0.15 * L, 0.85 * L)
    margin = 0.08 * L
    return {
        0: np.array([u, margin]),
        1: np.array([u, L - margin]),
        2: np.array([margin, u]),
        3: np.array([L - margin, u]),
    }[side]


def simulate_scene(scene_id, seed, haze_behavior=None, config=None):
    """Integrate one scene and render its raster + depth map."""
    cfg = config or SimConfig()
    beta = 0.0 if haze_behavior is None else float(haze_behavior)
    entropy = list(seed) if isinstance(seed, (tuple, list)) else [int(seed)]
    rng = np.random.default_rng([0x5CEE] + [int(s) for s in entropy])
    L = cfg.world_size

    n_agents = int(rng.integers(cfg.min_agents, cfg.max_agents + 1))
    group_sizes = _sample_groups(rng, n_agents)

    speed_scale = 1.0 / (1.0 + 0.15 * beta)
    spacing = cfg.group_spacing / (1.0 + 0.1 * beta)
    sigma_h = cfg.heading_noise + cfg.heading_noise_per_beta * beta

    pos, goal, v0, group_id = [], [], [], []
    gid = 0
    for size in group_sizes:
        side = int(rng.integers(0, 4))
        opposite = {0: 1, 1: 0, 2: 3, 3: 2}[side]
        anchor = _edge_point(rng, side, L)
        target = _edge_point(rng, opposite, L)
        # the goal sits beyond the far edge so nobody arrives (and starts
        # orbiting the goal point) within the simulated horizon
        outward = (target - anchor) / max(float(np.linalg.norm(target - anchor)), 1e-9)
        target = target + 3.0 * outward
        for k in range(size):
            for _ in range(50):  # enforce minimum spawn separation
                cand = anchor + rng.normal(0.0, 0.7, 2)
                if not pos or min(np.linalg.norm(cand - p) for p in pos) >= 0.7:
                    break
            pos.append(cand)
            goal.append(target + rng.normal(0.0, 0.4, 2))
            v0.append(float(np.clip(rng.normal(cfg.mean_speed, cfg.speed_std), 0.6, 2.0)) * speed_scale)
            group_id.append(gid)
        gid += 1
    pos = np.array(pos)
    goal = np.array(goal)
    v0 = np.array(v0)
    group_id = np.array(group_id)

    obstacles = []
    for _ in range(cfg.n_obstacles):
        c = rng.uniform(0.3 * L, 0.7 * L, 2)
        r = cfg.obstacle_radius * rng.uniform(0.7, 1.3)
        obstacles.append((c, r))

    # spawn at preferred velocity so scene starts carry no shared
    # acceleration transient
    to_goal0 = goal - pos
    vel = v0[:, None] * to_goal0 / np.maximum(
        np.linalg.norm(to_goal0, axis=1, keepdims=True), 1e-9
    )
    dt_sub = DT / cfg.substeps
    hesitate_p = cfg.hesitate_prob_per_beta * beta
    hesitating = np.zeros(len(pos), dtype=int)  # frames left at reduced speed
    wander = np.zeros(len(pos))
    sigma_w = cfg.speed_wander_per_beta * beta
    sigma_track = cfg.track_noise_per_beta * beta
    records = []
    for frame in range(cfg.n_frames):
        noise = (
            rng.normal(0.0, sigma_track, (len(pos), 2)) if sigma_track > 0 else
            np.zeros((len(pos), 2))
        )
        for i in range(len(pos)):
            records.append(
                TrackRecord(frame, i, float(pos[i, 0] + noise[i, 0]),
                            float(pos[i, 1] + noise[i, 1]))
            )
        if hesitate_p > 0:
            onset = (rng.random(len(pos)) < hesitate_p) & (hesitating == 0)
            if onset.any():
                lo, hi = cfg.hesitate_frames
                hesitating[onset] = rng.integers(lo, hi + 1, int(onset.sum()))
        if sigma_w > 0:
            wander = cfg.speed_wander_rho * wander + rng.normal(0.0, sigma_w, len(pos))
        speed_mult = np.where(hesitating > 0, cfg.hesitate_factor, 1.0) * np.clip(
            1.0 + wander, 0.3, 1.7
        )
        hesitating = np.maximum(hesitating - 1, 0)
        for _ in range(cfg.substeps):
            force = np.zeros_like(pos)
            to_goal = goal - pos
            dist_goal = np.linalg.norm(to_goal, axis=1, keepdims=True)
            desired = (v0 * speed_mult)[:, None] * to_goal / np.maximum(dist_goal, 1e-9)
            force += (desired - vel) / cfg.relax_time
            if cfg.repulsion > 0 and len(pos) > 1:
                diff = pos[:, None, :] - pos[None, :, :]
                d = np.linalg.norm(diff, axis=2)
                np.fill_diagonal(d, np.inf)
                r_vis = cfg.vis_range0 / (1.0 + cfg.vis_range_per_beta * beta)
                visible = np.exp(-((d / r_vis) ** 4))  # smooth visibility cutoff
                mag = cfg.repulsion * np.exp((2 * cfg.body_radius - d) / cfg.repulsion_range)
                force += np.sum((mag * visible)[:, :, None] * diff / d[:, :, None], axis=1)
                if cfg.anticipation > 0:
                    rel_v = vel[:, None, :] - vel[None, :, :]
                    closing = -(diff[:, :, 0] * rel_v[:, :, 0] + diff[:, :, 1] * rel_v[:, :, 1])
                    closing = closing / np.maximum(d, 1e-9)
                    approaching = closing > 0.1
                    # steer perpendicular to the line of sight, away from the
                    # side the neighbor is already on
                    perp = np.stack([-diff[:, :, 1], diff[:, :, 0]], axis=2)
                    perp = perp / np.maximum(d[:, :, None], 1e-9)
                    side = np.sign(
                        vel[:, None, 0] * (-diff[:, :, 1]) + vel[:, None, 1] * diff[:, :, 0]
                    )
                    side = np.where(side == 0, 1.0, side)
                    w = (
                        cfg.anticipation
                        * np.exp(-d / cfg.anticipation_range)
                        * visible
                        * approaching
                    )
                    force += np.sum((w * side)[:, :, None] * perp, axis=1)
            if cfg.cohesion > 0:
                for g in range(gid):
                    members = np.where(group_id == g)[0]
                    if len(members) < 2:
                        continue
                    centroid = pos[members].mean(axis=0)
                    off = centroid - pos[members]
                    d = np.linalg.norm(off, axis=1, keepdims=True)
                    pull = cfg.cohesion * np.maximum(d - spacing, 0.0)
                    force[members] += pull * off / np.maximum(d, 1e-9)
            for c, r in obstacles:
                diff = pos - c[None, :]
                d = np.linalg.norm(diff, axis=1, keepdims=True)
                mag = 3.0 * np.exp((r + cfg.body_radius - d) / 0.4)
                force += mag * diff / np.maximum(d, 1e-9)
            vel = vel + dt_sub * force
            if sigma_h > 0:
                ang = rng.normal(0.0, sigma_h * dt_sub / DT, len(pos))
                ca, sa = np.cos(ang), np.sin(ang)
                vel = np.column_stack(
                    [ca * vel[:, 0] - sa * vel[:, 1], sa * vel[:, 0] + ca * vel[:, 1]]
                )
            speed = np.linalg.norm(vel, axis=1, keepdims=True)
            cap = 1.3 * v0[:, None]
            vel = np.where(speed > cap, vel * cap / np.maximum(speed, 1e-9), vel)
            pos = np.clip(pos + dt_sub * vel, 0.0, L)

    raster_frame = cfg.n_frames // 2
    clear, depth, boxes = render_scene(
        records, obstacles, raster_frame, L, cfg.raster_size, rng
    )
    return SyntheticScene(
        scene_id=scene_id,
        records=records,
        clear=clear,
        depth=depth,
        ped_boxes=boxes,
        raster_frame=raster_frame,
        beta_behavior=beta,
        seed=seed,
        world_size=L,
        obstacles=obstacles,
    )


def world_to_pixel(xy, world_size, raster_size):
    xy = np.asarray(xy, dtype=np.float64)
    col = xy[..., 0] / world_size * (raster_size - 1)
    row = (1.0 - xy[..., 1] / world_size) * (raster_size - 1)
    return row, col


def render_scene(records, obstacles, frame, world_size, raster_size, rng):
    """Grayscale occupancy raster + ground-truth depth for one frame.

    Depth follows a vertical ramp (top of the raster is far away) with
    per-obstacle plateaus, mimicking an elevated street camera. Pedestrians
    are bright blobs; each gets a 9 x 9 pixel box for region pooling.
    """
    H = W = raster_size
    yy, xx = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    # smooth background albedo
    phase = rng.uniform(0, 2 * np.pi, 4)
    freq = rng.uniform(0.5, 2.0, 4)
    base = 0.32 + 0.06 * (
        np.cos(2 * np.pi * freq[0] * yy / H + phase[0])
        + np.cos(2 * np.pi * freq[1] * xx / W + phase[1])
        + 0.5 * np.cos(2 * np.pi * freq[2] * (yy + xx) / H + phase[2])
        + 0.5 * np.cos(2 * np.pi * freq[3] * (yy - xx) / W + phase[3])
    )
    clear = np.clip(base, 0.05, 0.65)
    depth = 0.15 + 0.75 * (yy / max(H - 1, 1))
    depth = depth[::-1].copy()  # top of raster = far

    for c, r in obstacles:
        row, col = world_to_pixel(c, world_size, raster_size)
        pr = r / world_size * (raster_size - 1)
        mask = (yy - row) ** 2 + (xx - col) ** 2 <= pr**2
        shade = float(rng.uniform(0.0, 1.0))
        clear[mask] = 0.08 if shade < 0.5 else 0.72
        depth[mask] = np.clip(depth[int(round(row)) % H, int(round(col)) % W], 0.0, 1.0)

    boxes = []
    half = 4  # 9 x 9 boxes
    for rec in records:
        if rec.frame_id != frame:
            continue
        row, col = world_to_pixel(np.array([rec.x, rec.y]), world_size, raster_size)
        ri, ci = int(round(row)), int(round(col))
        rr = (yy - row) ** 2 + (xx - col) ** 2
        blob = 0.9 * np.exp(-rr / (2.0 * 1.2**2))
        clear = np.maximum(clear, np.clip(blob, 0, 0.9))
        r0, c0 = max(ri - half, 0), max(ci - half, 0)
        r1, c1 = min(ri + half + 1, H), min(ci + half + 1, W)
        boxes.append((r0, c0, r1, c1))
    return np.clip(clear, 0.0, 1.0), np.clip(depth, 0.0, 1.0), boxes


def synth_scenes(n, seed, haze_behavior=None, config=None, prefix="synth"):
    """Generate ``n`` deterministic scenes (records + raster + depth)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return [
        simulate_scene(f"{prefix}{i:04d}", seed=(seed, i), haze_behavior=haze_behavior, config=config)
        for i in range(n)
    ]
