"""Haze-aware heterogeneous social graph over pedestrians and groups.

Per scene window the module: scores pairwise kinematic similarity, discovers
groups by density clustering on (1 - similarity), builds a typed graph
(pedestrian-pedestrian, pedestrian-group, group-group), and runs modulated
multi-head attention layers whose edge weights shrink with haze density and
distance. Group nodes are attention-pooled from members and refined by a
one-layer GCN over the intra-group similarity subgraph.

The haze gate multiplies post-softmax attention weights without
renormalization, so total incoming social influence contracts as haze
thickens.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import nn

P2P, P2G, G2G = "P2P", "P2G", "G2G"
RELATIONS = (P2P, P2G, G2G)


@dataclass
class SocialConfig:
    ped_dim: int = 32
    group_dim: int = 64
    n_heads: int = 4
    n_layers: int = 2
    d_model: int = 64  # temporal width at the fusion boundary
    modulator_hidden: int = 8
    monotone_modulation: bool = True
    radius_social: float = 10.0  # meters, P2P edge cutoff
    eps0: float = 0.35  # DBSCAN radius at beta = 0
    eps_beta_slope: float = 0.1
    tau0: float = 0.5  # subgraph edge threshold at beta = 0
    tau_beta_slope: float = 0.1
    tau_max: float = 0.9
    sigma_dist: float = 2.0  # meters, distance similarity scale
    speed_eps: float = 1e-6
    homogeneous: bool = False  # ablation: collapse every relation onto P2P params

    @staticmethod
    def paper_scale():
        return SocialConfig(ped_dim=128, group_dim=256, d_model=256)


# ---------------------------------------------------------------------------
# similarity and clustering
# ---------------------------------------------------------------------------


@dataclass
class SimilarityResult:
    matrix: object  # Tensor (n, n) in [0, 1]
    components: dict  # name -> (n, n) ndarray
    weights: np.ndarray  # the four component weights, summing to 1
    alpha_sim: float


def kinematic_similarity_components(velocities, accelerations, positions,
                                    sigma_dist=2.0, speed_eps=1e-6):
    """The four similarity channels: direction, speed, acceleration, distance.

    Zero-speed conventions: two (near-)stationary pedestrians are fully
    direction- and speed-similar; a stationary/moving pair gets a neutral
    direction term and zero speed similarity.
    """
    v = np.asarray(velocities, dtype=np.float64)
    a = np.asarray(accelerations, dtype=np.float64)
    p = np.asarray(positions, dtype=np.float64)
    n = len(v)
    speed = np.linalg.norm(v, axis=1)
    both_still = (speed[:, None] < speed_eps) & (speed[None, :] < speed_eps)
    one_still = (speed[:, None] < speed_eps) ^ (speed[None, :] < speed_eps)
    dots = v @ v.T
    denom = np.maximum(speed[:, None] * speed[None, :], speed_eps**2)
    cos = np.clip(dots / denom, -1.0, 1.0)
    sim_dir = (1.0 + cos) / 2.0
    sim_dir = np.where(both_still, 1.0, np.where(one_still, 0.5, sim_dir))
    mn = np.minimum(speed[:, None], speed[None, :])
    mx = np.maximum(np.maximum(speed[:, None], speed[None, :]), speed_eps)
    sim_speed = np.where(both_still, 1.0, mn / mx)
    sim_acc = np.exp(-np.linalg.norm(a[:, None] - a[None, :], axis=2))
    dist = np.linalg.norm(p[:, None] - p[None, :], axis=2)
    sim_dist = np.exp(-dist / sigma_dist)
    return {"direction": sim_dir, "speed": sim_speed, "acceleration": sim_acc,
            "distance": sim_dist}, dist


class SimilarityModel(nn.Module):
    """Learnable mix of the four channels plus the social-edge term."""

    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        self.w_logits = nn.Parameter(np.zeros(4))
        self.alpha_raw = nn.Parameter(np.array(nn.logit(0.5)))

    def weights(self):
        return ad.softmax(self.w_logits, axis=-1)

    def alpha_sim(self):
        return ad.sigmoid(self.alpha_raw)

    def __call__(self, components, w_social=None):
        w = self.weights()
        mix = None
        for k, key in enumerate(("direction", "speed", "acceleration", "distance")):
            piece = ad.Tensor(components[key]) * w[k]
            mix = piece if mix is None else mix + piece
        alpha = self.alpha_sim()
        if w_social is None:
            s = alpha * mix  # first layer: the social-edge term is zero
        else:
            s = alpha * mix + (1.0 - alpha) * w_social
        n = components["direction"].shape[0]
        # structural invariants: symmetry and a unit diagonal
        s = 0.5 * (s + ad.swapaxes(s, 0, 1))
        eye = np.eye(n, dtype=bool)
        data = s.data.copy()
        data[eye] = 1.0

        def backward(g):
            g = g.copy()
            g[eye] = 0.0
            return (g,)

        return ad._make(data, (s,), backward)


def dbscan(dist, eps, min_samples=2, order=None):
    """Plain DBSCAN over a precomputed distance matrix.

    Returns labels with -1 for noise; expansion order follows ``order``
    (canonically ped_id rank) so the labeling is deterministic.
    """
    n = dist.shape[0]
    order = np.arange(n) if order is None else np.asarray(order)
    labels = np.full(n, -2)  # -2 unvisited
    neighbors = [np.where(dist[i] <= eps)[0] for i in range(n)]
    cluster = 0
    for i in order:
        if labels[i] != -2:
            continue
        if len(neighbors[i]) < min_samples:
            labels[i] = -1
            continue
        labels[i] = cluster
        queue = [j for j in order if j in set(neighbors[i]) and j != i]
        k = 0
        while k < len(queue):
            j = queue[k]
            k += 1
            if labels[j] == -1:
                labels[j] = cluster
            if labels[j] != -2:
                continue
            labels[j] = cluster
            if len(neighbors[j]) >= min_samples:
                extend = [q for q in order if q in set(neighbors[j]) and labels[q] == -2 and q not in queue]
                queue.extend(extend)
        cluster += 1
    labels[labels == -2] = -1
    return labels


def eps_schedule(beta, eps0=0.35, slope=0.1):
    return eps0 * (1.0 - slope * float(beta))


def tau_schedule(beta, tau0=0.5, slope=0.1, tau_max=0.9):
    return min(tau0 + slope * float(beta), tau_max)


def cluster_groups(similarity, beta, ped_ids=None, cfg=None):
    """DBSCAN on distance 1 - S with a haze-contracted radius.

    Noise points stay singleton non-group pedestrians. Returns an array of
    group labels (-1 for singleton).
    """
    cfg = cfg or SocialConfig()
    s = similarity.data if isinstance(similarity, ad.Tensor) else np.asarray(similarity)
    dist = 1.0 - s
    np.fill_diagonal(dist, 0.0)
    eps = eps_schedule(beta, cfg.eps0, cfg.eps_beta_slope)
    order = np.argsort(ped_ids) if ped_ids is not None else None
    return dbscan(dist, eps, min_samples=2, order=order)


# ---------------------------------------------------------------------------
# haze modulation
# ---------------------------------------------------------------------------


class HazeModulator(nn.Module):
    """Per-relation gate g(beta, d) in (0, 1).

    With the monotone constraint on (the default), the first-layer weights
    are parameterized as -softplus(raw) and the second layer as
    +softplus(raw), making the gate structurally non-increasing in both haze
    density and distance.
    """

    def __init__(self, cfg, rng):
        super().__init__()
        h = cfg.modulator_hidden
        self.monotone = cfg.monotone_modulation
        self.w1_raw = nn.Parameter(rng.uniform(-1.5, 0.5, (2, h)))
        self.b1 = nn.Parameter(rng.uniform(0.5, 2.0, h))
        self.w2_raw = nn.Parameter(rng.uniform(-1.0, 1.0, h))
        self.b2 = nn.Parameter(np.array(1.0))

    def __call__(self, beta, dists):
        """beta: scalar Tensor; dists: (E,) ndarray -> gate values (E,)."""
        d = ad.Tensor(np.asarray(dists, dtype=np.float64).reshape(-1, 1))
        b = ad.reshape(beta, (1, 1)) * ad.Tensor(np.ones((d.shape[0], 1)))
        x = ad.concat([b, d], axis=1)  # (E, 2)
        w1 = -ad.softplus(self.w1_raw) if self.monotone else self.w1_raw
        w2 = ad.softplus(self.w2_raw) if self.monotone else self.w2_raw
        hidden = ad.relu(ad.matmul(x, w1) + self.b1)
        return ad.sigmoid(ad.matmul(hidden, w2) + self.b2)


# ---------------------------------------------------------------------------
# typed attention
# ---------------------------------------------------------------------------


class RelationAttention(nn.Module):
    """Multi-head graph attention for one (relation, destination) pair."""

    def __init__(self, d_src, d_dst, n_heads, rng):
        super().__init__()
        assert d_dst % n_heads == 0
        self.n_heads = n_heads
        self.d_head = d_dst // n_heads
        self.w = [nn.Linear(d_src, self.d_head, rng, bias=False) for _ in range(n_heads)]
        self.w_dst = [nn.Linear(d_dst, self.d_head, rng, bias=False) for _ in range(n_heads)]
        self.att = [nn.Parameter(nn.uniform_init(rng, (2 * self.d_head,), 2 * self.d_head))
                    for _ in range(n_heads)]

    def __call__(self, h_dst, h_src, adj, gate):
        """h_dst: (n, d_dst); h_src: (m, d_src); adj: (n, m) bool;
        gate: (n, m) Tensor or None. Returns (messages, base, modulated)."""
        outs = []
        bases = []
        mods = []
        for m in range(self.n_heads):
            src_p = self.w[m](h_src)  # (m, dh) projected neighbors
            dst_p = self.w_dst[m](h_dst)  # (n, dh)
            a = self.att[m]
            s_dst = ad.matmul(dst_p, a[: self.d_head])  # (n,)
            s_src = ad.matmul(src_p, a[self.d_head :])  # (m,)
            scores = ad.leaky_relu(
                ad.reshape(s_dst, (-1, 1)) + ad.reshape(s_src, (1, -1)), 0.2
            )
            base = ad.masked_softmax(scores, adj, axis=-1)  # rows sum to 1 on edges
            w_mod = base * gate if gate is not None else base
            outs.append(ad.matmul(w_mod, src_p))  # (n, dh)
            bases.append(base)
            mods.append(w_mod)
        return ad.concat(outs, axis=1), bases, mods


class HeteroLayer(nn.Module):
    """One round of typed, haze-modulated attention over both node types."""

    def __init__(self, cfg, rng):
        super().__init__()
        pd, gd, H = cfg.ped_dim, cfg.group_dim, cfg.n_heads
        self.cfg = cfg
        self.p2p = RelationAttention(pd, pd, H, rng)
        if cfg.homogeneous:
            # ablation: a single relation; group-typed paths reuse it via projections
            self.g2p = None
            self.p2g = None
            self.g2g = None
        else:
            self.g2p = RelationAttention(gd, pd, H, rng)
            self.p2g = RelationAttention(pd, gd, H, rng)
            self.g2g = RelationAttention(gd, gd, H, rng)
        self.skip_ped = {r: nn.Linear(pd, pd, rng, bias=False) for r in RELATIONS}
        self.skip_group = {r: nn.Linear(gd, gd, rng, bias=False) for r in (P2G, G2G)}
        self.skip_ped_w = nn.Parameter(np.full(3, 1.0 / 3.0))
        self.skip_group_w = nn.Parameter(np.full(2, 0.5))

    def named_parameters(self, prefix=""):
        yield from super().named_parameters(prefix=prefix)
        for r, lin in self.skip_ped.items():
            yield from lin.named_parameters(prefix=f"{prefix}skip_ped.{r}.")
        for r, lin in self.skip_group.items():
            yield from lin.named_parameters(prefix=f"{prefix}skip_group.{r}.")

    def __call__(self, h_ped, h_group, edges, gates):
        """edges: dict of boolean adjacency; gates: dict of Tensors or None."""
        stats = {}
        msg_p, base_pp, mod_pp = self.p2p(h_ped, h_ped, edges["pp"], gates["pp"])
        stats["pp_base"] = base_pp
        stats["pp_mod"] = mod_pp
        agg_ped = msg_p
        if h_group is not None and edges["pg_to_ped"].size:
            rel = self.g2p if not self.cfg.homogeneous else None
            if rel is None:
                pad = self._project_groups_like_peds(h_group)
                msg_g, base_gp, mod_gp = self.p2p(h_ped, pad, edges["pg_to_ped"], gates["pg_to_ped"])
            else:
                msg_g, base_gp, mod_gp = rel(h_ped, h_group, edges["pg_to_ped"], gates["pg_to_ped"])
            agg_ped = agg_ped + msg_g
            stats["gp_base"] = base_gp
        skip = None
        for k, r in enumerate(RELATIONS):
            piece = self.skip_ped_w[k] * self.skip_ped[r](h_ped)
            skip = piece if skip is None else skip + piece
        new_ped = ad.elu(agg_ped) + skip

        new_group = None
        if h_group is not None:
            rel_pg = self.p2g if not self.cfg.homogeneous else None
            rel_gg = self.g2g if not self.cfg.homogeneous else None
            if rel_pg is not None:
                msg_m, base_pg, _ = rel_pg(h_group, h_ped, edges["ped_to_group"], gates["ped_to_group"])
                agg_g = msg_m
                stats["pg_base"] = base_pg
                if edges["gg"].size and edges["gg"].any():
                    msg_gg, base_gg, _ = rel_gg(h_group, h_group, edges["gg"], gates["gg"])
                    agg_g = agg_g + msg_gg
                    stats["gg_base"] = base_gg
                gskip = None
                for k, r in enumerate((P2G, G2G)):
                    piece = self.skip_group_w[k] * self.skip_group[r](h_group)
                    gskip = piece if gskip is None else gskip + piece
                new_group = ad.elu(agg_g) + gskip
            else:
                new_group = h_group
        return new_ped, new_group, stats

    def _project_groups_like_peds(self, h_group):
        # homogeneous ablation: mean-fold group features into the ped width
        gd = h_group.shape[1]
        pd = self.cfg.ped_dim
        fold = gd // pd
        return ad.reshape(h_group, (h_group.shape[0], fold, pd)).mean(axis=1)


# ---------------------------------------------------------------------------
# group pooling and subgraph GCN
# ---------------------------------------------------------------------------


class GroupPool(nn.Module):
    """Attention-weighted mean of member features, projected to group width."""

    def __init__(self, cfg, rng):
        super().__init__()
        self.scorer = nn.Linear(cfg.ped_dim, 1, rng)
        self.proj = nn.Linear(cfg.ped_dim, cfg.group_dim, rng)

    def __call__(self, member_features):
        scores = ad.reshape(self.scorer(member_features), (1, -1))
        w = ad.masked_softmax(scores, None, axis=-1)  # (1, k), sums to 1
        pooled = ad.matmul(w, member_features)[0]
        return self.proj(pooled), w


def normalized_adjacency(adj):
    """Symmetric normalization D^{-1/2} (A + I) D^{-1/2}."""
    a = np.asarray(adj, dtype=np.float64)
    a = a + np.eye(a.shape[0])
    deg = a.sum(axis=1)
    inv = 1.0 / np.sqrt(deg)
    return a * inv[:, None] * inv[None, :]


class SubgraphGCN(nn.Module):
    """One GCN layer over the intra-group similarity subgraph."""

    def __init__(self, cfg, rng):
        super().__init__()
        self.cfg = cfg
        self.w = nn.Linear(cfg.ped_dim, cfg.group_dim, rng)
        self.gamma_raw = nn.Parameter(np.array(nn.logit(0.5)))

    def gamma(self):
        return ad.sigmoid(self.gamma_raw)

    def __call__(self, h_group, member_features, s_members, beta):
        tau = tau_schedule(beta, self.cfg.tau0, self.cfg.tau_beta_slope, self.cfg.tau_max)
        adj = np.asarray(s_members) > tau
        np.fill_diagonal(adj, False)
        ahat = ad.Tensor(normalized_adjacency(adj))
        h = ad.relu(self.w(ad.matmul(ahat, member_features)))
        pooled = h.mean(axis=0)
        g = self.gamma()
        return g * h_group + (1.0 - g) * pooled


# ---------------------------------------------------------------------------
# full module
# ---------------------------------------------------------------------------


@dataclass
class GraphDump:
    """Inspectable record of one scene graph (for plots and tests)."""

    ped_ids: list
    labels: np.ndarray
    distances: np.ndarray
    similarity: np.ndarray
    base_weights: dict
    modulated_weights: dict
    gates: dict

    def save(self, path):
        """One scene per file: nodes, group labels, base and modulated
        pedestrian attention, gate values (npz, plotting-CLI friendly)."""
        arrays = {
            "ped_ids": np.asarray(self.ped_ids),
            "labels": self.labels,
            "distances": self.distances,
            "similarity": self.similarity,
        }
        for layer, rel_weights in self.base_weights.items():
            for rel, heads in rel_weights.items():
                arrays[f"base/{layer}/{rel}"] = np.stack(heads)
        for layer, heads in self.modulated_weights.items():
            arrays[f"mod/{layer}"] = np.stack(heads)
        for key, g in self.gates.items():
            arrays[f"gate/{key}"] = g
        np.savez_compressed(path, **arrays)

    @staticmethod
    def load(path):
        blob = np.load(path)
        base, mod, gates = {}, {}, {}
        for key in blob.files:
            if key.startswith("base/"):
                _, layer, rel = key.split("/")
                base.setdefault(layer, {})[rel] = list(blob[key])
            elif key.startswith("mod/"):
                mod[key.split("/")[1]] = list(blob[key])
            elif key.startswith("gate/"):
                gates[key.split("/")[1]] = blob[key]
        return GraphDump(
            ped_ids=list(blob["ped_ids"]),
            labels=blob["labels"],
            distances=blob["distances"],
            similarity=blob["similarity"],
            base_weights=base,
            modulated_weights=mod,
            gates=gates,
        )


class SocialGraph(nn.Module):
    """Builds the typed graph per scene window and runs the hetero layers."""

    def __init__(self, cfg, rng):
        super().__init__()
        self.cfg = cfg
        self.similarity = SimilarityModel(cfg)
        self.modulators = {r: HazeModulator(cfg, rng) for r in RELATIONS}
        self.input_proj = nn.Linear(cfg.d_model, cfg.ped_dim, rng)
        self.layers = [HeteroLayer(cfg, rng) for _ in range(cfg.n_layers)]
        self.pool = GroupPool(cfg, rng)
        self.gcn = SubgraphGCN(cfg, rng)
        self.output_proj = nn.Linear(cfg.ped_dim, cfg.d_model, rng)

    def named_parameters(self, prefix=""):
        yield from super().named_parameters(prefix=prefix)
        for r, mod in self.modulators.items():
            yield from mod.named_parameters(prefix=f"{prefix}modulators.{r}.")

    def modulation(self, relation, beta, dists):
        return self.modulators[relation](beta, dists)

    def __call__(self, temporal_features, windows, beta, collect=False):
        """temporal_features: (n, T, D) Tensor; windows: aligned list;
        beta: scalar Tensor. Returns (n, D) social features (+ dump)."""
        n = len(windows)
        ped_ids = [w.ped_id for w in windows]
        velocities = np.array([w.feat[-1, 0:2] for w in windows])
        accelerations = np.array([w.feat[-1, 2:4] for w in windows])
        positions = np.array([w.last_obs for w in windows])
        comps, dist = kinematic_similarity_components(
            velocities, accelerations, positions, self.cfg.sigma_dist, self.cfg.speed_eps
        )
        sim = self.similarity(comps)
        labels = cluster_groups(sim, float(beta.data), ped_ids=ped_ids, cfg=self.cfg)

        h_ped = self.input_proj(temporal_features[:, -1, :])  # (n, ped_dim)

        groups = [g for g in sorted(set(labels)) if g >= 0]
        h_group = None
        centroids = None
        member_lists = []
        if groups:
            feats = []
            centroids = []
            for g in groups:
                members = np.where(labels == g)[0]
                member_lists.append(members)
                pooled, _ = self.pool(ad.gather_rows(h_ped, members))
                s_members = sim.data[np.ix_(members, members)]
                refined = self.gcn(pooled, ad.gather_rows(h_ped, members), s_members, float(beta.data))
                feats.append(ad.reshape(refined, (1, -1)))
                centroids.append(positions[members].mean(axis=0))
            h_group = ad.concat(feats, axis=0)
            centroids = np.array(centroids)

        edges, dists_by_rel = self._build_edges(n, dist, labels, groups, centroids, positions)
        gates = {}
        dump_gates = {}
        for key, rel in (("pp", P2P), ("pg_to_ped", P2G), ("ped_to_group", P2G), ("gg", G2G)):
            adj = edges[key]
            if adj.size and adj.any():
                g = self.modulation(rel, beta, dists_by_rel[key].reshape(-1))
                gates[key] = ad.reshape(g, adj.shape)
                dump_gates[key] = gates[key].data
            else:
                gates[key] = None

        stats_all = []
        w_social = None
        for li, layer in enumerate(self.layers):
            if li > 0 and w_social is not None:
                sim = self.similarity(comps, w_social=w_social)
            h_ped, h_group, stats = layer(h_ped, h_group, edges, gates)
            stats_all.append(stats)
            mod_sum = None
            for m in stats["pp_mod"]:
                mod_sum = m if mod_sum is None else mod_sum + m
            w_social = 0.5 * (mod_sum + ad.swapaxes(mod_sum, 0, 1)) * (1.0 / self.cfg.n_heads)

        out = self.output_proj(h_ped)  # (n, D)
        if collect:
            dump = GraphDump(
                ped_ids=ped_ids,
                labels=labels,
                distances=dist,
                similarity=sim.data,
                base_weights={f"layer{i}": {k: [b.data for b in s[k]] for k in s if k.endswith("base")}
                              for i, s in enumerate(stats_all)},
                modulated_weights={f"layer{i}": [m.data for m in s["pp_mod"]]
                                   for i, s in enumerate(stats_all)},
                gates=dump_gates,
            )
            return out, dump
        return out

    def _build_edges(self, n, dist, labels, groups, centroids, positions):
        pp = (dist <= self.cfg.radius_social) & ~np.eye(n, dtype=bool)
        m = len(groups)
        pg_to_ped = np.zeros((n, m), dtype=bool)
        ped_to_group = np.zeros((m, n), dtype=bool)
        d_pg = np.zeros((n, m))
        for gi, g in enumerate(groups):
            members = np.where(labels == g)[0]
            pg_to_ped[members, gi] = True
            ped_to_group[gi, members] = True
            d_pg[:, gi] = np.linalg.norm(positions - centroids[gi], axis=1)
        gg = np.ones((m, m), dtype=bool) & ~np.eye(m, dtype=bool) if m else np.zeros((0, 0), dtype=bool)
        d_gg = (
            np.linalg.norm(centroids[:, None] - centroids[None, :], axis=2)
            if m
            else np.zeros((0, 0))
        )
        edges = {"pp": pp, "pg_to_ped": pg_to_ped, "ped_to_group": ped_to_group, "gg": gg}
        dists = {"pp": dist, "pg_to_ped": d_pg, "ped_to_group": d_pg.T, "gg": d_gg}
        return edges, dists
