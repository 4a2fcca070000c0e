"""Bottom-up detectors: per-frame grouping, group tracking and physical labels.

Their output seeds the sampler and biases some of its proposals.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import gamma

from .config import ModelConfig
from .model import (
    PHYSICAL,
    ActivityLabel,
    ActivityNode,
    ActivityTree,
    ChildSequence,
    RoleLabel,
    Scene,
    canonical,
)

log = logging.getLogger(__name__)
A = ActivityLabel
SPEED_FLOOR = 1e-6


@dataclass(frozen=True)
class FrameFeatures:
    actor_ids: tuple[int, ...]
    position: np.ndarray  # (J, 2)
    velocity: np.ndarray  # (J, 2)


@dataclass
class GroupTrack:
    id: int
    start: int
    members: dict[int, frozenset] = field(default_factory=dict)  # frame -> members

    @property
    def end(self) -> int:
        return max(self.members)


@dataclass(frozen=True)
class HmmParams:
    shape: tuple[float, float, float]
    rate: tuple[float, float, float]
    p_stay: float

    def __post_init__(self):
        if min(self.shape) <= 0 or min(self.rate) <= 0:
            raise ValueError("Gamma shapes and rates must be positive")
        if not 1.0 / 3.0 <= self.p_stay < 1.0:
            raise ValueError("p_stay must lie in [1/3, 1)")

    @classmethod
    def from_config(cls, config: ModelConfig) -> HmmParams:
        d = config.detector
        return cls(tuple([d.gamma_shape] * 3), tuple(d.gamma_rate(a) for a in PHYSICAL), d.p_stay)

    def log_transition(self) -> np.ndarray:
        off = (1.0 - self.p_stay) / 2.0
        t = np.full((3, 3), off)
        np.fill_diagonal(t, self.p_stay)
        return np.log(t)


@dataclass
class Detections:
    clusters: list[list[frozenset]]  # per frame (index f-1)
    tracks: list[GroupTrack]
    labels: dict[int, list[ActivityLabel]]  # actor -> per-frame label

    def group_of(self, actor: int, frame: int) -> frozenset:
        for c in self.clusters[frame - 1]:
            if actor in c:
                return c
        return frozenset([actor])


# ---------------------------------------------------------------------------
# features


def smooth(positions: np.ndarray, window: int) -> np.ndarray:
    """Centered moving average along frames, shrinking the window at the edges."""
    if window <= 1:
        return positions.copy()
    half = window // 2
    n = positions.shape[1]
    csum = np.concatenate([np.zeros_like(positions[:, :1]), np.cumsum(positions, axis=1)], axis=1)
    lo = np.clip(np.arange(n) - half, 0, n)
    hi = np.clip(np.arange(n) + half + 1, 0, n)
    return (csum[:, hi] - csum[:, lo]) / (hi - lo)[None, :, None]


def scene_features(scene: Scene, window: int = 5) -> list[FrameFeatures]:
    pos = smooth(scene.positions, window)
    if scene.horizon > 1:
        vel = np.gradient(pos, axis=1)
    else:
        vel = np.zeros_like(pos)
    return [FrameFeatures(scene.actor_ids, pos[:, f], vel[:, f]) for f in range(scene.horizon)]


# ---------------------------------------------------------------------------
# per-frame clustering


def dbscan_frame(features: FrameFeatures, eps: float, min_pts: int,
                 position_weight: float = 1.0, velocity_weight: float = 2.0) -> list[int]:
    """Density clustering of actors on scaled (position, velocity) features.

    Returns one cluster label per actor; noise points get their own label.
    A border point joins the cluster of its nearest core point.
    """
    if eps <= 0 or min_pts < 1:
        raise ValueError("eps must be positive and min_pts >= 1")
    x = np.hstack([position_weight * features.position, velocity_weight * features.velocity])
    n = len(x)
    dist = np.linalg.norm(x[:, None] - x[None, :], axis=-1)
    near = dist <= eps
    core = near.sum(axis=1) >= min_pts

    comp = -np.ones(n, dtype=int)
    k = 0
    for i in range(n):
        if not core[i] or comp[i] >= 0:
            continue
        stack = [i]
        comp[i] = k
        while stack:
            p = stack.pop()
            for q in np.flatnonzero(near[p] & core):
                if comp[q] < 0:
                    comp[q] = k
                    stack.append(q)
        k += 1
    for i in range(n):
        if comp[i] >= 0:
            continue
        cores = np.flatnonzero(near[i] & core)
        if len(cores):
            comp[i] = comp[cores[np.argmin(dist[i, cores])]]
    # relabel by first appearance; noise becomes singletons
    out, names = [], {}
    for i in range(n):
        key = ("c", comp[i]) if comp[i] >= 0 else ("n", i)
        out.append(names.setdefault(key, len(names)))
    return out


def labels_to_groups(actor_ids, labels) -> list[frozenset]:
    groups: dict[int, set] = {}
    for a, c in zip(actor_ids, labels):
        groups.setdefault(c, set()).add(a)
    return sorted((frozenset(g) for g in groups.values()), key=min)


# ---------------------------------------------------------------------------
# tracking


def track_groups(per_frame_clusters: list[list[frozenset]]) -> list[GroupTrack]:
    """Carry group identities across frames by majority overlap.

    A cluster inherits the id of the previous-frame group that supplies a
    strict majority of its members. When several clusters claim one id, the
    largest overlap wins (then the cluster with the smallest actor).
    """
    tracks: list[GroupTrack] = []
    prev: dict[int, frozenset] = {}  # track id -> members in previous frame
    for f, clusters in enumerate(per_frame_clusters, start=1):
        claims: dict[int, list[tuple[int, int, frozenset]]] = {}
        for c in clusters:
            best = None
            for tid in sorted(prev):
                ov = len(c & prev[tid])
                if 2 * ov > len(c) and (best is None or ov > best[1]):
                    best = (tid, ov)
            if best is not None:
                claims.setdefault(best[0], []).append((-best[1], min(c), c))
        assigned: dict[frozenset, int] = {}
        for tid, cands in claims.items():
            cands.sort(key=lambda t: (t[0], t[1]))
            assigned[cands[0][2]] = tid
        cur: dict[int, frozenset] = {}
        for c in sorted(clusters, key=min):
            tid = assigned.get(c)
            if tid is None:
                tid = len(tracks)
                tracks.append(GroupTrack(tid, f))
            tracks[tid].members[f] = c
            cur[tid] = c
        prev = cur
    return tracks


# ---------------------------------------------------------------------------
# physical labels


def speeds(scene: Scene, window: int = 5) -> np.ndarray:
    pos = smooth(scene.positions, window)
    vel = np.gradient(pos, axis=1) if scene.horizon > 1 else np.zeros_like(pos)
    return np.maximum(np.linalg.norm(vel, axis=-1), SPEED_FLOOR)


def emission_log_probs(speed: np.ndarray, params: HmmParams) -> np.ndarray:
    s = np.maximum(np.asarray(speed, dtype=float), SPEED_FLOOR)
    return np.stack([gamma.logpdf(s, a=params.shape[k], scale=1.0 / params.rate[k]) for k in range(3)], axis=-1)


def viterbi(log_emit: np.ndarray, log_trans: np.ndarray) -> tuple[list[int], float]:
    """Max-product path under a uniform start distribution."""
    n, k = log_emit.shape
    score = np.log(1.0 / k) + log_emit[0]
    back = np.zeros((n, k), dtype=int)
    for t in range(1, n):
        cand = score[:, None] + log_trans
        back[t] = np.argmax(cand, axis=0)
        score = cand[back[t], np.arange(k)] + log_emit[t]
    path = [int(np.argmax(score))]
    for t in range(n - 1, 0, -1):
        path.append(int(back[t][path[-1]]))
    return path[::-1], float(np.max(score))


def path_log_prob(path, log_emit: np.ndarray, log_trans: np.ndarray) -> float:
    k = log_emit.shape[1]
    lp = np.log(1.0 / k) + log_emit[0, path[0]]
    for t in range(1, len(path)):
        lp += log_trans[path[t - 1], path[t]] + log_emit[t, path[t]]
    return float(lp)


def classify_physical(scene: Scene, params: HmmParams, window: int = 5) -> dict[int, list[ActivityLabel]]:
    sp = speeds(scene, window)
    lt = params.log_transition()
    out = {}
    for j, a in enumerate(scene.actor_ids):
        path, _ = viterbi(emission_log_probs(sp[j], params), lt)
        out[a] = [PHYSICAL[k] for k in path]
    return out


# ---------------------------------------------------------------------------
# detector output -> initial tree


def run_detectors(scene: Scene, config: ModelConfig) -> Detections:
    d = config.detector
    clusters = []
    for feat in scene_features(scene, d.smoothing_window):
        lab = dbscan_frame(feat, d.eps, d.min_pts, d.position_weight, d.velocity_weight)
        clusters.append(labels_to_groups(scene.actor_ids, lab))
    tracks = track_groups(clusters)
    labels = classify_physical(scene, HmmParams.from_config(config), d.smoothing_window)
    return Detections(clusters, tracks, labels)


def _blocks(actors, partitions) -> list[frozenset]:
    parent = {a: a for a in actors}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for part in partitions:
        for g in part:
            g = sorted(g)
            for b in g[1:]:
                parent[find(b)] = find(g[0])
    out: dict[int, set] = {}
    for a in actors:
        out.setdefault(find(a), set()).add(a)
    return sorted((frozenset(v) for v in out.values()), key=min)


def _intervals(parts: list[frozenset], min_len: int) -> list[list]:
    """Maximal runs of constant partition, with runs shorter than `min_len` absorbed."""
    runs: list[list] = []
    for f, p in enumerate(parts, start=1):
        if runs and runs[-1][2] == p:
            runs[-1][1] = f
        else:
            runs.append([f, f, p])
    while len(runs) > 1:
        lengths = [r[1] - r[0] + 1 for r in runs]
        i = int(np.argmin(lengths))
        if lengths[i] >= min_len:
            break
        # absorb into the longer neighbour
        if i == 0 or (i + 1 < len(runs) and lengths[i + 1] > lengths[i - 1]):
            runs[i + 1][0] = runs[i][0]
        else:
            runs[i - 1][1] = runs[i][1]
        del runs[i]
        merged = [runs[0]]
        for r in runs[1:]:
            if r[2] == merged[-1][2]:
                merged[-1][1] = r[1]
            else:
                merged.append(r)
        runs = merged
    return runs


def _label_runs(members, s, e, labels) -> list[tuple[ActivityLabel, int, int]]:
    maj = []
    for f in range(s, e + 1):
        votes = [labels[a][f - 1] for a in sorted(members)]
        maj.append(max(PHYSICAL, key=lambda x: (votes.count(x), -PHYSICAL.index(x))))
    runs = []
    for f, lab in zip(range(s, e + 1), maj):
        if runs and runs[-1][0] == lab:
            runs[-1][2] = f
        else:
            runs.append([lab, f, f])
    return [tuple(r) for r in runs]


def detections_to_tree(tracks: list[GroupTrack], labels: dict[int, list[ActivityLabel]],
                       config: ModelConfig, horizon: int | None = None) -> ActivityTree:
    """Initial tree: FFA root, one sequence per block of ever-co-grouped actors.

    Within a block, stretches where it is one group become physical leaves;
    stretches where it splits become a MOVE_TO with one MOVER sequence per group.
    """
    actors = sorted(labels)
    horizon = horizon or len(next(iter(labels.values())))
    parts_by_frame: list[list[frozenset]] = [[] for _ in range(horizon)]
    for t in tracks:
        for f, mem in t.members.items():
            parts_by_frame[f - 1].append(mem)
    for part in parts_by_frame:
        missing = set(actors).difference(*part)
        part.extend(frozenset([a]) for a in sorted(missing))

    def leaves_for(members, s, e):
        return tuple(ActivityNode(0, lab, a, b, frozenset(members)) for lab, a, b in _label_runs(members, s, e, labels))

    root_seqs = []
    for block in _blocks(actors, parts_by_frame):
        sub = [frozenset(g & block for g in part if g & block) for part in parts_by_frame]
        segs = []
        for s, e, part in _intervals(sub, config.detector.min_interval):
            if len(part) == 1:
                segs.extend(leaves_for(block, s, e))
            else:
                kids = tuple(ChildSequence(RoleLabel.MOVER, g, leaves_for(g, s, e)) for g in sorted(part, key=min))
                segs.append(ActivityNode(0, A.MOVE_TO, s, e, block, kids))
        root_seqs.append(ChildSequence(RoleLabel.FFA_ROLE, block, tuple(segs)))
    root = ActivityNode(0, A.FFA, 1, horizon, frozenset(actors), tuple(root_seqs))
    return canonical(ActivityTree(root, len(actors), horizon))


def initial_tree(scene: Scene, config: ModelConfig, detections: Detections | None = None) -> ActivityTree:
    det = run_detectors(scene, config) if detections is None else detections
    return detections_to_tree(det.tracks, det.labels, config, scene.horizon)
