"""Forward simulation: trees from the prior, scenes from trees, scripted scenarios."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .config import ModelConfig
from .graph import tree_endpoint_covariance
from .likelihood import assemble_scene_covariance, gp_bridge, se_kernel
from .model import (
    ACTIVITY_ROLES,
    ActivityLabel,
    ActivityNode,
    ActivityTree,
    ChildSequence,
    RoleLabel,
    Scene,
    canonical,
    validate_tree,
)

A = ActivityLabel
R = RoleLabel


class ScenarioId(str, Enum):
    SYNTH1 = "SYNTH1"
    SYNTH2 = "SYNTH2"
    RANDOM = "RANDOM"


@dataclass(frozen=True)
class ScenarioSpec:
    id: ScenarioId
    actors: int = 5
    horizon: int = 20
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "id", ScenarioId(self.id))
        if self.actors < 1 or self.horizon < 2:
            raise ValueError("scenario needs actors >= 1 and horizon >= 2")


# ---------------------------------------------------------------------------
# sampling trees from the prior


def sample_crp(members, alpha: float, rng: np.random.Generator) -> list[frozenset]:
    tables: list[list[int]] = []
    for m in sorted(members):
        weights = np.array([len(t) for t in tables] + [alpha], dtype=float)
        k = rng.choice(len(weights), p=weights / weights.sum())
        if k == len(tables):
            tables.append([m])
        else:
            tables[k].append(m)
    return [frozenset(t) for t in tables]


def _sample_sequence(role: RoleLabel, s: int, e: int, config: ModelConfig, rng, physical_only: bool):
    dyn = config.roles[role]
    allowed = role.allowed
    mask = np.array([(a.is_physical or not physical_only) for a in allowed], dtype=float)
    p = 1.0 / dyn.duration_rate

    def draw(probs):
        w = np.asarray(probs) * mask
        return int(rng.choice(len(allowed), p=w / w.sum()))

    out = []
    cur = draw(dyn.initial)
    t = s
    while True:
        d = int(rng.geometric(p))
        end = min(t + d - 1, e)
        out.append((allowed[cur], t, end))
        if end == e:
            return out
        t = end + 1
        cur = draw(dyn.transition[cur])


def sample_tree(actors, horizon: int, config: ModelConfig, rng: np.random.Generator,
                max_depth: int | None = None) -> ActivityTree:
    """Draw a tree from the generative grammar, forcing physical leaves at the depth cap."""
    if isinstance(actors, int):
        actors = range(1, actors + 1)
    actors = frozenset(actors)
    cap = config.sampler.max_depth if max_depth is None else max_depth
    if cap < 1:
        raise ValueError("depth cap must be at least 1")

    def expand(label, s, e, members, depth) -> ActivityNode:
        if label.is_physical:
            return ActivityNode(0, label, s, e, members)
        physical_only = depth + 1 >= cap
        seqs = []
        for block in sample_crp(members, config.alpha[label], rng):
            roles = list(ACTIVITY_ROLES[label])
            probs = np.array([config.role_prior[label].get(r, 0.0) for r in roles])
            if physical_only:
                probs *= [any(a.is_physical for a in r.allowed) for r in roles]
            role = roles[int(rng.choice(len(roles), p=probs / probs.sum()))]
            segs = tuple(expand(a, ss, ee, block, depth + 1)
                         for a, ss, ee in _sample_sequence(role, s, e, config, rng, physical_only))
            seqs.append(ChildSequence(role, block, segs))
        return ActivityNode(0, label, s, e, members, tuple(seqs))

    root = expand(A.FFA, 1, horizon, actors, 0)
    return canonical(ActivityTree(root, len(actors), horizon))


# ---------------------------------------------------------------------------
# sampling scenes given a tree


def psd_factor(cov: np.ndarray) -> np.ndarray:
    """F with F @ F.T == cov, tolerant of tiny negative eigenvalues."""
    if cov.size == 0:
        return cov
    vals, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def sample_scene(tree: ActivityTree, config: ModelConfig, rng: np.random.Generator,
                 actors=None) -> tuple[dict[int, np.ndarray], Scene]:
    """Draw latent group trajectories and the observed scene for `tree`.

    Returns ({leaf id: (duration, 2) group path}, Scene).
    """
    actors = tree.actors if actors is None else list(actors)
    horizon = tree.horizon
    leaves = tree.leaves()
    phi = tree_endpoint_covariance(tree, config).matrix
    ends = psd_factor(phi) @ rng.standard_normal((len(phi), 2))

    groups: dict[int, np.ndarray] = {}
    for m, leaf in enumerate(leaves):
        path = np.empty((leaf.duration, 2))
        path[0] = ends[2 * m]
        if leaf.duration > 1:
            path[-1] = ends[2 * m + 1]
        if leaf.duration > 2:
            amap, bcov = gp_bridge(leaf, config)
            path[1:-1] = amap @ ends[2 * m:2 * m + 2] + psd_factor(bcov) @ rng.standard_normal((leaf.duration - 2, 2))
        groups[leaf.id] = path

    pos = np.zeros((len(actors), horizon, 2))
    index = {a: i for i, a in enumerate(actors)}
    for leaf in leaves:
        frames = np.arange(leaf.start, leaf.end + 1)
        dev = se_kernel(frames, frames, config.rho[leaf.label] ** 2, config.length_scale)
        dev_f = psd_factor(dev)
        for a in sorted(leaf.participants):
            pos[index[a], leaf.start - 1:leaf.end] = groups[leaf.id] + dev_f @ rng.standard_normal((leaf.duration, 2))
    pos += np.sqrt(config.obs_noise) * rng.standard_normal(pos.shape)
    return groups, Scene(tuple(actors), pos)


# ---------------------------------------------------------------------------
# hand-built trees


def leaf(label, s, e, members, id=0) -> ActivityNode:
    return ActivityNode(id, A(label), s, e, frozenset(members))


def node(label, s, e, members, *seqs, id=0) -> ActivityNode:
    return ActivityNode(id, A(label), s, e, frozenset(members), tuple(seqs))


def seq(role, *segments) -> ChildSequence:
    return ChildSequence(R(role), segments[0].participants, tuple(segments))


def nested_meeting_tree() -> ActivityTree:
    """Five actors with a meeting nested inside a larger meeting.

    Actors 1,2 walk (4) to meet (2) actors 3,4 who stand (5); the four then
    walk together (7) to meet (1) actor 5, who walks (9) the whole time.
    """
    walk4 = leaf("WALK", 1, 10, {1, 2}, id=4)
    stand5 = leaf("STAND", 1, 10, {3, 4}, id=5)
    walk7 = leaf("WALK", 11, 20, {1, 2, 3, 4}, id=7)
    walk9 = leaf("WALK", 1, 20, {5}, id=9)
    move8 = node("MOVE_TO", 1, 10, {1, 2}, seq("MOVER", walk4), id=8)
    meet2 = node("MEET", 1, 10, {1, 2, 3, 4}, seq("APPROACHER", move8), seq("WAITER", stand5), id=2)
    move6 = node("MOVE_TO", 11, 20, {1, 2, 3, 4}, seq("MOVER", walk7), id=6)
    move3 = node("MOVE_TO", 1, 20, {5}, seq("MOVER", walk9), id=3)
    meet1 = node("MEET", 1, 20, {1, 2, 3, 4, 5}, seq("APPROACHER", meet2, move6), seq("APPROACHER", move3), id=1)
    root = node("FFA", 1, 20, {1, 2, 3, 4, 5}, seq("FFA_ROLE", meet1), id=0)
    return ActivityTree(root, 5, 20)


def synth1_tree(horizon: int = 20) -> ActivityTree:
    """Groups {1,2},{3},{4,5} converge on a meeting, then disband into {1,4},{2,3},{5}."""
    mid = horizon // 2
    everyone = {1, 2, 3, 4, 5}

    def approach(members):
        return seq("APPROACHER", node("MOVE_TO", 1, mid, members, seq("MOVER", leaf("WALK", 1, mid, members))))

    meet = node("MEET", 1, mid, everyone, approach({1, 2}), seq("WAITER", leaf("STAND", 1, mid, {3})), approach({4, 5}))
    disband = node(
        "MOVE_TO", mid + 1, horizon, everyone,
        seq("MOVER", leaf("WALK", mid + 1, horizon, {1, 4})),
        seq("MOVER", leaf("STAND", mid + 1, horizon, {2, 3})),
        seq("MOVER", leaf("WALK", mid + 1, horizon, {5})),
    )
    root = node("FFA", 1, horizon, everyone, seq("FFA_ROLE", meet, disband))
    return canonical(ActivityTree(root, 5, horizon))


def synth2_tree(horizon: int = 20) -> ActivityTree:
    """Four actors hold a side meeting, then join the fifth in the global meeting."""
    if horizon == 20:
        return canonical(nested_meeting_tree())
    mid = horizon // 2
    walk4 = leaf("WALK", 1, mid, {1, 2})
    stand5 = leaf("STAND", 1, mid, {3, 4})
    move8 = node("MOVE_TO", 1, mid, {1, 2}, seq("MOVER", walk4))
    meet2 = node("MEET", 1, mid, {1, 2, 3, 4}, seq("APPROACHER", move8), seq("WAITER", stand5))
    move6 = node("MOVE_TO", mid + 1, horizon, {1, 2, 3, 4}, seq("MOVER", leaf("WALK", mid + 1, horizon, {1, 2, 3, 4})))
    move3 = node("MOVE_TO", 1, horizon, {5}, seq("MOVER", leaf("WALK", 1, horizon, {5})))
    meet1 = node("MEET", 1, horizon, {1, 2, 3, 4, 5}, seq("APPROACHER", meet2, move6), seq("APPROACHER", move3))
    root = node("FFA", 1, horizon, {1, 2, 3, 4, 5}, seq("FFA_ROLE", meet1))
    return canonical(ActivityTree(root, 5, horizon))


def condition_on_zero_centroid(scene: Scene, tree: ActivityTree, config: ModelConfig) -> Scene:
    """Exact draw from the scene law given that the per-axis centroid is zero.

    Applies the Gaussian update y - S1 (1'S1)^-1 1'y, which maps a draw of
    N(0, S) to a draw of N(0, S) conditioned on 1'y = 0.
    """
    cov = assemble_scene_covariance(tree, scene.actor_ids, scene.horizon, config).covariance
    y = scene.positions.reshape(-1, 2)
    gain = cov.sum(axis=1)
    y = y - np.outer(gain, y.sum(axis=0)) / gain.sum()
    return Scene(scene.actor_ids, y.reshape(scene.positions.shape))


def _well_separated(tree: ActivityTree, scene: Scene, min_gap: float, margin: int = 2) -> bool:
    """Actors in different leaves stay `min_gap` apart away from leaf boundaries."""
    leaves = tree.leaves()
    index = {a: i for i, a in enumerate(scene.actor_ids)}
    for i, la in enumerate(leaves):
        for lb in leaves[i + 1:]:
            lo = max(la.start, lb.start) + margin
            hi = min(la.end, lb.end) - margin
            if lo > hi:
                continue
            pa = scene.positions[[index[a] for a in la.participants], lo - 1:hi]
            pb = scene.positions[[index[b] for b in lb.participants], lo - 1:hi]
            gap = np.linalg.norm(pa[:, None] - pb[None, :], axis=-1)
            if gap.min() < min_gap:
                return False
    return True


def scripted_scene(spec: ScenarioSpec, config: ModelConfig, rng: np.random.Generator | None = None,
                   max_tries: int = 1000) -> tuple[Scene, ActivityTree]:
    """Ground-truth tree for a scenario plus a scene drawn from it.

    Scenes are drawn conditioned on a zero centroid, so they already sit in
    the frame inference works in. Scripted scenes are redrawn until distinct
    groups keep at least 5 * sigma_WALK apart away from their transitions.
    """
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    if spec.id is ScenarioId.RANDOM:
        tree = sample_tree(spec.actors, spec.horizon, config, rng)
        return condition_on_zero_centroid(sample_scene(tree, config, rng)[1], tree, config), tree
    if spec.actors != 5:
        raise ValueError(f"{spec.id.value} is scripted for 5 actors")
    tree = synth1_tree(spec.horizon) if spec.id is ScenarioId.SYNTH1 else synth2_tree(spec.horizon)
    assert not validate_tree(tree)
    gap = 5.0 * config.sigma[A.WALK]
    for _ in range(max_tries):
        scene = condition_on_zero_centroid(sample_scene(tree, config, rng)[1], tree, config)
        if _well_separated(tree, scene, gap):
            return scene, tree
    raise RuntimeError(f"could not draw a well-separated {spec.id.value} scene in {max_tries} tries")


def kinematic_scene(tree: ActivityTree, config: ModelConfig, rng: np.random.Generator,
                    offset_scale: float = 0.5, jitter: float = 0.01) -> Scene:
    """Constant-velocity motion at the detector's nominal speed for each leaf label.

    Members of a physical group share one random heading and move at their
    label's speed, each continuing from where it was, so there are no jumps.
    Meant for checking the motion classifier, not as a draw from the
    trajectory model.
    """
    actors = tree.actors
    index = {a: i for i, a in enumerate(actors)}
    last = offset_scale * rng.standard_normal((len(actors), 2))
    pos = np.zeros((len(actors), tree.horizon, 2))
    for lf in sorted(tree.leaves(), key=lambda n: (n.start, min(n.participants))):
        theta = rng.uniform(0.0, 2.0 * np.pi)
        step = config.detector.speed[lf.label] * np.array([np.cos(theta), np.sin(theta)])
        ramp = np.outer(np.arange(1, lf.duration + 1), step)
        for a in lf.participants:
            r = index[a]
            pos[r, lf.start - 1:lf.end] = last[r] + ramp
            last[r] = pos[r, lf.end - 1]
    pos += jitter * rng.standard_normal(pos.shape)
    return Scene(tuple(actors), pos)
