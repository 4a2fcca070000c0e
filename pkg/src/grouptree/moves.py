"""Reversible structural edits of activity trees and their proposal densities.

Every move returns a `Proposal` carrying log q(new | old) and log q(old | new)
under the paired reverse move, so the sampler can form the Hastings ratio.
A move whose random choices land on an impossible edit returns None; the
sampler counts that as a rejected step.

Trees handled here are always canonical, so two trees are the same state
exactly when their structural keys agree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .config import ModelConfig
from .model import (
    ACTIVITY_ROLES,
    PHYSICAL,
    SEGMENT_INTENTIONAL,
    ActivityLabel,
    ActivityNode,
    ActivityTree,
    ChildSequence,
    RoleLabel,
    canonical,
    get_node,
    replace_node,
    walk,
)

LOG2 = math.log(2.0)


class MoveKind(str, Enum):
    BIRTH = "BIRTH"
    DEATH = "DEATH"
    MERGE = "MERGE"
    SPLIT = "SPLIT"
    SEQUENCE = "SEQUENCE"
    UNSEQUENCE = "UNSEQUENCE"
    RELABEL = "RELABEL"
    TIME_SPLIT = "TIME_SPLIT"
    TIME_JOIN = "TIME_JOIN"
    SHIFT = "SHIFT"


REVERSE = {
    MoveKind.BIRTH: MoveKind.DEATH, MoveKind.DEATH: MoveKind.BIRTH,
    MoveKind.MERGE: MoveKind.SPLIT, MoveKind.SPLIT: MoveKind.MERGE,
    MoveKind.SEQUENCE: MoveKind.UNSEQUENCE, MoveKind.UNSEQUENCE: MoveKind.SEQUENCE,
    MoveKind.RELABEL: MoveKind.RELABEL,
    MoveKind.TIME_SPLIT: MoveKind.TIME_JOIN, MoveKind.TIME_JOIN: MoveKind.TIME_SPLIT,
    MoveKind.SHIFT: MoveKind.SHIFT,
}


@dataclass(frozen=True)
class Proposal:
    tree: ActivityTree
    log_q_fwd: float
    log_q_rev: float
    move: MoveKind


# ---------------------------------------------------------------------------
# site enumeration


@dataclass
class Sites:
    """Every place each move kind can act on one tree."""

    birth: list = field(default_factory=list)       # intentional node paths
    death: list = field(default_factory=list)       # non-root intentional, sole segment
    merge: list = field(default_factory=list)       # (parent path, k1, k2)
    split: list = field(default_factory=list)       # (parent path, k)
    sequence: list = field(default_factory=list)    # (parent path, k, i, j)
    unsequence: list = field(default_factory=list)  # non-root intentional, one child sequence
    relabel: list = field(default_factory=list)     # non-root node paths
    time_split: list = field(default_factory=list)  # physical leaves lasting >= 2 frames
    time_join: list = field(default_factory=list)   # (parent path, k, i) adjacent physical pair
    shift: list = field(default_factory=list)       # (parent path, k, i) boundary after segment i

    def of(self, kind: MoveKind) -> list:
        return getattr(self, kind.value.lower())

    def available(self) -> list[MoveKind]:
        return [k for k in MoveKind if self.of(k)]


def _all_physical(seq: ChildSequence) -> bool:
    return all(s.is_physical for s in seq.segments)


def _pattern(seq: ChildSequence) -> tuple:
    return tuple((s.label, s.start, s.end) for s in seq.segments)


def _single_intentional(seq: ChildSequence) -> bool:
    return len(seq.segments) == 1 and not seq.segments[0].is_physical


def mergeable(a: ChildSequence, b: ChildSequence) -> bool:
    if _all_physical(a) and _all_physical(b):
        return _pattern(a) == _pattern(b)
    if _single_intentional(a) and _single_intentional(b):
        return a.segments[0].label == b.segments[0].label
    return False


def splittable(seq: ChildSequence) -> bool:
    if _all_physical(seq):
        return len(seq.members) >= 2
    return _single_intentional(seq) and len(seq.segments[0].children) >= 2


def find_sites(tree: ActivityTree) -> Sites:
    s = Sites()
    for path, node in walk(tree.root):
        if path:
            s.relabel.append(path)
        if node.is_physical:
            if node.duration >= 2:
                s.time_split.append(path)
            continue
        s.birth.append(path)
        if path:
            parent = get_node(tree.root, path[:-1])
            if len(parent.children[path[-1][0]].segments) == 1:
                s.death.append(path)
            if len(node.children) == 1:
                s.unsequence.append(path)
        kids = node.children
        for k, seq in enumerate(kids):
            n = len(seq.segments)
            s.sequence.extend((path, k, i, j) for i in range(n) for j in range(i, n))
            for i in range(n - 1):
                s.shift.append((path, k, i))
                if seq.segments[i].is_physical and seq.segments[i + 1].is_physical:
                    s.time_join.append((path, k, i))
            if splittable(seq):
                s.split.append((path, k))
            s.merge.extend((path, k, k2) for k2 in range(k + 1, len(kids)) if mergeable(seq, kids[k2]))
    return s


@dataclass
class MoveContext:
    """Configuration, optional detector output and a per-tree site cache."""

    config: ModelConfig
    detections: object | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def bias(self) -> float:
        return self.config.sampler.detector_bias if self.detections is not None else 0.0

    def sites(self, tree: ActivityTree) -> Sites:
        key = tree.key
        hit = self._cache.get(key)
        if hit is None:
            if len(self._cache) > 200_000:
                self._cache.clear()
            hit = self._cache[key] = find_sites(tree)
        return hit

    def roles(self, activity: ActivityLabel, labels) -> list[RoleLabel]:
        """Roles of `activity` with positive prior mass that admit all `labels`."""
        labels = set(labels)
        probs = self.config.role_prior.get(activity, {})
        return [r for r in ACTIVITY_ROLES.get(activity, ()) if probs.get(r, 0.0) > 0 and labels <= set(r.allowed)]


# ---------------------------------------------------------------------------
# shared helpers


def _pick(rng: np.random.Generator, items):
    return items[int(rng.integers(len(items)))]


def _finish(tree: ActivityTree, root: ActivityNode) -> ActivityTree:
    return canonical(ActivityTree(root, tree.actor_count, tree.horizon))


def _n_bipartitions(n: int) -> int:
    return 2 ** (n - 1) - 1


def _random_bipartition(items, rng) -> tuple[frozenset, frozenset]:
    items = sorted(items)
    mask = int(rng.integers(1, 2 ** (len(items) - 1)))
    other = frozenset(x for b, x in enumerate(items[1:]) if mask >> b & 1)
    return frozenset(items) - other, other


def detector_bipartitions(ctx: MoveContext, members: frozenset, start: int, end: int) -> list[frozenset]:
    """Bipartitions of `members` cut out by detected groups during [start, end]."""
    if ctx.detections is None:
        return []
    out = set()
    for f in range(start, end + 1):
        for g in ctx.detections.clusters[f - 1]:
            part = members & g
            if part and part != members:
                out.add(frozenset([part, members - part]))
    return sorted(out, key=lambda b: sorted(sorted(h) for h in b))


def _log_q_member_split(ctx: MoveContext, seq: ChildSequence, halves) -> float:
    uniform = 1.0 / _n_bipartitions(len(seq.members))
    cands = detector_bipartitions(ctx, seq.members, seq.start, seq.end)
    if not cands or ctx.bias == 0:
        return math.log(uniform)
    hit = frozenset(halves) in cands
    return math.log((1.0 - ctx.bias) * uniform + ctx.bias * hit / len(cands))


def detector_label(ctx: MoveContext, node: ActivityNode) -> ActivityLabel | None:
    """Majority per-frame detector label over a leaf's members and span."""
    if ctx.detections is None:
        return None
    votes = [ctx.detections.labels[a][f - 1] for a in sorted(node.participants)
             for f in range(node.start, node.end + 1)]
    return max(PHYSICAL, key=lambda x: (votes.count(x), -PHYSICAL.index(x)))


def _relabel_options(node: ActivityNode, role: RoleLabel) -> list[ActivityLabel]:
    pool = PHYSICAL if node.is_physical else SEGMENT_INTENTIONAL
    return [x for x in pool if x in role.allowed]


def _log_q_relabel(ctx: MoveContext, node: ActivityNode, options, label) -> float:
    uniform = 1.0 / len(options)
    if node.is_physical and ctx.bias > 0:
        det = detector_label(ctx, node)
        if det in options:
            return math.log((1.0 - ctx.bias) * uniform + ctx.bias * (label == det))
    return math.log(uniform)


def _redraw(ctx: MoveContext, rng, activity: ActivityLabel, seq: ChildSequence):
    """Fresh role for `seq` under `activity`: (new sequence, log prob) or None."""
    opts = ctx.roles(activity, seq.labels)
    if not opts:
        return None
    return replace(seq, role=_pick(rng, opts)), -math.log(len(opts))


def _log_redraw(ctx: MoveContext, activity: ActivityLabel, labels) -> float:
    opts = ctx.roles(activity, labels)
    return -math.log(len(opts)) if opts else float("-inf")


def is_wrapper(seq: ChildSequence) -> bool:
    """A sequence holding one MOVE_TO whose only child is a MOVER sequence."""
    if len(seq.segments) != 1:
        return False
    node = seq.segments[0]
    return (node.label is ActivityLabel.MOVE_TO and len(node.children) == 1
            and node.children[0].role is RoleLabel.MOVER)


def wrap(seq: ChildSequence) -> ChildSequence:
    inner = ChildSequence(RoleLabel.MOVER, seq.members, seq.segments)
    node = ActivityNode(0, ActivityLabel.MOVE_TO, seq.start, seq.end, seq.members, (inner,))
    return ChildSequence(RoleLabel.APPROACHER, seq.members, (node,))


def adapt_options(ctx: MoveContext, source: ActivityLabel, target: ActivityLabel,
                  seq: ChildSequence) -> list[ChildSequence]:
    """Equally likely forms of `seq` when it moves from under `source` to under `target`.

    Besides a plain role redraw, an all-physical sequence entering a MEET may be
    wrapped as APPROACHER -> MOVE_TO -> MOVER, and such a wrapper leaving a MEET
    may be unwrapped. The two options undo each other, so every outcome stays
    reachable in reverse.
    """
    out = [replace(seq, role=r) for r in ctx.roles(target, seq.labels)]
    meet_ok = ctx.roles(ActivityLabel.MEET, [ActivityLabel.MOVE_TO]) and ctx.roles(ActivityLabel.MOVE_TO, PHYSICAL)
    if not meet_ok:
        return out
    if target is ActivityLabel.MEET and _all_physical(seq):
        out.append(wrap(seq))
    if source is ActivityLabel.MEET and is_wrapper(seq):
        inner = seq.segments[0].children[0].segments
        out += [ChildSequence(r, seq.members, inner) for r in ctx.roles(target, [s.label for s in inner])]
    return out


def _adapt(ctx: MoveContext, rng, source, target, seq):
    opts = adapt_options(ctx, source, target, seq)
    if not opts:
        return None
    return _pick(rng, opts), -math.log(len(opts))


def _log_adapt(ctx: MoveContext, source, target, seq) -> float:
    """log-probability of the reverse adaptation; `seq` is the adapted form."""
    n = len(adapt_options(ctx, source, target, seq))
    return -math.log(n) if n else float("-inf")


# ---------------------------------------------------------------------------
# birth / death: insert or remove an intentional node spanning its parent


def propose_birth(tree, rng, ctx: MoveContext) -> Proposal | None:
    sites = ctx.sites(tree)
    path = _pick(rng, sites.birth)
    parent = get_node(tree.root, path)
    K = len(parent.children)
    mask = int(rng.integers(1, 2**K))
    chosen = [k for k in range(K) if mask >> k & 1]
    label = _pick(rng, SEGMENT_INTENTIONAL)
    lq = -math.log(len(sites.birth)) - math.log(2**K - 1) - LOG2

    outer = ctx.roles(parent.label, [label])
    if not outer:
        return None
    outer_role = _pick(rng, outer)
    lq -= math.log(len(outer))
    adopted, lq_rev = [], 0.0
    for k in chosen:
        drawn = _adapt(ctx, rng, parent.label, label, parent.children[k])
        if drawn is None:
            return None
        adopted.append(drawn[0])
        lq += drawn[1]
        lq_rev += _log_adapt(ctx, label, parent.label, drawn[0])
    members = frozenset().union(*(s.members for s in adopted))
    born = ActivityNode(0, label, parent.start, parent.end, members, tuple(adopted))
    kept = [c for k, c in enumerate(parent.children) if k not in chosen]
    new_parent = replace(parent, children=tuple(kept) + (ChildSequence(outer_role, members, (born,)),))
    new = _finish(tree, replace_node(tree.root, path, new_parent))
    return Proposal(new, lq, lq_rev - math.log(len(ctx.sites(new).death)), MoveKind.BIRTH)


def propose_death(tree, rng, ctx: MoveContext) -> Proposal | None:
    sites = ctx.sites(tree)
    path = _pick(rng, sites.death)
    node = get_node(tree.root, path)
    ppath, k = path[:-1], path[-1][0]
    parent = get_node(tree.root, ppath)
    lq = -math.log(len(sites.death))
    released, lq_rev = [], 0.0
    for seq in node.children:
        drawn = _adapt(ctx, rng, node.label, parent.label, seq)
        if drawn is None:
            return None
        released.append(drawn[0])
        lq += drawn[1]
        lq_rev += _log_adapt(ctx, parent.label, node.label, drawn[0])
    kids = tuple(c for i, c in enumerate(parent.children) if i != k) + tuple(released)
    new = _finish(tree, replace_node(tree.root, ppath, replace(parent, children=kids)))
    lq_rev += (-math.log(len(ctx.sites(new).birth)) - math.log(2 ** len(kids) - 1) - LOG2
               + _log_redraw(ctx, parent.label, [node.label]))
    return Proposal(new, lq, lq_rev, MoveKind.DEATH)


# ---------------------------------------------------------------------------
# merge / split: join two sibling sequences or cut one in two


def _retag(seq: ChildSequence, members: frozenset, role: RoleLabel) -> ChildSequence:
    """Copy of an all-physical sequence with a new member set."""
    return ChildSequence(role, members, tuple(replace(s, participants=members) for s in seq.segments))


def propose_merge(tree, rng, ctx: MoveContext) -> Proposal | None:
    sites = ctx.sites(tree)
    path, k1, k2 = _pick(rng, sites.merge)
    parent = get_node(tree.root, path)
    a, b = parent.children[k1], parent.children[k2]
    opts = ctx.roles(parent.label, a.labels)
    if not opts:
        return None
    role = _pick(rng, opts)
    members = a.members | b.members
    if _all_physical(a):
        merged = _retag(a, members, role)
    else:
        na, nb = a.segments[0], b.segments[0]
        joined = ActivityNode(0, na.label, na.start, na.end, members, na.children + nb.children)
        merged = ChildSequence(role, members, (joined,))
    lq = -math.log(len(sites.merge)) - math.log(len(opts))
    kids = tuple(c for i, c in enumerate(parent.children) if i not in (k1, k2)) + (merged,)
    new = _finish(tree, replace_node(tree.root, path, replace(parent, children=kids)))

    lq_rev = -math.log(len(ctx.sites(new).split))
    if _all_physical(a):
        lq_rev += _log_q_member_split(ctx, merged, (a.members, b.members))
    else:
        lq_rev -= math.log(_n_bipartitions(len(merged.segments[0].children)))
    lq_rev += _log_redraw(ctx, parent.label, a.labels) + _log_redraw(ctx, parent.label, b.labels)
    return Proposal(new, lq, lq_rev, MoveKind.MERGE)


def propose_split(tree, rng, ctx: MoveContext) -> Proposal | None:
    sites = ctx.sites(tree)
    path, k = _pick(rng, sites.split)
    parent = get_node(tree.root, path)
    seq = parent.children[k]
    lq = -math.log(len(sites.split))

    if _all_physical(seq):
        cands = detector_bipartitions(ctx, seq.members, seq.start, seq.end)
        if cands and rng.random() < ctx.bias:
            halves = tuple(_pick(rng, cands))
        else:
            halves = _random_bipartition(seq.members, rng)
        lq += _log_q_member_split(ctx, seq, halves)
        parts = [_retag(seq, h, seq.role) for h in halves]
    else:
        whole = seq.segments[0]
        idx = _random_bipartition(range(len(whole.children)), rng)
        lq -= math.log(_n_bipartitions(len(whole.children)))
        parts = []
        for side in idx:
            kids = tuple(whole.children[i] for i in sorted(side))
            members = frozenset().union(*(c.members for c in kids))
            parts.append(ChildSequence(seq.role, members,
                                       (ActivityNode(0, whole.label, whole.start, whole.end, members, kids),)))
    drawn = [_redraw(ctx, rng, parent.label, p) for p in parts]
    if None in drawn:
        return None
    lq += sum(d[1] for d in drawn)
    kids = tuple(c for i, c in enumerate(parent.children) if i != k) + tuple(d[0] for d in drawn)
    new = _finish(tree, replace_node(tree.root, path, replace(parent, children=kids)))
    lq_rev = -math.log(len(ctx.sites(new).merge)) + _log_redraw(ctx, parent.label, seq.labels)
    return Proposal(new, lq, lq_rev, MoveKind.SPLIT)


# ---------------------------------------------------------------------------
# sequence / unsequence: wrap a run of segments in a new intentional node


def propose_sequence(tree, rng, ctx: MoveContext) -> Proposal | None:
    sites = ctx.sites(tree)
    path, k, i, j = _pick(rng, sites.sequence)
    parent = get_node(tree.root, path)
    seq = parent.children[k]
    run = seq.segments[i:j + 1]
    label = _pick(rng, SEGMENT_INTENTIONAL)
    inner = ctx.roles(label, [s.label for s in run])
    labels = seq.labels[:i] + (label,) + seq.labels[j + 1:]
    outer = ctx.roles(parent.label, labels)
    if not inner or not outer:
        return None
    wrapped = ActivityNode(0, label, run[0].start, run[-1].end, seq.members,
                           (ChildSequence(_pick(rng, inner), seq.members, run),))
    new_seq = ChildSequence(_pick(rng, outer), seq.members, seq.segments[:i] + (wrapped,) + seq.segments[j + 1:])
    lq = -math.log(len(sites.sequence)) - LOG2 - math.log(len(inner)) - math.log(len(outer))
    kids = parent.children[:k] + (new_seq,) + parent.children[k + 1:]
    new = _finish(tree, replace_node(tree.root, path, replace(parent, children=kids)))
    lq_rev = -math.log(len(ctx.sites(new).unsequence)) + _log_redraw(ctx, parent.label, seq.labels)
    return Proposal(new, lq, lq_rev, MoveKind.SEQUENCE)


def propose_unsequence(tree, rng, ctx: MoveContext) -> Proposal | None:
    sites = ctx.sites(tree)
    path = _pick(rng, sites.unsequence)
    node = get_node(tree.root, path)
    ppath, (k, i) = path[:-1], path[-1]
    parent = get_node(tree.root, ppath)
    seq = parent.children[k]
    run = node.children[0].segments
    segs = seq.segments[:i] + run + seq.segments[i + 1:]
    outer = ctx.roles(parent.label, [s.label for s in segs])
    if not outer:
        return None
    new_seq = ChildSequence(_pick(rng, outer), seq.members, segs)
    lq = -math.log(len(sites.unsequence)) - math.log(len(outer))
    kids = parent.children[:k] + (new_seq,) + parent.children[k + 1:]
    new = _finish(tree, replace_node(tree.root, ppath, replace(parent, children=kids)))
    lq_rev = (-math.log(len(ctx.sites(new).sequence)) - LOG2
              + _log_redraw(ctx, node.label, [s.label for s in run])
              + _log_redraw(ctx, parent.label, seq.labels))
    return Proposal(new, lq, lq_rev, MoveKind.UNSEQUENCE)


# ---------------------------------------------------------------------------
# relabel


def propose_relabel(tree, rng, ctx: MoveContext) -> Proposal | None:
    sites = ctx.sites(tree)
    path = _pick(rng, sites.relabel)
    node = get_node(tree.root, path)
    parent = get_node(tree.root, path[:-1])
    role = parent.children[path[-1][0]].role
    options = _relabel_options(node, role)
    if not options:
        return None
    det = detector_label(ctx, node) if node.is_physical else None
    if det in options and rng.random() < ctx.bias:
        label = det
    else:
        label = _pick(rng, options)
    lq = _log_q_relabel(ctx, node, options, label)
    lq_rev = _log_q_relabel(ctx, node, options, node.label)
    kids = node.children
    if not node.is_physical:
        redrawn = []
        for seq in kids:
            drawn = _adapt(ctx, rng, node.label, label, seq)
            if drawn is None:
                return None
            redrawn.append(drawn[0])
            lq += drawn[1]
            lq_rev += _log_adapt(ctx, label, node.label, drawn[0])
        kids = tuple(redrawn)
    new = _finish(tree, replace_node(tree.root, path, replace(node, label=label, children=kids)))
    # wrapping or unwrapping changes the node count, so the reverse site count can differ
    return Proposal(new, lq - math.log(len(sites.relabel)), lq_rev - math.log(len(ctx.sites(new).relabel)),
                    MoveKind.RELABEL)


# ---------------------------------------------------------------------------
# time split / time join: cut a physical leaf in two, or fuse neighbours


def _log_q_cut_labels(options, original, first, second) -> float:
    """Probability that cutting a leaf labelled `original` yields (first, second)."""
    p = 0.0
    if first == original:
        p += 0.5 / len(options)
    if second == original:
        p += 0.5 / len(options)
    return math.log(p) if p > 0 else float("-inf")


def propose_time_split(tree, rng, ctx: MoveContext) -> Proposal | None:
    sites = ctx.sites(tree)
    path = _pick(rng, sites.time_split)
    node = get_node(tree.root, path)
    ppath, (k, i) = path[:-1], path[-1]
    parent = get_node(tree.root, ppath)
    seq = parent.children[k]
    options = _relabel_options(node, seq.role)
    cut = int(rng.integers(1, node.duration))  # frames kept by the first piece
    other = _pick(rng, options)
    first, second = (node.label, other) if rng.random() < 0.5 else (other, node.label)
    lq = (-math.log(len(sites.time_split)) - math.log(node.duration - 1)
          + _log_q_cut_labels(options, node.label, first, second))
    a = replace(node, label=first, end=node.start + cut - 1)
    b = replace(node, label=second, start=node.start + cut)
    new_seq = replace(seq, segments=seq.segments[:i] + (a, b) + seq.segments[i + 1:])
    kids = parent.children[:k] + (new_seq,) + parent.children[k + 1:]
    new = _finish(tree, replace_node(tree.root, ppath, replace(parent, children=kids)))
    lq_rev = -math.log(len(ctx.sites(new).time_join)) - (LOG2 if first != second else 0.0)
    return Proposal(new, lq, lq_rev, MoveKind.TIME_SPLIT)


def propose_time_join(tree, rng, ctx: MoveContext) -> Proposal | None:
    sites = ctx.sites(tree)
    path, k, i = _pick(rng, sites.time_join)
    parent = get_node(tree.root, path)
    seq = parent.children[k]
    a, b = seq.segments[i], seq.segments[i + 1]
    label = a.label if rng.random() < 0.5 else b.label
    lq = -math.log(len(sites.time_join)) - (LOG2 if a.label != b.label else 0.0)
    joined = replace(a, label=label, end=b.end)
    new_seq = replace(seq, segments=seq.segments[:i] + (joined,) + seq.segments[i + 2:])
    kids = parent.children[:k] + (new_seq,) + parent.children[k + 1:]
    new = _finish(tree, replace_node(tree.root, path, replace(parent, children=kids)))
    options = _relabel_options(joined, seq.role)
    lq_rev = (-math.log(len(ctx.sites(new).time_split)) - math.log(joined.duration - 1)
              + _log_q_cut_labels(options, label, a.label, b.label))
    return Proposal(new, lq, lq_rev, MoveKind.TIME_JOIN)


# ---------------------------------------------------------------------------
# shift: move the boundary between consecutive segments by one frame


def _shrink_end(node: ActivityNode, t: int) -> ActivityNode | None:
    """Pull `node`'s end back to t; one-frame physical tails that fall off are dropped."""
    if t < node.start:
        return None
    kids = []
    for seq in node.children:
        segs = seq.segments
        if segs[-1].start > t:
            if not (segs[-1].is_physical and segs[-1].start == t + 1 and len(segs) > 1):
                return None
            segs = segs[:-1]
        else:
            last = _shrink_end(segs[-1], t)
            if last is None:
                return None
            segs = segs[:-1] + (last,)
        kids.append(replace(seq, segments=segs))
    return replace(node, end=t, children=tuple(kids))


def _shrink_start(node: ActivityNode, t: int) -> ActivityNode | None:
    if t > node.end:
        return None
    kids = []
    for seq in node.children:
        segs = seq.segments
        if segs[0].end < t:
            if not (segs[0].is_physical and segs[0].end == t - 1 and len(segs) > 1):
                return None
            segs = segs[1:]
        else:
            first = _shrink_start(segs[0], t)
            if first is None:
                return None
            segs = (first,) + segs[1:]
        kids.append(replace(seq, segments=segs))
    return replace(node, start=t, children=tuple(kids))


def _grow_options(seq: ChildSequence) -> int:
    """Ways a physical boundary segment can absorb one more frame: stretch, or a new 1-frame segment per label."""
    return 1 + sum(1 for a in PHYSICAL if a in seq.role.allowed)


def _log_grow(node: ActivityNode, at_end: bool) -> float:
    """log-probability of one particular way of growing `node` by a frame."""
    total = 0.0
    for seq in node.children:
        edge = seq.segments[-1] if at_end else seq.segments[0]
        total += -math.log(_grow_options(seq)) if edge.is_physical else _log_grow(edge, at_end)
    return total


def _grow(node: ActivityNode, at_end: bool, rng) -> ActivityNode:
    """Extend `node` by one frame at one end; descendants stretch or gain a 1-frame physical segment."""
    t = node.end + 1 if at_end else node.start - 1
    kids = []
    for seq in node.children:
        segs = seq.segments
        edge = segs[-1] if at_end else segs[0]
        if edge.is_physical:
            choice = int(rng.integers(_grow_options(seq)))
            if choice == 0:
                edge = replace(edge, end=t) if at_end else replace(edge, start=t)
                segs = segs[:-1] + (edge,) if at_end else (edge,) + segs[1:]
            else:
                label = [a for a in PHYSICAL if a in seq.role.allowed][choice - 1]
                fresh = ActivityNode(0, label, t, t, seq.members)
                segs = segs + (fresh,) if at_end else (fresh,) + segs
        else:
            edge = _grow(edge, at_end, rng)
            segs = segs[:-1] + (edge,) if at_end else (edge,) + segs[1:]
        kids.append(replace(seq, segments=segs))
    if at_end:
        return replace(node, end=t, children=tuple(kids))
    return replace(node, start=t, children=tuple(kids))


def propose_shift(tree, rng, ctx: MoveContext) -> Proposal | None:
    """Move the boundary between two consecutive segments by one frame.

    The losing segment must keep at least one frame; inside it, one-frame
    physical tails are dropped. Inside the gaining segment, each physical
    edge segment either stretches or gains a new one-frame neighbour.
    """
    sites = ctx.sites(tree)
    path, k, i = _pick(rng, sites.shift)
    parent = get_node(tree.root, path)
    seq = parent.children[k]
    left, right = seq.segments[i], seq.segments[i + 1]
    lq = -math.log(len(sites.shift)) - LOG2
    if rng.random() < 0.5:
        new_right = _shrink_start(right, right.start + 1)
        if new_right is None:
            return None
        lq += _log_grow(left, at_end=True)
        new_left = _grow(left, True, rng)
        lq_rev = _log_grow(new_right, at_end=False)
    else:
        new_left = _shrink_end(left, left.end - 1)
        if new_left is None:
            return None
        lq += _log_grow(right, at_end=False)
        new_right = _grow(right, False, rng)
        lq_rev = _log_grow(new_left, at_end=True)
    new_seq = replace(seq, segments=seq.segments[:i] + (new_left, new_right) + seq.segments[i + 2:])
    kids = parent.children[:k] + (new_seq,) + parent.children[k + 1:]
    new = _finish(tree, replace_node(tree.root, path, replace(parent, children=kids)))
    lq_rev += -math.log(len(ctx.sites(new).shift)) - LOG2
    return Proposal(new, lq, lq_rev, MoveKind.SHIFT)


PROPOSERS = {
    MoveKind.BIRTH: propose_birth,
    MoveKind.DEATH: propose_death,
    MoveKind.MERGE: propose_merge,
    MoveKind.SPLIT: propose_split,
    MoveKind.SEQUENCE: propose_sequence,
    MoveKind.UNSEQUENCE: propose_unsequence,
    MoveKind.RELABEL: propose_relabel,
    MoveKind.TIME_SPLIT: propose_time_split,
    MoveKind.TIME_JOIN: propose_time_join,
    MoveKind.SHIFT: propose_shift,
}


def propose_kind(kind: MoveKind, tree: ActivityTree, rng, ctx: MoveContext) -> Proposal | None:
    """One proposal of a fixed kind; the kind-selection term is not included."""
    if not ctx.sites(tree).of(kind):
        return None
    return PROPOSERS[kind](tree, rng, ctx)


def propose(tree: ActivityTree, rng, ctx: MoveContext) -> Proposal | None:
    """Pick a move kind uniformly among those with a site, then propose.

    The returned densities include the kind-selection probability at both
    the current and the proposed tree.
    """
    kinds = ctx.sites(tree).available()
    kind = _pick(rng, kinds)
    prop = PROPOSERS[kind](tree, rng, ctx)
    if prop is None:
        return None
    back = ctx.sites(prop.tree).available()
    if REVERSE[kind] not in back:
        return None
    return replace(prop, log_q_fwd=prop.log_q_fwd - math.log(len(kinds)),
                   log_q_rev=prop.log_q_rev - math.log(len(back)))
