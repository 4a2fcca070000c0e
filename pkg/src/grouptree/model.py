"""Activity-tree representation: labels, roles, nodes, sequences and scenes."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from typing import Iterator

import numpy as np


class ActivityLabel(str, Enum):
    FFA = "FFA"
    MEET = "MEET"
    MOVE_TO = "MOVE_TO"
    STAND = "STAND"
    WALK = "WALK"
    RUN = "RUN"

    @property
    def is_physical(self) -> bool:
        return self in PHYSICAL

    @property
    def is_intentional(self) -> bool:
        return self in INTENTIONAL


PHYSICAL = (ActivityLabel.STAND, ActivityLabel.WALK, ActivityLabel.RUN)
INTENTIONAL = (ActivityLabel.FFA, ActivityLabel.MEET, ActivityLabel.MOVE_TO)
# FFA is root-only, so these are the labels a segment may carry.
SEGMENT_INTENTIONAL = (ActivityLabel.MEET, ActivityLabel.MOVE_TO)


class RoleLabel(str, Enum):
    FFA_ROLE = "FFA_ROLE"
    APPROACHER = "APPROACHER"
    WAITER = "WAITER"
    MOVER = "MOVER"

    @property
    def allowed(self) -> tuple[ActivityLabel, ...]:
        return ROLE_LABELS[self]


A = ActivityLabel
ROLE_LABELS: dict[RoleLabel, tuple[ActivityLabel, ...]] = {
    RoleLabel.FFA_ROLE: (A.MEET, A.MOVE_TO, A.STAND, A.WALK, A.RUN),
    RoleLabel.APPROACHER: (A.MEET, A.MOVE_TO),
    RoleLabel.WAITER: (A.STAND,),
    RoleLabel.MOVER: (A.STAND, A.WALK, A.RUN),
}

# Roles an intentional activity can hand out to its subgroups.
ACTIVITY_ROLES: dict[ActivityLabel, tuple[RoleLabel, ...]] = {
    A.FFA: (RoleLabel.FFA_ROLE,),
    A.MEET: (RoleLabel.APPROACHER, RoleLabel.WAITER),
    A.MOVE_TO: (RoleLabel.MOVER,),
}


def admitting_roles(activity: ActivityLabel, labels) -> list[RoleLabel]:
    """Roles of `activity` whose allowed set contains every label in `labels`."""
    labels = set(labels)
    return [r for r in ACTIVITY_ROLES.get(activity, ()) if labels <= set(ROLE_LABELS[r])]


@dataclass(frozen=True)
class RoleDynamics:
    """Markov chain over a role's allowed labels plus a mean segment length."""

    initial: tuple[float, ...]
    transition: tuple[tuple[float, ...], ...]
    duration_rate: float

    def __post_init__(self):
        init = np.asarray(self.initial, dtype=float)
        trans = np.asarray(self.transition, dtype=float)
        if init.ndim != 1 or trans.shape != (init.size, init.size):
            raise ValueError("transition must be square and match the initial vector")
        if (init < 0).any() or (trans < 0).any():
            raise ValueError("role dynamics must be nonnegative")
        if abs(init.sum() - 1.0) > 1e-12:
            raise ValueError(f"initial distribution sums to {init.sum()!r}")
        if np.abs(trans.sum(axis=1) - 1.0).max() > 1e-12:
            raise ValueError("transition rows must sum to 1")
        if not self.duration_rate >= 1.0:
            raise ValueError("duration_rate is a mean length in frames and must be >= 1")

    @classmethod
    def uniform(cls, n: int, duration_rate: float) -> RoleDynamics:
        row = tuple([1.0 / n] * n)
        return cls(row, tuple([row] * n), duration_rate)


@dataclass(frozen=True, eq=True)
class ActivityNode:
    id: int
    label: ActivityLabel
    start: int
    end: int
    participants: frozenset[int]
    children: tuple[ChildSequence, ...] = ()

    @property
    def duration(self) -> int:
        return self.end - self.start + 1

    @property
    def is_physical(self) -> bool:
        return self.label.is_physical

    @cached_property
    def key(self) -> tuple:
        """Structural identity, ignoring node ids and sibling order."""
        kids = tuple(sorted((c.key for c in self.children), key=lambda k: k[1]))
        return (self.label.value, self.start, self.end, tuple(sorted(self.participants)), kids)


@dataclass(frozen=True, eq=True)
class ChildSequence:
    role: RoleLabel
    members: frozenset[int]
    segments: tuple[ActivityNode, ...]

    @cached_property
    def key(self) -> tuple:
        return (self.role.value, tuple(sorted(self.members)), tuple(s.key for s in self.segments))

    @property
    def labels(self) -> tuple[ActivityLabel, ...]:
        return tuple(s.label for s in self.segments)

    @property
    def start(self) -> int:
        return self.segments[0].start

    @property
    def end(self) -> int:
        return self.segments[-1].end


@dataclass(frozen=True, eq=True)
class ActivityTree:
    root: ActivityNode
    actor_count: int
    horizon: int

    @cached_property
    def key(self) -> tuple:
        return (self.actor_count, self.horizon, self.root.key)

    @property
    def actors(self) -> list[int]:
        return sorted(self.root.participants)

    def nodes(self) -> Iterator[ActivityNode]:
        for _, node in walk(self.root):
            yield node

    def leaves(self) -> list[ActivityNode]:
        return [n for n in self.nodes() if n.is_physical]

    def node_by_id(self, node_id: int) -> ActivityNode:
        for n in self.nodes():
            if n.id == node_id:
                return n
        raise KeyError(node_id)


Path = tuple  # sequence of (sequence index, segment index) steps from the root


def walk(node: ActivityNode, path: Path = ()) -> Iterator[tuple[Path, ActivityNode]]:
    """Preorder traversal yielding (path, node)."""
    yield path, node
    for k, seq in enumerate(node.children):
        for i, seg in enumerate(seq.segments):
            yield from walk(seg, path + ((k, i),))


def get_node(root: ActivityNode, path: Path) -> ActivityNode:
    node = root
    for k, i in path:
        node = node.children[k].segments[i]
    return node


def replace_node(root: ActivityNode, path: Path, new: ActivityNode) -> ActivityNode:
    """Return a copy of `root` with the node at `path` swapped for `new`."""
    if not path:
        return new
    (k, i), rest = path[0], path[1:]
    seq = root.children[k]
    child = replace_node(seq.segments[i], rest, new)
    segs = seq.segments[:i] + (child,) + seq.segments[i + 1:]
    kids = root.children[:k] + (replace(seq, segments=segs),) + root.children[k + 1:]
    return replace(root, children=kids)


def canonical(tree: ActivityTree) -> ActivityTree:
    """Sort sibling sequences by smallest member and renumber ids in preorder."""
    counter = iter(range(10**9))

    def rebuild(node: ActivityNode) -> ActivityNode:
        nid = next(counter)
        seqs = sorted(node.children, key=lambda c: min(c.members))
        kids = tuple(
            ChildSequence(c.role, c.members, tuple(rebuild(s) for s in c.segments)) for c in seqs
        )
        return ActivityNode(nid, node.label, node.start, node.end, node.participants, kids)

    return ActivityTree(rebuild(tree.root), tree.actor_count, tree.horizon)


def leaf_at(tree: ActivityTree, actor: int, frame: int) -> ActivityNode:
    """The physical leaf containing `actor` at `frame`."""
    node = tree.root
    while not node.is_physical:
        for seq in node.children:
            if actor in seq.members:
                for seg in seq.segments:
                    if seg.start <= frame <= seg.end:
                        node = seg
                        break
                break
        else:
            raise KeyError((actor, frame))
    return node


def ancestry_at(tree: ActivityTree, actor: int, frame: int) -> list[ActivityNode]:
    """Root-to-leaf chain of nodes containing `actor` at `frame`."""
    chain = [tree.root]
    node = tree.root
    while not node.is_physical:
        nxt = None
        for seq in node.children:
            if actor in seq.members:
                for seg in seq.segments:
                    if seg.start <= frame <= seg.end:
                        nxt = seg
                break
        if nxt is None:
            raise KeyError((actor, frame))
        chain.append(nxt)
        node = nxt
    return chain


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Violation:
    node_id: int | None
    kind: str
    message: str

    def __str__(self):
        where = "tree" if self.node_id is None else f"node {self.node_id}"
        return f"{where}: {self.kind}: {self.message}"


def validate_tree(tree: ActivityTree) -> list[Violation]:
    """Every structural violation in `tree`; an empty list means valid."""
    out: list[Violation] = []
    root = tree.root
    if root.label is not A.FFA:
        out.append(Violation(root.id, "root", f"root label is {root.label.value}, expected FFA"))
    if root.start != 1 or root.end != tree.horizon:
        out.append(Violation(root.id, "root", f"root spans {root.start}..{root.end}, expected 1..{tree.horizon}"))
    if len(root.participants) != tree.actor_count:
        out.append(Violation(root.id, "root", f"root has {len(root.participants)} actors, expected {tree.actor_count}"))

    seen: set[int] = set()
    for path, node in walk(root):
        if node.id in seen:
            out.append(Violation(node.id, "id", "duplicate node id"))
        seen.add(node.id)
        _check_node(node, path == (), out)

    # each actor occupies exactly one leaf at every frame
    cover: dict[int, np.ndarray] = {a: np.zeros(tree.horizon + 2, dtype=int) for a in root.participants}
    for leaf in tree.leaves():
        for a in leaf.participants:
            if a in cover and 1 <= leaf.start <= leaf.end <= tree.horizon:
                cover[a][leaf.start:leaf.end + 1] += 1
    for a, c in sorted(cover.items()):
        bad = [f for f in range(1, tree.horizon + 1) if c[f] != 1]
        if bad:
            out.append(Violation(None, "coverage", f"actor {a} is in {c[bad[0]]} leaves at frame {bad[0]}"))
    return out


def _check_node(node: ActivityNode, is_root: bool, out: list[Violation]) -> None:
    nid = node.id
    if node.start > node.end:
        out.append(Violation(nid, "interval", f"start {node.start} > end {node.end}"))
    if not node.participants:
        out.append(Violation(nid, "participants", "empty participant set"))
    if node.label is A.FFA and not is_root:
        out.append(Violation(nid, "label", "FFA may only label the root"))
    if node.is_physical:
        if node.children:
            out.append(Violation(nid, "children", "physical activity has children"))
        return
    if not node.children:
        out.append(Violation(nid, "children", "intentional activity has no child sequences"))
        return

    union: set[int] = set()
    for seq in node.children:
        if union & seq.members:
            out.append(Violation(nid, "partition", f"members {sorted(union & seq.members)} appear in two sequences"))
        union |= seq.members
        if not seq.members:
            out.append(Violation(nid, "partition", "empty child sequence member set"))
        if seq.role not in ACTIVITY_ROLES.get(node.label, ()):
            out.append(Violation(nid, "role", f"{node.label.value} cannot assign role {seq.role.value}"))
        if not seq.segments:
            out.append(Violation(nid, "sequence", "child sequence has no segments"))
            continue
        expect = node.start
        for seg in seq.segments:
            if seg.start != expect:
                out.append(Violation(seg.id, "tiling", f"segment starts at {seg.start}, expected {expect}"))
            expect = seg.end + 1
            if seg.participants != seq.members:
                out.append(Violation(seg.id, "participants", "segment participants differ from sequence members"))
            if seg.label not in ROLE_LABELS[seq.role]:
                out.append(Violation(seg.id, "role-label", f"{seg.label.value} not allowed for role {seq.role.value}"))
        if seq.segments[-1].end != node.end:
            out.append(Violation(seq.segments[-1].id, "tiling", f"sequence ends at {seq.segments[-1].end}, expected {node.end}"))
    if union != set(node.participants):
        out.append(Violation(nid, "partition", "child sequences do not cover the participants"))


def is_valid(tree: ActivityTree) -> bool:
    return not validate_tree(tree)


# ---------------------------------------------------------------------------
# JSON mapping


def node_to_dict(node: ActivityNode) -> dict:
    return {
        "id": node.id,
        "label": node.label.value,
        "start": node.start,
        "end": node.end,
        "participants": sorted(node.participants),
        "children": [
            {"role": c.role.value, "members": sorted(c.members), "segments": [node_to_dict(s) for s in c.segments]}
            for c in node.children
        ],
    }


def node_from_dict(d: dict) -> ActivityNode:
    kids = tuple(
        ChildSequence(RoleLabel(c["role"]), frozenset(int(m) for m in c["members"]),
                      tuple(node_from_dict(s) for s in c["segments"]))
        for c in d.get("children", [])
    )
    return ActivityNode(int(d["id"]), ActivityLabel(d["label"]), int(d["start"]), int(d["end"]),
                        frozenset(int(p) for p in d["participants"]), kids)


def tree_to_dict(tree: ActivityTree) -> dict:
    return {"actor_count": tree.actor_count, "horizon": tree.horizon, "root": node_to_dict(tree.root)}


def tree_from_dict(d: dict) -> ActivityTree:
    return ActivityTree(node_from_dict(d["root"]), int(d["actor_count"]), int(d["horizon"]))


# ---------------------------------------------------------------------------
# observations


@dataclass(frozen=True)
class Scene:
    """Ground-plane trajectories: positions[j, f-1] is actor_ids[j] at frame f."""

    actor_ids: tuple[int, ...]
    positions: np.ndarray = field(repr=False)  # shape (J, F, 2)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 3 or pos.shape[2] != 2 or pos.shape[0] != len(self.actor_ids):
            raise ValueError(f"positions must have shape (J, F, 2), got {pos.shape}")
        if pos.shape[1] < 1:
            raise ValueError("scene needs at least one frame")
        if not np.isfinite(pos).all():
            raise ValueError("scene coordinates must be finite")
        if len(set(self.actor_ids)) != len(self.actor_ids):
            raise ValueError("duplicate actor ids")
        object.__setattr__(self, "positions", pos)

    @property
    def horizon(self) -> int:
        return self.positions.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return (len(self.actor_ids), self.horizon)

    def trajectory(self, actor: int) -> np.ndarray:
        """2 x F array for one actor."""
        return self.positions[self.actor_ids.index(actor)].T

    def centered(self) -> tuple[Scene, np.ndarray]:
        offset = self.positions.reshape(-1, 2).mean(axis=0)
        return Scene(self.actor_ids, self.positions - offset), offset
