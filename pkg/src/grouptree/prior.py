"""Discrete prior over activity trees: CRP partitions, roles, and role chains."""

from __future__ import annotations

import math
from functools import lru_cache

from .config import ModelConfig
from .model import ActivityTree, ChildSequence, RoleDynamics, validate_tree

NEG_INF = float("-inf")


def crp_log_prob(partition, alpha: float, n: int | None = None) -> float:
    """Exchangeable CRP log-mass of a set partition.

    If `n` is given, the blocks must cover exactly {1..n}.
    """
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha!r}")
    blocks = [frozenset(b) for b in partition]
    seen: set = set()
    for b in blocks:
        if not b:
            raise ValueError("partition contains an empty block")
        if seen & b:
            raise ValueError(f"blocks overlap on {sorted(seen & b)}")
        seen |= b
    if n is not None and seen != set(range(1, n + 1)):
        raise ValueError(f"partition does not cover 1..{n}")
    total = len(seen)
    if total == 0:
        raise ValueError("empty partition")
    # rising factorial alpha (alpha + 1) ... (alpha + total - 1) in the denominator
    out = len(blocks) * math.log(alpha) + sum(math.lgamma(len(b)) for b in blocks)
    return out - sum(math.log(alpha + i) for i in range(total))


def _log_duration(d: int, p: float) -> float:
    # geometric law on {1, 2, ...} with success probability p
    if d < 1:
        return NEG_INF
    if d == 1:
        return math.log(p)
    if p >= 1.0:
        return NEG_INF
    return math.log(p) + (d - 1) * math.log1p(-p)


@lru_cache(maxsize=4096)
def _log_hit(span: int, p: float) -> float:
    """log P(a renewal sequence of geometric durations lands exactly on `span`)."""
    hit = [1.0] + [0.0] * span
    for n in range(1, span + 1):
        hit[n] = sum(math.exp(_log_duration(d, p)) * hit[n - d] for d in range(1, n + 1))
    return math.log(hit[span])


def role_sequence_log_prob(seq: ChildSequence, dynamics: RoleDynamics, parent_span: tuple[int, int]) -> float:
    """log p(sequence | parent interval) under the role's Markov chain.

    Segment lengths follow a geometric law with mean `duration_rate`,
    conditioned on the segments exactly tiling `parent_span`.
    """
    allowed = seq.role.allowed
    idx = []
    for seg in seq.segments:
        if seg.label not in allowed:
            return NEG_INF
        idx.append(allowed.index(seg.label))
    s, e = parent_span
    if not seq.segments or seq.segments[0].start != s or seq.segments[-1].end != e:
        return NEG_INF
    p = 1.0 / dynamics.duration_rate
    lp = math.log(dynamics.initial[idx[0]]) if dynamics.initial[idx[0]] > 0 else NEG_INF
    for a, b in zip(idx, idx[1:]):
        t = dynamics.transition[a][b]
        lp += math.log(t) if t > 0 else NEG_INF
    expect = s
    for seg in seq.segments:
        if seg.start != expect:
            return NEG_INF
        expect = seg.end + 1
        lp += _log_duration(seg.duration, p)
    return lp - _log_hit(e - s + 1, p)


def tree_log_prior(tree: ActivityTree, config: ModelConfig, check: bool = True) -> float:
    """log p(tree): CRP grouping, role choice and role chains at every intentional node."""
    if check:
        problems = validate_tree(tree)
        if problems:
            raise ValueError(f"invalid tree: {problems[0]}")
    total = 0.0
    for node in tree.nodes():
        if node.is_physical:
            continue
        total += crp_log_prob([c.members for c in node.children], config.alpha[node.label])
        roles = config.role_prior[node.label]
        for seq in node.children:
            pr = roles.get(seq.role, 0.0)
            if pr <= 0:
                return NEG_INF
            total += math.log(pr)
            total += role_sequence_log_prob(seq, config.roles[seq.role], (node.start, node.end))
            if total == NEG_INF:
                return NEG_INF
    return total
