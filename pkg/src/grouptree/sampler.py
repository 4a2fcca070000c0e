"""Metropolis-Hastings search over activity trees."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .config import ModelConfig
from .detectors import Detections, initial_tree, run_detectors
from .likelihood import NumericalError, log_posterior
from .model import ActivityTree, Scene, canonical, walk
from .moves import PROPOSERS, REVERSE, MoveContext, MoveKind, Proposal

log = logging.getLogger(__name__)


def tree_depth(tree: ActivityTree) -> int:
    return max(len(path) for path, _ in walk(tree.root))


def longest_sequence(tree: ActivityTree) -> int:
    return max((len(s.segments) for _, n in walk(tree.root) for s in n.children), default=0)


def redundant_nesting(tree: ActivityTree) -> bool:
    """True if some intentional node only wraps one copy of itself.

    Such a node has a single child sequence holding a single segment with the
    same label (and hence the same span and members). Trees like this are
    excluded from the search space.
    """
    for _, node in walk(tree.root):
        if len(node.children) == 1 and len(node.children[0].segments) == 1:
            inner = node.children[0].segments[0]
            if inner.label == node.label:
                return True
    return False


def in_universe(tree: ActivityTree, max_depth: int = 0, max_segments: int = 0) -> bool:
    if max_depth and tree_depth(tree) > max_depth:
        return False
    if max_segments and longest_sequence(tree) > max_segments:
        return False
    return not redundant_nesting(tree)


class Target:
    """Cached log-posterior restricted to the sampler's tree universe."""

    def __init__(self, scene: Scene, config: ModelConfig, max_depth=None, max_segments=None):
        self.scene = scene
        self.config = config
        self.max_depth = config.sampler.max_depth if max_depth is None else max_depth
        self.max_segments = config.sampler.max_segments if max_segments is None else max_segments
        self._cache: dict = {}
        self.failures = 0

    def __call__(self, tree: ActivityTree) -> float:
        key = tree.key
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        if not in_universe(tree, self.max_depth, self.max_segments):
            value = -math.inf
        else:
            try:
                value = log_posterior(self.scene, tree, self.config)
            except NumericalError as exc:
                self.failures += 1
                log.warning("likelihood failed, proposal rejected: %s", exc)
                value = -math.inf
        if len(self._cache) > 200_000:
            self._cache.clear()
        self._cache[key] = value
        return value


@dataclass
class Step:
    iteration: int
    move: str
    accepted: bool
    log_posterior: float


@dataclass
class SamplerTrace:
    steps: list[Step] = field(default_factory=list)
    best_tree: ActivityTree | None = None
    best_log_posterior: float = -math.inf
    best_history: list[float] = field(default_factory=list)
    redraws: int = 0
    failures: int = 0
    chain: int = 0

    @property
    def acceptance_rate(self) -> float:
        return sum(s.accepted for s in self.steps) / len(self.steps) if self.steps else 0.0

    def to_csv(self) -> str:
        rows = ["iteration,move,accepted,log_posterior"]
        rows += [f"{s.iteration},{s.move},{int(s.accepted)},{s.log_posterior!r}" for s in self.steps]
        return "\n".join(rows) + "\n"


@dataclass
class ChainState:
    tree: ActivityTree
    log_post: float


def draw_proposal(tree: ActivityTree, rng: np.random.Generator, ctx: MoveContext) -> tuple[MoveKind, Proposal | None, int]:
    """Draw a move kind uniformly, redrawing kinds with no site.

    Returns (kind, proposal or None, number of redraws). The proposal's
    densities include the kind-selection terms at both ends.
    """
    kinds = list(MoveKind)
    available = ctx.sites(tree).available()
    redraws = 0
    while True:
        kind = kinds[int(rng.integers(len(kinds)))]
        if kind in available:
            break
        redraws += 1
    prop = PROPOSERS[kind](tree, rng, ctx)
    if prop is None:
        return kind, None, redraws
    back = ctx.sites(prop.tree).available()
    if REVERSE[kind] not in back:
        return kind, None, redraws
    prop = Proposal(prop.tree, prop.log_q_fwd - math.log(len(available)),
                    prop.log_q_rev - math.log(len(back)), kind)
    return kind, prop, redraws


def acceptance_log_ratio(state: ChainState, prop: Proposal, new_log_post: float) -> float:
    return (new_log_post + prop.log_q_rev) - (state.log_post + prop.log_q_fwd)


def mh_step(state: ChainState, target: Target, ctx: MoveContext, rng: np.random.Generator,
            trace: SamplerTrace | None = None) -> ChainState:
    kind, prop, redraws = draw_proposal(state.tree, rng, ctx)
    accepted = False
    if prop is not None:
        new_lp = target(prop.tree)
        if new_lp > -math.inf:
            ratio = acceptance_log_ratio(state, prop, new_lp)
            if ratio >= 0 or rng.random() < math.exp(ratio):
                state = ChainState(prop.tree, new_lp)
                accepted = True
    if trace is not None:
        trace.redraws += redraws
        trace.steps.append(Step(len(trace.steps) + 1, kind.value, accepted, state.log_post))
        if state.log_post > trace.best_log_posterior:
            trace.best_tree, trace.best_log_posterior = state.tree, state.log_post
        trace.best_history.append(trace.best_log_posterior)
    return state


def run_chain(init: ActivityTree, target: Target, ctx: MoveContext, iterations: int,
              rng: np.random.Generator, chain: int = 0) -> SamplerTrace:
    tree = canonical(init)
    lp = target(tree)
    if lp == -math.inf:
        raise ValueError("initial tree has zero posterior probability")
    trace = SamplerTrace(best_tree=tree, best_log_posterior=lp, chain=chain)
    state = ChainState(tree, lp)
    for _ in range(iterations):
        state = mh_step(state, target, ctx, rng, trace)
    trace.failures = target.failures
    return trace


def run_sampler(scene: Scene, config: ModelConfig, rng: np.random.Generator | None = None,
                init: ActivityTree | None = None, detections: Detections | None = None,
                iterations: int | None = None) -> tuple[ActivityTree, SamplerTrace]:
    """Run the configured number of chains and keep the best tree found.

    The scene is expected to be centred. Chains start from the detector-built
    tree unless `init` is given; each gets an independent random stream.
    """
    cfg = config.sampler
    iterations = cfg.iterations if iterations is None else iterations
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    if detections is None:
        detections = run_detectors(scene, config)
    start = init if init is not None else initial_tree(scene, config, detections)
    target = Target(scene, config)
    best = None
    for chain, seed in enumerate(rng.bit_generator.seed_seq.spawn(cfg.chains)):
        ctx = MoveContext(config, detections)
        trace = run_chain(start, target, ctx, iterations, np.random.default_rng(seed), chain)
        if best is None or trace.best_log_posterior > best.best_log_posterior:
            best = trace
    return best.best_tree, best
