"""Marginal likelihood of observed trajectories given an activity tree.

Group trajectories never appear explicitly: endpoints are jointly Gaussian
through the constraint graph, interiors are GP bridges between endpoints, and
individuals are GP deviations around their group. All of it is linear-Gaussian,
so each ground-plane axis of the stacked observations is N(0, cov).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .config import ModelConfig
from .graph import tree_endpoint_covariance
from .model import ActivityNode, ActivityTree, Scene, validate_tree
from .prior import tree_log_prior

LOG_2PI = math.log(2.0 * math.pi)
JITTER_STEPS = (1e-8, 1e-6, 1e-4)


class NumericalError(RuntimeError):
    pass


def se_kernel(times_a, times_b, variance: float, length_scale: float) -> np.ndarray:
    ta = np.asarray(times_a, dtype=float)[:, None]
    tb = np.asarray(times_b, dtype=float)[None, :]
    return variance * np.exp(-np.square(ta - tb) / (2.0 * length_scale**2))


def gp_bridge(leaf: ActivityNode, config: ModelConfig) -> tuple[np.ndarray, np.ndarray]:
    """Interior law given the two endpoints: mean map (n x 2) and covariance (n x n)."""
    if leaf.duration <= 2:
        return np.zeros((0, 2)), np.zeros((0, 0))
    var = config.sigma[leaf.label] ** 2
    ell = config.length_scale
    ends = [leaf.start, leaf.end]
    inner = np.arange(leaf.start + 1, leaf.end)
    k_ee = se_kernel(ends, ends, var, ell)
    k_ie = se_kernel(inner, ends, var, ell)
    k_ii = se_kernel(inner, inner, var, ell)
    for attempt in range(2):
        try:
            cf = cho_factor(k_ee + (attempt * 1e-10 * var) * np.eye(2))
            break
        except LinAlgError:
            if attempt:
                raise NumericalError(f"endpoint kernel singular for leaf {leaf.id}") from None
    amap = cho_solve(cf, k_ie.T).T
    cov = k_ii - amap @ k_ie.T
    return amap, 0.5 * (cov + cov.T)


@dataclass
class SceneGaussian:
    ordering: list[tuple[int, int]]  # row -> (actor, frame)
    covariance: np.ndarray
    factor: tuple | None = None
    log_det: float | None = None
    jitter: float = 0.0

    def factorize(self) -> None:
        cov = self.covariance
        scale = float(np.mean(np.diag(cov))) if len(cov) else 1.0
        for rel in (0.0,) + JITTER_STEPS:
            try:
                jit = rel * scale
                cf = cho_factor(cov + jit * np.eye(len(cov)), lower=True)
            except LinAlgError:
                continue
            self.factor, self.jitter = cf, jit
            self.log_det = 2.0 * float(np.sum(np.log(np.diag(cf[0]))))
            return
        raise NumericalError("scene covariance not positive definite after maximal jitter")


def scene_rows(actors, horizon: int) -> list[tuple[int, int]]:
    return [(a, f) for a in actors for f in range(1, horizon + 1)]


def assemble_scene_covariance(tree: ActivityTree, actors, horizon: int, config: ModelConfig) -> SceneGaussian:
    """Per-axis covariance of all (actor, frame) positions with groups integrated out."""
    actors = list(actors)
    if sorted(actors) != tree.actors or horizon != tree.horizon:
        raise ValueError("scene shape does not match the tree's actors/horizon")
    pos = {a: i for i, a in enumerate(actors)}
    dim = len(actors) * horizon
    phi = tree_endpoint_covariance(tree, config).matrix
    leaves = tree.leaves()
    weights = np.zeros((dim, 2 * len(leaves)))
    extra = np.zeros((dim, dim))
    ell = config.length_scale

    for m, leaf in enumerate(leaves):
        frames = np.arange(leaf.start, leaf.end + 1)
        amap, bcov = gp_bridge(leaf, config)
        local = np.zeros((len(frames), 2))
        local[0, 0] = 1.0
        if len(frames) > 1:
            local[-1, 1] = 1.0
            local[1:-1] = amap
        rows = {a: pos[a] * horizon + frames - 1 for a in leaf.participants}
        for a, r in rows.items():
            weights[r, 2 * m:2 * m + 2] = local
        if len(frames) > 2:
            inner = [r[1:-1] for r in rows.values()]
            for ra in inner:
                for rb in inner:
                    extra[np.ix_(ra, rb)] += bcov
        dev = se_kernel(frames, frames, config.rho[leaf.label] ** 2, ell)
        for r in rows.values():
            extra[np.ix_(r, r)] += dev

    cov = weights @ phi @ weights.T + extra
    cov[np.diag_indices_from(cov)] += config.obs_noise
    cov = 0.5 * (cov + cov.T)
    return SceneGaussian(scene_rows(actors, horizon), cov)


def stacked_observations(scene: Scene) -> np.ndarray:
    """(J*F, 2) array in the same row order as `assemble_scene_covariance`."""
    return scene.positions.reshape(-1, 2)


def gaussian_log_density(y: np.ndarray, sg: SceneGaussian) -> float:
    if sg.factor is None:
        sg.factorize()
    sol = cho_solve(sg.factor, y)
    quad = float(np.sum(y * sol))
    n_axes = y.shape[1] if y.ndim == 2 else 1
    dim = y.shape[0]
    return -0.5 * quad - 0.5 * n_axes * sg.log_det - 0.5 * n_axes * dim * LOG_2PI


def log_marginal_likelihood(scene: Scene, tree: ActivityTree, config: ModelConfig) -> float:
    sg = assemble_scene_covariance(tree, scene.actor_ids, scene.horizon, config)
    try:
        value = gaussian_log_density(stacked_observations(scene), sg)
    except NumericalError as exc:
        raise NumericalError(f"tree {tree.root.id}: {exc}") from None
    if not math.isfinite(value):
        raise NumericalError(f"tree {tree.root.id}: non-finite log-likelihood")
    return value


def log_posterior(scene: Scene, tree: ActivityTree, config: ModelConfig) -> float:
    """Unnormalized log p(tree | scene); -inf outside the prior's support."""
    if validate_tree(tree):
        return float("-inf")
    lp = tree_log_prior(tree, config, check=False)
    if lp == float("-inf"):
        return lp
    return lp + log_marginal_likelihood(scene, tree, config)
