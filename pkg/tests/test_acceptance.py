"""End-to-end acceptance checks, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -v``; the lines are repeated in the
terminal summary.
"""

import itertools
import math
import os
import subprocess
import sys
import time
from fractions import Fraction
from statistics import median

import numpy as np
import pytest
from oracles import (
    brute_force_best_path,
    brute_force_counts,
    compositions,
    crp_seating_prob,
    dense_joint_log_likelihood,
    enumerate_trees,
    floyd_warshall,
    naive_dbscan,
    set_partitions,
)
from test_detectors import features, groups_of
from test_graph import random_graph
from test_likelihood import ORACLE_TREES, oracle_endpoint_cov
from test_prior import make_seq, spans_of

from grouptree.config import ModelConfig
from grouptree.detectors import HmmParams, classify_physical, dbscan_frame, viterbi
from grouptree.evaluation import activity_scores, evaluate, grouping_scores
from grouptree.graph import (
    build_constraint_graph,
    distance_matrix,
    endpoint_covariance,
    tree_endpoint_covariance,
)
from grouptree.likelihood import assemble_scene_covariance, log_marginal_likelihood
from grouptree.model import ActivityLabel, RoleDynamics, RoleLabel, leaf_at, walk
from grouptree.moves import MoveContext
from grouptree.prior import crp_log_prob, role_sequence_log_prob
from grouptree.sampler import ChainState, Target, mh_step, run_sampler
from grouptree.simulate import (
    ScenarioSpec,
    kinematic_scene,
    nested_meeting_tree,
    sample_scene,
    sample_tree,
    scripted_scene,
    synth1_tree,
    synth2_tree,
)

A, R = ActivityLabel, RoleLabel
SEEDS = range(5)


def has_nested_meet(tree) -> bool:
    return any(n.label is A.MEET and any(d.label is A.MEET for _, d in walk(n) if d is not n) for n in tree.nodes())


def _recover(scenario):
    cfg = ModelConfig()
    runs = []
    for seed in SEEDS:
        scene, gt = scripted_scene(ScenarioSpec(scenario, seed=seed), cfg)
        t0 = time.perf_counter()
        best, trace = run_sampler(scene, cfg, np.random.default_rng(seed))
        runs.append((gt, best, grouping_scores(gt, best), time.perf_counter() - t0, trace))
    return cfg, runs


def test_synth2_structural_recovery(verdict):
    cfg, runs = _recover("SYNTH2")
    nested = sum(has_nested_meet(best) for _, best, *_ in runs)
    int_f1 = median(g["INT"].f1 for _, _, g, *_ in runs)
    slowest = max(t for *_, t, _ in runs)
    ok = nested >= 4 and int_f1 >= 0.9 and slowest <= 600 and cfg.sampler.iterations <= 50_000
    assert verdict(1, "SYNTH2 structural recovery", ok,
                   f"nested MEET in {nested}/5, median INT F1 {int_f1:.3f}, "
                   f"{cfg.sampler.iterations} iterations, slowest run {slowest:.0f}s")


def test_synth1_grouping(verdict):
    _, runs = _recover("SYNTH1")
    int_f1 = median(g["INT"].f1 for _, _, g, *_ in runs)
    phys_f1 = median(g["PHYS"].f1 for _, _, g, *_ in runs)
    ok = int_f1 >= 0.9 and phys_f1 >= 0.8
    assert verdict(2, "SYNTH1 grouping", ok, f"median INT F1 {int_f1:.3f}, median PHYS F1 {phys_f1:.3f}")


def test_marginal_likelihood_and_forward_covariance(verdict):
    t0 = time.perf_counter()
    cfg = ModelConfig()
    rng = np.random.default_rng(11)
    worst = 0.0
    for tree in ORACLE_TREES:
        assert len(tree.actors) <= 3 and tree.horizon <= 12
        _, scene = sample_scene(tree, cfg, rng)
        dense = dense_joint_log_likelihood(scene, tree, cfg, oracle_endpoint_cov(tree, cfg))
        worst = max(worst, abs(log_marginal_likelihood(scene, tree, cfg) - dense))

    tree, n = nested_meeting_tree(), 20_000
    ys = np.array([sample_scene(tree, cfg, rng)[1].positions[..., 0].ravel() for _ in range(n)])
    emp = np.cov(ys, rowvar=False)
    cov = assemble_scene_covariance(tree, tree.actors, tree.horizon, cfg).covariance
    big = np.abs(cov) > 0.05 * cfg.lam
    rel = np.linalg.norm(emp[big] - cov[big]) / np.linalg.norm(cov[big])
    # Monte Carlo standard error of each sample covariance entry
    diag = np.diag(cov)
    z = np.abs(emp - cov)[big] / np.sqrt((np.outer(diag, diag) + cov**2)[big] / n)
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-6 and rel <= 0.05 and z.max() <= 6 and elapsed < 120
    assert verdict(3, "marginalization oracle", ok,
                   f"max |log-lik diff| {worst:.2e} over {len(ORACLE_TREES)} trees; forward covariance relative "
                   f"error {rel:.4f} on {big.sum()} entries, max z {z.max():.2f}; {elapsed:.0f}s")


def test_exact_posterior_chain(verdict):
    t0 = time.perf_counter()
    cfg = ModelConfig()
    cfg.sampler.max_depth, cfg.sampler.max_segments = 2, 2
    horizon, steps = 2, 1_000_000
    trees = list(enumerate_trees([1, 2], horizon, cfg, 2, 2))
    rng = np.random.default_rng(5)
    _, scene = sample_scene(sample_tree(2, horizon, cfg, rng, max_depth=2), cfg, rng)
    scene, _ = scene.centered()
    target = Target(scene, cfg)
    logp = np.array([target(t) for t in trees])
    exact = np.exp(logp - logp.max())
    exact /= exact.sum()

    index = {t.key: i for i, t in enumerate(trees)}
    counts = np.zeros(len(trees))
    ctx, chain_rng = MoveContext(cfg), np.random.default_rng(105)
    state = ChainState(trees[0], target(trees[0]))
    for _ in range(steps):
        state = mh_step(state, target, ctx, chain_rng)
        counts[index[state.tree.key]] += 1
    tv = 0.5 * np.abs(exact - counts / steps).sum()
    elapsed = time.perf_counter() - t0
    ok = tv <= 0.05 and elapsed < 300
    assert verdict(4, "exact-posterior chain", ok,
                   f"TV {tv:.4f} over {len(trees)} trees after {steps} steps; {elapsed:.0f}s")


def test_crp_and_role_chain_normalization(verdict):
    crp_worst = 0.0
    for n in range(1, 7):
        for alpha in (0.3, 1.0, 4.0):
            parts = list(set_partitions(range(1, n + 1)))
            total = math.fsum(math.exp(crp_log_prob(p, alpha, n)) for p in parts)
            exact = sum(crp_seating_prob(p, Fraction(alpha)) for p in parts)
            assert exact == 1
            crp_worst = max(crp_worst, abs(total - 1.0))

    chains = {
        R.MOVER: RoleDynamics((0.2, 0.5, 0.3), ((0.5, 0.3, 0.2), (0.1, 0.6, 0.3), (0.25, 0.25, 0.5)), 4.0),
        R.APPROACHER: RoleDynamics((0.7, 0.3), ((0.2, 0.8), (0.6, 0.4)), 3.0),
        R.WAITER: RoleDynamics((1.0,), ((1.0,),), 7.0),
    }
    chain_worst = 0.0
    for role, dyn in chains.items():
        total = []
        for parts in compositions(10):
            spans = spans_of(parts)
            for labels in itertools.product(role.allowed, repeat=len(parts)):
                total.append(math.exp(role_sequence_log_prob(make_seq(role, labels, spans), dyn, (1, 10))))
        chain_worst = max(chain_worst, abs(math.fsum(total) - 1.0))
    ok = crp_worst <= 1e-9 and chain_worst <= 1e-8
    assert verdict(5, "CRP and role-chain normalization", ok,
                   f"CRP max |sum-1| {crp_worst:.1e} for n<=6; 10-frame role chains max |sum-1| {chain_worst:.1e}")


def _trees_from_unit_suites():
    cfg = ModelConfig()
    trees = [nested_meeting_tree(), synth1_tree(), synth2_tree(), *ORACLE_TREES]
    for seed, (actors, horizon) in enumerate([(4, 12), (3, 8), (5, 20), (2, 6)]):
        rng = np.random.default_rng(seed)
        trees += [sample_tree(actors, horizon, cfg, rng) for _ in range(15)]
    return cfg, trees


def test_graph_distances_and_endpoint_covariance(verdict):
    rng = np.random.default_rng(7)
    exact = 0
    for _ in range(100):
        n = 2 * int(rng.integers(1, 7))
        g, edges = random_graph(rng, n)
        exact += np.array_equal(distance_matrix(g), floyd_warshall(n, edges))

    cfg, trees = _trees_from_unit_suites()
    raw = np.array([tree_endpoint_covariance(t, cfg).min_eig_raw for t in trees])
    not_psd = int((raw < -1e-6 * cfg.lam).sum())

    row_gap = 0.0
    for t in trees:
        d = distance_matrix(build_constraint_graph(t, cfg))
        cov = endpoint_covariance(d, cfg.lam).matrix
        for i, j in zip(*np.nonzero(d == 0)):
            if i < j:
                others = [k for k in range(len(d)) if k not in (i, j)]
                if others:
                    row_gap = max(row_gap, float(np.abs(cov[i, others] - cov[j, others]).max()))
    ok = exact == 100 and not_psd == 0 and row_gap <= 1e-8
    assert verdict(6, "graph distances and endpoint covariance", ok,
                   f"Floyd-Warshall exact on {exact}/100 graphs; raw kernel min eigenvalue below -1e-6*lambda "
                   f"on {not_psd}/{len(trees)} trees (worst {raw.min() / cfg.lam:.3f}*lambda); "
                   f"zero-distance row gap {row_gap:.1e}")


def test_detectors(verdict):
    rng = np.random.default_rng(2)
    hmm_ok = 0
    for _ in range(20):
        emit = rng.normal(size=(12, 3)) * 2
        trans = np.log(rng.dirichlet(np.ones(3), size=3))
        path, _ = viterbi(emit, trans)
        hmm_ok += tuple(path) == brute_force_best_path(emit, trans)[0]

    cfg = ModelConfig()
    params = HmmParams.from_config(cfg)
    hits = total = 0
    for scenario in ("SYNTH1", "SYNTH2"):
        for seed in range(10):
            _, tree = scripted_scene(ScenarioSpec(scenario, seed=seed), cfg)
            scene = kinematic_scene(tree, cfg, np.random.default_rng(seed))
            labels = classify_physical(scene, params, cfg.detector.smoothing_window)
            for a in scene.actor_ids:
                for f in range(1, scene.horizon + 1):
                    hits += labels[a][f - 1] is leaf_at(tree, a, f).label
                    total += 1
    accuracy = hits / total

    rng = np.random.default_rng(0)
    db_ok = 0
    for _ in range(50):
        pts = rng.uniform(0, 10, size=(30, 2))
        eps, min_pts = float(rng.uniform(0.5, 2.0)), int(rng.integers(1, 5))
        got = groups_of(dbscan_frame(features(pts), eps, min_pts, position_weight=1.0, velocity_weight=0.0))
        db_ok += got == naive_dbscan(pts, eps, min_pts)
    ok = hmm_ok == 20 and accuracy >= 0.9 and db_ok == 50
    assert verdict(7, "detectors", ok,
                   f"Viterbi = brute force on {hmm_ok}/20 12-frame instances; per-frame physical accuracy "
                   f"{accuracy:.3f}; DBSCAN = oracle on {db_ok}/50")


def test_evaluation_metrics(verdict):
    cfg = ModelConfig()
    rng = np.random.default_rng(1)
    identity = swap = counts = True
    for _ in range(50):
        n, f = int(rng.integers(1, 6)), int(rng.integers(1, 12))
        a, b = sample_tree(n, f, cfg, rng), sample_tree(n, f, cfg, rng)
        report = evaluate(a, a)
        identity &= all(s is None or (s.precision, s.recall, s.f1) == (1.0, 1.0, 1.0) for s in report.activities.values())
        identity &= all((s.precision, s.recall, s.f1) == (1.0, 1.0, 1.0) for s in report.grouping.values())
        for label in A:
            s, t = activity_scores(a, b, label), activity_scores(b, a, label)
            swap &= (s.tp, s.fp, s.fn, s.tn) == (t.tp, t.fn, t.fp, t.tn) and (s.precision, s.f1) == (t.recall, t.f1)
            counts &= (s.tp, s.fp, s.fn, s.tn) == brute_force_counts(a, b, label=label)
        ab, ba = grouping_scores(a, b), grouping_scores(b, a)
        for level, s in ab.items():
            t = ba[level]
            swap &= (s.tp, s.fp, s.fn, s.tn) == (t.tp, t.fn, t.fp, t.tn)
            counts &= (s.tp, s.fp, s.fn, s.tn) == brute_force_counts(a, b, level=level)
    assert verdict(8, "evaluation metrics", identity and swap and counts,
                   f"identity {identity}, swap duality {swap}, brute-force counts on 50 pairs {counts}")


def _cli(args, cwd, hash_seed):
    env = {**os.environ, "PYTHONHASHSEED": str(hash_seed)}
    res = subprocess.run([sys.executable, "-m", "grouptree.cli", *args], cwd=cwd, env=env,
                         capture_output=True, text=True, check=True)
    return res.stdout


def test_cli_determinism(verdict, tmp_path):
    outputs = []
    for run, hash_seed in ((tmp_path / "a", 1), (tmp_path / "b", 2)):
        run.mkdir()
        _cli(["generate", "--scenario", "SYNTH2", "--seed", "4", "--out-dir", "."], run, hash_seed)
        _cli(["detect", "--scene", "scene.csv", "--out", "init.json"], run, hash_seed)
        _cli(["infer", "--scene", "scene.csv", "--iterations", "2000", "--seed", "3",
              "--out", "best.json", "--trace", "trace.csv", "--dot", "graph.dot"], run, hash_seed)
        scores = _cli(["evaluate", "--gt", "tree.json", "--pred", "best.json", "--csv"], run, hash_seed)
        _cli(["render", "--scene", "scene.csv", "--tree", "best.json", "--out", "scene.svg"], run, hash_seed)
        files = {p.name: p.read_bytes() for p in sorted(run.iterdir())}
        outputs.append((files, scores))
    (fa, sa), (fb, sb) = outputs
    differing = sorted(name for name in fa if fa[name] != fb.get(name))
    ok = not differing and fa.keys() == fb.keys() and sa == sb
    assert verdict(9, "determinism", ok,
                   f"{len(fa)} files byte-identical across runs with different hash seeds"
                   if ok else f"differing outputs: {differing}")
