"""Command-line driver: generate, detect, infer, evaluate and render."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, ModelConfig
from .detectors import initial_tree, run_detectors
from .evaluation import UniverseMismatch, evaluate
from .graph import build_constraint_graph
from .io import (
    ParseError,
    TreeValidationError,
    load_scene,
    load_tree,
    save_scene,
    save_tree,
)
from .likelihood import NumericalError
from .render import save_svg
from .sampler import run_sampler
from .simulate import ScenarioId, ScenarioSpec, scripted_scene

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(EXIT_USAGE, f"error: {' '.join(message.split())}\n")


def _config(args) -> ModelConfig:
    return ModelConfig.load(args.config) if getattr(args, "config", None) else ModelConfig()


def cmd_generate(args) -> None:
    cfg = _config(args)
    spec = ScenarioSpec(ScenarioId(args.scenario), args.actors, args.horizon, args.seed)
    scene, tree = scripted_scene(spec, cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_scene(scene, out / "scene.csv")
    save_tree(tree, out / "tree.json")
    print(f"wrote {out / 'scene.csv'} and {out / 'tree.json'}")


def _runs(values) -> list[tuple[object, int, int]]:
    runs = []
    for f, v in enumerate(values, 1):
        if runs and runs[-1][0] == v:
            runs[-1] = (v, runs[-1][1], f)
        else:
            runs.append((v, f, f))
    return runs


def cmd_detect(args) -> None:
    cfg = _config(args)
    scene = load_scene(args.scene)
    det = run_detectors(scene, cfg)
    print("labels")
    for actor in scene.actor_ids:
        runs = " ".join(f"{lab.value}[{s}-{e}]" for lab, s, e in _runs(det.labels[actor]))
        print(f"  actor {actor}: {runs}")
    print("groups")
    for track in sorted(det.tracks, key=lambda t: (t.start, t.id)):
        frames = range(track.start, track.end + 1)
        for members, s, e in _runs([track.members.get(f) for f in frames]):
            if members:
                print(f"  track {track.id}: {{{','.join(map(str, sorted(members)))}}} "
                      f"frames {s + track.start - 1}-{e + track.start - 1}")
    if args.out:
        save_tree(initial_tree(scene, cfg, det), args.out)


def cmd_infer(args) -> None:
    cfg = _config(args)
    for name in ("iterations", "chains", "seed"):
        value = getattr(args, name)
        if value is not None:
            if value < (0 if name == "seed" else 1):
                raise UsageError(f"--{name} must be positive")
            setattr(cfg.sampler, name, value)
    scene, _ = load_scene(args.scene).centered()
    tree, trace = run_sampler(scene, cfg, np.random.default_rng(cfg.sampler.seed))
    save_tree(tree, args.out)
    if args.trace:
        Path(args.trace).write_text(trace.to_csv())
    if args.dot:
        Path(args.dot).write_text(build_constraint_graph(tree, cfg).to_dot())
    print(f"best log posterior {trace.best_log_posterior:.6f} "
          f"(chain {trace.chain}, acceptance {trace.acceptance_rate:.3f}); wrote {args.out}")


def cmd_evaluate(args) -> None:
    report = evaluate(load_tree(args.gt), load_tree(args.pred))
    print(report.to_csv() if args.csv else report.to_text(), end="")


def cmd_render(args) -> None:
    scene = load_scene(args.scene)
    tree = load_tree(args.tree) if args.tree else None
    if tree is not None and (tree.actors != sorted(scene.actor_ids) or tree.horizon != scene.horizon):
        raise UniverseMismatch("tree does not match the scene's actors and horizon")
    save_svg(scene, args.out, tree, args.frames)
    print(f"wrote {args.out}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="grouptree", description="Hierarchical group-activity parsing of trajectories.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic scene and its ground-truth tree")
    g.add_argument("--scenario", required=True, choices=[s.value for s in ScenarioId])
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out-dir", required=True)
    g.add_argument("--actors", type=int, default=5)
    g.add_argument("--horizon", type=int, default=20)
    g.add_argument("--config")
    g.set_defaults(func=cmd_generate)

    d = sub.add_parser("detect", help="run the bottom-up grouping and motion detectors")
    d.add_argument("--scene", required=True)
    d.add_argument("--config")
    d.add_argument("--out", help="also write the detector-built initial tree")
    d.set_defaults(func=cmd_detect)

    i = sub.add_parser("infer", help="search for the most probable activity tree")
    i.add_argument("--scene", required=True)
    i.add_argument("--iterations", type=int)
    i.add_argument("--chains", type=int)
    i.add_argument("--seed", type=int)
    i.add_argument("--config")
    i.add_argument("--out", required=True)
    i.add_argument("--trace")
    i.add_argument("--dot", help="write the inferred tree's constraint graph in Graphviz format")
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("evaluate", help="score a predicted tree against ground truth")
    e.add_argument("--gt", required=True)
    e.add_argument("--pred", required=True)
    e.add_argument("--csv", action="store_true")
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("render", help="draw trajectories (and groups) as SVG")
    r.add_argument("--scene", required=True)
    r.add_argument("--tree")
    r.add_argument("--out", required=True)
    r.add_argument("--frames", type=int, nargs="+", help="frames at which to box groups")
    r.set_defaults(func=cmd_render)
    return p


def _fail(code: int, exc: BaseException) -> int:
    msg = " ".join(str(exc).split()) or type(exc).__name__
    print(f"error: {msg}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        return _fail(EXIT_USAGE, exc)
    except NumericalError as exc:
        return _fail(EXIT_NUMERICAL, exc)
    except (ParseError, TreeValidationError, ConfigError, UniverseMismatch, ValueError, OSError, RuntimeError) as exc:
        return _fail(EXIT_DATA, exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
