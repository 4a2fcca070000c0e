"""Scene CSV and activity-tree JSON files."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .model import (
    ActivityTree,
    RoleLabel,
    Scene,
    node_from_dict,
    tree_from_dict,
    tree_to_dict,
    validate_tree,
)

SCENE_HEADER = ["frame", "actor", "x", "y"]


class ParseError(ValueError):
    """A file could not be read; `line` is 1-based when known."""

    def __init__(self, message: str, path=None, line: int | None = None):
        self.path, self.line = path, line
        where = f"{path}" if path is not None else "input"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}")


class TreeValidationError(ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


def scene_to_csv(scene: Scene) -> str:
    lines = [",".join(SCENE_HEADER)]
    for f in range(scene.horizon):
        for j, actor in enumerate(scene.actor_ids):
            x, y = scene.positions[j, f]
            lines.append(f"{f + 1},{actor},{float(x)!r},{float(y)!r}")
    return "\n".join(lines) + "\n"


def scene_from_csv(text: str, path=None) -> Scene:
    rows = csv.reader(text.splitlines())
    header = next(rows, None)
    if header is None or [h.strip() for h in header] != SCENE_HEADER:
        raise ParseError(f"expected header {','.join(SCENE_HEADER)}", path, 1)
    points: dict[int, dict[int, tuple[float, float, int]]] = {}
    for lineno, row in enumerate(rows, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 4:
            raise ParseError(f"expected 4 fields, got {len(row)}", path, lineno)
        try:
            frame, actor = int(row[0]), int(row[1])
            x, y = float(row[2]), float(row[3])
        except ValueError as exc:
            raise ParseError(f"malformed row: {exc}", path, lineno) from None
        if not (math.isfinite(x) and math.isfinite(y)):
            raise ParseError("coordinates must be finite", path, lineno)
        track = points.setdefault(actor, {})
        if frame in track:
            raise ParseError(f"duplicate row for actor {actor}, frame {frame} "
                             f"(first on line {track[frame][2]})", path, lineno)
        track[frame] = (x, y, lineno)
    if not points:
        raise ParseError("no data rows", path)

    frames = sorted({f for track in points.values() for f in track})
    first, last = frames[0], frames[-1]
    if first != 1:
        raise ParseError(f"frames must start at 1, found {first}", path)
    actors = sorted(points)
    positions = np.empty((len(actors), last, 2))
    for j, actor in enumerate(actors):
        track = points[actor]
        for f in range(1, last + 1):
            if f not in track:
                after = track[max(g for g in track if g < f)][2] if f > 1 else None
                raise ParseError(f"actor {actor} is missing frame {f}", path, after)
            positions[j, f - 1] = track[f][:2]
    return Scene(tuple(actors), positions)


def save_scene(scene: Scene, path) -> None:
    Path(path).write_text(scene_to_csv(scene))


def load_scene(path) -> Scene:
    return scene_from_csv(Path(path).read_text(), path)


def tree_to_json(tree: ActivityTree) -> str:
    return json.dumps(tree_to_dict(tree), sort_keys=True, indent=2) + "\n"


def tree_from_json(text: str, path=None) -> ActivityTree:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", path, exc.lineno) from None
    if not isinstance(data, dict) or "root" not in data:
        raise ParseError("tree schema violation: expected an object with a root node", path)
    _check_schema(data["root"], path)
    try:
        tree = tree_from_dict(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"tree schema violation: {_describe(exc)}", path) from None
    problems = validate_tree(tree)
    if problems:
        raise TreeValidationError(problems)
    return tree


def _check_schema(node, path) -> None:
    """Walk the raw JSON so a bad node is reported by its id."""
    if not isinstance(node, dict):
        raise ParseError("tree schema violation: node is not an object", path)
    nid = node.get("id", "?")
    try:
        node_from_dict({**node, "children": []})
        for c in node.get("children", []):
            RoleLabel(c["role"])
            [int(m) for m in c["members"]]
            for s in c["segments"]:
                _check_schema(s, path)
    except ParseError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"tree schema violation at node {nid}: {_describe(exc)}", path) from None


def _describe(exc: Exception) -> str:
    if isinstance(exc, KeyError):
        return f"missing field {exc.args[0]!r}"
    return str(exc)


def save_tree(tree: ActivityTree, path) -> None:
    Path(path).write_text(tree_to_json(tree))


def load_tree(path) -> ActivityTree:
    return tree_from_json(Path(path).read_text(), path)
