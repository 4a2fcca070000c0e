"""Activity-labeling and grouping scores of an inferred tree against ground truth.

Every score is built from per-(actor, frame) set comparisons. For actor j at
frame f, the inferred tree gives a set S of individuals and the reference
gives S'; then TP += |S & S'|, FP += |S - S'|, FN += |S' - S| and
TN += |U - (S | S')| where U is the set of all actors.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

from .model import ActivityLabel, ActivityTree, walk

A = ActivityLabel
TABLE_ACTIVITIES = (A.STAND, A.WALK, A.MOVE_TO, A.MEET, A.FFA)


class UniverseMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Scores:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0


@dataclass
class LabelMatrix:
    """Per-(actor, frame) activity sets plus the two grouping levels."""

    actors: list[int]
    horizon: int
    labels: dict = field(default_factory=dict)     # (actor, frame) -> frozenset of labels
    phys: dict = field(default_factory=dict)       # (actor, frame) -> leaf members
    top: dict = field(default_factory=dict)        # (actor, frame) -> child-of-root members

    def performers(self, label: ActivityLabel, frame: int) -> frozenset:
        return frozenset(a for a in self.actors if label in self.labels[a, frame])


def label_matrix(tree: ActivityTree) -> LabelMatrix:
    lm = LabelMatrix(tree.actors, tree.horizon)
    acc: dict = {}
    for path, node in walk(tree.root):
        for a in node.participants:
            for f in range(node.start, node.end + 1):
                acc.setdefault((a, f), set()).add(node.label)
                if node.is_physical:
                    lm.phys[a, f] = node.participants
                if len(path) == 1:
                    lm.top[a, f] = node.participants
    lm.labels = {k: frozenset(v) for k, v in acc.items()}
    return lm


def _compare(universe: frozenset, pairs) -> Scores:
    tp = fp = fn = tn = 0
    for got, want in pairs:
        tp += len(got & want)
        fp += len(got - want)
        fn += len(want - got)
        tn += len(universe - (got | want))
    return Scores(tp, fp, fn, tn)


def _check(gt: ActivityTree, inferred: ActivityTree) -> None:
    if gt.actors != inferred.actors or gt.horizon != inferred.horizon:
        raise UniverseMismatch("trees must share actors and horizon")


def present_activities(*trees: ActivityTree) -> set[ActivityLabel]:
    return {n.label for t in trees for n in t.nodes()}


def activity_scores(gt: ActivityTree, inferred: ActivityTree, label: ActivityLabel) -> Scores:
    """Counts for one activity over every (actor, frame) where either tree has the actor performing it."""
    _check(gt, inferred)
    want_lm, got_lm = label_matrix(gt), label_matrix(inferred)
    universe = frozenset(gt.actors)
    pairs = []
    for f in range(1, gt.horizon + 1):
        got_set, want_set = got_lm.performers(label, f), want_lm.performers(label, f)
        for a in gt.actors:
            got = got_set if a in got_set else frozenset()
            want = want_set if a in want_set else frozenset()
            if got or want:
                pairs.append((got, want))
    return _compare(universe, pairs)


def activity_labeling_scores(gt: ActivityTree, inferred: ActivityTree) -> dict[ActivityLabel, Scores | None]:
    """Scores for the table activities (plus RUN when either tree uses it); None marks an absent activity."""
    present = present_activities(gt, inferred)
    rows = list(TABLE_ACTIVITIES) + ([A.RUN] if A.RUN in present else [])
    return {a: activity_scores(gt, inferred, a) if a in present else None for a in rows}


def grouping_scores(gt: ActivityTree, inferred: ActivityTree) -> dict[str, Scores]:
    _check(gt, inferred)
    want_lm, got_lm = label_matrix(gt), label_matrix(inferred)
    universe = frozenset(gt.actors)
    cells = [(a, f) for a in gt.actors for f in range(1, gt.horizon + 1)]
    return {
        "PHYS": _compare(universe, ((got_lm.phys[c], want_lm.phys[c]) for c in cells)),
        "INT": _compare(universe, ((got_lm.top[c], want_lm.top[c]) for c in cells)),
    }


@dataclass
class MetricsReport:
    activities: dict
    grouping: dict

    def rows(self) -> list[tuple[str, str, Scores | None]]:
        out = [("activity", a.value, s) for a, s in self.activities.items()]
        out += [("grouping", level, s) for level, s in self.grouping.items()]
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["table", "row", "precision", "recall", "f1", "tp", "fp", "fn", "tn"])
        for table, name, s in self.rows():
            if s is None:
                w.writerow([table, name, "", "", "", "", "", "", ""])
            else:
                w.writerow([table, name, f"{s.precision:.4f}", f"{s.recall:.4f}", f"{s.f1:.4f}", s.tp, s.fp, s.fn, s.tn])
        return buf.getvalue()

    def to_text(self) -> str:
        def fmt(s, attr):
            return "   x" if s is None else f"{getattr(s, attr):.2f}"

        lines = []
        for table in ("activity", "grouping"):
            lines.append(f"{table:<10} {'P':>5} {'R':>5} {'F1':>5}")
            for t, name, s in self.rows():
                if t == table:
                    lines.append(f"{name:<10} {fmt(s, 'precision'):>5} {fmt(s, 'recall'):>5} {fmt(s, 'f1'):>5}")
            lines.append("")
        return "\n".join(lines)


def evaluate(gt: ActivityTree, inferred: ActivityTree) -> MetricsReport:
    return MetricsReport(activity_labeling_scores(gt, inferred), grouping_scores(gt, inferred))
