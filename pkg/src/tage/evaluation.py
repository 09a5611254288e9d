"""Strict-F1 scoring with confusion-matrix bookkeeping.

A predicted unit counts as correct only on an exact span *and* type match;
the with-grounding variant additionally requires the grounded object class
to match.  Tasks align by (span, type) in order; an argument can only
match inside its matched task, so arguments under unmatched tasks score as
misses (gold side) or spurious predictions.  Task units and argument units
pool into the combined (micro-averaged) score.  Every hit and miss lands
in a type-level confusion matrix whose ``None`` row/column records units
with no span-aligned counterpart.

Gold object classes are derived from the gold BIO annotation (decode the
tags, then assign each argument span the maximally overlapping object
span's class), mirroring how predictions acquire theirs.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

from .corpus import AnnotatedInstruction
from .grounding import assign_grounding, decode_bio_tags
from .pipeline import Prediction

NONE_LABEL = "None"

Span = tuple[int, int]


@dataclass(frozen=True)
class ArgUnit:
    span: Span
    arg_type: str
    object_class: str | None


@dataclass(frozen=True)
class TaskUnit:
    span: Span
    task_type: str
    args: tuple[ArgUnit, ...]


def f1_score(precision: float, recall: float) -> float:
    return 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0


@dataclass
class PRF:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int) -> "PRF":
        p = tp / (tp + fp) if tp + fp > 0 else 0.0
        r = tp / (tp + fn) if tp + fn > 0 else 0.0
        return cls(p, r, f1_score(p, r))

    def as_dict(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1}


class ConfusionMatrix:
    """Gold-type x predicted-type counts; NONE_LABEL records unpaired units."""

    def __init__(self):
        self.cells: Counter = Counter()

    def add(self, gold_type: str | None, pred_type: str | None, count: int = 1) -> None:
        self.cells[(gold_type or NONE_LABEL, pred_type or NONE_LABEL)] += count

    def types(self) -> list[str]:
        names = {g for g, _ in self.cells} | {p for _, p in self.cells}
        names.discard(NONE_LABEL)
        return sorted(names)

    def row_sum(self, gold_type: str) -> int:
        return sum(v for (g, _), v in self.cells.items() if g == gold_type)

    def col_sum(self, pred_type: str) -> int:
        return sum(v for (_, p), v in self.cells.items() if p == pred_type)

    def diagonal(self) -> int:
        return sum(v for (g, p), v in self.cells.items() if g == p and g != NONE_LABEL)

    def total_gold(self) -> int:
        return sum(v for (g, _), v in self.cells.items() if g != NONE_LABEL)

    def total_pred(self) -> int:
        return sum(v for (_, p), v in self.cells.items() if p != NONE_LABEL)

    def per_type(self) -> dict[str, PRF]:
        out = {}
        for t in self.types():
            tp = self.cells.get((t, t), 0)
            out[t] = PRF.from_counts(tp, self.col_sum(t) - tp, self.row_sum(t) - tp)
        return out

    def overall(self) -> PRF:
        tp = self.diagonal()
        return PRF.from_counts(tp, self.total_pred() - tp, self.total_gold() - tp)

    def as_dict(self) -> dict:
        return {f"{g}->{p}": v for (g, p), v in sorted(self.cells.items())}


@dataclass
class Tally:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def prf(self) -> PRF:
        return PRF.from_counts(self.tp, self.fp, self.fn)

    def absorb(self, other: "Tally") -> None:
        self.tp += other.tp
        self.fp += other.fp
        self.fn += other.fn


@dataclass
class EvalReport:
    without_grounding: PRF
    with_grounding: PRF
    task_level: PRF
    arg_level: PRF
    per_task_type: dict[str, PRF]
    per_arg_type: dict[str, PRF]
    task_confusion: ConfusionMatrix
    arg_confusion: ConfusionMatrix
    counts: dict[str, dict[str, int]] = field(default_factory=dict)

    def as_json_dict(self) -> dict:
        return {
            "without_grounding": self.without_grounding.as_dict(),
            "with_grounding": self.with_grounding.as_dict(),
            "task_level": self.task_level.as_dict(),
            "arg_level": self.arg_level.as_dict(),
            "per_task_type": {k: v.as_dict() for k, v in self.per_task_type.items()},
            "per_arg_type": {k: v.as_dict() for k, v in self.per_arg_type.items()},
            "task_confusion": self.task_confusion.as_dict(),
            "arg_confusion": self.arg_confusion.as_dict(),
            "counts": self.counts,
        }

    def as_text(self) -> str:
        lines = [
            f"{'':32s}{'Prec.':>8s}{'Rec.':>8s}{'F1':>8s}",
            _prf_row("combined (no grounding)", self.without_grounding),
            _prf_row("combined (with grounding)", self.with_grounding),
            _prf_row("tasks", self.task_level),
            _prf_row("arguments", self.arg_level),
            "",
            "task types:",
        ]
        lines += [_prf_row("  " + t, prf) for t, prf in sorted(self.per_task_type.items())]
        lines.append("argument types:")
        lines += [_prf_row("  " + t, prf) for t, prf in sorted(self.per_arg_type.items())]
        return "\n".join(lines)


def _prf_row(name: str, prf: PRF) -> str:
    return f"{name:32s}{prf.precision:8.2f}{prf.recall:8.2f}{prf.f1:8.2f}"


def _units_from_gold(inst: AnnotatedInstruction) -> list[TaskUnit]:
    object_spans = decode_bio_tags(inst.bio_tags)
    units = []
    for task in inst.tasks:
        args = tuple(
            ArgUnit((a.start, a.end), a.arg_type, assign_grounding((a.start, a.end), object_spans))
            for a in task.args
        )
        units.append(TaskUnit((task.start, task.end), task.task_type, args))
    return units


def _units_from_prediction(pred: Prediction) -> list[TaskUnit]:
    return [
        TaskUnit(
            (t.start, t.end), t.task_type,
            tuple(ArgUnit((a.start, a.end), a.arg_type, a.object_class) for a in t.args),
        )
        for t in pred.tasks
    ]


def extract_units(obj: Prediction | AnnotatedInstruction) -> list[TaskUnit]:
    if isinstance(obj, Prediction):
        return _units_from_prediction(obj)
    return _units_from_gold(obj)


def _dedup(args: tuple[ArgUnit, ...]) -> list[ArgUnit]:
    # duplicate (span, type) predictions within one task collapse to the first
    seen = set()
    out = []
    for a in args:
        key = (a.span, a.arg_type)
        if key not in seen:
            seen.add(key)
            out.append(a)
    return out


def _greedy_pair(golds: list, preds: list, key) -> tuple[list[tuple], list, list]:
    """Order-preserving multiset matching on key(x); returns (pairs, rest_gold, rest_pred)."""
    pairs = []
    used = [False] * len(preds)
    rest_gold = []
    for g in golds:
        for i, p in enumerate(preds):
            if not used[i] and key(p) == key(g):
                used[i] = True
                pairs.append((g, p))
                break
        else:
            rest_gold.append(g)
    rest_pred = [p for i, p in enumerate(preds) if not used[i]]
    return pairs, rest_gold, rest_pred


def _confusion_update(matrix: ConfusionMatrix, golds: list, preds: list, exact_key, type_of, span_of) -> None:
    exact, rest_gold, rest_pred = _greedy_pair(golds, preds, exact_key)
    for g, _ in exact:
        matrix.add(type_of(g), type_of(g))
    span_pairs, rest_gold, rest_pred = _greedy_pair(rest_gold, rest_pred, span_of)
    for g, p in span_pairs:
        matrix.add(type_of(g), type_of(p))
    for g in rest_gold:
        matrix.add(type_of(g), None)
    for p in rest_pred:
        matrix.add(None, type_of(p))


def _score_args(gold_args: list[ArgUnit], pred_args: list[ArgUnit]) -> tuple[Tally, Tally]:
    without = Tally()
    withg = Tally()
    for variant, tally in (("without", without), ("with", withg)):
        if variant == "without":
            key = lambda a: (a.span, a.arg_type)
        else:
            key = lambda a: (a.span, a.arg_type, a.object_class)
        pairs, rest_gold, rest_pred = _greedy_pair(gold_args, pred_args, key)
        tally.tp = len(pairs)
        tally.fn = len(rest_gold)
        tally.fp = len(rest_pred)
    return without, withg


def score(predictions: list, golds: list[AnnotatedInstruction]) -> EvalReport:
    """Score aligned prediction/gold lists over the same instructions."""
    if len(predictions) != len(golds):
        raise ValueError(f"{len(predictions)} predictions vs {len(golds)} golds")

    task_tally = Tally()
    arg_without = Tally()
    arg_with = Tally()
    task_confusion = ConfusionMatrix()
    arg_confusion = ConfusionMatrix()

    for pred_obj, gold_obj in zip(predictions, golds):
        pred_tasks = extract_units(pred_obj)
        gold_tasks = extract_units(gold_obj)

        task_key = lambda t: (t.span, t.task_type)
        pairs, rest_gold, rest_pred = _greedy_pair(gold_tasks, pred_tasks, task_key)
        task_tally.tp += len(pairs)
        task_tally.fn += len(rest_gold)
        task_tally.fp += len(rest_pred)
        _confusion_update(
            task_confusion, gold_tasks, pred_tasks,
            exact_key=task_key, type_of=lambda t: t.task_type, span_of=lambda t: t.span,
        )

        for g_task, p_task in pairs:
            gold_args = list(g_task.args)
            pred_args = _dedup(p_task.args)
            w, wg = _score_args(gold_args, pred_args)
            arg_without.absorb(w)
            arg_with.absorb(wg)
            _confusion_update(
                arg_confusion, gold_args, pred_args,
                exact_key=lambda a: (a.span, a.arg_type), type_of=lambda a: a.arg_type, span_of=lambda a: a.span,
            )
        for g_task in rest_gold:
            for a in g_task.args:
                arg_without.fn += 1
                arg_with.fn += 1
                arg_confusion.add(a.arg_type, None)
        for p_task in rest_pred:
            for a in _dedup(p_task.args):
                arg_without.fp += 1
                arg_with.fp += 1
                arg_confusion.add(None, a.arg_type)

    combined_without = Tally(task_tally.tp + arg_without.tp, task_tally.fp + arg_without.fp, task_tally.fn + arg_without.fn)
    combined_with = Tally(task_tally.tp + arg_with.tp, task_tally.fp + arg_with.fp, task_tally.fn + arg_with.fn)
    return EvalReport(
        without_grounding=combined_without.prf(),
        with_grounding=combined_with.prf(),
        task_level=task_tally.prf(),
        arg_level=arg_without.prf(),
        per_task_type=task_confusion.per_type(),
        per_arg_type=arg_confusion.per_type(),
        task_confusion=task_confusion,
        arg_confusion=arg_confusion,
        counts={
            "tasks": vars(task_tally).copy(),
            "args_without_grounding": vars(arg_without).copy(),
            "args_with_grounding": vars(arg_with).copy(),
        },
    )


def per_type_report(predictions: list, golds: list[AnnotatedInstruction]) -> tuple[dict[str, PRF], dict[str, PRF]]:
    """Per-task-type and per-argument-type P/R/F1 tables."""
    report = score(predictions, golds)
    return report.per_task_type, report.per_arg_type
