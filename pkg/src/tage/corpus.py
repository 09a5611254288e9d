"""Annotated-instruction data model and corpus I/O.

An instruction is annotated with an ordered list of tasks; each task owns a
token span, a grounded task type, and an ordered list of arguments (span +
argument type).  Object grounding is annotated separately as a per-token
BIO tag sequence, so the same span can serve several tasks (and be typed
differently per task) while it grounds to a single object class.

Corpus file format: UTF-8 JSON lines, one instruction per line:

    {"tokens": ["bring", "me", ...],
     "tasks": [{"start": 0, "end": 0, "type": "bringing",
                "args": [{"start": 1, "end": 1, "type": "recipient"}, ...]}],
     "bio": ["O", "O", ...],
     "split": "train"}            # optional

The optional per-argument key ``"object"`` (a grounded class or null) is
accepted and preserved so prediction dumps stay parseable by the same
reader.
"""

from __future__ import annotations

import io
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, TextIO

from .vocabulary import OUTSIDE_TAG, LabelVocabularies

SPLITS = ("train", "dev", "test")


class CorpusFormatError(ValueError):
    """Malformed corpus line; carries the 1-based line number."""

    def __init__(self, message: str, line_number: int | None = None):
        self.line_number = line_number
        prefix = f"line {line_number}: " if line_number is not None else ""
        super().__init__(prefix + message)


@dataclass
class ArgumentRecord:
    start: int
    end: int
    arg_type: str
    object_class: str | None = None  # set on predictions; derived from BIO on gold

    def span(self) -> tuple[int, int]:
        return (self.start, self.end)


@dataclass
class TaskRecord:
    start: int
    end: int
    task_type: str
    args: list[ArgumentRecord] = field(default_factory=list)

    def span(self) -> tuple[int, int]:
        return (self.start, self.end)


@dataclass
class AnnotatedInstruction:
    tokens: list[str]
    tasks: list[TaskRecord]
    bio_tags: list[str]
    split_hint: str | None = None

    def text(self) -> str:
        return " ".join(self.tokens)

    def span_text(self, start: int, end: int) -> str:
        return " ".join(self.tokens[start : end + 1])


@dataclass
class Violation:
    """One broken invariant: which field, at which index, which rule."""

    field: str
    index: int | None
    rule: str
    message: str

    def __str__(self) -> str:
        where = f"{self.field}[{self.index}]" if self.index is not None else self.field
        return f"{where}: {self.rule}: {self.message}"


def _check_span(start, end, n, field_name, index, out: list[Violation]) -> None:
    if not (isinstance(start, int) and isinstance(end, int)):
        out.append(Violation(field_name, index, "span-type", f"start/end must be integers, got ({start!r}, {end!r})"))
        return
    if not (0 <= start <= end < n):
        out.append(Violation(field_name, index, "span-range", f"require 0 <= start <= end < {n}, got ({start}, {end})"))


def validate_instruction(inst: AnnotatedInstruction, vocab: LabelVocabularies | None = None) -> list[Violation]:
    """Check every data-model invariant; returns an empty list iff all hold.

    Label-membership rules are only checked when ``vocab`` is given.
    Violations are data, not exceptions: callers decide what is fatal.
    """
    out: list[Violation] = []
    n = len(inst.tokens)
    if len(inst.bio_tags) != n:
        out.append(Violation("bio_tags", None, "length-mismatch", f"{len(inst.bio_tags)} tags for {n} tokens"))
    if inst.split_hint is not None and inst.split_hint not in SPLITS:
        out.append(Violation("split_hint", None, "enum", f"{inst.split_hint!r} not in {SPLITS}"))

    prev_start = -1
    for j, task in enumerate(inst.tasks):
        _check_span(task.start, task.end, n, "tasks", j, out)
        if isinstance(task.start, int):
            if task.start < prev_start:
                out.append(Violation("tasks", j, "surface-order", f"task at start {task.start} after start {prev_start}"))
            prev_start = max(prev_start, task.start)
        if vocab is not None and task.task_type not in vocab.task_types:
            out.append(Violation("tasks", j, "unknown-task-type", repr(task.task_type)))
        for k, arg in enumerate(task.args):
            _check_span(arg.start, arg.end, n, f"tasks[{j}].args", k, out)
            if vocab is not None and arg.arg_type not in vocab.arg_types:
                out.append(Violation(f"tasks[{j}].args", k, "unknown-arg-type", repr(arg.arg_type)))
            if vocab is not None and arg.object_class is not None and arg.object_class not in vocab.object_classes:
                out.append(Violation(f"tasks[{j}].args", k, "unknown-object-class", repr(arg.object_class)))

    # Well-formed BIO: every I-X is preceded by B-X or I-X of the same class.
    prev_class = None
    for i, tag in enumerate(inst.bio_tags[:n]):
        if tag == OUTSIDE_TAG:
            prev_class = None
            continue
        if len(tag) > 2 and tag[1] == "-" and tag[0] in "BI":
            cls = tag[2:]
            if tag[0] == "I" and prev_class != cls:
                out.append(Violation("bio_tags", i, "bio-wellformed", f"{tag} not preceded by B-{cls}/I-{cls}"))
            prev_class = cls
            if vocab is not None and cls not in vocab.object_classes:
                out.append(Violation("bio_tags", i, "unknown-object-class", repr(cls)))
        else:
            out.append(Violation("bio_tags", i, "bad-tag", repr(tag)))
            prev_class = None
    return out


def instruction_to_dict(inst: AnnotatedInstruction) -> dict:
    doc: dict = {
        "tokens": list(inst.tokens),
        "tasks": [
            {
                "start": t.start,
                "end": t.end,
                "type": t.task_type,
                "args": [
                    {"start": a.start, "end": a.end, "type": a.arg_type}
                    | ({"object": a.object_class} if a.object_class is not None else {})
                    for a in t.args
                ],
            }
            for t in inst.tasks
        ],
        "bio": list(inst.bio_tags),
    }
    if inst.split_hint is not None:
        doc["split"] = inst.split_hint
    return doc


def instruction_from_dict(doc: dict) -> AnnotatedInstruction:
    try:
        tasks = [
            TaskRecord(
                start=t["start"],
                end=t["end"],
                task_type=t["type"],
                args=[
                    ArgumentRecord(start=a["start"], end=a["end"], arg_type=a["type"], object_class=a.get("object"))
                    for a in t.get("args", [])
                ],
            )
            for t in doc["tasks"]
        ]
        return AnnotatedInstruction(
            tokens=list(doc["tokens"]),
            tasks=tasks,
            bio_tags=list(doc["bio"]),
            split_hint=doc.get("split"),
        )
    except (KeyError, TypeError) as exc:
        raise CorpusFormatError(f"missing or malformed field: {exc}") from None


def serialize_instruction(inst: AnnotatedInstruction) -> str:
    return json.dumps(instruction_to_dict(inst), ensure_ascii=False, separators=(",", ":"), sort_keys=True)


def serialize_corpus(corpus: Iterable[AnnotatedInstruction], stream: TextIO | None = None) -> str:
    """Write one JSON line per instruction; returns the full text."""
    buf = io.StringIO()
    for inst in corpus:
        buf.write(serialize_instruction(inst))
        buf.write("\n")
    text = buf.getvalue()
    if stream is not None:
        stream.write(text)
    return text


def parse_corpus(source: TextIO | str | Iterable[str], vocab: LabelVocabularies | None = None) -> list[AnnotatedInstruction]:
    """Parse a JSON-lines corpus in file order.

    Every record is validated; a record that breaks a span/BIO invariant
    raises CorpusFormatError naming the line and the violations.  The parse
    is loss-free: serialize(parse(text)) reproduces the canonical form.
    """
    if isinstance(source, str):
        lines: Iterator[str] = iter(source.splitlines())
    else:
        lines = iter(source)
    corpus = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusFormatError(f"invalid JSON: {exc.msg}", lineno) from None
        try:
            inst = instruction_from_dict(doc)
        except CorpusFormatError as exc:
            raise CorpusFormatError(str(exc), lineno) from None
        violations = validate_instruction(inst, vocab)
        if violations:
            listing = "; ".join(str(v) for v in violations)
            raise CorpusFormatError(f"invalid record: {listing}", lineno)
        corpus.append(inst)
    return corpus


def load_corpus(path: str | Path, vocab: LabelVocabularies | None = None) -> list[AnnotatedInstruction]:
    with open(path, encoding="utf-8") as fh:
        return parse_corpus(fh, vocab)


def save_corpus(corpus: Iterable[AnnotatedInstruction], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        serialize_corpus(corpus, fh)


@dataclass
class CorpusStats:
    """Instruction and task-type counts, broken down by split."""

    instructions: dict[str, int]
    single_task: dict[str, int]
    multi_task: dict[str, int]
    task_type_counts: dict[str, Counter]

    def splits(self) -> list[str]:
        return sorted(self.instructions, key=lambda s: (SPLITS.index(s) if s in SPLITS else len(SPLITS), s))

    def as_json_dict(self) -> dict:
        return {
            "instructions": dict(self.instructions),
            "single_task": dict(self.single_task),
            "multi_task": dict(self.multi_task),
            "task_types": {split: dict(sorted(c.items())) for split, c in self.task_type_counts.items()},
        }

    def as_text(self) -> str:
        splits = self.splits()
        lines = []
        header = f"{'':28s}" + "".join(f"{s:>8s}" for s in splits)
        lines.append(header)
        for name, table in (
            ("#instructions", self.instructions),
            ("#single-task", self.single_task),
            ("#multi-task", self.multi_task),
        ):
            lines.append(f"{name:28s}" + "".join(f"{table.get(s, 0):8d}" for s in splits))
        lines.append("")
        lines.append(f"{'task type':28s}" + "".join(f"{s:>8s}" for s in splits))
        all_types = sorted({t for c in self.task_type_counts.values() for t in c})
        for t in all_types:
            lines.append(f"{t:28s}" + "".join(f"{self.task_type_counts[s].get(t, 0):8d}" for s in splits))
        totals = {s: sum(self.task_type_counts[s].values()) for s in splits}
        lines.append(f"{'#total tasks':28s}" + "".join(f"{totals[s]:8d}" for s in splits))
        return "\n".join(lines)


def corpus_stats(corpus: Iterable[AnnotatedInstruction]) -> CorpusStats:
    """Tally instructions (total / single-task / multi-task) and task types per split."""
    instructions: Counter = Counter()
    single: Counter = Counter()
    multi: Counter = Counter()
    per_type: dict[str, Counter] = {}
    for inst in corpus:
        split = inst.split_hint or "unsplit"
        instructions[split] += 1
        if len(inst.tasks) <= 1:
            single[split] += 1
        else:
            multi[split] += 1
        bucket = per_type.setdefault(split, Counter())
        for task in inst.tasks:
            bucket[task.task_type] += 1
    return CorpusStats(dict(instructions), dict(single), dict(multi), per_type)
