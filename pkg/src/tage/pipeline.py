"""End-to-end prediction: instruction text to grounded task structures.

The pipeline word-tokenizes the input the same way corpus annotations are
tokenized (so indices are comparable), encodes, grounds every token, runs
the nested greedy decode, and attaches a grounded object class to each
argument whose span overlaps a detected object span.  Arguments that
ground to nothing (manner, degree, ...) carry ``None`` rather than a
sentinel class.  Each task/argument pair flattens into a pentuple:
(task span, grounded task type, relation, argument span, grounded object).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .corpus import AnnotatedInstruction, ArgumentRecord, TaskRecord
from .decoder import DecodeLimits
from .grounding import ObjectSpan, assign_grounding, tags_from_spans
from .model import GroundedInstructionParser

_WORD_RE = re.compile(r"[A-Za-z0-9']+|[^A-Za-z0-9'\s]")


def word_tokenize(text: str) -> list[str]:
    """Whitespace/punctuation word tokenization matching the annotation convention."""
    return _WORD_RE.findall(text)


@dataclass
class PredictedArgument:
    start: int
    end: int
    text: str
    arg_type: str
    object_class: str | None


@dataclass
class PredictedTask:
    start: int
    end: int
    text: str
    task_type: str
    args: list[PredictedArgument] = field(default_factory=list)


@dataclass
class Prediction:
    tokens: list[str]
    tasks: list[PredictedTask]
    bio_tags: list[str]
    object_spans: list[ObjectSpan]


@dataclass
class PredictionFailure:
    """Per-item error marker for batch prediction."""

    error: str


@dataclass
class GroundedPentuple:
    task_text: str
    task_span: tuple[int, int]
    task_type: str
    relation: str
    arg_text: str
    arg_span: tuple[int, int]
    object_class: str | None


def pentuples(prediction: Prediction) -> list[GroundedPentuple]:
    out = []
    for task in prediction.tasks:
        for arg in task.args:
            out.append(
                GroundedPentuple(
                    task.text, (task.start, task.end), task.task_type,
                    arg.arg_type, arg.text, (arg.start, arg.end), arg.object_class,
                )
            )
    return out


def predict_tokens_batch(model: GroundedInstructionParser, batch_tokens: list[list[str]],
                         limits: DecodeLimits | None = None) -> list[Prediction]:
    """Greedy inference over pre-split instructions; one Prediction per input."""
    outputs = model.predict_tokens(batch_tokens, limits)
    vocab = model.vocab
    predictions = []
    for tokens, out in zip(batch_tokens, outputs):
        spans = out.grounding.decoded_spans[0]
        # repaired tags (decoded spans re-emitted) so dumps always re-parse
        tags = tags_from_spans(len(tokens), spans)
        tasks = []
        for d in out.decode.tasks:
            args = [
                PredictedArgument(
                    a.start, a.end, " ".join(tokens[a.start : a.end + 1]),
                    vocab.decode("argument", a.type_index),
                    assign_grounding((a.start, a.end), spans),
                )
                for a in d.args
            ]
            tasks.append(
                PredictedTask(d.start, d.end, " ".join(tokens[d.start : d.end + 1]),
                              vocab.decode("task", d.type_index), args)
            )
        predictions.append(Prediction(list(tokens), tasks, tags, spans))
    return predictions


def predict(text: str, model: GroundedInstructionParser, limits: DecodeLimits | None = None) -> Prediction:
    """Parse one raw instruction string."""
    if not text or not text.strip():
        raise ValueError("empty instruction text")
    return predict_tokens_batch(model, [word_tokenize(text)], limits)[0]


def predict_batch(texts: list[str], model: GroundedInstructionParser,
                  limits: DecodeLimits | None = None) -> list[Prediction | PredictionFailure]:
    """Predict many texts; a failing input yields a PredictionFailure in its slot."""
    results: list[Prediction | PredictionFailure] = []
    for text in texts:
        try:
            results.append(predict(text, model, limits))
        except Exception as exc:
            results.append(PredictionFailure(f"{type(exc).__name__}: {exc}"))
    return results


def predict_annotated(model: GroundedInstructionParser, instructions: list[AnnotatedInstruction],
                      limits: DecodeLimits | None = None) -> list[Prediction]:
    """Predict over already-tokenized corpus instructions (for evaluation)."""
    return predict_tokens_batch(model, [inst.tokens for inst in instructions], limits)


def prediction_to_dict(prediction: Prediction) -> dict:
    """Human-facing JSON: one object per task with its grounded arguments."""
    return {
        "tasks": [
            {
                "task": {"text": t.text, "start": t.start, "end": t.end, "type": t.task_type},
                "args": [
                    {"text": a.text, "start": a.start, "end": a.end, "type": a.arg_type, "object": a.object_class}
                    for a in t.args
                ],
            }
            for t in prediction.tasks
        ]
    }


def prediction_to_instruction(prediction: Prediction) -> AnnotatedInstruction:
    """Corpus-form view of a prediction (tasks sorted into surface order)."""
    tasks = [
        TaskRecord(
            t.start, t.end, t.task_type,
            [ArgumentRecord(a.start, a.end, a.arg_type, a.object_class) for a in t.args],
        )
        for t in sorted(prediction.tasks, key=lambda t: t.start)
    ]
    return AnnotatedInstruction(list(prediction.tokens), tasks, list(prediction.bio_tags))
