"""Closed label sets and their integer index mappings.

Three vocabularies drive the whole system: task types (the robot's skill
inventory), argument types (semantic roles), and grounded object classes
(the object detector's vocabulary).  The BIO tag set used for object
grounding is derived from the object classes and has size
K = 2 * len(object_classes) + 1.

Task and argument vocabularies each carry a reserved end-of-sequence label
(``EOS``) so the decoders can learn to stop; EOS always sits at the last
index of its vocabulary.  Label order comes from configuration and fixes
the index mapping, so checkpoints are only portable together with the
vocabulary they were trained on.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

EOS_LABEL = "EOS"
OUTSIDE_TAG = "O"

DEFAULT_TASK_TYPES = (
    "being_located",
    "being_in_category",
    "bringing",
    "changing_operational_state",
    "checking_state",
    "cutting",
    "following",
    "giving",
    "inspecting",
    "motion",
    "opening",
    "picking",
    "placing",
    "pushing",
    "rotation",
    "searching",
)

DEFAULT_ARGUMENT_TYPES = (
    "agent",
    "area",
    "category",
    "container_portal",
    "containing_object",
    "cotheme",
    "degree",
    "desired_state",
    "device",
    "goal",
    "cogoal",
    "manner",
    "operational_state",
    "recipient",
    "source",
    "cosource",
    "theme",
)

DEFAULT_OBJECT_CLASSES = (
    "APPLE",
    "BED",
    "BOOK",
    "BOTTLE",
    "BOX",
    "CABINET",
    "CHAIR",
    "CUP",
    "DOOR",
    "FLOOR",
    "KITCHEN",
    "LAMP",
    "PEN",
    "PERSON",
    "PLATE",
    "REFRIGERATOR",
    "SHELF",
    "SHIRT",
    "SOFA",
    "STEREO",
    "TABLE",
    "TELEVISION",
    "TRASH_CAN",
    "WINDOW",
)


class VocabularyError(ValueError):
    """Raised for malformed vocabulary configuration or unknown labels."""


def derive_bio_tagset(object_classes: Sequence[str]) -> list[str]:
    """Build the BIO tag list for a set of object classes.

    The result is ["O", "B-c1", "I-c1", "B-c2", "I-c2", ...] in class
    order, so its length is always 2 * len(object_classes) + 1.
    """
    seen = set()
    for cls in object_classes:
        if not cls:
            raise VocabularyError("object class names must be nonempty")
        if cls in seen:
            raise VocabularyError(f"duplicate object class: {cls!r}")
        seen.add(cls)
    tags = [OUTSIDE_TAG]
    for cls in object_classes:
        tags.append(f"B-{cls}")
        tags.append(f"I-{cls}")
    return tags


def _index_map(labels: Sequence[str], kind: str) -> dict[str, int]:
    mapping = {}
    for i, label in enumerate(labels):
        if label in mapping:
            raise VocabularyError(f"duplicate {kind} label: {label!r}")
        mapping[label] = i
    return mapping


@dataclass(frozen=True)
class LabelVocabularies:
    """Immutable bundle of the three label sets plus the derived BIO tags.

    ``task_types`` and ``arg_types`` exclude EOS; use ``task_eos_index`` /
    ``arg_eos_index`` (always the last classifier index) when sizing or
    addressing the type classifiers.
    """

    task_types: tuple[str, ...] = DEFAULT_TASK_TYPES
    arg_types: tuple[str, ...] = DEFAULT_ARGUMENT_TYPES
    object_classes: tuple[str, ...] = DEFAULT_OBJECT_CLASSES
    bio_tags: tuple[str, ...] = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "bio_tags", tuple(derive_bio_tagset(self.object_classes)))
        for labels, kind in ((self.task_types, "task"), (self.arg_types, "argument")):
            if EOS_LABEL in labels:
                raise VocabularyError(f"{EOS_LABEL!r} is reserved and may not appear in the {kind} vocabulary")
        object.__setattr__(self, "_task_idx", _index_map(self.task_types, "task"))
        object.__setattr__(self, "_arg_idx", _index_map(self.arg_types, "argument"))
        object.__setattr__(self, "_object_idx", _index_map(self.object_classes, "object"))
        object.__setattr__(self, "_bio_idx", _index_map(self.bio_tags, "bio"))

    @property
    def num_bio_tags(self) -> int:
        return len(self.bio_tags)

    @property
    def task_eos_index(self) -> int:
        return len(self.task_types)

    @property
    def arg_eos_index(self) -> int:
        return len(self.arg_types)

    @property
    def num_task_labels(self) -> int:
        """Task classifier width, EOS included."""
        return len(self.task_types) + 1

    @property
    def num_arg_labels(self) -> int:
        """Argument classifier width, EOS included."""
        return len(self.arg_types) + 1

    def _table(self, kind: str) -> tuple[dict[str, int], tuple[str, ...], int | None]:
        if kind == "task":
            return self._task_idx, self.task_types, self.task_eos_index
        if kind == "argument":
            return self._arg_idx, self.arg_types, self.arg_eos_index
        if kind == "object":
            return self._object_idx, self.object_classes, None
        if kind == "bio":
            return self._bio_idx, self.bio_tags, None
        raise VocabularyError(f"unknown vocabulary kind: {kind!r}")

    def encode(self, kind: str, label: str) -> int:
        """Map a label to its index; EOS encodes to the reserved last index."""
        mapping, _, eos = self._table(kind)
        if eos is not None and label == EOS_LABEL:
            return eos
        try:
            return mapping[label]
        except KeyError:
            raise VocabularyError(f"unknown label {label!r} in {kind} vocabulary") from None

    def decode(self, kind: str, index: int) -> str:
        mapping, labels, eos = self._table(kind)
        if eos is not None and index == eos:
            return EOS_LABEL
        if 0 <= index < len(labels):
            return labels[index]
        raise VocabularyError(f"index {index} out of range for {kind} vocabulary")

    def bio_tag_for(self, object_class: str, begin: bool) -> str:
        if object_class not in self._object_idx:
            raise VocabularyError(f"unknown label {object_class!r} in object vocabulary")
        return ("B-" if begin else "I-") + object_class

    def as_config_dict(self) -> dict:
        return {
            "task_types": list(self.task_types),
            "argument_types": list(self.arg_types),
            "object_classes": list(self.object_classes),
        }


def load_vocabularies(path: str | Path, objects_path: str | Path | None = None) -> LabelVocabularies:
    """Load vocabularies from JSON config.

    The main document lists ``task_types`` and ``argument_types`` and may
    either embed ``object_classes`` or leave them to a separate object-class
    file (``objects_path``), so the grounding vocabulary can change without
    touching task/argument annotation.
    """
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if objects_path is not None:
        objects_doc = json.loads(Path(objects_path).read_text(encoding="utf-8"))
        object_classes = objects_doc["object_classes"]
    else:
        if "object_classes" not in doc:
            raise VocabularyError(f"{path}: no object_classes and no separate object-class file given")
        object_classes = doc["object_classes"]
    try:
        return LabelVocabularies(
            task_types=tuple(doc["task_types"]),
            arg_types=tuple(doc["argument_types"]),
            object_classes=tuple(object_classes),
        )
    except KeyError as exc:
        raise VocabularyError(f"{path}: missing vocabulary key {exc}") from None


def save_vocabularies(vocab: LabelVocabularies, path: str | Path, objects_path: str | Path | None = None) -> None:
    """Write vocabulary config; with ``objects_path``, object classes go to their own file."""
    doc = vocab.as_config_dict()
    if objects_path is not None:
        objects = {"object_classes": doc.pop("object_classes")}
        Path(objects_path).write_text(json.dumps(objects, indent=2) + "\n", encoding="utf-8")
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
