"""Synthetic annotated-instruction generator.

Instructions are compositions of 1-4 single-task templates (one per task
type in the inventory, plus a containment variant of placing) joined by
connectives, with gold spans, types, and BIO grounding derived from the
template slots.  Multi-task outputs include shared-argument compositions:
a span introduced by one task reused as an argument of a later task
(pronoun coreference resolved to the original span), and a task trigger
shared by two tasks.

Generation is deterministic under a fixed seed.  With ``rng=None`` a
template instantiates with its first (canonical) fillers, which reproduce
the inventory's example sentences, e.g. bringing -> "bring me a cup from
the table".
"""

from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass, field

from .corpus import AnnotatedInstruction, ArgumentRecord, TaskRecord
from .vocabulary import OUTSIDE_TAG

Span = tuple[int, int]


@dataclass(frozen=True)
class Filler:
    tokens: tuple[str, ...]
    object_class: str | None = None


def _lex(*entries: tuple) -> tuple[Filler, ...]:
    out = []
    for entry in entries:
        if isinstance(entry, str):
            out.append(Filler((entry,)))
        elif len(entry) == 2 and isinstance(entry[1], (str, type(None))) and not isinstance(entry[0], str):
            out.append(Filler(tuple(entry[0]), entry[1]))
        else:
            out.append(Filler(tuple(entry)))
    return tuple(out)


# Slot lexicons.  The first entry of each is the canonical filler.  A given
# surface form must map to one object class everywhere (the grounding head
# sees a single labeling per token), which a test enforces.
RECIPIENTS = _lex("me", "him", "her", "us")
AGENTS = _lex("robot", "you")
LOCATED_THEMES = _lex((("cup",), "CUP"), (("red", "cup"), "CUP"), (("book",), "BOOK"), (("plate",), "PLATE"))
LOCATED_SOURCES = _lex((("table",), "TABLE"), (("shelf",), "SHELF"), (("dining", "table"), "TABLE"), (("sofa",), "SOFA"))
ROOM_THEMES = _lex(("living", "room"), ("bedroom",), ("reading", "corner"))
CATEGORY_PHRASES = _lex(("with", "green", "curtains"), ("with", "wooden", "walls"), ("for", "guests"))
BRING_THEMES = _lex((("cup",), "CUP"), (("bottle",), "BOTTLE"), (("plate",), "PLATE"), (("book",), "BOOK"))
BRING_SOURCES = _lex((("table",), "TABLE"), (("shelf",), "SHELF"), (("kitchen",), "KITCHEN"), (("bedside", "table"), "TABLE"))
OP_STATES = _lex("on", "off")
DEVICES = _lex((("television",), "TELEVISION"), (("stereo",), "STEREO"), (("lamp",), "LAMP"))
CHECK_THEMES = _lex((("stereo",), "STEREO"), (("television",), "TELEVISION"), (("lamp",), "LAMP"))
DESIRED_STATES = _lex("on", "off", "clean")
CUT_THEMES = _lex((("apple",), "APPLE"), ("bread",), ("cake",))
CUT_SOURCES = _lex((("dining", "table"), "TABLE"), (("table",), "TABLE"), (("plate",), "PLATE"))
COTHEMES = _lex((("person",), "PERSON"), (("man",), "PERSON"), (("woman",), "PERSON"))
FOLLOW_GOALS = _lex((("kitchen",), "KITCHEN"), (("door",), "DOOR"), (("window",), "WINDOW"))
GIVE_THEMES = _lex((("plate",), "PLATE"), (("cup",), "CUP"), (("pen",), "PEN"))
LOOK_MANNERS = _lex("down", "up", "around")
LOOK_SOURCES = _lex((("floor",), "FLOOR"), (("table",), "TABLE"), (("shelf",), "SHELF"))
MOTION_GOALS = _lex((("window",), "WINDOW"), (("kitchen",), "KITCHEN"), (("sofa",), "SOFA"), (("door",), "DOOR"))
PORTALS = _lex((("cabinet",), "CABINET"), (("door",), "DOOR"), (("fridge",), "REFRIGERATOR"), (("window",), "WINDOW"))
PICK_THEMES = _lex((("bottle",), "BOTTLE"), (("cup",), "CUP"), (("book",), "BOOK"), (("pen",), "PEN"), (("apple",), "APPLE"))
PICK_SOURCES = _lex((("bedside", "table"), "TABLE"), (("table",), "TABLE"), (("shelf",), "SHELF"), (("floor",), "FLOOR"), (("sofa",), "SOFA"))
PLACE_GOALS = _lex((("trash",), "TRASH_CAN"), (("table",), "TABLE"), (("shelf",), "SHELF"), (("bed",), "BED"))
CONTAINERS = _lex((("fridge",), "REFRIGERATOR"), (("cabinet",), "CABINET"), (("box",), "BOX"), (("refrigerator",), "REFRIGERATOR"))
PUSH_THEMES = _lex((("box",), "BOX"), (("chair",), "CHAIR"), (("sofa",), "SOFA"))
PUSH_SOURCES = _lex((("table",), "TABLE"), (("floor",), "FLOOR"))
ROT_MANNERS = _lex(("your", "left"), ("your", "right"), ("around",))
SEARCH_THEMES = _lex((("red", "shirt"), "SHIRT"), (("cup",), "CUP"), (("book",), "BOOK"), (("bottle",), "BOTTLE"))

CONNECTIVES = (("and",), ("then",), ("and", "then"))

_SKELETON_WORDS = (
    "the is on this a with if please check cut follow to can you pass look go near open take from "
    "put in turn find bring me it pick up push and then"
).split()


@dataclass
class _TaskDraft:
    task_type: str
    span: Span | None = None
    args: list[tuple[str, Span]] = field(default_factory=list)


class _Chunk:
    """Token accumulator for one instruction fragment, with task/arg bookkeeping."""

    def __init__(self):
        self.tokens: list[str] = []
        self.tasks: list[_TaskDraft] = []
        self.grounded: list[tuple[Span, str]] = []

    def word(self, *toks: str) -> Span:
        start = len(self.tokens)
        self.tokens.extend(toks)
        return (start, len(self.tokens) - 1)

    def task(self, task_type: str) -> int:
        self.tasks.append(_TaskDraft(task_type))
        return len(self.tasks) - 1

    def trigger(self, task_idx: int, *toks: str) -> Span:
        span = self.word(*toks)
        self.tasks[task_idx].span = span
        return span

    def trigger_ref(self, task_idx: int, span: Span) -> None:
        self.tasks[task_idx].span = span

    def slot(self, filler: Filler) -> Span:
        span = self.word(*filler.tokens)
        if filler.object_class is not None:
            self.grounded.append((span, filler.object_class))
        return span

    def arg(self, task_idx: int, arg_type: str, span: Span) -> None:
        self.tasks[task_idx].args.append((arg_type, span))


def _pick(rng: random.Random | None, lexicon: tuple[Filler, ...]) -> Filler:
    return lexicon[0] if rng is None else rng.choice(lexicon)


def _being_located(b, rng):
    t = b.task("being_located")
    b.word("the")
    theme = b.slot(_pick(rng, LOCATED_THEMES))
    b.trigger(t, "is")
    b.word("on", "the")
    source = b.slot(_pick(rng, LOCATED_SOURCES))
    b.arg(t, "theme", theme)
    b.arg(t, "source", source)


def _being_in_category(b, rng):
    t = b.task("being_in_category")
    b.word("this")
    b.trigger(t, "is")
    b.word("a")
    theme = b.slot(_pick(rng, ROOM_THEMES))
    category = b.slot(_pick(rng, CATEGORY_PHRASES))
    b.arg(t, "theme", theme)
    b.arg(t, "category", category)


def _bringing(b, rng):
    t = b.task("bringing")
    b.trigger(t, "bring")
    b.arg(t, "recipient", b.slot(_pick(rng, RECIPIENTS)))
    b.word("a")
    b.arg(t, "theme", b.slot(_pick(rng, BRING_THEMES)))
    b.word("from", "the")
    b.arg(t, "source", b.slot(_pick(rng, BRING_SOURCES)))


def _changing_operational_state(b, rng):
    t = b.task("changing_operational_state")
    b.trigger(t, "turn")
    b.arg(t, "operational_state", b.slot(_pick(rng, OP_STATES)))
    b.word("the")
    b.arg(t, "device", b.slot(_pick(rng, DEVICES)))


def _checking_state(b, rng):
    t = b.task("checking_state")
    b.word("please")
    b.trigger(t, "check")
    b.word("if", "the")
    b.arg(t, "theme", b.slot(_pick(rng, CHECK_THEMES)))
    b.word("is")
    b.arg(t, "desired_state", b.slot(_pick(rng, DESIRED_STATES)))


def _cutting(b, rng):
    t = b.task("cutting")
    b.trigger(t, "cut")
    b.word("the")
    b.arg(t, "theme", b.slot(_pick(rng, CUT_THEMES)))
    b.word("on", "the")
    b.arg(t, "source", b.slot(_pick(rng, CUT_SOURCES)))


def _following(b, rng):
    t = b.task("following")
    b.trigger(t, "follow")
    b.word("the")
    b.arg(t, "cotheme", b.slot(_pick(rng, COTHEMES)))
    b.word("to", "the")
    b.arg(t, "goal", b.slot(_pick(rng, FOLLOW_GOALS)))


def _giving(b, rng):
    t = b.task("giving")
    b.arg(t, "agent", b.slot(Filler(("robot",))))
    b.word("can", "you")
    b.trigger(t, "pass")
    b.arg(t, "recipient", b.slot(_pick(rng, RECIPIENTS)))
    b.word("a")
    b.arg(t, "theme", b.slot(_pick(rng, GIVE_THEMES)))


def _inspecting(b, rng):
    t = b.task("inspecting")
    b.trigger(t, "look")
    b.arg(t, "manner", b.slot(_pick(rng, LOOK_MANNERS)))
    b.word("on", "the")
    b.arg(t, "source", b.slot(_pick(rng, LOOK_SOURCES)))


def _motion(b, rng):
    t = b.task("motion")
    b.trigger(t, "go")
    b.word("near", "the")
    b.arg(t, "goal", b.slot(_pick(rng, MOTION_GOALS)))


def _opening(b, rng):
    t = b.task("opening")
    b.trigger(t, "open")
    b.word("the")
    b.arg(t, "container_portal", b.slot(_pick(rng, PORTALS)))


def _picking(b, rng):
    t = b.task("picking")
    b.trigger(t, "take")
    b.word("the")
    b.arg(t, "theme", b.slot(_pick(rng, PICK_THEMES)))
    b.word("from", "the")
    b.arg(t, "source", b.slot(_pick(rng, PICK_SOURCES)))


def _placing(b, rng):
    t = b.task("placing")
    b.trigger(t, "put")
    b.word("the")
    b.arg(t, "theme", b.slot(_pick(rng, PICK_THEMES)))
    b.word("on", "the")
    b.arg(t, "goal", b.slot(_pick(rng, PLACE_GOALS)))


def _placing_in(b, rng):
    # Containment: the container span is classified twice, as goal and as
    # containing_object, within the same task.
    t = b.task("placing")
    b.trigger(t, "put")
    b.word("the")
    b.arg(t, "theme", b.slot(_pick(rng, BRING_THEMES)))
    b.word("in", "the")
    container = b.slot(_pick(rng, CONTAINERS))
    b.arg(t, "goal", container)
    b.arg(t, "containing_object", container)


def _pushing(b, rng):
    t = b.task("pushing")
    b.word("can")
    b.arg(t, "agent", b.word("you"))
    b.trigger(t, "push")
    b.word("the")
    b.arg(t, "theme", b.slot(_pick(rng, PUSH_THEMES)))
    b.word("on", "the")
    b.arg(t, "source", b.slot(_pick(rng, PUSH_SOURCES)))


def _rotation(b, rng):
    t = b.task("rotation")
    b.arg(t, "agent", b.slot(_pick(rng, AGENTS)))
    b.trigger(t, "turn")
    b.word("to")
    b.arg(t, "manner", b.slot(_pick(rng, ROT_MANNERS)))


def _searching(b, rng):
    t = b.task("searching")
    b.trigger(t, "find")
    b.arg(t, "recipient", b.slot(_pick(rng, RECIPIENTS)))
    b.word("the")
    b.arg(t, "theme", b.slot(_pick(rng, SEARCH_THEMES)))


def _pick_then_place_shared(b, rng):
    # "take the X from the S and put it on the G": the theme span of the
    # picking task is reused (coreference "it") as the theme of placing.
    t1 = b.task("picking")
    b.trigger(t1, "take")
    b.word("the")
    theme = b.slot(_pick(rng, PICK_THEMES))
    b.word("from", "the")
    source = b.slot(_pick(rng, PICK_SOURCES))
    b.arg(t1, "theme", theme)
    b.arg(t1, "source", source)
    b.word("and")
    t2 = b.task("placing")
    b.trigger(t2, "put")
    b.word("it", "on", "the")
    goal = b.slot(_pick(rng, PLACE_GOALS))
    b.arg(t2, "theme", theme)
    b.arg(t2, "goal", goal)


def _bring_then_place_in_shared(b, rng):
    t1 = b.task("bringing")
    b.trigger(t1, "bring")
    b.arg(t1, "recipient", b.slot(_pick(rng, RECIPIENTS)))
    b.word("a")
    theme = b.slot(_pick(rng, BRING_THEMES))
    b.word("from", "the")
    source = b.slot(_pick(rng, BRING_SOURCES))
    b.arg(t1, "theme", theme)
    b.arg(t1, "source", source)
    b.word("then")
    t2 = b.task("placing")
    b.trigger(t2, "put")
    b.word("it", "in", "the")
    container = b.slot(_pick(rng, CONTAINERS))
    b.arg(t2, "theme", theme)
    b.arg(t2, "goal", container)
    b.arg(t2, "containing_object", container)


def _double_pick_shared(b, rng):
    # Two picking tasks sharing one trigger span ("pick up") and one source.
    t1 = b.task("picking")
    t2 = b.task("picking")
    trig = b.trigger(t1, "pick", "up")
    b.trigger_ref(t2, trig)
    b.word("the")
    a = b.slot(_pick(rng, PICK_THEMES))
    b.word("and", "the")
    bb = b.slot(_pick(rng, GIVE_THEMES))
    b.word("from", "the")
    source = b.slot(_pick(rng, PICK_SOURCES))
    b.arg(t1, "theme", a)
    b.arg(t1, "source", source)
    b.arg(t2, "theme", bb)
    b.arg(t2, "source", source)


SINGLE_TEMPLATES = {
    "being_located": _being_located,
    "being_in_category": _being_in_category,
    "bringing": _bringing,
    "changing_operational_state": _changing_operational_state,
    "checking_state": _checking_state,
    "cutting": _cutting,
    "following": _following,
    "giving": _giving,
    "inspecting": _inspecting,
    "motion": _motion,
    "opening": _opening,
    "picking": _picking,
    "placing": _placing,
    "placing_in": _placing_in,
    "pushing": _pushing,
    "rotation": _rotation,
    "searching": _searching,
}

SHARED_TEMPLATES = {
    "pick_then_place_shared": (_pick_then_place_shared, 2),
    "bring_then_place_in_shared": (_bring_then_place_in_shared, 2),
    "double_pick_shared": (_double_pick_shared, 2),
}

TEMPLATE_TASK_TYPES = {name: (name if name != "placing_in" else "placing",) for name in SINGLE_TEMPLATES}
TEMPLATE_TASK_TYPES.update(
    {
        "pick_then_place_shared": ("picking", "placing"),
        "bring_then_place_in_shared": ("bringing", "placing"),
        "double_pick_shared": ("picking", "picking"),
    }
)

_SINGLE_IDS = tuple(SINGLE_TEMPLATES)
_SHARED_IDS = tuple(SHARED_TEMPLATES)


def lexicon_words() -> frozenset[str]:
    """Every surface token the generator can emit."""
    words = set(_SKELETON_WORDS)
    for value in globals().values():
        if isinstance(value, tuple) and value and all(isinstance(f, Filler) for f in value):
            for filler in value:
                words.update(filler.tokens)
    for conn in CONNECTIVES:
        words.update(conn)
    return frozenset(words)


def surface_class_map() -> dict[tuple[str, ...], str | None]:
    """Map each filler surface to its object class; ambiguity would corrupt BIO supervision."""
    mapping: dict[tuple[str, ...], str | None] = {}
    for value in globals().values():
        if isinstance(value, tuple) and value and all(isinstance(f, Filler) for f in value):
            for filler in value:
                prev = mapping.get(filler.tokens, filler.object_class)
                if prev != filler.object_class:
                    raise ValueError(f"surface {filler.tokens} maps to both {prev} and {filler.object_class}")
                mapping[filler.tokens] = filler.object_class
    return mapping


def _bio_from_grounded(n: int, grounded: list[tuple[Span, str]]) -> list[str]:
    tags = [OUTSIDE_TAG] * n
    for (start, end), cls in sorted(set(grounded)):
        for i in range(start, end + 1):
            expected = ("B-" if i == start else "I-") + cls
            if tags[i] != OUTSIDE_TAG and tags[i] != expected:
                raise ValueError(f"conflicting grounding at token {i}: {tags[i]} vs {expected}")
            tags[i] = expected
    return tags


def build_instruction(template_ids: list[str], rng: random.Random | None = None, split_hint: str | None = None) -> AnnotatedInstruction:
    """Instantiate the given templates, joined by connectives, into one instruction."""
    tokens: list[str] = []
    drafts: list[_TaskDraft] = []
    grounded: list[tuple[Span, str]] = []
    for pos, template_id in enumerate(template_ids):
        if pos > 0:
            conn = CONNECTIVES[0] if rng is None else rng.choice(CONNECTIVES)
            tokens.extend(conn)
        offset = len(tokens)
        b = _Chunk()
        if template_id in SINGLE_TEMPLATES:
            SINGLE_TEMPLATES[template_id](b, rng)
        else:
            SHARED_TEMPLATES[template_id][0](b, rng)
        tokens.extend(b.tokens)
        shift = lambda s: (s[0] + offset, s[1] + offset)
        for draft in b.tasks:
            assert draft.span is not None, template_id
            drafts.append(_TaskDraft(draft.task_type, shift(draft.span), [(a, shift(s)) for a, s in draft.args]))
        grounded.extend((shift(s), cls) for s, cls in b.grounded)

    tasks = []
    for draft in sorted(drafts, key=lambda d: d.span[0]):
        args = [ArgumentRecord(s[0], s[1], atype) for atype, s in sorted(draft.args, key=lambda p: p[1])]
        tasks.append(TaskRecord(draft.span[0], draft.span[1], draft.task_type, args))
    return AnnotatedInstruction(tokens, tasks, _bio_from_grounded(len(tokens), grounded), split_hint)


def _sample_plan(rng: random.Random) -> list[str]:
    n_tasks = rng.choices((1, 2, 3, 4), weights=(0.55, 0.25, 0.12, 0.08))[0]
    if n_tasks >= 2 and rng.random() < 0.35:
        plan = [rng.choice(_SHARED_IDS)]
        plan.extend(rng.choice(_SINGLE_IDS) for _ in range(n_tasks - 2))
        return plan
    return [rng.choice(_SINGLE_IDS) for _ in range(n_tasks)]


def generate_with_plan(seed: int, size: int, split_hint: str | None = None) -> tuple[list[AnnotatedInstruction], list[list[str]]]:
    """Generate instructions and return the template plan used for each."""
    if size < 0:
        raise ValueError("size must be >= 0")
    rng = random.Random(seed)
    plans = []
    corpus = []
    for _ in range(size):
        plan = _sample_plan(rng)
        plans.append(plan)
        corpus.append(build_instruction(plan, rng, split_hint))
    return corpus, plans


def generate_synthetic_corpus(seed: int, size: int, split_hint: str | None = None) -> list[AnnotatedInstruction]:
    return generate_with_plan(seed, size, split_hint)[0]


def plan_task_counts(plans: list[list[str]]) -> Counter:
    """Expected task-type tallies for a plan list, for cross-checking stats."""
    counts: Counter = Counter()
    for plan in plans:
        for template_id in plan:
            counts.update(TEMPLATE_TASK_TYPES[template_id])
    return counts
