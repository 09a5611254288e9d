import random as pyrandom

import pytest

from tage.corpus import AnnotatedInstruction, ArgumentRecord, TaskRecord
from tage.evaluation import extract_units, f1_score, per_type_report, score
from tage.generator import generate_synthetic_corpus

from conftest import make_three_task_instruction


def _inst(tasks, n=12, bio=None):
    return AnnotatedInstruction(["w"] * n, tasks, bio or ["O"] * n)


def _task(start, end, task_type, args=()):
    return TaskRecord(start, end, task_type, [ArgumentRecord(*a) for a in args])


def naive_counts(predictions, golds):
    """Independent micro-average counter over (span, type) units with task pairing."""
    tp = fp = fn = 0
    for pred, gold in zip(predictions, golds):
        pred_tasks = [(t.span, t.task_type, list(t.args)) for t in extract_units(pred)]
        gold_tasks = [(t.span, t.task_type, list(t.args)) for t in extract_units(gold)]
        used = [False] * len(pred_tasks)
        for g_span, g_type, g_args in gold_tasks:
            match = None
            for i, (p_span, p_type, _) in enumerate(pred_tasks):
                if not used[i] and (p_span, p_type) == (g_span, g_type):
                    match = i
                    used[i] = True
                    break
            if match is None:
                fn += 1 + len(g_args)
                continue
            tp += 1
            p_args = []
            for a in pred_tasks[match][2]:
                if (a.span, a.arg_type) not in [(x.span, x.arg_type) for x in p_args]:
                    p_args.append(a)
            taken = [False] * len(p_args)
            for g_arg in g_args:
                hit = None
                for i, p_arg in enumerate(p_args):
                    if not taken[i] and (p_arg.span, p_arg.arg_type) == (g_arg.span, g_arg.arg_type):
                        hit = i
                        taken[i] = True
                        break
                if hit is None:
                    fn += 1
                else:
                    tp += 1
            fp += taken.count(False)
        for i, (_, _, p_args) in enumerate(pred_tasks):
            if not used[i]:
                deduped = {(a.span, a.arg_type) for a in p_args}
                fp += 1 + len(deduped)
    return tp, fp, fn


def test_perfect_predictions(fixture_corpus):
    report = score(fixture_corpus, fixture_corpus)
    assert report.without_grounding.f1 == 1.0
    assert report.with_grounding.f1 == 1.0
    assert report.task_level.precision == 1.0


def test_headline_arithmetic():
    # 85 gold task units, 80 predicted, 68 exact: P=0.85, R=0.80
    golds = [_inst([_task(0, 0, "motion")]) for _ in range(85)]
    preds = []
    for i in range(85):
        if i < 68:
            preds.append(_inst([_task(0, 0, "motion")]))
        elif i < 80:
            preds.append(_inst([_task(0, 0, "picking")]))  # wrong type: FP, and gold missed
        else:
            preds.append(_inst([]))
    report = score(preds, golds)
    assert report.without_grounding.precision == pytest.approx(0.85, abs=1e-9)
    assert report.without_grounding.recall == pytest.approx(0.80, abs=1e-9)
    assert report.without_grounding.f1 == pytest.approx(2 * 0.85 * 0.80 / 1.65, abs=1e-9)
    assert round(report.without_grounding.f1, 2) == 0.82


def test_crafted_half_precision_third_recall():
    golds = [_inst([_task(0, 0, "motion"), _task(2, 2, "picking"), _task(4, 4, "placing")])]
    preds = [_inst([_task(0, 0, "motion"), _task(2, 2, "opening")])]
    report = score(preds, golds)
    assert report.without_grounding.precision == pytest.approx(0.5)
    assert report.without_grounding.recall == pytest.approx(1 / 3)
    assert report.without_grounding.f1 == pytest.approx(0.4)


def test_single_giving_task_row():
    gold = [_inst([_task(1, 1, "giving")])]
    per_task, _ = per_type_report(gold, gold)
    row = per_task["giving"]
    assert (row.precision, row.recall, row.f1) == (1.0, 1.0, 1.0)


def test_empty_inputs_give_empty_tables():
    report = score([], [])
    assert report.per_task_type == {} and report.per_arg_type == {}
    assert report.without_grounding.f1 == 0.0


def test_length_mismatch_rejected():
    with pytest.raises(ValueError, match="predictions vs"):
        score([], [_inst([])])


def test_type_corruption_recall():
    golds = [_inst([_task(i % 3, i % 3, "motion")]) for i in range(100)]
    preds = []
    for i, g in enumerate(golds):
        t = g.tasks[0]
        wrong = "picking" if i % 5 == 0 else t.task_type  # corrupt 20%
        preds.append(_inst([_task(t.start, t.end, wrong)]))
    report = score(preds, golds)
    assert report.per_task_type["motion"].recall == pytest.approx(0.8)
    tp, fp, fn = naive_counts(preds, golds)
    assert tp / (tp + fn) == pytest.approx(0.8)


def test_instruction_reordering_symmetry(small_corpus):
    preds = [_corrupt(inst, i) for i, inst in enumerate(small_corpus)]
    base = score(preds, small_corpus)
    order = list(range(len(small_corpus)))
    pyrandom.Random(4).shuffle(order)
    shuffled = score([preds[i] for i in order], [small_corpus[i] for i in order])
    assert shuffled.without_grounding == base.without_grounding
    assert shuffled.with_grounding == base.with_grounding


def _corrupt(inst, salt):
    """Deterministically perturb some tasks/args to exercise partial credit."""
    rng = pyrandom.Random(salt)
    tasks = []
    for t in inst.tasks:
        if rng.random() < 0.25:
            continue  # dropped task
        args = [ArgumentRecord(a.start, a.end, a.arg_type if rng.random() > 0.2 else "area") for a in t.args]
        task_type = t.task_type if rng.random() > 0.15 else "motion"
        tasks.append(TaskRecord(t.start, t.end, task_type, args))
    return AnnotatedInstruction(list(inst.tokens), tasks, list(inst.bio_tags))


def test_combined_matches_independent_counting(small_corpus):
    preds = [_corrupt(inst, i) for i, inst in enumerate(small_corpus)]
    report = score(preds, small_corpus)
    tp, fp, fn = naive_counts(preds, small_corpus)
    assert report.without_grounding.precision == pytest.approx(tp / (tp + fp), abs=1e-9)
    assert report.without_grounding.recall == pytest.approx(tp / (tp + fn), abs=1e-9)


def test_grounded_f1_never_exceeds_ungrounded(small_corpus):
    for salt in range(5):
        preds = [_corrupt(inst, salt * 31 + i) for i, inst in enumerate(small_corpus)]
        report = score(preds, small_corpus)
        assert report.with_grounding.f1 <= report.without_grounding.f1 + 1e-12


def test_grounding_mismatch_only_hits_grounded_variant():
    bio_gold = ["O", "B-CUP", "O"]
    bio_pred = ["O", "B-BOOK", "O"]
    gold = AnnotatedInstruction(["take", "cup", "now"],
                                [_task(0, 0, "picking", [((1), (1), "theme")])], bio_gold)
    pred = AnnotatedInstruction(["take", "cup", "now"],
                                [_task(0, 0, "picking", [((1), (1), "theme")])], bio_pred)
    report = score([pred], [gold])
    assert report.without_grounding.f1 == 1.0
    assert report.with_grounding.f1 < 1.0


def test_arguments_under_unmatched_task_are_misses():
    gold = [_inst([_task(0, 0, "motion", [((2), (2), "goal")])])]
    pred = [_inst([_task(0, 0, "picking", [((2), (2), "goal")])])]  # wrong task type
    report = score(pred, gold)
    assert report.counts["tasks"] == {"tp": 0, "fp": 1, "fn": 1}
    assert report.counts["args_without_grounding"] == {"tp": 0, "fp": 1, "fn": 1}


def test_duplicate_predicted_arguments_deduplicate():
    gold = [_inst([_task(0, 0, "motion", [((2), (2), "goal")])])]
    pred = [_inst([_task(0, 0, "motion", [((2), (2), "goal"), ((2), (2), "goal")])])]
    report = score(pred, gold)
    assert report.counts["args_without_grounding"] == {"tp": 1, "fp": 0, "fn": 0}


def test_confusion_marginals_reconcile():
    gold = [make_three_task_instruction()]
    pred = [_corrupt(make_three_task_instruction(), 7)]
    report = score(pred, gold)
    overall = report.task_confusion.overall()
    assert overall.precision == pytest.approx(report.task_level.precision)
    assert overall.recall == pytest.approx(report.task_level.recall)
    arg_overall = report.arg_confusion.overall()
    assert arg_overall.precision == pytest.approx(report.arg_level.precision)
    assert arg_overall.recall == pytest.approx(report.arg_level.recall)


def test_none_label_records_misses():
    gold = [_inst([_task(0, 0, "motion")])]
    pred = [_inst([])]
    report = score(pred, gold)
    assert report.task_confusion.cells[("motion", "None")] == 1


def test_f1_zero_when_both_zero():
    assert f1_score(0.0, 0.0) == 0.0


def test_report_serializes(small_corpus):
    preds = [_corrupt(inst, i) for i, inst in enumerate(small_corpus)]
    report = score(preds, small_corpus)
    doc = report.as_json_dict()
    assert set(doc) >= {"without_grounding", "with_grounding", "per_task_type", "task_confusion"}
    text = report.as_text()
    assert "combined (with grounding)" in text


def test_score_accepts_gold_format_predictions(vocab):
    corpus = generate_synthetic_corpus(11, 10)
    report = score(corpus, corpus)
    assert report.with_grounding.f1 == 1.0
