import pytest
import torch

from tage.decoder import DecodeLimits
from tage.generator import build_instruction

from conftest import make_three_task_instruction


def _teacher_decode(model, inst, keep_traces=False):
    enc = model.encode([inst.tokens])
    probs = model.grounding_head(enc.vectors)
    return model.decoder.decode(enc, probs, DecodeLimits(), gold=(inst.tasks, model.vocab), keep_traces=keep_traces)


def test_teacher_forced_step_counts(untrained_mini):
    inst = build_instruction(["pick_then_place_shared"])  # 2 tasks: 2 args + 2 args
    inst.tasks[0].args = inst.tasks[0].args[:2]
    inst.tasks[1].args = inst.tasks[1].args[:1]
    result = _teacher_decode(untrained_mini, inst)
    assert len(result.task_steps) == 3  # 2 tasks + EOS
    assert len(result.arg_steps) == (2 + 1) + (1 + 1)
    assert [s.is_eos for s in result.task_steps] == [False, False, True]


def test_first_step_feedback_sum_is_zero(untrained_mini):
    inst = make_three_task_instruction()
    result = _teacher_decode(untrained_mini, inst, keep_traces=True)
    assert torch.equal(result.task_traces[0].prev_sum_before, torch.zeros_like(result.task_traces[0].prev_sum_before))


def test_attention_weights_normalized(untrained_mini):
    result = _teacher_decode(untrained_mini, make_three_task_instruction(), keep_traces=True)
    for trace in result.task_traces:
        assert float(trace.attention_weights.sum()) == pytest.approx(1.0, abs=1e-5)


def test_feedback_sum_accumulates_task_vectors(untrained_mini):
    result = _teacher_decode(untrained_mini, make_three_task_instruction(), keep_traces=True)
    expected = result.task_traces[0].feedback + result.task_traces[1].feedback + result.task_traces[2].feedback
    eos_trace = result.task_traces[3]
    assert eos_trace.feedback is None
    assert torch.allclose(eos_trace.prev_sum_before, expected, atol=1e-6)


def test_type_distribution_widths(untrained_mini, vocab):
    result = _teacher_decode(untrained_mini, make_three_task_instruction())
    assert all(s.type_dist.shape == (vocab.num_task_labels,) for s in result.task_steps)
    assert all(s.type_dist.shape == (vocab.num_arg_labels,) for s in result.arg_steps)
    assert all(float(s.type_dist.sum()) == pytest.approx(1.0, abs=1e-5) for s in result.task_steps)


def test_inference_respects_task_limit(untrained_mini, vocab):
    model = untrained_mini
    inst = make_three_task_instruction()
    enc = model.encode([inst.tokens])
    probs = model.grounding_head(enc.vectors)
    with torch.no_grad():
        eos_bias_backup = model.decoder.task_type_head.bias.clone()
        model.decoder.task_type_head.bias[vocab.task_eos_index] = -1e9
        model.decoder.arg_type_head.bias[vocab.arg_eos_index] = -1e9
        try:
            result = model.decoder.decode(enc, probs, DecodeLimits(max_task_cnt=3, max_arg_cnt=2))
        finally:
            model.decoder.task_type_head.bias.copy_(eos_bias_backup)
            model.decoder.arg_type_head.bias[vocab.arg_eos_index] = 0.0
    assert len(result.tasks) == 3  # EOS never wins, loop bound applies
    assert all(len(t.args) == 2 for t in result.tasks)


def test_decode_deterministic_with_fixed_weights(untrained_mini):
    inst = make_three_task_instruction()
    a = untrained_mini.predict_tokens([inst.tokens])[0]
    b = untrained_mini.predict_tokens([inst.tokens])[0]
    assert [(t.start, t.end, t.type_index) for t in a.decode.tasks] == [
        (t.start, t.end, t.type_index) for t in b.decode.tasks
    ]


def test_task_identity_shifts_inner_decoding(untrained_mini, vocab):
    """Perturbing a task's type embedding changes later steps' distributions."""
    inst = make_three_task_instruction()
    baseline = _teacher_decode(untrained_mini, inst)
    first_type = vocab.encode("task", inst.tasks[0].task_type)
    with torch.no_grad():
        row_backup = untrained_mini.decoder.task_type_embedding.weight[first_type].clone()
        untrained_mini.decoder.task_type_embedding.weight[first_type] += 1.0
        try:
            perturbed = _teacher_decode(untrained_mini, inst)
        finally:
            untrained_mini.decoder.task_type_embedding.weight[first_type] = row_backup
    # the first task step precedes the perturbation's entry into the sums
    assert torch.allclose(baseline.task_steps[0].start_dist, perturbed.task_steps[0].start_dist)
    # later task steps and the second task's argument steps see different context
    assert not torch.allclose(baseline.task_steps[1].start_dist, perturbed.task_steps[1].start_dist)
    second_task_args = slice(len(inst.tasks[0].args) + 1, None)
    changed = [
        not torch.allclose(a.start_dist, b.start_dist)
        for a, b in zip(baseline.arg_steps[second_task_args], perturbed.arg_steps[second_task_args])
    ]
    assert any(changed)


def test_fresh_argument_state_per_task(untrained_mini):
    """Both tasks' first argument steps start from the same zero feedback sum."""
    inst = build_instruction(["pick_then_place_shared"])
    result = _teacher_decode(untrained_mini, inst)
    n_args_first = len(inst.tasks[0].args)
    first_of_task2 = result.arg_steps[n_args_first + 1]
    assert first_of_task2.type_dist.shape == result.arg_steps[0].type_dist.shape


def test_limits_validated():
    with pytest.raises(ValueError):
        DecodeLimits(max_task_cnt=0)
