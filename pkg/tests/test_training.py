import math

import pytest
import torch

from tage.decoder import StepOutput
from tage.encoder import EncoderConfig
from tage.generator import generate_synthetic_corpus
from tage.model import InstructionOutputs, ModelConfig, build_model
from tage.training import (
    CheckpointMismatchError,
    TrainingConfig,
    TrainingDivergedError,
    compute_losses,
    load_checkpoint,
    save_checkpoint,
    train,
)
from tage.vocabulary import LabelVocabularies

from conftest import make_three_task_instruction


def _dist(values):
    return torch.tensor(values, dtype=torch.float64)


def _fake_outputs(task_steps, arg_steps, grounding_probs, gold_bio):
    from tage.decoder import InstructionDecode

    decode = InstructionDecode(tasks=[], task_steps=task_steps, arg_steps=arg_steps)
    return InstructionOutputs(decode, grounding_probs, torch.tensor(gold_bio))


def _perfect_step(n, is_eos=False):
    start = torch.zeros(n, dtype=torch.float64)
    start[0] = 1.0
    type_dist = torch.zeros(4, dtype=torch.float64)
    type_dist[1] = 1.0
    return StepOutput(start, start.clone(), type_dist, gold_start=0, gold_end=0, gold_type=1, is_eos=is_eos)


def test_perfect_predictions_give_exactly_zero():
    probs = torch.zeros(3, 5, dtype=torch.float64)
    probs[:, 2] = 1.0
    out = _fake_outputs([_perfect_step(3), _perfect_step(3, is_eos=True)], [_perfect_step(3)], probs, [2, 2, 2])
    losses = compute_losses([out])
    assert float(losses.task_loss) == 0.0
    assert float(losses.arg_loss) == 0.0
    assert float(losses.grounding_loss) == 0.0
    assert float(losses.total) == 0.0


def test_hand_computed_single_step():
    step = StepOutput(_dist([0.5, 0.5]), _dist([0.5, 0.5]), _dist([0.25, 0.75]),
                      gold_start=0, gold_end=1, gold_type=0)
    probs = torch.full((1, 2), 0.5, dtype=torch.float64)
    out = _fake_outputs([step], [], probs, [0])
    losses = compute_losses([out])
    expected = -(math.log(0.5) + math.log(0.5) + math.log(0.25))
    assert float(losses.task_loss) == pytest.approx(2.7726, abs=1e-4)
    assert float(losses.task_loss) == pytest.approx(expected, abs=1e-9)
    assert float(losses.arg_loss) == 0.0


def test_eos_step_contributes_only_type_term():
    eos = StepOutput(_dist([0.1, 0.9]), _dist([0.9, 0.1]), _dist([0.3, 0.7]), gold_type=1, is_eos=True)
    probs = torch.ones(1, 2, dtype=torch.float64)
    out = _fake_outputs([eos], [], probs, [0])
    losses = compute_losses([out])
    assert float(losses.task_loss) == pytest.approx(-math.log(0.7), abs=1e-9)


def test_batch_total_is_mean_of_instruction_sums():
    step_a = StepOutput(_dist([1.0]), _dist([1.0]), _dist([0.5, 0.5]), 0, 0, 0)
    step_b = StepOutput(_dist([0.25, 0.75]), _dist([0.75, 0.25]), _dist([1.0, 0.0]), 1, 0, 0)
    # instruction A: task sum = -ln(.5); instruction B: -(ln .75 + ln .75 + ln 1)
    out_a = _fake_outputs([step_a], [], torch.ones(1, 1, dtype=torch.float64), [0])
    out_b = _fake_outputs([step_b], [], torch.ones(1, 1, dtype=torch.float64), [0])
    losses = compute_losses([out_a, out_b])
    expected_a = -math.log(0.5)
    expected_b = -(math.log(0.75) + math.log(0.75))
    assert float(losses.total) == pytest.approx((expected_a + expected_b) / 2, abs=1e-9)


def test_zero_probability_clamps_and_counts():
    step = StepOutput(_dist([1.0, 0.0]), _dist([1.0, 0.0]), _dist([1.0, 0.0]), gold_start=1, gold_end=0, gold_type=0)
    out = _fake_outputs([step], [], torch.ones(1, 2, dtype=torch.float64), [0])
    losses = compute_losses([out])
    assert math.isfinite(float(losses.total))
    assert losses.clamp_events == 1
    assert float(losses.task_loss) == pytest.approx(-math.log(1e-9), abs=1e-6)


def test_losses_permutation_invariant(untrained_mini, small_corpus):
    batch = small_corpus[:6]
    a = compute_losses(untrained_mini.forward_teacher(batch))
    b = compute_losses(untrained_mini.forward_teacher(list(reversed(batch))))
    assert float(a.total.detach()) == pytest.approx(float(b.total.detach()), abs=1e-6)


def test_empty_batch_rejected():
    with pytest.raises(ValueError):
        compute_losses([])


def _tiny_config(**overrides):
    defaults = dict(
        model=ModelConfig(encoder=EncoderConfig(preset="mini")),
        batch_size=16,
        learning_rate=1e-3,
        max_epochs=2,
        early_stop_patience=2,
        seed=5,
    )
    defaults.update(overrides)
    return TrainingConfig(**defaults)


def test_table_one_defaults():
    config = TrainingConfig()
    assert config.batch_size == 16
    assert config.learning_rate == pytest.approx(1e-4)
    assert config.max_epochs == 100
    assert config.early_stop_patience == 20


def test_patience_one_stops_after_two_epochs(vocab):
    corpus = generate_synthetic_corpus(2, 4)
    result = train(_tiny_config(max_epochs=6, early_stop_patience=1, learning_rate=1e-6), corpus, corpus, vocab)
    assert len(result.history) == 2
    assert result.stopped_early


def test_loss_decreases_over_ten_epochs(vocab):
    corpus = generate_synthetic_corpus(8, 12)
    result = train(_tiny_config(max_epochs=10, early_stop_patience=10), corpus, corpus, vocab)
    assert result.history[9].total_loss < result.history[0].total_loss


def test_every_parameter_group_receives_gradient(vocab, small_corpus):
    torch.manual_seed(3)
    model = build_model(ModelConfig(encoder=EncoderConfig(preset="mini")), vocab)
    batch = [inst for inst in small_corpus if len(inst.tasks) >= 2][:4] or small_corpus[:4]
    losses = compute_losses(model.forward_teacher(batch))
    losses.total.backward()
    groups = {
        "encoder": model.encoder,
        "grounding_head": model.grounding_head,
        "task_decoder": model.decoder.task_cell,
        "arg_decoder": model.decoder.arg_cell,
        "task_attention": model.decoder.task_attention,
        "arg_attention": model.decoder.arg_attention,
        "task_span_detector": model.decoder.task_span_detector,
        "arg_span_detector": model.decoder.arg_span_detector,
        "task_type_head": model.decoder.task_type_head,
        "arg_type_head": model.decoder.arg_type_head,
        "task_type_embedding": model.decoder.task_type_embedding,
        "arg_type_embedding": model.decoder.arg_type_embedding,
    }
    for name, module in groups.items():
        grad_norm = sum(float(p.grad.abs().sum()) for p in module.parameters() if p.grad is not None)
        assert grad_norm > 0, f"no gradient reached {name}"


def test_divergence_aborts_with_last_good_checkpoint(vocab, tmp_path, monkeypatch):
    corpus = generate_synthetic_corpus(4, 4)
    import tage.training as training_module

    real = training_module.compute_losses
    calls = {"n": 0}

    def poisoned(outputs):
        calls["n"] += 1
        losses = real(outputs)
        if calls["n"] >= 2:  # second batch (epoch 2) returns NaN
            losses.total = losses.total * float("nan")
        return losses

    monkeypatch.setattr(training_module, "compute_losses", poisoned)
    ckpt = tmp_path / "model.pt"
    with pytest.raises(TrainingDivergedError):
        train(_tiny_config(max_epochs=4, early_stop_patience=4), corpus, corpus, vocab, checkpoint_path=ckpt)
    assert ckpt.exists()  # best (epoch-1) checkpoint retained
    load_checkpoint(ckpt)


def test_checkpoint_roundtrip_identical_outputs(fixture_model, fixture_corpus, tmp_path):
    path = tmp_path / "model.pt"
    save_checkpoint(path, fixture_model)
    loaded = load_checkpoint(path)
    tokens = [inst.tokens for inst in fixture_corpus[:3]]
    before = fixture_model.encode(tokens).vectors
    after = loaded.model.encode(tokens).vectors
    assert float((before - after).abs().max()) < 1e-6
    assert loaded.hidden_dim == 256


def test_checkpoint_refuses_altered_object_vocabulary(fixture_model, tmp_path, vocab):
    path = tmp_path / "model.pt"
    save_checkpoint(path, fixture_model)
    altered = LabelVocabularies(object_classes=vocab.object_classes[:-1])
    with pytest.raises(CheckpointMismatchError, match="K"):
        load_checkpoint(path, expect_vocab=altered)


def test_checkpoint_embeds_config_and_history(fixture_model, tmp_path):
    path = tmp_path / "model.pt"
    save_checkpoint(path, fixture_model, config=TrainingConfig(), history=[])
    loaded = load_checkpoint(path)
    assert loaded.config.encoder.preset == "mini"
    assert loaded.training_config["batch_size"] == 16


def test_fixed_seed_reproduces_epoch_one_loss(vocab):
    corpus = generate_synthetic_corpus(21, 8)
    first = train(_tiny_config(max_epochs=1, early_stop_patience=1), corpus, corpus, vocab)
    second = train(_tiny_config(max_epochs=1, early_stop_patience=1), corpus, corpus, vocab)
    assert first.history[0].total_loss == pytest.approx(second.history[0].total_loss, abs=1e-6)
