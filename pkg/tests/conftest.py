import pytest
import torch

from tage.corpus import AnnotatedInstruction, ArgumentRecord, TaskRecord
from tage.encoder import EncoderConfig
from tage.generator import build_instruction, generate_synthetic_corpus
from tage.model import ModelConfig, build_model
from tage.training import TrainingConfig, train
from tage.vocabulary import LabelVocabularies

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def vocab():
    return LabelVocabularies()


def make_shared_trigger_instruction():
    """Two picking tasks sharing the trigger span and the source span."""
    return AnnotatedInstruction(
        tokens="pick up the book and the pen from the wooden table".split(),
        tasks=[
            TaskRecord(0, 1, "picking", [ArgumentRecord(3, 3, "theme"), ArgumentRecord(9, 10, "source")]),
            TaskRecord(0, 1, "picking", [ArgumentRecord(6, 6, "theme"), ArgumentRecord(9, 10, "source")]),
        ],
        bio_tags=["O", "O", "O", "B-BOOK", "O", "O", "B-PEN", "O", "O", "B-TABLE", "I-TABLE"],
    )


def make_three_task_instruction():
    """Theme shared by all three tasks, source by two, token 15 typed twice."""
    return AnnotatedInstruction(
        tokens="the red cup is on the dining table pick it up and keep inside the fridge".split(),
        tasks=[
            TaskRecord(3, 3, "being_located", [ArgumentRecord(1, 2, "theme"), ArgumentRecord(6, 7, "source")]),
            TaskRecord(8, 8, "picking", [ArgumentRecord(1, 2, "theme"), ArgumentRecord(6, 7, "source")]),
            TaskRecord(
                12, 12, "placing",
                [ArgumentRecord(1, 2, "theme"), ArgumentRecord(15, 15, "goal"), ArgumentRecord(15, 15, "containing_object")],
            ),
        ],
        bio_tags=["O", "B-CUP", "I-CUP", "O", "O", "O", "B-TABLE", "I-TABLE",
                  "O", "O", "O", "O", "O", "O", "O", "B-REFRIGERATOR"],
    )


@pytest.fixture(scope="session")
def fixture_corpus():
    """Small corpus exercising every structural capability, for overfit oracles."""
    return [
        make_shared_trigger_instruction(),
        make_three_task_instruction(),
        build_instruction(["bringing"]),
        build_instruction(["motion"]),
        build_instruction(["placing_in"]),
        build_instruction(["pick_then_place_shared"]),
        build_instruction(["rotation"]),
        build_instruction(["opening"]),
    ]


@pytest.fixture(scope="session")
def fixture_model(fixture_corpus, vocab):
    """Model overfitted on the fixture corpus until it reproduces it exactly.

    Trained once per session at a favorable learning rate; several module
    and acceptance tests share it, so treat it as read-only.
    """
    config = TrainingConfig(
        model=ModelConfig(encoder=EncoderConfig(preset="mini")),
        batch_size=16,
        learning_rate=1e-3,
        max_epochs=180,
        early_stop_patience=180,
        seed=11,
    )
    result = train(config, fixture_corpus, fixture_corpus, vocab)
    assert result.best_dev_f1 == 1.0, f"fixture model only reached F1 {result.best_dev_f1}"
    return result.model


@pytest.fixture(scope="session")
def untrained_mini(vocab):
    """Freshly initialized mini model for shape/determinism tests (read-only)."""
    torch.manual_seed(0)
    return build_model(ModelConfig(encoder=EncoderConfig(preset="mini")), vocab)


@pytest.fixture(scope="session")
def small_corpus():
    return generate_synthetic_corpus(7, 20)
