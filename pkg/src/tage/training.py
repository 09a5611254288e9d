"""Joint training of task extraction, argument extraction, and grounding.

Per instruction, the task loss averages -[ln s + ln e + ln c] over task
decoder steps (the end-of-sequence step contributes only its type term),
the argument loss averages the same construction over all argument steps
of all tasks, and the grounding loss averages -ln g over tokens; the batch
loss is the mean over instructions of the three sums.  Gold probabilities
of exactly zero clamp to 1e-9 (counted) so the loss stays finite.

Training runs mini-batches through AdamW, evaluates the combined
with-grounding strict F1 on the dev split after every epoch, keeps the
best checkpoint, and stops early once the dev metric has not improved for
a configured number of epochs.
"""

from __future__ import annotations

import json
import math
import random
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .corpus import AnnotatedInstruction
from .decoder import StepOutput
from .encoder import EncoderConfig, WordPieceTokenizer
from .evaluation import score
from .model import GroundedInstructionParser, InstructionOutputs, ModelConfig, build_model
from .pipeline import predict_annotated
from .vocabulary import LabelVocabularies

PROB_FLOOR = 1e-9


class TrainingDivergedError(RuntimeError):
    pass


class CheckpointMismatchError(ValueError):
    """Checkpoint contents disagree with what the caller expects; message carries the diff."""


@dataclass
class TrainingConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    batch_size: int = 16
    learning_rate: float = 1e-4
    weight_decay: float = 0.01
    max_epochs: int = 100
    early_stop_patience: int = 20
    seed: int = 13
    grad_clip: float | None = None

    def __post_init__(self):
        if self.batch_size < 1 or self.learning_rate <= 0 or self.max_epochs < 1 or self.early_stop_patience < 1:
            raise ValueError("batch size, learning rate, epochs, and patience must be positive")
        if self.early_stop_patience > self.max_epochs:
            raise ValueError("patience must not exceed max_epochs")


@dataclass
class LossBreakdown:
    task_loss: torch.Tensor
    arg_loss: torch.Tensor
    grounding_loss: torch.Tensor
    total: torch.Tensor
    clamp_events: int = 0

    def detach_floats(self) -> dict[str, float]:
        return {
            "task_loss": float(self.task_loss.detach()),
            "arg_loss": float(self.arg_loss.detach()),
            "grounding_loss": float(self.grounding_loss.detach()),
            "total": float(self.total.detach()),
        }


def _gold_prob(dist: torch.Tensor, index: int) -> tuple[torch.Tensor, int]:
    p = dist[index]
    clamped = int(p.item() < PROB_FLOOR)
    return torch.clamp(p, min=PROB_FLOOR), clamped


def _step_nll(step: StepOutput) -> tuple[torch.Tensor, int]:
    """-[ln s + ln e + ln c] for a decoder step; EOS steps carry only the type term."""
    clamps = 0
    c, k = _gold_prob(step.type_dist, step.gold_type)
    clamps += k
    nll = -torch.log(c)
    if not step.is_eos:
        s, k = _gold_prob(step.start_dist, step.gold_start)
        clamps += k
        e, k2 = _gold_prob(step.end_dist, step.gold_end)
        clamps += k2
        nll = nll - torch.log(s) - torch.log(e)
    return nll, clamps


def compute_losses(outputs: list[InstructionOutputs]) -> LossBreakdown:
    """Batch loss from teacher-forced outputs; see the module docstring for the averaging."""
    if not outputs:
        raise ValueError("empty batch")
    task_terms = []
    arg_terms = []
    grounding_terms = []
    clamp_events = 0
    for out in outputs:
        steps = out.decode.task_steps
        nlls = []
        for step in steps:
            nll, k = _step_nll(step)
            clamp_events += k
            nlls.append(nll)
        task_terms.append(torch.stack(nlls).mean() if nlls else torch.zeros(()))

        nlls = []
        for step in out.decode.arg_steps:
            nll, k = _step_nll(step)
            clamp_events += k
            nlls.append(nll)
        arg_terms.append(torch.stack(nlls).mean() if nlls else torch.zeros((), dtype=out.grounding_probs.dtype))

        gold = out.gold_bio.to(out.grounding_probs.device)
        probs = out.grounding_probs.gather(-1, gold.unsqueeze(-1)).squeeze(-1)
        clamp_events += int((probs < PROB_FLOOR).sum().item())
        grounding_terms.append(-torch.log(torch.clamp(probs, min=PROB_FLOOR)).mean())

    task_loss = torch.stack(task_terms).mean()
    arg_loss = torch.stack(arg_terms).mean()
    grounding_loss = torch.stack(grounding_terms).mean()
    return LossBreakdown(task_loss, arg_loss, grounding_loss, task_loss + arg_loss + grounding_loss, clamp_events)


@dataclass
class EpochRecord:
    epoch: int
    task_loss: float
    arg_loss: float
    grounding_loss: float
    total_loss: float
    dev_f1_with_grounding: float
    dev_f1_without_grounding: float
    seconds: float
    clamp_events: int

    def as_dict(self) -> dict:
        return vars(self).copy()


@dataclass
class TrainResult:
    history: list[EpochRecord]
    best_epoch: int
    best_dev_f1: float
    checkpoint_path: Path | None
    model: GroundedInstructionParser
    stopped_early: bool


def set_seed(seed: int) -> None:
    random.seed(seed)
    torch.manual_seed(seed)


def train(
    config: TrainingConfig,
    train_corpus: list[AnnotatedInstruction],
    dev_corpus: list[AnnotatedInstruction],
    vocab: LabelVocabularies | None = None,
    checkpoint_path: str | Path | None = None,
    log_path: str | Path | None = None,
    log_fn=None,
) -> TrainResult:
    """Run the optimization loop; returns the best model and per-epoch history."""
    if not train_corpus or not dev_corpus:
        raise ValueError("train and dev splits must be nonempty")
    vocab = vocab or LabelVocabularies()
    set_seed(config.seed)
    model = build_model(config.model, vocab)
    # foreach=False trades a little speed for not materializing a second
    # full parameter-sized buffer during the step (matters for `large`)
    optimizer = torch.optim.AdamW(
        model.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay, foreach=False
    )
    order_rng = random.Random(config.seed)

    history: list[EpochRecord] = []
    best_f1 = -1.0
    best_epoch = -1
    # best weights go to disk, not RAM: an in-memory copy would double the
    # weight footprint, which the large preset cannot afford
    best_file = tempfile.NamedTemporaryFile(suffix=".pt", delete=False)
    best_file.close()
    best_path = Path(best_file.name)
    have_best = False
    stale = 0
    stopped_early = False
    log_file = open(log_path, "a", encoding="utf-8") if log_path else None

    def _restore_best():
        if have_best:
            model.load_state_dict(torch.load(best_path, map_location="cpu", weights_only=True))

    try:
        try:
            for epoch in range(1, config.max_epochs + 1):
                started = time.perf_counter()
                model.train()
                indices = list(range(len(train_corpus)))
                order_rng.shuffle(indices)
                epoch_losses = {"task_loss": 0.0, "arg_loss": 0.0, "grounding_loss": 0.0, "total": 0.0}
                clamp_events = 0
                seen = 0
                for at in range(0, len(indices), config.batch_size):
                    batch = [train_corpus[i] for i in indices[at : at + config.batch_size]]
                    outputs = model.forward_teacher(batch)
                    losses = compute_losses(outputs)
                    if not math.isfinite(float(losses.total.detach())):
                        if checkpoint_path is not None:
                            _restore_best()
                            save_checkpoint(checkpoint_path, model, config, history)
                        raise TrainingDivergedError(
                            f"non-finite loss at epoch {epoch}; best checkpoint (epoch {best_epoch}) retained"
                        )
                    optimizer.zero_grad(set_to_none=True)
                    losses.total.backward()
                    if config.grad_clip is not None:
                        torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
                    optimizer.step()
                    for key, value in losses.detach_floats().items():
                        epoch_losses[key] += value * len(batch)
                    clamp_events += losses.clamp_events
                    seen += len(batch)
                for key in epoch_losses:
                    epoch_losses[key] /= seen

                predictions = predict_annotated(model, dev_corpus)
                report = score(predictions, dev_corpus)
                record = EpochRecord(
                    epoch=epoch,
                    task_loss=epoch_losses["task_loss"],
                    arg_loss=epoch_losses["arg_loss"],
                    grounding_loss=epoch_losses["grounding_loss"],
                    total_loss=epoch_losses["total"],
                    dev_f1_with_grounding=report.with_grounding.f1,
                    dev_f1_without_grounding=report.without_grounding.f1,
                    seconds=time.perf_counter() - started,
                    clamp_events=clamp_events,
                )
                history.append(record)
                if log_file:
                    log_file.write(json.dumps(record.as_dict()) + "\n")
                    log_file.flush()
                if log_fn:
                    log_fn(record)

                if record.dev_f1_with_grounding > best_f1:
                    best_f1 = record.dev_f1_with_grounding
                    best_epoch = epoch
                    torch.save(model.state_dict(), best_path)
                    have_best = True
                    stale = 0
                else:
                    stale += 1
                    if stale >= config.early_stop_patience:
                        stopped_early = True
                        break
        finally:
            if log_file:
                log_file.close()

        del optimizer  # free AdamW state before materializing the best weights
        _restore_best()
    finally:
        best_path.unlink(missing_ok=True)

    saved = None
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, model, config, history)
        saved = Path(checkpoint_path)
    return TrainResult(history, best_epoch, best_f1, saved, model, stopped_early)


@dataclass
class AblationRow:
    preset: str
    parameters: int
    seconds_per_epoch: float
    final_loss: float
    dev_f1_with_grounding: float

    def as_dict(self) -> dict:
        return vars(self).copy()


def _ablate_one(preset: str, train_corpus, dev_corpus, epochs: int, batch_size: int, seed: int) -> AblationRow:
    from .model import parameter_count

    config = TrainingConfig(
        model=ModelConfig(encoder=EncoderConfig(preset=preset)),
        batch_size=batch_size,
        max_epochs=epochs,
        early_stop_patience=epochs,
        seed=seed,
    )
    result = train(config, train_corpus, dev_corpus)
    return AblationRow(
        preset=preset,
        parameters=parameter_count(result.model),
        seconds_per_epoch=sum(r.seconds for r in result.history) / len(result.history),
        final_loss=result.history[-1].total_loss,
        dev_f1_with_grounding=result.history[-1].dev_f1_with_grounding,
    )


_ABLATION_DRIVER = """
import json, sys
import torch
torch.set_num_threads(1)
from tage.corpus import load_corpus
from tage.training import _ablate_one
preset, corpus_path, epochs, batch_size, seed = sys.argv[1:6]
corpus = load_corpus(corpus_path)
row = _ablate_one(preset, corpus, corpus, int(epochs), int(batch_size), int(seed))
print("ABLATION " + json.dumps(row.as_dict()))
"""


def _ablate_isolated(preset: str, corpus_path: str, epochs: int, batch_size: int, seed: int) -> AblationRow:
    import subprocess
    import sys

    proc = subprocess.run(
        [sys.executable, "-c", _ABLATION_DRIVER, preset, corpus_path, str(epochs), str(batch_size), str(seed)],
        capture_output=True,
        text=True,
    )
    if proc.returncode != 0:
        raise RuntimeError(f"isolated {preset} run failed (exit {proc.returncode}): {proc.stderr[-500:]}")
    for line in proc.stdout.splitlines():
        if line.startswith("ABLATION "):
            return AblationRow(**json.loads(line[len("ABLATION "):]))
    raise RuntimeError(f"isolated {preset} run produced no result line")


def encoder_ablation(
    train_corpus: list[AnnotatedInstruction],
    presets: tuple[str, ...] = ("mini", "small", "medium", "base", "large"),
    epochs: int = 2,
    batch_size: int = 16,
    seed: int = 13,
    isolate: bool = False,
    log_fn=None,
) -> list[AblationRow]:
    """Train each encoder preset briefly and report parameter counts and timings.

    The training corpus doubles as the dev split.  With ``isolate`` each
    preset trains in a fresh subprocess; the large preset's AdamW state
    nearly fills a small-memory host, so leftover allocations from earlier
    presets must not stack on top of it.
    """
    import gc
    import tempfile

    rows = []
    corpus_file = None
    if isolate:
        from .corpus import save_corpus

        corpus_file = tempfile.NamedTemporaryFile(mode="w", suffix=".jsonl", delete=False)
        corpus_file.close()
        save_corpus(train_corpus, corpus_file.name)
    try:
        for preset in presets:
            if isolate:
                row = _ablate_isolated(preset, corpus_file.name, epochs, batch_size, seed)
            else:
                row = _ablate_one(preset, train_corpus, train_corpus, epochs, batch_size, seed)
            rows.append(row)
            if log_fn:
                log_fn(row)
            gc.collect()
    finally:
        if corpus_file is not None:
            Path(corpus_file.name).unlink(missing_ok=True)
    return rows


def save_checkpoint(path: str | Path, model: GroundedInstructionParser,
                    config: TrainingConfig | None = None, history: list[EpochRecord] | None = None) -> None:
    """Self-describing archive: weights + model config + vocabularies + tokenizer + history."""
    payload = {
        "format_version": 1,
        "model_config": model.config.as_dict(),
        "vocab": model.vocab.as_config_dict(),
        "tokenizer_pieces": list(model.encoder.tokenizer.pieces),
        "state_dict": model.state_dict(),
        "training_config": None
        if config is None
        else {
            "batch_size": config.batch_size,
            "learning_rate": config.learning_rate,
            "weight_decay": config.weight_decay,
            "max_epochs": config.max_epochs,
            "early_stop_patience": config.early_stop_patience,
            "seed": config.seed,
            "grad_clip": config.grad_clip,
        },
        "history": [r.as_dict() for r in (history or [])],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


@dataclass
class LoadedModel:
    model: GroundedInstructionParser
    config: ModelConfig
    vocab: LabelVocabularies
    training_config: dict | None
    history: list[dict]

    @property
    def hidden_dim(self) -> int:
        return self.model.hidden_dim


def _vocab_diff(expected: LabelVocabularies, found: LabelVocabularies) -> list[str]:
    diffs = []
    for name in ("task_types", "arg_types", "object_classes"):
        a, b = getattr(expected, name), getattr(found, name)
        if a != b:
            diffs.append(f"{name}: expected {len(a)} labels, checkpoint has {len(b)}")
    if expected.num_bio_tags != found.num_bio_tags:
        diffs.append(f"BIO tag count K {expected.num_bio_tags} != {found.num_bio_tags}")
    return diffs


def load_checkpoint(path: str | Path, expect_vocab: LabelVocabularies | None = None) -> LoadedModel:
    """Restore a checkpoint; refuses (with a diff report) when vocabularies mismatch."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    payload = torch.load(path, map_location="cpu", weights_only=False)
    vocab = LabelVocabularies(
        task_types=tuple(payload["vocab"]["task_types"]),
        arg_types=tuple(payload["vocab"]["argument_types"]),
        object_classes=tuple(payload["vocab"]["object_classes"]),
    )
    if expect_vocab is not None:
        diffs = _vocab_diff(expect_vocab, vocab)
        if diffs:
            raise CheckpointMismatchError("checkpoint vocabulary mismatch: " + "; ".join(diffs))
    config = ModelConfig.from_dict(payload["model_config"])
    tokenizer = WordPieceTokenizer(payload["tokenizer_pieces"])
    model = build_model(config, vocab, tokenizer)
    try:
        model.load_state_dict(payload["state_dict"])
    except RuntimeError as exc:
        raise CheckpointMismatchError(f"checkpoint weights do not fit the stored config: {exc}") from None
    model.eval()
    return LoadedModel(model, config, vocab, payload.get("training_config"), payload.get("history", []))
