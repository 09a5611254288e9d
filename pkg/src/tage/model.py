"""Full parsing model: encoder + grounding head + nested decoder."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn

from .corpus import AnnotatedInstruction
from .decoder import DecodeLimits, InstructionDecode, NestedDecoder
from .encoder import EncoderConfig, EncoderStates, InstructionEncoder, WordPieceTokenizer
from .grounding import GroundingHead, GroundingOutput, ground_batch
from .vocabulary import LabelVocabularies


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    limits: DecodeLimits = field(default_factory=DecodeLimits)
    type_emb_dim: int | None = None  # defaults to hidden_dim // 4

    def as_dict(self) -> dict:
        return {
            "encoder": {
                "preset": self.encoder.preset,
                "max_subword_len": self.encoder.max_subword_len,
                "dropout": self.encoder.dropout,
                "freeze": self.encoder.freeze,
                "pretrained": self.encoder.pretrained,
            },
            "limits": {"max_task_cnt": self.limits.max_task_cnt, "max_arg_cnt": self.limits.max_arg_cnt},
            "type_emb_dim": self.type_emb_dim,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        return cls(
            encoder=EncoderConfig(**doc["encoder"]),
            limits=DecodeLimits(**doc["limits"]),
            type_emb_dim=doc.get("type_emb_dim"),
        )


@dataclass
class InstructionOutputs:
    """Teacher-forced outputs for one instruction, ready for the loss."""

    decode: InstructionDecode
    grounding_probs: torch.Tensor  # (n, K)
    gold_bio: torch.Tensor | None  # (n,) tag indices


@dataclass
class PredictionOutputs:
    decode: InstructionDecode
    grounding: GroundingOutput


class GroundedInstructionParser(nn.Module):
    """Joint model for task extraction, argument extraction, and object grounding."""

    def __init__(self, config: ModelConfig, vocab: LabelVocabularies, tokenizer: WordPieceTokenizer | None = None):
        super().__init__()
        self.config = config
        self.vocab = vocab
        self.encoder = InstructionEncoder(config.encoder, tokenizer)
        d = self.encoder.hidden_dim
        self.grounding_head = GroundingHead(d, vocab.num_bio_tags)
        self.decoder = NestedDecoder(d, vocab, config.type_emb_dim)

    @property
    def hidden_dim(self) -> int:
        return self.encoder.hidden_dim

    def encode(self, batch_tokens, idents=None) -> EncoderStates:
        return self.encoder.encode(batch_tokens, idents)

    def forward_teacher(self, batch: list[AnnotatedInstruction]) -> list[InstructionOutputs]:
        """Teacher-forced forward pass over a batch, one output bundle per instruction."""
        enc = self.encode([inst.tokens for inst in batch])
        grounding = self.grounding_head(enc.vectors)
        outputs = []
        for i, inst in enumerate(batch):
            single = enc.select(i)
            n = single.vectors.shape[1]
            probs = grounding[i : i + 1, :n]
            decode = self.decoder.decode(single, probs, self.config.limits, gold=(inst.tasks, self.vocab))
            gold_bio = torch.tensor([self.vocab.encode("bio", t) for t in inst.bio_tags], dtype=torch.long)
            outputs.append(InstructionOutputs(decode, probs[0], gold_bio))
        return outputs

    @torch.no_grad()
    def predict_tokens(self, batch_tokens: list[list[str]], limits: DecodeLimits | None = None,
                       keep_traces: bool = False) -> list[PredictionOutputs]:
        """Greedy inference over pre-split instructions."""
        was_training = self.training
        self.eval()
        try:
            enc = self.encode(batch_tokens)
            grounding_probs = self.grounding_head(enc.vectors)
            grounding = ground_batch(grounding_probs, enc.mask, self.vocab)
            results = []
            for i in range(len(batch_tokens)):
                single = enc.select(i)
                n = single.vectors.shape[1]
                probs = grounding_probs[i : i + 1, :n]
                decode = self.decoder.decode(single, probs, limits or self.config.limits, keep_traces=keep_traces)
                results.append(
                    PredictionOutputs(decode, GroundingOutput(probs, [grounding.decoded_spans[i]]))
                )
            return results
        finally:
            self.train(was_training)


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def build_model(config: ModelConfig, vocab: LabelVocabularies | None = None,
                tokenizer: WordPieceTokenizer | None = None) -> GroundedInstructionParser:
    return GroundedInstructionParser(config, vocab or LabelVocabularies(), tokenizer)
