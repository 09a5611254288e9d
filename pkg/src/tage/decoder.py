"""Nested auto-regressive decoding of tasks and their arguments.

An outer LSTM decoder emits one task per step; after each task, an inner
LSTM decoder emits that task's arguments until it predicts the reserved EOS
argument type, then control returns to the outer loop, which itself stops
at the EOS task type (or at the step limits).  Each decoder step attends
over the encoder states (additive attention conditioned on the recurrent
state), feeds the running sum of previously generated task/argument
vectors back in, detects a span, and classifies its type from the span
representation and the decoder hidden state.

Teacher-forced mode follows the gold step schedule and feeds gold
information back: the span representation pooled at the gold start/end
positions concatenated with the gold type embedding.  At inference the
same construction uses the greedily selected span and the predicted type.
EOS steps contribute a zero vector to the running sums.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn

from .corpus import AnnotatedInstruction
from .encoder import EncoderStates
from .spans import SpanDetector, SpanPrediction, greedy_select, hard_span_vector, init_lstm_forget_bias, masked_softmax
from .vocabulary import LabelVocabularies


@dataclass
class DecodeLimits:
    max_task_cnt: int = 8
    max_arg_cnt: int = 8

    def __post_init__(self):
        if self.max_task_cnt < 1 or self.max_arg_cnt < 1:
            raise ValueError("decode limits must be >= 1")


@dataclass
class StepOutput:
    """One decoder step's distributions plus (in teacher-forced mode) its gold targets."""

    start_dist: torch.Tensor
    end_dist: torch.Tensor
    type_dist: torch.Tensor
    gold_start: int | None = None
    gold_end: int | None = None
    gold_type: int | None = None
    is_eos: bool = False


@dataclass
class TaskStepTrace:
    """Introspection record of one outer step (step states, attention, feedback sums)."""

    context: torch.Tensor
    hidden: torch.Tensor
    attention_weights: torch.Tensor
    prev_sum_before: torch.Tensor
    feedback: torch.Tensor | None  # b_j; None for EOS steps
    span: SpanPrediction
    type_dist: torch.Tensor


@dataclass
class DecodedArgument:
    start: int
    end: int
    type_index: int


@dataclass
class DecodedTask:
    start: int
    end: int
    type_index: int
    args: list[DecodedArgument] = field(default_factory=list)


@dataclass
class InstructionDecode:
    """Everything one instruction's decode produced.

    ``tasks`` follows inference semantics (nothing at or after EOS);
    ``task_steps``/``arg_steps`` hold every recorded step for the loss.
    """

    tasks: list[DecodedTask]
    task_steps: list[StepOutput]
    arg_steps: list[StepOutput]
    task_traces: list[TaskStepTrace] = field(default_factory=list)


class AdditiveAttention(nn.Module):
    def __init__(self, query_dim: int, key_dim: int, attn_dim: int):
        super().__init__()
        self.query_proj = nn.Linear(query_dim, attn_dim)
        self.key_proj = nn.Linear(key_dim, attn_dim)
        self.score = nn.Linear(attn_dim, 1)

    def forward(self, query: torch.Tensor, keys: torch.Tensor, mask: torch.Tensor):
        scores = self.score(torch.tanh(self.query_proj(query).unsqueeze(1) + self.key_proj(keys))).squeeze(-1)
        weights = masked_softmax(scores, mask)
        context = torch.einsum("bn,bnd->bd", weights, keys)
        return context, weights


class NestedDecoder(nn.Module):
    def __init__(self, enc_dim: int, vocab: LabelVocabularies, type_emb_dim: int | None = None):
        super().__init__()
        d = enc_dim
        emb = type_emb_dim if type_emb_dim is not None else max(d // 4, 8)
        self.enc_dim = d
        self.type_emb_dim = emb
        self.num_task_labels = vocab.num_task_labels
        self.num_arg_labels = vocab.num_arg_labels
        self.task_eos = vocab.task_eos_index
        self.arg_eos = vocab.arg_eos_index
        self.num_bio_tags = vocab.num_bio_tags

        self.task_span_detector = SpanDetector(query_dim=d, enc_dim=d)
        self.arg_span_detector = SpanDetector(query_dim=d, enc_dim=d, extra_dim=vocab.num_bio_tags)
        span_w_task = self.task_span_detector.span_vector_width
        span_w_arg = self.arg_span_detector.span_vector_width

        self.task_vec_width = span_w_task + emb
        self.arg_vec_width = span_w_arg + emb
        self.task_cell = nn.LSTMCell(d + self.task_vec_width, d)
        self.arg_cell = nn.LSTMCell(d + d + self.arg_vec_width, d)
        self.task_attention = AdditiveAttention(d, d, d)
        self.arg_attention = AdditiveAttention(d, d, d)
        self.task_type_norm = nn.LayerNorm(span_w_task + d)
        self.arg_type_norm = nn.LayerNorm(span_w_arg + d)
        self.task_type_head = nn.Linear(span_w_task + d, self.num_task_labels)
        self.arg_type_head = nn.Linear(span_w_arg + d, self.num_arg_labels)
        self.task_type_embedding = nn.Embedding(self.num_task_labels, emb)
        self.arg_type_embedding = nn.Embedding(self.num_arg_labels, emb)
        init_lstm_forget_bias(self.task_cell)
        init_lstm_forget_bias(self.arg_cell)

    def _zeros(self, width: int, like: torch.Tensor) -> torch.Tensor:
        return torch.zeros(1, width, dtype=like.dtype, device=like.device)

    def decode(
        self,
        enc: EncoderStates,
        grounding_probs: torch.Tensor,
        limits: DecodeLimits,
        gold: tuple[list, LabelVocabularies] | None = None,
        keep_traces: bool = False,
    ) -> InstructionDecode:
        """Run the nested decode for a single instruction (batch of 1).

        With ``gold`` (the instruction's task records plus the vocabulary),
        the step schedule is teacher-forced: one step per gold task plus an
        EOS step, and per task one step per gold argument plus an EOS step,
        recording every distribution for the loss.  Without it, decoding is
        greedy and stops at EOS or at the limits.
        """
        vectors, mask = enc.vectors, enc.mask
        assert vectors.shape[0] == 1, "decode operates on one instruction at a time"
        result = InstructionDecode(tasks=[], task_steps=[], arg_steps=[])

        h = self._zeros(self.enc_dim, vectors)
        c = self._zeros(self.enc_dim, vectors)
        b_sum = self._zeros(self.task_vec_width, vectors)

        teacher = gold is not None
        if teacher:
            gold_tasks, vocab = gold
            n_task_steps = len(gold_tasks) + 1
        else:
            n_task_steps = limits.max_task_cnt

        for j in range(n_task_steps):
            context, attn = self.task_attention(h, vectors, mask)
            prev_sum_before = b_sum
            h, c = self.task_cell(torch.cat([context, b_sum], dim=-1), (h, c))
            span = self.task_span_detector(h, vectors, mask)

            if teacher:
                is_eos = j == len(gold_tasks)
                if is_eos:
                    # no gold span at the end-of-sequence step: classify from
                    # the greedily selected span, as inference will
                    with torch.no_grad():
                        sel = greedy_select(span.start_dist, span.end_dist)
                    u = hard_span_vector(span.token_states, *sel)
                    type_dist = torch.softmax(self.task_type_head(self.task_type_norm(torch.cat([u, h], dim=-1))), dim=-1)
                    result.task_steps.append(
                        StepOutput(span.start_dist[0], span.end_dist[0], type_dist[0], gold_type=self.task_eos, is_eos=True)
                    )
                    feedback = None
                else:
                    g = gold_tasks[j]
                    gold_type = vocab.encode("task", g.task_type)
                    # teacher forcing: type input and feedback pool at the gold span
                    u = hard_span_vector(span.token_states, g.start, g.end)
                    type_dist = torch.softmax(self.task_type_head(self.task_type_norm(torch.cat([u, h], dim=-1))), dim=-1)
                    result.task_steps.append(
                        StepOutput(span.start_dist[0], span.end_dist[0], type_dist[0], g.start, g.end, gold_type)
                    )
                    feedback = torch.cat([u, self.task_type_embedding.weight[gold_type].unsqueeze(0)], dim=-1)
                    b_sum = b_sum + feedback
                    self._decode_args(result, enc, grounding_probs, h, g.args, vocab, None)
                if keep_traces:
                    result.task_traces.append(TaskStepTrace(context[0], h[0], attn[0], prev_sum_before[0], None if is_eos else feedback[0], span, type_dist[0]))
                continue

            # inference: hard span selection, predicted type
            start, end = greedy_select(span.start_dist, span.end_dist)
            u = hard_span_vector(span.token_states, start, end)
            type_dist = torch.softmax(self.task_type_head(self.task_type_norm(torch.cat([u, h], dim=-1))), dim=-1)
            type_index = int(type_dist.argmax(dim=-1).item())
            result.task_steps.append(StepOutput(span.start_dist[0], span.end_dist[0], type_dist[0], is_eos=type_index == self.task_eos))
            if keep_traces:
                result.task_traces.append(TaskStepTrace(context[0], h[0], attn[0], prev_sum_before[0], None, span, type_dist[0]))
            if type_index == self.task_eos:
                break
            task = DecodedTask(start, end, type_index)
            result.tasks.append(task)
            feedback = torch.cat([u, self.task_type_embedding.weight[type_index].unsqueeze(0)], dim=-1)
            b_sum = b_sum + feedback
            self._decode_args(result, enc, grounding_probs, h, None, None, task, limits=limits)

        return result

    def _decode_args(self, result, enc, grounding_probs, task_hidden, gold_args, vocab, task, limits=None):
        """Inner loop for one task; fresh recurrent state per task."""
        vectors, mask = enc.vectors, enc.mask
        h = self._zeros(self.enc_dim, vectors)
        c = self._zeros(self.enc_dim, vectors)
        c_sum = self._zeros(self.arg_vec_width, vectors)
        teacher = gold_args is not None
        n_steps = len(gold_args) + 1 if teacher else limits.max_arg_cnt

        for k in range(n_steps):
            context, _ = self.arg_attention(h, vectors, mask)
            h, c = self.arg_cell(torch.cat([task_hidden, context, c_sum], dim=-1), (h, c))
            span = self.arg_span_detector(h, vectors, mask, extra_features=grounding_probs)

            if teacher:
                is_eos = k == len(gold_args)
                if is_eos:
                    with torch.no_grad():
                        sel = greedy_select(span.start_dist, span.end_dist)
                    p = hard_span_vector(span.token_states, *sel)
                    type_dist = torch.softmax(self.arg_type_head(self.arg_type_norm(torch.cat([p, h], dim=-1))), dim=-1)
                    result.arg_steps.append(
                        StepOutput(span.start_dist[0], span.end_dist[0], type_dist[0], gold_type=self.arg_eos, is_eos=True)
                    )
                else:
                    g = gold_args[k]
                    gold_type = vocab.encode("argument", g.arg_type)
                    p = hard_span_vector(span.token_states, g.start, g.end)
                    type_dist = torch.softmax(self.arg_type_head(self.arg_type_norm(torch.cat([p, h], dim=-1))), dim=-1)
                    result.arg_steps.append(
                        StepOutput(span.start_dist[0], span.end_dist[0], type_dist[0], g.start, g.end, gold_type)
                    )
                    feedback = torch.cat([p, self.arg_type_embedding.weight[gold_type].unsqueeze(0)], dim=-1)
                    c_sum = c_sum + feedback
                continue

            start, end = greedy_select(span.start_dist, span.end_dist)
            p = hard_span_vector(span.token_states, start, end)
            type_dist = torch.softmax(self.arg_type_head(self.arg_type_norm(torch.cat([p, h], dim=-1))), dim=-1)
            type_index = int(type_dist.argmax(dim=-1).item())
            result.arg_steps.append(StepOutput(span.start_dist[0], span.end_dist[0], type_dist[0], is_eos=type_index == self.arg_eos))
            if type_index == self.arg_eos:
                break
            task.args.append(DecodedArgument(start, end, type_index))
            feedback = torch.cat([p, self.arg_type_embedding.weight[type_index].unsqueeze(0)], dim=-1)
            c_sum = c_sum + feedback
