"""Shared span-identification block.

A decoder hidden vector (the query) is concatenated with every encoder
vector (plus optional extra per-token features), passed through a BiLSTM,
and scored by two independent feed-forward heads whose outputs softmax over
token positions into start and end distributions.  The span representation
is the pair of probability-weighted sums of the BiLSTM outputs under the
start and end distributions, concatenated; at inference the hard variant
indexes the BiLSTM outputs at the selected positions instead.

Two instances with identical design but unshared weights are used: one for
task spans and one for argument spans (the latter additionally consumes the
grounding tag distributions as extra features).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

NEG_INF = float("-inf")


def init_lstm_forget_bias(module: nn.Module, value: float = 1.0) -> None:
    """Set LSTM forget-gate biases to ``value`` (helps early recurrent flow)."""
    for name, param in module.named_parameters():
        if "bias" in name and param.dim() == 1 and param.shape[0] % 4 == 0:
            hidden = param.shape[0] // 4
            with torch.no_grad():
                param[hidden : 2 * hidden].fill_(value)


@dataclass
class SpanPrediction:
    """Start/end distributions over tokens plus the span representation.

    ``token_states`` holds the BiLSTM outputs (batch, n, w) so callers can
    re-pool at hard indices; masked positions carry probability 0.
    """

    start_dist: torch.Tensor
    end_dist: torch.Tensor
    span_vector: torch.Tensor
    token_states: torch.Tensor


def masked_softmax(scores: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    if not bool(mask.any(dim=-1).all()):
        raise ValueError("softmax over a fully masked row")
    return torch.softmax(scores.masked_fill(~mask, NEG_INF), dim=-1)


class SpanDetector(nn.Module):
    def __init__(self, query_dim: int, enc_dim: int, extra_dim: int = 0):
        super().__init__()
        self.query_dim = query_dim
        self.enc_dim = enc_dim
        self.extra_dim = extra_dim
        # capped width: beyond 256/direction the extra features buy little
        # and the largest encoder preset must stay trainable in a few GB
        hidden = max(min(enc_dim // 2, 256), 8)
        self.bilstm = nn.LSTM(enc_dim + query_dim + extra_dim, hidden, batch_first=True, bidirectional=True)
        self.out_width = 2 * hidden
        # normalized token states keep head logits well-scaled from the start
        self.out_norm = nn.LayerNorm(self.out_width)
        self.start_head = nn.Linear(self.out_width, 1)
        self.end_head = nn.Linear(self.out_width, 1)
        init_lstm_forget_bias(self.bilstm)

    @property
    def span_vector_width(self) -> int:
        return 2 * self.out_width

    def forward(self, query: torch.Tensor, enc_vectors: torch.Tensor, mask: torch.Tensor,
                extra_features: torch.Tensor | None = None) -> SpanPrediction:
        batch, n, _ = enc_vectors.shape
        if query.shape[-1] != self.query_dim:
            raise ValueError(f"query width {query.shape[-1]} != configured {self.query_dim}")
        parts = [enc_vectors, query.unsqueeze(1).expand(batch, n, self.query_dim)]
        if self.extra_dim:
            if extra_features is None or extra_features.shape[1] != n:
                raise ValueError("extra_features must be (batch, n, F) matching encoder length")
            parts.append(extra_features)
        x = torch.cat(parts, dim=-1)

        # pack so the backward direction never runs over padding
        lengths = mask.sum(dim=-1).cpu()
        packed = pack_padded_sequence(x, lengths, batch_first=True, enforce_sorted=False)
        z, _ = self.bilstm(packed)
        z, _ = pad_packed_sequence(z, batch_first=True, total_length=n)
        z = self.out_norm(z)

        start_dist = masked_softmax(self.start_head(z).squeeze(-1), mask)
        end_dist = masked_softmax(self.end_head(z).squeeze(-1), mask)
        span_vector = soft_span_vector(z, start_dist, end_dist)
        return SpanPrediction(start_dist, end_dist, span_vector, z)


def soft_span_vector(token_states: torch.Tensor, start_dist: torch.Tensor, end_dist: torch.Tensor) -> torch.Tensor:
    """Probability-weighted sums of token states under each distribution, concatenated."""
    start_part = torch.einsum("bn,bnw->bw", start_dist, token_states)
    end_part = torch.einsum("bn,bnw->bw", end_dist, token_states)
    return torch.cat([start_part, end_part], dim=-1)


def hard_span_vector(token_states: torch.Tensor, start: int, end: int) -> torch.Tensor:
    """Span representation from the selected start/end positions (batch of 1)."""
    return torch.cat([token_states[:, start], token_states[:, end]], dim=-1)


def greedy_select(start_dist: torch.Tensor, end_dist: torch.Tensor) -> tuple[int, int]:
    """Pick (start, end) maximizing start_dist[s] * end_dist[e] subject to s <= e.

    Ties break toward the smaller start, then the smaller end.  Masked-out
    positions must already carry probability 0; a row with no admissible
    pair (all probability massless) is an error.
    """
    s = start_dist.flatten()
    e = end_dist.flatten()
    n = s.shape[0]
    if n == 0:
        raise ValueError("empty distributions")
    products = s.unsqueeze(1) * e.unsqueeze(0)
    products = torch.where(
        torch.ones(n, n, dtype=torch.bool, device=s.device).triu(), products, torch.full_like(products, NEG_INF)
    )
    flat_idx = int(torch.argmax(products.flatten()).item())
    best = products.flatten()[flat_idx]
    if torch.isnan(best) or best <= 0:
        # softmax puts strictly positive mass on every unmasked position, so
        # this only triggers when everything admissible was masked out
        raise ValueError("no admissible (start, end) pair with positive probability")
    return flat_idx // n, flat_idx % n
