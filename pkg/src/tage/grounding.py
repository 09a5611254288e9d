"""Object grounding as per-token BIO sequence labeling.

Every token gets a K-way softmax over the BIO tag set derived from the
object vocabulary (K = 2 * #classes + 1).  Decoding the argmax tags yields
disjoint object spans; each extracted argument span is then assigned the
class of the overlapping object span.  Because grounding is one-shot
sequence labeling, a span shared by several tasks always grounds to the
same class.  The tag distribution matrix also feeds the argument span
detector as extra per-token features.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .vocabulary import OUTSIDE_TAG, LabelVocabularies

ObjectSpan = tuple[int, int, str]


@dataclass
class GroundingOutput:
    tag_distributions: torch.Tensor  # (batch, n, K), rows softmax-normalized
    decoded_spans: list[list[ObjectSpan]]


class GroundingHead(nn.Module):
    def __init__(self, enc_dim: int, num_tags: int):
        super().__init__()
        self.proj = nn.Linear(enc_dim, num_tags)

    def forward(self, enc_vectors: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.proj(enc_vectors), dim=-1)


def tags_from_distributions(tag_distributions: torch.Tensor, vocab: LabelVocabularies) -> list[str]:
    """Argmax tag string per token for a single instruction (n, K)."""
    indices = tag_distributions.argmax(dim=-1).tolist()
    return [vocab.bio_tags[i] for i in indices]


def decode_bio_tags(tags: list[str]) -> list[ObjectSpan]:
    """Turn a BIO tag sequence into (start, end, class) spans.

    Repair rule for noisy predictions: an I-X without a preceding B-X/I-X
    opens a new span of class X instead of being dropped.
    """
    spans: list[ObjectSpan] = []
    current: list | None = None  # [start, end, class]
    for i, tag in enumerate(tags):
        if tag == OUTSIDE_TAG or len(tag) < 3 or tag[1] != "-":
            current = None
            continue
        marker, cls = tag[0], tag[2:]
        if marker == "B" or current is None or current[2] != cls:
            current = [i, i, cls]
            spans.append(current)
        else:
            current[1] = i
    return [(s, e, c) for s, e, c in spans]


def decode_bio(tag_distributions: torch.Tensor, vocab: LabelVocabularies) -> list[ObjectSpan]:
    """Decode one instruction's (n, K) tag distribution matrix into object spans."""
    return decode_bio_tags(tags_from_distributions(tag_distributions, vocab))


def tags_from_spans(n: int, spans: list[ObjectSpan]) -> list[str]:
    """Re-emit a well-formed BIO sequence from (start, end, class) spans."""
    tags = [OUTSIDE_TAG] * n
    for start, end, cls in spans:
        tags[start] = f"B-{cls}"
        for i in range(start + 1, end + 1):
            tags[i] = f"I-{cls}"
    return tags


def span_overlap(a: tuple[int, int], b: tuple[int, int]) -> int:
    return max(0, min(a[1], b[1]) - max(a[0], b[0]) + 1)


def assign_grounding(arg_span: tuple[int, int], spans: list[ObjectSpan]) -> str | None:
    """Class of the object span with maximum token overlap; None when nothing overlaps.

    Ties go to the earlier span.
    """
    best_class = None
    best_overlap = 0
    for start, end, cls in spans:
        ov = span_overlap(arg_span, (start, end))
        if ov > best_overlap:
            best_overlap = ov
            best_class = cls
    return best_class


def ground_batch(tag_distributions: torch.Tensor, mask: torch.Tensor, vocab: LabelVocabularies) -> GroundingOutput:
    """Decode object spans per instruction from batched tag distributions."""
    decoded = []
    for i in range(tag_distributions.shape[0]):
        n = int(mask[i].sum().item())
        decoded.append(decode_bio(tag_distributions[i, :n], vocab))
    return GroundingOutput(tag_distributions, decoded)
