"""Contextual instruction encoder.

Words are split into sub-word pieces (greedy longest-match wordpiece with a
character fallback, lowercased), run through a transformer encoder, and
pooled back to one vector per word by averaging each word's piece vectors.
Five size presets fix the transformer geometry:

    mini   4 layers x 256      base   12 layers x 768
    small  4 layers x 512      large  24 layers x 1024
    medium 8 layers x 512

Weights initialize from a seeded random state and train jointly with the
rest of the model; a state dict exported from elsewhere can be loaded by
name through the ``TAGE_CACHE_DIR`` weight cache (``pretrained`` config
string), since this environment has no model-hub access.
"""

from __future__ import annotations

import os
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import torch
from torch import nn

from .generator import lexicon_words

PRESET_SHAPES = {
    "mini": (4, 256),
    "small": (4, 512),
    "medium": (8, 512),
    "base": (12, 768),
    "large": (24, 1024),
}

PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, SEP_TOKEN = "[PAD]", "[UNK]", "[CLS]", "[SEP]"

# Function words beyond the corpus lexicon so free-form inputs mostly
# tokenize as whole words; anything else falls back to characters.
_EXTRA_WORDS = (
    "an at by do does for get give i not of off one or over please robot she he "
    "some that there these those to under was were what where which will would your"
).split()


class TokenizationError(ValueError):
    """Instruction cannot be tokenized (over-length); carries the instruction id."""

    def __init__(self, message: str, ident: str | None = None):
        self.ident = ident
        prefix = f"instruction {ident}: " if ident is not None else ""
        super().__init__(prefix + message)


def default_piece_vocabulary() -> list[str]:
    """Deterministic piece list: specials, whole words, then character pieces."""
    words = sorted(lexicon_words() | set(_EXTRA_WORDS))
    chars = list(string.ascii_lowercase + string.digits) + ["'", "-", ".", ",", "?", "!"]
    pieces = [PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, SEP_TOKEN]
    pieces.extend(words)
    pieces.extend(c for c in chars if c not in pieces)
    pieces.extend("##" + c for c in chars)
    return pieces


@dataclass
class SubwordEncoding:
    """Piece ids for one instruction plus the word -> piece alignment.

    ``word_ranges[i]`` is the half-open (start, stop) range of positions in
    ``piece_ids`` holding word i's pieces.  Ranges are disjoint, ordered,
    and cover every position except the boundary markers at both ends.
    """

    piece_ids: list[int]
    word_ranges: list[tuple[int, int]]


class WordPieceTokenizer:
    def __init__(self, pieces: Sequence[str] | None = None):
        self.pieces = list(pieces) if pieces is not None else default_piece_vocabulary()
        self.piece_to_id = {p: i for i, p in enumerate(self.pieces)}
        for special in (PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, SEP_TOKEN):
            if special not in self.piece_to_id:
                raise ValueError(f"piece vocabulary lacks {special}")
        self.pad_id = self.piece_to_id[PAD_TOKEN]
        self.unk_id = self.piece_to_id[UNK_TOKEN]
        self.cls_id = self.piece_to_id[CLS_TOKEN]
        self.sep_id = self.piece_to_id[SEP_TOKEN]

    def __len__(self) -> int:
        return len(self.pieces)

    def word_pieces(self, word: str) -> list[str]:
        """Greedy longest-match split of one (lowercased) word."""
        word = word.lower()
        out = []
        pos = 0
        while pos < len(word):
            prefix = "##" if pos > 0 else ""
            end = len(word)
            while end > pos:
                cand = prefix + word[pos:end]
                if cand in self.piece_to_id:
                    out.append(cand)
                    break
                end -= 1
            else:
                out.append(UNK_TOKEN)
                end = pos + 1
            pos = end
        return out or [UNK_TOKEN]

    def encode_words(self, words: Sequence[str], max_len: int | None = None, ident: str | None = None) -> SubwordEncoding:
        """Tokenize pre-split words into [CLS] pieces... [SEP] with alignment."""
        if not words:
            raise TokenizationError("empty token list", ident)
        ids = [self.cls_id]
        ranges = []
        for word in words:
            start = len(ids)
            ids.extend(self.piece_to_id.get(p, self.unk_id) for p in self.word_pieces(word))
            ranges.append((start, len(ids)))
        ids.append(self.sep_id)
        if max_len is not None and len(ids) > max_len:
            raise TokenizationError(f"{len(ids)} sub-word units exceed the limit of {max_len}", ident)
        return SubwordEncoding(ids, ranges)


@dataclass
class EncoderConfig:
    preset: str = "mini"
    max_subword_len: int = 128
    dropout: float = 0.0
    freeze: bool = False
    pretrained: str | None = None  # weight-cache identifier, resolved under TAGE_CACHE_DIR

    def __post_init__(self):
        if self.preset not in PRESET_SHAPES:
            raise ValueError(f"unknown encoder preset {self.preset!r}; choose from {sorted(PRESET_SHAPES)}")

    @property
    def num_layers(self) -> int:
        return PRESET_SHAPES[self.preset][0]

    @property
    def hidden_dim(self) -> int:
        return PRESET_SHAPES[self.preset][1]

    @property
    def num_heads(self) -> int:
        return self.hidden_dim // 64

    @property
    def ffn_dim(self) -> int:
        # 2x rather than the conventional 4x keeps the large preset trainable
        # in a few GB of RAM; geometry per preset is (layers, hidden) anyway.
        return 2 * self.hidden_dim


@dataclass
class EncoderStates:
    """Word-level contextual vectors (batch, n, d_h) with a validity mask (batch, n)."""

    vectors: torch.Tensor
    mask: torch.Tensor

    @property
    def batch_size(self) -> int:
        return self.vectors.shape[0]

    def length(self, i: int) -> int:
        return int(self.mask[i].sum().item())

    def select(self, i: int) -> "EncoderStates":
        """Single-instruction view, truncated to its true length (no padding)."""
        n = self.length(i)
        return EncoderStates(self.vectors[i : i + 1, :n], self.mask[i : i + 1, :n])


class InstructionEncoder(nn.Module):
    def __init__(self, config: EncoderConfig, tokenizer: WordPieceTokenizer | None = None):
        super().__init__()
        self.config = config
        self.tokenizer = tokenizer or WordPieceTokenizer()
        d = config.hidden_dim
        self.piece_embedding = nn.Embedding(len(self.tokenizer), d, padding_idx=self.tokenizer.pad_id)
        self.position_embedding = nn.Embedding(config.max_subword_len, d)
        self.embedding_norm = nn.LayerNorm(d)
        self.embedding_dropout = nn.Dropout(config.dropout)
        layer = nn.TransformerEncoderLayer(
            d_model=d,
            nhead=config.num_heads,
            dim_feedforward=config.ffn_dim,
            dropout=config.dropout,
            activation="gelu",
            batch_first=True,
            norm_first=True,
        )
        self.transformer = nn.TransformerEncoder(layer, config.num_layers, norm=nn.LayerNorm(d), enable_nested_tensor=False)
        if config.freeze:
            for p in self.parameters():
                p.requires_grad_(False)

    @property
    def hidden_dim(self) -> int:
        return self.config.hidden_dim

    def tokenize_align(self, words: Sequence[str], ident: str | None = None) -> SubwordEncoding:
        return self.tokenizer.encode_words(words, self.config.max_subword_len, ident)

    def forward_pieces(self, piece_ids: torch.Tensor, pad_mask: torch.Tensor) -> torch.Tensor:
        """Run the transformer over piece ids (batch, p); pad_mask True at padding."""
        positions = torch.arange(piece_ids.shape[1], device=piece_ids.device)
        x = self.piece_embedding(piece_ids) + self.position_embedding(positions)
        x = self.embedding_dropout(self.embedding_norm(x))
        return self.transformer(x, src_key_padding_mask=pad_mask)

    def encode(self, batch_tokens: Sequence[Sequence[str]], idents: Sequence[str] | None = None) -> EncoderStates:
        """Encode pre-split instructions into word-level vectors.

        Each word's vector is the mean of its sub-word vectors, so padding
        one instruction never touches another's outputs.
        """
        encodings = [
            self.tokenize_align(words, idents[i] if idents is not None else str(i))
            for i, words in enumerate(batch_tokens)
        ]
        device = self.piece_embedding.weight.device
        max_pieces = max(len(e.piece_ids) for e in encodings)
        piece_ids = torch.full((len(encodings), max_pieces), self.tokenizer.pad_id, dtype=torch.long, device=device)
        pad_mask = torch.ones((len(encodings), max_pieces), dtype=torch.bool, device=device)
        for i, enc in enumerate(encodings):
            piece_ids[i, : len(enc.piece_ids)] = torch.tensor(enc.piece_ids, dtype=torch.long, device=device)
            pad_mask[i, : len(enc.piece_ids)] = False
        states = self.forward_pieces(piece_ids, pad_mask)

        max_words = max(len(e.word_ranges) for e in encodings)
        dtype = states.dtype
        vectors = torch.zeros((len(encodings), max_words, self.hidden_dim), dtype=dtype, device=device)
        mask = torch.zeros((len(encodings), max_words), dtype=torch.bool, device=device)
        for i, enc in enumerate(encodings):
            for w, (start, stop) in enumerate(enc.word_ranges):
                vectors[i, w] = states[i, start:stop].mean(dim=0)
            mask[i, : len(enc.word_ranges)] = True
        return EncoderStates(vectors, mask)


def resolve_weight_cache() -> Path:
    return Path(os.environ.get("TAGE_CACHE_DIR", str(Path.home() / ".cache" / "tage"))).expanduser()


def load_pretrained_weights(encoder: InstructionEncoder, identifier: str) -> None:
    """Load cached encoder weights by identifier from TAGE_CACHE_DIR."""
    path = resolve_weight_cache() / f"{identifier}.pt"
    if not path.exists():
        raise FileNotFoundError(
            f"no cached weights {identifier!r} under {resolve_weight_cache()} (set TAGE_CACHE_DIR)"
        )
    state = torch.load(path, map_location="cpu", weights_only=True)
    encoder.load_state_dict(state)


def build_encoder(config: EncoderConfig, tokenizer: WordPieceTokenizer | None = None) -> InstructionEncoder:
    encoder = InstructionEncoder(config, tokenizer)
    if config.pretrained is not None:
        load_pretrained_weights(encoder, config.pretrained)
    return encoder
