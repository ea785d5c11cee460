"""Contextual token encoders.

Two implementations satisfy the same contract: :class:`TinyEncoder`, a small
transformer trained from scratch, and :class:`PretrainedEncoderAdapter`, which
wraps a Hugging Face encoder.  Any module works as an encoder if it has a
``hidden_size`` attribute and ``forward(input_ids, valid_mask)`` returns an
:class:`EncoderOutput` where ``pooled`` is the position-0 hidden state.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import torch
from torch import nn

from .errors import EmptyText, OutOfVocab, ShapeMismatch

PAD, UNK, START = "[PAD]", "[UNK]", "[START]"
SPECIAL_TOKENS = (PAD, UNK, START)
PAD_ID, UNK_ID, START_ID = 0, 1, 2

_CJK = "\u3400-\u4dbf\u4e00-\u9fff"
_CJK_PUNCT = "\u3000-\u303f\uff00-\uffef"
_TOKEN_RE = re.compile(rf"[{_CJK}]|[{_CJK_PUNCT}]|[^\s{_CJK}{_CJK_PUNCT}]+")


def split_tokens(text: str) -> list[str]:
    """One token per CJK character or full-width symbol; whitespace-split runs otherwise."""
    return _TOKEN_RE.findall(text)


class Vocabulary:
    def __init__(self, tokens: Sequence[str] = ()):
        self.itos = list(SPECIAL_TOKENS)
        for tok in tokens:
            if tok not in SPECIAL_TOKENS:
                self.itos.append(tok)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("vocabulary tokens must be unique")

    @classmethod
    def build(cls, texts, min_freq: int = 1, max_size: Optional[int] = None) -> "Vocabulary":
        counts = Counter()
        for text in texts:
            counts.update(split_tokens(text))
        # frequency desc, then token for a deterministic order
        ranked = sorted((t for t, c in counts.items() if c >= min_freq), key=lambda t: (-counts[t], t))
        if max_size is not None:
            ranked = ranked[: max(0, max_size - len(SPECIAL_TOKENS))]
        return cls(ranked)

    def __len__(self) -> int:
        return len(self.itos)

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK_ID)

    def token(self, index: int) -> str:
        return self.itos[index]


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple
    tokens: tuple

    @property
    def length(self) -> int:
        return len(self.ids)

    @property
    def valid_mask(self) -> tuple:
        return (1,) * len(self.ids)


class Tokenizer:
    """Fallback tokenizer: a start token followed by :func:`split_tokens` pieces."""

    def __init__(self, vocab: Vocabulary):
        self.vocab = vocab

    def tokenize(self, text: str, max_len: int = 512) -> TokenSequence:
        if max_len < 2:
            raise ValueError("max_len must be at least 2")
        if not text or not text.strip():
            raise EmptyText("cannot tokenize empty text")
        pieces = split_tokens(text)[: max_len - 1]
        tokens = (START, *pieces)
        ids = tuple(START_ID if i == 0 else self.vocab.id(t) for i, t in enumerate(tokens))
        return TokenSequence(ids, tokens)


def pad_batch(seqs: Sequence[TokenSequence], pad_id: int = PAD_ID) -> tuple[torch.Tensor, torch.Tensor]:
    """Right-pad sequences; returns ``(input_ids, valid_mask)`` of shape (B, Z)."""
    width = max(s.length for s in seqs)
    ids = torch.full((len(seqs), width), pad_id, dtype=torch.long)
    mask = torch.zeros((len(seqs), width), dtype=torch.bool)
    for b, s in enumerate(seqs):
        ids[b, : s.length] = torch.tensor(s.ids, dtype=torch.long)
        mask[b, : s.length] = True
    return ids, mask


@dataclass
class EncoderOutput:
    """Encoder result for a padded batch.

    ``hidden`` is (B, Z, d), one row per token; the d x Z token matrix of one
    review is ``hidden[b, :length].T``.  ``pooled`` is (B, d).
    """

    hidden: torch.Tensor
    pooled: torch.Tensor
    valid_mask: torch.Tensor

    @property
    def d(self) -> int:
        return self.hidden.shape[-1]

    def token_matrix(self, b: int = 0) -> torch.Tensor:
        n = int(self.valid_mask[b].sum())
        return self.hidden[b, :n].T

    def check(self) -> None:
        B, Z, d = self.hidden.shape
        if self.pooled.shape != (B, d) or self.valid_mask.shape != (B, Z):
            raise ShapeMismatch(
                f"inconsistent encoder output: hidden {tuple(self.hidden.shape)}, "
                f"pooled {tuple(self.pooled.shape)}, mask {tuple(self.valid_mask.shape)}"
            )
        if not torch.isfinite(self.hidden).all():
            raise ShapeMismatch("encoder produced non-finite values")


@dataclass
class EncoderConfig:
    vocab_size: int
    d: int = 64
    layers: int = 2
    heads: int = 4
    max_len: int = 512
    ffn_mult: int = 4
    dropout: float = 0.0
    init_seed: int = 0

    def __post_init__(self):
        if self.d % self.heads:
            raise ValueError(f"hidden size {self.d} is not divisible by {self.heads} heads")
        if self.max_len < 2:
            raise ValueError("max_len must be at least 2")
        if min(self.vocab_size, self.d, self.layers, self.heads) < 1:
            raise ValueError("vocab_size, d, layers and heads must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def _validate_inputs(input_ids: torch.Tensor, valid_mask: torch.Tensor, vocab_size: int, max_len: int):
    if input_ids.dim() == 1:
        input_ids = input_ids.unsqueeze(0)
    if valid_mask is None:
        valid_mask = torch.ones_like(input_ids, dtype=torch.bool)
    elif valid_mask.dim() == 1:
        valid_mask = valid_mask.unsqueeze(0)
    valid_mask = valid_mask.bool()
    if input_ids.shape != valid_mask.shape:
        raise ShapeMismatch(f"ids {tuple(input_ids.shape)} vs mask {tuple(valid_mask.shape)}")
    if input_ids.shape[1] > max_len:
        raise ShapeMismatch(f"sequence length {input_ids.shape[1]} exceeds max_len {max_len}")
    if not valid_mask[:, 0].all():
        raise ShapeMismatch("every row needs a valid token at position 0")
    # padding must be a suffix
    if (valid_mask[:, 1:] & ~valid_mask[:, :-1]).any():
        raise ShapeMismatch("valid_mask must be a prefix of ones")
    if input_ids.numel() and (input_ids.min() < 0 or input_ids.max() >= vocab_size):
        raise OutOfVocab(f"token ids must lie in [0, {vocab_size})")
    return input_ids, valid_mask


class SelfAttention(nn.Module):
    def __init__(self, d: int, heads: int, dropout: float = 0.0):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(d, 3 * d)
        self.out = nn.Linear(d, d)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, valid_mask):
        B, Z, d = x.shape
        q, k, v = self.qkv(x).view(B, Z, 3, self.heads, d // self.heads).permute(2, 0, 3, 1, 4)
        scores = q @ k.transpose(-1, -2) / math.sqrt(d // self.heads)
        scores = scores.masked_fill(~valid_mask[:, None, None, :], torch.finfo(scores.dtype).min)
        attn = self.drop(scores.softmax(-1))
        return self.out((attn @ v).transpose(1, 2).reshape(B, Z, d))


class EncoderLayer(nn.Module):
    """Pre-norm transformer block."""

    def __init__(self, d: int, heads: int, ffn_mult: int = 4, dropout: float = 0.0):
        super().__init__()
        self.norm1 = nn.LayerNorm(d)
        self.attn = SelfAttention(d, heads, dropout)
        self.norm2 = nn.LayerNorm(d)
        self.ffn = nn.Sequential(nn.Linear(d, ffn_mult * d), nn.GELU(), nn.Linear(ffn_mult * d, d))
        self.drop = nn.Dropout(dropout)

    def forward(self, x, valid_mask):
        x = x + self.drop(self.attn(self.norm1(x), valid_mask))
        return x + self.drop(self.ffn(self.norm2(x)))


class TinyEncoder(nn.Module):
    """Small transformer encoder with learned positional embeddings."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        self.hidden_size = config.d
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(config.init_seed)
            self.tok_emb = nn.Embedding(config.vocab_size, config.d)
            self.pos_emb = nn.Embedding(config.max_len, config.d)
            nn.init.normal_(self.tok_emb.weight, std=0.1)
            nn.init.normal_(self.pos_emb.weight, std=0.1)
            self.layers = nn.ModuleList(
                EncoderLayer(config.d, config.heads, config.ffn_mult, config.dropout) for _ in range(config.layers)
            )
            self.norm = nn.LayerNorm(config.d)

    def forward(self, input_ids: torch.Tensor, valid_mask: Optional[torch.Tensor] = None) -> EncoderOutput:
        input_ids, valid_mask = _validate_inputs(input_ids, valid_mask, self.config.vocab_size, self.config.max_len)
        positions = torch.arange(input_ids.shape[1], device=input_ids.device)
        x = self.tok_emb(input_ids) + self.pos_emb(positions)[None]
        for layer in self.layers:
            x = layer(x, valid_mask)
        x = self.norm(x)
        return EncoderOutput(hidden=x, pooled=x[:, 0], valid_mask=valid_mask)

    def freeze(self, frozen: bool = True) -> None:
        for p in self.parameters():
            p.requires_grad_(not frozen)


class PretrainedEncoderAdapter(nn.Module):
    """Wrap a Hugging Face encoder (BERT-style, first token is [CLS])."""

    def __init__(self, model: nn.Module, max_len: int = 512):
        super().__init__()
        self.model = model
        self.hidden_size = model.config.hidden_size
        self.max_len = max_len

    @classmethod
    def from_pretrained(cls, name_or_path: str, max_len: int = 512) -> "PretrainedEncoderAdapter":
        from transformers import AutoModel

        return cls(AutoModel.from_pretrained(name_or_path), max_len)

    @classmethod
    def from_config_dict(cls, config: dict, max_len: int = 512) -> "PretrainedEncoderAdapter":
        from transformers import AutoConfig, AutoModel

        config = dict(config)
        model_type = config.pop("model_type")
        return cls(AutoModel.from_config(AutoConfig.for_model(model_type, **config)), max_len)

    def config_dict(self) -> dict:
        return self.model.config.to_dict()

    def forward(self, input_ids: torch.Tensor, valid_mask: Optional[torch.Tensor] = None) -> EncoderOutput:
        vocab_size = self.model.config.vocab_size
        input_ids, valid_mask = _validate_inputs(input_ids, valid_mask, vocab_size, self.max_len)
        out = self.model(input_ids=input_ids, attention_mask=valid_mask.long())
        hidden = out.last_hidden_state
        return EncoderOutput(hidden=hidden, pooled=hidden[:, 0], valid_mask=valid_mask)

    def freeze(self, frozen: bool = True) -> None:
        for p in self.parameters():
            p.requires_grad_(not frozen)


class PretrainedTokenizerAdapter:
    """Tokenizer protocol over a Hugging Face tokenizer; keeps its [CLS] at position 0."""

    def __init__(self, hf_tokenizer):
        self.hf = hf_tokenizer

    @classmethod
    def from_pretrained(cls, name_or_path: str) -> "PretrainedTokenizerAdapter":
        from transformers import AutoTokenizer

        return cls(AutoTokenizer.from_pretrained(name_or_path))

    def tokenize(self, text: str, max_len: int = 512) -> TokenSequence:
        if not text or not text.strip():
            raise EmptyText("cannot tokenize empty text")
        ids = self.hf(text, truncation=True, max_length=max_len)["input_ids"]
        return TokenSequence(tuple(ids), tuple(self.hf.convert_ids_to_tokens(ids)))
