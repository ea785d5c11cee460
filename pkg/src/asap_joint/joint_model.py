"""Multi-task head: per-aspect attention pooling and sentiment classification
plus overall rating regression from the pooled review vector.

For aspect ``i`` and token matrix ``H`` (d x Z)::

    M      = tanh(W_a[i] H)
    alpha  = softmax(omega[i]^T M)          # over valid positions only
    r      = tanh(W_p[i] H alpha^T)
    y_hat  = softmax(W_q[i] r + b_q[i])

and the rating is ``g_hat = beta^T tanh(W_r h_pool + b_r)``.  The per-review
loss is ``lambda_acsa * acsa + lambda_rp * |g - g_hat|`` where ``acsa`` is the
negative log-likelihood averaged over the K mentioned aspects.

Polarity classes are ordered Negative, Neutral, Positive (indices 0, 1, 2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from .encoder import EncoderOutput, pad_batch
from .errors import AspectIndexError, NoMentionedAspect
from .taxonomy import NUM_CLASSES, Polarity

RATING_HEAD_PARAMS = ("W_r", "b_r", "beta")
ASPECT_HEAD_PARAMS = ("W_a", "omega", "W_p", "W_q", "b_q")


class JointHeads(nn.Module):
    """All head parameters, stacked along a leading aspect axis.

    Slices ``W_a[i]``, ``omega[i]``, ... belong to aspect ``i`` alone.
    """

    def __init__(self, n_aspects: int, d: int, n_classes: int = NUM_CLASSES, init_seed: int = 0):
        super().__init__()
        self.n_aspects, self.d, self.n_classes = n_aspects, d, n_classes
        gen = torch.Generator().manual_seed(init_seed)
        bound = 1.0 / math.sqrt(d)

        def init(*shape):
            return nn.Parameter((torch.rand(*shape, generator=gen) * 2 - 1) * bound)

        self.W_a = init(n_aspects, d, d)
        self.omega = init(n_aspects, d)
        self.W_p = init(n_aspects, d, d)
        self.W_q = init(n_aspects, n_classes, d)
        self.b_q = nn.Parameter(torch.zeros(n_aspects, n_classes))
        self.W_r = init(d, d)
        self.b_r = nn.Parameter(torch.zeros(d))
        self.beta = init(d)

    def check_index(self, i: int) -> None:
        if not 0 <= i < self.n_aspects:
            raise AspectIndexError(f"aspect index {i} outside 0..{self.n_aspects - 1}")


@dataclass
class AttentionResult:
    alpha: torch.Tensor  # (Z,)
    r: torch.Tensor  # (d,)
    M: Optional[torch.Tensor] = None  # (d, Z), only when traced


def masked_softmax(scores: torch.Tensor, valid_mask: torch.Tensor) -> torch.Tensor:
    """Softmax over the last axis with padding positions getting exactly zero weight."""
    scores = scores.masked_fill(~valid_mask, torch.finfo(scores.dtype).min)
    return scores.softmax(-1)


def pool_all_aspects(hidden: torch.Tensor, valid_mask: torch.Tensor, heads: JointHeads, trace: bool = False):
    """Attention pooling for every aspect at once.

    Args:
        hidden: (B, Z, d) token embeddings.
        valid_mask: (B, Z) bool.

    Returns:
        ``(alpha, r, M)`` with shapes (B, N, Z), (B, N, d) and (B, N, Z, d) or None.
    """
    M = torch.tanh(torch.einsum("nij,bzj->bnzi", heads.W_a, hidden))
    scores = torch.einsum("ni,bnzi->bnz", heads.omega, M)
    alpha = masked_softmax(scores, valid_mask[:, None, :])
    context = torch.einsum("bnz,bzj->bnj", alpha, hidden)
    r = torch.tanh(torch.einsum("nij,bnj->bni", heads.W_p, context))
    return alpha, r, (M if trace else None)


def attention_pool(enc: EncoderOutput, aspect_index: int, heads: JointHeads, row: int = 0, trace: bool = False):
    """Attention pooling of one review (batch ``row``) for one aspect."""
    heads.check_index(aspect_index)
    n = int(enc.valid_mask[row].sum())
    H = enc.hidden[row, :n].T  # d x Z
    M = torch.tanh(heads.W_a[aspect_index] @ H)
    alpha = torch.softmax(heads.omega[aspect_index] @ M, dim=-1)
    r = torch.tanh(heads.W_p[aspect_index] @ (H @ alpha))
    return AttentionResult(alpha=alpha, r=r, M=M if trace else None)


def classify_aspect(r: torch.Tensor, aspect_index: int, heads: JointHeads) -> torch.Tensor:
    heads.check_index(aspect_index)
    return torch.softmax(heads.W_q[aspect_index] @ r + heads.b_q[aspect_index], dim=-1)


def aspect_logits(r: torch.Tensor, heads: JointHeads) -> torch.Tensor:
    """(B, N, d) attentive vectors -> (B, N, C) logits."""
    return torch.einsum("ncd,bnd->bnc", heads.W_q, r) + heads.b_q


def rating_head(pooled: torch.Tensor, heads: JointHeads) -> torch.Tensor:
    """Unclamped rating; accepts a (d,) vector or a (B, d) batch."""
    return torch.tanh(pooled @ heads.W_r.T + heads.b_r) @ heads.beta


def _as_targets(labels, mask: torch.Tensor) -> torch.Tensor:
    """Class indices with unmentioned aspects pinned to class 0.

    Pinning makes the loss graph independent of whatever label is stored at
    mask=0 positions.
    """
    if isinstance(labels, torch.Tensor):
        targets = labels.long()
    else:
        targets = torch.tensor(
            [0 if lab is None else Polarity(lab).class_index for lab in labels], dtype=torch.long
        )
    return torch.where(mask.bool(), targets, torch.zeros_like(targets))


def acsa_loss_from_log_probs(log_probs: torch.Tensor, targets: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Gated NLL averaged over mentioned aspects.

    Shapes: log_probs (..., N, C), targets (..., N) long, mask (..., N).
    Returns one loss per leading index.
    """
    mask = mask.to(log_probs.dtype)
    k = mask.sum(-1)
    if (k < 1).any():
        raise NoMentionedAspect("ACSA loss needs at least one mentioned aspect per review")
    targets = torch.where(mask.bool(), targets, torch.zeros_like(targets))
    nll = -log_probs.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    return (mask * nll).sum(-1) / k


def acsa_loss(class_probs: torch.Tensor, labels, mask) -> torch.Tensor:
    """ACSA loss of one review from its N x C class distributions.

    ``labels`` is a sequence of optional :class:`Polarity` or a tensor of class
    indices; entries where ``mask`` is 0 are ignored.
    """
    mask = torch.as_tensor(mask)
    targets = _as_targets(labels, mask)
    return acsa_loss_from_log_probs(torch.log(class_probs), targets, mask)


def rp_loss(g_hat, g):
    return (torch.as_tensor(g, dtype=torch.as_tensor(g_hat).dtype) - g_hat).abs()


@dataclass
class JointPrediction:
    review_id: str
    class_probs: np.ndarray  # (N, C)
    predicted_rating: float
    attention: Optional[np.ndarray] = None  # (N, Z) over valid tokens
    tokens: Optional[tuple] = None

    def predicted_classes(self) -> np.ndarray:
        return self.class_probs.argmax(-1)

    def predicted_polarity(self, aspect_index: int) -> Polarity:
        return Polarity.from_class_index(int(self.class_probs[aspect_index].argmax()))


@dataclass
class ModelOutput:
    log_probs: torch.Tensor  # (B, N, C)
    rating: torch.Tensor  # (B,)
    alpha: torch.Tensor  # (B, N, Z)
    encoded: EncoderOutput
    M: Optional[torch.Tensor] = None

    @property
    def probs(self) -> torch.Tensor:
        return self.log_probs.exp()


class JointModel(nn.Module):
    """Shared encoder with the ACSA and rating heads.

    ``lambda_acsa`` and ``lambda_rp`` weight the two loss terms; a zero weight
    drops that term from the graph entirely, so its head gets no gradient.
    """

    def __init__(self, encoder: nn.Module, n_aspects: int, lambda_acsa: float = 1.0, lambda_rp: float = 1.0,
                 head_seed: int = 0):
        super().__init__()
        if lambda_acsa < 0 or lambda_rp < 0 or lambda_acsa + lambda_rp == 0:
            raise ValueError("loss weights must be non-negative and not both zero")
        self.encoder = encoder
        self.heads = JointHeads(n_aspects, encoder.hidden_size, init_seed=head_seed)
        self.lambda_acsa = float(lambda_acsa)
        self.lambda_rp = float(lambda_rp)

    def forward(self, input_ids: torch.Tensor, valid_mask: torch.Tensor, trace: bool = False) -> ModelOutput:
        enc = self.encoder(input_ids, valid_mask)
        alpha, r, M = pool_all_aspects(enc.hidden, enc.valid_mask, self.heads, trace)
        log_probs = torch.log_softmax(aspect_logits(r, self.heads), dim=-1)
        rating = rating_head(enc.pooled, self.heads)
        return ModelOutput(log_probs=log_probs, rating=rating, alpha=alpha, encoded=enc, M=M)


@dataclass
class ReviewBatch:
    ids: tuple
    tokens: tuple
    input_ids: torch.Tensor
    valid_mask: torch.Tensor
    targets: torch.Tensor  # (B, N) class indices, 0 where unmentioned
    mask: torch.Tensor  # (B, N) 0/1
    ratings: torch.Tensor  # (B,)


def make_batch(reviews: Sequence, tokenizer, max_len: int = 512, dtype=torch.float32) -> ReviewBatch:
    seqs = [tokenizer.tokenize(r.text, max_len) for r in reviews]
    input_ids, valid_mask = pad_batch(seqs)
    mask = torch.tensor([r.mask for r in reviews], dtype=dtype)
    targets = torch.stack([_as_targets(r.labels, m) for r, m in zip(reviews, mask)])
    ratings = torch.tensor([float(r.rating) for r in reviews], dtype=dtype)
    return ReviewBatch(
        ids=tuple(r.id for r in reviews),
        tokens=tuple(s.tokens for s in seqs),
        input_ids=input_ids,
        valid_mask=valid_mask,
        targets=targets,
        mask=mask,
        ratings=ratings,
    )


@dataclass
class JointLoss:
    loss: torch.Tensor
    acsa: Optional[torch.Tensor]  # batch mean, None when the term is disabled
    rp: Optional[torch.Tensor]
    per_review: torch.Tensor
    output: ModelOutput
    predictions: list = field(default_factory=list)


def batch_loss(model: JointModel, batch: ReviewBatch, trace: bool = False) -> JointLoss:
    out = model(batch.input_ids, batch.valid_mask, trace=trace)
    per_review = torch.zeros((), dtype=out.rating.dtype)
    acsa = rp = None
    if model.lambda_acsa:
        acsa_r = acsa_loss_from_log_probs(out.log_probs, batch.targets, batch.mask)
        acsa = acsa_r.mean()
        per_review = per_review + (acsa_r if model.lambda_acsa == 1 else model.lambda_acsa * acsa_r)
    if model.lambda_rp:
        rp_r = rp_loss(out.rating, batch.ratings.to(out.rating.dtype))
        rp = rp_r.mean()
        per_review = per_review + (rp_r if model.lambda_rp == 1 else model.lambda_rp * rp_r)
    return JointLoss(loss=per_review.mean(), acsa=acsa, rp=rp, per_review=per_review, output=out)


def predictions_from_output(batch: ReviewBatch, out: ModelOutput, with_attention: bool = False) -> list:
    probs = out.probs.detach().cpu().double().numpy()
    ratings = out.rating.detach().cpu().double().numpy()
    alpha = out.alpha.detach().cpu().double().numpy() if with_attention else None
    preds = []
    for b, rid in enumerate(batch.ids):
        n = int(batch.valid_mask[b].sum())
        preds.append(
            JointPrediction(
                review_id=rid,
                class_probs=probs[b],
                predicted_rating=float(ratings[b]),
                attention=None if alpha is None else alpha[b, :, :n],
                tokens=batch.tokens[b] if with_attention else None,
            )
        )
    return preds


def joint_forward_loss(reviews: Sequence, model: JointModel, tokenizer, max_len: int = 512,
                       trace: bool = False) -> JointLoss:
    """Batch loss (mean over reviews) plus one :class:`JointPrediction` per review.

    Predictions cover all N aspects; only mentioned ones carry meaning.
    """
    dtype = next(model.parameters()).dtype
    batch = make_batch(reviews, tokenizer, max_len, dtype=dtype)
    result = batch_loss(model, batch, trace=trace)
    result.predictions = predictions_from_output(batch, result.output, with_attention=trace)
    return result
