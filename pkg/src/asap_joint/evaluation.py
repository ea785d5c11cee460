"""ACSA and rating metrics, attention export and the content-rating
disagreement detector.

ACSA pairs (review, mentioned aspect) are pooled over all aspects into one
3 x 3 confusion matrix.  Per-class F1 takes 0/0 as 0, and Macro-F1 averages
over the classes that occur in the gold labels.
"""

from __future__ import annotations

import html
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .corpus import Dataset, Review
from .errors import EmptyDataset, IoFailure, LengthMismatch, MissingTrace, NonFiniteInput
from .taxonomy import NUM_CLASSES, AspectTaxonomy, Polarity

CLASS_NAMES = tuple(Polarity.from_class_index(i).label for i in range(NUM_CLASSES))
F1_CONVENTION = "per-class F1 with 0/0 = 0; macro average over classes present in gold"


def _safe_div(num: float, den: float) -> float:
    return num / den if den else 0.0


@dataclass
class AcsaMetrics:
    macro_f1: float
    accuracy: float
    per_class_f1: tuple
    confusion: np.ndarray  # rows gold, columns predicted; Negative, Neutral, Positive
    macro_classes: tuple = ()
    per_aspect: dict = field(default_factory=dict)

    @property
    def pairs(self) -> int:
        return int(self.confusion.sum())

    def to_dict(self) -> dict:
        return {
            "macro_f1": self.macro_f1,
            "accuracy": self.accuracy,
            "per_class_f1": dict(zip(CLASS_NAMES, self.per_class_f1)),
            "confusion": self.confusion.tolist(),
            "confusion_axes": {"rows": "gold", "columns": "predicted", "order": list(CLASS_NAMES)},
            "macro_classes": list(self.macro_classes),
            "pairs": self.pairs,
            "f1_convention": F1_CONVENTION,
            "per_aspect": self.per_aspect,
        }


@dataclass
class RpMetrics:
    mae: float
    accuracy: float
    count: int

    def to_dict(self) -> dict:
        return {"mae": self.mae, "accuracy": self.accuracy, "count": self.count}


def confusion_matrix(gold: Sequence[int], pred: Sequence[int], n_classes: int = NUM_CLASSES) -> np.ndarray:
    gold = np.asarray(gold, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if gold.shape != pred.shape:
        raise LengthMismatch(f"{gold.size} gold labels vs {pred.size} predictions")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (gold, pred), 1)
    return cm


def metrics_from_confusion(cm: np.ndarray):
    """Return ``(accuracy, per_class_f1, macro_f1, macro_classes)``."""
    total = cm.sum()
    if total == 0:
        raise EmptyDataset("no (review, aspect) pairs to score")
    per_class = []
    for c in range(cm.shape[0]):
        tp = cm[c, c]
        precision = _safe_div(tp, cm[:, c].sum())
        recall = _safe_div(tp, cm[c, :].sum())
        per_class.append(_safe_div(2 * precision * recall, precision + recall))
    present = [c for c in range(cm.shape[0]) if cm[c, :].sum() > 0]
    macro = sum(per_class[c] for c in present) / len(present)
    return float(np.trace(cm) / total), tuple(float(f) for f in per_class), float(macro), tuple(present)


def acsa_metrics_from_pairs(gold: Sequence[int], pred: Sequence[int]) -> AcsaMetrics:
    cm = confusion_matrix(gold, pred)
    acc, per_class, macro, present = metrics_from_confusion(cm)
    return AcsaMetrics(macro, acc, per_class, cm, tuple(CLASS_NAMES[c] for c in present))


def _check_alignment(preds: Sequence, gold: Dataset) -> None:
    if len(preds) != len(gold):
        raise LengthMismatch(f"{len(preds)} predictions for {len(gold)} gold reviews")
    for p, r in zip(preds, gold):
        rid = getattr(p, "review_id", None)
        if rid is not None and rid != r.id:
            raise LengthMismatch(f"prediction for {rid!r} aligned with gold review {r.id!r}")


def evaluate_acsa(preds: Sequence, gold: Dataset, per_aspect: bool = True) -> AcsaMetrics:
    """Score argmax predictions on mentioned aspects only."""
    _check_alignment(preds, gold)
    gold_idx, pred_idx, aspect_idx = [], [], []
    for p, review in zip(preds, gold):
        probs = np.asarray(p.class_probs)
        for i, lab in review.mentioned():
            gold_idx.append(lab.class_index)
            pred_idx.append(int(probs[i].argmax()))
            aspect_idx.append(i)
    metrics = acsa_metrics_from_pairs(gold_idx, pred_idx)
    if per_aspect:
        g, q, a = map(np.asarray, (gold_idx, pred_idx, aspect_idx))
        for i, name in enumerate(gold.taxonomy.names):
            sel = a == i
            if not sel.any():
                continue
            m = acsa_metrics_from_pairs(g[sel], q[sel])
            metrics.per_aspect[name] = {"pairs": m.pairs, "accuracy": m.accuracy, "macro_f1": m.macro_f1}
    return metrics


def map_to_star(g_hat: float) -> int:
    """Nearest star, halves rounded away from zero, clamped to 1..5."""
    g_hat = float(g_hat)
    if not math.isfinite(g_hat):
        raise NonFiniteInput(f"rating prediction {g_hat} is not finite")
    rounded = math.copysign(math.floor(abs(g_hat) + 0.5), g_hat)
    return int(min(5, max(1, rounded)))


def evaluate_rp(preds: Sequence, gold: Dataset) -> RpMetrics:
    _check_alignment(preds, gold)
    if len(gold) == 0:
        raise EmptyDataset("no reviews to score")
    errors, hits = [], 0
    for p, review in zip(preds, gold):
        g_hat = float(p.predicted_rating)
        if not math.isfinite(g_hat):
            raise NonFiniteInput(f"review {review.id}: rating prediction is not finite")
        errors.append(abs(review.rating - g_hat))
        hits += map_to_star(g_hat) == review.rating
    return RpMetrics(mae=math.fsum(errors) / len(errors), accuracy=hits / len(errors), count=len(errors))


def format_report(acsa: Optional[AcsaMetrics] = None, rp: Optional[RpMetrics] = None, name: str = "Joint Model") -> str:
    """Plain-text table in the Macro-F1/Acc. and MAE/Acc. layout."""
    lines = []
    if acsa is not None:
        lines += ["ACSA", f"{'Model':<24}{'Macro-F1':>10}{'Acc.':>10}",
                  f"{name:<24}{acsa.macro_f1:>10.2%}{acsa.accuracy:>10.2%}"]
        lines += [f"  F1 {c}: {f:.4f}" for c, f in zip(CLASS_NAMES, acsa.per_class_f1)]
        lines.append(f"  ({F1_CONVENTION})")
    if rp is not None:
        if lines:
            lines.append("")
        lines += ["RP", f"{'Model':<24}{'MAE':>10}{'Acc.':>10}",
                  f"{name:<24}{rp.mae:>10.4f}{rp.accuracy:>10.2%}"]
    return "\n".join(lines)


# --------------------------------------------------------------------------
# reliability


@dataclass(frozen=True)
class Unreliability:
    flagged: bool
    margin: float


def detect_unreliable(review: Review, g_hat: float, threshold: float = 2.0) -> Unreliability:
    """Flag a review whose stars disagree with its predicted rating by at least ``threshold``."""
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    g_hat = float(g_hat)
    if not math.isfinite(g_hat):
        raise NonFiniteInput(f"review {review.id}: rating prediction is not finite")
    margin = abs(g_hat - review.rating)
    return Unreliability(flagged=margin >= threshold, margin=margin)


# --------------------------------------------------------------------------
# attention export


@dataclass
class AttentionTrace:
    review_id: str
    tokens: tuple
    weights: dict  # aspect name -> list of floats, mentioned aspects only

    def records(self) -> list[dict]:
        return [
            {"review_id": self.review_id, "aspect": name, "tokens": list(self.tokens), "weights": w}
            for name, w in self.weights.items()
        ]


def attention_trace(review: Review, pred, taxonomy: AspectTaxonomy) -> AttentionTrace:
    if pred.attention is None or pred.tokens is None:
        raise MissingTrace(f"prediction for review {review.id} carries no attention trace")
    weights = {}
    for i, _ in review.mentioned():
        weights[taxonomy.names[i]] = [float(w) for w in pred.attention[i]]
    return AttentionTrace(review.id, tuple(pred.tokens), weights)


def _heatmap_html(traces: Sequence[AttentionTrace]) -> str:
    parts = [
        "<!DOCTYPE html>",
        '<html><head><meta charset="utf-8"><title>Aspect attention</title>',
        "<style>body{font-family:sans-serif;line-height:1.9}"
        ".tok{padding:1px 0;border-radius:2px}h3{margin:1.2em 0 .2em}</style></head><body>",
    ]
    for trace in traces:
        parts.append(f"<h2>Review {html.escape(trace.review_id)}</h2>")
        for aspect, weights in trace.weights.items():
            peak = max(weights) or 1.0
            spans = "".join(
                f'<span class="tok" title="{w:.4f}" style="background:rgba(220,40,40,{w / peak:.3f})">'
                f"{html.escape(tok)}</span>"
                for tok, w in zip(trace.tokens, weights)
            )
            parts.append(f"<h3>{html.escape(aspect)}</h3><div>{spans}</div>")
    parts.append("</body></html>")
    return "\n".join(parts)


def write_attention(traces: Sequence[AttentionTrace], sink, html_path=None) -> None:
    """Write traces as JSON lines, and optionally a self-contained heatmap page."""
    try:
        sink = Path(sink)
        sink.parent.mkdir(parents=True, exist_ok=True)
        with open(sink, "w", encoding="utf-8") as fh:
            for trace in traces:
                for rec in trace.records():
                    fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
        if html_path is not None:
            Path(html_path).write_text(_heatmap_html(traces), encoding="utf-8")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def export_attention(review: Review, pred, sink, taxonomy: AspectTaxonomy, html_path=None) -> AttentionTrace:
    trace = attention_trace(review, pred, taxonomy)
    write_attention([trace], sink, html_path)
    return trace

