"""Shared builders for small models and random reviews."""

from pathlib import Path

import numpy as np
import torch

from asap_joint.corpus import Review
from asap_joint.encoder import EncoderConfig, TinyEncoder, Tokenizer, Vocabulary
from asap_joint.joint_model import JointModel
from asap_joint.taxonomy import AspectTaxonomy, Polarity

DATA = Path(__file__).parent / "data"
CHARS = "好吃贵慢吵干净服务价格环境味道一般很差不错"


def small_taxonomy(n=4):
    names = ["Food#Taste", "Price#Level", "Service#Hospitality", "Ambience#Noise", "Food#Portion", "Price#Discount"]
    return AspectTaxonomy.from_names(names[:n])


def small_vocab():
    return Vocabulary(list(CHARS))


def tiny_model(n_aspects=4, d=8, layers=1, heads=2, max_len=16, seed=0, dtype=torch.float64, **kw):
    vocab = small_vocab()
    enc = TinyEncoder(EncoderConfig(vocab_size=len(vocab), d=d, layers=layers, heads=heads, max_len=max_len,
                                    init_seed=seed))
    model = JointModel(enc, n_aspects, head_seed=seed + 1, **kw).to(dtype)
    return model, Tokenizer(vocab)


def random_review(rng, n_aspects, length, rid="x"):
    """Random review over the small character set with at least one mentioned aspect."""
    text = "".join(CHARS[i] for i in rng.integers(len(CHARS), size=length))
    mask = rng.integers(0, 2, size=n_aspects)
    mask[rng.integers(n_aspects)] = 1
    labels = tuple(Polarity(int(rng.integers(-1, 2))) if m else None for m in mask)
    return Review(id=rid, text=text, rating=int(rng.integers(1, 6)), labels=labels)


def prediction(rid, classes, rating=3.0, n_classes=3):
    """JointPrediction whose argmax per aspect is ``classes[i]``."""
    from asap_joint.joint_model import JointPrediction

    probs = np.full((len(classes), n_classes), 0.1)
    probs[np.arange(len(classes)), classes] = 0.8
    return JointPrediction(rid, probs, float(rating))


def four_pair_fixture():
    """Gold (Pos, Pos, Neg, Neu) vs predicted (Pos, Neg, Neg, Neu) over two reviews."""
    from asap_joint.corpus import Dataset

    tax = small_taxonomy(2)
    P, N, U = Polarity.POSITIVE, Polarity.NEGATIVE, Polarity.NEUTRAL
    gold = Dataset((Review("a", "好吃不错", 5, (P, P)), Review("b", "很贵一般", 2, (N, U))), taxonomy=tax)
    preds = [prediction("a", [2, 0], 4.5), prediction("b", [0, 1], 2.0)]
    return gold, preds
