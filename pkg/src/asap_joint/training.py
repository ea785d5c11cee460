"""Training loop, checkpoints and inference for the joint model."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from .corpus import Dataset
from .encoder import EncoderConfig, PretrainedEncoderAdapter, TinyEncoder, Tokenizer, Vocabulary
from .errors import CheckpointError, NonFiniteLoss, SplitLeak, TaxonomyMismatch
from .evaluation import evaluate_acsa, evaluate_rp
from .joint_model import JointModel, batch_loss, make_batch, predictions_from_output
from .taxonomy import AspectTaxonomy

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "asap-joint-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    batch_size: int = 16
    epochs: int = 3
    learning_rate: float = 1e-3  # 5e-5 is the usual choice for a pretrained encoder
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    max_len: int = 512
    seed: int = 0
    lambda_acsa: float = 1.0
    lambda_rp: float = 1.0
    warmup_steps: int = 0
    grad_clip: Optional[float] = None
    max_steps: Optional[int] = None
    freeze_encoder: bool = False
    checkpoint_dir: Optional[str] = None

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be at least 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.lambda_acsa < 0 or self.lambda_rp < 0 or self.lambda_acsa + self.lambda_rp == 0:
            raise ValueError("loss weights must be non-negative and not both zero")

    def to_dict(self) -> dict:
        return asdict(self)

    def fingerprint(self) -> str:
        # checkpoint_dir is where things go, not how they are trained
        payload = {k: v for k, v in self.to_dict().items() if k != "checkpoint_dir"}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


# --------------------------------------------------------------------------
# model construction


def build_tiny(train_texts: Sequence[str], taxonomy: AspectTaxonomy, d: int = 64, layers: int = 2, heads: int = 4,
               max_len: int = 512, seed: int = 0, lambda_acsa: float = 1.0, lambda_rp: float = 1.0,
               min_freq: int = 1, dtype=torch.float32):
    """Fresh tiny encoder + heads with a vocabulary built from ``train_texts``."""
    vocab = Vocabulary.build(train_texts, min_freq=min_freq)
    enc = TinyEncoder(EncoderConfig(vocab_size=len(vocab), d=d, layers=layers, heads=heads, max_len=max_len,
                                    init_seed=seed))
    model = JointModel(enc, taxonomy.n, lambda_acsa, lambda_rp, head_seed=seed + 1).to(dtype)
    return model, Tokenizer(vocab)


def encoder_spec(model: JointModel, tokenizer) -> dict:
    enc = model.encoder
    if isinstance(enc, TinyEncoder):
        return {"kind": "tiny", "config": enc.config.to_dict(), "vocab": list(tokenizer.vocab.itos)}
    if isinstance(enc, PretrainedEncoderAdapter):
        name = getattr(getattr(tokenizer, "hf", None), "name_or_path", None)
        return {"kind": "pretrained", "hf_config": enc.config_dict(), "max_len": enc.max_len, "tokenizer": name}
    raise CheckpointError(f"cannot describe encoder of type {type(enc).__name__}")


def _clone_state(module) -> dict:
    return {k: v.detach().clone() for k, v in module.state_dict().items()}


@dataclass
class Checkpoint:
    """Everything needed to rebuild a trained model and resume or replay it.

    Saved with :func:`torch.save` as a plain dict (tensors, numbers, strings,
    lists) so it loads with ``weights_only=True``.  Keys: ``format``,
    ``version``, ``encoder`` (kind, config, vocabulary), ``taxonomy`` (names
    plus fingerprint), ``model_state``, ``optimizer_state``, ``epoch``,
    ``step``, ``dev_metrics``, ``train_config`` and its fingerprint, and the
    loss weights.
    """

    encoder: dict
    taxonomy_names: list
    model_state: dict
    optimizer_state: Optional[dict] = None
    epoch: int = 0
    step: int = 0
    dev_metrics: dict = field(default_factory=dict)
    train_config: dict = field(default_factory=dict)
    config_fingerprint: str = ""
    lambda_acsa: float = 1.0
    lambda_rp: float = 1.0
    dtype: str = "float32"

    @property
    def taxonomy(self) -> AspectTaxonomy:
        return AspectTaxonomy.from_names(self.taxonomy_names)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["format"] = CHECKPOINT_FORMAT
        d["version"] = CHECKPOINT_VERSION
        d["taxonomy_fingerprint"] = self.taxonomy.fingerprint()
        return d

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(self.to_dict(), path)
        return path

    @classmethod
    def load(cls, path) -> "Checkpoint":
        try:
            data = torch.load(path, map_location="cpu", weights_only=True)
        except FileNotFoundError:
            raise
        except Exception as exc:  # torch raises pickle, zip and runtime errors for junk files
            raise CheckpointError(f"{path}: unreadable checkpoint ({type(exc).__name__})") from exc
        if not isinstance(data, dict) or data.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointError(f"{path} is not a joint-model checkpoint")
        if data.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {data.get('version')}")
        fp = data.pop("taxonomy_fingerprint")
        data.pop("format"), data.pop("version")
        ckpt = cls(**data)
        if ckpt.taxonomy.fingerprint() != fp:
            raise CheckpointError(f"{path}: taxonomy fingerprint does not match stored names")
        return ckpt

    def check_taxonomy(self, taxonomy: AspectTaxonomy) -> None:
        if taxonomy.fingerprint() != self.taxonomy.fingerprint():
            raise TaxonomyMismatch("checkpoint was trained against a different aspect taxonomy")

    def build(self, tokenizer=None):
        """Rebuild ``(model, tokenizer)`` in eval mode.

        Pretrained-encoder checkpoints need ``tokenizer`` unless they recorded
        a loadable tokenizer name.
        """
        spec = self.encoder
        if spec["kind"] == "tiny":
            encoder = TinyEncoder(EncoderConfig(**spec["config"]))
            tokenizer = tokenizer or Tokenizer(Vocabulary(spec["vocab"]))
        elif spec["kind"] == "pretrained":
            encoder = PretrainedEncoderAdapter.from_config_dict(spec["hf_config"], spec.get("max_len", 512))
            if tokenizer is None:
                if not spec.get("tokenizer"):
                    raise CheckpointError("pretrained-encoder checkpoint needs an explicit tokenizer")
                from .encoder import PretrainedTokenizerAdapter

                tokenizer = PretrainedTokenizerAdapter.from_pretrained(spec["tokenizer"])
        else:
            raise CheckpointError(f"unknown encoder kind {spec['kind']!r}")
        model = JointModel(encoder, len(self.taxonomy_names), self.lambda_acsa, self.lambda_rp)
        model.to(getattr(torch, self.dtype))
        model.load_state_dict(self.model_state)
        model.eval()
        return model, tokenizer


def make_checkpoint(model: JointModel, tokenizer, taxonomy: AspectTaxonomy, optimizer=None, epoch: int = 0,
                    step: int = 0, dev_metrics: Optional[dict] = None, cfg: Optional[TrainConfig] = None) -> Checkpoint:
    return Checkpoint(
        encoder=encoder_spec(model, tokenizer),
        taxonomy_names=taxonomy.names,
        model_state=_clone_state(model),
        optimizer_state=None if optimizer is None else _clone_optimizer_state(optimizer),
        epoch=epoch,
        step=step,
        dev_metrics=dev_metrics or {},
        train_config=cfg.to_dict() if cfg else {},
        config_fingerprint=cfg.fingerprint() if cfg else "",
        lambda_acsa=model.lambda_acsa,
        lambda_rp=model.lambda_rp,
        dtype=str(next(model.parameters()).dtype).replace("torch.", ""),
    )


def _clone_optimizer_state(optimizer) -> dict:
    state = optimizer.state_dict()
    return {
        "state": {k: {n: (t.detach().clone() if torch.is_tensor(t) else t) for n, t in v.items()}
                  for k, v in state["state"].items()},
        "param_groups": [dict(g) for g in state["param_groups"]],
    }


# --------------------------------------------------------------------------
# inference


def predict_with_model(ds: Dataset, model: JointModel, tokenizer, batch_size: int = 16, max_len: int = 512,
                       trace: bool = False) -> list:
    if len(ds) == 0:
        return []
    was_training = model.training
    model.eval()
    dtype = next(model.parameters()).dtype
    preds = []
    try:
        with torch.no_grad():
            for lo in range(0, len(ds), batch_size):
                batch = make_batch(ds.reviews[lo: lo + batch_size], tokenizer, max_len, dtype=dtype)
                out = model(batch.input_ids, batch.valid_mask)
                preds.extend(predictions_from_output(batch, out, with_attention=trace))
    finally:
        model.train(was_training)
    return preds


def predict(ds: Dataset, ckpt: Checkpoint, batch_size: int = 16, max_len: Optional[int] = None, trace: bool = False,
            tokenizer=None) -> list:
    """Predictions for every review of ``ds``; the checkpoint is not modified."""
    ckpt.check_taxonomy(ds.taxonomy)
    if len(ds) == 0:
        return []
    model, tokenizer = ckpt.build(tokenizer)
    max_len = max_len or ckpt.train_config.get("max_len", 512)
    return predict_with_model(ds, model, tokenizer, batch_size, max_len, trace)


def dev_metrics(ds: Dataset, model: JointModel, tokenizer, batch_size: int, max_len: int) -> dict:
    if len(ds) == 0:
        return {}
    preds = predict_with_model(ds, model, tokenizer, batch_size, max_len)
    out = {}
    if any(r.mentioned_count for r in ds):
        acsa = evaluate_acsa(preds, ds, per_aspect=False)
        out.update(acsa_macro_f1=acsa.macro_f1, acsa_accuracy=acsa.accuracy)
    rp = evaluate_rp(preds, ds)
    out.update(rp_mae=rp.mae, rp_accuracy=rp.accuracy)
    return out


# --------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    history: list  # one Checkpoint per epoch
    step_losses: list  # total loss per optimizer step
    best_f1: Optional[Checkpoint] = None
    best_mae: Optional[Checkpoint] = None

    @property
    def final(self) -> Checkpoint:
        return self.history[-1]


def make_optimizer(params, cfg: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(params, lr=cfg.learning_rate, betas=(cfg.adam_beta1, cfg.adam_beta2), eps=cfg.adam_eps)


def _check_inputs(train_ds: Dataset, dev_ds: Optional[Dataset], model: JointModel) -> None:
    for ds in (train_ds, dev_ds):
        if ds is not None and ds.split == "test":
            raise SplitLeak("training must not read test-split data")
    if dev_ds is not None and dev_ds.taxonomy != train_ds.taxonomy:
        raise TaxonomyMismatch("train and dev datasets use different taxonomies")
    if model.heads.n_aspects != train_ds.taxonomy.n:
        raise TaxonomyMismatch(f"model has {model.heads.n_aspects} aspect heads, taxonomy has {train_ds.taxonomy.n}")


def train(train_ds: Dataset, dev_ds: Optional[Dataset], cfg: TrainConfig, model: JointModel, tokenizer,
          on_record: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Train ``model`` in place with Adam; evaluate on ``dev_ds`` after each epoch.

    Reviews without mentioned aspects are skipped while the ACSA term is on.
    ``on_record`` receives one dict per optimizer step and per epoch.
    """
    _check_inputs(train_ds, dev_ds, model)
    emit = on_record or (lambda rec: None)
    model.lambda_acsa, model.lambda_rp = float(cfg.lambda_acsa), float(cfg.lambda_rp)
    if cfg.freeze_encoder:
        for p in model.encoder.parameters():
            p.requires_grad_(False)
    reviews = list(train_ds.reviews)
    if model.lambda_acsa:
        skipped = [r.id for r in reviews if r.mentioned_count == 0]
        if skipped:
            log.warning("skipping %d training reviews without mentioned aspects", len(skipped))
            reviews = [r for r in reviews if r.mentioned_count]
    if not reviews:
        raise NonFiniteLoss("no trainable reviews")

    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    dtype = next(model.parameters()).dtype
    optimizer = make_optimizer([p for p in model.parameters() if p.requires_grad], cfg)
    scheduler = None
    if cfg.warmup_steps > 0:
        scheduler = torch.optim.lr_scheduler.LambdaLR(optimizer, lambda s: min(1.0, (s + 1) / cfg.warmup_steps))

    result = TrainResult(history=[], step_losses=[])
    ckpt_dir = Path(cfg.checkpoint_dir) if cfg.checkpoint_dir else None
    step = 0
    done = False
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        order = rng.permutation(len(reviews))
        for lo in range(0, len(order), cfg.batch_size):
            chunk = [reviews[i] for i in order[lo: lo + cfg.batch_size]]
            batch = make_batch(chunk, tokenizer, cfg.max_len, dtype=dtype)
            optimizer.zero_grad(set_to_none=True)
            res = batch_loss(model, batch)
            if not torch.isfinite(res.loss):
                raise NonFiniteLoss(f"non-finite loss at epoch {epoch} step {step + 1}; batch ids {list(batch.ids)}")
            res.loss.backward()
            if cfg.grad_clip:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            optimizer.step()
            if scheduler is not None:
                scheduler.step()
            step += 1
            total = float(res.loss.detach())
            result.step_losses.append(total)
            emit({
                "event": "step",
                "epoch": epoch,
                "step": step,
                "loss_acsa": None if res.acsa is None else float(res.acsa.detach()),
                "loss_rp": None if res.rp is None else float(res.rp.detach()),
                "loss_total": total,
            })
            if cfg.max_steps is not None and step >= cfg.max_steps:
                done = True
                break
        metrics = dev_metrics(dev_ds, model, tokenizer, cfg.batch_size, cfg.max_len) if dev_ds is not None else {}
        emit({"event": "epoch", "epoch": epoch, "step": step, "dev": metrics})
        ckpt = make_checkpoint(model, tokenizer, train_ds.taxonomy, optimizer, epoch, step, metrics, cfg)
        result.history.append(ckpt)
        if ckpt_dir is not None:
            ckpt.save(ckpt_dir / f"epoch{epoch}.pt")
        if "acsa_macro_f1" in metrics and (
            result.best_f1 is None or metrics["acsa_macro_f1"] > result.best_f1.dev_metrics["acsa_macro_f1"]
        ):
            result.best_f1 = ckpt
        if "rp_mae" in metrics and (
            result.best_mae is None or metrics["rp_mae"] < result.best_mae.dev_metrics["rp_mae"]
        ):
            result.best_mae = ckpt
        if done:
            break
    if ckpt_dir is not None:
        result.final.save(ckpt_dir / "final.pt")
        if result.best_f1 is not None:
            result.best_f1.save(ckpt_dir / "best_f1.pt")
        if result.best_mae is not None:
            result.best_mae.save(ckpt_dir / "best_mae.pt")
    return result

