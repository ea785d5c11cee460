"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime error.  Errors
are written to stderr as one JSON object.

Settings resolve as: command-line flag > environment variable
(``ASAP_JOINT_<NAME>``, e.g. ``ASAP_JOINT_SEED``) > ``--config`` file >
built-in default.  The resolved settings are written to
``<out-dir>/resolved_config.json``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import torch

from . import corpus
from .corpus import CurationConfig, load_config_file, read_csv, write_csv
from .errors import AsapError, DataError, LengthMismatch
from .evaluation import (
    attention_trace,
    detect_unreliable,
    evaluate_acsa,
    evaluate_rp,
    format_report,
    write_attention,
)
from .joint_model import JointPrediction
from .taxonomy import AspectTaxonomy, default_taxonomy

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3
ENV_PREFIX = "ASAP_JOINT_"

EPILOG = """exit codes:
  0  success
  1  usage error (unknown subcommand, bad flag)
  2  data error (malformed CSV, bad ratings or labels, mismatched inputs)
  3  runtime error (non-finite loss, unreadable checkpoint, I/O failure)

settings: flag > ASAP_JOINT_<NAME> environment variable > --config file > default
"""


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _bool(value) -> bool:
    if isinstance(value, bool):
        return value
    return str(value).strip().lower() in ("1", "true", "yes", "on")


def _opt_float(value):
    return None if value in (None, "", "none", "None") else float(value)


def _opt_int(value):
    return None if value in (None, "", "none", "None") else int(value)


def _ratios(value):
    if isinstance(value, (list, tuple)):
        return tuple(float(v) for v in value)
    return tuple(float(v) for v in str(value).split(","))


# name -> (type, default); every overridable setting of every subcommand
SETTINGS = {
    "seed": (int, 0),
    "sentinel": (_opt_int, corpus.DEFAULT_SENTINEL),
    "min_chinese": (int, 50),
    "max_chinese": (int, 1000),
    "max_non_chinese_ratio": (float, 0.70),
    "strip_fields": (str, ",".join(corpus.DEFAULT_PRIVACY_FIELDS)),
    "ratios": (_ratios, (0.8, 0.1, 0.1)),
    "encoder": (str, "tiny"),
    "epochs": (int, 3),
    "batch_size": (int, 16),
    "learning_rate": (_opt_float, None),
    "max_len": (int, 512),
    "max_steps": (_opt_int, None),
    "lambda_acsa": (float, 1.0),
    "lambda_rp": (float, 1.0),
    "warmup_steps": (int, 0),
    "grad_clip": (_opt_float, None),
    "freeze_encoder": (_bool, False),
    "d": (int, 64),
    "layers": (int, 2),
    "heads": (int, 4),
    "min_freq": (int, 1),
    "threshold": (float, 2.0),
}

COMMAND_SETTINGS = {
    "validate": ("sentinel",),
    "curate": ("sentinel", "min_chinese", "max_chinese", "max_non_chinese_ratio", "strip_fields"),
    "stats": ("sentinel",),
    "split": ("sentinel", "seed", "ratios"),
    "train": ("sentinel", "seed", "encoder", "epochs", "batch_size", "learning_rate", "max_len", "max_steps",
              "lambda_acsa", "lambda_rp", "warmup_steps", "grad_clip", "freeze_encoder", "d", "layers", "heads",
              "min_freq"),
    "predict": ("sentinel", "seed", "batch_size", "max_len"),
    "eval": ("sentinel",),
    "visualize-attention": ("sentinel", "seed", "max_len"),
    "detect-unreliable": ("sentinel", "seed", "batch_size", "max_len", "threshold"),
}

HELP = {
    "seed": "seed for every stochastic step (default 0)",
    "sentinel": "numeric not-mentioned marker accepted in aspect cells (default -2)",
    "min_chinese": "minimum Chinese characters, inclusive (default 50)",
    "max_chinese": "maximum Chinese characters, inclusive (default 1000)",
    "max_non_chinese_ratio": "drop reviews whose non-Chinese share exceeds this (default 0.70)",
    "strip_fields": "comma-separated privacy columns to strip",
    "ratios": "train,dev,test fractions (default 0.8,0.1,0.1)",
    "encoder": "'tiny' or 'pretrained:<name-or-path>' (default tiny)",
    "epochs": "training epochs (default 3)",
    "batch_size": "batch size (default 16)",
    "learning_rate": "Adam learning rate (default 1e-3 tiny, 5e-5 pretrained)",
    "max_len": "maximum tokens per review including the start token (default 512)",
    "max_steps": "stop after this many optimizer steps (default: no limit)",
    "lambda_acsa": "weight of the ACSA loss; 0 disables it (default 1)",
    "lambda_rp": "weight of the rating loss; 0 disables it (default 1)",
    "warmup_steps": "linear warmup steps (default 0, constant rate)",
    "grad_clip": "max gradient norm (default: off)",
    "freeze_encoder": "train the heads only (default false)",
    "d": "tiny encoder hidden size (default 64)",
    "layers": "tiny encoder layers (default 2)",
    "heads": "tiny encoder attention heads (default 4)",
    "min_freq": "minimum token count for the tiny vocabulary (default 1)",
    "threshold": "star gap that flags a review, inclusive (default 2.0)",
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="asap-joint", description="Aspect-category sentiment and rating prediction pipeline.",
                     epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text, epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--out-dir", default="out", help="directory for all artifacts (default ./out)")
        p.add_argument("--config", help="JSON or key=value settings file")
        p.add_argument("--taxonomy", help="file with one Coarse#Fine aspect name per line (default: 18 categories)")
        for key in COMMAND_SETTINGS[name]:
            flag = "--" + key.replace("_", "-")
            if key == "freeze_encoder":
                p.add_argument(flag, action="store_const", const=True, default=None, help=HELP[key])
            else:
                p.add_argument(flag, default=None, help=HELP[key])
        return p

    command("validate", "check that a CSV parses against the taxonomy").add_argument("--data", required=True)
    command("curate", "apply curation filters to a raw CSV").add_argument("--data", required=True)
    command("stats", "dataset statistics").add_argument("--data", required=True)
    command("split", "random train/dev/test split").add_argument("--data", required=True)
    p = command("train", "train the joint model")
    p.add_argument("--data", required=True, help="training CSV")
    p.add_argument("--dev", help="dev CSV (default: evaluate on the training data)")
    p = command("predict", "write predictions as JSON lines")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p = command("eval", "score predictions against gold labels")
    p.add_argument("--preds", required=True)
    p.add_argument("--gold", required=True)
    p = command("visualize-attention", "export per-aspect attention weights and a heatmap page")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--ids", help="comma-separated review ids (default: all)")
    p = command("detect-unreliable", "flag reviews whose stars disagree with the predicted rating")
    p.add_argument("--data", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint")
    src.add_argument("--preds")
    return parser


def resolve_settings(args, env=None) -> dict:
    env = os.environ if env is None else env
    file_cfg = load_config_file(args.config) if args.config else {}
    resolved = {}
    for key in COMMAND_SETTINGS[args.command]:
        kind, default = SETTINGS[key]
        flag = getattr(args, key)
        env_value = env.get(ENV_PREFIX + key.upper())
        if flag is not None:
            value = flag
        elif env_value is not None:
            value = env_value
        elif key in file_cfg:
            value = file_cfg[key]
        else:
            resolved[key] = default
            continue
        try:
            resolved[key] = kind(value)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"bad value for {key}: {value!r}") from exc
    return resolved


def _taxonomy(args) -> AspectTaxonomy:
    if not args.taxonomy:
        return default_taxonomy()
    names = [ln.strip() for ln in Path(args.taxonomy).read_text(encoding="utf-8").splitlines() if ln.strip()]
    return AspectTaxonomy.from_names(names)


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, ensure_ascii=False, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _read(path, taxonomy, settings, split="unsplit"):
    return read_csv(path, taxonomy, split=split, sentinel=settings["sentinel"])


def prediction_record(pred: JointPrediction, taxonomy: AspectTaxonomy) -> dict:
    return {
        "review_id": pred.review_id,
        "predicted_rating": pred.predicted_rating,
        "class_order": ["Negative", "Neutral", "Positive"],
        "class_probs": {name: [float(x) for x in pred.class_probs[i]] for i, name in enumerate(taxonomy.names)},
    }


def read_predictions(path, taxonomy: AspectTaxonomy) -> dict:
    """Map review id -> JointPrediction from a predictions JSON-lines file."""
    import numpy as np

    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                probs = np.array([rec["class_probs"][name] for name in taxonomy.names], dtype=float)
                out[str(rec["review_id"])] = JointPrediction(
                    review_id=str(rec["review_id"]), class_probs=probs,
                    predicted_rating=float(rec["predicted_rating"]),
                )
            except (KeyError, ValueError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: bad prediction record ({exc})") from None
    return out


def _aligned(preds_by_id: dict, gold) -> list:
    missing = [r.id for r in gold if r.id not in preds_by_id]
    if missing:
        raise LengthMismatch(f"no prediction for {len(missing)} gold review(s), e.g. {missing[0]!r}")
    return [preds_by_id[r.id] for r in gold]


def _load_checkpoint(path):
    from .training import Checkpoint

    return Checkpoint.load(path)


def _predict(ds, ckpt_path, settings, trace=False):
    from .training import predict

    ckpt = _load_checkpoint(ckpt_path)
    torch.manual_seed(settings.get("seed", 0))
    return predict(ds, ckpt, batch_size=settings.get("batch_size", 16), max_len=settings.get("max_len"), trace=trace)


# --------------------------------------------------------------------------
# subcommands


def cmd_validate(args, settings, out: Path, taxonomy):
    ds = _read(args.data, taxonomy, settings)
    report = {"path": str(args.data), "reviews": len(ds), "valid": True}
    print(json.dumps(report, ensure_ascii=False))
    return report


def cmd_curate(args, settings, out: Path, taxonomy):
    cfg = CurationConfig(
        min_chinese=settings["min_chinese"],
        max_chinese=settings["max_chinese"],
        max_non_chinese_ratio=settings["max_non_chinese_ratio"],
        strip_fields=settings["strip_fields"],
        sentinel=settings["sentinel"],
    )
    ds, report = corpus.curate(corpus.iter_records(args.data), cfg, taxonomy)
    write_csv(ds, out / "curated.csv")
    _write_json(out / "curation_report.json", report.to_dict())
    print(json.dumps({k: v for k, v in report.to_dict().items() if k != "malformed_reasons"}, ensure_ascii=False))


def cmd_stats(args, settings, out: Path, taxonomy):
    ds = _read(args.data, taxonomy, settings)
    stats = corpus.compute_stats(ds)
    _write_json(out / "stats.json", stats.to_dict())
    table = stats.format_table(Path(args.data).stem)
    (out / "stats.txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    print(json.dumps(stats.to_dict(), ensure_ascii=False))


def cmd_split(args, settings, out: Path, taxonomy):
    ds = _read(args.data, taxonomy, settings)
    parts = corpus.split(ds, settings["seed"], settings["ratios"])
    for part in parts:
        write_csv(part, out / f"{part.split}.csv")
    print(json.dumps({p.split: len(p) for p in parts}))


def _ckpt_summary(ckpt):
    return None if ckpt is None else {"epoch": ckpt.epoch, "dev": ckpt.dev_metrics}


def cmd_train(args, settings, out: Path, taxonomy):
    from .training import TrainConfig, build_tiny, train

    train_ds = _read(args.data, taxonomy, settings, split="train")
    dev_ds = _read(args.dev, taxonomy, settings, split="dev") if args.dev else train_ds
    encoder = settings["encoder"]
    if encoder == "tiny":
        lr = settings["learning_rate"] or 1e-3
        model, tokenizer = build_tiny(
            [r.text for r in train_ds], taxonomy, d=settings["d"], layers=settings["layers"],
            heads=settings["heads"], max_len=settings["max_len"], seed=settings["seed"],
            lambda_acsa=settings["lambda_acsa"], lambda_rp=settings["lambda_rp"], min_freq=settings["min_freq"],
        )
    elif encoder.startswith("pretrained:"):
        from .encoder import PretrainedEncoderAdapter, PretrainedTokenizerAdapter
        from .joint_model import JointModel

        name = encoder.split(":", 1)[1]
        lr = settings["learning_rate"] or 5e-5
        torch.manual_seed(settings["seed"])
        enc = PretrainedEncoderAdapter.from_pretrained(name, settings["max_len"])
        model = JointModel(enc, taxonomy.n, settings["lambda_acsa"], settings["lambda_rp"], head_seed=settings["seed"])
        tokenizer = PretrainedTokenizerAdapter.from_pretrained(name)
    else:
        raise UsageError(f"unknown encoder {encoder!r}; use 'tiny' or 'pretrained:<name>'")
    cfg = TrainConfig(
        batch_size=settings["batch_size"], epochs=settings["epochs"], learning_rate=lr,
        max_len=settings["max_len"], seed=settings["seed"], lambda_acsa=settings["lambda_acsa"],
        lambda_rp=settings["lambda_rp"], warmup_steps=settings["warmup_steps"], grad_clip=settings["grad_clip"],
        max_steps=settings["max_steps"], freeze_encoder=settings["freeze_encoder"],
        checkpoint_dir=str(out / "checkpoints"),
    )
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "train_log.jsonl", "w", encoding="utf-8") as log_fh, \
            open(out / "metrics.jsonl", "w", encoding="utf-8") as metrics_fh:
        def on_record(rec):
            line = json.dumps(rec, sort_keys=True) + "\n"
            log_fh.write(line)
            if rec["event"] == "epoch":
                metrics_fh.write(line)
                print(line, end="")

        result = train(train_ds, dev_ds, cfg, model, tokenizer, on_record)
    summary = {
        "final": _ckpt_summary(result.final),
        "best_f1": _ckpt_summary(result.best_f1),
        "best_mae": _ckpt_summary(result.best_mae),
        "dev_source": "dev" if args.dev else "train",
    }
    _write_json(out / "train_summary.json", summary)


def cmd_predict(args, settings, out: Path, taxonomy):
    ds = _read(args.data, taxonomy, settings)
    preds = _predict(ds, args.checkpoint, settings)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "predictions.jsonl", "w", encoding="utf-8") as fh:
        for p in preds:
            fh.write(json.dumps(prediction_record(p, taxonomy)) + "\n")
    print(json.dumps({"predictions": len(preds), "path": str(out / "predictions.jsonl")}))


def cmd_eval(args, settings, out: Path, taxonomy):
    gold = _read(args.gold, taxonomy, settings)
    preds = _aligned(read_predictions(args.preds, taxonomy), gold)
    report = {}
    acsa = rp = None
    if any(r.mentioned_count for r in gold):
        acsa = evaluate_acsa(preds, gold)
        report["acsa"] = acsa.to_dict()
    rp = evaluate_rp(preds, gold)
    report["rp"] = rp.to_dict()
    _write_json(out / "eval_metrics.json", report)
    table = format_report(acsa, rp)
    (out / "eval_metrics.txt").write_text(table + "\n", encoding="utf-8")
    print(table)


def cmd_visualize_attention(args, settings, out: Path, taxonomy):
    ds = _read(args.data, taxonomy, settings)
    if args.ids:
        wanted = {i.strip() for i in args.ids.split(",") if i.strip()}
        ds = corpus.Dataset(tuple(r for r in ds if r.id in wanted), ds.split, ds.taxonomy)
        if len(ds) != len(wanted):
            raise DataError("some requested review ids are not in the data file")
    preds = _predict(ds, args.checkpoint, settings | {"batch_size": 1}, trace=True)
    traces = [attention_trace(r, p, taxonomy) for r, p in zip(ds, preds)]
    write_attention(traces, out / "attention.jsonl", out / "attention.html")
    print(json.dumps({"reviews": len(traces), "path": str(out / "attention.jsonl")}))


def cmd_detect_unreliable(args, settings, out: Path, taxonomy):
    ds = _read(args.data, taxonomy, settings)
    if args.checkpoint:
        preds = _predict(ds, args.checkpoint, settings)
    else:
        preds = _aligned(read_predictions(args.preds, taxonomy), ds)
    rows = []
    for review, pred in zip(ds, preds):
        res = detect_unreliable(review, pred.predicted_rating, settings["threshold"])
        rows.append({"review_id": review.id, "rating": review.rating, "predicted_rating": pred.predicted_rating,
                     "margin": res.margin, "flagged": res.flagged})
    rows.sort(key=lambda r: (-r["margin"], r["review_id"]))
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "unreliable.jsonl", "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    print(json.dumps({"reviews": len(rows), "flagged": sum(r["flagged"] for r in rows)}))


COMMANDS = {
    "validate": cmd_validate,
    "curate": cmd_curate,
    "stats": cmd_stats,
    "split": cmd_split,
    "train": cmd_train,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "visualize-attention": cmd_visualize_attention,
    "detect-unreliable": cmd_detect_unreliable,
}


def _fail(code: int, exc: BaseException) -> int:
    print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}), file=sys.stderr)
    return code


def run(argv=None, env=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required; see --help")
        settings = resolve_settings(args, env)
        out = Path(args.out_dir)
        taxonomy = _taxonomy(args)
        _write_json(out / "resolved_config.json", {"command": args.command, **{
            k: (list(v) if isinstance(v, tuple) else v) for k, v in settings.items()}})
        COMMANDS[args.command](args, settings, out, taxonomy)
    except UsageError as exc:
        return _fail(EXIT_USAGE, exc)
    except (DataError, FileNotFoundError, UnicodeDecodeError) as exc:
        return _fail(EXIT_DATA, exc)
    except (AsapError, RuntimeError, OSError, ValueError) as exc:
        return _fail(EXIT_RUNTIME, exc)
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
