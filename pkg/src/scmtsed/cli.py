"""Command-line entry point: ``scmtsed <command> [flags]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from .data import extract_features, load_split
from .datagen import CLASS_NAMES, SPLITS, DatasetConfig, build_dataset
from .features import NormStats
from .model import CheckpointError, load_checkpoint
from .train import STRATEGIES, TrainingConfig, evaluate_f1, load_train_data, read_metrics, train_stage1, train_stage2

log = logging.getLogger("scmtsed")

# flags that map one-to-one onto TrainingConfig fields
_CONFIG_FLAGS = {
    "strategy": str, "preset": str, "steps": int, "T": int, "ema_alpha": float, "lambda_d": float,
    "lambda_d_warmup_frac": float, "stage2_frac": float, "noise_sigma": float, "lr": float,
    "max_shift_seconds": float, "max_shift_bins": int, "eval_interval": int, "checkpoint_interval": int,
    "decode_threshold": float, "median_window": int, "validation_limit": int,
}


def _cache_dir(args) -> Path:
    return Path(args.cache) if args.cache else Path(args.data) / "features"


def _require(path, what: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


def _freeze(out_dir, record: dict, name: str = "run.yaml"):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / name).write_text(yaml.safe_dump(record, sort_keys=True))


def _ckpt_stats(extra: dict, cache_dir: Path) -> NormStats:
    if "norm_stats" in extra:
        ns = extra["norm_stats"]
        return NormStats(np.asarray(ns["mean"]), np.asarray(ns["std"]))
    return NormStats.load(_require(cache_dir / "stats.json", "feature statistics"))


def cmd_make_dataset(args) -> int:
    cfg = DatasetConfig()
    if args.counts:
        cfg.counts = dict(zip(SPLITS, args.counts))
    index = build_dataset(args.out, cfg, seed=args.seed)
    sizes = ", ".join(f"{s}={v['count']}" for s, v in index["splits"].items())
    print(f"wrote dataset to {args.out} ({sizes})")
    return 0


def cmd_extract_features(args) -> int:
    _require(args.data, "dataset directory")
    cache = _cache_dir(args)
    written = extract_features(args.data, cache)
    _freeze(cache, {"command": "extract-features", "data": str(args.data), "cache": str(cache)})
    print(f"cached features in {cache}: {written}")
    return 0


def cmd_train_tagger(args) -> int:
    from .data import ClipSet
    from .tagger import save_tagger, train_tagger

    cache = _require(_cache_dir(args), "feature cache")
    clips = ClipSet.concat([load_split(args.data, cache, s, 81) for s in ("strong_synthetic", "weak_real")])
    model = train_tagger(clips, steps=args.steps, seed=args.seed, model_preset=args.preset)
    out = Path(args.out)
    meta = {"command": "train-tagger", "data": str(args.data), "cache": str(cache), "steps": args.steps,
            "seed": args.seed, "preset": args.preset}
    _freeze(out, meta)
    save_tagger(out / "tagger.pt", model, meta)
    print(f"tagger saved to {out / 'tagger.pt'}")
    return 0


def cmd_pseudo_label(args) -> int:
    from .tagger import pseudo_label, write_pseudo_manifest

    model, _, extra = load_checkpoint(_require(args.tagger, "tagger checkpoint"))
    cache = _require(_cache_dir(args), "feature cache")
    clips = load_split(args.data, cache, "unlabeled_real", model.cfg.n_out_frames)
    labels = pseudo_label(model, clips, args.threshold)
    write_pseudo_manifest(args.out, labels)
    _freeze(Path(args.out).parent, {"command": "pseudo-label", "tagger": str(args.tagger), "data": str(args.data),
                                    "threshold": args.threshold, "out": str(args.out)}, "pseudo_label.yaml")
    print(f"pseudo-labeled {len(labels)} of {len(clips)} unlabeled clips -> {args.out}")
    return 0


def _training_config(args, base: dict | None = None) -> TrainingConfig:
    d = dict(base or {})
    if args.config:
        d.update(yaml.safe_load(_require(args.config, "config file").read_text()) or {})
    for name in _CONFIG_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            d[name] = value
    if args.seed is not None:
        d["seed"] = args.seed
    if args.pseudo_labels:
        d["pseudo_labels"] = str(_require(args.pseudo_labels, "pseudo-label manifest"))
    if args.batch:
        d["batch_composition"] = args.batch
    return TrainingConfig.from_dict(d)


def cmd_train(args) -> int:
    from .model import preset

    _require(args.data, "dataset directory")
    cache = _require(_cache_dir(args), "feature cache")
    if args.stage == 1:
        cfg = _training_config(args)
        data = load_train_data(args.data, cache, preset(cfg.preset).n_out_frames, cfg.pseudo_labels,
                               cfg.validation_limit)
        result = train_stage1(cfg, data, args.out)
    else:
        if not args.from_ckpt:
            raise ValueError("--stage 2 needs --from <stage-1 checkpoint>")
        _, _, extra = load_checkpoint(_require(args.from_ckpt, "checkpoint"))
        base = extra.get("training_config", {})
        cfg = _training_config(args, base)
        data = load_train_data(args.data, cache, preset(cfg.preset).n_out_frames, cfg.pseudo_labels,
                               cfg.validation_limit, stats=_ckpt_stats(extra, cache))
        result = train_stage2(args.from_ckpt, cfg, data, args.out, ada=args.ada == "on", steps=args.steps_stage2)
    _freeze(args.out, {"command": "train", "stage": args.stage, "ada": args.ada, "data": str(args.data),
                       "cache": str(cache), "from": args.from_ckpt, "training": cfg.to_dict()})
    f1 = result.get("f1")
    print(f"checkpoint {result['checkpoint']}" + (f", validation F1 {f1:.4f}" if f1 is not None else ""))
    return 0


def cmd_evaluate(args) -> int:
    ckpt = _require(args.ckpt, "checkpoint")
    model, step, extra = load_checkpoint(ckpt)
    cache = _require(_cache_dir(args), "feature cache")
    clips = load_split(args.data, cache, args.split, model.cfg.n_out_frames, _ckpt_stats(extra, cache))
    res = evaluate_f1(model, clips, args.threshold, args.median_window)
    record = {
        "checkpoint": str(ckpt), "split": args.split, "step": step, "threshold": args.threshold,
        "median_window": args.median_window, "macro_f1": res.macro_f1, "micro_f1": res.micro.f1,
        "per_class_f1": {CLASS_NAMES[c]: s.f1 for c, s in res.per_class.items()},
    }
    out = Path(args.out) if args.out else ckpt.parent
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval.json").write_text(json.dumps(record, indent=1, sort_keys=True) + "\n")
    print(f"macro F1 {res.macro_f1:.4f} (micro {res.micro.f1:.4f}) on {len(clips)} {args.split} clips")
    return 0


def cmd_analyze(args) -> int:
    from .report import analysis_clips, domain_gap_report

    ckpt = _require(args.ckpt, "checkpoint")
    model, step, extra = load_checkpoint(ckpt)
    cache = _require(_cache_dir(args), "feature cache")
    stats = _ckpt_stats(extra, cache)
    n = model.cfg.n_out_frames
    synth = load_split(args.data, cache, "strong_synthetic", n, stats, limit=args.per_domain)
    real = load_split(args.data, cache, args.split, n, stats, limit=args.per_domain)
    meta = {"checkpoint": str(ckpt), "step": step, "stage": extra.get("stage"), "split": args.split,
            "strategy": extra.get("training_config", {}).get("strategy")}
    report = domain_gap_report(model, analysis_clips(synth, real, args.per_domain), args.perplexity, args.seed, meta)
    out = Path(args.out) if args.out else ckpt.parent
    report.save(out)
    print(f"silhouette: projection {report.projection_silhouette:.4f}, raw {report.raw_silhouette:.4f} -> {out}")
    return 0


def _run_summary(run: Path) -> dict:
    row = {"run": run.name, "strategy": "", "stage": "", "ada": "", "f1": None,
           "silhouette_projection": None, "silhouette_raw": None}
    if (run / "run.yaml").exists():
        frozen = yaml.safe_load((run / "run.yaml").read_text()) or {}
        row["stage"] = frozen.get("stage", "")
        row["ada"] = frozen.get("ada", "") if frozen.get("stage") == 2 else ""
        row["strategy"] = frozen.get("training", {}).get("strategy", "")
    if (run / "eval.json").exists():
        row["f1"] = json.loads((run / "eval.json").read_text())["macro_f1"]
    elif (run / "metrics.jsonl").exists():
        finals = [r for r in read_metrics(run / "metrics.jsonl") if r.get("event") == "final"]
        if finals and "f1" in finals[-1]:
            row["f1"] = finals[-1]["f1"]
    if (run / "report.json").exists():
        rep = json.loads((run / "report.json").read_text())
        row["silhouette_projection"] = rep["silhouette_projection"]
        row["silhouette_raw"] = rep["silhouette_raw"]
    return row


def format_table(rows: list[dict]) -> str:
    cols = ["run", "strategy", "stage", "ada", "f1", "silhouette_projection", "silhouette_raw"]
    fmt = lambda v: "-" if v is None or v == "" else (f"{v:.4f}" if isinstance(v, float) else str(v))
    cells = [cols] + [[fmt(r[c]) for c in cols] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(cols))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def cmd_compare(args) -> int:
    rows = [_run_summary(_require(r, "run directory")) for r in args.runs]
    table = format_table(rows)
    print(table)
    if args.out:
        Path(args.out).write_text(table + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="scmtsed", description="Semi-supervised SED with domain adaptation.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def data_args(sp, data_required=True):
        sp.add_argument("--data", required=data_required, help="dataset directory")
        sp.add_argument("--cache", help="feature cache (default: <data>/features)")

    sp = sub.add_parser("make-dataset", help="render the synthetic two-domain corpus")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--counts", type=int, nargs=4, metavar=("STRONG", "WEAK", "UNLABELED", "VAL"))
    sp.set_defaults(func=cmd_make_dataset)

    sp = sub.add_parser("extract-features", help="cache log-mel features and normalization stats")
    data_args(sp)
    sp.set_defaults(func=cmd_extract_features)

    sp = sub.add_parser("train-tagger", help="train the clip-level tagger used for pseudo-labels")
    data_args(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--steps", type=int, default=500)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--preset", default="tiny")
    sp.set_defaults(func=cmd_train_tagger)

    sp = sub.add_parser("pseudo-label", help="weakly label the unlabeled real split")
    data_args(sp)
    sp.add_argument("--tagger", required=True)
    sp.add_argument("--out", required=True, help="output manifest (.tsv)")
    sp.add_argument("--threshold", type=float, default=0.5)
    sp.set_defaults(func=cmd_pseudo_label)

    sp = sub.add_parser("train", help="stage 1 (semi-supervised) or stage 2 (adversarial) training")
    data_args(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--stage", type=int, choices=(1, 2), default=1)
    sp.add_argument("--ada", choices=("on", "off"), default="on")
    sp.add_argument("--from", dest="from_ckpt", help="stage-1 checkpoint (stage 2)")
    sp.add_argument("--config", help="YAML training config; flags override it")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--pseudo-labels")
    sp.add_argument("--batch", type=int, nargs=3, metavar=("STRONG", "WEAK", "UNLABELED"))
    sp.add_argument("--steps-stage2", type=int, help="stage-2 length (default: stage2_frac of stage 1)")
    for name, typ in _CONFIG_FLAGS.items():
        kwargs = {"choices": STRATEGIES} if name == "strategy" else {}
        sp.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, **kwargs)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", help="event-based F1 of a checkpoint")
    data_args(sp)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--split", default="validation")
    sp.add_argument("--threshold", type=float, default=0.5)
    sp.add_argument("--median-window", type=int, default=7)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("analyze", help="t-SNE map and domain silhouette of a checkpoint")
    data_args(sp)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--split", default="validation", help="real-domain split paired with synthetic clips")
    sp.add_argument("--per-domain", type=int, default=80)
    sp.add_argument("--perplexity", type=float, default=30.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("compare", help="tabulate F1 and silhouette across run directories")
    sp.add_argument("runs", nargs="+")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError, CheckpointError, FloatingPointError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"scmtsed {args.command}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
