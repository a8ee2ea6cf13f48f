"""Command-line entry points: synth | train | eval | diagnose.

Run configuration comes from a flat key=value file (see config.py) with
`--set key=value` overrides. Output paths may be relative to the
TABIMG_OUT_ROOT environment variable. Exit codes: 0 success, 2 config
error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import shutil
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config, save_config
from .data import TabularSchema, load_dataset
from .errors import ConfigError, DataError, NumericalError
from .metrics import score
from .synth import SynthConfig, generate, write_dataset
from .trainer import Trainer

log = logging.getLogger("tabimg")


def _resolve(path: str) -> Path:
    root = os.environ.get("TABIMG_OUT_ROOT")
    p = Path(path)
    if root and not p.is_absolute():
        return Path(root) / p
    return p


def _load_run_config(args) -> RunConfig:
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, val = item.split("=", 1)
        overrides[key.strip()] = val.strip()
    if args.config:
        return load_config(args.config, overrides)
    from .config import parse_config_text
    return parse_config_text("", overrides)


def _load_datasets(data_dir: Path):
    schema = TabularSchema.from_json(data_dir / "schema.json")
    return load_dataset(data_dir / "data.csv", data_dir / "images", schema,
                        data_dir / "split.json"), schema


def cmd_synth(args) -> int:
    cfg = _load_run_config(args)
    out_dir = _resolve(args.out or cfg.out_dir)
    if not str(out_dir):
        raise ConfigError("synth requires an output directory (--out)")
    if out_dir.exists() and any(out_dir.iterdir()):
        if not args.force:
            raise ConfigError(f"output dir {out_dir} is not empty; use --force")
        shutil.rmtree(out_dir)
    bundle = generate(SynthConfig.from_run_config(cfg))
    write_dataset(bundle, out_dir)
    n_train = len(bundle.splits["train"].ids)
    print(json.dumps({"out_dir": str(out_dir), "n_train": n_train,
                      "n_val": len(bundle.splits["val"].ids),
                      "n_test": len(bundle.splits["test"].ids),
                      "n_labeled": len(bundle.labeled_ids)}))
    return 0


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    data_dir = _resolve(args.data or cfg.data_dir)
    out_dir = _resolve(args.out or cfg.out_dir)
    if not str(data_dir) or not data_dir.exists():
        raise DataError(f"dataset directory not found: {data_dir}")
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = out_dir / ".lock"
    if lock.exists():
        raise ConfigError(f"output dir {out_dir} is locked by another run "
                          f"(remove {lock} if stale)")
    lock.write_text(str(os.getpid()))
    try:
        datasets, schema = _load_datasets(data_dir)
        num_classes = int(max(ds.labels.max() for ds in datasets.values())) + 1
        trainer = Trainer(cfg, schema, num_classes,
                          image_channels=datasets["val"].images.shape[1])
        effective = trainer.cfg
        save_config(effective, out_dir / "config_effective.txt")
        metrics_path = out_dir / "metrics.jsonl"
        if args.resume:
            trainer.load_checkpoint(_resolve(args.resume))
        else:
            metrics_path.unlink(missing_ok=True)
        trainer.fit(datasets, metrics_path=metrics_path,
                    checkpoint_dir=out_dir)
        best = max((h["val_metric"] for h in trainer.history), default=None)
        print(json.dumps({"out_dir": str(out_dir), "epochs": trainer.epoch,
                          "best_val_metric": best}))
        return 0
    finally:
        lock.unlink(missing_ok=True)


def cmd_eval(args) -> int:
    cfg = _load_run_config(args)
    data_dir = _resolve(args.data or cfg.data_dir)
    datasets, schema = _load_datasets(data_dir)
    dataset = datasets[args.split]
    num_classes = int(max(ds.labels.max() for ds in datasets.values())) + 1
    trainer = Trainer(cfg, schema, num_classes,
                      image_channels=dataset.images.shape[1])
    ckpt_path = _resolve(args.checkpoint)
    trainer.load_checkpoint(ckpt_path)
    metric = args.metric or cfg.metric
    probs = trainer.predict_proba(dataset)
    value = score(probs, dataset.labels, metric)
    ckpt_hash = hashlib.sha256(ckpt_path.read_bytes()).hexdigest()[:16]
    out = {"metric": metric, "value": value, "n_samples": len(dataset),
           "checkpoint_hash": ckpt_hash}
    print(json.dumps(out))
    if args.out:
        _resolve(args.out).write_text(json.dumps(out))
    return 0


DIAG_SERIES = ["pl_accuracy", "confident_ratio", "q_accuracy_confident",
               "q_accuracy_all"]


def cmd_diagnose(args) -> int:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    log_path = _resolve(args.metrics)
    out_dir = _resolve(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    records, skipped = [], 0
    if log_path.exists():
        for line in log_path.read_text().splitlines():
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError:
                skipped += 1
    if skipped:
        log.warning("skipped %d malformed log lines", skipped)

    epochs = [r.get("epoch") for r in records]
    fig, axes = plt.subplots(2, 2, figsize=(10, 7))
    for ax, key in zip(axes.flat, DIAG_SERIES):
        vals = [r.get(key) for r in records]
        pts = [(e, v) for e, v in zip(epochs, vals) if v is not None]
        if pts:
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o",
                    markersize=3)
        ax.set_title(key)
        ax.set_xlabel("epoch")
    fig.tight_layout()
    fig.savefig(out_dir / "pseudo_label_quality.png", dpi=120)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(7, 4.5))
    case_names = ["case1", "case2i", "case2t", "case3"]
    for i, name in enumerate(case_names):
        series = [(e, r["case_ratios"][i]) for e, r in zip(epochs, records)
                  if r.get("case_ratios")]
        if series:
            ax.plot([s[0] for s in series], [s[1] for s in series], label=name)
    ax.set_xlabel("epoch")
    ax.set_ylabel("sample ratio")
    if records:
        ax.legend()
    fig.tight_layout()
    fig.savefig(out_dir / "case_ratios.png", dpi=120)
    plt.close(fig)

    with open(out_dir / "series.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch"] + DIAG_SERIES + case_names)
        for r in records:
            ratios = r.get("case_ratios") or [None] * 4
            writer.writerow([r.get("epoch")] +
                            [r.get(k) for k in DIAG_SERIES] + list(ratios))
    print(json.dumps({"out_dir": str(out_dir), "epochs": len(records),
                      "skipped_lines": skipped}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tabimg")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--out", help="output dataset directory")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model")
    common(p)
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--out", help="run output directory")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--ablate", action="append",
                   choices=["dcc", "cgpl", "pgls"],
                   help="disable a component")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p)
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test",
                   choices=["train_labeled", "train_unlabeled", "val", "test"])
    p.add_argument("--metric", choices=["accuracy", "auc"])
    p.add_argument("--out", help="write the result JSON here as well")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("diagnose", help="emit figures from a metrics log")
    p.add_argument("--metrics", required=True, help="metrics.jsonl path")
    p.add_argument("--out", required=True, help="figure output directory")
    p.set_defaults(func=cmd_diagnose)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "ablate", None):
        args.set = (args.set or []) + [f"enable_{a}=false" for a in args.ablate]
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
