"""Command-line entry point.

Exit status: 0 on success, 2 for usage or configuration problems (bad flags,
unreadable or invalid config, missing data, incompatible checkpoint), 1 for
failures while running.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_run_config
from .datasets import (
    BagCSVError,
    BagDatasetSpec,
    IdxFormatError,
    bags_to_csv,
    build_bags,
    gen_toy,
    load_bag_csv,
    load_digits_pool,
    load_idx,
    write_key_values,
)
from .metrics import METRIC_NAMES
from .milcore import load_checkpoint, save_checkpoint
from .persistence import diagram_from_pairing, diagram_to_csv, euclidean_distance_matrix, vr_persistence_0d
from .training import SWEEP_HEADER, PoolSource, SweepResult, ToySource, evaluate, scarcity_sweep, train

log = logging.getLogger("topomil")


class UsageError(Exception):
    pass


def _load_pool(cfg: RunConfig):
    if cfg.pool_images:
        return load_idx(cfg.pool_images, cfg.pool_labels)
    return load_digits_pool()


def _load_bags(path):
    p = Path(path)
    if p.is_dir():
        p = p / "bags.csv"
    if not p.is_file():
        raise UsageError(f"data file not found: {p}")
    try:
        bags = load_bag_csv(p)
    except BagCSVError as exc:
        raise UsageError(str(exc)) from None
    if not bags:
        raise UsageError(f"{p}: no bags")
    return bags


def _fmt(x) -> str:
    return "nan" if x is None or (isinstance(x, float) and np.isnan(x)) else f"{x:.6f}"


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(args) -> int:
    cfg = load_run_config(args.spec, kind=args.kind) if args.kind else load_run_config(args.spec)
    try:
        if cfg.kind == "toy":
            bags = gen_toy(cfg.n_bags, cfg.size_mean, cfg.size_std, cfg.dim, cfg.seed, cfg.positive_cap)
        else:
            spec = BagDatasetSpec(cfg.n_bags, cfg.size_mean, cfg.size_std, cfg.positive_cap, cfg.positive_label,
                                  cfg.seed)
            x, y = _load_pool(cfg)
            bags = build_bags(x, y, spec)
    except (ValueError, IdxFormatError, OSError) as exc:
        raise UsageError(f"invalid dataset spec: {exc}") from None
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "bags.csv").write_text(bags_to_csv(bags), encoding="utf-8")
        write_key_values(cfg.dataset_items(), out / "manifest.txt")
    except OSError as exc:
        raise UsageError(f"cannot write to {out}: {exc.strerror}") from None
    n_pos = sum(b.label == 1 for b in bags)
    print(f"bags={len(bags)} positive={n_pos} negative={len(bags) - n_pos}")
    return 0


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    bags = _load_bags(args.data)
    val = _load_bags(cfg.val_data) if cfg.val_data else None
    try:
        tcfg = cfg.train_config(bags[0].instances.shape[1])
    except ValueError as exc:
        raise UsageError(f"invalid config: {exc}") from None
    model, history = train(bags, tcfg, val_bags=val)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out / "model.ckpt")
    (out / "history.csv").write_text(history.to_csv(), encoding="utf-8")

    last = history.records[-1]
    print(f"epochs={len(history)}")
    print(f"final_loss_class={_fmt(last.loss_class)}")
    print(f"final_loss_topo={_fmt(last.loss_topo_fwd + last.loss_topo_rev)}")
    if val is not None:
        best = history.records[history.best_epoch]
        print(f"final_val_accuracy={_fmt(last.val_accuracy)} final_val_f1={_fmt(last.val_f1)}")
        print(f"best_epoch={history.best_epoch} best_val_accuracy={_fmt(best.val_accuracy)} "
              f"best_val_f1={_fmt(best.val_f1)}")
    else:
        report = evaluate(model, bags)
        print(f"final_train_accuracy={_fmt(report.accuracy)} final_train_f1={_fmt(report.f1)}")
    return 0


def cmd_eval(args) -> int:
    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        raise UsageError(f"checkpoint not found: {ckpt}")
    try:
        model = load_checkpoint(ckpt)
    except ValueError as exc:
        raise UsageError(f"unreadable checkpoint: {exc}") from None
    bags = _load_bags(args.data)
    d = bags[0].instances.shape[1]
    if d != model.config.encoder.input_dim:
        raise UsageError(f"checkpoint expects {model.config.encoder.input_dim} features, data has {d}")
    report = evaluate(model, bags)
    if report.auroc_skipped:
        log.warning("AUROC undefined for class(es) %s (absent from the data); left out of the mean",
                    list(report.auroc_skipped))
    for name in METRIC_NAMES:
        print(f"{name}={_fmt(getattr(report, name))}")
    return 0


def cmd_ph(args) -> int:
    bags = {b.id: b for b in _load_bags(args.data)}
    if args.bag not in bags:
        raise UsageError(f"no bag with id {args.bag!r}")
    dist = euclidean_distance_matrix(bags[args.bag].instances)
    pairing = vr_persistence_0d(dist)
    sys.stdout.write(diagram_to_csv(pairing, diagram_from_pairing(dist, pairing)))
    return 0


def _read_sweep_rows(path: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != SWEEP_HEADER:
            raise UsageError(f"{path}: not a sweep results file")
        return [
            {"bag_count": int(r["bag_count"]), "size_mean": float(r["size_mean"]), "size_std": float(r["size_std"]),
             "model": r["model"], "run": int(r["run"]), "f1": float(r["f1"]), "accuracy": float(r["accuracy"])}
            for r in reader
        ]


def cmd_sweep(args) -> int:
    cfg = load_run_config(args.config)
    out = Path(cfg.out or Path(args.config).resolve().parent / "sweep")
    out.mkdir(parents=True, exist_ok=True)
    results = out / "sweep.csv"
    if cfg.kind == "toy":
        source = ToySource(cfg.dim, cfg.positive_cap)
        input_dim = cfg.dim
    else:
        try:
            x, y = _load_pool(cfg)
        except (IdxFormatError, OSError) as exc:
            raise UsageError(f"cannot load pool: {exc}") from None
        source = PoolSource(x, y, cfg.positive_label, cfg.positive_cap)
        input_dim = x.shape[1]
    try:
        tcfg = cfg.train_config(input_dim)
    except ValueError as exc:
        raise UsageError(f"invalid config: {exc}") from None

    done: list[dict] = []
    if args.resume and results.is_file():
        done = _read_sweep_rows(results)
    skip = {(r["bag_count"], r["size_mean"], r["size_std"], r["model"], r["run"]) for r in done}
    log.info("%d cells already done", len(skip))

    # rows are appended as they finish so an interrupted sweep can resume
    with open(results, "w", encoding="utf-8") as fh:
        fh.write(SweepResult(done).to_csv())
        fh.flush()

        def on_row(row):
            fh.write(SweepResult([row]).to_csv().split("\n", 1)[1])
            fh.flush()

        new = scarcity_sweep(source, cfg.bag_counts, cfg.size_specs, cfg.runs, tcfg, cfg.sweep_lam,
                             test_bags=cfg.test_bags, base_seed=cfg.seed, skip=skip, on_row=on_row)
    order = {"baseline": 0, "topo": 1}
    merged = SweepResult(sorted(done + new.rows, key=lambda r: (r["bag_count"], r["size_mean"], r["size_std"],
                                                                 order[r["model"]], r["run"])))
    results.write_text(merged.to_csv(), encoding="utf-8")
    for cell in merged.summary():
        print(f"{cell['bag_count']},{cell['size_mean']!r},{cell['size_std']!r},{cell['model']},"
              f"f1={cell['f1_mean']:.4f}+-{cell['f1_std']:.4f}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="topomil", description="Topologically regularised MIL.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a bag dataset and its manifest")
    g.add_argument("--kind", choices=["toy", "pool-bags"])
    g.add_argument("--spec", required=True, help="key=value dataset spec (a manifest works too)")
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a model; writes model.ckpt and history.csv")
    t.add_argument("--config", required=True)
    t.add_argument("--data", required=True, help="bag CSV or a directory holding bags.csv")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="print metrics of a checkpoint on a dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.set_defaults(func=cmd_eval)

    h = sub.add_parser("ph", help="0-dim persistence diagram of one bag as CSV")
    h.add_argument("--data", required=True)
    h.add_argument("--bag", required=True)
    h.add_argument("--space", choices=["input"], default="input")
    h.set_defaults(func=cmd_ph)

    s = sub.add_parser("sweep", help="baseline vs regularised scarcity sweep")
    s.add_argument("--config", required=True)
    s.add_argument("--resume", action="store_true", help="keep finished cells from an earlier sweep.csv")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"topomil {args.command}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"topomil {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
