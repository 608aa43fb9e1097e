"""Command-line pipeline: generate data, build vocab, train, evaluate, analyze.

Every subcommand writes its artifacts plus a machine-readable summary.json
and the echoed effective config into its output directory, and exits 0 on
success or nonzero with a diagnostic on failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import analysis as A
from . import metrics as M
from .checkpoint import Checkpoint
from .config import ConfigError, apply_overrides, echo_config, load_config
from .data import build_kb, group_bags, load_dataset, load_inventory, load_type_map
from .encoder import EncoderConfig
from .model import IntraBagModel, PassageAttModel, instance_len_for
from .passage import Vocabulary, build_vocab
from .synth import SynthSpec, generate, write_corpus
from .train import TrainConfig, evaluate_checkpoint, model_from_checkpoint, train

SPLITS = ("train", "dev", "test")


def _write_summary(out_dir: Path, payload: dict):
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "summary.json").write_text(json.dumps(payload, indent=2) + "\n",
                                          encoding="utf-8")


def _load_split(data_dir: Path, split: str, inventory):
    path = data_dir / f"{split}.jsonl"
    if not path.exists():
        raise FileNotFoundError(f"missing dataset file {path}")
    return group_bags(load_dataset(path, inventory), inventory)


def _load_data(data_dir: str | Path):
    data_dir = Path(data_dir)
    inventory = load_inventory(data_dir / "relations.txt")
    bags = {split: _load_split(data_dir, split, inventory) for split in SPLITS}
    return inventory, bags


def cmd_gen_synth(args) -> int:
    cfg = load_config(args.config)
    cfg = apply_overrides(cfg, {"synth.seed": args.seed, "paths.out_dir": args.out})
    out_dir = Path(cfg["paths"]["out_dir"])
    spec = SynthSpec.from_dict(cfg["synth"])
    corpus = generate(spec)
    write_corpus(corpus, out_dir)
    echo_config(cfg, out_dir)
    _write_summary(out_dir, {
        "command": "gen-synth", "seed": spec.seed,
        "n_bags": {s: len(b) for s, b in corpus.splits.items()},
        "n_relations": corpus.inventory.n_relations,
        "n_kb_triples": len(corpus.kb.triples)})
    print(f"wrote synthetic corpus to {out_dir}")
    return 0


def cmd_build_vocab(args) -> int:
    cfg = load_config(args.config)
    cfg = apply_overrides(cfg, {"min_count": args.min_count})
    inventory = load_inventory(Path(args.data_dir) / "relations.txt")
    instances = load_dataset(Path(args.data_dir) / "train.jsonl", inventory)
    vocab = build_vocab(instances, min_count=cfg["min_count"])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    vocab.save(out)
    print(f"vocabulary of {len(vocab)} tokens written to {out}")
    return 0


def _build_model(cfg: dict, vocab, inventory, train_bags):
    enc_cfg = EncoderConfig(vocab_size=len(vocab), **cfg["encoder"])
    kind = cfg["model"]["kind"]
    seed = cfg["seed"]
    if kind == "passage_att":
        return PassageAttModel.build(vocab, inventory, enc_cfg, seed=seed,
                                     attend_pad=cfg["model"]["attend_pad"])
    instance_len = cfg["model"]["instance_len"] or instance_len_for(train_bags,
                                                                    enc_cfg.L_max)
    return IntraBagModel.build(vocab, inventory, enc_cfg, seed=seed, mode=kind,
                               instance_len=instance_len)


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    cfg = apply_overrides(cfg, {
        "paths.data_dir": args.data_dir, "paths.out_dir": args.out,
        "paths.vocab": args.vocab, "model.kind": args.kind,
        "model.attend_pad": args.attend_pad, "seed": args.seed,
        "train.max_epochs": args.epochs, "train.learning_rate": args.lr,
        "train.batch_size_bags": args.batch_size, "train.seed": args.seed,
        "encoder.dropout_rate": args.dropout,
    })
    out_dir = Path(cfg["paths"]["out_dir"])
    inventory, bags = _load_data(cfg["paths"]["data_dir"])
    if cfg["paths"]["vocab"]:
        vocab = Vocabulary.load(cfg["paths"]["vocab"])
    else:
        vocab = build_vocab([i for b in bags["train"] for i in b.instances],
                            min_count=cfg["min_count"])
    model = _build_model(cfg, vocab, inventory, bags["train"])
    tcfg = TrainConfig(**cfg["train"])
    echo_config(cfg, out_dir)
    ckpt = train(bags["train"], bags["dev"], model, tcfg, out_dir=out_dir, quiet=args.quiet)
    _write_summary(out_dir, {
        "command": "train", "kind": model.kind, "seed": cfg["seed"],
        "steps": ckpt.step, "best_val_auc": ckpt.best_val_auc,
        "checkpoint": str(out_dir / "best.ckpt")})
    print(f"trained {model.kind} for {ckpt.step} steps; "
          f"best dev AUC {ckpt.best_val_auc}; checkpoints in {out_dir}")
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    cfg = apply_overrides(cfg, {
        "paths.data_dir": args.data_dir, "paths.out_dir": args.out,
        "paths.checkpoint": args.checkpoint, "eval_seed": args.eval_seed})
    out_dir = Path(cfg["paths"]["out_dir"])
    inventory, bags = _load_data(cfg["paths"]["data_dir"])
    ckpt = Checkpoint.load(cfg["paths"]["checkpoint"])
    report = evaluate_checkpoint(ckpt, bags[args.split], eval_seed=cfg["eval_seed"])
    echo_config(cfg, out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    M.write_report(report, out_dir / "metrics.txt")
    M.write_report_json(report, out_dir / "metrics.json")
    M.write_pr_csv(report.pr_points, out_dir / "pr_curve.csv")
    _write_summary(out_dir, {"command": "eval", "split": args.split,
                             **report.to_dict()})
    print(report.to_text())
    return 0


def cmd_analyze_pad(args) -> int:
    cfg = load_config(args.config)
    cfg = apply_overrides(cfg, {
        "paths.data_dir": args.data_dir, "paths.out_dir": args.out,
        "paths.checkpoint": args.checkpoint, "analysis.sample_n": args.sample_n,
        "analysis.threshold": args.threshold, "seed": args.seed})
    out_dir = Path(cfg["paths"]["out_dir"])
    inventory, bags = _load_data(cfg["paths"]["data_dir"])
    model = model_from_checkpoint(Checkpoint.load(cfg["paths"]["checkpoint"]))
    stats = A.pad_attention_stats(model, bags[args.split],
                                  sample_n=cfg["analysis"]["sample_n"],
                                  seed=cfg["seed"],
                                  threshold=cfg["analysis"]["threshold"],
                                  eval_seed=cfg["eval_seed"])
    echo_config(cfg, out_dir)
    _write_summary(out_dir, {"command": "analyze-pad", **stats.to_dict()})
    print(f"PAD attention mass: positives {stats.avg_pad_mass_positive:.4f}% "
          f"vs negatives {stats.avg_pad_mass_negative:.4f}% "
          f"({stats.n_bags_sampled} bags)")
    return 0


def cmd_analyze_bins(args) -> int:
    cfg = load_config(args.config)
    cfg = apply_overrides(cfg, {
        "paths.data_dir": args.data_dir, "paths.out_dir": args.out,
        "paths.checkpoint": args.checkpoint, "analysis.num_bins": args.num_bins})
    out_dir = Path(cfg["paths"]["out_dir"])
    inventory, bags = _load_data(cfg["paths"]["data_dir"])
    model = model_from_checkpoint(Checkpoint.load(cfg["paths"]["checkpoint"]))
    bins = A.length_bins(model, bags[args.split],
                         num_bins=cfg["analysis"]["num_bins"],
                         eval_seed=cfg["eval_seed"])
    echo_config(cfg, out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    A.write_bins_csv(bins, out_dir / "length_bins.csv")
    _write_summary(out_dir, {"command": "analyze-bins",
                             "bins": [b.to_dict() for b in bins]})
    for b in bins:
        auc_s = f"{b.auc:.4f}" if b.auc is not None else "undefined"
        print(f"tokens [{b.lo}, {b.hi}] n={b.n_bags} auc={auc_s}")
    return 0


def cmd_permute_test(args) -> int:
    cfg = load_config(args.config)
    cfg = apply_overrides(cfg, {
        "paths.data_dir": args.data_dir, "paths.out_dir": args.out,
        "paths.checkpoint": args.checkpoint, "seed": args.seed})
    out_dir = Path(cfg["paths"]["out_dir"])
    inventory, bags = _load_data(cfg["paths"]["data_dir"])
    types = load_type_map(Path(cfg["paths"]["data_dir"]) / "entity_types.tsv")
    combined_kb = build_kb([b for split in SPLITS for b in bags[split]],
                           entity_types=types)
    permuted, plan = A.permute_entities(bags["test"], combined_kb, seed=cfg["seed"])
    model = model_from_checkpoint(Checkpoint.load(cfg["paths"]["checkpoint"]))
    original = M.evaluate_model(model, bags["test"], eval_seed=cfg["eval_seed"])
    new = M.evaluate_model(model, permuted, eval_seed=cfg["eval_seed"])
    drop_pct = 100.0 * (original.auc - new.auc) / original.auc if original.auc else None
    echo_config(cfg, out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    plan.save(out_dir / "permutation_plan.jsonl")
    _write_summary(out_dir, {
        "command": "permute-test", "seed": cfg["seed"],
        "original_auc": original.auc, "permuted_auc": new.auc,
        "drop_pct": drop_pct, "n_replaced": len(plan.records),
        "n_skipped": len(plan.skipped)})
    print(f"AUC original {original.auc:.4f} -> permuted {new.auc:.4f} "
          f"({len(plan.records)} bags replaced, {len(plan.skipped)} skipped)")
    return 0


def cmd_compare(args) -> int:
    a = M.load_report_json(args.report_a)
    b = M.load_report_json(args.report_b)
    rows = []
    keys = ["auc", "p_at_100", "p_at_200", "p_at_300", "p_at_m", "micro_f1", "macro_f1"]
    for key in keys:
        va, vb = a.get(key), b.get(key)
        delta = (vb - va) if (va is not None and vb is not None) else None
        rows.append({"metric": key, "a": va, "b": vb, "delta": delta})
    lines = [f"{'metric':<10} {'a':>10} {'b':>10} {'delta':>10}"]
    for row in rows:
        fmt = lambda v: f"{v:.4f}" if isinstance(v, float) else "-"
        lines.append(f"{row['metric']:<10} {fmt(row['a']):>10} "
                     f"{fmt(row['b']):>10} {fmt(row['delta']):>10}")
    table = "\n".join(lines)
    print(table)
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "comparison.txt").write_text(table + "\n", encoding="utf-8")
        _write_summary(out_dir, {"command": "compare", "rows": rows,
                                 "report_a": str(args.report_a),
                                 "report_b": str(args.report_b)})
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="relbag",
        description="bag-level relation extraction with passage attention")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoint=False, data=True):
        p.add_argument("--config", help="JSON config file (flags win over it)")
        p.add_argument("--out", required=True, help="output directory")
        if data:
            p.add_argument("--data-dir", required=True, help="corpus directory")
        if checkpoint:
            p.add_argument("--checkpoint", required=True, help="checkpoint file")

    p = sub.add_parser("gen-synth", help="generate the synthetic corpus")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("build-vocab", help="build a vocabulary from the train split")
    p.add_argument("--config")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--min-count", type=int)
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("train", help="train a model")
    common(p)
    p.add_argument("--vocab", help="existing vocabulary file (default: build from train)")
    p.add_argument("--kind", choices=["passage_att", "att", "avg", "one", "shared_q"])
    pad = p.add_mutually_exclusive_group()
    pad.add_argument("--attend-pad", dest="attend_pad", action="store_true", default=None)
    pad.add_argument("--no-attend-pad", dest="attend_pad", action="store_false")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    common(p, checkpoint=True)
    p.add_argument("--split", choices=SPLITS, default="test")
    p.add_argument("--eval-seed", type=int, dest="eval_seed")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze-pad", help="PAD attention statistics")
    common(p, checkpoint=True)
    p.add_argument("--split", choices=SPLITS, default="test")
    p.add_argument("--sample-n", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_analyze_pad)

    p = sub.add_parser("analyze-bins", help="per-length-bin AUC")
    common(p, checkpoint=True)
    p.add_argument("--split", choices=SPLITS, default="test")
    p.add_argument("--num-bins", type=int)
    p.set_defaults(func=cmd_analyze_bins)

    p = sub.add_parser("permute-test", help="entity permutation robustness test")
    common(p, checkpoint=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_permute_test)

    p = sub.add_parser("compare", help="compare two metrics.json reports")
    p.add_argument("--report-a", required=True)
    p.add_argument("--report-b", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, FileNotFoundError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
