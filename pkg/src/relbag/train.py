"""Training loop with decoupled-weight-decay Adam and deterministic seeding.

Each epoch shuffles bags with an epoch-derived seed and rebuilds every bag's
passage with a fresh epoch-derived seed, so re-running with the same config
is bit-reproducible in 64-bit mode and resuming from a checkpoint at any
step boundary continues identically. Weight decay is applied as direct
parameter shrinkage, never through the gradient.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from . import heads as H
from . import metrics as M
from .autodiff import Tensor
from .checkpoint import Checkpoint, config_hash
from .data import Bag, RelationInventory
from .encoder import EncoderConfig
from .model import IntraBagModel, PassageAttModel, gold_vector
from .passage import Vocabulary, derive_seed


@dataclass
class TrainConfig:
    learning_rate: float = 2e-5
    weight_decay: float = 1e-5
    batch_size_bags: int = 16
    max_epochs: int = 5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip_norm: float | None = None
    seed: int = 0
    eval_every: int = 0  # steps; 0 = evaluate at each epoch end

    def __post_init__(self):
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ValueError("learning_rate must be positive, weight_decay non-negative")
        if self.batch_size_bags < 1:
            raise ValueError("batch_size_bags must be >= 1")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "learning_rate", "weight_decay", "batch_size_bags", "max_epochs",
            "beta1", "beta2", "eps", "grad_clip_norm", "seed", "eval_every")}


class AdamW:
    """Adaptive moments with decoupled weight decay.

    A parameter with zero gradient and zero moments still shrinks by the
    factor (1 - lr * wd) every step.
    """

    def __init__(self, params: dict[str, Tensor], cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self):
        cfg = self.cfg
        self.t += 1
        b1c = 1.0 - cfg.beta1 ** self.t
        b2c = 1.0 - cfg.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = self.m[name]
            v = self.v[name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            update = (m / b1c) / (np.sqrt(v / b2c) + cfg.eps)
            p.data = p.data - cfg.learning_rate * update \
                - cfg.learning_rate * cfg.weight_decay * p.data

    def clip_gradients(self, max_norm: float) -> float:
        total = 0.0
        for p in self.params.values():
            if p.grad is not None:
                total += float((p.grad.astype(np.float64) ** 2).sum())
        norm = math.sqrt(total)
        if norm > max_norm and norm > 0:
            scale = max_norm / norm
            for p in self.params.values():
                if p.grad is not None:
                    p.grad = p.grad * scale
        return norm


@dataclass
class TrainLogEntry:
    step: int
    loss: float
    lr: float
    val_auc: float | None = None


def _snapshot(model, optimizer: AdamW, step: int, epoch: int,
              best_val_auc: float | None, cfg_hash: str) -> Checkpoint:
    params = model.parameters()
    return Checkpoint(
        params={k: p.data.copy() for k, p in params.items()},
        adam_m={k: optimizer.m[k].copy() for k in params},
        adam_v={k: optimizer.v[k].copy() for k in params},
        step=step, epoch=epoch, best_val_auc=best_val_auc, cfg_hash=cfg_hash,
        meta=model_meta(model))


def model_meta(model) -> dict:
    meta = {
        "kind": model.kind,
        "enc_config": model.enc_config.to_dict(),
        "dtype": str(model.enc_params["emb.tok"].data.dtype),
        "vocab_tokens": model.vocab.corpus_tokens(),
        "relation_names": list(model.inventory.names),
        "na_name": model.inventory.na_name,
    }
    if model.kind == "passage_att":
        meta["attend_pad"] = model.attend_pad
    else:
        meta["instance_len"] = model.instance_len
    return meta


def model_from_checkpoint(ckpt: Checkpoint):
    """Rebuild a scoring-ready model from checkpoint metadata and parameters."""
    meta = ckpt.meta
    vocab = Vocabulary(meta["vocab_tokens"])
    inventory = RelationInventory(meta["relation_names"], meta["na_name"])
    enc_config = EncoderConfig(**meta["enc_config"])
    kind = meta["kind"]
    if kind == "passage_att":
        model = PassageAttModel.build(vocab, inventory, enc_config, seed=0,
                                      attend_pad=meta["attend_pad"],
                                      dtype=np.dtype(meta["dtype"]))
    else:
        model = IntraBagModel.build(vocab, inventory, enc_config, seed=0, mode=kind,
                                    instance_len=meta["instance_len"],
                                    dtype=np.dtype(meta["dtype"]))
    params = model.parameters()
    if set(params) != set(ckpt.params):
        raise ValueError("checkpoint parameter names do not match the rebuilt model")
    for name, p in params.items():
        p.data = ckpt.params[name].astype(p.data.dtype, copy=True)
    return model


def _restore_state(model, optimizer: AdamW, ckpt: Checkpoint):
    params = model.parameters()
    if set(params) != set(ckpt.params):
        raise ValueError("checkpoint parameter names do not match the model")
    for name, p in params.items():
        p.data = ckpt.params[name].copy()
        optimizer.m[name] = ckpt.adam_m[name].copy()
        optimizer.v[name] = ckpt.adam_v[name].copy()
    optimizer.t = ckpt.step


def train(train_bags: Sequence[Bag],
          dev_bags: Sequence[Bag],
          model,
          cfg: TrainConfig,
          out_dir: str | Path | None = None,
          resume_from: Checkpoint | None = None,
          log_entries: list | None = None,
          quiet: bool = True) -> Checkpoint:
    """Train the model in place and return the best-validation checkpoint.

    With an empty dev split (or before any evaluation) the final state is
    returned. When ``out_dir`` is given, ``best.ckpt``, ``last.ckpt`` and a
    line-delimited ``train_log.jsonl`` are written there.
    """
    if not train_bags:
        raise ValueError("train: empty train split")
    params = model.parameters()
    optimizer = AdamW(params, cfg)
    cfg_hash = config_hash({"train": cfg.to_dict(), "model": model_meta(model)})
    start_epoch = 0
    step = 0
    best_val: float | None = None
    if resume_from is not None:
        _restore_state(model, optimizer, resume_from)
        start_epoch = resume_from.epoch
        step = resume_from.step
        best_val = resume_from.best_val_auc

    best_ckpt: Checkpoint | None = None
    log_path = Path(out_dir) / "train_log.jsonl" if out_dir is not None else None
    log_fh = open(log_path, "a", encoding="utf-8") if log_path else None

    def log(entry: TrainLogEntry):
        if log_entries is not None:
            log_entries.append(entry)
        if log_fh:
            rec = {"step": entry.step, "loss": entry.loss, "lr": entry.lr,
                   "val_auc": entry.val_auc}
            log_fh.write(json.dumps(rec) + "\n")
            log_fh.flush()

    def validate() -> float | None:
        if not dev_bags:
            return None
        report = M.evaluate_model(model, dev_bags)
        return report.auc

    def consider_best(val_auc, epoch):
        nonlocal best_val, best_ckpt
        if val_auc is None:
            return
        if best_val is None or val_auc > best_val:
            best_val = val_auc
            best_ckpt = _snapshot(model, optimizer, step, epoch, best_val, cfg_hash)

    n_rel = model.inventory.n_relations
    dtype = model.enc_params["emb.tok"].data.dtype
    try:
        for epoch in range(start_epoch, cfg.max_epochs):
            order = np.random.default_rng(
                derive_seed(cfg.seed, "order", epoch)).permutation(len(train_bags))
            for lo in range(0, len(order), cfg.batch_size_bags):
                batch = [train_bags[i] for i in order[lo:lo + cfg.batch_size_bags]]
                seeds = [derive_seed(cfg.seed, "passage", epoch, b.key[0], b.key[1])
                         for b in batch]
                rng = np.random.default_rng(derive_seed(cfg.seed, "dropout", epoch, step))
                conf, _ = model.forward_bags(batch, seeds, train_mode=True, rng=rng)
                gold = np.stack([gold_vector(b, n_rel, dtype) for b in batch])
                loss = H.multilabel_loss(conf, gold)
                loss_val = loss.item()
                if not math.isfinite(loss_val):
                    keys = [b.key for b in batch]
                    raise RuntimeError(
                        f"non-finite loss {loss_val} at step {step} (bags {keys})")
                ad.zero_grads(params.values())
                loss.backward()
                if cfg.grad_clip_norm is not None:
                    optimizer.clip_gradients(cfg.grad_clip_norm)
                optimizer.step()
                step += 1
                val_auc = None
                if cfg.eval_every and step % cfg.eval_every == 0:
                    val_auc = validate()
                    consider_best(val_auc, epoch)
                log(TrainLogEntry(step=step, loss=loss_val,
                                  lr=cfg.learning_rate, val_auc=val_auc))
            if not cfg.eval_every:
                val_auc = validate()
                consider_best(val_auc, epoch + 1)
                if val_auc is not None:
                    log(TrainLogEntry(step=step, loss=loss_val,
                                      lr=cfg.learning_rate, val_auc=val_auc))
            if not quiet:
                print(f"epoch {epoch + 1}/{cfg.max_epochs} step {step} "
                      f"loss {loss_val:.4f} best_val_auc {best_val}")
    finally:
        if log_fh:
            log_fh.close()

    last_ckpt = _snapshot(model, optimizer, step, cfg.max_epochs, best_val, cfg_hash)
    if best_ckpt is None:
        best_ckpt = last_ckpt
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        best_ckpt.save(out / "best.ckpt")
        last_ckpt.save(out / "last.ckpt")
    return best_ckpt


def evaluate_checkpoint(ckpt: Checkpoint, bags: Sequence[Bag],
                        eval_seed: int = 0) -> M.MetricsReport:
    """Rebuild the model from the checkpoint and evaluate a split."""
    model = model_from_checkpoint(ckpt)
    return M.evaluate_model(model, bags, eval_seed=eval_seed)


def initial_checkpoint(model, cfg: TrainConfig) -> Checkpoint:
    """Checkpoint of the untouched model (what max_epochs=0 training returns)."""
    optimizer = AdamW(model.parameters(), cfg)
    cfg_hash = config_hash({"train": cfg.to_dict(), "model": model_meta(model)})
    return _snapshot(model, optimizer, 0, 0, None, cfg_hash)
