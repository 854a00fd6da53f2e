"""Three-stage training: source pretraining, frozen-identity generative
pretraining on mined target pairs, then joint alternating-domain training."""
from __future__ import annotations

import csv
import logging
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn

from .checkpoint import module_digest, read_checkpoint, save_checkpoint
from .config import TrainConfig
from .errors import TrainingError
from .losses import (adversarial_loss_D, adversarial_loss_G, identity_loss, kl_loss,
                     reconstruction_loss, target_loss)
from .metrics import embed
from .mining import MinedPair, MiningReport, mine_pairs
from .networks import UDGANNet, encode_identity, swap_forward

log = logging.getLogger(__name__)

LOG_HEADER = ["stage", "epoch", "step_domain", "loss_id", "loss_rec", "loss_kl",
              "loss_adv_g", "loss_adv_d", "lr"]


def cosine_lr(t: float, total: float, lr0: float) -> float:
    if total <= 0:
        raise ValueError("cosine schedule needs total > 0")
    if not 0 <= t <= total:
        raise ValueError(f"t={t} outside [0, {total}]")
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * t / total))


def epoch_lr(epoch: int, epochs: int, lr0: float) -> float:
    """Per-epoch cosine annealing that reaches zero on the final epoch."""
    return cosine_lr(epoch, max(epochs - 1, 1), lr0) if epochs > 1 else lr0


class Step(NamedTuple):
    domain: str  # "S" or "T"
    batch: int


def make_alternating_schedule(num_source_batches: int, num_target_batches: int) -> List[Step]:
    """S,T,S,T,... over one source epoch; the target stream cycles if shorter."""
    if num_source_batches < 1 or num_target_batches < 1:
        raise ValueError("both domains need at least one batch")
    steps = []
    for i in range(num_source_batches):
        steps.append(Step("S", i))
        steps.append(Step("T", i % num_target_batches))
    return steps


# -- metric log --------------------------------------------------------------

@dataclass
class LogRow:
    stage: int
    epoch: int
    step_domain: str
    loss_id: Optional[float] = None
    loss_rec: Optional[float] = None
    loss_kl: Optional[float] = None
    loss_adv_g: Optional[float] = None
    loss_adv_d: Optional[float] = None
    lr: Optional[float] = None

    def cells(self):
        def fmt(v):
            return "" if v is None else repr(float(v)) if isinstance(v, float) else str(v)
        return [fmt(getattr(self, k)) for k in LOG_HEADER]


def write_log(path, rows: Sequence[LogRow]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_HEADER)
        for r in rows:
            w.writerow(r.cells())


def read_log(path) -> List[LogRow]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != LOG_HEADER:
            raise ValueError(f"{path}: expected header {','.join(LOG_HEADER)}")
        for r in reader:
            vals = {k: (float(r[k]) if r[k] != "" else None) for k in LOG_HEADER[3:]}
            rows.append(LogRow(int(r["stage"]), int(r["epoch"]), r["step_domain"], **vals))
    return rows


def epoch_means(rows: Sequence[LogRow], column: str) -> List[float]:
    by_epoch: Dict[int, List[float]] = {}
    for r in rows:
        v = getattr(r, column)
        if v is not None:
            by_epoch.setdefault(r.epoch, []).append(v)
    return [float(np.mean(by_epoch[e])) for e in sorted(by_epoch)]


def smoothed(values: Sequence[float], window: int = 10) -> List[float]:
    """Trailing moving average (shorter window at the start)."""
    out = []
    for i in range(len(values)):
        lo = max(0, i - window + 1)
        out.append(float(np.mean(values[lo:i + 1])))
    return out


# -- helpers -------------------------------------------------------------------

def seed_everything(seed: int):
    random.seed(seed)
    np.random.seed(seed % 2 ** 32)
    torch.manual_seed(seed)


def _epoch_seed(config: TrainConfig, stage: int, epoch: int) -> int:
    return (config.seed * 1_000_003 + stage * 10_007 + epoch) % 2 ** 63


def set_trainable(modules, flag: bool):
    for m in modules:
        m.train(flag)
        for p in m.parameters():
            p.requires_grad_(flag)


def set_lr(opt: torch.optim.Optimizer, lr: float):
    for g in opt.param_groups:
        g["lr"] = lr


def check_finite(net: nn.Module, where: str):
    bad = [n for n, p in net.named_parameters() if not torch.isfinite(p).all()]
    if bad:
        raise TrainingError(f"non-finite parameters after {where}: {', '.join(bad[:5])}"
                            + (" ..." if len(bad) > 5 else ""))


def _value(t):
    return float(t.detach())


def _device(net: nn.Module) -> torch.device:
    return next(net.parameters()).device


def _images(dataset, indices, device=None) -> torch.Tensor:
    return torch.stack([dataset[int(i)][0] for i in indices]).to(device)


def _labels(dataset, indices, device=None) -> torch.Tensor:
    return torch.tensor([int(dataset[int(i)][1]) for i in indices], device=device)


def _batches(n: int, batch_size: int, generator: torch.Generator, shuffle=True):
    order = torch.randperm(n, generator=generator) if shuffle else torch.arange(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def pair_batches(pairs: Sequence[MinedPair], batch_size: int,
                 generator: torch.Generator) -> List[np.ndarray]:
    """Image-index batches holding whole pairs: even slots queries, odd slots matches."""
    if batch_size % 2:
        raise ValueError("pair batch size must be even")
    out = []
    for chunk in _batches(len(pairs), batch_size // 2, generator):
        idx = np.empty(2 * len(chunk), dtype=np.int64)
        idx[0::2] = [pairs[int(c)].query_index for c in chunk]
        idx[1::2] = [pairs[int(c)].match_index for c in chunk]
        out.append(idx)
    return out


@dataclass
class StageResult:
    net: UDGANNet
    rows: List[LogRow] = field(default_factory=list)
    checksums: List[str] = field(default_factory=list)
    trace: List[str] = field(default_factory=list)
    train_accuracy: Optional[float] = None
    pairs: Optional[List[MinedPair]] = None
    mining_report: Optional[MiningReport] = None


class _Resume:
    """Per-epoch snapshot so an interrupted stage restarts at an epoch boundary."""

    def __init__(self, path, config, stage):
        self.path = None if path is None else Path(path)
        self.config, self.stage = config, stage

    def load(self, net, optimizers, result):
        if self.path is None or not self.path.exists():
            return 0
        blob = read_checkpoint(self.path)
        extra = blob["extra"]
        if blob["stage"] != self.stage or "epoch" not in extra:
            return 0
        if blob["num_classes"] != net.num_classes:
            raise TrainingError(f"{self.path} does not match the current model")
        net.load_state_dict(blob["state"])
        for name, opt in optimizers.items():
            opt.load_state_dict(extra["optimizers"][name])
        result.rows[:] = [LogRow(**r) for r in extra["rows"]]
        result.checksums[:] = extra.get("checksums", [])
        if result.pairs is None and extra.get("pairs") is not None:
            result.pairs = [MinedPair(*p) for p in extra["pairs"]]
        log.info("resuming stage %d at epoch %d from %s", self.stage, extra["epoch"], self.path)
        return int(extra["epoch"])

    def save(self, net, optimizers, result, epochs_done):
        if self.path is None or epochs_done % max(self.config.checkpoint_every, 1):
            return
        extra = {
            "epoch": epochs_done,
            "optimizers": {k: o.state_dict() for k, o in optimizers.items()},
            "rows": [r.__dict__ for r in result.rows],
            "checksums": result.checksums,
            "pairs": None if result.pairs is None else [tuple(p.__dict__.values()) for p in result.pairs],
        }
        save_checkpoint(self.path, net, self.config, self.stage, extra)


def _amsgrad(params, lr, weight_decay=0.0):
    return torch.optim.Adam(params, lr=lr, amsgrad=True, weight_decay=weight_decay)


# -- stage 1 ---------------------------------------------------------------------

def train_accuracy(net: UDGANNet, dataset, batch_size=128) -> float:
    net.eval()
    correct = 0
    with torch.no_grad():
        for start in range(0, len(dataset), batch_size):
            idx = range(start, min(start + batch_size, len(dataset)))
            logits = net.classifier(encode_identity(net, _images(dataset, idx, _device(net))))
            correct += int((logits.argmax(1).cpu() == _labels(dataset, idx)).sum())
    return correct / len(dataset)


def run_stage1(config: TrainConfig, source, num_classes: int, net: Optional[UDGANNet] = None,
               resume_path=None, trace: bool = False) -> StageResult:
    """Identity encoder + classifier on labelled source data.

    AMSGrad with per-epoch cosine annealing; for the first ``warmup_epochs``
    only the classifier layer is updated.
    """
    cfg = config.stage1
    if len(source) == 0:
        raise TrainingError("stage 1 needs a non-empty source training split")
    if num_classes < 2:
        raise TrainingError("stage 1 needs at least two source identities")
    seed_everything(config.seed)
    if net is None:
        net = UDGANNet(config, num_classes)
    elif net.num_classes != num_classes:
        net.set_classifier(num_classes)
    dev = _device(net)
    encoder = [net.trunk, net.identity_head]
    opt = _amsgrad([{"params": [p for m in encoder for p in m.parameters()]},
                    {"params": list(net.classifier.parameters())}],
                   cfg.lr, cfg.weight_decay)
    result = StageResult(net)
    resume = _Resume(resume_path, config, 1)
    start = resume.load(net, {"id": opt}, result)

    for epoch in range(start, cfg.epochs):
        torch.manual_seed(_epoch_seed(config, 1, epoch))
        gen = torch.Generator().manual_seed(_epoch_seed(config, 1, epoch))
        warm = epoch < cfg.warmup_epochs
        set_trainable([net.generator, net.discriminator, net.content_head], False)
        set_trainable(encoder, not warm)
        set_trainable([net.classifier], True)
        lr = epoch_lr(epoch, cfg.epochs, cfg.lr)
        set_lr(opt, lr)
        before = module_digest(*encoder) if warm else None
        for idx in _batches(len(source), cfg.batch_size, gen):
            if warm is False and len(idx) < 2:
                continue  # BatchNorm needs two samples
            x, y = _images(source, idx, dev), _labels(source, idx, dev)
            loss = identity_loss(net.classifier(encode_identity(net, x)), y,
                                 config.weights.label_smoothing)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            check_finite(net, f"stage 1 epoch {epoch}")
            result.rows.append(LogRow(1, epoch, "S", loss_id=_value(loss), lr=lr))
            if trace:
                result.trace.append("S:id")
        if warm:
            after = module_digest(*encoder)
            result.checksums.append(after)
            if after != before:
                raise TrainingError(f"encoder changed during warm-up epoch {epoch}")
        resume.save(net, {"id": opt}, result, epoch + 1)

    result.train_accuracy = train_accuracy(net, source)
    return result


# -- stage 2 ---------------------------------------------------------------------

def mine_target_pairs(net: UDGANNet, target, k: int, batch_size: int = 128):
    net.eval()
    images = torch.stack([target[i][0] for i in range(len(target))])
    feats = embed(lambda x: encode_identity(net, x), images, batch_size, _device(net))
    return mine_pairs(feats, k)


def target_step(net: UDGANNet, x1, x2, opt_g, opt_d, config: TrainConfig,
                identity_grad: bool, trace: Optional[List[str]] = None) -> dict:
    """Discriminator update, then generator/encoder update on the target loss."""
    res = swap_forward(net, x1, x2, noise=None, identity_grad=identity_grad)
    fake = res.quad.stack()

    for p in net.discriminator.parameters():
        p.requires_grad_(True)
    real_logits = net.discriminator(torch.cat([x1, x2]))
    fake_logits = net.discriminator(fake.detach())
    loss_d = adversarial_loss_D(real_logits, fake_logits)
    opt_d.zero_grad(set_to_none=True)
    loss_d.backward()
    opt_d.step()
    if trace is not None:
        trace.append("T:D")

    for p in net.discriminator.parameters():
        p.requires_grad_(False)
    adv_g = adversarial_loss_G(net.discriminator(fake))
    rec = reconstruction_loss(res.quad, x1, x2, config.recon_target)
    kl = kl_loss(torch.cat(res.mu), torch.cat(res.logvar))
    total = target_loss(rec, kl, adv_g, config.weights)
    opt_g.zero_grad(set_to_none=True)
    total.backward()
    opt_g.step()
    for p in net.discriminator.parameters():
        p.requires_grad_(True)
    if trace is not None:
        trace.append("T:G")
    return {"loss_rec": _value(rec), "loss_kl": _value(kl), "loss_adv_g": _value(adv_g),
            "loss_adv_d": _value(loss_d)}


def _split_pair_batch(target, idx, device=None):
    x = _images(target, idx, device)
    return x[0::2], x[1::2]


def run_stage2(config: TrainConfig, net: UDGANNet, target, pairs=None,
               resume_path=None, trace: bool = False) -> StageResult:
    """Mine pairs with the frozen encoder, then train content head, G and D."""
    cfg = config.stage2
    if len(target) < 2:
        raise TrainingError("stage 2 needs at least two target images")
    seed_everything(config.seed + 2)
    result = StageResult(net)
    if pairs is None:
        pairs, report = mine_target_pairs(net, target, config.miner_k)
        result.mining_report = report
        net.duplicate_tail()
    if not pairs:
        raise TrainingError("no pairs to train on")
    result.pairs = list(pairs)

    identity = net.identity_modules()
    opt_g = torch.optim.Adam(list(net.content_head.parameters()) + list(net.generator.parameters()),
                             lr=cfg.lr, betas=tuple(cfg.betas))
    opt_d = torch.optim.SGD(net.discriminator.parameters(), lr=cfg.lr, momentum=cfg.disc_momentum)
    optimizers = {"g": opt_g, "d": opt_d}
    resume = _Resume(resume_path, config, 2)
    start = resume.load(net, optimizers, result)
    frozen = module_digest(*identity)
    if start == 0:
        result.checksums.append(frozen)

    for epoch in range(start, cfg.epochs):
        torch.manual_seed(_epoch_seed(config, 2, epoch))
        gen = torch.Generator().manual_seed(_epoch_seed(config, 2, epoch))
        set_trainable(identity, False)
        set_trainable([net.content_head, net.generator, net.discriminator], True)
        for idx in pair_batches(result.pairs, cfg.batch_size, gen):
            x1, x2 = _split_pair_batch(target, idx, _device(net))
            if len(x1) < 2:
                continue  # BatchNorm in the generator needs two samples
            losses = target_step(net, x1, x2, opt_g, opt_d, config, identity_grad=False,
                                 trace=result.trace if trace else None)
            check_finite(net, f"stage 2 epoch {epoch}")
            result.rows.append(LogRow(2, epoch, "T", lr=cfg.lr, **losses))
        digest = module_digest(*identity)
        result.checksums.append(digest)
        if digest != frozen:
            raise TrainingError(f"frozen identity encoder changed in stage 2 epoch {epoch}")
        resume.save(net, optimizers, result, epoch + 1)
    return result


# -- stage 3 ---------------------------------------------------------------------

def run_stage3(config: TrainConfig, net: UDGANNet, source, target, pairs: Sequence[MinedPair],
               resume_path=None, trace: bool = False) -> StageResult:
    """Joint training with strictly alternating source and target steps."""
    cfg = config.stage3
    if source is None or target is None or len(source) == 0 or len(target) == 0:
        raise TrainingError("stage 3 needs both source and target data")
    if not pairs:
        raise TrainingError("stage 3 needs mined target pairs")
    if net.classifier is None:
        raise TrainingError("stage 3 needs a stage-1 classifier")
    seed_everything(config.seed + 3)
    dev = _device(net)
    encoder = [net.trunk, net.identity_head]
    opt_id = _amsgrad([p for m in encoder + [net.classifier] for p in m.parameters()],
                      cfg.lr, config.stage1.weight_decay)
    opt_g = torch.optim.Adam([p for m in encoder + [net.content_head, net.generator]
                              for p in m.parameters()],
                             lr=cfg.lr, betas=tuple(config.stage2.betas))
    opt_d = torch.optim.SGD(net.discriminator.parameters(), lr=cfg.lr,
                            momentum=config.stage2.disc_momentum)
    optimizers = {"id": opt_id, "g": opt_g, "d": opt_d}
    result = StageResult(net, pairs=list(pairs))
    resume = _Resume(resume_path, config, 3)
    start = resume.load(net, optimizers, result)

    for epoch in range(start, cfg.epochs):
        torch.manual_seed(_epoch_seed(config, 3, epoch))
        gen = torch.Generator().manual_seed(_epoch_seed(config, 3, epoch))
        set_trainable([net], True)
        src = [b for b in _batches(len(source), cfg.source_batch_size, gen) if len(b) >= 2]
        tgt = [b for b in pair_batches(result.pairs, cfg.target_batch_size, gen) if len(b) >= 4]
        if not src or not tgt:
            raise TrainingError("stage 3 batches are empty; lower the batch sizes")
        for step in make_alternating_schedule(len(src), len(tgt)):
            if step.domain == "S":
                idx = src[step.batch]
                x, y = _images(source, idx, dev), _labels(source, idx, dev)
                loss = identity_loss(net.classifier(encode_identity(net, x)), y,
                                     config.weights.label_smoothing)
                opt_id.zero_grad(set_to_none=True)
                loss.backward()
                opt_id.step()
                result.rows.append(LogRow(3, epoch, "S", loss_id=_value(loss), lr=cfg.lr))
                if trace:
                    result.trace.append("S:id")
            else:
                x1, x2 = _split_pair_batch(target, tgt[step.batch], dev)
                losses = target_step(net, x1, x2, opt_g, opt_d, config, identity_grad=True,
                                     trace=result.trace if trace else None)
                result.rows.append(LogRow(3, epoch, "T", lr=cfg.lr, **losses))
            check_finite(net, f"stage 3 epoch {epoch} ({step.domain} step)")
        resume.save(net, optimizers, result, epoch + 1)
    return result


# -- evaluation helpers ------------------------------------------------------------

@torch.no_grad()
def identity_preservation(net: UDGANNet, judge: UDGANNet, x1, x2, others) -> np.ndarray:
    """Per pair: is the judge's code of ``G(id(x1), c(x2))`` closer (cosine) to
    ``x1`` than to ``others`` (one image of a different identity per pair)?"""
    net.eval()
    judge.eval()
    dev = _device(net)
    x1, x2, others = x1.to(dev), x2.to(dev), others.to(dev)
    zero = torch.zeros(len(x1), net.dim, device=dev)
    quad = swap_forward(net, x1, x2, noise=(zero, zero)).quad
    cos = torch.nn.functional.cosine_similarity
    j12 = encode_identity(judge, quad.x12)
    closer = cos(j12, encode_identity(judge, x1)) > cos(j12, encode_identity(judge, others))
    return closer.cpu().numpy()
