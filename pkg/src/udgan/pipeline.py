"""On-disk run layout used by the command line.

One output directory per run::

    config.yaml              effective configuration (written first)
    stage<k>.ckpt            checkpoint after stage k
    stage<k>.partial.ckpt    per-epoch snapshot while stage k runs
    metrics_stage<k>.csv     per-step metric log
    pairs.csv                mined target pairs (stage 2, mine-pairs)
    mining_report.txt        pair-mining summary
    eval.csv / eval_per_query.csv
    grid.png                 originals / self-reconstructions / swaps
"""
from __future__ import annotations

import logging
import os
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch

from . import trainer
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, dump_config
from .data import DatasetManifest, ManifestDataset, denormalize, load_manifest
from .errors import ConfigError, DataError, TrainingError
from .metrics import evaluate, write_report_csv
from .mining import read_pairs_csv, validate_mining, write_pairs_csv, write_report
from .networks import UDGANNet, encode_identity, swap_generate
from .report import montage

log = logging.getLogger(__name__)


def device_from_env() -> torch.device:
    name = os.environ.get("UDGAN_DEVICE", "cpu")
    try:
        return torch.device(name)
    except RuntimeError:
        raise ConfigError(f"UDGAN_DEVICE={name!r} is not a valid torch device") from None


def prepare_out(run: RunConfig) -> Path:
    out = Path(run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(run, out / "config.yaml")
    return out


def _root(run: RunConfig, which: str) -> Path:
    root = getattr(run.data, f"{which}_root")
    if which == "eval" and root is None:
        root = run.data.target_root
    if root is None:
        raise ConfigError(f"data.{which}_root is not set")
    return Path(root)


def _layout(run: RunConfig):
    d = run.data
    return {"train": d.train_dir, "query": d.query_dir, "gallery": d.gallery_dir}


def manifest_for(run: RunConfig, which: str, required=("train",)) -> DatasetManifest:
    return load_manifest(_root(run, which), run.data.pattern, _layout(run), required=required)


def split_dataset(run: RunConfig, manifest: DatasetManifest, split="train") -> ManifestDataset:
    t = run.train
    return ManifestDataset(manifest, split, t.image_size, t.norm_mean, t.norm_std)


def _ckpt(out: Path, stage: int) -> Path:
    return out / f"stage{stage}.ckpt"


def latest_checkpoint(out: Path, stages=(3, 2, 1)) -> Path:
    for k in stages:
        if _ckpt(out, k).exists():
            return _ckpt(out, k)
    raise TrainingError(f"no checkpoint (stage {'/'.join(map(str, stages))}) found in {out}")


def _load(path, device):
    net, cfg, stage, extra = load_checkpoint(path)
    return net.to(device), cfg, stage, extra


def schedule_preview(run: RunConfig, stage: int, head: int = 12) -> str:
    """Human-readable summary of the step schedule without training."""
    t = run.train
    src = split_dataset(run, manifest_for(run, "source")) if stage in (1, 3) else None
    tgt = split_dataset(run, manifest_for(run, "target")) if stage in (2, 3) else None
    ceil = lambda a, b: -(-a // b)  # noqa: E731
    if stage == 1:
        n = ceil(len(src), t.stage1.batch_size)
        steps = ["S"] * n
        epochs = t.stage1.epochs
        lines = [f"stage 1: {len(src)} source images, {src.manifest.num_classes} identities, "
                 f"{n} steps/epoch x {epochs} epochs (warm-up {t.stage1.warmup_epochs})"]
    elif stage == 2:
        n = ceil(len(tgt), t.stage2.batch_size // 2)
        steps = ["T"] * n
        lines = [f"stage 2: {len(tgt)} target images -> {len(tgt)} pairs, "
                 f"{n} steps/epoch x {t.stage2.epochs} epochs"]
    else:
        ns = ceil(len(src), t.stage3.source_batch_size)
        nt = ceil(len(tgt), t.stage3.target_batch_size // 2)
        steps = [s.domain for s in trainer.make_alternating_schedule(ns, nt)]
        lines = [f"stage 3: {ns} source + {nt} target batches, {len(steps)} steps/epoch "
                 f"x {t.stage3.epochs} epochs"]
    lines.append("schedule head: " + ",".join(steps[:head]) + (",..." if len(steps) > head else ""))
    return "\n".join(lines)


def train_stage(run: RunConfig, stage: int, echo: Callable[[str], None] = print) -> dict:
    """Run one stage into ``run.out_dir``; a completed stage is not re-run."""
    if stage not in (1, 2, 3):
        raise ConfigError(f"stage must be 1, 2 or 3, got {stage}")
    out = Path(run.out_dir)
    cfg = run.train
    device = device_from_env()
    final, partial = _ckpt(out, stage), out / f"stage{stage}.partial.ckpt"
    metrics = out / f"metrics_stage{stage}.csv"
    if stage > 1 and not _ckpt(out, stage - 1).exists():
        raise TrainingError(f"stage {stage} needs {_ckpt(out, stage - 1)}; run stage {stage - 1} first")
    if final.exists():
        echo(f"stage {stage} already complete: {final}")
        return {"checkpoint": final, "metrics": metrics}

    torch.manual_seed(cfg.seed)
    outputs = {"checkpoint": final, "metrics": metrics}
    if stage == 1:
        manifest = manifest_for(run, "source")
        source = split_dataset(run, manifest)
        res = trainer.run_stage1(cfg, source, manifest.num_classes,
                                 net=_fresh_net(cfg, manifest.num_classes, device),
                                 resume_path=partial)
        echo(f"stage 1 train accuracy: {res.train_accuracy:.4f}")
        extra = {"train_accuracy": res.train_accuracy, "classes": sorted(manifest.id_index)}
    else:
        net, _, _, prev = _load(_ckpt(out, stage - 1), device)
        target_manifest = manifest_for(run, "target")
        target = split_dataset(run, target_manifest)
        paths = [e.path for e in target.entries]
        if stage == 2:
            res = trainer.run_stage2(cfg, net, target, resume_path=partial)
            write_pairs_csv(out / "pairs.csv", res.pairs, paths)
            report = res.mining_report or trainer.mine_target_pairs(net, target, cfg.miner_k)[1]
            write_report(out / "mining_report.txt", report)
            echo(report.to_text().rstrip())
            outputs["pairs"] = out / "pairs.csv"
        else:
            source = split_dataset(run, manifest_for(run, "source"))
            pairs_path = out / "pairs.csv"
            if not pairs_path.exists():
                raise TrainingError(f"stage 3 needs mined pairs at {pairs_path}")
            pairs = read_pairs_csv(pairs_path, paths)
            res = trainer.run_stage3(cfg, net, source, target, pairs, resume_path=partial)
        extra = {"classes": prev.get("classes")}
    trainer.write_log(metrics, res.rows)
    save_checkpoint(final, res.net, cfg, stage, extra)
    partial.unlink(missing_ok=True)
    echo(f"stage {stage} done: {final}")
    return outputs


def _fresh_net(cfg, num_classes, device):
    return UDGANNet(cfg, num_classes).to(device)


def mine(run: RunConfig, checkpoint=None, with_labels=False, echo=print) -> dict:
    out = Path(run.out_dir)
    device = device_from_env()
    net, cfg, _, _ = _load(checkpoint or latest_checkpoint(out, (1,)), device)
    target = split_dataset(run, manifest_for(run, "target"))
    pairs, report = trainer.mine_target_pairs(net, target, run.train.miner_k)
    if with_labels:
        report = validate_mining(pairs, [e.identity for e in target.entries])
    write_pairs_csv(out / "pairs.csv", pairs, [e.path for e in target.entries])
    write_report(out / "mining_report.txt", report)
    echo(report.to_text().rstrip())
    return {"pairs": out / "pairs.csv", "report": report}


def evaluate_run(run: RunConfig, checkpoint=None, tag="eval", echo=print) -> dict:
    out = Path(run.out_dir)
    device = device_from_env()
    net, _, _, _ = _load(checkpoint or latest_checkpoint(out), device)
    net.eval()
    manifest = manifest_for(run, "eval", required=("query", "gallery"))
    q = ManifestDataset(manifest, "query", run.train.image_size, run.train.norm_mean,
                        run.train.norm_std)
    g = ManifestDataset(manifest, "gallery", run.train.image_size, run.train.norm_mean,
                        run.train.norm_std, include_distractors=True)
    xq, _, qids, qcams = q.tensors()
    xg, _, gids, gcams = g.tensors()
    report = evaluate(xq, qids.numpy(), qcams.numpy(), xg, gids.numpy(), gcams.numpy(),
                      lambda x: encode_identity(net, x), device=device)
    write_report_csv(out / "eval.csv", report, tag, out / "eval_per_query.csv")
    row = report.row(tag)
    echo("R1 {rank1:.4f}  R5 {rank5:.4f}  R10 {rank10:.4f}  mAP {mAP:.4f}  "
         "({num_valid_queries} valid queries)".format(**row))
    return {"report": report, "csv": out / "eval.csv"}


def generate_grid(run: RunConfig, checkpoint=None, num_pairs=6, echo=print) -> Path:
    """3 x N montage: first images of N pairs, their self-reconstructions, identity/content swaps."""
    if num_pairs < 1:
        raise ConfigError("num_pairs must be >= 1")
    out = Path(run.out_dir)
    device = device_from_env()
    net, cfg, _, _ = _load(checkpoint or latest_checkpoint(out, (3, 2)), device)
    net.eval()
    target = split_dataset(run, manifest_for(run, "target"))
    paths = [e.path for e in target.entries]
    pairs_path = out / "pairs.csv"
    if pairs_path.exists():
        pairs = read_pairs_csv(pairs_path, paths)
    else:
        pairs, _ = trainer.mine_target_pairs(net, target, cfg.miner_k)
    real = [p for p in pairs if not p.is_self_pair] or list(pairs)
    rng = np.random.default_rng(run.train.seed)
    chosen = [real[i] for i in rng.choice(len(real), size=num_pairs, replace=len(real) < num_pairs)]
    x1 = torch.stack([target[p.query_index][0] for p in chosen]).to(device)
    x2 = torch.stack([target[p.match_index][0] for p in chosen]).to(device)
    with torch.no_grad():
        zero = torch.zeros(len(x1), net.dim, device=device)
        quad = swap_generate(net, x1, x2, noise=zero)
    mean, std = run.train.norm_mean, run.train.norm_std
    rows = [list(denormalize(t, mean, std)) for t in (x1, quad.x11, quad.x12)]
    path = out / "grid.png"
    montage(rows).save(path)
    echo(f"wrote {path} ({len(rows)} rows x {num_pairs} pairs)")
    return path
