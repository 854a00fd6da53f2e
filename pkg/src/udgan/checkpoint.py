"""Versioned checkpoint container.

A checkpoint is a ``torch.save`` archive of a plain dict::

    {
      "format": "udgan-checkpoint",
      "version": 1,
      "stage": 1 | 2 | 3,
      "config": <TrainConfig as nested dict>,
      "num_classes": int,
      "state": {name: tensor},        # UDGANNet.state_dict(), keys sorted
      "extra": {...},                 # optional: optimizer states, epoch, RNG
    }

Readers accept any checkpoint with the same major ``version``.
"""
from __future__ import annotations

import hashlib
import io
from pathlib import Path

import torch

from .config import TrainConfig, to_dict, train_config_from_dict
from .errors import TrainingError
from .networks import UDGANNet

FORMAT = "udgan-checkpoint"
VERSION = 1


def state_payload(net: UDGANNet) -> dict:
    state = net.state_dict()
    return {k: state[k].detach().cpu().clone() for k in sorted(state)}


def payload_digest(state: dict) -> str:
    """SHA-256 over sorted parameter names, dtypes, shapes and raw bytes."""
    h = hashlib.sha256()
    for k in sorted(state):
        t = state[k].detach().cpu().contiguous()
        h.update(k.encode())
        h.update(str(t.dtype).encode())
        h.update(str(tuple(t.shape)).encode())
        h.update(t.numpy().tobytes() if t.dtype != torch.bfloat16 else t.float().numpy().tobytes())
    return h.hexdigest()


def module_digest(*modules) -> str:
    state = {}
    for i, m in enumerate(modules):
        for k, v in m.state_dict().items():
            state[f"{i}.{k}"] = v
    return payload_digest(state)


def save_checkpoint(path, net: UDGANNet, config: TrainConfig, stage: int, extra=None):
    blob = {
        "format": FORMAT,
        "version": VERSION,
        "stage": int(stage),
        "config": to_dict(config),
        "num_classes": net.num_classes,
        "state": state_payload(net),
        "extra": extra or {},
    }
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(blob, tmp)
    tmp.replace(path)
    return path


def read_checkpoint(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise TrainingError(f"checkpoint {path} not found")
    try:
        blob = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise TrainingError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(blob, dict) or blob.get("format") != FORMAT:
        raise TrainingError(f"{path} is not a udgan checkpoint")
    if int(blob.get("version", -1)) != VERSION:
        raise TrainingError(f"{path}: unsupported checkpoint version {blob.get('version')}")
    return blob


def load_checkpoint(path, backbone=None):
    """Return ``(net, config, stage, extra)``."""
    blob = read_checkpoint(path)
    config = train_config_from_dict(blob["config"])
    net = UDGANNet(config, blob["num_classes"], backbone=backbone)
    net.load_state_dict(blob["state"])
    return net, config, blob["stage"], blob.get("extra", {})


def payload_bytes(state: dict) -> bytes:
    buf = io.BytesIO()
    torch.save({k: state[k] for k in sorted(state)}, buf)
    return buf.getvalue()
