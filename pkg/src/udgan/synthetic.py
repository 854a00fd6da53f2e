"""Deterministic synthetic person crops with controlled identity and content factors.

Identity is carried by the clothing colours and body width; content by the
position offset, background colour and background brightness. Two images of
one identity therefore share every body pixel value and differ only in
where the body sits and what surrounds it.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from PIL import Image

from .data import DatasetManifest, Entry
from .errors import ConfigError

SKIN = (224, 172, 138)


@dataclass
class SyntheticSpec:
    num_identities: int = 16
    images_per_identity: int = 8
    image_size: Tuple[int, int] = (48, 16)
    seed: int = 0
    num_cameras: int = 4
    id_offset: int = 0
    domain: str = "source"
    background_noise: float = 6.0


@dataclass
class Rendered:
    """One synthetic image with the factors used to draw it."""
    pixels: np.ndarray
    identity: int
    camera: int
    split: str
    filename: str
    top_color: Tuple[int, int, int]
    bottom_color: Tuple[int, int, int]
    body_width: int
    offset: Tuple[int, int]
    background: Tuple[int, int, int]
    brightness: float
    body_box: Tuple[int, int, int, int] = field(default=(0, 0, 0, 0))  # y0, y1, x0, x1


@dataclass
class SyntheticDataset:
    spec: SyntheticSpec
    images: List[Rendered]
    manifest: DatasetManifest

    def save(self, out_dir):
        out_dir = Path(out_dir)
        for split in ("train", "query", "gallery"):
            (out_dir / split).mkdir(parents=True, exist_ok=True)
        for r in self.images:
            Image.fromarray(r.pixels).save(out_dir / r.split / r.filename, format="PNG")
        self.manifest.root = str(out_dir)
        self.manifest.to_csv(out_dir / "manifest.csv")
        return out_dir


def _split_for(i, n):
    if n >= 4 and i == n - 1:
        return "gallery"
    if n >= 4 and i == n - 2:
        return "query"
    return "train"


def _identity_factors(spec, identity):
    rng = np.random.default_rng([spec.seed, 7919, identity])
    # saturated, well separated clothing colours
    def colour():
        c = rng.uniform(0, 1, 3)
        c = (c - c.min()) / max(c.max() - c.min(), 1e-6)
        return tuple(int(v) for v in np.round(30 + 200 * c))
    top, bottom = colour(), colour()
    h, w = spec.image_size
    width = int(rng.integers(max(2, round(0.35 * w)), max(3, round(0.65 * w)) + 1))
    return top, bottom, width


def render(spec: SyntheticSpec, identity: int, image_index: int) -> Rendered:
    h, w = spec.image_size
    top, bottom, body_w = _identity_factors(spec, identity)
    rng = np.random.default_rng([spec.seed, 104729, identity, image_index])
    max_dx = max(1, round(0.15 * w))
    max_dy = max(1, round(0.06 * h))
    dx = int(rng.integers(-max_dx, max_dx + 1))
    dy = int(rng.integers(-max_dy, max_dy + 1))
    background = tuple(int(v) for v in rng.integers(0, 256, 3))
    # the target domain is shot under dimmer lighting
    low, high = (0.6, 1.2) if spec.domain == "source" else (0.3, 0.8)
    brightness = float(rng.uniform(low, high))

    bg = np.array(background, dtype=np.float64) * brightness
    noise = rng.normal(0.0, spec.background_noise, (h, w, 3))
    pixels = np.clip(np.round(bg + noise), 0, 255).astype(np.uint8)

    body_h = int(round(0.8 * h))
    y0 = (h - body_h) // 2 + dy
    x0 = (w - body_w) // 2 + dx
    y0 = min(max(y0, 0), h - body_h)
    x0 = min(max(x0, 0), w - body_w)
    y1, x1 = y0 + body_h, x0 + body_w
    head = max(1, round(0.15 * body_h))
    torso = max(1, round(0.4 * body_h))
    pixels[y0:y0 + head, x0:x1] = SKIN
    pixels[y0 + head:y0 + head + torso, x0:x1] = top
    pixels[y0 + head + torso:y1, x0:x1] = bottom

    pid = spec.id_offset + identity
    camera = image_index % spec.num_cameras + 1
    split = _split_for(image_index, spec.images_per_identity)
    serial = identity * spec.images_per_identity + image_index
    filename = f"{pid:04d}_c{camera}s1_{serial:06d}_00.png"
    return Rendered(pixels, pid, camera, split, filename, top, bottom, body_w, (dy, dx),
                    background, brightness, (y0, y1, x0, x1))


def check_generator_compatible(image_size, generator_blocks):
    h, w = image_size
    f = 2 ** generator_blocks
    if h % f or w % f:
        raise ConfigError(f"image size {h}x{w} is incompatible with {generator_blocks} generator "
                          f"blocks: both sides must be multiples of {f}")


def make_synthetic(spec: SyntheticSpec, out_dir=None,
                   generator_blocks: Optional[int] = None) -> SyntheticDataset:
    """Render the dataset described by ``spec``; write it to ``out_dir`` if given.

    With four or more images per identity, the last image of each identity
    goes to the gallery split and the one before it to the query split.
    """
    if spec.num_identities < 2 or spec.images_per_identity < 2:
        raise ConfigError("synthetic data needs >= 2 identities and >= 2 images per identity")
    if spec.domain not in ("source", "target"):
        raise ConfigError(f"domain must be 'source' or 'target', got {spec.domain!r}")
    if spec.num_cameras < 1:
        raise ConfigError("num_cameras must be >= 1")
    h, w = spec.image_size
    if h < 8 or w < 4:
        raise ConfigError(f"image size {h}x{w} too small to draw a person")
    if generator_blocks is not None:
        check_generator_compatible(spec.image_size, generator_blocks)

    images = [render(spec, i, j)
              for i in range(spec.num_identities)
              for j in range(spec.images_per_identity)]
    entries = [Entry(f"{r.split}/{r.filename}", r.identity, r.camera, r.split) for r in images]
    manifest = DatasetManifest.from_entries(entries, num_cameras=spec.num_cameras)
    ds = SyntheticDataset(spec, images, manifest)
    if out_dir is not None:
        ds.save(out_dir)
    return ds


def spec_dict(spec: SyntheticSpec) -> dict:
    d = asdict(spec)
    d["image_size"] = list(spec.image_size)
    return d
