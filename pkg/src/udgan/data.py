"""Dataset ingestion: filename-encoded labels, manifests, image normalisation."""
from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import torch
from PIL import Image
from torch.utils.data import Dataset

from .errors import DataError

DEFAULT_PATTERN = r"([-\d]+)_c(\d+)"
SPLITS = ("train", "query", "gallery")
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp"}
MANIFEST_HEADER = ["path", "identity", "camera", "split"]


def parse_entry(path, pattern=DEFAULT_PATTERN) -> Tuple[int, int]:
    """Return ``(identity, camera)`` encoded in the file name of ``path``.

    ``pattern`` is a regular expression whose first two groups capture the
    identity and the camera. The default matches Market1501-style names such
    as ``0007_c3s1_000151_00.jpg``. Identity ``-1`` marks a distractor.
    """
    regex = re.compile(pattern) if isinstance(pattern, str) else pattern
    if regex.groups < 2:
        raise ValueError(f"pattern {regex.pattern!r} needs two capture groups (identity, camera)")
    name = Path(path).name
    m = regex.search(name)
    if m is None:
        raise DataError(f"cannot parse identity/camera from file name {name!r} "
                        f"with pattern {regex.pattern!r}")
    try:
        return int(m.group(1)), int(m.group(2))
    except ValueError:
        raise DataError(f"non-integer identity/camera in file name {name!r}") from None


@dataclass(frozen=True)
class Entry:
    path: str
    identity: int
    camera: int
    split: str


@dataclass
class DatasetManifest:
    entries: List[Entry]
    num_cameras: int
    id_index: Dict[int, int] = field(default_factory=dict)
    root: Optional[str] = None

    @classmethod
    def from_entries(cls, entries: Iterable[Entry], root=None, num_cameras=None):
        entries = list(entries)
        seen = set()
        for e in entries:
            if e.path in seen:
                raise DataError(f"duplicate path in manifest: {e.path}")
            seen.add(e.path)
            if e.split not in SPLITS:
                raise DataError(f"unknown split {e.split!r} for {e.path}")
            if e.camera < 1:
                raise DataError(f"camera ids start at 1, got {e.camera} for {e.path}")
        if num_cameras is None:
            num_cameras = max((e.camera for e in entries), default=0)
        bad = [e.path for e in entries if e.camera > num_cameras]
        if bad:
            raise DataError(f"camera id above num_cameras={num_cameras}: {bad[0]}")
        train_ids = sorted({e.identity for e in entries if e.split == "train" and e.identity >= 0})
        id_index = {pid: i for i, pid in enumerate(train_ids)}
        return cls(entries=entries, num_cameras=num_cameras, id_index=id_index,
                   root=None if root is None else str(root))

    def split(self, name) -> List[Entry]:
        return [e for e in self.entries if e.split == name]

    @property
    def num_classes(self) -> int:
        return len(self.id_index)

    def resolve(self, entry: Entry) -> Path:
        p = Path(entry.path)
        if self.root is not None and not p.is_absolute():
            p = Path(self.root) / p
        return p

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(MANIFEST_HEADER)
            for e in self.entries:
                writer.writerow([e.path, e.identity, e.camera, e.split])

    @classmethod
    def from_csv(cls, path, root=None):
        path = Path(path)
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != MANIFEST_HEADER:
                raise DataError(f"{path}: expected header {','.join(MANIFEST_HEADER)}")
            entries = [Entry(r["path"], int(r["identity"]), int(r["camera"]), r["split"])
                       for r in reader]
        return cls.from_entries(entries, root=root if root is not None else path.parent)


def load_manifest(root, pattern=DEFAULT_PATTERN, layout=None,
                  required=SPLITS) -> DatasetManifest:
    """Scan ``root/<split>/`` folders and parse labels from file names.

    ``layout`` maps split name to folder name (defaults to the split name).
    Splits listed in ``required`` must exist and contain at least one image.
    Distractors (identity < 0) found in the query split are dropped.
    """
    root = Path(root)
    layout = {s: s for s in SPLITS} | dict(layout or {})
    if not root.is_dir():
        raise DataError(f"dataset root {root} does not exist")
    entries = []
    for split in SPLITS:
        folder = root / layout[split]
        if not folder.is_dir():
            if split in required:
                raise DataError(f"missing split folder {folder}")
            continue
        files = sorted(p for p in folder.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        if not files and split in required:
            raise DataError(f"split folder {folder} contains no images")
        for p in files:
            identity, camera = parse_entry(p.name, pattern)
            if split == "query" and identity < 0:
                continue
            entries.append(Entry(p.relative_to(root).as_posix(), identity, camera, split))
    return DatasetManifest.from_entries(entries, root=root)


def summarize_dataset(manifest: DatasetManifest) -> dict:
    """Counts in the shape of the usual dataset-characteristics table."""
    per_split = {}
    for split in SPLITS:
        items = manifest.split(split)
        per_split[split] = {
            "images": len(items),
            "identities": len({e.identity for e in items if e.identity >= 0}),
        }
    return {
        "images": len(manifest.entries),
        "identities": len({e.identity for e in manifest.entries if e.identity >= 0}),
        "cameras": manifest.num_cameras,
        "distractors": sum(e.identity < 0 for e in manifest.entries),
        "splits": per_split,
    }


# -- pixels ------------------------------------------------------------------

def normalize(pixels, mean=(0.5, 0.5, 0.5), std=(0.5, 0.5, 0.5)) -> torch.Tensor:
    """uint8 HxWx3 (or float [0,1] 3xHxW tensor) -> standardized float 3xHxW."""
    if isinstance(pixels, np.ndarray) and pixels.dtype == np.uint8:
        x = torch.from_numpy(pixels.astype(np.float32) / 255.0).permute(2, 0, 1)
    else:
        x = torch.as_tensor(pixels, dtype=torch.float32)
    m = torch.tensor(mean, dtype=x.dtype).view(-1, 1, 1)
    s = torch.tensor(std, dtype=x.dtype).view(-1, 1, 1)
    return (x - m) / s


def denormalize(x, mean=(0.5, 0.5, 0.5), std=(0.5, 0.5, 0.5)) -> np.ndarray:
    """Inverse of :func:`normalize`; returns uint8 HxWx3 (or NxHxWx3 for a batch)."""
    x = torch.as_tensor(x).detach().float().cpu()
    shape = (1, -1, 1, 1) if x.dim() == 4 else (-1, 1, 1)
    m = torch.tensor(mean).view(shape)
    s = torch.tensor(std).view(shape)
    p = (x * s + m).clamp(0, 1) * 255.0
    p = torch.round(p).to(torch.uint8)
    return p.permute(0, 2, 3, 1).numpy() if x.dim() == 4 else p.permute(1, 2, 0).numpy()


def pixel_range(mean=(0.5, 0.5, 0.5), std=(0.5, 0.5, 0.5)):
    """Per-channel (low, high) of normalized values for pixels in [0, 1]."""
    m = torch.tensor(mean)
    s = torch.tensor(std)
    return -m / s, (1 - m) / s


def read_image(path, size: Sequence[int]) -> np.ndarray:
    """Decode an image file as RGB uint8, bilinearly resized to ``size=(h, w)``."""
    h, w = size
    try:
        with Image.open(path) as img:
            img = img.convert("RGB")
            if img.size != (w, h):
                img = img.resize((w, h), Image.BILINEAR)
            return np.asarray(img, dtype=np.uint8).copy()
    except OSError as exc:
        raise DataError(f"cannot read image {path}: {exc}") from None


class ManifestDataset(Dataset):
    """Images of one split as normalized tensors with dense labels.

    Items are ``(image, label, camera, index)`` where ``label`` is the dense
    class index for train identities and ``-1`` otherwise. Decoded images are
    cached in memory when ``cache`` is set (desk-scale datasets).
    """

    def __init__(self, manifest: DatasetManifest, split="train", image_size=(384, 128),
                 mean=(0.5, 0.5, 0.5), std=(0.5, 0.5, 0.5), cache=True,
                 include_distractors=False):
        self.manifest = manifest
        self.entries = [e for e in manifest.split(split)
                        if include_distractors or e.identity >= 0]
        self.image_size = tuple(image_size)
        self.mean, self.std = tuple(mean), tuple(std)
        self._cache = {} if cache else None

    def __len__(self):
        return len(self.entries)

    def image(self, index) -> torch.Tensor:
        if self._cache is not None and index in self._cache:
            return self._cache[index]
        x = normalize(read_image(self.manifest.resolve(self.entries[index]), self.image_size),
                      self.mean, self.std)
        if self._cache is not None:
            self._cache[index] = x
        return x

    def __getitem__(self, index):
        e = self.entries[index]
        return self.image(index), self.manifest.id_index.get(e.identity, -1), e.camera, index

    def tensors(self):
        """Stack the whole split: ``(images, labels, identities, cameras)``."""
        if not self.entries:
            raise DataError("empty split")
        images = torch.stack([self.image(i) for i in range(len(self))])
        labels = torch.tensor([self.manifest.id_index.get(e.identity, -1) for e in self.entries])
        ids = torch.tensor([e.identity for e in self.entries])
        cams = torch.tensor([e.camera for e in self.entries])
        return images, labels, ids, cams
