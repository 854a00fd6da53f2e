"""Input checks shared by the estimators."""
from __future__ import annotations

import numpy as np
import torch
from torch.utils.data import Dataset


def check_images(X, image_size=None, name="X") -> torch.Tensor:
    """Coerce to a float32 ``[N, 3, H, W]`` tensor and check size and finiteness."""
    if isinstance(X, Dataset) and not isinstance(X, torch.Tensor):
        X = torch.stack([X[i][0] for i in range(len(X))])
    X = torch.as_tensor(np.asarray(X) if not isinstance(X, torch.Tensor) else X,
                        dtype=torch.float32)
    if X.dim() != 4 or X.shape[1] != 3:
        raise ValueError(f"{name} must have shape [N, 3, H, W], got {tuple(X.shape)}")
    if len(X) == 0:
        raise ValueError(f"{name} is empty")
    if image_size is not None and tuple(X.shape[2:]) != tuple(image_size):
        raise ValueError(f"{name} has spatial size {tuple(X.shape[2:])}, "
                         f"expected {tuple(image_size)}")
    if not torch.isfinite(X).all():
        raise ValueError(f"{name} contains non-finite values")
    return X


def check_labels(y, n, name="y") -> np.ndarray:
    y = np.asarray(y)
    if y.shape != (n,):
        raise ValueError(f"{name} must have shape ({n},), got {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if np.any(np.asarray(y, dtype=float) != np.round(np.asarray(y, dtype=float))):
            raise ValueError(f"{name} must hold integer labels")
        y = y.astype(np.int64)
    return y


def check_embeddings(E, min_rows=2, name="embeddings") -> np.ndarray:
    E = np.asarray(E, dtype=np.float64)
    if E.ndim != 2:
        raise ValueError(f"{name} must be 2-d, got shape {E.shape}")
    if E.shape[0] < min_rows:
        raise ValueError(f"{name} needs at least {min_rows} rows, got {E.shape[0]}")
    if not np.all(np.isfinite(E)):
        raise ValueError(f"{name} contains non-finite values")
    return E


def encode_labels(y):
    """Dense class indices ``[0, K)`` for arbitrary integer labels (sorted order)."""
    classes, dense = np.unique(y, return_inverse=True)
    return classes, dense


class ImageLabelDataset(Dataset):
    """Adapter exposing in-memory arrays with the ManifestDataset item layout."""

    def __init__(self, images: torch.Tensor, labels=None, cameras=None):
        self.images = images
        n = len(images)
        self.labels = np.full(n, -1) if labels is None else np.asarray(labels)
        self.cameras = np.ones(n, dtype=np.int64) if cameras is None else np.asarray(cameras)

    def __len__(self):
        return len(self.images)

    def __getitem__(self, i):
        return self.images[i], int(self.labels[i]), int(self.cameras[i]), i
