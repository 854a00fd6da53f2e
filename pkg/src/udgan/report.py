"""Image montages of generated swaps."""
from __future__ import annotations

from typing import Sequence

import numpy as np
from PIL import Image


def montage(rows: Sequence[Sequence[np.ndarray]], pad: int = 2, fill: int = 255) -> Image.Image:
    """Tile equally sized HxWx3 uint8 images into a grid, one list per row."""
    if not rows or not rows[0]:
        raise ValueError("montage needs at least one tile")
    ncols = len(rows[0])
    if any(len(r) != ncols for r in rows):
        raise ValueError("all montage rows need the same number of tiles")
    h, w = rows[0][0].shape[:2]
    canvas = np.full((pad + len(rows) * (h + pad), pad + ncols * (w + pad), 3), fill, np.uint8)
    for i, row in enumerate(rows):
        for j, tile in enumerate(row):
            if tile.shape[:2] != (h, w):
                raise ValueError("montage tiles differ in size")
            y, x = pad + i * (h + pad), pad + j * (w + pad)
            canvas[y:y + h, x:x + w] = tile
    return Image.fromarray(canvas)


def grid_shape(image: Image.Image, tile_size, pad: int = 2):
    """Recover ``(rows, cols)`` of a montage built with :func:`montage`."""
    h, w = tile_size
    width, height = image.size
    return (height - pad) // (h + pad), (width - pad) // (w + pad)
