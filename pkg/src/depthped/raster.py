"""Small raster helpers shared by training, matching and verification."""

from __future__ import annotations

import numpy as np


def resize_nearest(array: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbor resize of a 2-D (or 2-D + channels) array.

    Sample centers are aligned (pixel ``i`` reads from source pixel
    ``floor((i + 0.5) * in / out)``), so resizing to the same size is the
    identity and the mapping is deterministic in both directions.
    """
    in_h, in_w = array.shape[:2]
    rows = np.minimum((np.arange(out_h) + 0.5) * in_h / out_h, in_h - 1).astype(np.intp)
    cols = np.minimum((np.arange(out_w) + 0.5) * in_w / out_w, in_w - 1).astype(np.intp)
    return array[np.ix_(rows, cols)]
