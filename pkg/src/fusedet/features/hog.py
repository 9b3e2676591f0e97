"""Root-filter HOG descriptor for the shape-template channel.

A window is resampled to a fixed cells_x*8 by cells_y*8 grayscale grid,
gradient orientations are voted into 9 unsigned bins per 8x8 cell, and each
cell block of 2x2 cells is L2-normalized with clamping at 0.2 followed by
renormalization, yielding cells_x * cells_y * 36 values.
"""

from __future__ import annotations

import numpy as np

from ..core import Box
from ..images import Image, sample_window, to_grayscale

CELL = 8
ORIENTATIONS = 9
CLAMP = 0.2
_EPS = 1e-12


def hog_length(cells_x: int, cells_y: int) -> int:
    return cells_x * cells_y * 4 * ORIENTATIONS


def hog(img: Image, window: Box, cells_x: int, cells_y: int) -> np.ndarray:
    """Block-normalized gradient orientation histogram of an image window.

    The descriptor depends only on intensity differences, so it is invariant
    to a constant offset added to the window. A uniform window yields the
    all-zero descriptor.
    """
    if cells_x < 1 or cells_y < 1:
        raise ValueError("cell grid must be at least 1x1")
    if not (
        window.x_min < img.width
        and window.y_min < img.height
        and window.x_max > 0
        and window.y_max > 0
    ):
        raise ValueError(f"window {window} lies outside the {img.width}x{img.height} image")

    gray = to_grayscale(img)
    out_w, out_h = cells_x * CELL, cells_y * CELL
    patch = sample_window(gray, window, out_w, out_h)

    gy, gx = np.gradient(patch)
    mag = np.hypot(gx, gy)
    theta = np.mod(np.arctan2(gy, gx), np.pi)  # unsigned orientation

    # bilinear vote between the two nearest orientation bins
    pos = theta / np.pi * ORIENTATIONS
    lo = np.floor(pos).astype(np.int64)
    frac = pos - lo
    lo = np.mod(lo, ORIENTATIONS)
    hi = np.mod(lo + 1, ORIENTATIONS)

    cy = np.arange(out_h) // CELL
    cx = np.arange(out_w) // CELL
    cell_idx = (cy[:, None] * cells_x + cx[None, :]).ravel()
    n_cells = cells_x * cells_y
    flat_lo = cell_idx * ORIENTATIONS + lo.ravel()
    flat_hi = cell_idx * ORIENTATIONS + hi.ravel()
    hist = np.bincount(flat_lo, weights=(mag * (1 - frac)).ravel(), minlength=n_cells * ORIENTATIONS)
    hist += np.bincount(flat_hi, weights=(mag * frac).ravel(), minlength=n_cells * ORIENTATIONS)
    cells = hist.reshape(cells_y, cells_x, ORIENTATIONS)

    # one 2x2 block per cell position; cells beyond the grid contribute zeros
    padded = np.zeros((cells_y + 1, cells_x + 1, ORIENTATIONS))
    padded[:cells_y, :cells_x] = cells
    blocks = np.concatenate(
        [
            padded[:cells_y, :cells_x],
            padded[:cells_y, 1:],
            padded[1:, :cells_x],
            padded[1:, 1:],
        ],
        axis=2,
    ).reshape(n_cells, 4 * ORIENTATIONS)

    norms = np.sqrt((blocks**2).sum(axis=1, keepdims=True))
    scale = np.where(norms > _EPS, norms, 1.0)
    blocks = np.minimum(blocks / scale, CLAMP)
    norms = np.sqrt((blocks**2).sum(axis=1, keepdims=True))
    scale = np.where(norms > _EPS, norms, 1.0)
    blocks = blocks / scale
    return blocks.ravel()
