"""Synthetic detection dataset: colored, lightly textured shapes on cluttered
gray backgrounds, with exact bounding boxes.

Classes are (in id order) disk, square, triangle. Each class carries a
distinct hue family and a distinct weak texture pattern, so the color
channel, the gradient channels, and the whole-image prior all have signal.
Texture amplitude stays low on purpose: graph segmentation should keep each
shape in one piece while contrast-normalized descriptors still see the
pattern. Everything is a pure function of the seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple

import numpy as np

from .core import Box, GroundTruth
from .images import Image, write_pnm
from .manifest import DatasetManifest, ManifestImage, write_manifest

CLASS_NAMES = ("disk", "square", "triangle")

# per class: base RGB; hue families kept well apart
_BASE_COLORS = np.array(
    [
        [205, 65, 60],
        [60, 185, 75],
        [65, 95, 215],
    ],
    dtype=np.float64,
)
_TEXTURE_AMPLITUDE = 8.0


@dataclass(frozen=True)
class SynthSpec:
    n_classes: int = 3
    n_images: int = 100
    max_shapes: int = 3
    noise: float = 0.3
    image_size: int = 96

    def __post_init__(self):
        if not 1 <= self.n_classes <= len(CLASS_NAMES):
            raise ValueError(f"n_classes must be in [1, {len(CLASS_NAMES)}]")
        if self.n_images < 1:
            raise ValueError("n_images must be >= 1")
        if self.max_shapes < 1:
            raise ValueError("max_shapes must be >= 1")
        if not 0.0 <= self.noise <= 1.0:
            raise ValueError("noise must lie in [0, 1]")
        if self.image_size < 48:
            raise ValueError("image_size must be >= 48")


def _shape_mask(cls: int, size: int, cx: float, cy: float, half: float) -> np.ndarray:
    """Boolean pixel-center mask of one shape instance."""
    yy, xx = np.mgrid[0:size, 0:size]
    px = xx + 0.5
    py = yy + 0.5
    if cls == 0:
        return (px - cx) ** 2 + (py - cy) ** 2 <= half**2
    if cls == 1:
        return (np.abs(px - cx) <= half) & (np.abs(py - cy) <= half)
    # upward isoceles triangle: apex on top, base at cy + half
    inside_y = (py >= cy - half) & (py <= cy + half)
    frac = (py - (cy - half)) / (2.0 * half)  # 0 at apex, 1 at base
    return inside_y & (np.abs(px - cx) <= half * frac)


def _texture(cls: int, size: int) -> np.ndarray:
    """Class-conditional +/- amplitude pattern over the whole pixel grid."""
    yy, xx = np.mgrid[0:size, 0:size]
    if cls == 0:
        bands = (yy // 3) % 2
    elif cls == 1:
        bands = (xx // 3) % 2
    else:
        bands = (xx // 3 + yy // 3) % 2
    return _TEXTURE_AMPLITUDE * (2.0 * bands - 1.0)


def generate_dataset(
    out_dir,
    spec: SynthSpec,
    seed: int,
    prefix: str = "img",
) -> DatasetManifest:
    """Writes PPM images plus manifest.txt under out_dir; returns the manifest.

    Ground-truth boxes are the exact pixel extents of each painted shape.
    The same (spec, seed) always produces byte-identical files.
    """
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    size = spec.image_size

    images: List[ManifestImage] = []
    for idx in range(spec.n_images):
        image_id = f"{prefix}_{idx:04d}"
        canvas = np.empty((size, size, 3), dtype=np.float64)
        canvas[:] = rng.uniform(118.0, 142.0)
        # neutral clutter rectangles; close to background so they never
        # steal the color story from the shapes
        for _ in range(int(rng.integers(2, 6))):
            w = int(rng.integers(8, 25))
            h = int(rng.integers(8, 25))
            x0 = int(rng.integers(0, size - w))
            y0 = int(rng.integers(0, size - h))
            g = rng.uniform(95.0, 165.0)
            canvas[y0 : y0 + h, x0 : x0 + w] = g + rng.uniform(-6.0, 6.0, size=3)

        gts: List[GroundTruth] = []
        placed: List[Tuple[float, float, float]] = []
        n_shapes = int(rng.integers(1, spec.max_shapes + 1))
        for _ in range(n_shapes):
            cls = int(rng.integers(spec.n_classes))
            half = float(rng.uniform(9.0, 14.0))
            for _attempt in range(60):
                cx = float(rng.uniform(half + 3.0, size - half - 3.0))
                cy = float(rng.uniform(half + 3.0, size - half - 3.0))
                # 1.5 > sqrt(2): even two square diagonals cannot touch
                if all(
                    (cx - ox) ** 2 + (cy - oy) ** 2 >= (1.5 * (half + oh) + 3.0) ** 2
                    for ox, oy, oh in placed
                ):
                    break
            else:
                continue  # image too crowded; place fewer shapes
            placed.append((cx, cy, half))

            mask = _shape_mask(cls, size, cx, cy, half)
            color = _BASE_COLORS[cls] + rng.uniform(-20.0, 20.0, size=3)
            canvas[mask] = color[None, :] + _texture(cls, size)[mask, None]

            ys, xs = np.nonzero(mask)
            box = Box(float(xs.min()), float(ys.min()), float(xs.max() + 1), float(ys.max() + 1))
            gts.append(GroundTruth(image_id=image_id, category_id=cls, box=box))

        canvas += rng.normal(0.0, 10.0 * spec.noise, size=canvas.shape)
        pixels = np.clip(np.rint(canvas), 0, 255).astype(np.uint8)
        rel = f"images/{image_id}.ppm"
        write_pnm(Image.from_array(pixels), out_dir / rel)
        images.append(ManifestImage(image_id=image_id, path=rel, ground_truths=gts))

    manifest = DatasetManifest(
        categories=list(CLASS_NAMES[: spec.n_classes]),
        images=images,
        base_dir=out_dir,
    )
    write_manifest(out_dir / "manifest.txt", manifest)
    return manifest
