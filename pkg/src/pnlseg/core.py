"""Core data model: images, binary masks, point annotations, samples, dataset IO.

Coordinates are (row, col) with origin at the top-left corner, matching
matrix indexing everywhere else in the package.

Dataset directory layout::

    images/<id>.png      8-bit grayscale or RGB
    masks/<id>.png       8-bit {0, 255}, present for D1 and for evaluation
    points.json          id -> [[row, col], ...]
    split.json           id -> "D1" | "D2"
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image as PILImage

from .errors import DataError

SPLIT_D1 = "D1"
SPLIT_D2 = "D2"

MIN_SIDE = 9  # nine-grid partitioning needs at least 9 rows and columns


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Image:
    """H x W x C array of intensities in [0, 1], C in {1, 3}."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float32)
        if px.ndim == 2:
            px = px[:, :, None]
        object.__setattr__(self, "pixels", _freeze(px))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]


@dataclass(frozen=True)
class MaskLabel:
    """H x W binary matrix, 1 = foreground, 0 = background."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "values", _freeze(np.asarray(self.values, dtype=np.uint8))
        )

    @property
    def shape(self):
        return self.values.shape

    def foreground_count(self) -> int:
        return int(self.values.sum())


@dataclass(frozen=True)
class PointAnnotation:
    """One or more (row, col) pixel coordinates marking object interiors."""

    points: tuple

    def __post_init__(self):
        pts = tuple((int(r), int(c)) for r, c in self.points)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class Sample:
    """An image with its annotation payload and split tag.

    D1 samples carry both a pixel mask and points; D2 samples carry points
    only (their masks, if any exist on disk, are held back for evaluation).
    The ``pseudo`` slot is filled by the trainer for D2 samples.
    """

    id: str
    image: Image
    split: str
    mask: Optional[MaskLabel] = None
    points: Optional[PointAnnotation] = None
    pseudo: object = None


def validate_sample(s: Sample) -> list:
    """Check every type invariant; return a list of violation strings.

    Pure and non-throwing: an empty list means the sample is valid.
    """
    findings = []
    px = s.image.pixels
    if not np.all(np.isfinite(px)):
        findings.append("image: non-finite intensity")
    elif px.size and (px.min() < 0.0 or px.max() > 1.0):
        findings.append("image: intensity outside [0,1]")
    h, w, c = px.shape
    if h < MIN_SIDE or w < MIN_SIDE:
        findings.append(f"image: size {h}x{w} below minimum {MIN_SIDE}x{MIN_SIDE}")
    if c not in (1, 3):
        findings.append(f"image: channel count {c} not in {{1,3}}")

    if s.split not in (SPLIT_D1, SPLIT_D2):
        findings.append(f"split: unknown tag {s.split!r}")

    if s.mask is not None:
        if s.mask.values.shape != (h, w):
            findings.append("mask: shape differs from image")
        bad = ~np.isin(s.mask.values, (0, 1))
        if bad.any():
            findings.append("mask: values not in {0,1}")

    if s.points is not None:
        for r, c_ in s.points.points:
            if not (0 <= r < h and 0 <= c_ < w):
                findings.append("point out of bounds")
                break
        if s.mask is not None and s.mask.values.shape == (h, w):
            for r, c_ in s.points.points:
                if 0 <= r < h and 0 <= c_ < w and s.mask.values[r, c_] != 1:
                    findings.append("point not on mask foreground")
                    break

    if s.split == SPLIT_D1:
        if s.mask is None:
            findings.append("mask missing on D1 sample")
        if s.points is None:
            findings.append("points missing on D1 sample")
    if s.split == SPLIT_D2 and s.mask is not None:
        findings.append("mask present on D2 training sample")
    return findings


# ---------------------------------------------------------------------------
# disk IO
# ---------------------------------------------------------------------------


def write_image_png(path, pixels: np.ndarray):
    """Write float [0,1] pixels as an 8-bit PNG (grayscale or RGB)."""
    arr = np.asarray(pixels)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    u8 = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    PILImage.fromarray(u8).save(path)


def read_image_png(path) -> Image:
    with PILImage.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB" if im.mode in ("RGBA", "P", "CMYK") else "L")
        arr = np.asarray(im, dtype=np.float32) / 255.0
    return Image(arr)


def write_mask_png(path, mask: MaskLabel):
    """Masks are stored as {0, 255} 8-bit images for portability."""
    PILImage.fromarray((mask.values * 255).astype(np.uint8)).save(path)


def read_mask_png(path) -> MaskLabel:
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return MaskLabel((arr >= 128).astype(np.uint8))


def save_dataset(root, samples, heldback_masks=None):
    """Write samples to ``root`` in the standard layout.

    ``heldback_masks`` maps D2 sample ids to evaluation-only masks; they go
    to masks/ on disk but are never attached to training samples on load.
    """
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    points, split = {}, {}
    for s in samples:
        write_image_png(root / "images" / f"{s.id}.png", s.image.pixels)
        if s.mask is not None:
            write_mask_png(root / "masks" / f"{s.id}.png", s.mask)
        if s.points is not None:
            points[s.id] = [list(p) for p in s.points.points]
        split[s.id] = s.split
    for sid, mask in (heldback_masks or {}).items():
        write_mask_png(root / "masks" / f"{sid}.png", mask)
    (root / "points.json").write_text(json.dumps(points, indent=1, sort_keys=True))
    (root / "split.json").write_text(json.dumps(split, indent=1, sort_keys=True))


def load_dataset(root) -> list:
    """Load samples from ``root``; D2 masks on disk are NOT attached.

    Returns samples sorted by id so iteration order is reproducible.
    """
    root = Path(root)
    split_path = root / "split.json"
    if not split_path.exists():
        raise DataError(f"not a dataset directory (missing split.json): {root}")
    split = json.loads(split_path.read_text())
    points_path = root / "points.json"
    points = json.loads(points_path.read_text()) if points_path.exists() else {}

    samples = []
    for sid in sorted(split):
        img_path = root / "images" / f"{sid}.png"
        if not img_path.exists():
            raise DataError(f"missing image for sample {sid}")
        tag = split[sid]
        mask = None
        if tag == SPLIT_D1:
            mask_path = root / "masks" / f"{sid}.png"
            if not mask_path.exists():
                raise DataError(f"missing mask for D1 sample {sid}")
            mask = read_mask_png(mask_path)
        pts = points.get(sid)
        samples.append(
            Sample(
                id=sid,
                image=read_image_png(img_path),
                split=tag,
                mask=mask,
                points=PointAnnotation(tuple(map(tuple, pts))) if pts else None,
            )
        )
    return samples


def load_heldback_masks(root) -> dict:
    """All masks present on disk, keyed by id (evaluation oracle for D2)."""
    root = Path(root)
    out = {}
    mask_dir = root / "masks"
    if mask_dir.exists():
        for p in sorted(mask_dir.glob("*.png")):
            out[p.stem] = read_mask_png(p)
    return out
