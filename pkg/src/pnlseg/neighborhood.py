"""Circular point-neighborhoods: rasterized masks, image slices, and the bank.

A neighborhood is the closed disk of radius R (integer lattice, <= R^2
membership) around an annotated point, clipped at image borders so the
annotated point stays the true center.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Image, PointAnnotation, Sample
from .errors import ConfigError, DataError


@dataclass(frozen=True)
class NeighborhoodMask:
    """Binary H x W rasterization of the union of per-point disks."""

    matrix: np.ndarray  # bool
    radius: int
    centers: tuple

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=bool)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def area(self) -> int:
        return int(self.matrix.sum())

    @property
    def shape(self):
        return self.matrix.shape


def make_neighborhood_mask(points: PointAnnotation, radius: int, height: int, width: int) -> NeighborhoodMask:
    """Rasterize the radius-R disks around every annotated point.

    A pixel is set iff some center c satisfies (i-c_r)^2 + (j-c_c)^2 <= R^2.
    """
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    if len(points) == 0:
        raise ValueError("need at least one point")
    rows = np.arange(height)[:, None]
    cols = np.arange(width)[None, :]
    matrix = np.zeros((height, width), dtype=bool)
    r2 = radius * radius
    for r, c in points.points:
        if not (0 <= r < height and 0 <= c < width):
            raise ValueError(f"point ({r},{c}) outside {height}x{width} image")
        matrix |= (rows - r) ** 2 + (cols - c) ** 2 <= r2
    return NeighborhoodMask(matrix=matrix, radius=radius, centers=points.points)


@dataclass(frozen=True)
class NeighborhoodSlice:
    """(2R+1)^2 crop centered on a point, with an in-bounds/in-disk validity map.

    Pixels with validity 0 (outside the image or outside the disk) are
    zero-filled in the patch.
    """

    patch: np.ndarray     # (2R+1, 2R+1, C) float32
    validity: np.ndarray  # (2R+1, 2R+1) bool
    source_id: str
    radius: int


def extract_slice(img: Image, point, radius: int, source_id: str = "") -> NeighborhoodSlice:
    r, c = int(point[0]), int(point[1])
    h, w = img.height, img.width
    if not (0 <= r < h and 0 <= c < w):
        raise ValueError(f"point ({r},{c}) outside {h}x{w} image")
    side = 2 * radius + 1
    patch = np.zeros((side, side, img.channels), dtype=np.float32)
    dy = np.arange(side)[:, None] - radius
    dx = np.arange(side)[None, :] - radius
    disk = dy * dy + dx * dx <= radius * radius
    inb = (r + dy >= 0) & (r + dy < h) & (c + dx >= 0) & (c + dx < w)
    validity = disk & inb
    src_r = (r + dy + np.zeros_like(dx))[validity]
    src_c = (np.zeros_like(dy) + c + dx)[validity]
    patch[validity] = img.pixels[src_r, src_c]
    return NeighborhoodSlice(patch=patch, validity=validity, source_id=source_id, radius=radius)


class NeighborhoodBank:
    """Write-once store of all point-neighborhood slices for one radius.

    One slice per (sample, point) pair, ordered by sample id then point
    index, so iteration is deterministic.
    """

    def __init__(self, radius: int, slices=None):
        self.radius = radius
        self.slices = list(slices or [])

    def __len__(self):
        return len(self.slices)

    def partner_pool(self, exclude_source_id: str) -> list:
        """Slices eligible as mixup partners for the given sample."""
        return [s for s in self.slices if s.source_id != exclude_source_id]

    def save(self, path):
        """Persist as a single archive; R goes in the header for staleness checks."""
        ids = np.array([s.source_id for s in self.slices])
        if self.slices:
            patches = np.stack([s.patch for s in self.slices])
            validities = np.stack([s.validity for s in self.slices])
        else:
            side = 2 * self.radius + 1
            patches = np.zeros((0, side, side, 1), dtype=np.float32)
            validities = np.zeros((0, side, side), dtype=bool)
        np.savez_compressed(
            path, radius=np.int64(self.radius), source_ids=ids,
            patches=patches, validities=validities,
        )

    @classmethod
    def load(cls, path, expected_radius=None) -> "NeighborhoodBank":
        with np.load(path, allow_pickle=False) as z:
            radius = int(z["radius"])
            if expected_radius is not None and radius != expected_radius:
                raise DataError(
                    f"stale neighborhood bank: built with R={radius}, "
                    f"run wants R={expected_radius}"
                )
            slices = [
                NeighborhoodSlice(
                    patch=z["patches"][i],
                    validity=z["validities"][i],
                    source_id=str(z["source_ids"][i]),
                    radius=radius,
                )
                for i in range(z["patches"].shape[0])
            ]
        return cls(radius=radius, slices=slices)


def build_bank(samples, radius: int) -> NeighborhoodBank:
    """Extract one slice per (sample, point) over all training samples."""
    slices = []
    for s in sorted(samples, key=lambda x: x.id):
        if s.points is None:
            continue
        for pt in s.points.points:
            try:
                slices.append(extract_slice(s.image, pt, radius, source_id=s.id))
            except ValueError as e:
                raise ValueError(f"sample {s.id}: {e}") from e
    return NeighborhoodBank(radius=radius, slices=slices)


def sample_neighborhood_mask(s: Sample, radius: int) -> NeighborhoodMask:
    """Convenience: the neighborhood mask of a sample's own points."""
    if s.points is None or len(s.points) == 0:
        raise ConfigError(f"sample {s.id} has no point annotation")
    return make_neighborhood_mask(s.points, radius, s.image.height, s.image.width)
