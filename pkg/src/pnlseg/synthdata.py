"""Reproducible synthetic blob datasets with simulated point annotations.

Each image holds one or more smooth random blobs (foreground) on a textured
background. Foreground and background intensity distributions overlap by
default, so per-pixel thresholding is insufficient and models must use
shape context; ground-truth masks are written for every sample (the masks
of point-only samples are used for evaluation, never for training).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .core import (
    Image, MaskLabel, PointAnnotation, Sample, SPLIT_D1, SPLIT_D2,
    save_dataset, validate_sample,
)
from .errors import ConfigError, DataError


@dataclass(frozen=True)
class GenConfig:
    height: int = 96
    width: int = 96
    count: int = 200
    d1_fraction: float = 0.047      # pixel-labeled share of the training set
    blob_count_min: int = 1
    blob_count_max: int = 1
    blob_radius_min: float = 24.0
    blob_radius_max: float = 34.0
    blob_wobble: float = 0.15       # max radial modulation of the blob outline
    fg_mean: float = 0.55
    bg_mean: float = 0.45
    # per-blob contrast spread around fg_mean - bg_mean: faint blobs are
    # nearly invisible against the noise, like lesions that resemble
    # healthy tissue, so weakly-trained models miss some objects entirely
    contrast_spread: float = 0.08
    noise_sigma: float = 0.15
    boundary_blur: float = 1.0      # px, softens the fg/bg transition
    shading_amp: float = 0.08       # low-frequency background shading
    point_margin: int = 3           # erosion radius for interior-biased clicks
    channels: int = 1
    seed: int = 0

    def validate(self):
        if not (0.0 < self.d1_fraction <= 1.0):
            raise ConfigError(f"d1_fraction must be in (0,1], got {self.d1_fraction}")
        if self.count < 1:
            raise ConfigError("count must be >= 1")
        if self.blob_count_min < 1 or self.blob_count_max < self.blob_count_min:
            raise ConfigError("invalid blob count range")
        if self.blob_radius_min <= 0 or self.blob_radius_max < self.blob_radius_min:
            raise ConfigError("invalid blob radius range")
        if self.channels not in (1, 3):
            raise ConfigError(f"channels must be 1 or 3, got {self.channels}")
        if self.contrast_spread < 0 or self.contrast_spread >= abs(self.fg_mean - self.bg_mean):
            raise ConfigError(
                "contrast_spread must be in [0, |fg_mean - bg_mean|) so every "
                "blob keeps the foreground's sign of contrast"
            )
        r_eff = self.blob_radius_max * (1.0 + self.blob_wobble)
        margin = int(np.ceil(r_eff)) + 1
        if 2 * margin >= min(self.height, self.width):
            raise ConfigError(
                f"blob of effective radius {r_eff:.1f} cannot fit in "
                f"{self.height}x{self.width}"
            )


def multi_blob_preset(seed: int = 0, **overrides) -> GenConfig:
    """Several smaller blobs per image: exercises multi-point neighborhoods."""
    base = GenConfig(
        blob_count_min=1, blob_count_max=3,
        blob_radius_min=8.0, blob_radius_max=16.0,
        seed=seed,
    )
    return replace(base, **overrides)


def _disk_structure(radius: int) -> np.ndarray:
    side = 2 * radius + 1
    dy = np.arange(side)[:, None] - radius
    dx = np.arange(side)[None, :] - radius
    return dy * dy + dx * dx <= radius * radius


def _blob_mask(cfg: GenConfig, rng: np.random.Generator) -> np.ndarray:
    """Rasterize one smooth closed blob fully inside the image."""
    r0 = rng.uniform(cfg.blob_radius_min, cfg.blob_radius_max)
    n_harm = 4
    amps = rng.uniform(0.0, cfg.blob_wobble / n_harm, size=n_harm)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=n_harm)
    r_eff = r0 * (1.0 + amps.sum())
    m = int(np.ceil(r_eff)) + 1
    cy = rng.uniform(m, cfg.height - 1 - m)
    cx = rng.uniform(m, cfg.width - 1 - m)

    yy = np.arange(cfg.height)[:, None] - cy
    xx = np.arange(cfg.width)[None, :] - cx
    theta = np.arctan2(yy, xx)
    boundary = r0 * (
        1.0 + sum(a * np.cos((k + 1) * theta + p)
                  for k, (a, p) in enumerate(zip(amps, phases)))
    )
    return yy * yy + xx * xx <= boundary * boundary


def simulate_point(mask: MaskLabel, rng: np.random.Generator, margin: int = 3):
    """Draw one interior-biased click: uniform over the margin-eroded
    foreground, falling back to the full foreground when erosion empties it."""
    fg = mask.values.astype(bool)
    if not fg.any():
        raise ValueError("cannot place a point on an empty mask")
    if margin > 0:
        eroded = ndimage.binary_erosion(fg, structure=_disk_structure(margin))
        candidates = np.argwhere(eroded if eroded.any() else fg)
    else:
        candidates = np.argwhere(fg)
    r, c = candidates[int(rng.integers(len(candidates)))]
    return int(r), int(c)


def _render_image(cfg: GenConfig, blobs, contrasts, rng: np.random.Generator) -> np.ndarray:
    shape = (cfg.height, cfg.width)
    lift = np.zeros(shape)
    for blob, contrast in zip(blobs, contrasts):
        soft = ndimage.gaussian_filter(blob.astype(np.float64), cfg.boundary_blur)
        lift = np.maximum(lift, contrast * soft)
    base = cfg.bg_mean + lift
    shading = ndimage.gaussian_filter(
        rng.normal(0.0, 1.0, size=shape), min(cfg.height, cfg.width) / 6.0
    )
    sd = shading.std()
    if sd > 0:
        base = base + cfg.shading_amp * shading / sd
    img = base + rng.normal(0.0, cfg.noise_sigma, size=shape)
    img = np.clip(img, 0.0, 1.0)
    # quantize so the on-disk 8-bit PNG round-trips exactly
    u8 = np.round(img * 255.0).astype(np.uint8)
    chans = np.repeat(u8[:, :, None], cfg.channels, axis=2)
    return chans.astype(np.float32) / 255.0


def make_sample(cfg: GenConfig, index: int, split: str):
    """Build one sample deterministically from (seed, index)."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((cfg.seed, index))))
    n_blobs = int(rng.integers(cfg.blob_count_min, cfg.blob_count_max + 1))
    blobs = [_blob_mask(cfg, rng) for _ in range(n_blobs)]
    mean_contrast = cfg.fg_mean - cfg.bg_mean
    contrasts = rng.uniform(mean_contrast - cfg.contrast_spread,
                            mean_contrast + cfg.contrast_spread, size=n_blobs)
    union = np.zeros((cfg.height, cfg.width), dtype=bool)
    for b in blobs:
        union |= b
    mask = MaskLabel(union.astype(np.uint8))
    points = [simulate_point(MaskLabel(b.astype(np.uint8)), rng, cfg.point_margin)
              for b in blobs]
    pixels = _render_image(cfg, blobs, contrasts, rng)
    sid = f"s{index:05d}"
    sample = Sample(
        id=sid,
        image=Image(pixels),
        split=split,
        mask=mask if split == SPLIT_D1 else None,
        points=PointAnnotation(tuple(points)),
    )
    return sample, mask


def generate(cfg: GenConfig, out_dir) -> Path:
    """Write one dataset directory in the standard layout; deterministic
    under the seed. Returns the directory path."""
    cfg.validate()
    out_dir = Path(out_dir)
    split_rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence((cfg.seed, 1 << 40)))
    )
    n_d1 = max(1, int(np.floor(cfg.count * cfg.d1_fraction)))
    order = split_rng.permutation(cfg.count)
    d1_idx = set(int(i) for i in order[:n_d1])

    samples, heldback = [], {}
    for i in range(cfg.count):
        split = SPLIT_D1 if i in d1_idx else SPLIT_D2
        sample, mask = make_sample(cfg, i, split)
        problems = validate_sample(sample)
        if problems:
            raise DataError(f"generated sample {sample.id} invalid: {problems}")
        samples.append(sample)
        if split == SPLIT_D2:
            heldback[sample.id] = mask
    save_dataset(out_dir, samples, heldback_masks=heldback)
    provenance = {"generator": asdict(cfg), "n_d1": n_d1, "n_d2": cfg.count - n_d1}
    (out_dir / "gen_config.json").write_text(json.dumps(provenance, indent=1, sort_keys=True))
    return out_dir
