"""Dual mixup augmentation and the mirror transform.

Two complementary mixup routes avoid the label ambiguity of plain mixup:

* neighborhood mixup blends ONLY the pixels inside the point-neighborhood
  with a partner slice drawn from the bank, leaving labels untouched;
* nine-grid mixup transplants exactly one grid cell from a pixel-labeled
  sample into a point-labeled sample, with blend weights restricted to
  {0, 1} so every pixel keeps a single unambiguous supervision source.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Image, Sample, SPLIT_D1
from .errors import ConfigError
from .neighborhood import NeighborhoodBank, NeighborhoodMask, make_neighborhood_mask

SOURCE_NONE = 0
SOURCE_GT = 1
SOURCE_PSEUDO = 2


@dataclass(frozen=True)
class MixConfig:
    """Blend-weight distribution (Beta) and RNG seeding for augmentation."""

    beta_a: float = 1.0
    beta_b: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.beta_a <= 0 or self.beta_b <= 0:
            raise ConfigError(
                f"beta parameters must be positive, got ({self.beta_a}, {self.beta_b})"
            )

    def make_rng(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed)))


@dataclass
class AugmentedSample:
    """An augmented image plus a per-pixel supervision descriptor.

    ``label`` holds the supervision target (hard 0/1 for ground truth,
    soft probabilities for pseudo-labels); ``source`` says where each
    pixel's target came from, so no pixel ever has an ambiguous label.
    """

    image: Image
    label: np.ndarray          # H x W float32
    source: np.ndarray         # H x W uint8, SOURCE_* codes
    nmask: NeighborhoodMask
    score: float = 1.0         # pseudo-label quality weight, 1 for D1
    provenance: dict = field(default_factory=dict)


def mirror(x: Image) -> Image:
    """Horizontal flip (columns reversed). Involution: mirror(mirror(x)) = x."""
    return Image(x.pixels[:, ::-1, :].copy())


def mirror_map(y: np.ndarray) -> np.ndarray:
    """Horizontal flip of an H x W matrix (label, mask, or prediction)."""
    return np.ascontiguousarray(y[:, ::-1])


def mirror_nmask(m: NeighborhoodMask) -> NeighborhoodMask:
    w = m.matrix.shape[1]
    centers = tuple((r, w - 1 - c) for r, c in m.centers)
    return NeighborhoodMask(matrix=mirror_map(m.matrix), radius=m.radius, centers=centers)


def grid_cells(height: int, width: int):
    """The 3x3 partition used by nine-grid mixup.

    Returns a 3x3 nested list of (r0, r1, c0, c1) half-open bounds. When a
    side is not divisible by 3 the leftover pixels go to the earliest
    cells, so the cells always tile the image exactly.
    """
    def edges(n):
        base, extra = divmod(n, 3)
        sizes = [base + (1 if i < extra else 0) for i in range(3)]
        out = [0]
        for s in sizes:
            out.append(out[-1] + s)
        return out

    re, ce = edges(height), edges(width)
    return [
        [(re[i], re[i + 1], ce[j], ce[j + 1]) for j in range(3)]
        for i in range(3)
    ]


def draw_sigma(cfg: MixConfig, rng: np.random.Generator) -> float:
    return float(rng.beta(cfg.beta_a, cfg.beta_b))


def pnmxp(
    x: Image,
    mask: NeighborhoodMask,
    bank: NeighborhoodBank,
    cfg: MixConfig,
    rng: np.random.Generator = None,
    sigma: float = None,
    exclude_source_id: str = "",
) -> Image:
    """Blend the neighborhood interior of ``x`` with a partner slice.

    Pixels outside the mask are returned bit-identical. Inside the mask,
    out = sigma * x + (1 - sigma) * partner, with the partner patch aligned
    center-to-center on each annotated point. Where the partner slice has
    no valid pixel (border clipping), the pixel stays equal to x. Labels
    are never touched. With an empty partner pool the op is the identity.
    """
    if mask.radius != bank.radius:
        raise ConfigError(
            f"neighborhood mask R={mask.radius} does not match bank R={bank.radius}"
        )
    if rng is None:
        rng = cfg.make_rng()
    pool = bank.partner_pool(exclude_source_id)
    if not pool:
        return x
    partner = pool[int(rng.integers(len(pool)))]
    if sigma is None:
        sigma = draw_sigma(cfg, rng)
    if not (0.0 <= sigma <= 1.0):
        raise ConfigError(f"sigma must be in [0,1], got {sigma}")

    out = x.pixels.copy()
    h, w = x.height, x.width
    R = mask.radius
    done = np.zeros((h, w), dtype=bool)  # each pixel blended at most once
    for (pr, pc) in mask.centers:
        r0, r1 = max(0, pr - R), min(h, pr + R + 1)
        c0, c1 = max(0, pc - R), min(w, pc + R + 1)
        dy = np.arange(r0, r1)[:, None] - pr
        dx = np.arange(c0, c1)[None, :] - pc
        disk = dy * dy + dx * dx <= R * R
        valid = disk & partner.validity[dy + R, dx + R] & ~done[r0:r1, c0:c1]
        if not valid.any():
            done[r0:r1, c0:c1] |= disk
            continue
        region = out[r0:r1, c0:c1]
        patch = partner.patch[(dy + R + np.zeros_like(dx))[valid], (np.zeros_like(dy) + dx + R)[valid]]
        blended = sigma * region[valid] + (1.0 - sigma) * patch
        region[valid] = np.clip(blended, 0.0, 1.0)
        done[r0:r1, c0:c1] |= disk
    return Image(out)


def as_gt_augmented(x: Sample, radius: int) -> AugmentedSample:
    """Wrap a pixel-labeled sample as an un-mixed augmentation input."""
    if x.mask is None:
        raise ConfigError(f"sample {x.id} has no pixel mask")
    nmask = make_neighborhood_mask(x.points, radius, x.image.height, x.image.width)
    return AugmentedSample(
        image=x.image,
        label=x.mask.values.astype(np.float32),
        source=np.full(nmask.shape, SOURCE_GT, dtype=np.uint8),
        nmask=nmask,
        score=1.0,
        provenance={"id": x.id},
    )


def as_pseudo_augmented(x: Sample, radius: int) -> AugmentedSample:
    """Wrap a pseudo-labeled sample as an un-mixed augmentation input."""
    if x.pseudo is None:
        raise ConfigError(f"sample {x.id} has no pseudo-label")
    nmask = make_neighborhood_mask(x.points, radius, x.image.height, x.image.width)
    return AugmentedSample(
        image=x.image,
        label=np.asarray(x.pseudo.probs, dtype=np.float32).copy(),
        source=np.full(nmask.shape, SOURCE_PSEUDO, dtype=np.uint8),
        nmask=nmask,
        score=float(x.pseudo.score if x.pseudo.score is not None else 1.0),
        provenance={"id": x.id},
    )


def pvrmxp(
    x1,
    x2,
    cfg: MixConfig,
    rng: np.random.Generator = None,
    cell: tuple = None,
    radius: int = None,
) -> AugmentedSample:
    """Transplant one nine-grid cell of a pixel-labeled sample into ``x2``.

    Inputs may be raw ``Sample`` objects (``radius`` required, x1 needs a
    mask and x2 a pseudo-label) or ``AugmentedSample`` outputs of a prior
    mixup. Exactly one cell (uniformly drawn unless ``cell`` is given) of
    the output is a bit-exact copy of x1; the other eight cells are
    bit-exact copies of x2. Supervision follows the pixels: ground truth
    inside the copied cell, pseudo-label outside. The neighborhood mask is
    x2's with the copied cell cleared, because the transplanted cell
    already carries full pixel supervision.
    """
    if isinstance(x1, Sample):
        if radius is None:
            raise ConfigError("radius required when mixing raw samples")
        x1 = as_gt_augmented(x1, radius)
    if isinstance(x2, Sample):
        if radius is None:
            raise ConfigError("radius required when mixing raw samples")
        x2 = as_pseudo_augmented(x2, radius)
    if x1.image.pixels.shape != x2.image.pixels.shape:
        raise ConfigError(
            f"shape mismatch: {x1.image.pixels.shape} vs {x2.image.pixels.shape}"
        )
    if rng is None:
        rng = cfg.make_rng()
    if cell is None:
        cell = (int(rng.integers(3)), int(rng.integers(3)))
    ci, cj = cell
    r0, r1, c0, c1 = grid_cells(x2.image.height, x2.image.width)[ci][cj]

    out_px = x2.image.pixels.copy()
    out_px[r0:r1, c0:c1] = x1.image.pixels[r0:r1, c0:c1]
    label = x2.label.copy()
    label[r0:r1, c0:c1] = x1.label[r0:r1, c0:c1]
    source = x2.source.copy()
    source[r0:r1, c0:c1] = x1.source[r0:r1, c0:c1]
    nmatrix = x2.nmask.matrix.copy()
    nmatrix[r0:r1, c0:c1] = False

    prov = {
        "d1_id": x1.provenance.get("id"),
        "d2_id": x2.provenance.get("id"),
        "cell": (ci, cj),
    }
    prov.update({k: v for k, v in x2.provenance.items() if k.startswith("sigma")})
    return AugmentedSample(
        image=Image(out_px),
        label=label,
        source=source,
        nmask=NeighborhoodMask(matrix=nmatrix, radius=x2.nmask.radius, centers=x2.nmask.centers),
        score=x2.score,
        provenance=prov,
    )


def augment_teacher(
    x: Sample,
    bank: NeighborhoodBank,
    cfg: MixConfig,
    rng: np.random.Generator = None,
    radius: int = None,
    use_pnmxp: bool = True,
) -> AugmentedSample:
    """Teacher-side augmentation: neighborhood mixup only, labels untouched."""
    if x.split != SPLIT_D1 or x.mask is None:
        raise ConfigError(f"teacher augmentation needs a pixel-labeled sample, got {x.id}")
    R = bank.radius if radius is None else radius
    a = as_gt_augmented(x, R)
    if use_pnmxp:
        if rng is None:
            rng = cfg.make_rng()
        sigma = draw_sigma(cfg, rng)
        a.image = pnmxp(x.image, a.nmask, bank, cfg, rng=rng, sigma=sigma,
                        exclude_source_id=x.id)
        a.provenance["sigma"] = sigma
    return a


def augment_student(
    x2: Sample,
    x1: Sample,
    bank: NeighborhoodBank,
    cfg: MixConfig,
    rng: np.random.Generator = None,
    use_pnmxp: bool = True,
    use_pvrmxp: bool = True,
) -> AugmentedSample:
    """Student-side augmentation: neighborhood mixup on both inputs, then
    nine-grid mixup, in that order."""
    if x2.pseudo is None:
        raise ConfigError(f"D2 sample {x2.id} has no pseudo-label")
    if rng is None:
        rng = cfg.make_rng()
    R = bank.radius
    a2 = as_pseudo_augmented(x2, R)
    if use_pnmxp:
        sigma2 = draw_sigma(cfg, rng)
        a2.image = pnmxp(x2.image, a2.nmask, bank, cfg, rng=rng, sigma=sigma2,
                         exclude_source_id=x2.id)
        a2.provenance["sigma2"] = sigma2
    if not use_pvrmxp:
        return a2

    a1 = as_gt_augmented(x1, R)
    if use_pnmxp:
        sigma1 = draw_sigma(cfg, rng)
        a1.image = pnmxp(x1.image, a1.nmask, bank, cfg, rng=rng, sigma=sigma1,
                         exclude_source_id=x1.id)
        a1.provenance["sigma1"] = sigma1
    return pvrmxp(a1, a2, cfg, rng=rng)
