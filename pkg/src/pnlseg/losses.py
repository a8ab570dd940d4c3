"""Training losses: neighborhood L1, pixel BCE, mirror consistency, and the
composite teacher/student objectives.

All functions take torch tensors for predictions so gradients flow; masks
and labels may be numpy arrays. The neighborhood loss is normalized by the
actual pixel count of the rasterized mask (not the nominal continuous disk
area), which keeps it in [0, 1] for border-clipped neighborhoods too.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .neighborhood import NeighborhoodMask

EPS = 1e-7  # probability clamp so log terms stay finite


@dataclass(frozen=True)
class LossWeights:
    """Convex weight between pixel supervision and the auxiliary terms."""

    lam: float

    def __post_init__(self):
        if not (0.0 <= self.lam <= 1.0):
            raise ValueError(f"lambda must be in [0,1], got {self.lam}")


@dataclass
class LossBreakdown:
    """Composite loss with its named components.

    ``l_pxl``/``l_cs``/``l_pn`` are the raw (unweighted) component values;
    ``term_*`` carry the weights so that total = term_pxl + term_cs + term_pn
    holds exactly.
    """

    total: torch.Tensor
    l_pxl: torch.Tensor
    l_cs: torch.Tensor
    l_pn: torch.Tensor
    term_pxl: torch.Tensor
    term_cs: torch.Tensor
    term_pn: torch.Tensor
    s: float = 1.0


def _as_tensor(x, like: torch.Tensor) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x.to(like.dtype)
    return torch.as_tensor(np.asarray(x), dtype=like.dtype, device=like.device)


def _mask_tensor(nmask) -> torch.Tensor:
    mat = nmask.matrix if isinstance(nmask, NeighborhoodMask) else np.asarray(nmask)
    # copy: mask arrays are frozen and torch.from_numpy needs writable memory
    return torch.from_numpy(np.array(mat, dtype=bool))


def loss_pn(pred: torch.Tensor, nmask) -> torch.Tensor:
    """L1 pull toward foreground inside the point-neighborhood.

    (1/|N|) * sum over N of |1 - pred|; gradients flow only through
    pixels inside N. Raises on an empty mask (normalization undefined).
    """
    mask = _mask_tensor(nmask)
    if mask.shape != pred.shape:
        raise ValueError(f"shape mismatch: pred {tuple(pred.shape)} vs mask {tuple(mask.shape)}")
    area = int(mask.sum())
    if area == 0:
        raise ValueError("empty neighborhood mask: loss undefined")
    return torch.abs(1.0 - pred[mask]).sum() / area


def loss_pxl(pred: torch.Tensor, label) -> torch.Tensor:
    """Binary cross-entropy averaged over all pixels; labels may be soft."""
    target = _as_tensor(label, pred)
    if target.shape != pred.shape:
        raise ValueError(f"shape mismatch: pred {tuple(pred.shape)} vs label {tuple(target.shape)}")
    p = pred.clamp(EPS, 1.0 - EPS)
    return -(target * torch.log(p) + (1.0 - target) * torch.log(1.0 - p)).mean()


def loss_cs(pred_a: torch.Tensor, pred_b: torch.Tensor) -> torch.Tensor:
    """Mean squared error between the two symmetric predictions."""
    if pred_a.shape != pred_b.shape:
        raise ValueError(f"shape mismatch: {tuple(pred_a.shape)} vs {tuple(pred_b.shape)}")
    return ((pred_a - pred_b) ** 2).mean()


def _flip(pred: torch.Tensor) -> torch.Tensor:
    """Horizontal flip of an H x W prediction (torch equivalent of mirror_map)."""
    return torch.flip(pred, dims=[-1])


def teacher_loss(model_out, labels, nmasks, w: LossWeights, include_pn: bool = True) -> LossBreakdown:
    """Composite supervision for the pixel-labeled branch.

    ``model_out`` is (prediction on x, prediction on mirror(x)); labels and
    neighborhood masks come in matching (plain, mirrored) pairs. The
    consistency term compares the mirrored first prediction against the
    second. ``include_pn=False`` removes the neighborhood term entirely
    (its gradient contribution becomes exactly zero).
    """
    pred, pred_m = model_out
    y, y_m = labels
    n, n_m = nmasks
    lam = w.lam

    l_pxl = loss_pxl(pred, y) + loss_pxl(pred_m, y_m)
    l_cs = loss_cs(_flip(pred), pred_m)
    if include_pn:
        l_pn = loss_pn(pred, n) + loss_pn(pred_m, n_m)
    else:
        l_pn = torch.zeros((), dtype=pred.dtype)

    term_pxl = lam * l_pxl
    term_cs = (1.0 - lam) * l_cs
    term_pn = (1.0 - lam) * l_pn
    total = term_pxl + term_cs + term_pn
    return LossBreakdown(total, l_pxl, l_cs, l_pn, term_pxl, term_cs, term_pn, s=1.0)


def student_loss(model_out, pseudo_labels, score: float, nmasks, w: LossWeights,
                 include_pn: bool = True) -> LossBreakdown:
    """Composite supervision for the pseudo-labeled branch.

    The pixel term is weighted by the pseudo-label quality score ``s``;
    the consistency and neighborhood terms are NOT scaled by s, so a
    suppressed pseudo-label leaves the neighborhood supervision intact.
    """
    if not (0.0 <= score <= 1.0):
        raise ValueError(f"score must be in [0,1], got {score}")
    pred, pred_m = model_out
    p, p_m = pseudo_labels
    n, n_m = nmasks
    lam = w.lam

    l_pxl = loss_pxl(pred, p) + loss_pxl(pred_m, p_m)
    l_cs = loss_cs(_flip(pred), pred_m)
    if include_pn:
        l_pn = loss_pn(pred, n) + loss_pn(pred_m, n_m)
    else:
        l_pn = torch.zeros((), dtype=pred.dtype)

    term_pxl = lam * score * l_pxl
    term_cs = (1.0 - lam) * l_cs
    term_pn = (1.0 - lam) * l_pn
    total = term_pxl + term_cs + term_pn
    return LossBreakdown(total, l_pxl, l_cs, l_pn, term_pxl, term_cs, term_pn, s=score)
