"""Pseudo-label scoring against point-neighborhoods.

A pseudo-label that recalls the neighborhood as foreground gets a high
score; the score weights its pixel-supervision loss so low-quality
pseudo-labels are suppressed without touching the neighborhood loss.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError
from .neighborhood import NeighborhoodMask

VARIANT_COUNT = "count"
VARIANT_PROB_SUM = "prob_sum"


@dataclass
class PseudoLabel:
    """Teacher-produced per-pixel foreground probabilities plus quality score."""

    probs: np.ndarray          # H x W float in [0, 1]
    produced_at: int = 0       # outer epoch the teacher minted this at
    score: Optional[float] = None


def psm_score(p, nmask: NeighborhoodMask, variant: str = VARIANT_COUNT) -> float:
    """Fraction of the neighborhood the pseudo-label recalls as foreground.

    A neighborhood pixel counts as recalled iff its probability is
    strictly greater than 0.5. The default counts pixels; the
    ``prob_sum`` variant sums the recalled probabilities instead (an
    alternative reading of the same recipe, kept for comparison).
    """
    probs = p.probs if isinstance(p, PseudoLabel) else np.asarray(p)
    if probs.shape != nmask.shape:
        raise ValueError(f"shape mismatch: {probs.shape} vs {nmask.shape}")
    area = nmask.area
    if area == 0:
        raise ValueError("empty neighborhood mask: score undefined")
    inside = probs[nmask.matrix]
    recalled = inside > 0.5
    if variant == VARIANT_COUNT:
        return float(int(recalled.sum()) / area)
    if variant == VARIANT_PROB_SUM:
        return float(inside[recalled].sum() / area)
    raise ConfigError(f"unknown psm variant {variant!r}")


def score_batch(pseudos, nmasks, variant: str = VARIANT_COUNT, threshold: float = 0.5):
    """Elementwise scores plus batch summary statistics.

    Returns (scores, summary) where summary holds mean, min and the
    fraction of scores strictly below ``threshold``; all three are None
    for an empty batch.
    """
    if len(pseudos) != len(nmasks):
        raise ValueError(f"length mismatch: {len(pseudos)} pseudo-labels, {len(nmasks)} masks")
    scores = [psm_score(p, m, variant) for p, m in zip(pseudos, nmasks)]
    if not scores:
        summary = {"mean": None, "min": None, "frac_below": None, "count": 0}
    else:
        arr = np.asarray(scores)
        summary = {
            "mean": float(arr.mean()),
            "min": float(arr.min()),
            "frac_below": float((arr < threshold).mean()),
            "count": len(scores),
        }
    return scores, summary


def apply_threshold(score: float, tau: float) -> float:
    """Hard suppression: zero out scores below tau (tau <= 0 disables)."""
    if tau > 0 and score < tau:
        return 0.0
    return score
