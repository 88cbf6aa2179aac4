"""Density-aware fusion of the classifier probability with token-alignment features.

    S_match = (alpha_mix·w_s + (1 − alpha_mix)·d_j)·S_cls + beta_loc·S_loc

On sentence pairs: w_s is the length ratio of the two sentences, d_j the share
of tokens that find a partner above a similarity threshold on the other side,
and S_loc the symmetrised mean best-match similarity. Each is a standalone
function so an alternative grounding can be dropped in.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .errors import ValidationError


@dataclass(frozen=True)
class ScoreFusionWeights:
    alpha_mix: float = 0.5
    beta_loc: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.alpha_mix <= 1.0:
            raise ValidationError(f"alpha_mix must lie in [0, 1], got {self.alpha_mix}")
        if not self.beta_loc >= 0.0:
            raise ValidationError(f"beta_loc must be non-negative, got {self.beta_loc}")


@dataclass(frozen=True)
class DensityFeatures:
    w_s: float
    d_j: float
    s_loc: float

    def __post_init__(self):
        if not 0.0 < self.w_s <= 1.0:
            raise ValidationError(f"w_s must lie in (0, 1], got {self.w_s}")
        if not 0.0 <= self.d_j <= 1.0:
            raise ValidationError(f"d_j must lie in [0, 1], got {self.d_j}")
        if not -1.0 <= self.s_loc <= 1.0:
            raise ValidationError(f"S_loc must lie in [-1, 1], got {self.s_loc}")


def _matrix(sim):
    m = sim.data if isinstance(sim, Tensor) else np.asarray(sim, dtype=float)
    if m.ndim != 2 or m.size == 0:
        raise ValidationError(f"similarity matrix must be non-empty 2-D, got shape {m.shape}")
    return m


def target_density(sim_matrix, threshold: float = 0.5) -> float:
    """Share of tokens (both sides) whose best match on the other side exceeds ``threshold``."""
    if not -1.0 < threshold < 1.0:
        raise ValidationError(f"alignment threshold must lie in (-1, 1), got {threshold}")
    m = _matrix(sim_matrix)
    la, lb = m.shape
    hits = int(np.count_nonzero(m.max(axis=1) > threshold)) + int(np.count_nonzero(m.max(axis=0) > threshold))
    return hits / (la + lb)


def area_weight(len_a: int, len_b: int) -> float:
    if len_a < 1 or len_b < 1:
        raise ValidationError("sentence lengths must be at least 1")
    return min(len_a, len_b) / max(len_a, len_b)


def location_score(sim_matrix) -> float:
    m = _matrix(sim_matrix)
    return 0.5 * (float(m.max(axis=1).mean()) + float(m.max(axis=0).mean()))


def density_features(sim_matrix, threshold: float = 0.5) -> DensityFeatures:
    m = _matrix(sim_matrix)
    return DensityFeatures(
        w_s=area_weight(*m.shape),
        d_j=target_density(m, threshold),
        s_loc=location_score(m),
    )


def fuse_match_score(s_cls: float, feats: DensityFeatures, w: ScoreFusionWeights) -> float:
    if not 0.0 <= s_cls <= 1.0:
        raise ValidationError(f"S_cls must lie in [0, 1], got {s_cls}")
    return (w.alpha_mix * feats.w_s + (1.0 - w.alpha_mix) * feats.d_j) * s_cls + w.beta_loc * feats.s_loc


def decide(s_match: float, decision_threshold: float) -> int:
    return 1 if s_match >= decision_threshold else 0


def calibrate_threshold(scores, labels) -> float:
    """Decision threshold maximising accuracy on (scores, labels).

    Only thresholds equal to an observed score (or just above the largest)
    can change a prediction, so trying those is exhaustive. Ties go to the
    lowest threshold.
    """
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=int)
    if s.size == 0 or s.shape != y.shape:
        raise ValidationError("calibration needs equally many scores and labels")
    cands = np.unique(s)
    order = np.argsort(s, kind="stable")
    s_sorted, y_sorted = s[order], y[order]
    # predictions for threshold t: 1 where score >= t
    # correct(t) = negatives below t + positives at or above t
    neg_below = np.concatenate([[0], np.cumsum(y_sorted == 0)])
    pos_total = int(y.sum())
    pos_below = np.concatenate([[0], np.cumsum(y_sorted == 1)])
    idx = np.searchsorted(s_sorted, cands, side="left")
    correct = neg_below[idx] + (pos_total - pos_below[idx])
    above_all = int(np.count_nonzero(y == 0))
    best = int(np.argmax(correct))
    if above_all > correct[best]:
        return float(np.nextafter(cands[-1], np.inf))
    return float(cands[best])
