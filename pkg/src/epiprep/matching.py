"""Baseline putative-match generators and the relative roll estimator.

Two standard correspondence sets are produced from natural-orientation
features: the ratio-test list (one candidate per image-1 feature, scored by
the angular distance ratio d_r) and the mutual-nearest-neighbor list
(scored by the similarity weight t_k). Orientation differences of the
pooled matches feed a circular kernel density whose peak estimates the
relative roll between the images.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .features import FeatureSet, PutativeMatch


class RollUnavailable(Exception):
    """No putative matches to estimate the roll angle from."""


@dataclass(frozen=True)
class RollEstimate:
    """Peak of the circular density of per-match orientation differences."""

    alpha_exp: float      # radians in (-pi, pi]
    peak: float           # density value at the peak (per radian)
    samples: int


def wrap_angle(a):
    """Wrap angle(s) to (-pi, pi]."""
    w = -((-np.asarray(a) + np.pi) % (2.0 * np.pi) - np.pi)
    return float(w) if np.ndim(a) == 0 else w


def distance_ratio(m_k: float, m_k2: float) -> float:
    """Angular distance ratio acos(m_k)/acos(m_k2); low means distinctive.

    Requires m_k2 <= m_k. When both similarities are perfect the ratio is
    defined as 1 (no distinctiveness).
    """
    a_best = math.acos(min(1.0, max(-1.0, m_k)))
    a_second = math.acos(min(1.0, max(-1.0, m_k2)))
    if a_second == 0.0:
        return 1.0
    return a_best / a_second


def similarity_weight(m_k: float, m_k1: float, m_k2: float) -> float:
    """Confidence mixing absolute similarity with two-sided distinctiveness:
    (1-e^-m_k)^2 (1-m_k1/m_k)(1-m_k2/m_k).

    Non-positive best similarity yields 0. m_k is clamped to [1e-6, 1] and
    the runner-up similarities are floored at 0 so the weight stays in [0, 1).
    """
    if m_k <= 0.0:
        return 0.0
    m_k = min(max(m_k, 1e-6), 1.0)
    m_k1 = min(max(m_k1, 0.0), m_k)
    m_k2 = min(max(m_k2, 0.0), m_k)
    return (1.0 - math.exp(-m_k)) ** 2 * (1.0 - m_k1 / m_k) * (1.0 - m_k2 / m_k)


def _top2_rows(sim: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-row best index (ties -> lower index), best and second-best value."""
    best = sim.argmax(axis=1)
    rows = np.arange(sim.shape[0])
    m_k = sim[rows, best]
    if sim.shape[1] == 1:
        return best, m_k, np.full(len(rows), -1.0)
    masked = sim.copy()
    masked[rows, best] = -np.inf
    return best, m_k, masked.max(axis=1)


def lowe_matches(f1: FeatureSet, f2: FeatureSet, ratio_max: float = 0.9) -> list[PutativeMatch]:
    """Ratio-test matches: each image-1 feature against its nearest neighbor.

    Candidates with d_r above `ratio_max` are rejected; survivors carry
    m_k, m_k2 and d_r and are flagged as ratio-test matches.
    """
    if len(f1) == 0 or len(f2) == 0:
        raise ValueError("feature sets must be non-empty")
    sim = f1.descriptors @ f2.descriptors.T
    best, m_k, m_k2 = _top2_rows(sim)
    out = []
    for i1 in range(len(f1)):
        d_r = distance_ratio(float(np.clip(m_k[i1], -1, 1)), float(np.clip(m_k2[i1], -1, 1)))
        if d_r > ratio_max:
            continue
        out.append(
            PutativeMatch(
                i1=i1,
                i2=int(best[i1]),
                m_k=float(np.clip(m_k[i1], -1, 1)),
                m_k2=float(np.clip(m_k2[i1], -1, 1)),
                d_r=d_r,
                in_XL=True,
            )
        )
    return out


def blogs_matches(f1: FeatureSet, f2: FeatureSet) -> list[PutativeMatch]:
    """Mutual-nearest-neighbor matches, each scored by the similarity weight.

    (u, v) is kept iff v is u's best match in image 2 and u is v's best match
    in image 1. m_k1 is the runner-up similarity on the image-1 side, m_k2 on
    the image-2 side.
    """
    if len(f1) == 0 or len(f2) == 0:
        raise ValueError("feature sets must be non-empty")
    sim = f1.descriptors @ f2.descriptors.T
    best12, m_k, m_k2 = _top2_rows(sim)
    best21, _, m_k1 = _top2_rows(sim.T)
    out = []
    for i1 in range(len(f1)):
        i2 = int(best12[i1])
        if int(best21[i2]) != i1:
            continue
        mk = float(np.clip(m_k[i1], -1, 1))
        mk1 = float(np.clip(m_k1[i2], -1, 1))
        mk2 = float(np.clip(m_k2[i1], -1, 1))
        out.append(
            PutativeMatch(
                i1=i1, i2=i2, m_k=mk, m_k1=mk1, m_k2=mk2,
                t_k=similarity_weight(mk, mk1, mk2), in_XB=True,
            )
        )
    return out


def estimate_roll(
    matches: list[PutativeMatch],
    f1: FeatureSet,
    f2: FeatureSet,
    bandwidth_deg: float = 5.0,
    grid_step_deg: float = 1.0,
) -> RollEstimate:
    """Peak of the wrapped-Gaussian KDE over per-match orientation differences.

    Matches are deduplicated by index pair and weighted uniformly. Ties on the
    evaluation grid resolve to the smallest absolute angle.
    """
    keys = sorted({m.key for m in matches})
    if not keys:
        raise RollUnavailable("no putative matches")
    deltas = np.array(
        [wrap_angle(f2[i2].orientation - f1[i1].orientation) for i1, i2 in keys]
    )
    sigma = math.radians(bandwidth_deg)
    step = math.radians(grid_step_deg)
    n_grid = int(round(2.0 * math.pi / step))
    grid = -math.pi + step * np.arange(1, n_grid + 1)   # (-pi, pi]
    diff = wrap_angle(grid[:, None] - deltas[None, :])
    density = np.exp(-0.5 * (diff / sigma) ** 2).sum(axis=1)
    density /= len(deltas) * sigma * math.sqrt(2.0 * math.pi)
    peak_val = density.max()
    ties = np.nonzero(density == peak_val)[0]
    alpha = min((grid[t] for t in ties), key=lambda a: (abs(a), a))
    return RollEstimate(alpha_exp=float(wrap_angle(alpha)), peak=float(peak_val),
                        samples=len(deltas))
