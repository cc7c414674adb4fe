"""Global ranking: candidate fundamental matrices from top 2keypoint matches,
per-match support counts, and fusion with the local scores into the final
probability ranking.

Counting support is the pipeline's hot loop (up to ~50M Sampson evaluations
per image pair); it streams each candidate matrix against preassembled
homogeneous coordinate blocks with no per-evaluation allocation.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from typing import NamedTuple

import numpy as np

from .dtree import ModelSchemaError, TreeModel, predict_proba_many
from .features import FeatureSet, PutativeMatch
from .geometry import DegenerateConfiguration, FundamentalMatrix, f_from_two_2kp, hom
from .twokeypoint import TwoKeypointMatch

SCHEMA_KPMD = ("sfm", "d_r", "t_k")

logger = logging.getLogger(__name__)


class KpmdVector(NamedTuple):
    """Fused per-match descriptor; absent scores use the neutral fills
    (sfm -> 0, d_r -> 1, t_k -> 0)."""

    sfm: float
    d_r: float
    t_k: float


def generate_candidate_fs(
    top: list[TwoKeypointMatch],
    feats1: FeatureSet,
    feats2: FeatureSet,
    offset_scale: float = 5.0,
) -> list[FundamentalMatrix]:
    """One rough fundamental matrix per unordered pair of top 2keypoint
    matches; pairs sharing a feature index or otherwise degenerate are
    skipped (at most k(k-1)/2 matrices come back)."""
    out: list[FundamentalMatrix] = []
    skipped = 0
    for i in range(len(top)):
        for j in range(i + 1, len(top)):
            try:
                out.append(f_from_two_2kp(top[i], top[j], feats1, feats2, offset_scale))
            except DegenerateConfiguration:
                skipped += 1
    logger.debug("candidate matrices: %d generated, %d degenerate pairs skipped",
                 len(out), skipped)
    return out


def match_coordinates(
    matches: list[PutativeMatch], feats1: FeatureSet, feats2: FeatureSet
) -> tuple[np.ndarray, np.ndarray]:
    """Homogeneous pixel coordinates (n,3)+(n,3) for a match list."""
    i1 = np.array([m.i1 for m in matches], dtype=int)
    i2 = np.array([m.i2 for m in matches], dtype=int)
    return hom(feats1.positions[i1]), hom(feats2.positions[i2])


def _count_block(x1h: np.ndarray, x2h: np.ndarray, fs: np.ndarray,
                 tau: float) -> np.ndarray:
    """Counts for one slice of matches against every matrix.

    The working set per matrix is a handful of n-vectors, which stays
    cache-resident; buffers are reused across the matrix loop.
    """
    n = len(x1h)
    counts = np.zeros(n, dtype=np.int64)
    a = np.empty((n, 3))
    b = np.empty((n, 3))
    num = np.empty(n)
    den = np.empty(n)
    sq = np.empty(n)
    for f in fs:
        np.matmul(x1h, f.T, out=a)
        np.matmul(x2h, f, out=b)
        np.einsum("ij,ij->i", x2h, a, out=num)
        np.abs(num, out=num)
        np.multiply(a[:, 0], a[:, 0], out=den)
        np.multiply(a[:, 1], a[:, 1], out=sq)
        den += sq
        np.multiply(b[:, 0], b[:, 0], out=sq)
        den += sq
        np.multiply(b[:, 1], b[:, 1], out=sq)
        den += sq
        np.sqrt(den, out=den)
        den *= tau
        # support iff distance < tau; zero denominators never support
        counts += num < den
    return counts


def _count_chunk(args):
    x1h, x2h, fs, tau = args
    return _count_block(x1h, x2h, fs, tau)


def count_sfm(
    x1h: np.ndarray,
    x2h: np.ndarray,
    fs: list[FundamentalMatrix] | list[np.ndarray],
    tau: float = 2.0,
    workers: int = 1,
) -> np.ndarray:
    """Per-match count of candidate matrices whose Sampson distance to the
    match is below `tau` pixels.

    Parallelism chunks the match axis; each match's count is an independent
    integer, so the result is bit-identical for any worker count.
    """
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    mats = np.array([f.m if isinstance(f, FundamentalMatrix) else np.asarray(f, dtype=float)
                     for f in fs])
    n = len(x1h)
    if n == 0 or len(mats) == 0:
        return np.zeros(n, dtype=np.int64)
    if workers <= 1:
        return _count_block(x1h, x2h, mats, tau)
    bounds = np.linspace(0, n, workers + 1, dtype=int)
    jobs = [(x1h[lo:hi], x2h[lo:hi], mats, tau) for lo, hi in zip(bounds[:-1], bounds[1:])]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return np.concatenate(list(pool.map(_count_chunk, jobs)))


def best_supported_candidate(
    x1h: np.ndarray,
    x2h: np.ndarray,
    fs: list[FundamentalMatrix],
    tau: float = 2.0,
) -> FundamentalMatrix:
    """Ablation only: the single candidate with maximal support (first wins
    ties). Known to perform poorly as a final answer; kept for comparison."""
    if not fs:
        raise ValueError("no candidate matrices")
    from .geometry import sampson_distances

    best_i, best_support = 0, -1
    for i, f in enumerate(fs):
        support = int((sampson_distances(f.m, x1h, x2h) < tau).sum())
        if support > best_support:
            best_i, best_support = i, support
    return fs[best_i]


def build_kpmd(
    x: list[PutativeMatch],
    x_l: list[PutativeMatch],
    x_b: list[PutativeMatch],
    sfm_counts: np.ndarray,
) -> list[tuple[PutativeMatch, KpmdVector]]:
    """Merge the three sources into one match list with fused descriptors.

    `sfm_counts` aligns with `x`. A pair present in several sources merges
    all of its scores; the union never drops a pair. Output is sorted by
    index pair.
    """
    if len(sfm_counts) != len(x):
        raise ValueError("sfm_counts must align with x")
    merged: dict[tuple[int, int], PutativeMatch] = {}

    def slot(m: PutativeMatch) -> PutativeMatch:
        got = merged.get(m.key)
        if got is None:
            got = PutativeMatch(i1=m.i1, i2=m.i2, in_X=m.in_X, in_XL=m.in_XL, in_XB=m.in_XB)
            merged[m.key] = got
        return got

    for m, cnt in zip(x, sfm_counts):
        s = slot(m)
        s.in_X = True
        s.sfm = int(cnt)
    for m in x_l:
        s = slot(m)
        s.in_XL = True
        s.d_r = m.d_r
        s.m_k, s.m_k2 = m.m_k, m.m_k2
    for m in x_b:
        s = slot(m)
        s.in_XB = True
        s.t_k = m.t_k
        s.m_k = m.m_k if s.m_k is None else s.m_k
        s.m_k1 = m.m_k1
    out = []
    for key in sorted(merged):
        m = merged[key]
        vec = KpmdVector(
            sfm=float(m.sfm) if m.sfm is not None else 0.0,
            d_r=m.d_r if m.d_r is not None else 1.0,
            t_k=m.t_k if m.t_k is not None else 0.0,
        )
        out.append((m, vec))
    return out


def score_matches(
    pairs: list[tuple[PutativeMatch, KpmdVector]],
    model: TreeModel,
) -> list[PutativeMatch]:
    """Classifier probability per fused match, sorted descending (ties by
    index pair)."""
    if tuple(model.schema) != SCHEMA_KPMD:
        raise ModelSchemaError(f"model schema {model.schema} != {SCHEMA_KPMD}")
    if not pairs:
        return []
    vectors = np.array([list(v) for _, v in pairs])
    probs = predict_proba_many(model, vectors)
    for (m, _), p in zip(pairs, probs):
        m.prob = float(p)
    return sorted((m for m, _ in pairs), key=lambda m: (-m.prob, m.i1, m.i2))


def ranked_matches_csv(
    matches: list[PutativeMatch], feats1: FeatureSet, feats2: FeatureSet
) -> str:
    """Final ranked list as CSV."""
    lines = ["i1,i2,x1,y1,x2,y2,sfm,d_r,t_k,prob,sources"]
    for m in matches:
        f1, f2 = feats1[m.i1], feats2[m.i2]
        sfm = m.sfm if m.sfm is not None else 0
        d_r = m.d_r if m.d_r is not None else 1.0
        t_k = m.t_k if m.t_k is not None else 0.0
        lines.append(
            f"{m.i1},{m.i2},{f1.x:.17g},{f1.y:.17g},{f2.x:.17g},{f2.y:.17g},"
            f"{sfm},{d_r:.17g},{t_k:.17g},{m.prob:.17g},{m.sources}"
        )
    return "\n".join(lines) + "\n"
