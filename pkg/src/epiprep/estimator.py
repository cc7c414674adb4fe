"""Reference guided-RANSAC consumer and the two-orientation pipeline driver.

The sampler draws 7-point minimal samples with probability proportional to
the per-match priors, scores candidates by inlier count at a fixed Sampson
threshold, and refines the winner with a few rounds of inlier re-fitting.
A fixed iteration budget keeps runs reproducible; sequential-probability
stopping belongs to the downstream consumers this module stands in for.

The full driver runs the ranking stages once per orientation branch
(estimated roll and zero roll) and keeps the estimate with more inliers.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import clustering, global_rank, matching, twokeypoint
from .dtree import TreeModel
from .features import MODE_FIXED, FeatureSet, PutativeMatch
from .geometry import (
    DegenerateConfiguration,
    FundamentalMatrix,
    PointPair,
    eight_point,
    hom,
    sampson_distances,
    seven_point,
)

logger = logging.getLogger(__name__)

BRANCH_ALPHA = "alpha_exp"
BRANCH_ZERO = "zero"


class InsufficientData(Exception):
    """Too few matches to run the minimal solver."""


class MissingFixedExtraction(Exception):
    """A fixed-orientation feature set for the requested angle is unavailable."""

    def __init__(self, image_no: int, image_id: str, angle_rad: float):
        self.image_no = image_no
        self.image_id = image_id
        self.angle_rad = angle_rad
        super().__init__(f"image {image_id}: need fixed-orientation extraction at "
                         f"{angle_rad:.6f} rad")


@dataclass(frozen=True)
class RansacConfig:
    max_iters: int = 2000
    inlier_tau: float = 2.0
    seed: int = 0
    lo_rounds: int = 3


@dataclass
class EstimationResult:
    f: FundamentalMatrix
    inliers: list[int]
    support: int
    iterations: int
    branch: str
    seed: int = 0


def _weighted_sample(rng: np.random.Generator, weights: np.ndarray, k: int) -> np.ndarray:
    """k distinct indices by sequential draws proportional to `weights`.

    Exhausted weight mass falls back to uniform draws over the remainder.
    """
    w = np.asarray(weights, dtype=float).copy()
    w[~np.isfinite(w) | (w < 0.0)] = 0.0
    chosen = np.empty(k, dtype=int)
    for j in range(k):
        total = w.sum()
        if total <= 0.0:
            remaining = np.nonzero(np.isfinite(w))[0] if j == 0 else \
                np.setdiff1d(np.arange(len(w)), chosen[:j], assume_unique=False)
            pick = int(remaining[rng.integers(len(remaining))])
        else:
            r = rng.random() * total
            pick = int(np.searchsorted(np.cumsum(w), r, side="right"))
            pick = min(pick, len(w) - 1)
        chosen[j] = pick
        w[pick] = 0.0
    return chosen


def local_optimize(
    f: FundamentalMatrix,
    x1: np.ndarray,
    x2: np.ndarray,
    inlier_tau: float = 2.0,
    rounds: int = 3,
) -> FundamentalMatrix:
    """Refine by re-fitting on the inlier set while support does not drop.

    With fewer than 8 inliers the input comes back unchanged.
    """
    x1h, x2h = hom(x1), hom(x2)
    best = f
    best_support = int((sampson_distances(best.m, x1h, x2h) < inlier_tau).sum())
    for _ in range(rounds):
        mask = sampson_distances(best.m, x1h, x2h) < inlier_tau
        if mask.sum() < 8:
            return best
        pairs = [PointPair(a, b) for a, b in zip(x1[mask], x2[mask])]
        try:
            refit = eight_point(pairs)
        except DegenerateConfiguration:
            return best
        support = int((sampson_distances(refit.m, x1h, x2h) < inlier_tau).sum())
        if support < best_support:
            return best
        best, best_support = refit, support
    return best


def guided_ransac(
    x1: np.ndarray,
    x2: np.ndarray,
    probs: np.ndarray,
    cfg: RansacConfig,
    branch: str = BRANCH_ZERO,
) -> EstimationResult:
    """Probability-guided RANSAC with the 7-point solver and a fixed budget.

    Fully reproducible for a given seed. Returns the best-supported estimate
    after local optimization, however low its support (budget semantics: no
    failure signal other than low support).
    """
    x1 = np.asarray(x1, dtype=float).reshape(-1, 2)
    x2 = np.asarray(x2, dtype=float).reshape(-1, 2)
    probs = np.asarray(probs, dtype=float).reshape(-1)
    if len(x1) < 7:
        raise InsufficientData(f"need at least 7 matches, got {len(x1)}")
    if not (len(x1) == len(x2) == len(probs)):
        raise ValueError("matches and probabilities must align")

    rng = np.random.default_rng(cfg.seed)
    x1h, x2h = hom(x1), hom(x2)
    best_f: FundamentalMatrix | None = None
    best_support = -1
    for _ in range(cfg.max_iters):
        sample = _weighted_sample(rng, probs, 7)
        pairs = [PointPair(x1[i], x2[i]) for i in sample]
        try:
            candidates = seven_point(pairs)
        except DegenerateConfiguration:
            continue
        for cand in candidates:
            support = int((sampson_distances(cand.m, x1h, x2h) < cfg.inlier_tau).sum())
            if support > best_support:
                best_f, best_support = cand, support

    if best_f is None:
        # pathological budget/degeneracy: fall back to the most probable matches
        order = np.lexsort((np.arange(len(probs)), -probs))
        try:
            best_f = eight_point([PointPair(x1[i], x2[i]) for i in order[:8]])
        except DegenerateConfiguration as exc:
            raise InsufficientData("no valid minimal sample found") from exc

    best_f = local_optimize(best_f, x1, x2, cfg.inlier_tau, cfg.lo_rounds)
    mask = sampson_distances(best_f.m, x1h, x2h) < cfg.inlier_tau
    inliers = np.nonzero(mask)[0]
    return EstimationResult(
        f=best_f,
        inliers=[int(i) for i in inliers],
        support=int(mask.sum()),
        iterations=cfg.max_iters,
        branch=branch,
        seed=cfg.seed,
    )


# ---------------------------------------------------------------------------
# full pipeline
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PipelineConfig:
    ratio_max: float = 0.9
    stop_sim: float = 0.85
    k1: int = 5
    k2: float = 5.0
    k3: int = 1
    k_2kp: int = 100
    tau: float = 2.0
    inlier_tau: float = 2.0
    max_iters: int = 2000
    seed: int = 0
    offset_scale: float = 5.0
    kde_bandwidth_deg: float = 5.0
    branch_dedup_deg: float = 3.0
    always_two_branches: bool = False
    sfm_workers: int = 1


@dataclass
class Models:
    two_kp: TreeModel
    kpmd: TreeModel


@dataclass
class PairInputs:
    """Natural feature sets plus a provider of fixed-orientation re-extractions.

    `fixed_lookup(image_no, angle_rad)` returns the fixed-orientation set for
    image 1 or 2, or raises MissingFixedExtraction; feature indices must line
    up with the natural sets (same detections, re-described).
    """

    f1: FeatureSet
    f2: FeatureSet
    fixed_lookup: Callable[[int, float], FeatureSet]


@dataclass
class BranchRanking:
    branch: str
    alpha: float
    ranked: list[PutativeMatch]
    n_x: int
    n_xl: int
    n_xb: int
    top_2kp: list = None


@dataclass
class PipelineResult:
    estimate: EstimationResult
    branches: list[BranchRanking]
    roll: matching.RollEstimate | None

    @property
    def winning_ranking(self) -> BranchRanking:
        return next(b for b in self.branches if b.branch == self.estimate.branch)


@dataclass
class BranchArtifacts:
    """Intermediates of one branch up to (and including) 2keypoint matching."""

    branch: str
    alpha: float
    x: list[PutativeMatch]
    ids1: np.ndarray
    ids2: np.ndarray
    tk_matches: list
    top_2kp: list = None

def branch_artifacts(
    inputs: PairInputs, alpha: float, branch: str, cfg: PipelineConfig
) -> BranchArtifacts:
    """Cluster the fixed-orientation sets, expand matched clusters into {X},
    and build all 2keypoint matches with their descriptors."""
    fixed1 = inputs.fixed_lookup(1, 0.0)
    fixed2 = inputs.fixed_lookup(2, alpha)
    for nat, fixed, name in ((inputs.f1, fixed1, "1"), (inputs.f2, fixed2, "2")):
        if fixed.mode != MODE_FIXED:
            raise ValueError(f"image {name}: fixed-orientation set expected")
        if len(fixed) != len(nat):
            raise ValueError(
                f"image {name}: fixed set has {len(fixed)} features, natural has {len(nat)};"
                " fixed extraction must re-describe the same detections"
            )

    clusters1 = clustering.agglomerative_cluster(fixed1, cfg.stop_sim)
    clusters2 = clustering.agglomerative_cluster(fixed2, cfg.stop_sim)
    pairing = clustering.match_clusters(clusters1, clusters2)
    x = clustering.expand_to_matches(pairing, clusters1, clusters2)
    ids1 = clustering.cluster_assignment(clusters1, len(inputs.f1))
    ids2 = clustering.cluster_assignment(clusters2, len(inputs.f2))

    t1 = twokeypoint.gen_2keypoints(inputs.f1, ids1, cfg.k1, cfg.k2, cfg.k3)
    t2 = twokeypoint.gen_2keypoints(inputs.f2, ids2, cfg.k1, cfg.k2, cfg.k3)
    tk_matches = twokeypoint.match_2keypoints(x, t1, t2)
    for m in tk_matches:
        twokeypoint.compute_2kpmd(m, ids1, ids2)
    return BranchArtifacts(branch=branch, alpha=alpha, x=x, ids1=ids1, ids2=ids2,
                           tk_matches=tk_matches)


def branch_support(
    art: BranchArtifacts,
    inputs: PairInputs,
    model_2kp: TreeModel,
    cfg: PipelineConfig,
) -> tuple[np.ndarray, list[FundamentalMatrix]]:
    """Rank 2keypoint matches, generate candidate matrices from the top pairs,
    and count per-match support over {X}. The selected top list is stashed on
    the artifacts for export."""
    top = twokeypoint.rank_2kp(art.tk_matches, model_2kp, cfg.k_2kp)
    art.top_2kp = top
    candidate_fs = global_rank.generate_candidate_fs(
        top, inputs.f1, inputs.f2, cfg.offset_scale
    )
    x1h, x2h = global_rank.match_coordinates(art.x, inputs.f1, inputs.f2)
    sfm = global_rank.count_sfm(x1h, x2h, candidate_fs, cfg.tau, cfg.sfm_workers)
    return sfm, candidate_fs


def rank_branch(
    inputs: PairInputs,
    alpha: float,
    branch: str,
    x_l: list[PutativeMatch],
    x_b: list[PutativeMatch],
    models: Models,
    cfg: PipelineConfig,
) -> BranchRanking:
    """Run clustering, 2keypoint ranking, support counting, and score fusion
    for one orientation branch (image 1 upright, image 2 at `alpha`)."""
    art = branch_artifacts(inputs, alpha, branch, cfg)
    sfm, candidate_fs = branch_support(art, inputs, models.two_kp, cfg)
    fused = global_rank.build_kpmd(art.x, x_l, x_b, sfm)
    ranked = global_rank.score_matches(fused, models.kpmd)
    logger.debug(
        "branch %s: |X|=%d |XL|=%d |XB|=%d 2kp=%d candidates=%d",
        branch, len(art.x), len(x_l), len(x_b), len(art.tk_matches), len(candidate_fs),
    )
    return BranchRanking(
        branch=branch, alpha=alpha, ranked=ranked,
        n_x=len(art.x), n_xl=len(x_l), n_xb=len(x_b),
        top_2kp=art.top_2kp,
    )


def plan_branches(
    roll: matching.RollEstimate | None, cfg: PipelineConfig
) -> list[tuple[str, float]]:
    """Branch angles to run: estimated roll first, then zero; a near-zero
    roll estimate (within `branch_dedup_deg`) collapses to the zero branch."""
    if roll is None:
        return [(BRANCH_ZERO, 0.0)]
    coincide = abs(np.degrees(roll.alpha_exp)) < cfg.branch_dedup_deg
    if coincide and not cfg.always_two_branches:
        return [(BRANCH_ZERO, 0.0)]
    return [(BRANCH_ALPHA, roll.alpha_exp), (BRANCH_ZERO, 0.0)]


def estimate_from_ranking(
    ranking: BranchRanking,
    feats1: FeatureSet,
    feats2: FeatureSet,
    cfg: PipelineConfig,
) -> EstimationResult:
    x1 = feats1.positions[[m.i1 for m in ranking.ranked]]
    x2 = feats2.positions[[m.i2 for m in ranking.ranked]]
    probs = np.array([m.prob for m in ranking.ranked])
    rcfg = RansacConfig(max_iters=cfg.max_iters, inlier_tau=cfg.inlier_tau, seed=cfg.seed)
    return guided_ransac(x1, x2, probs, rcfg, branch=ranking.branch)


def run_pipeline(inputs: PairInputs, models: Models, cfg: PipelineConfig) -> PipelineResult:
    """Full two-branch run; returns the branch estimate with maximal support."""
    x_l = matching.lowe_matches(inputs.f1, inputs.f2, cfg.ratio_max)
    x_b = matching.blogs_matches(inputs.f1, inputs.f2)
    try:
        roll = matching.estimate_roll(x_l + x_b, inputs.f1, inputs.f2,
                                      cfg.kde_bandwidth_deg)
    except matching.RollUnavailable:
        roll = None

    rankings: list[BranchRanking] = []
    results: list[EstimationResult] = []
    for branch, alpha in plan_branches(roll, cfg):
        ranking = rank_branch(inputs, alpha, branch, x_l, x_b, models, cfg)
        rankings.append(ranking)
        results.append(estimate_from_ranking(ranking, inputs.f1, inputs.f2, cfg))

    best = max(results, key=lambda r: r.support)   # ties keep the earlier branch
    return PipelineResult(estimate=best, branches=rankings, roll=roll)
