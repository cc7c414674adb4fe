"""2keypoints: pairs of spatially close features, matched across images and
ranked by a classifier.

A 2keypoint (p, n) records the neighbor's distance in units of p's scale and
the angle of p->n relative to p's orientation, making the six-field match
descriptor scale and rotation invariant. Neighbors come from three rules:
the K1 spatially nearest features, everything within K2 * scale(p) pixels,
and the K3 nearest features sharing p's cluster.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dtree import TreeModel, predict_proba_many, ModelSchemaError
from .features import FeatureSet, PutativeMatch
from .matching import wrap_angle

SCHEMA_2KPMD = ("N1", "N2", "dist_r", "angle_d", "cluster_t", "min_d")

METHOD_K_NEAREST = "k_nearest"
METHOD_RADIUS = "radius"
METHOD_SAME_CLUSTER = "same_cluster"


@dataclass(frozen=True)
class TwoKeypoint:
    p: int            # main feature index
    n: int            # neighbor feature index
    d: float          # |p - n| / scale(p), > 0
    theta: float      # angle of p->n relative to orientation(p), in (-pi, pi]
    method: str


@dataclass
class TwoKpDescriptor:
    n1: float
    n2: float
    dist_r: float     # min(d1/d2, d2/d1), in (0, 1]
    angle_d: float    # circular |theta1 - theta2|, in [0, pi]
    cluster_t: float  # 1 iff p and n share a cluster in both images
    min_d: float      # min(d1, d2)

    def vector(self) -> np.ndarray:
        return np.array([self.n1, self.n2, self.dist_r, self.angle_d,
                         self.cluster_t, self.min_d])


@dataclass
class TwoKeypointMatch:
    tk1: TwoKeypoint
    tk2: TwoKeypoint
    descriptor: TwoKpDescriptor | None = None
    prob: float | None = None

    @property
    def p1(self) -> int:
        return self.tk1.p

    @property
    def n1(self) -> int:
        return self.tk1.n

    @property
    def p2(self) -> int:
        return self.tk2.p

    @property
    def n2(self) -> int:
        return self.tk2.n

    @property
    def index_key(self) -> tuple[int, int, int, int]:
        return (self.p1, self.n1, self.p2, self.n2)


def gen_2keypoints(
    fset: FeatureSet,
    cluster_ids: np.ndarray,
    k1: int = 5,
    k2: float = 5.0,
    k3: int = 1,
) -> list[TwoKeypoint]:
    """All (p, n) pairs from the three neighbor rules, deduplicated.

    (p, n) is ordered: p is the main feature whose scale normalizes the
    distance. Coincident features (zero pixel distance) never qualify.
    Features without any qualifying neighbor simply contribute nothing.
    """
    n_feat = len(fset)
    pos = fset.positions
    out: dict[tuple[int, int], TwoKeypoint] = {}
    if n_feat < 2:
        return []
    for p in range(n_feat):
        delta = pos - pos[p]
        dist = np.hypot(delta[:, 0], delta[:, 1])
        eligible = np.nonzero((dist > 0.0) & (np.arange(n_feat) != p))[0]
        if len(eligible) == 0:
            continue
        order = eligible[np.lexsort((eligible, dist[eligible]))]

        picks: list[tuple[int, str]] = [(int(n), METHOD_K_NEAREST) for n in order[:k1]]
        radius = k2 * fset[p].scale
        picks += [(int(n), METHOD_RADIUS) for n in order if dist[n] <= radius]
        same = [n for n in order if cluster_ids[n] == cluster_ids[p]]
        picks += [(int(n), METHOD_SAME_CLUSTER) for n in same[:k3]]

        scale = fset[p].scale
        alpha = fset[p].orientation
        for n, method in picks:
            key = (p, n)
            if key in out:
                continue
            out[key] = TwoKeypoint(
                p=p,
                n=n,
                d=float(dist[n] / scale),
                theta=wrap_angle(math.atan2(delta[n, 1], delta[n, 0]) - alpha),
                method=method,
            )
    return [out[k] for k in sorted(out)]


def match_2keypoints(
    x_pairs: list[PutativeMatch] | set[tuple[int, int]],
    t1: list[TwoKeypoint],
    t2: list[TwoKeypoint],
) -> list[TwoKeypointMatch]:
    """All (tk1, tk2) whose main and neighbor features are both putative
    matches; the descriptor's N1/N2 ambiguity counts are filled in."""
    keys = {m.key for m in x_pairs} if x_pairs and isinstance(next(iter(x_pairs)), PutativeMatch) \
        else set(x_pairs)
    partners: dict[int, list[int]] = {}
    for i1, i2 in sorted(keys):
        partners.setdefault(i1, []).append(i2)
    t2_by_key = {(tk.p, tk.n): tk for tk in t2}

    out: list[TwoKeypointMatch] = []
    for tk1 in t1:
        for p2 in partners.get(tk1.p, ()):
            for n2 in partners.get(tk1.n, ()):
                tk2 = t2_by_key.get((p2, n2))
                if tk2 is not None:
                    out.append(TwoKeypointMatch(tk1=tk1, tk2=tk2))

    count1: dict[tuple[int, int], int] = {}
    count2: dict[tuple[int, int], int] = {}
    for m in out:
        count1[(m.p1, m.n1)] = count1.get((m.p1, m.n1), 0) + 1
        count2[(m.p2, m.n2)] = count2.get((m.p2, m.n2), 0) + 1
    for m in out:
        m.descriptor = TwoKpDescriptor(
            n1=float(count1[(m.p1, m.n1)]),
            n2=float(count2[(m.p2, m.n2)]),
            dist_r=0.0, angle_d=0.0, cluster_t=0.0, min_d=0.0,
        )
    return out


def compute_2kpmd(
    match: TwoKeypointMatch,
    cluster_ids1: np.ndarray,
    cluster_ids2: np.ndarray,
) -> TwoKpDescriptor:
    """Fill the geometric fields of the match descriptor (N1/N2 must already
    be counted by match_2keypoints)."""
    d1, d2 = match.tk1.d, match.tk2.d
    desc = match.descriptor
    desc.dist_r = min(d1 / d2, d2 / d1)
    desc.angle_d = abs(wrap_angle(match.tk1.theta - match.tk2.theta))
    same1 = cluster_ids1[match.p1] == cluster_ids1[match.n1]
    same2 = cluster_ids2[match.p2] == cluster_ids2[match.n2]
    desc.cluster_t = 1.0 if (same1 and same2) else 0.0
    desc.min_d = min(d1, d2)
    return desc


def rank_2kp(
    matches: list[TwoKeypointMatch],
    model: TreeModel,
    k_2kp: int = 100,
) -> list[TwoKeypointMatch]:
    """Score every match with the classifier and keep the top `k_2kp`.

    Sorted by descending probability; ties resolve by ascending N1+N2, then
    by the (p1, n1, p2, n2) index quadruple.
    """
    if tuple(model.schema) != SCHEMA_2KPMD:
        raise ModelSchemaError(f"model schema {model.schema} != {SCHEMA_2KPMD}")
    if not matches:
        return []
    vectors = np.array([m.descriptor.vector() for m in matches])
    probs = predict_proba_many(model, vectors)
    for m, p in zip(matches, probs):
        m.prob = float(p)
    ranked = sorted(
        matches,
        key=lambda m: (-m.prob, m.descriptor.n1 + m.descriptor.n2, m.index_key),
    )
    return ranked[: min(k_2kp, len(ranked))]


def ranked_2kp_csv(matches: list[TwoKeypointMatch]) -> str:
    """CSV export of ranked matches."""
    lines = ["p1,n1,p2,n2,N1,N2,dist_r,angle_d,cluster_t,min_d,prob"]
    for m in matches:
        d = m.descriptor
        lines.append(
            f"{m.p1},{m.n1},{m.p2},{m.n2},{d.n1:.0f},{d.n2:.0f},"
            f"{d.dist_r:.17g},{d.angle_d:.17g},{d.cluster_t:.0f},{d.min_d:.17g},"
            f"{m.prob:.17g}"
        )
    return "\n".join(lines) + "\n"
