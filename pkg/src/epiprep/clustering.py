"""Agglomerative descriptor clustering and bidirectional cluster matching.

Clustering runs on fixed-orientation feature sets only: with per-feature
orientations, rotated variants of the same pattern (e.g. the four corners of
a window) collapse into one cluster and later vote for systematically wrong
matches. Matched cluster pairs expand into the putative set {X} as the
Cartesian product of their members.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import MODE_FIXED, FeatureSet, PutativeMatch


class ModeError(Exception):
    """Clustering requires a fixed-orientation feature set."""


@dataclass
class Cluster:
    members: list[int]                 # feature indices, ascending
    representative: np.ndarray         # per-coordinate median of members, unit norm


@dataclass(frozen=True)
class ClusterPairing:
    """Closest-cluster assignments from both directions, deduplicated.

    Each entry is (cluster index in image 1, cluster index in image 2,
    direction) with direction "1to2" or "2to1"; a pair found both ways is
    kept once with direction "1to2".
    """

    pairs: tuple[tuple[int, int, str], ...]

    def index_pairs(self) -> list[tuple[int, int]]:
        return [(a, b) for a, b, _ in self.pairs]


def _representative(descs: np.ndarray) -> np.ndarray:
    rep = np.median(descs, axis=0)
    norm = np.linalg.norm(rep)
    if norm < 1e-12:
        # antipodal members can cancel; fall back to the mean, then to a member
        rep = descs.mean(axis=0)
        norm = np.linalg.norm(rep)
        if norm < 1e-12:
            return descs[0].copy()
    return rep / norm


def agglomerative_cluster(fset: FeatureSet, stop_sim: float = 0.85) -> list[Cluster]:
    """Merge clusters greedily while the best representative similarity
    reaches `stop_sim`.

    Each merge joins the pair of clusters whose representatives have maximal
    similarity (ties broken by the smallest pair of minimum member indices);
    the merged representative is the per-coordinate median of all member
    descriptors, renormalized. Features that never merge stay singletons.
    Output is sorted by minimum member index.
    """
    if fset.mode != MODE_FIXED:
        raise ModeError("clustering needs fixed-orientation descriptors")
    n = len(fset)
    if n == 0:
        return []
    members: list[list[int] | None] = [[i] for i in range(n)]
    reps = fset.descriptors.copy()
    sim = reps @ reps.T
    np.fill_diagonal(sim, -np.inf)

    alive = n
    while alive > 1:
        best = sim.max()
        if best < stop_sim:
            break
        ties = np.argwhere(sim == best)
        pick = min(
            ((min(members[a][0], members[b][0]), max(members[a][0], members[b][0]), a, b)
             for a, b in ties if a < b),
        )
        a, b = pick[2], pick[3]
        members[a] = sorted(members[a] + members[b])
        members[b] = None
        reps[a] = _representative(fset.descriptors[members[a]])
        row = reps @ reps[a]
        dead = np.array([m is None for m in members])
        row[dead] = -np.inf
        row[a] = -np.inf
        sim[a, :] = row
        sim[:, a] = row
        sim[b, :] = -np.inf
        sim[:, b] = -np.inf
        alive -= 1

    clusters = [
        Cluster(members=m, representative=reps[i]) for i, m in enumerate(members) if m is not None
    ]
    clusters.sort(key=lambda c: c.members[0])
    return clusters


def cluster_assignment(clusters: list[Cluster], n_features: int) -> np.ndarray:
    """Feature index -> cluster index array (clusters partition the features)."""
    out = np.full(n_features, -1, dtype=int)
    for ci, c in enumerate(clusters):
        for m in c.members:
            out[m] = ci
    if (out < 0).any():
        raise ValueError("clusters do not cover all features")
    return out


def match_clusters(c1: list[Cluster], c2: list[Cluster]) -> ClusterPairing:
    """Pair every cluster with its most similar cluster on the other side.

    No ratio test: over-segmented clusters must still reach their counterpart,
    so the closest cluster is always taken, in both directions. Ties go to the
    lower cluster index.
    """
    if not c1 or not c2:
        raise ValueError("cluster lists must be non-empty")
    r1 = np.array([c.representative for c in c1])
    r2 = np.array([c.representative for c in c2])
    sim = r1 @ r2.T
    fwd = sim.argmax(axis=1)
    bwd = sim.argmax(axis=0)
    pairs: list[tuple[int, int, str]] = [(i, int(fwd[i]), "1to2") for i in range(len(c1))]
    seen = {(a, b) for a, b, _ in pairs}
    for j in range(len(c2)):
        key = (int(bwd[j]), j)
        if key not in seen:
            pairs.append((key[0], key[1], "2to1"))
            seen.add(key)
    pairs.sort(key=lambda p: (p[0], p[1]))
    return ClusterPairing(pairs=tuple(pairs))


def expand_to_matches(
    pairing: ClusterPairing, c1: list[Cluster], c2: list[Cluster]
) -> list[PutativeMatch]:
    """Putative set {X}: the Cartesian product of members for every matched
    cluster pair, deduplicated by index pair. No scores are attached here."""
    keys: set[tuple[int, int]] = set()
    for a, b in pairing.index_pairs():
        for i1 in c1[a].members:
            for i2 in c2[b].members:
                keys.add((i1, i2))
    return [PutativeMatch(i1=i1, i2=i2, in_X=True) for i1, i2 in sorted(keys)]
