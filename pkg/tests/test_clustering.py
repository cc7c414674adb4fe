import numpy as np
import pytest

from epiprep.clustering import (
    Cluster,
    ModeError,
    agglomerative_cluster,
    cluster_assignment,
    expand_to_matches,
    match_clusters,
)
from epiprep.features import Feature, FeatureSet

from test_features import unit


def fixed_set(descs, angle=0.0):
    feats = [
        Feature(x=float(i), y=0.0, scale=1.0, orientation=angle, descriptor=unit(d))
        for i, d in enumerate(descs)
    ]
    return FeatureSet(image_id="f", mode="fixed", features=feats, fixed_angle=angle)


def orthogonal_descriptors(k, dim):
    eye = np.eye(dim)
    return [eye[i] for i in range(k)]


def noisy_copies(rng, proto, k, sigma):
    return [unit(proto + rng.normal(scale=sigma, size=len(proto))) for _ in range(k)]


class TestAgglomerative:
    def test_requires_fixed_mode(self, rng):
        feats = [Feature(0, 0, 1.0, 0.0, unit(rng.normal(size=8)))]
        nat = FeatureSet(image_id="n", mode="natural", features=feats)
        with pytest.raises(ModeError):
            agglomerative_cluster(nat)

    def test_all_dissimilar_stay_singletons(self):
        fset = fixed_set(orthogonal_descriptors(6, 8))
        clusters = agglomerative_cluster(fset)
        assert [c.members for c in clusters] == [[i] for i in range(6)]

    def test_exact_copies_merge(self, rng):
        proto = unit(rng.normal(size=8))
        fset = fixed_set([proto] * 5)
        clusters = agglomerative_cluster(fset)
        assert len(clusters) == 1
        assert clusters[0].members == [0, 1, 2, 3, 4]

    def test_recovers_planted_groups(self, rng):
        protos = orthogonal_descriptors(3, 16)
        descs, truth = [], []
        for g, p in enumerate(protos):
            for d in noisy_copies(rng, p, 10, 0.02):
                descs.append(d)
                truth.append(g)
        order = rng.permutation(len(descs))
        fset = fixed_set([descs[i] for i in order])
        clusters = agglomerative_cluster(fset, stop_sim=0.85)
        got = {tuple(c.members) for c in clusters}
        want = {
            tuple(sorted(int(np.nonzero(order == i)[0][0]) for i in range(len(descs))
                         if truth[i] == g))
            for g in range(3)
        }
        assert got == want

    def test_agrees_with_threshold_component_oracle(self, rng):
        # well separated noise regime: merging by representatives reaches the
        # same partition as connected components of the >= stop_sim graph
        protos = orthogonal_descriptors(4, 32)
        descs = []
        for p in protos:
            descs.extend(noisy_copies(rng, p, 6, 0.01))
        fset = fixed_set(descs)
        clusters = agglomerative_cluster(fset, stop_sim=0.85)

        n = len(descs)
        sim = fset.descriptors @ fset.descriptors.T
        parent = list(range(n))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for i in range(n):
            for j in range(i + 1, n):
                if sim[i, j] >= 0.85:
                    parent[find(i)] = find(j)
        comps = {}
        for i in range(n):
            comps.setdefault(find(i), []).append(i)
        assert {tuple(c.members) for c in clusters} == {tuple(sorted(v)) for v in comps.values()}

    def test_partition_property(self, rng):
        fset = fixed_set([rng.normal(size=8) for _ in range(40)])
        clusters = agglomerative_cluster(fset, stop_sim=0.5)
        seen = sorted(m for c in clusters for m in c.members)
        assert seen == list(range(40))
        assign = cluster_assignment(clusters, 40)
        assert (assign >= 0).all()

    def test_deterministic(self, rng):
        descs = [rng.normal(size=8) for _ in range(30)]
        a = agglomerative_cluster(fixed_set(descs), stop_sim=0.6)
        b = agglomerative_cluster(fixed_set(descs), stop_sim=0.6)
        assert [c.members for c in a] == [c.members for c in b]

    def test_representative_is_median(self, rng):
        proto = unit(rng.normal(size=8))
        copies = noisy_copies(rng, proto, 4, 0.01)
        fset = fixed_set(copies)
        clusters = agglomerative_cluster(fset)
        assert len(clusters) == 1
        med = np.median(fset.descriptors, axis=0)
        np.testing.assert_allclose(
            clusters[0].representative, med / np.linalg.norm(med), atol=1e-12
        )


class TestMatchClusters:
    def test_identity_pairing(self, rng):
        descs = orthogonal_descriptors(5, 8)
        c1 = agglomerative_cluster(fixed_set(descs))
        c2 = agglomerative_cluster(fixed_set(descs))
        pairing = match_clusters(c1, c2)
        assert pairing.index_pairs() == [(i, i) for i in range(5)]

    def test_over_segmentation_both_reach_target(self, rng):
        # image 1 splits one physical cluster into two; both halves must pair
        # with the single image-2 cluster
        proto = unit(rng.normal(size=16))
        other = unit(np.roll(proto, 7) + rng.normal(scale=0.4, size=16))
        half_a = [unit(proto + rng.normal(scale=0.005, size=16)) for _ in range(3)]
        half_b = [unit(proto + 0.45 * other + rng.normal(scale=0.005, size=16)) for _ in range(3)]
        c1 = [
            Cluster(members=[0, 1, 2], representative=_rep(half_a)),
            Cluster(members=[3, 4, 5], representative=_rep(half_b)),
        ]
        c2 = [
            Cluster(members=[0, 1, 2, 3, 4, 5], representative=_rep(half_a + half_b)),
            Cluster(members=[6], representative=unit(rng.normal(size=16))),
        ]
        pairing = match_clusters(c1, c2)
        assert (0, 0) in pairing.index_pairs()
        assert (1, 0) in pairing.index_pairs()

    def test_agrees_with_exhaustive_scan(self, rng):
        c1 = [Cluster(members=[i], representative=unit(rng.normal(size=8))) for i in range(12)]
        c2 = [Cluster(members=[j], representative=unit(rng.normal(size=8))) for j in range(9)]
        pairing = set(pairing_pairs(match_clusters(c1, c2)))
        want = set()
        for i, c in enumerate(c1):
            sims = [float(c.representative @ d.representative) for d in c2]
            want.add((i, max(range(len(c2)), key=lambda j: (sims[j], -j))))
        for j, d in enumerate(c2):
            sims = [float(d.representative @ c.representative) for c in c1]
            want.add((max(range(len(c1)), key=lambda i: (sims[i], -i)), j))
        assert pairing == want


def _rep(descs):
    med = np.median(np.array(descs), axis=0)
    return med / np.linalg.norm(med)


def pairing_pairs(p):
    return p.index_pairs()


class TestExpand:
    def make_clusters(self, sizes, start=0):
        out = []
        i = start
        for s in sizes:
            out.append(Cluster(members=list(range(i, i + s)), representative=np.ones(4) / 2.0))
            i += s
        return out

    def test_singleton_pair(self):
        from epiprep.clustering import ClusterPairing

        c1 = self.make_clusters([1])
        c2 = self.make_clusters([1])
        matches = expand_to_matches(ClusterPairing(pairs=((0, 0, "1to2"),)), c1, c2)
        assert [(m.i1, m.i2) for m in matches] == [(0, 0)]
        assert all(m.in_X for m in matches)

    def test_cartesian_product_size(self):
        from epiprep.clustering import ClusterPairing

        c1 = self.make_clusters([2])
        c2 = self.make_clusters([3])
        matches = expand_to_matches(ClusterPairing(pairs=((0, 0, "1to2"),)), c1, c2)
        assert len(matches) == 6

    def test_unmatched_by_ratio_test_recovered(self):
        # one feature on the left, a two-member cluster on the right: the
        # product contains the correct pair that the ratio test would drop
        from epiprep.clustering import ClusterPairing

        c1 = self.make_clusters([1])
        c2 = self.make_clusters([2])
        matches = expand_to_matches(ClusterPairing(pairs=((0, 0, "1to2"),)), c1, c2)
        assert [(m.i1, m.i2) for m in matches] == [(0, 0), (0, 1)]

    def test_dedup_across_pairs(self):
        from epiprep.clustering import ClusterPairing

        c1 = self.make_clusters([2])
        c2 = self.make_clusters([2])
        pairing = ClusterPairing(pairs=((0, 0, "1to2"), (0, 0, "2to1")))
        matches = expand_to_matches(pairing, c1, c2)
        assert len(matches) == 4
