import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from epiprep.features import Feature, FeatureSet
from epiprep.matching import (
    RollUnavailable,
    blogs_matches,
    distance_ratio,
    estimate_roll,
    lowe_matches,
    similarity_weight,
    wrap_angle,
)

from test_features import random_set, unit


def set_from_descriptors(descs, orientations=None):
    feats = []
    for i, d in enumerate(descs):
        ori = 0.0 if orientations is None else orientations[i]
        feats.append(Feature(x=float(i), y=0.0, scale=1.0, orientation=float(ori),
                             descriptor=unit(d)))
    return FeatureSet(image_id="s", mode="natural", features=feats)


class TestDistanceRatio:
    def test_perfect_best(self):
        assert distance_ratio(1.0, 0.9) == 0.0

    def test_equal_similarities(self):
        assert distance_ratio(0.8, 0.8) == 1.0

    def test_angle_ratio(self):
        got = distance_ratio(math.cos(math.radians(10)), math.cos(math.radians(20)))
        assert got == pytest.approx(0.5, abs=1e-12)

    def test_both_perfect(self):
        assert distance_ratio(1.0, 1.0) == 1.0

    @settings(max_examples=200, deadline=None)
    @given(m2=st.floats(-1.0, 1.0), gap=st.floats(0.0, 1.0))
    def test_range_and_monotonicity(self, m2, gap):
        m1 = min(1.0, m2 + gap)
        d = distance_ratio(m1, m2)
        assert 0.0 <= d <= 1.0
        tighter = distance_ratio(min(1.0, m1 + 0.05), m2)
        assert tighter <= d + 1e-12


class TestSimilarityWeight:
    def test_first_runner_up_equal(self):
        assert similarity_weight(0.9, 0.9, 0.5) == 0.0

    def test_second_runner_up_equal(self):
        assert similarity_weight(0.9, 0.5, 0.9) == 0.0

    def test_hand_evaluated_value(self):
        with mpmath.workdps(50):
            want = float(
                (1 - mpmath.exp(mpmath.mpf("-0.99"))) ** 2
                * (1 - mpmath.mpf("0.5") / mpmath.mpf("0.99"))
                * (1 - mpmath.mpf("0.6") / mpmath.mpf("0.99"))
            )
        got = similarity_weight(0.99, 0.5, 0.6)
        assert got == pytest.approx(want, abs=1e-12)
        assert got == pytest.approx(0.0770, abs=5e-4)

    def test_non_positive_similarity(self):
        assert similarity_weight(0.0, -0.5, -0.5) == 0.0
        assert similarity_weight(-0.3, -0.5, -0.5) == 0.0

    @settings(max_examples=200, deadline=None)
    @given(
        m=st.floats(0.01, 1.0),
        a=st.floats(-1.0, 1.0),
        b=st.floats(-1.0, 1.0),
    )
    def test_range(self, m, a, b):
        t = similarity_weight(m, min(a, m), min(b, m))
        assert 0.0 <= t < 1.0


class TestLoweMatches:
    def test_identity_matching(self, rng):
        fset = random_set(rng, 30, dim=24)
        out = lowe_matches(fset, fset)
        assert len(out) == 30
        for m in out:
            assert m.i1 == m.i2
            assert m.d_r == pytest.approx(0.0, abs=1e-5)
            assert m.in_XL

    def test_repeated_structure_rejected(self):
        d = unit([1.0, 2.0, 3.0])
        f1 = set_from_descriptors([d])
        f2 = set_from_descriptors([d, d])   # two equally good candidates
        assert lowe_matches(f1, f2) == []

    def test_matches_brute_force(self, rng):
        f1 = random_set(rng, 60, dim=8)
        f2 = random_set(rng, 80, dim=8)
        got = {(m.i1, m.i2): m.d_r for m in lowe_matches(f1, f2)}
        # oracle: per-feature scan with plain python
        want = {}
        for i1, f in enumerate(f1.features):
            sims = [float(f.descriptor @ g.descriptor) for g in f2.features]
            best = max(range(len(sims)), key=lambda j: (sims[j], -j))
            second = max(s for j, s in enumerate(sims) if j != best)
            d_r = math.acos(min(1, max(-1, sims[best]))) / math.acos(min(1, max(-1, second)))
            if d_r <= 0.9:
                want[(i1, best)] = d_r
        assert set(got) == set(want)
        for k in got:
            assert got[k] == pytest.approx(want[k], abs=1e-9)


class TestBlogsMatches:
    def test_identity_all_mutual(self, rng):
        fset = random_set(rng, 25, dim=24)
        out = blogs_matches(fset, fset)
        assert sorted(m.key for m in out) == [(i, i) for i in range(25)]
        assert all(m.in_XB and m.t_k is not None for m in out)

    def test_non_mutual_excluded(self):
        # u0's best is v0, but v0's best is u1
        u0 = unit([1.0, 0.2, 0.0])
        u1 = unit([1.0, 0.0, 0.0])
        v0 = unit([1.0, 0.05, 0.0])
        f1 = set_from_descriptors([u0, u1])
        f2 = set_from_descriptors([v0, unit([0.0, 0.0, 1.0])])
        keys = {m.key for m in blogs_matches(f1, f2)}
        assert (0, 0) not in keys
        assert (1, 0) in keys

    def test_matches_brute_force(self, rng):
        f1 = random_set(rng, 50, dim=8)
        f2 = random_set(rng, 70, dim=8)
        got = {m.key for m in blogs_matches(f1, f2)}
        want = set()
        for i1, f in enumerate(f1.features):
            sims = [float(f.descriptor @ g.descriptor) for g in f2.features]
            j = max(range(len(sims)), key=lambda t: (sims[t], -t))
            back = [float(f2.features[j].descriptor @ g.descriptor) for g in f1.features]
            if max(range(len(back)), key=lambda t: (back[t], -t)) == i1:
                want.add((i1, j))
        assert got == want

    def test_transpose_symmetry(self, rng):
        f1 = random_set(rng, 40, dim=8)
        f2 = random_set(rng, 40, dim=8)
        a = {m.key for m in blogs_matches(f1, f2)}
        b = {(j, i) for i, j in (m.key for m in blogs_matches(f2, f1))}
        assert a == b


class TestEstimateRoll:
    @staticmethod
    def paired_sets(rng, deltas_deg, n=None):
        n = n or len(deltas_deg)
        descs = [rng.normal(size=16) for _ in range(n)]
        ori1 = rng.uniform(-math.pi, math.pi, n)
        ori2 = [wrap_angle(o + math.radians(d)) for o, d in zip(ori1, deltas_deg)]
        f1 = set_from_descriptors(descs, ori1)
        f2 = set_from_descriptors(descs, ori2)
        matches = lowe_matches(f1, f2)
        assert len(matches) == n
        return matches, f1, f2

    def test_exact_peak_at_78(self, rng):
        matches, f1, f2 = self.paired_sets(rng, [78.0] * 40)
        est = estimate_roll(matches, f1, f2)
        assert math.degrees(est.alpha_exp) == pytest.approx(78.0, abs=1e-9)
        assert est.samples == 40

    def test_near_zero_roll_with_noise(self, rng):
        deltas = rng.uniform(-3.0, 3.0, 60)
        matches, f1, f2 = self.paired_sets(rng, deltas)
        est = estimate_roll(matches, f1, f2)
        assert abs(math.degrees(est.alpha_exp)) <= 3.0

    def test_wraparound(self, rng):
        matches, f1, f2 = self.paired_sets(rng, [179.0, -179.0] * 10)
        est = estimate_roll(matches, f1, f2)
        assert math.degrees(abs(est.alpha_exp)) == pytest.approx(180.0, abs=1.0)

    def test_orientation_shift_invariance(self, rng):
        deltas = rng.uniform(-20.0, 40.0, 30)
        matches, f1, f2 = self.paired_sets(rng, deltas)
        est_a = estimate_roll(matches, f1, f2)
        shift = 0.9
        g1 = FeatureSet(
            image_id="g1", mode="natural",
            features=[
                Feature(f.x, f.y, f.scale, wrap_angle(f.orientation + shift), f.descriptor)
                for f in f1.features
            ],
        )
        g2 = FeatureSet(
            image_id="g2", mode="natural",
            features=[
                Feature(f.x, f.y, f.scale, wrap_angle(f.orientation + shift), f.descriptor)
                for f in f2.features
            ],
        )
        est_b = estimate_roll(matches, g1, g2)
        assert est_b.alpha_exp == pytest.approx(est_a.alpha_exp, abs=1e-9)

    def test_empty_raises(self, rng):
        f = random_set(rng, 3)
        with pytest.raises(RollUnavailable):
            estimate_roll([], f, f)


def test_wrap_angle_range():
    for a in np.linspace(-20.0, 20.0, 401):
        w = wrap_angle(a)
        assert -math.pi < w <= math.pi
        assert math.isclose(math.sin(w), math.sin(a), abs_tol=1e-12)
        assert math.isclose(math.cos(w), math.cos(a), abs_tol=1e-12)
