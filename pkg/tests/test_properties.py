import math

import numpy as np
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from cindex_meta import meta, transforms
from cindex_meta.meta import MetaModelSpec, StudySummary
from cindex_meta.sim import enclosed_area
from cindex_meta.survival import SurvivalSample, UnoVariant, c_harrell, c_relative_frequency, c_uno
from cindex_meta.transforms import TransformTag

from . import oracles

SETTINGS = settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])


@st.composite
def samples(draw, censored=True, min_n=3, max_n=40):
    n = draw(st.integers(min_n, max_n))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    t = rng.permutation(np.arange(1, n + 1)) * 0.1 + rng.uniform(0, 0.01, n)
    e = rng.random(n) < 0.6 if censored else np.ones(n, bool)
    e[np.argmin(t)] = True
    s = rng.normal(size=n)
    tau = draw(st.sampled_from([math.inf, float(np.quantile(t, 0.5)), float(t.max())]))
    return SurvivalSample(t, e, s), tau


def estimators(sample, tau):
    return (c_harrell(sample, tau), c_uno(sample, tau, UnoVariant.SQUARED), c_uno(sample, tau, UnoVariant.GERDS))


class TestEstimatorProperties:
    @SETTINGS
    @given(samples())
    def test_bounds(self, st_):
        sample, tau = st_
        for c in estimators(sample, tau):
            assert 0.0 <= c <= 1.0

    @SETTINGS
    @given(samples())
    def test_reversal(self, st_):
        sample, tau = st_
        neg = SurvivalSample(sample.observed_time, sample.event, -sample.score)
        assert_allclose(estimators(neg, tau), 1.0 - np.array(estimators(sample, tau)), atol=1e-12)

    @SETTINGS
    @given(samples(), st.sampled_from([np.exp, np.arctan, lambda x: x**3 + 2 * x, lambda x: 5 * x - 7]))
    def test_monotone_invariance(self, st_, m):
        sample, tau = st_
        moved = SurvivalSample(sample.observed_time, sample.event, m(sample.score))
        assert_allclose(estimators(moved, tau), estimators(sample, tau), rtol=0, atol=1e-14)

    @SETTINGS
    @given(samples(censored=False))
    def test_uncensored_agreement(self, st_):
        sample, tau = st_
        rf = c_relative_frequency(sample, tau)
        assert all(c == rf for c in estimators(sample, tau))

    @SETTINGS
    @given(samples())
    def test_restriction_consistency(self, st_):
        sample, _ = st_
        assert c_harrell(sample, float(sample.observed_time.max())) == c_harrell(sample, math.inf)

    @SETTINGS
    @given(samples(max_n=25))
    def test_brute_force(self, st_):
        sample, tau = st_
        t, e, s = sample.observed_time, sample.event, sample.score
        ref = [oracles.concordance(t, e, s, tau, w) for w in ("harrell", "squared", "gerds")]
        assert_allclose(estimators(sample, tau), ref, rtol=0, atol=1e-12)


interior = st.floats(0.001, 0.999)


class TestTransformProperties:
    @SETTINGS
    @given(st.sampled_from(list(TransformTag)), interior, interior)
    def test_monotone(self, tag, a, b):
        assume(abs(a - b) > 1e-9)
        lo, hi = sorted((a, b))
        assert transforms.apply(tag, lo) < transforms.apply(tag, hi)

    @SETTINGS
    @given(st.sampled_from(list(TransformTag)), interior)
    def test_round_trip(self, tag, c):
        assert abs(transforms.invert(tag, transforms.apply(tag, c)) - c) < 1e-12

    @SETTINGS
    @given(st.sampled_from(list(TransformTag)), interior, st.floats(1e-8, 1.0))
    def test_variance_positive(self, tag, c, v):
        assert transforms.transform_variance(tag, c, v) > 0


@st.composite
def study_sets(draw, k_min=6, k_max=14):
    k = draw(st.integers(k_min, k_max))
    rng = np.random.default_rng(draw(st.integers(0, 2**32 - 1)))
    tau = rng.uniform(0.1, 2.0, k)
    c = 0.78 - 0.02 * tau + rng.normal(0, 0.01, k)
    v = rng.uniform(5e-5, 5e-4, k)
    return [StudySummary(f"s{i}", *x) for i, x in enumerate(zip(tau, c, v))]


class TestMetaProperties:
    @SETTINGS
    @given(study_sets(), st.sampled_from(["ma", "linear", "rcs", "fp2"]), st.randoms(use_true_random=False))
    def test_reorder_invariance(self, studies, family, rnd):
        spec = MetaModelSpec(family, "logit")
        shuffled = list(studies)
        rnd.shuffle(shuffled)
        grid = np.linspace(0.1, 2.0, 7)
        a, b = meta.fit_reml(spec, studies), meta.fit_reml(spec, shuffled)
        assert np.array_equal(meta.predict(a, grid)[0], meta.predict(b, grid)[0])

    @SETTINGS
    @given(study_sets(), st.sampled_from([(-0.5, 0.5), (0.0, 1.0), (-2.0, 3.0), (0.5, 0.5)]))
    def test_fp2_power_order(self, studies, powers):
        grid = np.linspace(0.1, 2.0, 7)
        a = meta.fit_reml(MetaModelSpec("fp2", "logit", fp_powers=powers), studies)
        b = meta.fit_reml(MetaModelSpec("fp2", "logit", fp_powers=powers[::-1]), studies)
        assert_allclose(meta.predict(a, grid)[0], meta.predict(b, grid)[0], rtol=1e-8)

    @SETTINGS
    @given(study_sets())
    def test_reml_local_maximum(self, studies):
        prep = meta.prepare(MetaModelSpec("linear", "logit"), studies)
        X = meta.design_matrix(meta.Family.LINEAR, prep.tau)
        s, _ = meta.reml_profile(X, prep.y, prep.v)
        ll = lambda x: meta._restricted_loglik(x, X, prep.y, prep.v, np.ones_like(prep.v))
        assert ll(s) >= ll(0.0) - 1e-10 and ll(s) >= ll(2 * s) - 1e-10

    @SETTINGS
    @given(study_sets(k_min=2))
    def test_ma_interval_contains_point(self, studies):
        f = meta.fit_reml(MetaModelSpec("ma", "logit"), studies)
        p, lo, hi = meta.predict(f, np.array([1.0]))
        assert lo[0] < p[0] < hi[0]


class TestAreaPseudometric:
    @SETTINGS
    @given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1))
    def test_symmetric_and_zero(self, a0, a1, b0, b1):
        f = lambda g: a0 + a1 * g
        h = lambda g: b0 + b1 * g
        assert enclosed_area(f, h, 0.1, 2.0) == enclosed_area(h, f, 0.1, 2.0)
        assert enclosed_area(f, f, 0.1, 2.0) == 0.0
        if abs(a0 - b0) + abs(a1 - b1) > 1e-9:
            assert enclosed_area(f, h, 0.1, 2.0) > 0.0
