import math

import numpy as np
import pytest

from isohash.baselines import lsh_model
from isohash.core import Dataset, HashModel
from isohash.dataio import preprocess
from isohash.theory import (
    GaussianMixtureSpec,
    knn_sufficiency_check,
    lemma1_empirical,
    sample_mixture,
    sigmoid_quantizer_gap_bound,
)


class TestMixtureSpec:
    def test_valid_spec(self):
        spec = GaussianMixtureSpec([0.4, 0.6], np.zeros((2, 3)),
                                   np.stack([np.eye(3), 2 * np.eye(3)]))
        assert spec.p == 2 and spec.n == 3

    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValueError, match="sum"):
            GaussianMixtureSpec([0.5, 0.6], np.zeros((2, 2)),
                                np.stack([np.eye(2), np.eye(2)]))

    def test_non_psd_covariance_rejected(self):
        bad = np.array([[1.0, 0.0], [0.0, -0.5]])
        with pytest.raises(ValueError, match="semidefinite"):
            GaussianMixtureSpec([1.0], np.zeros((1, 2)), bad[None])

    def test_asymmetric_covariance_rejected(self):
        bad = np.array([[1.0, 0.5], [0.0, 1.0]])
        with pytest.raises(ValueError, match="symmetric"):
            GaussianMixtureSpec([1.0], np.zeros((1, 2)), bad[None])


class TestSampleMixture:
    def test_standard_normal_clt(self):
        spec = GaussianMixtureSpec([1.0], np.zeros((1, 8)), np.eye(8)[None])
        ds = sample_mixture(spec, 4000, seed=1)
        # per-coordinate mean within 3 sigma / sqrt(Q)
        assert np.all(np.abs(ds.points.mean(axis=0)) < 3.0 / math.sqrt(4000))

    def test_degenerate_covariance(self):
        mu = np.array([2.0, -1.0, 0.5])
        spec = GaussianMixtureSpec([1.0], mu[None], np.zeros((1, 3, 3)))
        ds = sample_mixture(spec, 10, seed=2)
        np.testing.assert_array_equal(ds.points, np.tile(mu, (10, 1)))

    def test_component_frequencies(self):
        spec = GaussianMixtureSpec(
            [0.3, 0.7],
            np.array([[-50.0, 0.0], [50.0, 0.0]]),
            np.stack([np.eye(2), np.eye(2)]),
        )
        ds = sample_mixture(spec, 3000, seed=3)
        frac = float((ds.points[:, 0] > 0).mean())
        # binomial 3-sigma interval around 0.7
        assert abs(frac - 0.7) < 3.0 * math.sqrt(0.7 * 0.3 / 3000)

    def test_deterministic(self):
        spec = GaussianMixtureSpec([1.0], np.zeros((1, 4)), np.eye(4)[None])
        a = sample_mixture(spec, 20, seed=5)
        b = sample_mixture(spec, 20, seed=5)
        np.testing.assert_array_equal(a.points, b.points)


class TestLemma1:
    def test_huge_alpha_vanishing_gap(self):
        emp, bound = lemma1_empirical(1e6, 1.0, n_samples=10**5, seed=0)
        assert emp < 1e-3
        assert emp <= bound

    def test_alpha_one_bound_value(self):
        # 1/sqrt(2 pi) + 2/e
        want = 1.0 / math.sqrt(2 * math.pi) + 2.0 * math.exp(-1.0)
        assert sigmoid_quantizer_gap_bound(1.0, 1.0) == pytest.approx(
            1.1347011627443174, abs=1e-12)
        assert sigmoid_quantizer_gap_bound(1.0, 1.0) == pytest.approx(want)
        emp, bound = lemma1_empirical(1.0, 1.0, n_samples=10**5, seed=1)
        assert emp <= bound

    def test_monotone_in_alpha(self):
        vals = [lemma1_empirical(a, 1.0, n_samples=10**5, seed=7)[0]
                for a in (1.0, 10.0, 100.0)]
        assert vals[0] > vals[1] > vals[2]

    def test_rejects_tiny_sample_count(self):
        with pytest.raises(ValueError):
            lemma1_empirical(1.0, 1.0, n_samples=100)


class TestKnnSufficiency:
    def test_exact_isometry_all_preserved(self):
        # +/-1 one-hot rows: every pair sits at Hamming 2 and ambient 2*sqrt(2),
        # so the identity projection is an exact isometry at lambda = sqrt(2)
        n = 6
        pts = 2.0 * np.eye(n) - 1.0
        model = HashModel(w=np.eye(n), lam=math.sqrt(2.0), alpha=10.0,
                          mean=np.zeros(n), normalized=False)
        rep = knn_sufficiency_check(model, Dataset(pts), k=2)
        assert rep.delta == pytest.approx(0.0, abs=1e-12)
        assert rep.satisfied_queries.size == n  # gap 0 >= 2*0 counts
        assert rep.ok

    def test_planted_clusters_all_preserved(self):
        # three well-separated Gaussian blobs in R^20; gaps dwarf 2*delta
        rng = np.random.default_rng(11)
        centers = np.zeros((3, 20))
        centers[0, 0] = 0.0
        centers[1, 0] = 200.0
        centers[2, 1] = 200.0
        spec = GaussianMixtureSpec([1 / 3] * 3, centers,
                                   np.stack([np.eye(20) * 0.01] * 3))
        raw = sample_mixture(spec, 60, seed=12)
        data = preprocess(raw.points)
        model = lsh_model(16, 20, seed=4, data=data)
        # k one less than the smallest cluster, so the gap is the
        # inter-cluster margin
        labels = np.argmin(
            np.linalg.norm(raw.points[:, None, :] - centers[None], axis=2), axis=1
        )
        k = int(np.bincount(labels).min()) - 1
        rep = knn_sufficiency_check(model, data, k=k)
        assert rep.satisfied_queries.size > 0, "construction should create gaps"
        assert rep.ok

    def test_small_gaps_excluded_not_asserted(self):
        rng = np.random.default_rng(13)
        data = preprocess(rng.standard_normal((30, 10)))
        model = lsh_model(4, 10, seed=5, data=data)  # few bits: delta is large
        rep = knn_sufficiency_check(model, data, k=3)
        # queries below the gap threshold are reported via per_query_gap only
        assert rep.per_query_gap.shape == (30,)
        assert rep.satisfied_queries.size == rep.preserved.size
        assert rep.ok  # vacuously or not, never a violation

    def test_k_range_validated(self):
        data = Dataset(np.random.default_rng(0).standard_normal((10, 3)))
        model = lsh_model(4, 3, seed=0)
        with pytest.raises(ValueError):
            knn_sufficiency_check(model, data, k=9)
