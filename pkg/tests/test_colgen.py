import io
import json
import math

import numpy as np
import pytest

from isohash.admm import SolverConfig
from isohash.colgen import (
    ActiveSet,
    CgConfig,
    identify_active,
    sample_initial_secants,
    scan_violators,
    train_nibh_cg,
)
from isohash.core import (
    Dataset,
    SecantBatch,
    hamming_pairs,
    hash_codes,
    hash_matrix,
    pair_distances,
    random_projection_matrix,
    secant_count,
)
from isohash.dataio import gen_random_dataset, preprocess
from isohash.metrics import max_distortion


def small_config(**kw):
    inner = kw.pop("inner", SolverConfig(max_outer_iters=15, inner_gd_iters=25))
    return CgConfig(inner=inner, **kw)


class TestSampleInitial:
    def test_whole_population_when_small(self):
        data = gen_random_dataset(4, 3, seed=0)
        active = sample_initial_secants(4, data, small_config(init_sample_size=6))
        assert len(active) == 6 == secant_count(4)
        assert set(active.origin) == {"initial"}

    def test_deterministic_under_seed(self):
        data = gen_random_dataset(100, 5, seed=1)
        cfg = small_config(init_sample_size=500, scan_seed=11)
        a = sample_initial_secants(100, data, cfg)
        b = sample_initial_secants(100, data, cfg)
        np.testing.assert_array_equal(a.secants.i, b.secants.i)
        np.testing.assert_array_equal(a.secants.j, b.secants.j)

    def test_targets_are_true_distances(self):
        data = gen_random_dataset(20, 4, seed=2)
        active = sample_initial_secants(20, data, small_config(init_sample_size=30))
        want = pair_distances(data.points, active.secants.i, active.secants.j)
        np.testing.assert_array_equal(active.secants.c, want)

    def test_pair_frequencies_uniform(self):
        # chi-square over all 45 pairs of Q=10, many seeds
        data = gen_random_dataset(10, 3, seed=3)
        total = secant_count(10)
        counts = np.zeros(total)
        draws = 1500
        k = 9
        for seed in range(draws):
            cfg = small_config(init_sample_size=k, scan_seed=seed)
            active = sample_initial_secants(10, data, cfg)
            counts[active.secants.keys()] += 1
        expected = draws * k / total
        chi2 = float(((counts - expected) ** 2 / expected).sum())
        # 95th percentile of chi2 with 44 dof is ~60.5; generous headroom
        assert chi2 < 80.0


class TestIdentifyActive:
    def make_codes_and_secants(self, seed=0, q=20, n=5, m=4):
        rng = np.random.default_rng(seed)
        pts = rng.standard_normal((q, n))
        codes = hash_matrix(random_projection_matrix(m, n, seed), pts)
        pairs = [(i, j) for i in range(1, q) for j in range(i)]
        sec = SecantBatch.from_pairs(pts, [p[0] for p in pairs], [p[1] for p in pairs])
        return codes, sec

    def test_all_equal_residuals_all_active(self):
        # zero-distance targets and identical codes: residual identical
        codes, sec = self.make_codes_and_secants()
        dh = hamming_pairs(codes, sec.i, sec.j)
        lam = 1.0
        resid = np.abs(lam * dh - sec.c)
        # synthesize equal residuals by overriding targets
        sec_eq = SecantBatch(sec.i, sec.j, lam * dh + 0.5)
        mask = identify_active(codes, lam, sec_eq, 0.5, active_tol=0.02)
        assert mask.all()

    def test_single_dominant_residual(self):
        codes, sec = self.make_codes_and_secants(seed=1)
        dh = hamming_pairs(codes, sec.i, sec.j)
        c = dh * 1.0 + 0.1  # uniform small residuals
        c[7] = dh[7] + 10.0  # one dominant offender
        sec2 = SecantBatch(sec.i, sec.j, c)
        mask = identify_active(codes, 1.0, sec2, 10.0, active_tol=0.02)
        assert mask[7] and mask.sum() == 1

    def test_matches_inline_filter(self):
        codes, sec = self.make_codes_and_secants(seed=2)
        lam, delta_hat, tol = 0.37, 1.2, 0.05
        mask = identify_active(codes, lam, sec, delta_hat, tol)
        resid = np.abs(lam * hamming_pairs(codes, sec.i, sec.j) - sec.c)
        np.testing.assert_array_equal(mask, resid >= (1 - tol) * delta_hat)

    def test_cap_keeps_largest(self):
        codes, sec = self.make_codes_and_secants(seed=3)
        mask = identify_active(codes, 1.0, sec, 0.0, 0.0, cap=5)
        assert mask.sum() == 5
        resid = np.abs(1.0 * hamming_pairs(codes, sec.i, sec.j) - sec.c)
        assert resid[mask].min() >= np.sort(resid)[-5] - 1e-12


class TestScanViolators:
    def setup_method(self):
        self.data = gen_random_dataset(50, 6, seed=4)
        self.w = random_projection_matrix(5, 6, 9)
        self.codes = hash_matrix(self.w, self.data.points)

    def test_infinite_delta_no_violators(self):
        violators, scanned_all = scan_violators(
            self.codes, self.data, 1.0, math.inf, 100, seed=0
        )
        assert len(violators) == 0 and scanned_all

    def test_zero_delta_everything_violates(self):
        violators, scanned_all = scan_violators(
            self.codes, self.data, 1.0, 0.0, 40, seed=1
        )
        assert len(violators) == 40 and not scanned_all
        resid = np.abs(1.0 * hamming_pairs(self.codes, violators.i, violators.j)
                       - violators.c)
        assert np.all(resid > 0)

    def test_matches_exhaustive_filter(self):
        lam = 0.4
        delta_hat = 1.1
        violators, scanned_all = scan_violators(
            self.codes, self.data, lam, delta_hat, 10_000, seed=2
        )
        got = set(zip(violators.i.tolist(), violators.j.tolist()))
        want = set()
        for i in range(1, 50):
            for j in range(i):
                dh = int(np.bitwise_count(
                    self.codes.packed[i] ^ self.codes.packed[j]).sum())
                c = float(np.linalg.norm(self.data.points[i] - self.data.points[j]))
                if abs(lam * dh - c) > delta_hat:
                    want.add((i, j))
        assert got == want
        assert not scanned_all  # violators exist, so the flag stays False

    def test_threaded_matches_serial(self):
        a, sa = scan_violators(self.codes, self.data, 0.4, 1.0, 37, seed=3)
        b, sb = scan_violators(self.codes, self.data, 0.4, 1.0, 37, seed=3,
                               n_threads=3)
        assert sa == sb
        np.testing.assert_array_equal(a.i, b.i)
        np.testing.assert_array_equal(a.j, b.j)

    def test_deterministic_under_seed(self):
        a, _ = scan_violators(self.codes, self.data, 0.4, 1.0, 20, seed=5)
        b, _ = scan_violators(self.codes, self.data, 0.4, 1.0, 20, seed=5)
        np.testing.assert_array_equal(a.i, b.i)
        c, _ = scan_violators(self.codes, self.data, 0.4, 1.0, 20, seed=6)
        assert not (len(a) == len(c) and np.array_equal(a.i, c.i))


class TestActiveSetType:
    def test_rejects_duplicates(self):
        sec = SecantBatch([2, 2], [0, 0], [1.0, 1.0])
        with pytest.raises(ValueError, match="duplicate"):
            ActiveSet(sec, np.array(["initial", "initial"]), 0)


class TestTrainCg:
    def test_end_to_end_terminates_clean(self):
        data = preprocess(gen_random_dataset(60, 10, seed=5).points)
        cfg = small_config(init_sample_size=200, violator_batch=100,
                           max_generations=25, scan_seed=7)
        sink = io.StringIO()
        model, report = train_nibh_cg(data, 8, cfg, progress=sink)
        assert report.fully_satisfied, "CG should satisfy all pairs at desk scale"
        # termination soundness: a fresh full scan at the final state is clean
        codes = hash_codes(model, data)
        violators, scanned_all = scan_violators(
            codes, data, report.lam, report.delta_hat, 1000, seed=99
        )
        assert len(violators) == 0 and scanned_all
        # independent full-stream recompute stays within delta_hat
        rep = max_distortion(model, data, lam=report.lam)
        assert rep.delta <= report.delta_hat * (1 + 1e-9)
        # memory contract
        assert report.peak_resident_secants <= report.init_size + \
            report.generations * cfg.violator_batch
        # progress records are JSON lines with the documented fields
        lines = sink.getvalue().strip().splitlines()
        assert len(lines) == len(report.history)
        rec = json.loads(lines[0])
        assert set(rec) == {"generation", "active_size", "violators_found",
                            "delta_hat"}

    def test_lambda_frozen_after_first_solve(self):
        data = preprocess(gen_random_dataset(40, 8, seed=6).points)
        cfg = small_config(init_sample_size=100, violator_batch=60,
                           max_generations=10)
        model, report = train_nibh_cg(data, 6, cfg)
        assert model.lam == report.lam

    def test_generation_cap_flags_unsatisfied(self):
        # one generation with a tiny batch cannot cover all violators
        data = preprocess(gen_random_dataset(50, 8, seed=7).points)
        inner = SolverConfig(max_outer_iters=3, inner_gd_iters=5)
        cfg = CgConfig(init_sample_size=20, violator_batch=5,
                       max_generations=1, inner=inner)
        model, report = train_nibh_cg(data, 4, cfg)
        assert report.generations == 1
        assert not report.fully_satisfied

    def test_reproducible(self):
        data = preprocess(gen_random_dataset(40, 8, seed=8).points)
        cfg = small_config(init_sample_size=80, violator_batch=50,
                           max_generations=8, scan_seed=3)
        m1, r1 = train_nibh_cg(data, 5, cfg)
        m2, r2 = train_nibh_cg(data, 5, cfg)
        assert m1.w.tobytes() == m2.w.tobytes()
        assert r1.history == r2.history
