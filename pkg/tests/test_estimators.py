import math

import numpy as np
import pytest

from fdb.errors import (
    InvalidSubsetSize,
    OracleTooLarge,
    SingularCovariance,
    TooFewWeightedSamples,
)
from fdb.estimators import (
    EstimatorConfig,
    LocationScatter,
    c_step,
    exhaustive_mcd,
    fastmcd_baseline,
    fdb_estimate,
    iterate_c_steps,
    mahalanobis_sq,
    reweight,
    subset_mean_cov,
)
from fdb.numeric import chi_square_quantile, cholesky, log_determinant, symmetrize
from oracles import mahalanobis_sq_inverse, random_spd, two_pass_mean_cov

CROSS = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])


def full_sample_state(x):
    mu = x.mean(axis=0)
    centered = x - mu
    sigma = symmetrize(centered.T @ centered / (x.shape[0] - 1))
    return LocationScatter(mu, sigma, "raw")


def twelve_point_instance():
    """Ten clustered planar points plus two gross outliers; h = 10."""
    rng = np.random.default_rng(7)
    clean = rng.standard_normal((10, 2))
    outliers = np.array([[40.0, -35.0], [-55.0, 48.0]])
    return np.vstack([clean, outliers]), 10


class TestSubsetMeanCov:
    def test_symmetric_cross_denominator_h(self):
        ls = subset_mean_cov(CROSS, [0, 1, 2, 3], "h")
        assert np.allclose(ls.mu, [0.0, 0.0])
        assert np.allclose(ls.sigma, np.diag([0.5, 0.5]))

    def test_symmetric_cross_denominator_h_minus_1(self):
        ls = subset_mean_cov(CROSS, [0, 1, 2, 3], "h-1")
        assert np.allclose(ls.sigma, np.diag([2.0 / 3.0, 2.0 / 3.0]))

    def test_matches_two_pass_oracle(self, rng):
        x = rng.standard_normal((30, 4))
        subset = np.sort(rng.choice(30, size=12, replace=False))
        for denominator in ("h", "h-1"):
            ls = subset_mean_cov(x, subset, denominator)
            mu, cov = two_pass_mean_cov(x, subset, denominator)
            assert np.max(np.abs(ls.mu - mu)) <= 1e-12
            assert np.max(np.abs(ls.sigma - cov)) <= 1e-12

    def test_singular_subset_raises(self):
        x = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [5.0, 1.0]])
        with pytest.raises(SingularCovariance):
            subset_mean_cov(x, [0, 1, 2], "h-1")

    def test_ridge_repairs_elemental_start(self):
        x = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [5.0, 1.0]])
        ls = subset_mean_cov(x, [0, 1, 2], "h-1", ridge=True)
        cholesky(ls.sigma)  # repaired covariance must be SPD


class TestMahalanobisSq:
    def test_identity_scatter(self):
        ls = LocationScatter(np.zeros(2), np.eye(2))
        assert mahalanobis_sq(np.array([[3.0, 4.0]]), ls)[0] == pytest.approx(25.0)

    def test_diagonal_scatter(self):
        ls = LocationScatter(np.zeros(2), np.diag([4.0, 1.0]))
        assert mahalanobis_sq(np.array([[2.0, 1.0]]), ls)[0] == pytest.approx(2.0)

    def test_matches_explicit_inverse(self, rng):
        x = rng.standard_normal((50, 6))
        ls = LocationScatter(rng.standard_normal(6), random_spd(rng, 6))
        expected = mahalanobis_sq_inverse(x, ls.mu, ls.sigma)
        assert np.max(np.abs(mahalanobis_sq(x, ls) - expected)) <= 1e-9

    def test_nonnegative(self, rng):
        x = rng.standard_normal((100, 3))
        ls = LocationScatter(rng.standard_normal(3), random_spd(rng, 3))
        assert np.all(mahalanobis_sq(x, ls) >= 0.0)


class TestCStep:
    def test_idempotent_at_fixed_point(self):
        x, h = twelve_point_instance()
        subset, state = c_step(x, full_sample_state(x), h)
        again, state2 = c_step(x, state, h)
        assert np.array_equal(subset, again)
        assert np.allclose(state.sigma, state2.sigma)

    def test_excludes_gross_outliers_and_matches_enumeration(self):
        x, h = twelve_point_instance()
        subset, state = c_step(x, full_sample_state(x), h)
        assert 10 not in subset and 11 not in subset
        oracle_subset, _ = exhaustive_mcd(x, h)
        assert np.array_equal(subset, oracle_subset)

    def test_determinant_never_increases_from_random_subsets(self, rng):
        # Monotonicity from any subset-based (denominator h-1) state.
        for _ in range(1000):
            n = int(rng.integers(20, 201))
            p = int(rng.integers(1, 11))
            h = int(rng.integers(p + 2, n + 1))
            x = rng.standard_normal((n, p))
            start_subset = np.sort(rng.choice(n, size=h, replace=False))
            state = subset_mean_cov(x, start_subset, "h-1")
            before = log_determinant(cholesky(state.sigma))
            _, new_state = c_step(x, state, h)
            after = log_determinant(cholesky(new_state.sigma))
            assert after - before <= 1e-10

    def test_invalid_subset_size(self, rng):
        x = rng.standard_normal((10, 3))
        with pytest.raises(InvalidSubsetSize):
            c_step(x, full_sample_state(x), 3)


class TestIterateCSteps:
    def test_one_iteration_at_fixed_point(self):
        x, h = twelve_point_instance()
        subset, state = c_step(x, full_sample_state(x), h)
        _, _, iterations = iterate_c_steps(x, state, h)
        assert iterations == 1

    def test_converges_to_enumeration_optimum(self):
        x, h = twelve_point_instance()
        subset, state, _ = iterate_c_steps(x, full_sample_state(x), h)
        oracle_subset, oracle = exhaustive_mcd(x, h)
        assert np.array_equal(subset, oracle_subset)
        ld = log_determinant(cholesky(state.sigma))
        ld_oracle = log_determinant(cholesky(oracle.sigma))
        assert ld == pytest.approx(ld_oracle, abs=1e-10)

    def test_final_det_not_above_initial(self, rng):
        for _ in range(25):
            n, p = 60, 4
            h = 45
            x = rng.standard_normal((n, p))
            start_subset = np.sort(rng.choice(n, size=h, replace=False))
            state = subset_mean_cov(x, start_subset, "h-1")
            before = log_determinant(cholesky(state.sigma))
            _, final, _ = iterate_c_steps(x, state, h)
            assert log_determinant(cholesky(final.sigma)) <= before + 1e-10


class TestReweight:
    def test_monte_carlo_trim_fraction_and_c0(self, rng):
        n, p = 10_000, 5
        x = rng.standard_normal((n, p))
        result = reweight(x, LocationScatter(np.zeros(p), np.eye(p)))
        trimmed = 1.0 - result.weights.sum() / n
        # binomial sd of the 2.5% trim rate at n=1e4 is ~0.16%
        assert abs(trimmed - 0.025) <= 0.008
        assert abs(result.c0 - 1.0) <= 0.1

    def test_gross_outlier_gets_zero_weight(self, rng):
        x = rng.standard_normal((100, 2))
        x[0] = [100.0, 100.0]
        result = reweight(x, LocationScatter(np.zeros(2), np.eye(2)))
        assert result.weights[0] == 0

    def test_all_weights_one_reduces_to_sample_moments(self):
        # All four cross points sit at squared distance 1 under the identity:
        # the median-calibrated cutoff keeps everything.
        result = reweight(CROSS, LocationScatter(np.zeros(2), np.eye(2)))
        assert np.all(result.weights == 1)
        assert np.allclose(result.estimate.mu, CROSS.mean(axis=0))
        assert np.allclose(result.estimate.sigma, np.cov(CROSS, rowvar=False))

    def test_too_few_weighted_samples(self):
        x = np.array(
            [[0.0, 0.0], [0.01, 0.0], [0.0, 0.01], [50.0, 0.0], [0.0, 50.0]]
        )
        with pytest.raises(TooFewWeightedSamples):
            reweight(x, LocationScatter(np.zeros(2), 1e-4 * np.eye(2)))


class TestFdbEstimate:
    def test_symmetric_cross_raw_mean_exact(self):
        config = EstimatorConfig(alpha=1.0, depth="l2", reweight=False)
        with pytest.warns(UserWarning):  # n = 4 <= 5p
            report = fdb_estimate(CROSS, config)
        assert np.array_equal(report.estimate.mu, np.zeros(2))
        assert report.c0 is None and report.weights is None

    def test_grid_with_outliers_matches_enumeration(self):
        # Point-symmetric grid: three inner pairs plus one far pair on the
        # x-axis. Dropping either far point gives bit-identical determinants
        # (negation symmetry), so the enumeration tie-break and the depth
        # ordering both settle on dropping the far point away from the
        # outlier mass.
        grid = np.array(
            [[0.5, 0.0], [-0.5, 0.0], [0.0, 0.5], [0.0, -0.5],
             [0.35, 0.35], [-0.35, -0.35], [2.0, 0.0], [-2.0, 0.0]]
        )
        outliers = np.array([[50.0, 50.0], [60.0, -60.0]])
        x = np.vstack([grid, outliers])
        with pytest.warns(UserWarning):
            report = fdb_estimate(x, EstimatorConfig(h=7, depth="l2", reweight=False))
        assert not set(report.subset) & {8, 9}
        assert np.linalg.norm(report.estimate.mu) < 0.5
        oracle_subset, _ = exhaustive_mcd(x, 7)
        assert np.array_equal(report.subset, oracle_subset)

    def test_report_fields(self, rng):
        x = rng.standard_normal((200, 5))
        report = fdb_estimate(x, EstimatorConfig(seed=3))
        assert report.subset.size == 150
        assert report.weights.sum() >= 5 + 2
        assert report.c0 > 0 and report.c1 > 0
        assert report.distances_sq.shape == (200,)
        assert report.elapsed_seconds >= report.subset_seconds >= 0.0
        assert report.method == "fdb-pro"

    def test_small_sample_warning(self, rng):
        x = rng.standard_normal((20, 5))
        with pytest.warns(UserWarning, match="n > 5p"):
            fdb_estimate(x, EstimatorConfig(alpha=0.75, seed=0))

    def test_stage_label_on_failure(self):
        x = np.array([[float(i), float(i)] for i in range(20)])  # rank 1
        with pytest.raises(SingularCovariance) as exc:
            fdb_estimate(x, EstimatorConfig(depth="l2"))
        assert exc.value.stage == "scatter"

    def test_rigid_motion_equivariance_l2(self, rng):
        x = rng.standard_normal((120, 3)) @ np.diag([1.0, 2.0, 0.5])
        q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        shift = rng.standard_normal(3)
        base = fdb_estimate(x, EstimatorConfig(depth="l2", seed=1))
        moved = fdb_estimate(x @ q.T + shift, EstimatorConfig(depth="l2", seed=1))
        assert np.max(np.abs(moved.estimate.mu - (base.estimate.mu @ q.T + shift))) <= 1e-8
        assert np.max(np.abs(moved.estimate.sigma - q @ base.estimate.sigma @ q.T)) <= 1e-8

    def test_permutation_invariance_l2(self, rng):
        x = rng.standard_normal((80, 3))
        base = fdb_estimate(x, EstimatorConfig(depth="l2", seed=1))
        perm = rng.permutation(80)
        shuffled = fdb_estimate(x[perm], EstimatorConfig(depth="l2", seed=1))
        assert np.max(np.abs(shuffled.estimate.mu - base.estimate.mu)) <= 1e-10
        assert np.max(np.abs(shuffled.estimate.sigma - base.estimate.sigma)) <= 1e-10
        assert np.array_equal(np.sort(perm[shuffled.subset]), base.subset)

    def test_consistency_factors_on_clean_data(self, rng):
        # n large, moderate p: c1 corrects the depth-trimmed scatter back to
        # the truth and the reweighted eigenvalues stay close to one.
        x = rng.standard_normal((10_000, 20))
        report = fdb_estimate(x, EstimatorConfig(alpha=0.75, seed=5))
        assert 0.8 < report.c0 < 1.3
        assert 0.8 < report.c1 < 1.3
        eigenvalues = np.linalg.eigvalsh(report.estimate.sigma)
        assert np.all(np.abs(eigenvalues - 1.0) <= 0.15)


class TestEstimatorConfig:
    def test_alpha_bounds(self):
        EstimatorConfig(alpha=0.5)
        EstimatorConfig(alpha=1.0)
        with pytest.raises(ValueError):
            EstimatorConfig(alpha=0.49)
        with pytest.raises(ValueError):
            EstimatorConfig(alpha=1.01)

    def test_unknown_depth_rejected(self):
        with pytest.raises(ValueError):
            EstimatorConfig(depth="halfspace")

    def test_resolved_h_validated(self, rng):
        config = EstimatorConfig(alpha=0.5)
        with pytest.raises(InvalidSubsetSize):
            config.resolve_h(n=8, p=5)  # h = 4 <= p

    def test_auto_direction_count(self):
        config = EstimatorConfig()
        assert config.resolve_k(5) == 1000
        assert config.resolve_k(250) == 2500
        assert EstimatorConfig(k=64).resolve_k(250) == 64


class TestFastMcdBaseline:
    def test_degenerate_when_every_start_is_singular(self):
        from fdb.errors import DegenerateData

        x = np.ones((30, 3))  # zero trace: ridge repair cannot help
        with pytest.raises(DegenerateData):
            fastmcd_baseline(x, h=20, n_starts=10, seed=0)

    def test_matches_enumeration_on_small_instance(self):
        x, h = twelve_point_instance()
        report = fastmcd_baseline(x, h, n_starts=50, seed=11)
        oracle_subset, _ = exhaustive_mcd(x, h)
        assert np.array_equal(report.subset, oracle_subset)

    def test_deterministic_under_seed(self, rng):
        x = rng.standard_normal((60, 3))
        a = fastmcd_baseline(x, 45, n_starts=40, seed=9)
        b = fastmcd_baseline(x, 45, n_starts=40, seed=9)
        assert np.array_equal(a.subset, b.subset)
        assert np.array_equal(a.estimate.mu, b.estimate.mu)
        assert np.array_equal(a.estimate.sigma, b.estimate.sigma)
        assert np.array_equal(a.weights, b.weights)
        assert a.c0 == b.c0 and a.c1 == b.c1

    def test_comparable_to_fdb_on_clean_data(self, rng):
        # Both estimators are consistent on clean data; their location errors
        # should be within a factor two of each other on average.
        errs_fdb, errs_mcd = [], []
        for rep in range(10):
            x = rng.standard_normal((200, 5))
            errs_fdb.append(np.linalg.norm(fdb_estimate(x, EstimatorConfig(seed=rep)).estimate.mu))
            errs_mcd.append(np.linalg.norm(fastmcd_baseline(x, 150, n_starts=100, seed=rep).estimate.mu))
        ratio = np.mean(errs_mcd) / np.mean(errs_fdb)
        assert 0.5 <= ratio <= 2.0


class TestExhaustiveMcd:
    def test_univariate_outlier_excluded(self):
        x = np.array([[0.0], [1.0], [2.0], [3.0], [100.0]])
        subset, _ = exhaustive_mcd(x, 4)
        assert np.array_equal(subset, [0, 1, 2, 3])

    def test_h_equals_n_returns_full_sample(self, rng):
        x = rng.standard_normal((8, 2))
        subset, ls = exhaustive_mcd(x, 8)
        assert np.array_equal(subset, np.arange(8))
        assert np.allclose(ls.mu, x.mean(axis=0))
        assert np.allclose(ls.sigma, np.cov(x, rowvar=False))

    def test_oracle_too_large(self, rng):
        x = rng.standard_normal((60, 2))
        with pytest.raises(OracleTooLarge):
            exhaustive_mcd(x, 30)


class TestBreakdown:
    def test_radial_contamination_does_not_carry_the_estimate(self):
        # Setting A sizes, 40% radial outliers, alpha = 0.5: the location
        # error stays bounded in every replicate.
        from fdb.evaluation import BenchmarkCell, run_replicate

        cell = BenchmarkCell("A", "radial", 0.4, 5.0, "fdb-pro")
        for rep in range(100):
            metrics = run_replicate(cell, rep, seed=505)
            assert metrics.e_mu < 1.0
