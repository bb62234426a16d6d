"""Statistical tests against exact values and scipy/brute-force oracles."""

import numpy as np
import pytest
from scipy import stats as scipy_stats

from transferlab.metrics import (
    UndefinedStatisticError,
    binomial_sign_test,
    kendall_tau,
    pearson_correlation,
    permutation_test_correlation,
)


def brute_force_tau_b(xs, ys):
    """O(n^2) tie-corrected Kendall tau, written from the definition."""
    xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    n = len(xs)
    concordant = discordant = ties_x = ties_y = 0
    for i in range(n):
        for j in range(i + 1, n):
            dx = np.sign(xs[i] - xs[j])
            dy = np.sign(ys[i] - ys[j])
            if dx == 0 and dy == 0:
                continue
            if dx == 0:
                ties_x += 1
            elif dy == 0:
                ties_y += 1
            elif dx == dy:
                concordant += 1
            else:
                discordant += 1
    n0 = n * (n - 1) // 2
    denom = np.sqrt((n0 - count_pair_ties(xs)) * (n0 - count_pair_ties(ys)))
    return (concordant - discordant) / denom


def count_pair_ties(v):
    _, counts = np.unique(v, return_counts=True)
    return int(np.sum(counts * (counts - 1) // 2))


class TestBinomialSignTest:
    def test_exact_reference_values(self):
        assert binomial_sign_test(10, 10) == pytest.approx(0.001953125, abs=1e-15)
        assert binomial_sign_test(9, 10) == pytest.approx(0.021484375, abs=1e-15)

    def test_symmetry(self):
        for n in (5, 10, 13):
            for k in range(n + 1):
                assert binomial_sign_test(k, n) == pytest.approx(
                    binomial_sign_test(n - k, n), abs=1e-15
                )

    def test_center_is_one(self):
        assert binomial_sign_test(5, 10) == pytest.approx(1.0)
        assert binomial_sign_test(0, 0) == 1.0

    def test_matches_scipy(self):
        for n in (1, 4, 7, 10, 20, 31):
            for k in range(n + 1):
                expected = scipy_stats.binomtest(k, n, 0.5).pvalue
                assert binomial_sign_test(k, n) == pytest.approx(expected, abs=1e-12)

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            binomial_sign_test(5, 4)
        with pytest.raises(ValueError):
            binomial_sign_test(-1, 4)


class TestPearson:
    def test_matches_scipy(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            xs = rng.normal(size=rng.integers(3, 30))
            ys = rng.normal(size=len(xs)) + 0.5 * xs
            expected = scipy_stats.pearsonr(xs, ys).statistic
            assert pearson_correlation(xs, ys) == pytest.approx(expected, abs=1e-12)

    def test_perfect_and_anti(self):
        xs = np.arange(5.0)
        assert pearson_correlation(xs, 2 * xs + 1) == pytest.approx(1.0)
        assert pearson_correlation(xs, -xs) == pytest.approx(-1.0)

    def test_zero_variance_raises(self):
        with pytest.raises(UndefinedStatisticError):
            pearson_correlation([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])


class TestKendallTau:
    def test_matches_brute_force_with_ties(self):
        rng = np.random.default_rng(1)
        for _ in range(40):
            n = int(rng.integers(3, 25))
            xs = rng.integers(0, 6, size=n).astype(float)  # plenty of ties
            ys = rng.integers(0, 6, size=n).astype(float)
            if len(np.unique(xs)) < 2 or len(np.unique(ys)) < 2:
                continue
            assert kendall_tau(xs, ys) == pytest.approx(
                brute_force_tau_b(xs, ys), abs=1e-12
            )

    def test_undefined_raises(self):
        with pytest.raises(UndefinedStatisticError):
            kendall_tau([1.0, 1.0], [1.0, 2.0])


class TestPermutationTest:
    def test_strong_correlation_small_p(self):
        xs = np.arange(10.0)
        ys = 2.0 * xs + 0.1
        p = permutation_test_correlation(xs, ys, n_perm=999, seed=0)
        assert p <= 0.01

    def test_p_value_range_and_formula(self):
        rng = np.random.default_rng(2)
        xs = rng.normal(size=8)
        ys = rng.normal(size=8)
        for n_perm in (9, 99, 499):
            p = permutation_test_correlation(xs, ys, n_perm=n_perm, seed=5)
            assert 1.0 / (n_perm + 1) <= p <= 1.0
            # (1 + hits) / (n_perm + 1) always lands on this lattice
            assert (p * (n_perm + 1)) == pytest.approx(round(p * (n_perm + 1)))

    def test_deterministic_in_seed(self):
        xs = np.arange(6.0)
        ys = np.array([0.3, 2.0, 1.1, 3.0, 2.2, 4.0])
        a = permutation_test_correlation(xs, ys, n_perm=200, seed=7)
        b = permutation_test_correlation(xs, ys, n_perm=200, seed=7)
        assert a == b

    def test_null_calibration(self):
        """Under independence the p-values should not pile up near zero."""
        rng = np.random.default_rng(3)
        pvals = []
        for i in range(100):
            xs = rng.normal(size=10)
            ys = rng.normal(size=10)
            pvals.append(permutation_test_correlation(xs, ys, n_perm=99, seed=i))
        frac_small = np.mean(np.asarray(pvals) <= 0.1)
        assert frac_small <= 0.2

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            permutation_test_correlation([1.0, 2.0], [1.0, 2.0], n_perm=10)
        with pytest.raises(ValueError):
            permutation_test_correlation([1.0, 2.0, 3.0], [1.0, 2.0, 3.0], n_perm=0)
