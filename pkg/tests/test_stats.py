import math

import numpy as np
import pytest
import scipy.special
import scipy.stats

from topiclens.stats import betainc_reg, pearson_r, welch_t


class TestBetaInc:
    def test_matches_scipy_over_grid(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            a = float(rng.uniform(0.5, 50))
            b = float(rng.uniform(0.5, 50))
            x = float(rng.uniform(0, 1))
            assert betainc_reg(a, b, x) == pytest.approx(
                float(scipy.special.betainc(a, b, x)), abs=1e-12
            )

    def test_boundaries(self):
        assert betainc_reg(2.0, 3.0, 0.0) == 0.0
        assert betainc_reg(2.0, 3.0, 1.0) == 1.0

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            betainc_reg(-1.0, 2.0, 0.5)
        with pytest.raises(ValueError):
            betainc_reg(1.0, 2.0, 1.5)


class TestWelch:
    def test_identical_samples(self):
        r = welch_t([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        assert r.t == 0.0
        assert r.p_value == 1.0

    def test_textbook_example(self):
        r = welch_t([1, 2, 3, 4], [2, 3, 4, 5])
        assert r.t == pytest.approx(-1.0954451150103321, abs=1e-12)
        assert r.df == pytest.approx(6.0, abs=1e-12)
        assert r.p_value == pytest.approx(0.3153335962, abs=1e-9)

    def test_against_independent_implementation(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            a = rng.normal(0, 1, size=int(rng.integers(3, 40)))
            b = rng.normal(rng.uniform(-1, 1), rng.uniform(0.5, 2), size=int(rng.integers(3, 40)))
            mine = welch_t(a.tolist(), b.tolist())
            ref = scipy.stats.ttest_ind(a, b, equal_var=False)
            assert mine.t == pytest.approx(float(ref.statistic), rel=1e-10)
            assert mine.p_value == pytest.approx(float(ref.pvalue), rel=1e-8)

    def test_separated_samples_tiny_p(self):
        rng = np.random.default_rng(5)
        a = rng.normal(0, 1, 20)
        b = rng.normal(10, 1, 20)
        assert welch_t(a.tolist(), b.tolist()).p_value < 1e-6

    def test_errors(self):
        with pytest.raises(ValueError):
            welch_t([1.0], [1.0, 2.0])
        with pytest.raises(ValueError):
            welch_t([2.0, 2.0], [2.0, 2.0])  # both constant, equal means

    def test_constant_unequal_means(self):
        r = welch_t([1.0, 1.0], [2.0, 2.0])
        assert r.t == -math.inf
        assert r.p_value == 0.0


class TestPearson:
    def test_perfect_linear(self):
        assert pearson_r([1, 2, 3, 4], [3, 5, 7, 9]) == pytest.approx(1.0, abs=1e-12)
        assert pearson_r([1, 2, 3], [-1, -2, -3]) == pytest.approx(-1.0, abs=1e-12)

    def test_fixed_table_matches_formula(self):
        x = [0.1, 0.4, 0.5, 0.9, 1.3, 1.8, 2.0, 2.4, 2.9, 3.3]
        y = [1.2, 0.9, 1.4, 1.1, 1.9, 1.6, 2.4, 2.2, 2.1, 2.9]
        n = len(x)
        mx, my = sum(x) / n, sum(y) / n
        num = sum((a - mx) * (b - my) for a, b in zip(x, y))
        den = math.sqrt(sum((a - mx) ** 2 for a in x) * sum((b - my) ** 2 for b in y))
        assert pearson_r(x, y) == pytest.approx(num / den, abs=1e-12)

    def test_constant_series_error(self):
        with pytest.raises(ValueError):
            pearson_r([1.0, 1.0, 1.0], [1, 2, 3])

    def test_clipped_to_unit_range(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            x = rng.normal(0, 1, 10)
            y = 3 * x + rng.normal(0, 1e-9, 10)
            assert -1.0 <= pearson_r(x.tolist(), y.tolist()) <= 1.0
