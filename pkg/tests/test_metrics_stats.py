import itertools
from math import comb

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import mannwhitneyu

from qmap.harness.metrics import MetricError, nrmse, nrmse_per_parameter
from qmap.harness.stats import exact_rank_sum_p, rank_sum_counts, wilcoxon_rank_sum


class TestNrmse:
    def test_values(self):
        assert nrmse([1, 2], [1, 2]) == 0.0
        assert nrmse([0, 0, 0], [1, -2, 3]) == pytest.approx(100.0)
        assert nrmse([1, 1], [1, 2]) == pytest.approx(100 / np.sqrt(5))
        assert nrmse([1, 1], [1, 2]) == pytest.approx(44.72, abs=5e-3)

    def test_mask(self):
        assert nrmse([1, 5], [1, 2], mask=[True, False]) == 0.0

    def test_errors(self):
        with pytest.raises(MetricError):
            nrmse([0, 0], [0, 0])
        with pytest.raises(MetricError):
            nrmse([1], [1, 2])
        with pytest.raises(MetricError):
            nrmse([1, 2], [1, 2], mask=[False, False])

    @given(st.lists(st.floats(-10, 10), min_size=2, max_size=20), st.floats(0.1, 100), st.booleans())
    def test_scale_equivariance(self, vals, c, neg):
        ref = np.asarray(vals) + 20.0
        pred = ref[::-1]
        c = -c if neg else c
        assert nrmse(c * pred, c * ref) == pytest.approx(nrmse(pred, ref), rel=1e-9)

    def test_per_parameter(self):
        ref = np.ones((2, 2, 2))
        pred = ref.copy()
        pred[..., 1] = 0
        out = nrmse_per_parameter(pred, ref, ["a", "b"])
        assert out == {"a": 0.0, "b": 100.0}


def brute_force_p(a, b):
    """Two-sided p by enumerating every assignment of ranks to the first sample."""
    n, total = len(a), len(a) + len(b)
    pooled = np.concatenate([a, b])
    ranks = np.argsort(np.argsort(pooled)) + 1
    w = ranks[:n].sum()
    sums = [sum(c) for c in itertools.combinations(range(1, total + 1), n)]
    lower = sum(s <= w for s in sums)
    upper = sum(s >= w for s in sums)
    return min(1.0, 2 * min(lower, upper) / len(sums))


class TestRankSum:
    def test_complete_separation(self):
        r = wilcoxon_rank_sum([1, 2, 3, 4, 5], [6, 7, 8, 9, 10])
        assert r.exact and r.p == pytest.approx(2 / comb(10, 5), abs=1e-12)
        assert r.p == pytest.approx(0.00794, abs=1e-5)

    def test_identical_exact_symmetric(self):
        # identical lists tie everything: the exact-sized problem falls back
        r = wilcoxon_rank_sum([1, 2, 3, 4, 5], [1, 2, 3, 4, 5])
        assert r.p == pytest.approx(1.0) and r.tie_fallback and not r.exact

    def test_three_by_three_overlap(self):
        a, b = [1.0, 4.0, 5.0], [2.0, 3.0, 6.0]
        assert wilcoxon_rank_sum(a, b).p == pytest.approx(brute_force_p(a, b), abs=1e-15)
        assert len(list(itertools.combinations(range(6), 3))) == 20

    @given(st.integers(0, 2**31), st.integers(1, 7), st.integers(1, 7))
    def test_exact_vs_brute_force_and_scipy(self, seed, n, m):
        rng = np.random.default_rng(seed)
        a, b = rng.normal(0, 1, n), rng.normal(0.5, 1, m)
        r = wilcoxon_rank_sum(a, b)
        assert r.exact
        assert r.p == pytest.approx(brute_force_p(a, b), abs=1e-12)
        ref = mannwhitneyu(a, b, alternative="two-sided", method="exact").pvalue
        assert r.p == pytest.approx(ref, abs=1e-12)

    @pytest.mark.parametrize("n,total", [(1, 1), (3, 6), (5, 10), (7, 20)])
    def test_counts_sum(self, n, total):
        counts = rank_sum_counts(n, total)
        assert sum(counts) == comb(total, n)
        # probabilities over the rank-sum distribution add to one
        assert sum(c / comb(total, n) for c in counts) == pytest.approx(1.0, abs=1e-12)

    def test_normal_branch_large(self, rng):
        a, b = rng.normal(0, 1, 30), rng.normal(1, 1, 30)
        r = wilcoxon_rank_sum(a, b)
        ref = mannwhitneyu(a, b, alternative="two-sided", method="asymptotic", use_continuity=True).pvalue
        assert not r.exact and r.p == pytest.approx(ref, rel=1e-9)

    def test_ties_fall_back(self):
        r = wilcoxon_rank_sum([1, 2, 2, 3], [2, 4, 5])
        ref = mannwhitneyu([1, 2, 2, 3], [2, 4, 5], alternative="two-sided", method="asymptotic").pvalue
        assert r.tie_fallback and r.p == pytest.approx(ref, rel=1e-9)

    def test_p_capped(self):
        assert exact_rank_sum_p(8, 2, 3) <= 1.0

    def test_empty(self):
        with pytest.raises(ValueError):
            wilcoxon_rank_sum([], [1.0])
