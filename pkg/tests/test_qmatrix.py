import numpy as np
import pytest
from hypothesis import given, strategies as st

from qmap.forward.truth import random_unit_vectors
from qmap.qmatrix import (QmatrixConfig, QmatrixShapeError, bin_index, encode, encode_2d, encode_3d)
from qmap.scheme import GradientScheme, group_shells, normalize_qpoints


def random_scheme(rng, n=None, shells=1):
    n = n or int(rng.integers(10, 60))
    bvals = np.concatenate([np.full(n, b) for b in rng.choice([300, 700, 1000, 1300], shells, replace=False)])
    return GradientScheme(bvals.astype(float), random_unit_vectors(rng, len(bvals)))


class TestBinIndex:
    def test_edges(self):
        assert bin_index(-1.0, 20) == 0
        assert bin_index(1.0, 20) == 19
        assert bin_index(0.0, 20) == 10

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            bin_index(1.01, 20)

    @given(st.floats(-1, 1), st.integers(1, 30))
    def test_range(self, c, q):
        i = bin_index(c, q)
        assert 0 <= i < q
        # the cell's interval contains c
        lo = -1 + 2 * i / q
        assert lo - 1e-12 <= c <= lo + 2 / q + 1e-12


class TestEncode2d:
    def test_empty(self):
        cfg = QmatrixConfig(q_n=20)
        qm = encode_2d(np.zeros((0, 3)), np.zeros(0), cfg)
        assert qm.data.shape == (20, 20, 3) and not qm.data.any() and not qm.counts.any()

    def test_single_point(self):
        qm = encode_2d([[0, 0, 1.0]], [0.5], QmatrixConfig(q_n=20))
        expected = np.zeros((20, 20, 3))
        expected[10, 10, 0] = 0.5     # xy
        expected[10, 19, 1] = 0.5     # yz
        expected[10, 19, 2] = 0.5     # xz
        np.testing.assert_array_equal(qm.data, expected)
        assert qm.counts.sum() == 3

    def test_mean_rule(self):
        qm = encode_2d([[0.1, 0.1, 0.1], [0.11, 0.11, 0.11]], [0.4, 0.6], QmatrixConfig(q_n=4))
        assert qm.data[2, 2, 0] == pytest.approx(0.5)
        assert qm.counts[2, 2, 0] == 2

    def test_per_shell_layout(self, rng):
        s = random_scheme(rng, 20, shells=3)
        cfg = QmatrixConfig(q_n=8, b_norm=2300, per_shell=True, n_shells=3)
        qm = encode(s, np.ones(len(s)), cfg)
        assert qm.data.shape == (8, 8, 9)
        # each shell's three planes count every member once
        assert np.all(qm.counts.sum(axis=(0, 1)) == 20)

    def test_per_shell_shell_count_mismatch(self, rng):
        s = random_scheme(rng, 20, shells=2)
        cfg = QmatrixConfig(q_n=8, per_shell=True, n_shells=3)
        with pytest.raises(QmatrixShapeError):
            encode(s, np.ones(len(s)), cfg)

    def test_batch_matches_single(self, rng):
        s = random_scheme(rng)
        sig = rng.uniform(0, 1, (4, len(s)))
        cfg = QmatrixConfig(q_n=10)
        batch = encode(s, sig, cfg).data
        for i in range(4):
            np.testing.assert_array_equal(batch[i], encode(s, sig[i], cfg).data)


class TestEncode3d:
    def test_single_point(self):
        qm = encode_3d([[0, 0, 0.5]], [0.8], QmatrixConfig(q_n=10, variant="3d"))
        assert qm.data[5, 5, 7] == pytest.approx(0.8)
        assert qm.data.sum() == pytest.approx(0.8)

    def test_refinement(self, rng):
        s = random_scheme(rng, 40)
        sig = rng.uniform(0.1, 1, len(s))
        n5 = np.count_nonzero(encode(s, sig, QmatrixConfig(q_n=5, variant="3d")).data)
        n25 = np.count_nonzero(encode(s, sig, QmatrixConfig(q_n=25, variant="3d")).data)
        assert n25 >= n5


@given(st.integers(0, 2**31), st.sampled_from(["2d", "3d"]))
def test_permutation_invariance(seed, variant):
    rng = np.random.default_rng(seed)
    s = random_scheme(rng)
    sig = rng.uniform(0, 1, len(s))
    cfg = QmatrixConfig(q_n=int(rng.integers(3, 12)), variant=variant)
    perm = rng.permutation(len(s))
    a = encode(s, sig, cfg)
    b = encode(s.take(perm), sig[perm], cfg)
    np.testing.assert_array_equal(a.data, b.data)
    np.testing.assert_array_equal(a.counts, b.counts)


@given(st.integers(0, 2**31))
def test_mean_rule_conservation(seed):
    rng = np.random.default_rng(seed)
    s = random_scheme(rng)
    sig = rng.uniform(0, 1, len(s))
    qm = encode(s, sig, QmatrixConfig(q_n=6))
    for ch in range(3):
        assert np.sum(qm.data[..., ch] * qm.counts[..., ch]) == pytest.approx(sig.sum(), rel=1e-12)


def test_identical_geometry_identical_qmatrix(rng):
    # b=700 under b_norm=1400 and b=1000 under b_norm=2000 land on the same q-points
    g = random_unit_vectors(rng, 30)
    sig = rng.uniform(0, 1, 30)
    a = GradientScheme(np.full(30, 700.0), g)
    b = GradientScheme(np.full(30, 1000.0), g)
    np.testing.assert_allclose(normalize_qpoints(a, 1400.0), normalize_qpoints(b, 2000.0), rtol=1e-15)
    qa = encode(a, sig, QmatrixConfig(q_n=20, b_norm=1400.0))
    qb = encode(b, sig, QmatrixConfig(q_n=20, b_norm=2000.0))
    np.testing.assert_array_equal(qa.data, qb.data)
