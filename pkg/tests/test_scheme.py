import numpy as np
import pytest
from hypothesis import given, strategies as st

from qmap.scheme import (GradientScheme, SchemeError, condition_number, dti_design, group_shells,
                         normalize_qpoints, parse_scheme, select_subset)


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def random_scheme(rng, n, b=1000.0):
    g = rng.standard_normal((n, 3))
    return GradientScheme.from_arrays(np.full(n, b), g)


class TestParse:
    def test_table_row(self):
        s = parse_scheme("700 0.803 -0.064 -0.593\n")
        assert s.bvals[0] == 700
        np.testing.assert_allclose(s.bvecs[0], unit([0.803, -0.064, -0.593]), atol=1e-15)

    def test_b0_rows_counted(self):
        s = parse_scheme("0 0 0 0\n0\n# comment\n1000 1 0 0\n")
        assert s.n_b0 == 2 and len(s) == 1

    def test_arity_error_names_line(self):
        with pytest.raises(SchemeError, match="line 2"):
            parse_scheme("1000 1 0 0\n1000 1 1\n")

    def test_negative_b(self):
        with pytest.raises(SchemeError, match="line 1"):
            parse_scheme("-5 1 0 0\n")

    def test_zero_direction(self):
        with pytest.raises(SchemeError, match="zero-length"):
            parse_scheme("1000 0 0 0\n")

    def test_non_numeric(self):
        with pytest.raises(SchemeError, match="line 1"):
            parse_scheme("1000 x 0 0\n")

    def test_roundtrip_preserves_order(self, rng):
        s = random_scheme(rng, 12)
        back = parse_scheme(s.to_text())
        np.testing.assert_allclose(back.bvecs, s.bvecs, atol=1e-6)
        np.testing.assert_array_equal(back.bvals, s.bvals)

    @pytest.mark.parametrize("name,counts", [("dti_a", {700: 32}), ("dti_b", {1000: 30}),
                                             ("noddi_a", {300: 8, 700: 32, 2000: 64}),
                                             ("noddi_b", {300: 8, 700: 30, 2000: 60})])
    def test_builtin_tables(self, name, counts):
        s = GradientScheme.builtin(name)
        shells = group_shells(s)
        assert {round(sh.b): len(sh.indices) for sh in shells.shells} == counts
        assert s.n_b0 > 0

    def test_unknown_builtin(self):
        with pytest.raises(SchemeError):
            GradientScheme.builtin("nope")


class TestQpoints:
    def test_radius_one_at_normalization(self):
        s = GradientScheme(np.array([1300.0]), np.array([[0, 0, 1.0]]))
        np.testing.assert_allclose(normalize_qpoints(s, 1300), [[0, 0, 1]])

    def test_quarter_b_half_radius(self):
        s = GradientScheme(np.array([325.0]), np.array([[1.0, 0, 0]]))
        np.testing.assert_allclose(normalize_qpoints(s, 1300), [[0.5, 0, 0]])

    def test_hand_value(self):
        g = unit([0.803, -0.064, -0.593])
        s = GradientScheme(np.array([700.0]), g[None])
        np.testing.assert_allclose(normalize_qpoints(s, 1300)[0], np.sqrt(700 / 1300) * g)

    def test_out_of_range(self):
        s = GradientScheme(np.array([2000.0]), np.array([[1.0, 0, 0]]))
        with pytest.raises(SchemeError, match="exceeds"):
            normalize_qpoints(s, 1300)

    @given(st.lists(st.floats(1, 1300), min_size=2, max_size=10))
    def test_radius_monotone_in_b(self, bs):
        s = GradientScheme(np.array(bs), np.tile([0.0, 1.0, 0.0], (len(bs), 1)))
        r = np.linalg.norm(normalize_qpoints(s, 1300), axis=1)
        order = np.argsort(bs)
        assert np.all(np.diff(r[order]) >= 0)
        assert np.all(r <= 1 + 1e-9)


class TestShells:
    def test_noddi_three_shells(self):
        b = np.array([300] * 8 + [700] * 32 + [2000] * 64, dtype=float)
        s = GradientScheme.from_arrays(b, np.tile([1.0, 0, 0], (len(b), 1)))
        part = group_shells(s, 50)
        np.testing.assert_allclose(part.bvalues, [300, 700, 2000])

    def test_single_shell(self, rng):
        assert len(group_shells(random_scheme(rng, 10))) == 1

    def test_within_tolerance(self):
        s = GradientScheme.from_arrays([690.0, 710.0], [[1, 0, 0], [0, 1, 0]])
        part = group_shells(s, 50)
        assert len(part) == 1 and part.bvalues[0] == pytest.approx(700)

    @given(st.lists(st.floats(10, 3000), min_size=1, max_size=30), st.floats(0, 100))
    def test_partition_invariants(self, bs, tol):
        s = GradientScheme(np.array(bs), np.tile([0.0, 0.0, 1.0], (len(bs), 1)))
        part = group_shells(s, tol)
        members = np.sort(np.concatenate([sh.indices for sh in part.shells]))
        np.testing.assert_array_equal(members, np.arange(len(bs)))
        assert np.all(np.diff(part.bvalues) > 0)
        for sh in part.shells:
            np.testing.assert_allclose(sh.b, np.mean(np.array(bs)[sh.indices]))


class TestConditionNumber:
    def test_coplanar_is_infinite(self):
        ang = np.linspace(0, np.pi, 6, endpoint=False)
        g = np.stack([np.cos(ang), np.sin(ang), np.zeros(6)], axis=1)
        assert condition_number(g) == np.inf

    def test_svd_oracle_dti_a(self):
        s = GradientScheme.builtin("dti_a")
        # independent route: eigenvalues of the normal matrix
        g = s.bvecs
        X = np.column_stack([g[:, 0]**2, g[:, 1]**2, g[:, 2]**2,
                             2 * g[:, 0] * g[:, 1], 2 * g[:, 0] * g[:, 2], 2 * g[:, 1] * g[:, 2]])
        ev = np.linalg.eigvalsh(X.T @ X)
        assert condition_number(s) == pytest.approx(np.sqrt(ev[-1] / ev[0]), rel=1e-9)
        assert np.isfinite(condition_number(s))

    def test_permutation_and_sign_invariance(self, rng):
        s = random_scheme(rng, 20)
        perm = rng.permutation(20)
        flips = np.where(rng.random(20) < 0.5, -1.0, 1.0)[:, None]
        c = condition_number(s)
        assert condition_number(s.bvecs[perm]) == pytest.approx(c, rel=1e-12)
        assert condition_number(s.bvecs * flips) == pytest.approx(c, rel=1e-12)

    def test_needs_six(self, rng):
        with pytest.raises(SchemeError):
            condition_number(random_scheme(rng, 5))

    def test_design_rows(self):
        np.testing.assert_allclose(dti_design([[1, 0, 0]]), [[1, 0, 0, 0, 0, 0]])


class TestSubset:
    def test_full_size_returns_original(self):
        s = GradientScheme.builtin("dti_a")
        assert select_subset(s, 32) is s

    def test_deterministic(self):
        s = GradientScheme.builtin("dti_a")
        a = select_subset(s, 6, 100, seed=3)
        b = select_subset(s, 6, 100, seed=3)
        np.testing.assert_array_equal(a.bvecs, b.bvecs)

    def test_beats_random_mean(self):
        s = GradientScheme.builtin("dti_a")
        best = condition_number(select_subset(s, 6, 500, seed=0))
        rng = np.random.default_rng(1)
        conds = [condition_number(s.bvecs[rng.choice(32, 6, replace=False)]) for _ in range(500)]
        finite = np.array(conds)[np.isfinite(conds)]
        assert best <= finite.mean()

    def test_too_many(self):
        with pytest.raises(SchemeError):
            select_subset(GradientScheme.builtin("dti_a"), 40)

    def test_per_shell_counts(self):
        s = GradientScheme.builtin("noddi_a")
        sub = select_subset(s, [4, 10, 20], 50, seed=0)
        counts = [len(sh.indices) for sh in group_shells(sub).shells]
        assert counts == [4, 10, 20]
