"""Constraint projections against brute-force enumeration oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cpadmm.constraints import ConstraintSpec, is_feasible, project
from conftest import oracle_card_project, oracle_simplex_grid

NONNEG = ConstraintSpec.nonneg()
ROWSTOCH = ConstraintSpec.row_stochastic()


def matrices(max_dim=3):
    return st.integers(1, max_dim).flatmap(
        lambda r: st.integers(1, max_dim).flatmap(
            lambda c: st.lists(
                st.floats(-5, 5, allow_nan=False), min_size=r * c, max_size=r * c
            ).map(lambda v: np.array(v).reshape(r, c))
        )
    )


class TestSpec:
    def test_parse_round_trip(self):
        for name in ("nonneg", "nonneg_card:4", "row_stochastic"):
            assert ConstraintSpec.parse(name).name() == name

    def test_invalid(self):
        with pytest.raises(ValueError):
            ConstraintSpec.parse("nonneg_card:0")
        with pytest.raises(ValueError):
            ConstraintSpec.parse("boxed")
        with pytest.raises(ValueError):
            ConstraintSpec("nonneg", card=3)


class TestProject:
    def test_nonneg_clamps(self):
        assert project(np.array([[-1.0, 2.0]]), NONNEG).tolist() == [[0.0, 2.0]]

    def test_cardinality_example(self):
        m = np.array([[3.0, -1.0], [2.0, 5.0]])
        got = project(m, ConstraintSpec.nonneg_card(2))
        assert got.tolist() == [[3.0, 0.0], [0.0, 5.0]]
        oracle, dist = oracle_card_project(m, 2)
        assert np.array_equal(got, oracle)
        assert np.linalg.norm(got - m) == pytest.approx(dist)

    def test_cardinality_tie_breaks_row_major(self):
        m = np.array([[1.0, 2.0], [2.0, 0.5]])
        got = project(m, ConstraintSpec.nonneg_card(1))
        assert got.tolist() == [[0.0, 2.0], [0.0, 0.0]]

    def test_simplex_row_example(self):
        got = project(np.array([[2.0, 0.0]]), ROWSTOCH)
        assert got.tolist() == [[1.0, 0.0]]
        grid_best = oracle_simplex_grid(np.array([2.0, 0.0]))
        assert np.linalg.norm(got[0] - np.array([2.0, 0.0])) <= grid_best + 1e-3

    def test_simplex_rows_sum_to_one(self, rng):
        m = rng.standard_normal((6, 4)) * 2
        got = project(m, ROWSTOCH)
        assert np.all(got >= 0)
        assert np.allclose(got.sum(axis=1), 1.0, atol=1e-12)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            project(np.array([[np.nan]]), NONNEG)

    @pytest.mark.parametrize(
        "spec", [NONNEG, ConstraintSpec.nonneg_card(3), ROWSTOCH]
    )
    def test_output_feasible_at_zero_tol(self, rng, spec):
        for _ in range(20):
            m = rng.standard_normal((3, 3)) * 3
            assert is_feasible(project(m, spec), spec, 0.0)

    def test_cardinality_optimal_on_small(self, rng):
        spec = ConstraintSpec.nonneg_card(3)
        for _ in range(15):
            m = rng.standard_normal((3, 3)) * 2
            got = project(m, spec)
            _, best = oracle_card_project(m, 3)
            assert np.linalg.norm(got - m) <= best + 1e-12

    def test_simplex_optimal_on_small(self, rng):
        for n in (2, 3):
            for _ in range(8):
                v = rng.standard_normal(n) * 2
                got = project(v[None, :], ROWSTOCH)[0]
                best = oracle_simplex_grid(v)
                assert np.linalg.norm(got - v) <= best + 1e-3


class TestInvariants:
    @settings(max_examples=60, deadline=None)
    @given(matrices())
    def test_idempotent_nonneg(self, m):
        once = project(m, NONNEG)
        assert np.array_equal(project(once, NONNEG), once)

    @settings(max_examples=60, deadline=None)
    @given(matrices())
    def test_idempotent_cardinality(self, m):
        spec = ConstraintSpec.nonneg_card(2)
        once = project(m, spec)
        assert np.array_equal(project(once, spec), once)

    @settings(max_examples=60, deadline=None)
    @given(matrices())
    def test_idempotent_row_stochastic(self, m):
        once = project(m, ROWSTOCH)
        assert np.array_equal(project(once, ROWSTOCH), once)

    @pytest.mark.parametrize("spec", [NONNEG, ROWSTOCH])
    def test_non_expansive(self, rng, spec):
        for _ in range(40):
            a = rng.standard_normal((3, 4)) * 3
            b = rng.standard_normal((3, 4)) * 3
            lhs = np.linalg.norm(project(a, spec) - project(b, spec))
            assert lhs <= np.linalg.norm(a - b) * (1 + 1e-12) + 1e-15


class TestFeasible:
    def test_examples(self):
        assert is_feasible(np.array([[0.0, 1.0]]), NONNEG, 0.0)
        assert is_feasible(np.array([[-1e-12, 1.0]]), NONNEG, 1e-9)
        assert not is_feasible(np.array([[0.5, 0.6]]), ROWSTOCH, 1e-9)

    def test_cardinality_counts_support(self):
        spec = ConstraintSpec.nonneg_card(2)
        assert is_feasible(np.array([[1.0, 0.0], [2.0, 0.0]]), spec, 0.0)
        assert not is_feasible(np.array([[1.0, 1.0], [2.0, 0.0]]), spec, 0.0)
        # entries below tol neither violate sign nor count toward the support
        assert is_feasible(np.array([[1.0, 1e-12], [2.0, 0.0]]), spec, 1e-9)

    def test_negative_tol_rejected(self):
        with pytest.raises(ValueError):
            is_feasible(np.zeros((1, 1)), NONNEG, -1.0)
