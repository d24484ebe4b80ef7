"""Tensor containers and CP algebra kernels against index-map oracles."""

import numpy as np
import pytest

from cpadmm.tensors import (
    CooTensor,
    DenseTensor,
    KruskalModel,
    fold,
    gram_hadamard,
    khatri_rao,
    mttkrp,
    reconstruct,
    rfe,
    unfold,
)
from conftest import oracle_kr, oracle_mttkrp, oracle_reconstruct, oracle_unfold, random_model


def rank1_tensor(a, b, c):
    return DenseTensor(np.einsum("i,j,k->ijk", a, b, c))


class TestContainers:
    def test_orders_3_and_4_only(self):
        with pytest.raises(ValueError):
            DenseTensor(np.zeros((2, 2)))
        with pytest.raises(ValueError):
            DenseTensor(np.zeros((2, 2, 2, 2, 2)))
        assert DenseTensor(np.zeros((2, 2, 2))).order == 3
        assert DenseTensor(np.zeros((2, 2, 2, 2))).order == 4

    def test_dense_values_read_only(self):
        t = DenseTensor(np.ones((2, 2, 2)))
        with pytest.raises(ValueError):
            t.values[0, 0, 0] = 5.0

    def test_coo_sorts_and_validates(self):
        t = CooTensor((2, 2, 2), [[1, 1, 1], [0, 0, 0]], [2.0, 1.0])
        assert t.indices.tolist() == [[0, 0, 0], [1, 1, 1]]
        assert t.vals.tolist() == [1.0, 2.0]
        with pytest.raises(ValueError):
            CooTensor((2, 2, 2), [[0, 0, 0], [0, 0, 0]], [1.0, 2.0])
        with pytest.raises(ValueError):
            CooTensor((2, 2, 2), [[0, 0, 2]], [1.0])

    def test_coo_dense_round_trip(self, rng):
        t = DenseTensor(rng.random((3, 4, 2)))
        assert CooTensor.from_dense(t).to_dense() == t

    def test_model_validation(self):
        with pytest.raises(ValueError):
            KruskalModel([np.ones((3, 2)), np.ones((4, 3)), np.ones((5, 2))])
        with pytest.raises(ValueError):
            KruskalModel([np.ones((3, 2)), np.full((4, 2), np.nan), np.ones((5, 2))])
        m = KruskalModel([np.ones((3, 2)), np.ones((4, 2)), np.ones((5, 2))])
        assert m.rank == 2 and m.dims == (3, 4, 5)


class TestUnfold:
    def test_rank1_ones(self):
        t = rank1_tensor(np.array([1.0, 2.0]), np.ones(2), np.ones(2))
        assert unfold(t, 1).tolist() == [[1, 1, 1, 1], [2, 2, 2, 2]]

    def test_linear_index_map(self):
        # t(i,j,k) = i + 2j + 4k; frozen row from the index-map oracle
        vals = np.fromfunction(lambda i, j, k: i + 2 * j + 4 * k, (2, 2, 2))
        t = DenseTensor(vals)
        m1 = unfold(t, 1)
        assert m1[0].tolist() == [0.0, 2.0, 4.0, 6.0]
        assert np.array_equal(m1, oracle_unfold(vals, 1))

    @pytest.mark.parametrize("dims", [(3, 4, 5), (2, 3, 4, 2)])
    def test_matches_oracle_every_mode(self, rng, dims):
        vals = rng.random(dims)
        t = DenseTensor(vals)
        for mode in range(1, len(dims) + 1):
            assert np.array_equal(unfold(t, mode), oracle_unfold(vals, mode))

    @pytest.mark.parametrize("dims", [(3, 4, 5), (2, 3, 4, 2)])
    def test_fold_round_trip(self, rng, dims):
        t = DenseTensor(rng.random(dims))
        for mode in range(1, len(dims) + 1):
            assert fold(unfold(t, mode), mode, dims) == t

    def test_mode_out_of_range(self):
        t = DenseTensor(np.zeros((2, 2, 2)))
        for mode in (0, 4):
            with pytest.raises(ValueError):
                unfold(t, mode)


class TestKhatriRao:
    def test_column_vectors(self):
        c = np.array([[1.0], [2.0]])
        b = np.array([[3.0], [4.0]])
        assert khatri_rao([c, b]).ravel().tolist() == [3.0, 4.0, 6.0, 8.0]

    def test_identity_columns(self):
        eye = np.eye(2)
        assert khatri_rao([eye, eye]).tolist() == [[1, 0], [0, 0], [0, 0], [0, 1]]

    def test_ones_row_absorbs(self, rng):
        c = rng.random((4, 3))
        assert np.array_equal(khatri_rao([c, np.ones((1, 3))]), c)

    def test_matches_kron_oracle(self, rng):
        mats = [rng.random((d, 3)) for d in (4, 2, 3)]
        assert np.allclose(khatri_rao(mats), oracle_kr(mats), rtol=0, atol=1e-15)

    def test_mismatched_columns(self):
        with pytest.raises(ValueError):
            khatri_rao([np.ones((2, 2)), np.ones((3, 1))])


class TestGramHadamard:
    def test_identity_factors(self):
        m = KruskalModel([np.ones((2, 2)), np.eye(2), np.eye(2)])
        assert np.array_equal(gram_hadamard(m, 1), np.eye(2))

    def test_matches_kr_gram(self, rng):
        b, c = rng.random((3, 2)), rng.random((4, 2))
        m = KruskalModel([rng.random((5, 2)), b, c])
        kr = oracle_kr([c, b])
        g = gram_hadamard(m, 1)
        assert np.linalg.norm(g - kr.T @ kr) <= 1e-12 * np.linalg.norm(g)

    def test_order4_nested(self, rng):
        m = random_model(rng, (3, 4, 2, 5), 3)
        a, b, c, d = m.factors
        expected = (d.T @ d) * (c.T @ c) * (b.T @ b)
        assert np.allclose(gram_hadamard(m, 1), expected, rtol=1e-14)
        kr = oracle_kr([d, c, b])
        assert np.linalg.norm(gram_hadamard(m, 1) - kr.T @ kr) <= 1e-12 * np.linalg.norm(kr.T @ kr)

    def test_skip_out_of_range(self, rng):
        with pytest.raises(ValueError):
            gram_hadamard(random_model(rng, (2, 2, 2), 1), 5)


class TestMttkrp:
    def test_ones_factors_sum_rows(self):
        t = rank1_tensor(np.array([1.0, 2.0]), np.ones(2), np.ones(2))
        m = KruskalModel([np.ones((2, 1)), np.ones((2, 1)), np.ones((2, 1))])
        assert mttkrp(t, m, 1).tolist() == [[4.0], [8.0]]

    @pytest.mark.parametrize("dims", [(3, 4, 5), (3, 2, 4, 2)])
    def test_dense_matches_oracle(self, rng, dims):
        vals = rng.random(dims)
        m = random_model(rng, dims, 2)
        t = DenseTensor(vals)
        for mode in range(1, len(dims) + 1):
            got = mttkrp(t, m, mode)
            want = oracle_mttkrp(vals, list(m.factors), mode)
            assert np.linalg.norm(got - want) <= 1e-12 * np.linalg.norm(want)

    def test_sparse_equals_dense(self, rng):
        vals = rng.random((4, 3, 5))
        vals[vals < 0.6] = 0.0
        dense = DenseTensor(vals)
        sparse = CooTensor.from_dense(dense)
        m = random_model(rng, (4, 3, 5), 3)
        for mode in (1, 2, 3):
            d = mttkrp(dense, m, mode)
            s = mttkrp(sparse, m, mode)
            assert np.linalg.norm(d - s) <= 1e-12 * np.linalg.norm(d)

    def test_dim_mismatch(self, rng):
        t = DenseTensor(rng.random((3, 3, 3)))
        with pytest.raises(ValueError):
            mttkrp(t, random_model(rng, (3, 3, 4), 2), 1)


class TestReconstructRfe:
    def test_rank1_broadcast(self):
        m = KruskalModel([np.array([[1.0], [2.0]]), np.ones((2, 1)), np.ones((2, 1))])
        t = reconstruct(m)
        assert np.array_equal(t.values[0], np.ones((2, 2)))
        assert np.array_equal(t.values[1], 2 * np.ones((2, 2)))

    def test_zero_column(self):
        m = KruskalModel([np.zeros((2, 1)), np.ones((2, 1)), np.ones((2, 1))])
        assert not reconstruct(m).values.any()

    def test_unfolding_identity(self, rng):
        m = random_model(rng, (4, 3, 5), 3)
        w = unfold(reconstruct(m), 1)
        want = m.factors[0] @ khatri_rao([m.factors[2], m.factors[1]]).T
        assert np.linalg.norm(w - want) <= 1e-12 * np.linalg.norm(want)
        assert np.allclose(reconstruct(m).values, oracle_reconstruct(list(m.factors)))

    def test_rfe_exact_is_zero(self, rng):
        m = random_model(rng, (3, 4, 2), 2)
        assert rfe(reconstruct(m), m) == 0.0

    def test_rfe_equals_noise_ratio(self, rng):
        m = random_model(rng, (5, 4, 3), 2)
        clean = reconstruct(m).values
        noise = 0.1 * np.linalg.norm(clean) / np.sqrt(clean.size) * rng.standard_normal(clean.shape)
        t = DenseTensor(clean + noise)
        expected = np.linalg.norm(noise) / np.linalg.norm(clean + noise)
        assert rfe(t, m) == pytest.approx(expected, rel=1e-12)

    def test_rfe_zero_model_is_one(self, rng):
        t = DenseTensor(rng.random((3, 3, 3)))
        m = KruskalModel([np.zeros((3, 1))] * 3)
        assert rfe(t, m) == pytest.approx(1.0)

    def test_rfe_zero_tensor_rejected(self):
        t = DenseTensor(np.zeros((2, 2, 2)))
        with pytest.raises(ValueError):
            rfe(t, KruskalModel([np.ones((2, 1))] * 3))

    def test_rfe_sparse_matches_dense(self, rng):
        vals = rng.random((4, 3, 5))
        vals[vals < 0.5] = 0.0
        dense = DenseTensor(vals)
        m = random_model(rng, (4, 3, 5), 2)
        assert rfe(CooTensor.from_dense(dense), m) == pytest.approx(rfe(dense, m), rel=1e-10)


def test_partitioned_unfolding_identity(rng):
    # row/column blocks of A kr([C,B])^T equal the blockwise products
    a, b, c = rng.random((6, 3)), rng.random((4, 3)), rng.random((5, 3))
    full = a @ khatri_rao([c, b]).T
    j = b.shape[0]
    row_split, col_split = [0, 2, 6], [0, 3, 5]
    for bi in range(2):
        for bj in range(2):
            rows = slice(row_split[bi], row_split[bi + 1])
            cols = slice(col_split[bj] * j, col_split[bj + 1] * j)
            want = a[rows] @ khatri_rao([c[col_split[bj]:col_split[bj + 1]], b]).T
            got = full[rows, cols]
            assert np.linalg.norm(got - want) <= 1e-12 * np.linalg.norm(want)
