"""Dense/sparse tensor containers and the CP algebra kernels built on them.

Conventions (fixed once, everything else is derived from them):

* Tensors are order 3 or 4, real, double precision.
* Element indices are zero-based; *modes* are numbered 1..N, matching the
  usual X^(1), X^(2), ... notation for unfoldings.
* The mode-1 unfolding of an I x J x K tensor places element (i, j, k) at
  row i, column j + k*J.  Equivalently, the columns are ordered with the
  lowest remaining mode varying fastest and the highest remaining mode
  slowest.  ``khatri_rao`` uses the matching row order, so
  ``unfold(t, 1) == A @ khatri_rao([C, B]).T`` for a rank-F model [A, B, C].
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

SUPPORTED_ORDERS = (3, 4)


def _check_dims(dims: Sequence[int]) -> tuple[int, ...]:
    dims = tuple(int(d) for d in dims)
    if len(dims) not in SUPPORTED_ORDERS:
        raise ValueError(f"tensor order must be 3 or 4, got {len(dims)}")
    if any(d < 1 for d in dims):
        raise ValueError(f"all extents must be >= 1, got {dims}")
    return dims


def _check_mode(mode: int, order: int) -> int:
    if not 1 <= mode <= order:
        raise ValueError(f"mode must be in 1..{order}, got {mode}")
    return int(mode)


class DenseTensor:
    """Immutable dense tensor, row-major in index order (i1, ..., iN)."""

    __slots__ = ("dims", "values", "_unfoldings", "_norm")

    def __init__(self, values: np.ndarray):
        values = np.array(values, dtype=np.float64, order="C")
        self.dims = _check_dims(values.shape)
        values.flags.writeable = False
        self.values = values
        self._unfoldings: dict[int, np.ndarray] = {}
        self._norm: float | None = None

    @property
    def order(self) -> int:
        return len(self.dims)

    def norm(self) -> float:
        """Frobenius norm, cached."""
        if self._norm is None:
            self._norm = float(np.linalg.norm(self.values))
        return self._norm

    def unfolding(self, mode: int) -> np.ndarray:
        """Mode-m unfolding as a contiguous read-only matrix, cached."""
        mode = _check_mode(mode, self.order)
        cached = self._unfoldings.get(mode)
        if cached is None:
            cached = unfold(self, mode)
            cached.flags.writeable = False
            self._unfoldings[mode] = cached
        return cached

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, DenseTensor)
            and self.dims == other.dims
            and np.array_equal(self.values, other.values)
        )

    def __repr__(self) -> str:
        return f"DenseTensor(dims={self.dims})"


class CooTensor:
    """Sparse tensor in coordinate form, entries sorted lexicographically."""

    __slots__ = ("dims", "indices", "vals")

    def __init__(self, dims: Sequence[int], indices: np.ndarray, vals: np.ndarray):
        self.dims = _check_dims(dims)
        indices = np.asarray(indices, dtype=np.int64).reshape(-1, len(self.dims))
        vals = np.asarray(vals, dtype=np.float64).reshape(-1)
        if indices.shape[0] != vals.shape[0]:
            raise ValueError("index rows and value count differ")
        if indices.size:
            if indices.min() < 0 or np.any(indices >= np.array(self.dims)):
                raise ValueError("entry index out of bounds")
            # lexicographic sort on (i1, ..., iN); lexsort keys go last-first
            order = np.lexsort(tuple(indices[:, m] for m in reversed(range(len(self.dims)))))
            indices = indices[order]
            vals = vals[order]
            if np.any(np.all(np.diff(indices, axis=0) == 0, axis=1)):
                raise ValueError("duplicate entry indices")
        indices.flags.writeable = False
        vals.flags.writeable = False
        self.indices = indices
        self.vals = vals

    @property
    def order(self) -> int:
        return len(self.dims)

    @property
    def nnz(self) -> int:
        return self.vals.shape[0]

    def norm(self) -> float:
        return float(np.linalg.norm(self.vals))

    def to_dense(self) -> DenseTensor:
        out = np.zeros(self.dims)
        out[tuple(self.indices[:, m] for m in range(self.order))] = self.vals
        return DenseTensor(out)

    @classmethod
    def from_dense(cls, t: DenseTensor, tol: float = 0.0) -> "CooTensor":
        mask = np.abs(t.values) > tol
        idx = np.argwhere(mask)
        return cls(t.dims, idx, t.values[mask])

    def __repr__(self) -> str:
        return f"CooTensor(dims={self.dims}, nnz={self.nnz})"


class KruskalModel:
    """List of factor matrices sharing a column count F (the CP rank)."""

    __slots__ = ("factors",)

    def __init__(self, factors: Sequence[np.ndarray]):
        factors = tuple(np.array(f, dtype=np.float64, order="C") for f in factors)
        if len(factors) not in SUPPORTED_ORDERS:
            raise ValueError(f"model must have 3 or 4 factors, got {len(factors)}")
        rank = factors[0].shape[1] if factors[0].ndim == 2 else -1
        for m, f in enumerate(factors, start=1):
            if f.ndim != 2 or f.shape[0] < 1 or f.shape[1] < 1:
                raise ValueError(f"factor {m} must be a non-empty matrix")
            if f.shape[1] != rank:
                raise ValueError("all factors must share the same column count")
            if not np.all(np.isfinite(f)):
                raise ValueError(f"factor {m} has non-finite entries")
            f.flags.writeable = False
        self.factors = factors

    @property
    def order(self) -> int:
        return len(self.factors)

    @property
    def rank(self) -> int:
        return self.factors[0].shape[1]

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(f.shape[0] for f in self.factors)

    def factor(self, mode: int) -> np.ndarray:
        return self.factors[_check_mode(mode, self.order) - 1]

    def __repr__(self) -> str:
        return f"KruskalModel(dims={self.dims}, rank={self.rank})"


def _unfold_axes(mode: int, order: int) -> tuple[int, ...]:
    # row axis first, then the other axes from highest to lowest so the
    # lowest remaining mode varies fastest along the columns
    others = [m for m in range(1, order + 1) if m != mode]
    return tuple(m - 1 for m in [mode] + others[::-1])


def unfold(t: DenseTensor, mode: int) -> np.ndarray:
    """Mode-m unfolding: dims[m] x prod(other dims), column j + k*J order."""
    mode = _check_mode(mode, t.order)
    axes = _unfold_axes(mode, t.order)
    return np.ascontiguousarray(
        t.values.transpose(axes).reshape(t.dims[mode - 1], -1)
    )


def fold(matrix: np.ndarray, mode: int, dims: Sequence[int]) -> DenseTensor:
    """Inverse of :func:`unfold` for the given mode and full dims."""
    dims = _check_dims(dims)
    mode = _check_mode(mode, len(dims))
    axes = _unfold_axes(mode, len(dims))
    shape = tuple(dims[a] for a in axes)
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.shape != (dims[mode - 1], math.prod(dims) // dims[mode - 1]):
        raise ValueError("matrix shape does not match dims/mode")
    inverse = np.argsort(axes)
    return DenseTensor(matrix.reshape(shape).transpose(inverse))


def khatri_rao(mats: Sequence[np.ndarray]) -> np.ndarray:
    """Columnwise Kronecker product, right-associated.

    For ``[C, B]`` with C (K x F) and B (J x F), row j + k*J of the result
    is ``C[k, :] * B[j, :]``: the first argument indexes slowest.  Longer
    lists nest to the right, e.g. ``[D, C, B]`` gives D o (C o B).
    """
    mats = [np.asarray(m, dtype=np.float64) for m in mats]
    if not mats:
        raise ValueError("khatri_rao needs at least one matrix")
    cols = mats[0].shape[1] if mats[0].ndim == 2 else -1
    for m in mats:
        if m.ndim != 2 or m.shape[1] != cols:
            raise ValueError("khatri_rao inputs must share a column count")
    out = mats[-1]
    for m in mats[-2::-1]:
        out = (m[:, None, :] * out[None, :, :]).reshape(-1, cols)
    return out


def _companion_modes(mode: int, order: int) -> list[int]:
    # Khatri-Rao companion order for an unfolding: highest mode first.
    return [m for m in range(order, 0, -1) if m != mode]


def gram_hadamard(model: KruskalModel, skip: int) -> np.ndarray:
    """Hadamard product of the Gram matrices of all factors except ``skip``.

    Equal to ``K.T @ K`` for ``K = khatri_rao(companions)`` without ever
    forming K; symmetric positive semidefinite.
    """
    skip = _check_mode(skip, model.order)
    out = None
    for m in _companion_modes(skip, model.order):
        f = model.factor(m)
        g = f.T @ f
        out = g if out is None else out * g
    return out


def mttkrp(t: DenseTensor | CooTensor, model: KruskalModel, mode: int) -> np.ndarray:
    """Matricized tensor times Khatri-Rao product for one mode.

    Dense tensors use the cached unfolding and one GEMM; sparse tensors
    accumulate per entry without materializing the Khatri-Rao product.
    """
    if model.dims != t.dims:
        raise ValueError(f"model dims {model.dims} do not match tensor dims {t.dims}")
    return mttkrp_factors(t, list(model.factors), mode)


def mttkrp_factors(
    t: DenseTensor | CooTensor, factors: Sequence[np.ndarray], mode: int
) -> np.ndarray:
    """MTTKRP on a raw factor list (no model validation); solver hot path."""
    mode = _check_mode(mode, t.order)
    companions = _companion_modes(mode, t.order)
    if isinstance(t, DenseTensor):
        kr = khatri_rao([factors[m - 1] for m in companions])
        return t.unfolding(mode) @ kr
    rank = factors[0].shape[1]
    out = np.zeros((t.dims[mode - 1], rank))
    if t.nnz == 0:
        return out
    # same elementwise association as khatri_rao: highest mode first
    contrib = factors[companions[0] - 1][t.indices[:, companions[0] - 1], :].copy()
    for m in companions[1:]:
        contrib *= factors[m - 1][t.indices[:, m - 1], :]
    contrib *= t.vals[:, None]
    np.add.at(out, t.indices[:, mode - 1], contrib)
    return out


def reconstruct(model: KruskalModel) -> DenseTensor:
    """Sum of rank-one outer products of the factor columns."""
    subs = "if,jf,kf->ijk" if model.order == 3 else "if,jf,kf,lf->ijkl"
    return DenseTensor(np.einsum(subs, *model.factors, optimize=True))


def rfe(t: DenseTensor | CooTensor, model: KruskalModel) -> float:
    """Relative factorization error ||X - [A,B,C]||_F / ||X||_F."""
    if model.dims != t.dims:
        raise ValueError(f"model dims {model.dims} do not match tensor dims {t.dims}")
    t_norm = t.norm()
    if t_norm == 0.0:
        raise ValueError("relative factorization error undefined for a zero tensor")
    if isinstance(t, DenseTensor):
        return float(np.linalg.norm(t.values - reconstruct(model).values)) / t_norm
    # sparse: ||X - W||^2 = ||X||^2 - 2<X, W> + ||W||^2 via factor Grams
    rows = model.factors[0][t.indices[:, 0], :].copy()
    for m in range(1, t.order):
        rows *= model.factors[m][t.indices[:, m], :]
    cross = float(np.dot(t.vals, rows.sum(axis=1)))
    gram = None
    for f in model.factors:
        g = f.T @ f
        gram = g if gram is None else gram * g
    sq = max(t_norm**2 - 2.0 * cross + float(gram.sum()), 0.0)
    return math.sqrt(sq) / t_norm
