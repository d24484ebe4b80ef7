"""Shared oracles and builders.

Every oracle here is written from the definitions (index maps, per-column
Kronecker products, exhaustive enumeration), independent of the library's
computation paths, so tests compare two genuinely different routes.
"""

import itertools

import numpy as np
import pytest

from cpadmm.tensors import DenseTensor, KruskalModel


def oracle_unfold(values: np.ndarray, mode: int) -> np.ndarray:
    """Mode-m unfolding by looping the index map: element (i1..iN) lands in
    row i_mode, column sum of the other indices weighted ascending-fastest."""
    dims = values.shape
    order = len(dims)
    others = [m for m in range(order) if m != mode - 1]
    ncols = int(np.prod([dims[m] for m in others]))
    out = np.zeros((dims[mode - 1], ncols))
    for idx in itertools.product(*(range(d) for d in dims)):
        col = 0
        stride = 1
        for m in others:
            col += idx[m] * stride
            stride *= dims[m]
        out[idx[mode - 1], col] = values[idx]
    return out


def oracle_kr(mats) -> np.ndarray:
    """Columnwise Kronecker via np.kron, first argument slowest."""
    cols = mats[0].shape[1]
    out = []
    for f in range(cols):
        col = mats[0][:, f]
        for m in mats[1:]:
            col = np.kron(col, m[:, f])
        out.append(col)
    return np.stack(out, axis=1)


def oracle_mttkrp(values: np.ndarray, factors, mode: int) -> np.ndarray:
    order = len(factors)
    companions = [factors[m] for m in range(order - 1, -1, -1) if m != mode - 1]
    return oracle_unfold(values, mode) @ oracle_kr(companions)


def oracle_reconstruct(factors) -> np.ndarray:
    rank = factors[0].shape[1]
    out = np.zeros(tuple(f.shape[0] for f in factors))
    for f in range(rank):
        term = factors[0][:, f]
        for m in factors[1:]:
            term = np.multiply.outer(term, m[:, f])
        out += term
    return out


def oracle_card_project(m: np.ndarray, c: int) -> tuple[np.ndarray, float]:
    """Best non-negative matrix with at most c nonzeros, by support search."""
    flat = m.reshape(-1)
    best, best_d = None, np.inf
    for size in range(min(c, flat.size) + 1):
        for support in itertools.combinations(range(flat.size), size):
            cand = np.zeros_like(flat)
            for i in support:
                cand[i] = max(flat[i], 0.0)
            d = float(np.linalg.norm(cand - flat))
            if d < best_d - 1e-15:
                best, best_d = cand, d
    return best.reshape(m.shape), best_d


def oracle_simplex_grid(v: np.ndarray, step: float = 1e-3) -> float:
    """Minimum distance from v to the simplex over a regular grid."""
    n = v.size
    ticks = int(round(1.0 / step))
    best = np.inf
    if n == 2:
        for a in range(ticks + 1):
            p = np.array([a * step, 1.0 - a * step])
            best = min(best, float(np.linalg.norm(p - v)))
    elif n == 3:
        for a in range(ticks + 1):
            rem = ticks - a
            b = np.arange(rem + 1)
            p = np.stack([np.full(rem + 1, a * step), b * step, (rem - b) * step], axis=1)
            d = np.linalg.norm(p - v[None, :], axis=1)
            best = min(best, float(d.min()))
    else:
        raise ValueError("grid oracle supports n in {2, 3}")
    return best


def random_model(rng, dims, rank) -> KruskalModel:
    return KruskalModel([rng.random((d, rank)) for d in dims])


def random_tensor(rng, dims) -> DenseTensor:
    return DenseTensor(rng.random(dims))


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
