"""Block-partitioned unfolding storage and per-block factor updates.

A factor matrix can be split into row blocks per mode; each unfolding then
splits into a 2-D grid of blocks.  For mode m the block-row axis is mode m
itself and the block-column axis is the highest other mode (the slowest
index in the unfolding's column order), so for order 3:

    X^(1): rows over mode-1 blocks, columns over mode-3 blocks,
    X^(2): rows over mode-2 blocks, columns over mode-3 blocks,
    X^(3): rows over mode-3 blocks, columns over mode-2 blocks,

and the (i, j) block of X^(1) is A_i (C_j (Khatri-Rao) B)^T for a model
[A, B, C].  Updating one factor row-block only needs partial MTTKRP and
partial Gram sums over the column blocks, which is what the mesh engine
distributes; the sums reduce in a fixed left-to-right order so results are
bitwise reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import solver
from .constraints import ConstraintSpec
from .tensors import DenseTensor, khatri_rao, unfold


def col_block_mode(mode: int, order: int) -> int:
    """Mode whose blocks index the columns of the mode-m unfolding grid."""
    return order if mode != order else order - 1


@dataclass(frozen=True)
class PartitionPlan:
    """Per-mode row extents of the factor blocks; extents sum to the dims."""

    extents: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        for per_mode in self.extents:
            if not per_mode or any(e < 1 for e in per_mode):
                raise ValueError("every block extent must be >= 1")

    @classmethod
    def uniform(cls, dims: Sequence[int], blocks: int | Sequence[int]) -> "PartitionPlan":
        """As-even-as-possible split; the first (dim mod n) blocks get the
        extra row."""
        if isinstance(blocks, int):
            blocks = [blocks] * len(dims)
        if len(blocks) != len(dims):
            raise ValueError("need one block count per mode")
        extents = []
        for d, n in zip(dims, blocks):
            if not 1 <= n <= d:
                raise ValueError(f"block count {n} invalid for extent {d}")
            base, extra = divmod(d, n)
            extents.append(tuple(base + (1 if i < extra else 0) for i in range(n)))
        return cls(tuple(extents))

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(sum(e) for e in self.extents)

    @property
    def counts(self) -> tuple[int, ...]:
        return tuple(len(e) for e in self.extents)

    def offsets(self, mode: int) -> list[int]:
        ext = self.extents[mode - 1]
        out = [0]
        for e in ext:
            out.append(out[-1] + e)
        return out

    def row_slice(self, mode: int, block: int) -> slice:
        offs = self.offsets(mode)
        return slice(offs[block], offs[block + 1])

    def mesh_size(self) -> int:
        """Common block count N, required by the mesh simulator."""
        counts = set(self.counts)
        if len(counts) != 1:
            raise ValueError(f"mesh mode needs equal block counts, got {self.counts}")
        return counts.pop()


class BlockGrid:
    """All unfoldings of one tensor, stored block by block."""

    def __init__(self, dims: Sequence[int], plan: PartitionPlan, blocks):
        self.dims = tuple(dims)
        self.plan = plan
        self._blocks = blocks  # mode -> 2-D list of contiguous matrices

    @property
    def order(self) -> int:
        return len(self.dims)

    def block(self, mode: int, i: int, j: int) -> np.ndarray:
        return self._blocks[mode][i][j]

    def reassemble(self, mode: int) -> np.ndarray:
        rows = [np.concatenate(r, axis=1) for r in self._blocks[mode]]
        return np.concatenate(rows, axis=0)


def partition(t: DenseTensor, plan: PartitionPlan) -> BlockGrid:
    """Split every unfolding of ``t`` into its (row-block, column-block) grid."""
    if plan.dims != t.dims:
        raise ValueError(f"plan dims {plan.dims} do not match tensor dims {t.dims}")
    blocks: dict[int, list[list[np.ndarray]]] = {}
    for mode in range(1, t.order + 1):
        cmode = col_block_mode(mode, t.order)
        grid_rows = []
        for i in range(plan.counts[mode - 1]):
            row = []
            for j in range(plan.counts[cmode - 1]):
                sl = [slice(None)] * t.order
                sl[mode - 1] = plan.row_slice(mode, i)
                sl[cmode - 1] = plan.row_slice(cmode, j)
                row.append(unfold(DenseTensor(t.values[tuple(sl)]), mode))
            grid_rows.append(row)
        blocks[mode] = grid_rows
    return BlockGrid(t.dims, plan, blocks)


def reduce_partials(partials: Sequence[np.ndarray]) -> np.ndarray:
    """Left-to-right sequential sum; the order is part of the contract."""
    if not partials:
        raise ValueError("nothing to reduce")
    shape = partials[0].shape
    out = partials[0]
    for p in partials[1:]:
        if p.shape != shape:
            raise ValueError(f"partial shapes differ: {p.shape} vs {shape}")
        out = out + p
    return out


def partial_terms(
    grid: BlockGrid,
    factors: Sequence[np.ndarray],
    mode: int,
    block: int,
    col: int,
) -> tuple[np.ndarray, np.ndarray]:
    """One column block's MTTKRP and Gram contributions for a factor block.

    The Gram uses the same Hadamard-of-Grams form as the centralized solver,
    just with the column-block rows of the highest companion factor.
    """
    cmode = col_block_mode(mode, grid.order)
    kr_parts = []
    gram = None
    for m in range(grid.order, 0, -1):
        if m == mode:
            continue
        f = factors[m - 1]
        if m == cmode:
            f = f[grid.plan.row_slice(cmode, col), :]
        kr_parts.append(f)
        g = f.T @ f
        gram = g if gram is None else gram * g
    mtt = grid.block(mode, block, col) @ khatri_rao(kr_parts)
    return mtt, gram


def block_factor_update(
    mode: int,
    block: int,
    grid: BlockGrid,
    state: solver.SolverState,
    spec: ConstraintSpec | None = None,
) -> np.ndarray:
    """Row-block factor update from partial sums over the column blocks.

    Matches the corresponding row block of the centralized update: the ridge
    system's matrix is common to all blocks of the mode.
    """
    spec = spec or ConstraintSpec.nonneg()
    cmode = col_block_mode(mode, grid.order)
    mtts, grams = [], []
    for col in range(grid.plan.counts[cmode - 1]):
        mtt, gram = partial_terms(grid, state.factors, mode, block, col)
        mtts.append(mtt)
        grams.append(gram)
    mtt_sum = reduce_partials(mtts)
    gram_sum = reduce_partials(grams)
    rows = grid.plan.row_slice(mode, block)
    m = mode - 1
    rhs = solver.ridge_rhs(mtt_sum, state.rho[m], state.aux[m][rows], state.duals[m][rows])
    cho = solver.ridge_cholesky(gram_sum, state.rho[m])
    return solver.solve_factor_rows(cho, rhs, row_sum_one=spec.kind == "row_stochastic")
