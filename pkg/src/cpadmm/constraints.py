"""Constraint specifications and their Euclidean projections.

Three kinds are supported, one per factor mode:

* ``nonneg``            — element-wise non-negativity,
* ``nonneg_card:<c>``   — non-negative with at most c nonzeros over the
                          whole matrix (counted after clamping negatives),
* ``row_stochastic``    — every row on the probability simplex.

``project`` is the exact Euclidean projection onto the constraint set;
``is_feasible`` is the matching membership test.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_KINDS = ("nonneg", "nonneg_card", "row_stochastic")

# roundoff allowance for the row-sum test: a simplex projection cannot make
# float row sums exactly 1, so tol=0 means "up to accumulation error"
_EPS = float(np.finfo(np.float64).eps)


@dataclass(frozen=True)
class ConstraintSpec:
    kind: str
    card: int | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown constraint kind {self.kind!r}")
        if self.kind == "nonneg_card":
            if self.card is None or int(self.card) < 1:
                raise ValueError("nonneg_card requires a positive nonzero budget")
            object.__setattr__(self, "card", int(self.card))
        elif self.card is not None:
            raise ValueError(f"{self.kind} takes no cardinality parameter")

    @classmethod
    def nonneg(cls) -> "ConstraintSpec":
        return cls("nonneg")

    @classmethod
    def nonneg_card(cls, c: int) -> "ConstraintSpec":
        return cls("nonneg_card", c)

    @classmethod
    def row_stochastic(cls) -> "ConstraintSpec":
        return cls("row_stochastic")

    @classmethod
    def parse(cls, name: str) -> "ConstraintSpec":
        """Parse the config-file spelling: nonneg, nonneg_card:<c>, row_stochastic."""
        name = name.strip()
        if name == "nonneg":
            return cls.nonneg()
        if name == "row_stochastic":
            return cls.row_stochastic()
        if name.startswith("nonneg_card:"):
            return cls.nonneg_card(int(name.split(":", 1)[1]))
        raise ValueError(f"unknown constraint name {name!r}")

    def name(self) -> str:
        if self.kind == "nonneg_card":
            return f"nonneg_card:{self.card}"
        return self.kind


def _simplex_rows(m: np.ndarray) -> np.ndarray:
    """Per-row Euclidean projection onto the probability simplex.

    Sort-and-threshold closed form; rows that are already feasible are
    returned bit-for-bit unchanged (the projection of a feasible point is
    the point itself, and this keeps the operation exactly idempotent).
    """
    m = np.asarray(m, dtype=np.float64)
    n = m.shape[1]
    u = np.sort(m, axis=1)[:, ::-1]
    css = np.cumsum(u, axis=1)
    j = np.arange(1, n + 1)
    k = np.count_nonzero(u * j > css - 1.0, axis=1)
    theta = (css[np.arange(m.shape[0]), k - 1] - 1.0) / k
    out = np.maximum(m - theta[:, None], 0.0)
    slack = 8.0 * _EPS * n
    feasible = (m.min(axis=1) >= 0.0) & (np.abs(m.sum(axis=1) - 1.0) <= slack)
    out[feasible] = m[feasible]
    return out


def _card_keep(m: np.ndarray, c: int) -> np.ndarray:
    clamped = np.maximum(m, 0.0)
    if c >= clamped.size:
        return clamped
    flat = clamped.reshape(-1)
    # stable sort on the negated values: ties keep the smaller row-major index
    keep = np.argsort(-flat, kind="stable")[:c]
    out = np.zeros_like(flat)
    out[keep] = flat[keep]
    return out.reshape(m.shape)


def project(m: np.ndarray, spec: ConstraintSpec) -> np.ndarray:
    """Euclidean projection of ``m`` onto the constraint set of ``spec``."""
    m = np.asarray(m, dtype=np.float64)
    if not np.all(np.isfinite(m)):
        raise ValueError("cannot project a matrix with non-finite entries")
    if spec.kind == "nonneg":
        return np.maximum(m, 0.0)
    if spec.kind == "nonneg_card":
        return _card_keep(m, spec.card)
    return _simplex_rows(m)


def is_feasible(m: np.ndarray, spec: ConstraintSpec, tol: float) -> bool:
    """True iff ``m`` violates no constraint of ``spec`` by more than ``tol``."""
    if tol < 0:
        raise ValueError("tolerance must be non-negative")
    m = np.asarray(m, dtype=np.float64)
    if m.size and m.min() < -tol:
        return False
    if spec.kind == "nonneg_card":
        return int(np.count_nonzero(np.abs(m) > tol)) <= spec.card
    if spec.kind == "row_stochastic":
        slack = 8.0 * _EPS * m.shape[1]
        return bool(np.all(np.abs(m.sum(axis=1) - 1.0) <= tol + slack))
    return True
