"""Centralized ADMM solver for constrained CP factorization.

State per mode m: the working factor M, a feasible auxiliary copy M~, a
dual matrix Y_M, and a penalty rho_M.  One outer iteration runs

1. Gauss-Seidel factor sweep(s), mode order 1, 2, 3 (, 4), each solving the
   ridge system  M (G + rho I) = MTTKRP + rho M~ - Y  via one Cholesky
   factorization shared by all rows;
2. auxiliary update  M~ <- project(M + Y / rho)  onto the mode's constraint;
3. dual ascent  Y <- Y + rho (M - M~);
4. primal/dual residual norms, the stopping test, and (optionally) the
   three-branch penalty adaptation.

Working factors are not feasible in general; the auxiliary copies are by
construction, and they are what a fit reports.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .constraints import ConstraintSpec, is_feasible, project
from .tensors import CooTensor, DenseTensor, KruskalModel, mttkrp_factors, rfe


class InvalidPenaltyError(RuntimeError):
    """Raised when a ridge system is not positive definite (penalty <= 0)."""


@dataclass
class SolverConfig:
    eps_abs: float = 1e-4
    eps_rel: float = 1e-4
    rho_init: float = 1.0
    mu: float = 8.0
    tau_incr: float = 4.0
    tau_decr: float = 2.0
    n_max: int = 400
    max_restarts: int = 10
    inner_sweeps: int = 1
    seed: int = 0
    adapt: bool = True          # freeze penalty adaptation when False
    track_rfe: bool = False     # per-iteration RFE of the auxiliary model
    track_factors: bool = False  # per-iteration factor snapshots (trajectories)

    def __post_init__(self):
        # eps == 0 disables the corresponding test: useful to force a fixed
        # iteration count when comparing trajectories
        if self.eps_abs < 0 or self.eps_rel < 0:
            raise ValueError("stopping tolerances must be >= 0")
        if self.rho_init <= 0:
            raise ValueError("rho_init must be positive")
        if min(self.mu, self.tau_incr, self.tau_decr) <= 1:
            raise ValueError("adaptation parameters mu, tau_incr, tau_decr must be > 1")
        if self.n_max < 1 or self.inner_sweeps < 1 or self.max_restarts < 0:
            raise ValueError("n_max, inner_sweeps must be >= 1 and max_restarts >= 0")


@dataclass
class SolverState:
    factors: list[np.ndarray]
    aux: list[np.ndarray]
    duals: list[np.ndarray]
    rho: list[float]
    iteration: int = 0

    @property
    def order(self) -> int:
        return len(self.factors)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(f.shape[0] for f in self.factors)


@dataclass(frozen=True)
class Residuals:
    """Frobenius norms of the primal and dual residuals, one pair per mode."""

    primal: tuple[float, ...]
    dual: tuple[float, ...]


@dataclass
class FitResult:
    model: KruskalModel
    rfe: float
    iterations: int
    restarts: int
    converged: bool
    residual_history: list[Residuals] = field(default_factory=list)
    rfe_history: list[float] = field(default_factory=list)
    factor_history: list[list[np.ndarray]] | None = None
    state: SolverState | None = None


@dataclass(frozen=True)
class KktResiduals:
    """First-order optimality measures; all near zero at a KKT point."""

    stationarity: tuple[float, ...]
    feasibility: tuple[float, ...]
    max_positive_dual: float
    complementarity: float

    def as_dict(self) -> dict[str, float]:
        out = {f"stationarity_mode{m + 1}": v for m, v in enumerate(self.stationarity)}
        out.update({f"feasibility_mode{m + 1}": v for m, v in enumerate(self.feasibility)})
        out["max_positive_dual"] = self.max_positive_dual
        out["complementarity"] = self.complementarity
        return out

    def max_value(self) -> float:
        return max(self.as_dict().values())


def derive_seed(base: int, *key: int) -> int:
    """Stable derived seed for independent streams (restarts, realizations)."""
    ss = np.random.SeedSequence((int(base),) + tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0])


def attempt_entropy(seed: int, attempt: int):
    """Seed material for an attempt: the base seed, then hash(seed, attempt)."""
    return int(seed) if attempt == 0 else derive_seed(seed, attempt)


def init_factors(dims: Sequence[int], rank: int, entropy) -> list[np.ndarray]:
    """Mode 1 starts as a zero placeholder (the first sweep overwrites it);
    the remaining factors are i.i.d. uniform on [0, 1], drawn in mode order."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
    factors = [np.zeros((dims[0], rank))]
    for d in dims[1:]:
        factors.append(rng.random((d, rank)))
    return factors


def init_state(
    dims: Sequence[int], rank: int, config: SolverConfig, attempt: int = 0
) -> SolverState:
    if rank < 1:
        raise ValueError("rank must be >= 1")
    factors = init_factors(dims, rank, attempt_entropy(config.seed, attempt))
    aux = [np.zeros_like(f) for f in factors]
    duals = [np.zeros_like(f) for f in factors]
    return SolverState(factors, aux, duals, [config.rho_init] * len(factors))


def normalize_specs(
    specs: ConstraintSpec | Sequence[ConstraintSpec] | None, order: int
) -> list[ConstraintSpec]:
    if specs is None:
        specs = ConstraintSpec.nonneg()
    if isinstance(specs, ConstraintSpec):
        return [specs] * order
    specs = list(specs)
    if len(specs) != order:
        raise ValueError(f"need one constraint per mode ({order}), got {len(specs)}")
    return specs


def ridge_cholesky(gram: np.ndarray, rho: float):
    """Cholesky factor of gram + rho*I; fails only for a non-positive penalty."""
    if rho <= 0:
        raise InvalidPenaltyError(f"penalty must be positive, got {rho}")
    rank = gram.shape[0]
    try:
        return cho_factor(gram + rho * np.eye(rank), lower=True)
    except LinAlgError as exc:  # unreachable for rho > 0 and a true Gram
        raise InvalidPenaltyError(f"ridge system not positive definite: {exc}") from exc


def ridge_rhs(mtt: np.ndarray, rho: float, aux: np.ndarray, dual: np.ndarray) -> np.ndarray:
    return mtt + rho * aux - dual


def solve_factor_rows(cho, rhs: np.ndarray, row_sum_one: bool = False) -> np.ndarray:
    """Solve M (G + rho I) = rhs for M, optionally with rows summing to 1.

    The equality-constrained variant adds a per-row Lagrange multiplier:
    m = (rhs_row + lam * 1^T) (G + rho I)^-1 with lam chosen so m @ 1 = 1.
    """
    sol = cho_solve(cho, rhs.T).T
    if not row_sum_one:
        return sol
    g1 = cho_solve(cho, np.ones(rhs.shape[1]))
    lam = (1.0 - sol @ np.ones(rhs.shape[1])) / float(g1.sum())
    return sol + lam[:, None] * g1[None, :]


def companion_gram(factors: Sequence[np.ndarray], mode: int) -> np.ndarray:
    out = None
    for m in range(len(factors), 0, -1):
        if m == mode:
            continue
        f = factors[m - 1]
        g = f.T @ f
        out = g if out is None else out * g
    return out


def _factor_update_core(
    t: DenseTensor | CooTensor,
    factors: Sequence[np.ndarray],
    aux: np.ndarray,
    dual: np.ndarray,
    rho: float,
    mode: int,
    spec: ConstraintSpec,
) -> np.ndarray:
    mtt = mttkrp_factors(t, factors, mode)
    cho = ridge_cholesky(companion_gram(factors, mode), rho)
    rhs = ridge_rhs(mtt, rho, aux, dual)
    return solve_factor_rows(cho, rhs, row_sum_one=spec.kind == "row_stochastic")


def factor_update(
    state: SolverState,
    t: DenseTensor | CooTensor,
    mode: int,
    spec: ConstraintSpec | None = None,
) -> np.ndarray:
    """Ridge least-squares update of one working factor (Gauss-Seidel step)."""
    spec = spec or ConstraintSpec.nonneg()
    m = mode - 1
    return _factor_update_core(
        t, state.factors, state.aux[m], state.duals[m], state.rho[m], mode, spec
    )


def aux_update(state: SolverState, mode: int, spec: ConstraintSpec) -> np.ndarray:
    """Projection step restoring feasibility of the auxiliary copy."""
    m = mode - 1
    return project(state.factors[m] + state.duals[m] / state.rho[m], spec)


def dual_update(state: SolverState, mode: int) -> np.ndarray:
    m = mode - 1
    return state.duals[m] + state.rho[m] * (state.factors[m] - state.aux[m])


def residuals(state: SolverState, prev_aux: Sequence[np.ndarray]) -> Residuals:
    primal = tuple(
        float(np.linalg.norm(f - a)) for f, a in zip(state.factors, state.aux)
    )
    dual = tuple(
        rho * float(np.linalg.norm(a - p))
        for rho, a, p in zip(state.rho, state.aux, prev_aux)
    )
    return Residuals(primal, dual)


def check_stop(res: Residuals, state: SolverState, config: SolverConfig) -> bool:
    """All primal and dual residuals within their absolute+relative thresholds."""
    rank = state.factors[0].shape[1]
    for m in range(state.order):
        base = math.sqrt(state.dims[m] * rank) * config.eps_abs
        primal_thr = base + config.eps_rel * max(
            np.linalg.norm(state.factors[m]), np.linalg.norm(state.aux[m])
        )
        dual_thr = base + config.eps_rel * np.linalg.norm(state.duals[m])
        if res.primal[m] > primal_thr or res.dual[m] > dual_thr:
            return False
    return True


def adapt_penalties(
    rho: Sequence[float], res: Residuals, config: SolverConfig
) -> list[float]:
    """Per-mode penalty update: grow when the primal residual dominates,
    shrink when the dual residual dominates, otherwise leave unchanged.

    The shrink branch requires a strictly positive primal residual.  Once
    iterates are interior the splitting is exactly consistent (P = 0, Y = 0)
    and the ratio test degenerates: shrinking then decays rho geometrically
    forever, masking the dual residual through its rho scaling and tripping
    the stopping test long before the factors are stationary.
    """
    out = []
    for r, p, d in zip(rho, res.primal, res.dual):
        if p > config.mu * d:
            out.append(r * config.tau_incr)
        elif d > config.mu * p and p > 0:
            out.append(r / config.tau_decr)
        else:
            out.append(r)
    return out


def iterate(
    state: SolverState,
    t: DenseTensor | CooTensor,
    specs: ConstraintSpec | Sequence[ConstraintSpec],
    config: SolverConfig | None = None,
) -> tuple[SolverState, Residuals]:
    """One full outer iteration; returns the new state and its residuals."""
    config = config or SolverConfig()
    specs = normalize_specs(specs, state.order)
    factors = list(state.factors)
    for _ in range(config.inner_sweeps):
        for mode in range(1, state.order + 1):
            m = mode - 1
            factors[m] = _factor_update_core(
                t, factors, state.aux[m], state.duals[m], state.rho[m], mode, specs[m]
            )
    aux = [
        project(f + y / r, s)
        for f, y, r, s in zip(factors, state.duals, state.rho, specs)
    ]
    duals = [
        y + r * (f - a) for y, r, f, a in zip(state.duals, state.rho, factors, aux)
    ]
    new_state = SolverState(factors, aux, duals, list(state.rho), state.iteration + 1)
    res = residuals(new_state, state.aux)
    if __debug__:
        for a, s in zip(aux, specs):
            assert is_feasible(a, s, 0.0), "auxiliary update left the constraint set"
        for y0, y1, r, f, a in zip(state.duals, duals, state.rho, factors, aux):
            assert np.array_equal(y1, y0 + r * (f - a)), "dual step must be rho * primal"
    if config.adapt:
        new_state.rho = adapt_penalties(state.rho, res, config)
    return new_state, res


def aux_model_rfe(t: DenseTensor | CooTensor, state: SolverState) -> float:
    """RFE of the auxiliary model via the Gram identity (no reconstruction)."""
    aux = state.aux
    mtt = mttkrp_factors(t, aux, 1)
    gram = companion_gram(aux, 1)
    a = aux[0]
    sq = t.norm() ** 2 - 2.0 * float(np.sum(a * mtt)) + float(np.sum((a.T @ a) * gram))
    return math.sqrt(max(sq, 0.0)) / t.norm()


def fit(
    t: DenseTensor | CooTensor,
    rank: int,
    specs: ConstraintSpec | Sequence[ConstraintSpec] | None = None,
    config: SolverConfig | None = None,
) -> FitResult:
    """Constrained CP fit with restarts from fresh seeds on non-convergence.

    The reported model is the auxiliary (feasible) copies.  A fit that never
    satisfies the stopping test within ``n_max`` iterations is re-initialized
    up to ``max_restarts`` times; the result then carries converged=False and
    the last attempt's state and histories.
    """
    config = config or SolverConfig()
    specs = normalize_specs(specs, t.order)
    if rank < 1:
        raise ValueError("rank must be >= 1")
    if t.norm() == 0.0:
        raise ValueError("cannot factorize a zero tensor")
    for d, s in zip(t.dims, specs):
        if s.kind == "nonneg_card" and s.card > d * rank:
            raise ValueError(
                f"cardinality budget {s.card} exceeds factor size {d}x{rank}"
            )

    total_iterations = 0
    attempt = 0
    converged = False
    state = None
    res_history: list[Residuals] = []
    rfe_history: list[float] = []
    factor_history: list[list[np.ndarray]] = []
    for attempt in range(config.max_restarts + 1):
        state = init_state(t.dims, rank, config, attempt)
        res_history, rfe_history, factor_history = [], [], []
        for _ in range(config.n_max):
            state, res = iterate(state, t, specs, config)
            total_iterations += 1
            res_history.append(res)
            if config.track_factors:
                factor_history.append([f.copy() for f in state.factors])
            if config.track_rfe:
                rfe_history.append(aux_model_rfe(t, state))
            if check_stop(res, state, config):
                converged = True
                break
        if converged:
            break

    model = KruskalModel(state.aux)
    if __debug__:
        for a, s in zip(state.aux, specs):
            assert is_feasible(a, s, 0.0), "reported factors must be feasible"
    return FitResult(
        model=model,
        rfe=rfe(t, model),
        iterations=total_iterations,
        restarts=attempt,
        converged=converged,
        residual_history=res_history,
        rfe_history=rfe_history,
        factor_history=factor_history if config.track_factors else None,
        state=state,
    )


def kkt_residuals(state: SolverState, t: DenseTensor | CooTensor) -> KktResiduals:
    """First-order (KKT) measures at the current state.

    Per mode: the stationarity norm || MTTKRP - M G - Y ||_F with G the
    companion Gram product, and the feasibility norm || M - M~ ||_F.  Across
    modes: the largest positive dual entry (duals must be <= 0) and the
    combined norm of the complementarity products Y * M~.
    """
    stationarity = []
    feasibility = []
    comp_sq = 0.0
    max_pos = 0.0
    for mode in range(1, state.order + 1):
        m = mode - 1
        grad = (
            mttkrp_factors(t, state.factors, mode)
            - state.factors[m] @ companion_gram(state.factors, mode)
            - state.duals[m]
        )
        stationarity.append(float(np.linalg.norm(grad)))
        feasibility.append(float(np.linalg.norm(state.factors[m] - state.aux[m])))
        comp_sq += float(np.sum((state.duals[m] * state.aux[m]) ** 2))
        max_pos = max(max_pos, float(state.duals[m].max(initial=0.0)))
    return KktResiduals(
        stationarity=tuple(stationarity),
        feasibility=tuple(feasibility),
        max_positive_dual=max(max_pos, 0.0),
        complementarity=math.sqrt(comp_sq),
    )
