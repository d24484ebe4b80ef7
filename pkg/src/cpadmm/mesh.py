"""In-process simulation of the block-parallel solver on an N x N mesh.

Processing element (i, j) stores the (i, j) block of every unfolding.  One
iteration runs one wave per mode (times the configured number of sweeps):

* the column-block factor rows and the full companion factor are broadcast
  down each column (one message per column);
* every PE forms its local partial MTTKRP and partial Gram, and the partial
  sums hop left to right along each grid row (two messages per hop);
* the rightmost PE of each row solves the ridge system for its factor row
  block and, on the last sweep of the iteration, applies the auxiliary
  projection and dual step locally.

Waves are strictly ordered; delivering a message tagged with any other wave
than the one in flight is a protocol error.  Partial sums always reduce in
column order, so a run is bitwise independent of how PEs would be scheduled.
Stopping, penalty adaptation, and restarts reuse the centralized solver's
routines on the reassembled matrices: with one block per mode the two
engines produce byte-identical trajectories, and they stay equal to rounding
for any mesh size.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import solver
from .blocks import BlockGrid, PartitionPlan, col_block_mode, partition
from .constraints import ConstraintSpec, project
from .solver import FitResult, Residuals, SolverConfig, SolverState
from .tensors import DenseTensor, KruskalModel, khatri_rao, rfe

_MODE_LABELS = "ABCD"


class MeshProtocolError(RuntimeError):
    """A message was delivered outside its wave."""


@dataclass(frozen=True)
class Message:
    kind: str  # factor_broadcast | partial_mttkrp | partial_gram | block_result
    wave: int
    iteration: int
    sweep: int
    mode: int
    src: str
    dst: str
    payload: tuple[np.ndarray, ...]

    def dims_label(self) -> str:
        return ";".join(f"{p.shape[0]}x{p.shape[1]}" for p in self.payload)


def expected_messages_per_iteration(n: int, order: int = 3, sweeps: int = 1) -> int:
    """Broadcast + partial-sum traffic of one iteration (block results are
    delivered to the host observer and not part of the mesh data flow)."""
    return sweeps * order * (n + 2 * n * (n - 1))


class _PE:
    """One processing element: unfolding blocks plus, in the rightmost
    column, the auxiliary/dual blocks of its grid row for every mode."""

    def __init__(self, row: int, col: int, n: int):
        self.row = row
        self.col = col
        self.n = n
        self.blocks: dict[int, np.ndarray] = {}
        self.aux: dict[int, np.ndarray] = {}
        self.duals: dict[int, np.ndarray] = {}
        self.broadcast: tuple[np.ndarray, np.ndarray] | None = None
        self.partial: tuple[np.ndarray, np.ndarray] | None = None
        self.last_wave = -1

    @property
    def name(self) -> str:
        return f"pe{self.row}-{self.col}"

    def receive(self, msg: Message, current_wave: int) -> None:
        if msg.wave != current_wave:
            raise MeshProtocolError(
                f"{self.name} got a wave-{msg.wave} {msg.kind} during wave {current_wave}"
            )
        if msg.wave < self.last_wave:
            raise MeshProtocolError(f"{self.name} saw waves out of order")
        self.last_wave = msg.wave

    def local_partials(self, mode: int) -> tuple[np.ndarray, np.ndarray]:
        hi_block, lo_full = self.broadcast
        kr = khatri_rao([hi_block, lo_full])
        mtt = self.blocks[mode] @ kr
        gram = (hi_block.T @ hi_block) * (lo_full.T @ lo_full)
        return mtt, gram


class MeshEngine:
    """Deterministic single-threaded reference scheduler for the mesh."""

    def __init__(
        self,
        t: DenseTensor,
        rank: int,
        specs: ConstraintSpec | Sequence[ConstraintSpec] | None,
        config: SolverConfig | None,
        plan: PartitionPlan,
        trace_path: str | None = None,
    ):
        if not isinstance(t, DenseTensor):
            raise ValueError("the mesh engine operates on dense tensors")
        if t.order != 3:
            raise ValueError("the mesh data flow is defined for order-3 tensors")
        self.t = t
        self.rank = rank
        self.config = config or SolverConfig()
        self.specs = solver.normalize_specs(specs, t.order)
        self.n = plan.mesh_size()
        self.grid: BlockGrid = partition(t, plan)
        self.plan = plan
        self.trace_path = trace_path
        self.trace: list[Message] = []
        self.message_counts: dict[str, int] = {}
        self.current_wave = -1
        self.pes = [[_PE(i, j, self.n) for j in range(self.n)] for i in range(self.n)]
        for i in range(self.n):
            for j in range(self.n):
                for mode in range(1, 4):
                    self.pes[i][j].blocks[mode] = self.grid.block(mode, i, j)

    # -- messaging ---------------------------------------------------------

    def _send(self, msg: Message, targets: Sequence[_PE]) -> None:
        self.trace.append(msg)
        self.message_counts[msg.kind] = self.message_counts.get(msg.kind, 0) + 1
        for pe in targets:
            pe.receive(msg, self.current_wave)

    def inject(self, msg: Message) -> None:
        """Deliver an arbitrary message (tests use this to violate the
        schedule and check that the simulator refuses it)."""
        self._send(msg, [self.pes[0][0]])

    # -- one wave ----------------------------------------------------------

    def _run_wave(
        self,
        state: SolverState,
        mode: int,
        iteration: int,
        sweep: int,
        update_aux: bool,
    ) -> np.ndarray:
        self.current_wave += 1
        m = mode - 1
        cmode = col_block_mode(mode, 3)
        lo_mode = next(x for x in (2, 1) if x != mode and x != cmode)
        hi = state.factors[cmode - 1]
        lo = state.factors[lo_mode - 1]
        rho = state.rho[m]
        spec = self.specs[m]

        for j in range(self.n):
            hi_block = hi[self.plan.row_slice(cmode, j), :]
            msg = Message(
                kind="factor_broadcast",
                wave=self.current_wave,
                iteration=iteration,
                sweep=sweep,
                mode=mode,
                src="host",
                dst=f"col{j}",
                payload=(hi_block, lo),
            )
            column = [self.pes[i][j] for i in range(self.n)]
            self._send(msg, column)
            for pe in column:
                pe.broadcast = (hi_block, lo)

        solved = []
        for i in range(self.n):
            acc_mtt = acc_gram = None
            for j in range(self.n):
                pe = self.pes[i][j]
                mtt, gram = pe.local_partials(mode)
                if j > 0:
                    left_mtt, left_gram = pe.partial
                    pe.partial = None
                    mtt = left_mtt + mtt
                    gram = left_gram + gram
                if j < self.n - 1:
                    nxt = self.pes[i][j + 1]
                    for kind, payload in (("partial_mttkrp", mtt), ("partial_gram", gram)):
                        self._send(
                            Message(
                                kind=kind,
                                wave=self.current_wave,
                                iteration=iteration,
                                sweep=sweep,
                                mode=mode,
                                src=pe.name,
                                dst=nxt.name,
                                payload=(payload,),
                            ),
                            [nxt],
                        )
                    nxt.partial = (mtt, gram)
                else:
                    acc_mtt, acc_gram = mtt, gram

            right = self.pes[i][self.n - 1]
            rhs = solver.ridge_rhs(acc_mtt, rho, right.aux[mode], right.duals[mode])
            cho = solver.ridge_cholesky(acc_gram, rho)
            block = solver.solve_factor_rows(
                cho, rhs, row_sum_one=spec.kind == "row_stochastic"
            )
            if update_aux:
                new_aux = project(block + right.duals[mode] / rho, spec)
                right.duals[mode] = right.duals[mode] + rho * (block - new_aux)
                right.aux[mode] = new_aux
            solved.append(block)
            self.trace.append(
                Message(
                    kind="block_result",
                    wave=self.current_wave,
                    iteration=iteration,
                    sweep=sweep,
                    mode=mode,
                    src=right.name,
                    dst="host",
                    payload=(block,),
                )
            )
        return np.concatenate(solved, axis=0)

    # -- driver ------------------------------------------------------------

    def _reset_attempt(self, attempt: int) -> SolverState:
        cfg = self.config
        factors = solver.init_factors(
            self.t.dims, self.rank, solver.attempt_entropy(cfg.seed, attempt)
        )
        for i in range(self.n):
            right = self.pes[i][self.n - 1]
            for mode in range(1, 4):
                shape = (self.plan.extents[mode - 1][i], self.rank)
                right.aux[mode] = np.zeros(shape)
                right.duals[mode] = np.zeros(shape)
        aux = [np.zeros_like(f) for f in factors]
        duals = [np.zeros_like(f) for f in factors]
        return SolverState(factors, aux, duals, [cfg.rho_init] * 3)

    def _assemble(self, state: SolverState) -> None:
        for mode in range(1, 4):
            state.aux[mode - 1] = np.concatenate(
                [self.pes[i][self.n - 1].aux[mode] for i in range(self.n)], axis=0
            )
            state.duals[mode - 1] = np.concatenate(
                [self.pes[i][self.n - 1].duals[mode] for i in range(self.n)], axis=0
            )

    def run(self) -> FitResult:
        cfg = self.config
        total_iterations = 0
        converged = False
        attempt = 0
        state = None
        res_history: list[Residuals] = []
        rfe_history: list[float] = []
        factor_history: list[list[np.ndarray]] = []
        for attempt in range(cfg.max_restarts + 1):
            state = self._reset_attempt(attempt)
            res_history, rfe_history, factor_history = [], [], []
            for it in range(1, cfg.n_max + 1):
                prev_aux = list(state.aux)
                for sweep in range(cfg.inner_sweeps):
                    last = sweep == cfg.inner_sweeps - 1
                    for mode in range(1, 4):
                        state.factors[mode - 1] = self._run_wave(
                            state, mode, it, sweep, update_aux=last
                        )
                self._assemble(state)
                state.iteration += 1
                total_iterations += 1
                res = solver.residuals(state, prev_aux)
                res_history.append(res)
                if cfg.track_factors:
                    factor_history.append([f.copy() for f in state.factors])
                if cfg.track_rfe:
                    rfe_history.append(solver.aux_model_rfe(self.t, state))
                stop = solver.check_stop(res, state, cfg)
                if cfg.adapt:
                    state.rho = solver.adapt_penalties(state.rho, res, cfg)
                if stop:
                    converged = True
                    break
            if converged:
                break
        self._write_trace()
        model = KruskalModel(state.aux)
        return FitResult(
            model=model,
            rfe=rfe(self.t, model),
            iterations=total_iterations,
            restarts=attempt,
            converged=converged,
            residual_history=res_history,
            rfe_history=rfe_history,
            factor_history=factor_history if cfg.track_factors else None,
            state=state,
        )

    def _write_trace(self) -> None:
        if not self.trace_path:
            return
        with open(self.trace_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "wave", "kind", "src", "dst", "dims"])
            for msg in self.trace:
                wave = _MODE_LABELS[msg.mode - 1]
                if msg.sweep:
                    wave = f"{wave}+{msg.sweep}"
                writer.writerow(
                    [msg.iteration, wave, msg.kind, msg.src, msg.dst, msg.dims_label()]
                )


def distributed_fit(
    t: DenseTensor,
    rank: int,
    specs: ConstraintSpec | Sequence[ConstraintSpec] | None = None,
    config: SolverConfig | None = None,
    plan: PartitionPlan | int = 1,
    trace_path: str | None = None,
) -> FitResult:
    """Block-parallel fit on the simulated mesh.

    With the same seed this follows the centralized :func:`cpadmm.solver.fit`
    trajectory iteration by iteration (exactly for one block per mode, to
    rounding otherwise).
    """
    if isinstance(plan, int):
        plan = PartitionPlan.uniform(t.dims, plan)
    if t.norm() == 0.0:
        raise ValueError("cannot factorize a zero tensor")
    engine = MeshEngine(t, rank, specs, config, plan, trace_path)
    return engine.run()
