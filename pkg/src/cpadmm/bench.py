"""Synthetic-data experiments: generation, batch runs, and baselines.

A batch draws R realizations of  X = [A, B, C] + noise  with i.i.d. U[0,1]
factors and i.i.d. Gaussian noise, fits each one, and writes a per-
realization CSV plus a summary row (and optionally per-iteration RFE
trajectories).  Every realization derives its data and fit seeds from the
batch seed, so reruns are byte-identical; wall time is the one field that
is not reproducible, and ``timing=False`` zeroes it for deterministic
output.
"""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from . import mesh, solver
from .constraints import ConstraintSpec
from .solver import FitResult, SolverConfig, derive_seed
from .tensors import CooTensor, DenseTensor, KruskalModel, reconstruct

_DATA_SALT = 101
_FIT_SALT = 202


def generate(
    dims: Sequence[int], rank: int, sigma2: float, seed: int
) -> tuple[DenseTensor, KruskalModel]:
    """Noisy low-rank tensor and its ground truth, deterministic in the seed."""
    if sigma2 < 0:
        raise ValueError("noise variance must be >= 0")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    factors = [rng.random((d, rank)) for d in dims]
    truth = KruskalModel(factors)
    values = reconstruct(truth).values
    if sigma2 > 0:
        values = values + rng.normal(0.0, math.sqrt(sigma2), size=tuple(dims))
    return DenseTensor(values), truth


def noise_ratio(t: DenseTensor, truth: KruskalModel) -> float:
    """||E||_F / ||X||_F of one realization, the attainable RFE floor."""
    err = t.values - reconstruct(truth).values
    return float(np.linalg.norm(err)) / t.norm()


def parse_engine(name: str) -> tuple[str, int]:
    name = name.strip()
    if name == "centralized":
        return "centralized", 0
    if name.startswith("mesh:"):
        n = int(name.split(":", 1)[1])
        if n < 1:
            raise ValueError("mesh size must be >= 1")
        return "mesh", n
    raise ValueError(f"unknown engine {name!r} (use 'centralized' or 'mesh:<N>')")


@dataclass
class ExperimentSpec:
    dims: tuple[int, ...]
    rank: int
    sigma2: float
    realizations: int
    fit_rank: int | None = None
    config: SolverConfig = field(default_factory=SolverConfig)
    specs: list[ConstraintSpec] | None = None
    engine: str = "centralized"
    out: Path | None = None
    trajectories: bool = False
    timing: bool = True
    workers: int = 1
    plots: bool = True

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if self.realizations < 1:
            raise ValueError("need at least one realization")
        if self.fit_rank is not None and self.fit_rank < 1:
            raise ValueError("fit rank must be >= 1")
        parse_engine(self.engine)

    @property
    def effective_fit_rank(self) -> int:
        return self.fit_rank if self.fit_rank is not None else self.rank


@dataclass
class RunRecord:
    realization: int
    rfe: float
    time_s: float
    iterations: int
    restarts: int
    converged: bool


@dataclass
class ExperimentResult:
    records: list[RunRecord]
    trajectories: list[list[float]]

    def summary(self) -> dict[str, float]:
        rfes = np.array([r.rfe for r in self.records])
        times = np.array([r.time_s for r in self.records])
        ddof = 1 if len(self.records) > 1 else 0
        return {
            "realizations": len(self.records),
            "mean_rfe": float(rfes.mean()),
            "std_rfe": float(rfes.std(ddof=ddof)),
            "mean_time_s": float(times.mean()),
            "std_time_s": float(times.std(ddof=ddof)),
            "mean_iterations": float(np.mean([r.iterations for r in self.records])),
            "mean_restarts": float(np.mean([r.restarts for r in self.records])),
            "converged": int(sum(r.converged for r in self.records)),
        }


def _fit_once(spec: ExperimentSpec, r: int) -> tuple[RunRecord, list[float]]:
    base = spec.config.seed
    t, _ = generate(spec.dims, spec.rank, spec.sigma2, derive_seed(base, _DATA_SALT, r))
    cfg = replace(spec.config, seed=derive_seed(base, _FIT_SALT, r), track_rfe=spec.trajectories)
    kind, n = parse_engine(spec.engine)
    start = time.perf_counter()
    if kind == "mesh":
        result = mesh.distributed_fit(t, spec.effective_fit_rank, spec.specs, cfg, n)
    else:
        result = solver.fit(t, spec.effective_fit_rank, spec.specs, cfg)
    elapsed = time.perf_counter() - start if spec.timing else 0.0
    record = RunRecord(
        realization=r,
        rfe=result.rfe,
        time_s=elapsed,
        iterations=result.iterations,
        restarts=result.restarts,
        converged=result.converged,
    )
    return record, result.rfe_history


def run_experiment(spec: ExperimentSpec) -> ExperimentResult:
    """Run every realization (optionally in parallel), write CSVs/figures."""
    indices = range(spec.realizations)
    if spec.workers > 1:
        with ThreadPoolExecutor(max_workers=spec.workers) as pool:
            outcomes = list(pool.map(lambda r: _fit_once(spec, r), indices))
    else:
        outcomes = [_fit_once(spec, r) for r in indices]
    result = ExperimentResult(
        records=[rec for rec, _ in outcomes],
        trajectories=[traj for _, traj in outcomes],
    )
    if spec.out is not None:
        write_outputs(spec, result)
    return result


def write_outputs(spec: ExperimentSpec, result: ExperimentResult) -> None:
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    write_records_csv(result.records, out / "records.csv")
    write_summary_csv(result.summary(), out / "summary.csv")
    if spec.trajectories:
        for rec, traj in zip(result.records, result.trajectories):
            path = out / f"trajectory_r{rec.realization:03d}.csv"
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["iteration", "rfe"])
                for k, v in enumerate(traj, start=1):
                    writer.writerow([k, repr(v)])
    if spec.plots:
        from . import reports

        reports.render_experiment_figures(out)


def write_records_csv(records: Sequence[RunRecord], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["realization", "rfe", "time_s", "iterations", "restarts", "converged"])
        for r in records:
            writer.writerow(
                [r.realization, repr(r.rfe), repr(r.time_s), r.iterations, r.restarts, int(r.converged)]
            )


def write_summary_csv(summary: dict[str, float], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(summary))
        writer.writerow([repr(v) if isinstance(v, float) else v for v in summary.values()])


def read_records_csv(path: Path) -> list[RunRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        RunRecord(
            realization=int(row["realization"]),
            rfe=float(row["rfe"]),
            time_s=float(row["time_s"]),
            iterations=int(row["iterations"]),
            restarts=int(row["restarts"]),
            converged=bool(int(row["converged"])),
        )
        for row in rows
    ]


def als_baseline(
    t: DenseTensor | CooTensor, rank: int, config: SolverConfig | None = None
) -> FitResult:
    """Plain unconstrained ALS through the Khatri-Rao Gram, as a comparator.

    Solves each normal system by Cholesky, falling back to a 1e-12 ridge if
    the Gram is singular.  Stops when the RFE stalls or after n_max sweeps.
    Factor entries may go negative; that is the point of the comparison.
    """
    config = config or SolverConfig()
    if t.norm() == 0.0:
        raise ValueError("cannot factorize a zero tensor")
    factors = solver.init_factors(t.dims, rank, config.seed)
    state = solver.SolverState(
        factors,
        [np.zeros_like(f) for f in factors],
        [np.zeros_like(f) for f in factors],
        [1.0] * t.order,
    )
    rfe_history: list[float] = []
    prev = math.inf
    converged = False
    iterations = 0
    for _ in range(config.n_max):
        for mode in range(1, t.order + 1):
            gram = solver.companion_gram(state.factors, mode)
            mtt = solver.mttkrp_factors(t, state.factors, mode)
            try:
                cho = cho_factor(gram, lower=True)
            except LinAlgError:
                cho = cho_factor(gram + 1e-12 * np.eye(rank), lower=True)
            state.factors[mode - 1] = cho_solve(cho, mtt.T).T
        iterations += 1
        state.aux = state.factors
        cur = solver.aux_model_rfe(t, state)
        rfe_history.append(cur)
        if abs(prev - cur) <= 1e-9 * max(1.0, cur):
            converged = True
            break
        prev = cur
    model = KruskalModel(state.factors)
    return FitResult(
        model=model,
        rfe=rfe_history[-1],
        iterations=iterations,
        restarts=0,
        converged=converged,
        rfe_history=rfe_history,
        state=state,
    )


def factor_match_error(estimate: KruskalModel, truth: KruskalModel) -> tuple[float, ...]:
    """Column-permutation- and scaling-invariant relative error per factor.

    Columns are matched greedily by the product over modes of absolute
    normalized correlations (one shared permutation), then each matched
    column is rescaled per mode by its least-squares coefficient.
    """
    if estimate.rank != truth.rank or estimate.order != truth.order:
        raise ValueError("models must share order and rank")
    rank = truth.rank
    congruence = np.ones((rank, rank))
    for mode in range(1, truth.order + 1):
        e = estimate.factor(mode)
        g = truth.factor(mode)
        en = np.linalg.norm(e, axis=0)
        gn = np.linalg.norm(g, axis=0)
        denom = np.outer(en, gn)
        denom[denom == 0] = 1.0
        congruence *= np.abs(e.T @ g) / denom
    perm = [-1] * rank  # truth column -> estimate column
    work = congruence.copy()
    for _ in range(rank):
        fe, ft = np.unravel_index(np.argmax(work), work.shape)
        perm[ft] = fe
        work[fe, :] = -np.inf
        work[:, ft] = -np.inf
    errors = []
    for mode in range(1, truth.order + 1):
        e = estimate.factor(mode)[:, perm]
        g = truth.factor(mode)
        sq = np.sum(e * e, axis=0)
        sq[sq == 0] = 1.0
        scale = np.sum(e * g, axis=0) / sq
        errors.append(float(np.linalg.norm(e * scale - g) / np.linalg.norm(g)))
    return tuple(errors)


# -- config files ------------------------------------------------------------

_SOLVER_KEYS = {
    "eps_abs": float,
    "eps_rel": float,
    "rho_init": float,
    "mu": float,
    "tau_incr": float,
    "tau_decr": float,
    "n_max": int,
    "max_restarts": int,
    "inner_sweeps": int,
    "seed": int,
}

_BOOL_WORDS = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def parse_config(text: str) -> dict[str, str]:
    """Plain ``key = value`` lines; '#' starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def experiment_from_config(
    entries: dict[str, str], out: Path | None = None
) -> ExperimentSpec:
    entries = dict(entries)
    if "dims" not in entries or "rank" not in entries:
        raise ValueError("config must set at least 'dims' and 'rank'")
    dims = tuple(int(d) for d in entries.pop("dims").replace(",", " ").split())
    solver_kwargs = {}
    for key, cast in _SOLVER_KEYS.items():
        if key in entries:
            solver_kwargs[key] = cast(entries.pop(key))
    specs = [ConstraintSpec.nonneg()] * len(dims)
    for m in range(1, len(dims) + 1):
        key = f"constraint.mode{m}"
        if key in entries:
            specs[m - 1] = ConstraintSpec.parse(entries.pop(key))
    kwargs = {
        "dims": dims,
        "rank": int(entries.pop("rank")),
        "sigma2": float(entries.pop("sigma2", "0")),
        "realizations": int(entries.pop("realizations", "1")),
        "config": SolverConfig(**solver_kwargs),
        "specs": specs,
        "engine": entries.pop("engine", "centralized"),
        "out": out if out is not None else Path(entries.pop("out")) if "out" in entries else None,
    }
    entries.pop("out", None)
    if "fit_rank" in entries:
        kwargs["fit_rank"] = int(entries.pop("fit_rank"))
    for flag in ("trajectories", "timing", "plots"):
        if flag in entries:
            word = entries.pop(flag).lower()
            if word not in _BOOL_WORDS:
                raise ValueError(f"{flag} must be a boolean, got {word!r}")
            kwargs[flag] = _BOOL_WORDS[word]
    if "workers" in entries:
        kwargs["workers"] = int(entries.pop("workers"))
    if entries:
        raise ValueError(f"unknown config keys: {', '.join(sorted(entries))}")
    return ExperimentSpec(**kwargs)
