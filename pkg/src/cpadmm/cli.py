"""Command-line harness.

Subcommands: ``generate`` (write synthetic tensor files), ``fit`` (one
factorization), ``bench`` (experiment batch from a config file),
``equivcheck`` (centralized vs. mesh trajectory deviation), and ``kkt``
(first-order residuals of a saved state on a saved tensor).

Exit codes: 0 on success, 1 on usage errors, 2 on runtime errors.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import bench, mesh, solver, tensor_io
from .blocks import PartitionPlan
from .constraints import ConstraintSpec
from .solver import SolverConfig


class _Parser(argparse.ArgumentParser):
    # usage errors exit 1 (argparse's default of 2 is our runtime-error code)
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--eps-abs", type=float, default=1e-4)
    p.add_argument("--eps-rel", type=float, default=1e-4)
    p.add_argument("--rho-init", type=float, default=1.0)
    p.add_argument("--mu", type=float, default=8.0)
    p.add_argument("--tau-incr", type=float, default=4.0)
    p.add_argument("--tau-decr", type=float, default=2.0)
    p.add_argument("--n-max", type=int, default=400)
    p.add_argument("--max-restarts", type=int, default=10)
    p.add_argument("--inner-sweeps", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-adapt", action="store_true", help="freeze penalty adaptation")


def _solver_config(args, **overrides) -> SolverConfig:
    kwargs = dict(
        eps_abs=args.eps_abs,
        eps_rel=args.eps_rel,
        rho_init=args.rho_init,
        mu=args.mu,
        tau_incr=args.tau_incr,
        tau_decr=args.tau_decr,
        n_max=args.n_max,
        max_restarts=args.max_restarts,
        inner_sweeps=args.inner_sweeps,
        seed=args.seed,
        adapt=not args.no_adapt,
    )
    kwargs.update(overrides)
    return SolverConfig(**kwargs)


def _constraints(names: list[str] | None, order: int) -> list[ConstraintSpec]:
    if not names:
        return [ConstraintSpec.nonneg()] * order
    specs = [ConstraintSpec.parse(n) for n in names]
    if len(specs) == 1:
        return specs * order
    if len(specs) != order:
        raise ValueError(f"give one constraint or one per mode ({order})")
    return specs


def _cmd_generate(args) -> int:
    t, truth = bench.generate(args.dims, args.rank, args.sigma2, args.seed)
    tensor_io.write_tensor(t, args.out)
    print(f"wrote {args.out}: dims {'x'.join(map(str, t.dims))}, rank {args.rank}, "
          f"sigma2 {args.sigma2}, seed {args.seed}")
    if args.save_truth:
        tensor_io.write_model(truth, args.save_truth)
        print(f"wrote ground-truth model to {args.save_truth}")
    return 0


def _fit_history_csv(result, path: Path) -> None:
    order = result.model.order
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["iteration", "rfe"]
        header += [f"primal_mode{m}" for m in range(1, order + 1)]
        header += [f"dual_mode{m}" for m in range(1, order + 1)]
        writer.writerow(header)
        for k, res in enumerate(result.residual_history, start=1):
            rfe = result.rfe_history[k - 1] if k <= len(result.rfe_history) else ""
            row = [k, repr(rfe) if rfe != "" else ""]
            row += [repr(v) for v in res.primal]
            row += [repr(v) for v in res.dual]
            writer.writerow(row)


def _cmd_fit(args) -> int:
    t = tensor_io.read_tensor(args.tensor)
    specs = _constraints(args.constraint, t.order)
    config = _solver_config(args, track_rfe=True)
    kind, n = bench.parse_engine(args.engine)
    if kind == "mesh":
        result = mesh.distributed_fit(
            t, args.rank, specs, config, PartitionPlan.uniform(t.dims, n),
            trace_path=args.trace,
        )
    else:
        result = solver.fit(t, args.rank, specs, config)
    print(f"rfe {result.rfe:.6e}  iterations {result.iterations}  "
          f"restarts {result.restarts}  converged {str(result.converged).lower()}")
    if args.out:
        tensor_io.write_state(result.state, args.out)
        print(f"wrote fit state to {args.out}")
    if args.history:
        _fit_history_csv(result, Path(args.history))
        print(f"wrote iteration history to {args.history}")
    return 0


def _cmd_bench(args) -> int:
    entries = bench.parse_config(Path(args.config).read_text())
    spec = bench.experiment_from_config(entries, out=Path(args.out) if args.out else None)
    if spec.out is None:
        raise ValueError("no output directory: set 'out' in the config or pass --out")
    if args.trajectories:
        spec.trajectories = True
    if args.no_timing:
        spec.timing = False
    if args.no_plots:
        spec.plots = False
    if args.workers is not None:
        spec.workers = args.workers
    result = bench.run_experiment(spec)
    s = result.summary()
    print(f"mean RFE {s['mean_rfe']:.4f} over R={s['realizations']} "
          f"(std {s['std_rfe']:.4f}); mean time {s['mean_time_s']:.3f}s "
          f"(std {s['std_time_s']:.3f}); mean restarts {s['mean_restarts']:.2f}; "
          f"converged {s['converged']}/{s['realizations']}")
    print(f"outputs in {spec.out}")
    return 0


def _cmd_equivcheck(args) -> int:
    if args.tensor:
        t = tensor_io.read_tensor(args.tensor)
    else:
        if not args.dims:
            raise ValueError("equivcheck needs --tensor or --dims")
        t, _ = bench.generate(args.dims, args.rank, args.sigma2, args.gen_seed)
    kind, n = bench.parse_engine(args.engine)
    if kind != "mesh":
        raise ValueError("equivcheck compares against a mesh engine: use --engine mesh:<N>")
    config = _solver_config(
        args, eps_abs=0.0, eps_rel=0.0, n_max=args.iters, max_restarts=0,
        track_factors=True,
    )
    specs = _constraints(args.constraint, t.order)
    central = solver.fit(t, args.rank, specs, config)
    distributed = mesh.distributed_fit(t, args.rank, specs, config, n)
    deviation = 0.0
    for fc, fm in zip(central.factor_history, distributed.factor_history):
        for a, b in zip(fc, fm):
            scale = max(float(np.linalg.norm(a)), 1e-300)
            deviation = max(deviation, float(np.linalg.norm(a - b)) / scale)
    print(f"max relative deviation over {args.iters} iterations (mesh {n}x{n}): "
          f"{deviation:.3e}")
    return 0


def _cmd_kkt(args) -> int:
    t = tensor_io.read_tensor(args.tensor)
    state = tensor_io.read_state(args.state)
    res = solver.kkt_residuals(state, t)
    scale = t.norm()
    print(f"tensor norm {scale:.6e}")
    for name, value in res.as_dict().items():
        print(f"{name} {value:.6e}  ({value / scale:.3e} of ||X||)")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="cpadmm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[], help="write a synthetic tensor")
    p.add_argument("--dims", type=int, nargs="+", required=True)
    p.add_argument("--rank", type=int, required=True)
    p.add_argument("--sigma2", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True,
                   help="tensor path (.coo/.txt for text COO, else CPDT binary)")
    p.add_argument("--save-truth", help="also write the ground-truth model")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("fit", help="factorize one tensor")
    p.add_argument("--tensor", required=True)
    p.add_argument("--rank", type=int, required=True)
    p.add_argument("--constraint", nargs="+",
                   help="nonneg | nonneg_card:<c> | row_stochastic (one or one per mode)")
    p.add_argument("--engine", default="centralized", help="centralized or mesh:<N>")
    p.add_argument("--out", help="write the fit state (factors, aux, duals)")
    p.add_argument("--history", help="write per-iteration residuals/RFE CSV")
    p.add_argument("--trace", help="write the mesh message trace CSV")
    _add_solver_flags(p)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("bench", help="run an experiment batch from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--trajectories", action="store_true")
    p.add_argument("--no-timing", action="store_true",
                   help="zero the wall-time column for byte-reproducible output")
    p.add_argument("--no-plots", action="store_true")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("equivcheck", help="centralized vs mesh trajectory deviation")
    p.add_argument("--tensor")
    p.add_argument("--dims", type=int, nargs="+")
    p.add_argument("--sigma2", type=float, default=0.0)
    p.add_argument("--gen-seed", type=int, default=0)
    p.add_argument("--rank", type=int, required=True)
    p.add_argument("--iters", type=int, default=50)
    p.add_argument("--engine", default="mesh:2", help="mesh:<N>")
    p.add_argument("--constraint", nargs="+")
    _add_solver_flags(p)
    p.set_defaults(func=_cmd_equivcheck)

    p = sub.add_parser("kkt", help="KKT residuals of a saved state on a tensor")
    p.add_argument("--tensor", required=True)
    p.add_argument("--state", required=True)
    p.set_defaults(func=_cmd_kkt)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"cpadmm: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
