"""Figure rendering for experiment outputs.

Reads the CSVs an experiment wrote (so figures always reflect the artifacts
on disk) and renders PNGs next to them: per-realization error/time panels,
and RFE-vs-iteration trajectories when those were recorded.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .bench import read_records_csv


def _read_trajectories(outdir: Path) -> list[np.ndarray]:
    out = []
    for path in sorted(outdir.glob("trajectory_r*.csv")):
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        out.append(np.array([float(r["rfe"]) for r in rows]))
    return out


def render_experiment_figures(outdir: str | Path) -> list[Path]:
    """Render all figures available for one experiment directory."""
    outdir = Path(outdir)
    written = []
    records_path = outdir / "records.csv"
    if records_path.exists():
        records = read_records_csv(records_path)
        fig, (ax_rfe, ax_time) = plt.subplots(2, 1, figsize=(6.4, 6.0), sharex=True)
        idx = [r.realization for r in records]
        ax_rfe.plot(idx, [r.rfe for r in records], "o-", color="tab:blue", ms=4)
        ax_rfe.set_ylabel("relative factorization error")
        ax_rfe.grid(True, alpha=0.3)
        ax_time.plot(idx, [r.time_s for r in records], "s-", color="tab:red", ms=4)
        ax_time.set_ylabel("wall time [s]")
        ax_time.set_xlabel("realization")
        ax_time.grid(True, alpha=0.3)
        fig.tight_layout()
        path = outdir / "records.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)

    trajectories = _read_trajectories(outdir)
    if trajectories:
        fig, ax = plt.subplots(figsize=(6.4, 4.2))
        longest = max(len(t) for t in trajectories)
        for traj in trajectories:
            ax.semilogy(np.arange(1, len(traj) + 1), traj, color="tab:gray", alpha=0.35, lw=0.8)
        padded = np.full((len(trajectories), longest), np.nan)
        for i, traj in enumerate(trajectories):
            padded[i, : len(traj)] = traj
        with np.errstate(all="ignore"):
            mean = np.nanmean(padded, axis=0)
        ax.semilogy(np.arange(1, longest + 1), mean, color="tab:blue", lw=2.0, label="mean")
        ax.set_xlabel("iteration")
        ax.set_ylabel("relative factorization error")
        ax.grid(True, which="both", alpha=0.3)
        ax.legend()
        fig.tight_layout()
        path = outdir / "trajectories.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)
    return written
