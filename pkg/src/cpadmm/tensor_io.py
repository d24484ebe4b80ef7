"""Tensor, model, and solver-state file formats.

Tensors travel in two interchangeable forms:

* text COO — a header line ``dims d1 d2 [d3 d4]`` followed by one
  ``i j k [l] value`` line per nonzero, all indices zero-based;
* raw binary — magic ``CPDT``, a little-endian u32 order, u32 extents,
  then the dense values as little-endian f64 in row-major index order.

Models and fit states use a small self-describing text format so saved
artifacts stay diffable and byte-reproducible.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .solver import SolverState
from .tensors import CooTensor, DenseTensor, KruskalModel

MAGIC = b"CPDT"


def write_coo(t: DenseTensor | CooTensor, path: str | Path) -> None:
    if isinstance(t, DenseTensor):
        t = CooTensor.from_dense(t)
    with open(path, "w") as fh:
        fh.write("dims " + " ".join(str(d) for d in t.dims) + "\n")
        for idx, val in zip(t.indices, t.vals):
            fh.write(" ".join(str(int(i)) for i in idx) + f" {float(val)!r}\n")


def read_coo(path: str | Path) -> CooTensor:
    with open(path) as fh:
        header = fh.readline().split()
        if not header or header[0] != "dims":
            raise ValueError(f"{path}: expected 'dims ...' header")
        dims = [int(d) for d in header[1:]]
        order = len(dims)
        indices, vals = [], []
        for lineno, line in enumerate(fh, start=2):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != order + 1:
                raise ValueError(f"{path}:{lineno}: expected {order} indices and a value")
            indices.append([int(p) for p in parts[:order]])
            vals.append(float(parts[order]))
    return CooTensor(dims, np.array(indices, dtype=np.int64).reshape(-1, order), np.array(vals))


def write_binary(t: DenseTensor, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", t.order))
        fh.write(struct.pack(f"<{t.order}I", *t.dims))
        fh.write(np.ascontiguousarray(t.values, dtype="<f8").tobytes())


def read_binary(path: str | Path) -> DenseTensor:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        (order,) = struct.unpack("<I", fh.read(4))
        dims = struct.unpack(f"<{order}I", fh.read(4 * order))
        count = int(np.prod(dims))
        data = np.frombuffer(fh.read(8 * count), dtype="<f8", count=count)
        if data.size != count:
            raise ValueError(f"{path}: truncated value payload")
    return DenseTensor(data.reshape(dims))


def read_tensor(path: str | Path) -> DenseTensor | CooTensor:
    """Dispatch on content: CPDT binary or text COO."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == MAGIC:
        return read_binary(path)
    return read_coo(path)


def write_tensor(t: DenseTensor | CooTensor, path: str | Path) -> None:
    """Dense tensors go to .coo/.txt as text COO, otherwise CPDT binary;
    sparse tensors are always written as text COO."""
    suffix = Path(path).suffix.lower()
    if isinstance(t, CooTensor) or suffix in (".coo", ".txt"):
        write_coo(t, path)
    else:
        write_binary(t, path)


def _write_matrix(fh, tag: str, mode: int, mat: np.ndarray) -> None:
    fh.write(f"{tag} {mode} {mat.shape[0]} {mat.shape[1]}\n")
    for row in mat:
        fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def write_model(model: KruskalModel, path: str | Path) -> None:
    with open(path, "w") as fh:
        fh.write(f"kruskal {model.order} {model.rank}\n")
        for mode in range(1, model.order + 1):
            _write_matrix(fh, "factor", mode, model.factor(mode))


def write_state(state: SolverState, path: str | Path) -> None:
    """Full fit state: factors, auxiliary copies, duals, penalties."""
    with open(path, "w") as fh:
        fh.write(f"kruskal {state.order} {state.factors[0].shape[1]}\n")
        fh.write("rho " + " ".join(repr(float(r)) for r in state.rho) + "\n")
        for mode in range(1, state.order + 1):
            _write_matrix(fh, "factor", mode, state.factors[mode - 1])
        for mode in range(1, state.order + 1):
            _write_matrix(fh, "aux", mode, state.aux[mode - 1])
        for mode in range(1, state.order + 1):
            _write_matrix(fh, "dual", mode, state.duals[mode - 1])


def _read_sections(path: str | Path):
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 3 or header[0] != "kruskal":
            raise ValueError(f"{path}: expected 'kruskal <order> <rank>' header")
        order, rank = int(header[1]), int(header[2])
        rho = None
        sections: dict[tuple[str, int], np.ndarray] = {}
        line = fh.readline()
        while line:
            parts = line.split()
            if not parts:
                line = fh.readline()
                continue
            if parts[0] == "rho":
                rho = [float(v) for v in parts[1:]]
                line = fh.readline()
                continue
            tag, mode, rows, cols = parts[0], int(parts[1]), int(parts[2]), int(parts[3])
            data = np.empty((rows, cols))
            for r in range(rows):
                data[r] = [float(v) for v in fh.readline().split()]
            sections[(tag, mode)] = data
            line = fh.readline()
    return order, rank, rho, sections


def read_model(path: str | Path) -> KruskalModel:
    order, _, _, sections = _read_sections(path)
    return KruskalModel([sections[("factor", m)] for m in range(1, order + 1)])


def read_state(path: str | Path) -> SolverState:
    """Read a fit state; files holding only factors load with the factors
    duplicated as auxiliaries and zero duals (an exact-feasibility reading)."""
    order, _, rho, sections = _read_sections(path)
    factors = [sections[("factor", m)] for m in range(1, order + 1)]
    if ("aux", 1) in sections:
        aux = [sections[("aux", m)] for m in range(1, order + 1)]
        duals = [sections[("dual", m)] for m in range(1, order + 1)]
    else:
        aux = [f.copy() for f in factors]
        duals = [np.zeros_like(f) for f in factors]
    if rho is None:
        rho = [1.0] * order
    return SolverState(factors, aux, duals, rho)
