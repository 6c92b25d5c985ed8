"""Binary and CSV persistence for kernels, barriers and grid functions.

Binary layout (version 1, little-endian)::

    magic   8 bytes   b"KAMFTAB1"
    u32     version
    u32     kind      (0 kernel, 1 barrier, 2 grid function)
    u32     d
    u32[d]  grid sizes
    u32     M         (substeps; 0 when not applicable)
    f64[d]  cohomology class c
    f64[d]  axis periods
    u32     rows, cols
    f64[rows*cols]    row-major data
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"KAMFTAB1"
VERSION = 1
KINDS = {"kernel": 0, "barrier": 1, "function": 2}
KIND_NAMES = {v: k for k, v in KINDS.items()}


@dataclass
class Table:
    kind: str
    sizes: tuple
    M: int
    c: np.ndarray
    periods: tuple
    data: np.ndarray


def write_table(path, table: Table):
    data = np.ascontiguousarray(np.atleast_2d(table.data), dtype="<f8")
    d = len(table.sizes)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", VERSION, KINDS[table.kind], d))
        fh.write(struct.pack(f"<{d}I", *table.sizes))
        fh.write(struct.pack("<I", table.M))
        fh.write(np.asarray(table.c, dtype="<f8").reshape(d).tobytes())
        fh.write(np.asarray(table.periods, dtype="<f8").reshape(d).tobytes())
        fh.write(struct.pack("<II", *data.shape))
        fh.write(data.tobytes())


def read_table(path) -> Table:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:8] != MAGIC:
        raise ValueError("not a table file (bad magic)")
    off = 8
    version, kind, d = struct.unpack_from("<III", buf, off)
    off += 12
    if version != VERSION:
        raise ValueError(f"unsupported table version {version}")
    sizes = struct.unpack_from(f"<{d}I", buf, off)
    off += 4 * d
    (M,) = struct.unpack_from("<I", buf, off)
    off += 4
    c = np.frombuffer(buf, "<f8", d, off).copy()
    off += 8 * d
    periods = tuple(np.frombuffer(buf, "<f8", d, off))
    off += 8 * d
    rows, cols = struct.unpack_from("<II", buf, off)
    off += 8
    data = np.frombuffer(buf, "<f8", rows * cols, off).reshape(rows, cols).copy()
    return Table(KIND_NAMES[kind], tuple(sizes), M, c, periods, data)


def kernel_table(kernel) -> Table:
    return Table("kernel", kernel.grid.sizes, kernel.substeps, kernel.c, kernel.grid.periods,
                 kernel.table)


def barrier_table(barrier, M=0) -> Table:
    return Table("barrier", barrier.grid.sizes, M, barrier.c, barrier.grid.periods, barrier.table)


def function_table(u, c, M=0) -> Table:
    return Table("function", u.grid.sizes, M, np.asarray(c), u.grid.periods, u.values[None, :])


def write_csv(path, header, rows):
    rows = np.asarray(rows, dtype=float).reshape(-1, len(header)) if len(rows) else np.zeros((0, len(header)))
    np.savetxt(path, rows, delimiter=",", header=",".join(header), comments="", fmt="%.17g")


def grid_function_csv(path, u):
    pts = u.grid.coords()
    head = [f"q{i + 1}" for i in range(u.grid.dim)] + ["u"]
    write_csv(path, head, np.column_stack([pts, u.values]))


def table_csv(path, table: np.ndarray):
    """Square table as ``source,target,value`` triples."""
    n, m = table.shape
    i, j = np.meshgrid(np.arange(n), np.arange(m), indexing="ij")
    write_csv(path, ["source", "target", "value"], np.column_stack([i.ravel(), j.ravel(), table.ravel()]))
