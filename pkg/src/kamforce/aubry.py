"""Aubry sets, static classes, Mañé sets and calibrated orbits from barriers."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from . import minplus
from .action import ActionKernel, node_momenta, path_from_nodes, substep_nodes
from .errors import BarrierTooCoarseError, BrokenCalibrationError, ToleranceTooTightError
from .semiconcave import GridFunction, centered_gradient
from .weakkam import PeierlsBarrier, WeakKamSolution, fixed_point_residual


@numba.njit(cache=True)
def _triangle_defect(H, src, dst):
    """``D[x] = min_{a in src, b in dst} H[a, x] + H[x, b] - H[a, b]``."""
    n = H.shape[0]
    out = np.full(n, np.inf)
    arg_a = np.zeros(n, np.int64)
    arg_b = np.zeros(n, np.int64)
    for x in range(n):
        best = np.inf
        for ia in range(src.size):
            a = src[ia]
            hax = H[a, x]
            for ib in range(dst.size):
                b = dst[ib]
                v = hax + H[x, b] - H[a, b]
                if v < best:
                    best = v
                    arg_a[x] = a
                    arg_b[x] = b
        out[x] = best
    return out, arg_a, arg_b


def triangle_defect(barrier, src, dst):
    H = np.ascontiguousarray(barrier.table)
    return _triangle_defect(H, np.asarray(src, dtype=np.int64), np.asarray(dst, dtype=np.int64))


@dataclass
class AubrySet:
    c: np.ndarray
    cells: np.ndarray
    momenta: np.ndarray
    tol_aubry: float
    diagonal: np.ndarray = None

    def to_dict(self, grid):
        return dict(
            c=np.asarray(self.c).tolist(),
            cells=self.cells.tolist(),
            coords=grid.coords()[self.cells].tolist(),
            momenta=self.momenta.tolist(),
            tol_aubry=self.tol_aubry,
        )


def aubry_set(barrier: PeierlsBarrier, tol_aubry: float) -> AubrySet:
    """Cells with ``h(x, x) <= tol_aubry``.

    Momenta are ``c + du`` with ``u = h(x, .)`` differenced at ``x``.
    """
    if barrier.error_bound > tol_aubry / 2:
        raise BarrierTooCoarseError("barrier error bound exceeds tol_aubry / 2",
                                    error_bound=barrier.error_bound, tol_aubry=tol_aubry)
    diag = barrier.diagonal()
    cells = np.flatnonzero(diag <= tol_aubry)
    if cells.size == 0:
        raise ToleranceTooTightError("no cell passes the Aubry threshold",
                                     min_diagonal=float(diag.min()), tol_aubry=tol_aubry)
    mom = np.empty((cells.size, barrier.grid.dim))
    for i, a in enumerate(cells):
        mom[i] = barrier.c + centered_gradient(barrier.row(a))[a]
    return AubrySet(barrier.c.copy(), cells, mom, tol_aubry, diag)


@dataclass
class StaticClassPartition:
    classes: list
    pairwise_matrix: np.ndarray
    warnings: list = field(default_factory=list)

    def __len__(self):
        return len(self.classes)

    def class_of(self, cell):
        for i, cl in enumerate(self.classes):
            if cell in cl:
                return i
        return None

    def to_dict(self, grid=None):
        out = dict(classes=[cl.tolist() for cl in self.classes],
                   pairwise=self.pairwise_matrix.tolist(), warnings=self.warnings)
        if grid is not None:
            out["coords"] = [grid.coords()[cl].tolist() for cl in self.classes]
        return out


def static_classes(aubry: AubrySet, barrier: PeierlsBarrier) -> StaticClassPartition:
    """Connected components of ``h(x, y) + h(y, x) <= 2 tol_aubry`` on Aubry cells."""
    cells = aubry.cells
    sym = barrier.table[np.ix_(cells, cells)] + barrier.table[np.ix_(cells, cells)].T
    thr = 2.0 * aubry.tol_aubry
    ncomp, labels = connected_components(csr_matrix(sym <= thr), directed=False)
    classes = [cells[labels == k] for k in range(ncomp)]
    classes.sort(key=lambda cl: int(cl[0]))
    pair = np.zeros((ncomp, ncomp))
    notes = []
    for i in range(ncomp):
        for j in range(ncomp):
            if i == j:
                continue
            block = barrier.table[np.ix_(classes[i], classes[j])] + barrier.table[np.ix_(classes[j], classes[i])].T
            pair[i, j] = float(np.min(block))
            if i < j and pair[i, j] <= 3.0 * thr:
                notes.append(f"classes {i} and {j} separated by {pair[i, j]:.3g}, "
                             f"within 3x of the threshold {thr:.3g}")
    for note in notes:
        warnings.warn(note, RuntimeWarning, stacklevel=2)
    return StaticClassPartition(classes, pair, notes)


def elementary_solution(barrier: PeierlsBarrier, x, kernel: ActionKernel = None,
                        tol_fix: float = 0.0) -> WeakKamSolution:
    """``u = h(x, .)`` as a weak KAM solution; ``x`` is a cell or a class."""
    cells = np.atleast_1d(np.asarray(x, dtype=int))
    u = np.min(barrier.table[cells], axis=0)
    residual = 0.0
    if kernel is not None:
        residual = fixed_point_residual(kernel, u, barrier.alpha.value)
        allowed = max(2.0 * barrier.error_bound, tol_fix)
        if residual > allowed:
            raise BarrierTooCoarseError("elementary solution residual too large",
                                        residual=residual, allowed=allowed)
    return WeakKamSolution(barrier.c.copy(), GridFunction(barrier.grid, u), barrier.alpha, residual)


def dual_elementary(barrier: PeierlsBarrier, x) -> GridFunction:
    cells = np.atleast_1d(np.asarray(x, dtype=int))
    return GridFunction(barrier.grid, -np.min(barrier.table[:, cells], axis=1))


def mane_defects(barrier: PeierlsBarrier, aubry: AubrySet) -> np.ndarray:
    """Defect ``min_{a, a'} h(a, x) + h(x, a') - h(a, a')`` for every cell."""
    return triangle_defect(barrier, aubry.cells, aubry.cells)[0]


def mane_membership(barrier: PeierlsBarrier, aubry: AubrySet, x: int) -> float:
    H = barrier.table
    cells = aubry.cells
    return float(np.min(H[cells, x][:, None] + H[x, cells][None, :] - H[np.ix_(cells, cells)]))


def mane_set(barrier, aubry, tol_mane):
    d = mane_defects(barrier, aubry)
    return np.flatnonzero(d <= tol_mane), d


def heteroclinic_points(barrier: PeierlsBarrier, class_a, class_b, tol_mane: float):
    """Cells outside both classes with small triangle defect, best first.

    An empty list means no connection was found at this tolerance.
    """
    class_a = np.asarray(class_a)
    class_b = np.asarray(class_b)
    defect, _, _ = triangle_defect(barrier, class_a, class_b)
    mask = np.ones(barrier.grid.n, dtype=bool)
    mask[class_a] = False
    mask[class_b] = False
    idx = np.flatnonzero(mask & (defect <= tol_mane))
    order = np.argsort(defect[idx], kind="stable")
    return [(int(i), float(defect[i])) for i in idx[order]]


@dataclass
class CalibratedOrbit:
    nodes: np.ndarray          # grid indices at integer times
    times: np.ndarray
    positions: np.ndarray      # lifted substep positions
    substep_times: np.ndarray
    momenta: np.ndarray        # at integer times
    step_defects: np.ndarray
    defect: float
    jumps: np.ndarray = None

    def to_dict(self):
        return dict(nodes=self.nodes.tolist(), times=self.times.tolist(),
                    momenta=self.momenta.tolist(), defect=self.defect,
                    step_defects=self.step_defects.tolist())


def backward_chain(kernel: ActionKernel, u, x_end: int, n_steps: int, table=None):
    table = kernel.table if table is None else table
    u = u.values if isinstance(u, GridFunction) else np.asarray(u)
    chain = [int(x_end)]
    for _ in range(n_steps):
        cand = u + table[:, chain[-1]]
        chain.append(int(np.argmin(cand)))
    return chain[::-1]


def forward_chain(kernel: ActionKernel, dual, x_start: int, n_steps: int):
    d = dual.values if isinstance(dual, GridFunction) else np.asarray(dual)
    chain = [int(x_start)]
    for _ in range(n_steps):
        cand = d - kernel.table[chain[-1]]
        chain.append(int(np.argmax(cand)))
    return chain


def calibrated_orbit(solution: WeakKamSolution, kernel: ActionKernel, x_end: int, n_steps: int,
                     *, tol_fix: float, dual=None, n_forward: int = 0) -> CalibratedOrbit:
    """Backward calibrated chain ending at ``x_end``, optionally continued forward.

    Each step's defect is ``|u(x_{j+1}) - u(x_j) - A(x_j, x_{j+1}) - alpha|``.
    Forward steps use the dual solution and are checked against it.
    """
    a = solution.alpha.value
    u = solution.u.values
    chain = backward_chain(kernel, u, x_end, n_steps)
    defects = [abs(u[y] - u[x] - kernel.table[x, y] - a) for x, y in zip(chain[:-1], chain[1:])]
    if dual is not None and n_forward > 0:
        fwd = forward_chain(kernel, dual, x_end, n_forward)
        dv = dual.values
        defects += [abs(dv[y] - dv[x] - kernel.table[x, y] - a) for x, y in zip(fwd[:-1], fwd[1:])]
        chain = chain + fwd[1:]
    defects = np.asarray(defects)
    bad = np.flatnonzero(defects > tol_fix)
    if bad.size:
        raise BrokenCalibrationError("calibration defect above tolerance", step=int(bad[0]),
                                     defect=float(defects[bad[0]]), tol_fix=tol_fix)
    sub = [chain[0]]
    for x, y in zip(chain[:-1], chain[1:]):
        sub.extend(substep_nodes(kernel, x, y)[1:])
    path = path_from_nodes(kernel, sub, t0=-float(n_steps))
    p, jumps = node_momenta(kernel, path.points, t0=-float(n_steps))
    M = kernel.substeps
    return CalibratedOrbit(
        nodes=np.asarray(chain),
        times=np.arange(len(chain), dtype=float) - n_steps,
        positions=path.points,
        substep_times=path.times,
        momenta=p[::M],
        step_defects=defects,
        defect=float(defects.max()) if defects.size else 0.0,
        jumps=jumps,
    )


def _near(grid, x, y):
    """Grid neighbours (Chebyshev index distance at most one, periodic)."""
    ix = np.asarray(grid.multi_index(x))
    iy = np.asarray(grid.multi_index(y))
    d = np.abs(ix - iy)
    d = np.minimum(d, np.asarray(grid.sizes) - d)
    return bool(np.all(d <= 1))


@numba.njit(cache=True)
def _backward_chains(H, A, starts, horizon):
    """Backward chains of each start cell ``a`` calibrated by ``H[a]``."""
    n = A.shape[0]
    out = np.empty((starts.size, horizon + 1), np.int64)
    for s in range(starts.size):
        a = starts[s]
        x = a
        out[s, horizon] = x
        for j in range(horizon - 1, -1, -1):
            best = np.inf
            bq = 0
            for q in range(n):
                v = H[a, q] + A[q, x]
                if v < best:
                    best = v
                    bq = q
            x = bq
            out[s, j] = x
    return out


def mather_set_approx(aubry: AubrySet, barrier: PeierlsBarrier, kernel: ActionKernel,
                      horizon: int = None) -> np.ndarray:
    """Aubry cells revisited by their own backward calibrated chain.

    The chain of cell ``a`` is calibrated by the elementary solution
    ``h(a, .)``; ``a`` is kept if the chain returns within one cell of ``a``
    at some time in ``[1, horizon]``.  The default horizon exceeds the grid
    size along every axis, so a rigid rotation always comes back within one
    cell.
    """
    grid = kernel.grid
    horizon = max(grid.sizes) + 1 if horizon is None else horizon
    chains = _backward_chains(np.ascontiguousarray(barrier.table), kernel.table,
                              aubry.cells.astype(np.int64), horizon)
    sizes = np.asarray(grid.sizes)
    start = grid.multi_index(aubry.cells)[:, None, :]
    visits = grid.multi_index(chains[:, :-1])
    d = np.abs(visits - start)
    d = np.minimum(d, sizes - d)
    back = np.any(np.all(d <= 1, axis=-1), axis=1)
    return aubry.cells[back]


def recurrence_components(cells, grid):
    """Connected components of ``cells`` under grid adjacency."""
    cells = np.asarray(cells)
    if cells.size == 0:
        return 0
    adj = np.array([[_near(grid, x, y) for y in cells] for x in cells])
    return connected_components(csr_matrix(adj), directed=False)[0]
