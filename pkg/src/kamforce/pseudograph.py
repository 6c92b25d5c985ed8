"""Pseudographs, their evolution, wedges and cohomology modification."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import minplus
from .action import ActionKernel, SpatialGrid
from .errors import ObstructionError
from .semiconcave import (GridFunction, centered_gradient, differentiable_mask,
                          min_cells, semiconcavity_constant)


@dataclass(frozen=True)
class Pseudograph:
    """Graph of ``c + du``; ``dual`` marks a semi-convex ``u``."""

    c: np.ndarray
    u: GridFunction
    dual: bool = False

    def __post_init__(self):
        object.__setattr__(self, "c", np.asarray(self.c, dtype=float).reshape(self.u.grid.dim))

    @property
    def grid(self) -> SpatialGrid:
        return self.u.grid

    def norm(self, mask=None):
        """``|c| + osc(u) / 2``, optionally over the cells in ``mask``."""
        return float(np.linalg.norm(self.c) + 0.5 * self.u.oscillation(mask))

    def semiconcavity(self):
        vals = -self.u.values if self.dual else self.u.values
        return semiconcavity_constant(GridFunction(self.grid, vals)).constant

    def to_dict(self):
        return dict(c=self.c.tolist(), dual=self.dual, sizes=list(self.grid.sizes),
                    norm=self.norm(), values=self.u.values.tolist())


def flat(grid, c):
    return Pseudograph(c, GridFunction.zeros(grid))


def graph_points(g: Pseudograph, K: float):
    """``(cells, momenta)`` at cells where ``u`` is differentiable at scale ``K``."""
    vals = -g.u.values if g.dual else g.u.values
    mask = differentiable_mask(GridFunction(g.grid, vals), K)
    cells = np.flatnonzero(mask)
    mom = g.c + centered_gradient(g.u)[cells]
    return cells, mom


def momenta_at(g: Pseudograph, cells):
    return g.c + centered_gradient(g.u)[np.asarray(cells)]


@dataclass
class Evolution:
    """Result of one or more restricted Lax-Oleinik steps.

    ``pred[j][x]`` is the argmin source of ``x`` at iteration ``j + 1``;
    ``steps[x]`` and ``source[x]`` give the attaining step count and the
    initial cell for each target.
    """

    graph: Pseudograph
    source: np.ndarray
    steps: np.ndarray
    pred: list = field(default_factory=list)

    def chain(self, x):
        """Integer-time cells from the source to ``x``."""
        k = int(self.steps[x])
        out = [int(x)]
        for j in range(k - 1, -1, -1):
            out.append(int(self.pred[j][out[-1]]))
        return out[::-1]


def evolve(g: Pseudograph, kernel: ActionKernel, alpha_value: float) -> Evolution:
    if not np.allclose(g.c, kernel.c):
        raise ValueError("pseudograph and kernel classes differ")
    w, arg = minplus.vec_min(np.ascontiguousarray(g.u.values), kernel.table)
    out = Pseudograph(g.c, GridFunction(g.grid, w + alpha_value), g.dual)
    return Evolution(out, arg.astype(np.int64), np.ones(g.grid.n, dtype=np.int64), [arg])


def evolve_restricted(g: Pseudograph, kernel: ActionKernel, alpha_value: float, U, N: int,
                      N_prime: int) -> Evolution:
    """``min_{y in U, N <= k <= N'} u(y) + A^k(y, x) + k alpha``.

    ``U`` is a boolean mask or an index array.  Ties between step counts go
    to the smallest ``k``.
    """
    if N < 1 or N_prime < N:
        raise ValueError("need 1 <= N <= N'")
    n = g.grid.n
    mask = np.zeros(n, dtype=bool)
    mask[np.asarray(U)] = True
    if not mask.any():
        raise ValueError("U is empty")
    w = np.where(mask, g.u.values, np.inf)
    src = np.arange(n)
    best = np.full(n, np.inf)
    best_src = np.zeros(n, dtype=np.int64)
    best_k = np.zeros(n, dtype=np.int64)
    pred = []
    for k in range(1, N_prime + 1):
        w, arg = minplus.vec_min(w, kernel.table)
        w = w + alpha_value
        src = src[arg]
        pred.append(arg)
        if k >= N:
            better = w < best
            best = np.where(better, w, best)
            best_src = np.where(better, src, best_src)
            best_k = np.where(better, k, best_k)
    out = Pseudograph(kernel.c, GridFunction(g.grid, best), g.dual)
    return Evolution(out, best_src, best_k, pred)


@dataclass
class WedgeSet:
    cells: np.ndarray
    momenta: np.ndarray
    dual_momenta: np.ndarray
    tolerance: float

    @property
    def momentum_gap(self):
        return float(np.max(np.abs(self.momenta - self.dual_momenta))) if self.cells.size else 0.0

    def to_dict(self, grid):
        return dict(cells=self.cells.tolist(), coords=grid.coords()[self.cells].tolist(),
                    momenta=self.momenta.tolist(), tolerance=self.tolerance,
                    momentum_gap=self.momentum_gap)


def wedge(g: Pseudograph, gd: Pseudograph, tol_min: float) -> WedgeSet:
    """Near-minimum cells of ``u - ŭ`` with both graphs' momenta attached."""
    if g.grid != gd.grid:
        raise ValueError("grids differ")
    cells = min_cells(g.u.values - gd.u.values, tol_min)
    return WedgeSet(cells, momenta_at(g, cells), momenta_at(gd, cells), tol_min)


# -- cohomology modification -------------------------------------------------


@dataclass
class BumpForm:
    """Closed form ``sum_i d_i rho_i(q_i) dq_i`` vanishing over ``U``.

    ``weights[i]`` holds the mass of ``rho_i`` on each grid interval
    ``[q_m, q_{m+1}]`` (summing to one) and ``primitive`` the values of
    ``g = sum_i d_i (int_0^{q_i} rho_i - q_i)`` on the grid.
    """

    d: np.ndarray
    weights: list
    primitive: np.ndarray
    support: list

    def to_dict(self):
        return dict(d=self.d.tolist(), support=[list(map(int, s)) for s in self.support])


def _free_run(occupied):
    """Longest cyclic run of intervals ``[m, m+1]`` whose ends are both free."""
    n = occupied.size
    free = ~(occupied | np.roll(occupied, -1))
    if not free.any():
        return None
    if free.all():
        return np.arange(n)
    start = int(np.flatnonzero(~free)[0])
    best, run = [], []
    for s in range(1, n + 1):
        m = (start + s) % n
        if free[m]:
            run.append(m)
            if len(run) > len(best):
                best = list(run)
        else:
            run = []
    return np.asarray(best)


def bump_form(d, U, grid: SpatialGrid) -> BumpForm:
    """Unit-mass densities placed in the middle of the largest slab gap of ``U``.

    Raises :class:`ObstructionError` when a non-zero component of ``d`` has
    no transversal slab avoiding ``U``.
    """
    d = np.asarray(d, dtype=float).reshape(grid.dim)
    mask = np.zeros(grid.n, dtype=bool)
    mask[np.asarray(U, dtype=int) if not np.asarray(U).dtype == bool else np.flatnonzero(U)] = True
    arr = mask.reshape(grid.sizes)
    prim = np.zeros(grid.sizes)
    weights, support = [], []
    for i in range(grid.dim):
        n_i = grid.sizes[i]
        h_i = grid.spacings[i]
        occupied = arr.any(axis=tuple(a for a in range(grid.dim) if a != i))
        if d[i] == 0.0:
            weights.append(np.zeros(n_i))
            support.append([])
            continue
        run = _free_run(occupied)
        if run is None:
            raise ObstructionError(f"no transversal slab along axis {i}", axis=i)
        L = run.size
        core = run[L // 4: L - L // 4] if L >= 4 else run
        shape = np.sin(np.pi * (np.arange(core.size) + 0.5) / core.size) ** 2
        w = np.zeros(n_i)
        w[core] = shape / shape.sum()
        weights.append(w)
        support.append(core.tolist())
        P = grid.periods[i]
        cum = np.concatenate([[0.0], np.cumsum(w)[:-1]])
        g_axis = d[i] * (P * cum - np.arange(n_i) * h_i)
        shape_b = [1] * grid.dim
        shape_b[i] = n_i
        prim = prim + g_axis.reshape(shape_b)
    return BumpForm(d, weights, prim.ravel(), support)


def modify_cohomology(g: Pseudograph, target_c, U) -> tuple:
    """Move ``g`` to class ``target_c`` without changing it over ``U``.

    Returns the new pseudograph and the bump form used.
    """
    target_c = np.asarray(target_c, dtype=float).reshape(g.grid.dim)
    form = bump_form(target_c - g.c, U, g.grid)
    return Pseudograph(target_c, g.u + form.primitive, g.dual), form


# -- covers ------------------------------------------------------------------


def deck_shift(values, grid, axis, shift):
    arr = values.reshape(grid.sizes)
    return np.roll(arr, shift, axis=axis).ravel()


def deck_symmetrize(g: Pseudograph, k: int, axis: int) -> Pseudograph:
    """Pointwise minimum over the ``k`` deck translates along ``axis``."""
    n_axis = g.grid.sizes[axis]
    if n_axis % k:
        raise ValueError("cover size not divisible by k")
    step = n_axis // k
    vals = g.u.values
    out = vals.copy()
    for j in range(1, k):
        out = np.minimum(out, deck_shift(vals, g.grid, axis, j * step))
    return Pseudograph(g.c, GridFunction(g.grid, out), g.dual)


def base_grid(cover_grid: SpatialGrid, k: int, axis: int) -> SpatialGrid:
    sizes = list(cover_grid.sizes)
    periods = list(cover_grid.periods)
    sizes[axis] //= k
    periods[axis] /= k
    return SpatialGrid(tuple(sizes), tuple(periods))


def project(g: Pseudograph, k: int, axis: int) -> Pseudograph:
    """Restriction of a deck-invariant pseudograph to the fundamental domain."""
    base = base_grid(g.grid, k, axis)
    arr = g.u.values.reshape(g.grid.sizes)
    sl = [slice(None)] * g.grid.dim
    sl[axis] = slice(0, base.sizes[axis])
    return Pseudograph(g.c, GridFunction(base, arr[tuple(sl)].ravel()), g.dual)


def lift(g: Pseudograph, k: int, axis: int) -> Pseudograph:
    """Deck-invariant lift of a base pseudograph to the ``k``-fold cover."""
    sizes = list(g.grid.sizes)
    periods = list(g.grid.periods)
    sizes[axis] *= k
    periods[axis] *= k
    cover = SpatialGrid(tuple(sizes), tuple(periods))
    reps = [1] * g.grid.dim
    reps[axis] = k
    vals = np.tile(g.u.values.reshape(g.grid.sizes), reps).ravel()
    return Pseudograph(g.c, GridFunction(cover, vals), g.dual)


def cover_index_to_base(cover_grid: SpatialGrid, base: SpatialGrid, idx):
    multi = cover_grid.multi_index(idx)
    return base.flat_index(multi)
