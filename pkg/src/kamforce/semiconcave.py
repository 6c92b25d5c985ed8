"""Discrete semi-concavity, super-differentials and regularity on min-sets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .action import SpatialGrid


@dataclass(frozen=True)
class GridFunction:
    grid: SpatialGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float).reshape(self.grid.n)
        object.__setattr__(self, "values", vals)

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(grid.n))

    @classmethod
    def sample(cls, grid, f):
        """Evaluate ``f`` on the grid coordinates, shape ``(n, d)``."""
        return cls(grid, f(grid.coords()))

    def normalized(self):
        return GridFunction(self.grid, self.values - np.min(self.values))

    def oscillation(self, mask=None):
        vals = self.values if mask is None else self.values[mask]
        return float(np.max(vals) - np.min(vals))

    def array(self):
        return self.values.reshape(self.grid.sizes)

    def __add__(self, other):
        other = other.values if isinstance(other, GridFunction) else other
        return GridFunction(self.grid, self.values + other)

    def __sub__(self, other):
        other = other.values if isinstance(other, GridFunction) else other
        return GridFunction(self.grid, self.values - other)

    def __neg__(self):
        return GridFunction(self.grid, -self.values)


def _steps(grid: SpatialGrid):
    """Integer stencil directions: axes, plus both diagonals in 2D."""
    d = grid.dim
    steps = [tuple(int(i == a) for i in range(d)) for a in range(d)]
    if d == 2:
        steps += [(1, 1), (1, -1)]
    return steps


def _shift(arr, step):
    return np.roll(arr, shift=tuple(-s for s in step), axis=tuple(range(arr.ndim)))


def second_differences(u: GridFunction):
    """Per-direction arrays of ``(u(x+s) + u(x-s) - 2u(x)) / (2|s|^2)``."""
    arr = u.array()
    hs = u.grid.spacings
    out = []
    for st in _steps(u.grid):
        h2 = float(np.sum((np.asarray(st) * hs) ** 2))
        plus = _shift(arr, st)
        minus = _shift(arr, tuple(-s for s in st))
        out.append((st, (plus + minus - 2.0 * arr) / (2.0 * h2)))
    return out


@dataclass
class SemiconcavityReport:
    constant: float
    direction_max: dict
    witness: int

    def to_dict(self, grid=None):
        out = {
            "constant": self.constant,
            "direction_max": {str(k): v for k, v in self.direction_max.items()},
            "witness": self.witness,
        }
        if grid is not None:
            out["witness_coords"] = grid.coords()[self.witness].tolist()
        return out


def semiconcavity_constant(u: GridFunction) -> SemiconcavityReport:
    """Largest discrete second difference over axes (and diagonals in 2D).

    The value is clamped at zero.  Requires at least three points per axis.
    """
    if min(u.grid.sizes) < 3:
        raise ValueError("need at least 3 grid points per axis")
    best = -np.inf
    witness = 0
    per_dir = {}
    for st, dd in second_differences(u):
        flat = dd.ravel()
        i = int(np.argmax(flat))
        per_dir[st] = float(flat[i])
        if flat[i] > best:
            best, witness = float(flat[i]), i
    return SemiconcavityReport(max(0.0, best), per_dir, witness)


@dataclass
class Superdifferential:
    """Box of covectors; ``lower == upper`` in the differentiable case."""

    lower: np.ndarray
    upper: np.ndarray
    singleton: bool

    @property
    def center(self):
        return 0.5 * (self.lower + self.upper)


def one_sided_slopes(u: GridFunction, x: int):
    arr = u.array()
    idx = np.asarray(u.grid.multi_index(x))
    hs = u.grid.spacings
    fwd = np.empty(u.grid.dim)
    bwd = np.empty(u.grid.dim)
    here = arr[tuple(idx)]
    for a in range(u.grid.dim):
        e = np.zeros(u.grid.dim, dtype=int)
        e[a] = 1
        up = arr[tuple(np.mod(idx + e, u.grid.sizes))]
        dn = arr[tuple(np.mod(idx - e, u.grid.sizes))]
        fwd[a] = (up - here) / hs[a]
        bwd[a] = (here - dn) / hs[a]
    return bwd, fwd


def superdifferential_at(u: GridFunction, x: int, K: float) -> Superdifferential:
    """Discrete super-differential at grid point ``x``.

    If the backward and forward slopes agree within ``2 K h`` on every axis,
    the centered difference is returned as a singleton; otherwise the box
    spanned by the one-sided slopes.
    """
    bwd, fwd = one_sided_slopes(u, x)
    hs = u.grid.spacings
    if np.all(np.abs(fwd - bwd) <= 2.0 * K * hs + 1e-12):
        p = 0.5 * (fwd + bwd)
        return Superdifferential(p, p.copy(), True)
    return Superdifferential(np.minimum(fwd, bwd), np.maximum(fwd, bwd), False)


def centered_gradient(u: GridFunction) -> np.ndarray:
    """Centered differences on all cells, shape ``(n, d)``."""
    arr = u.array()
    hs = u.grid.spacings
    grads = []
    for a in range(u.grid.dim):
        st = tuple(int(i == a) for i in range(u.grid.dim))
        grads.append(((_shift(arr, st) - _shift(arr, tuple(-s for s in st))) / (2 * hs[a])).ravel())
    return np.stack(grads, axis=-1)


def differentiable_mask(u: GridFunction, K: float) -> np.ndarray:
    """Cells where one-sided slopes agree within ``2 K h`` on each axis."""
    arr = u.array()
    hs = u.grid.spacings
    ok = np.ones(u.grid.n, dtype=bool)
    for a in range(u.grid.dim):
        st = tuple(int(i == a) for i in range(u.grid.dim))
        fwd = (_shift(arr, st) - arr) / hs[a]
        bwd = (arr - _shift(arr, tuple(-s for s in st))) / hs[a]
        ok &= (np.abs(fwd - bwd) <= 2.0 * K * hs[a] + 1e-12).ravel()
    return ok


def min_cells(values, tol):
    values = np.asarray(values)
    return np.flatnonzero(values <= np.min(values) + tol)


@dataclass
class LipschitzGraph:
    cells: np.ndarray
    covectors: np.ndarray
    ratio: float

    def to_dict(self, grid):
        return {
            "cells": self.cells.tolist(),
            "coords": grid.coords()[self.cells].tolist(),
            "covectors": self.covectors.tolist(),
            "lipschitz_ratio": self.ratio,
        }


def lipschitz_ratio(grid, cells, covectors):
    if len(cells) < 2:
        return 0.0
    pts = grid.coords()[cells]
    dist = grid.distance(pts[:, None, :], pts[None, :, :])
    dp = np.linalg.norm(covectors[:, None, :] - covectors[None, :, :], axis=-1)
    off = dist > 0
    return float(np.max(dp[off] / dist[off])) if off.any() else 0.0


def lipschitz_graph_on_minset(u: GridFunction, v: GridFunction, tol: float) -> LipschitzGraph:
    """Covectors ``du`` over the near-minimum cells of ``u + v``.

    ``tol`` is the min-set tolerance.  The Lipschitz ratio is the largest
    ``|du_x - du_y| / d(x, y)`` over pairs of min-set cells.
    """
    if u.grid != v.grid:
        raise ValueError("u and v must share a grid")
    cells = min_cells(u.values + v.values, tol)
    if cells.size == 0:
        raise RuntimeError("empty min-set")
    cov = centered_gradient(u)[cells]
    return LipschitzGraph(cells, cov, lipschitz_ratio(u.grid, cells, cov))
