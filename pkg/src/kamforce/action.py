"""Discretized action kernels over broken paths through grid points.

A kernel covers one period ``[0, 1]`` split into ``M`` substeps.  The cost of
a substep from ``x`` to ``y`` is the midpoint-rule action of the straight
segment along the shortest periodic lift of ``y - x``, minus ``c`` times the
displacement.  The one-period kernel is the min-plus product of the substep
tables, so every identity of the min-plus semiring is inherited exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import minplus
from .errors import BackpointersUnavailableError, GridTooLargeError
from .model import LagrangianModel

DEFAULT_CAP = 4096


@dataclass(frozen=True)
class SpatialGrid:
    sizes: tuple
    periods: tuple = None

    def __post_init__(self):
        sizes = tuple(int(s) for s in np.atleast_1d(self.sizes))
        object.__setattr__(self, "sizes", sizes)
        periods = self.periods if self.periods is not None else (1.0,) * len(sizes)
        object.__setattr__(self, "periods", tuple(float(p) for p in periods))
        if len(self.periods) != len(sizes):
            raise ValueError("periods and sizes disagree in dimension")
        if any(s < 1 for s in sizes):
            raise ValueError("grid sizes must be positive")

    @property
    def dim(self):
        return len(self.sizes)

    @property
    def n(self):
        return int(np.prod(self.sizes))

    @property
    def spacings(self):
        return np.asarray(self.periods) / np.asarray(self.sizes)

    @property
    def h(self):
        return float(np.max(self.spacings))

    def coords(self):
        axes = [np.arange(s) * (p / s) for s, p in zip(self.sizes, self.periods)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def multi_index(self, flat):
        return np.stack(np.unravel_index(np.asarray(flat), self.sizes), axis=-1)

    def flat_index(self, multi):
        multi = np.asarray(multi)
        return np.ravel_multi_index(tuple(np.mod(multi[..., i], s) for i, s in enumerate(self.sizes)),
                                    self.sizes)

    def nearest(self, point):
        """Flat index of the grid point closest to ``point`` (periodic)."""
        point = np.asarray(point, dtype=float).reshape(self.dim)
        idx = np.round(np.mod(point, self.periods) / self.spacings).astype(int)
        return int(self.flat_index(idx))

    def displacement(self, x, y):
        """Shortest periodic lift of ``y - x``; components in ``[-P/2, P/2)``."""
        per = np.asarray(self.periods)
        d = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
        return d - per * np.floor(d / per + 0.5)

    def distance(self, x, y):
        return np.sqrt(np.sum(self.displacement(x, y) ** 2, axis=-1))

    def as_array(self, values):
        return np.asarray(values).reshape(self.sizes)

    def check_cap(self, cap=DEFAULT_CAP):
        if self.n > cap:
            raise GridTooLargeError(f"grid has {self.n} points, cap is {cap}", n=self.n, cap=cap)

    def refine(self, factor):
        return SpatialGrid(tuple(s * factor for s in self.sizes), self.periods)


def grid_for(model: LagrangianModel, sizes) -> SpatialGrid:
    sizes = tuple(np.broadcast_to(np.atleast_1d(sizes), (model.dim,)))
    return SpatialGrid(sizes, model.periods)


@dataclass
class ActionKernel:
    """One-period kernel ``A_c(0, x; 1, y)`` on a grid, with argmin tables."""

    model: LagrangianModel
    grid: SpatialGrid
    c: np.ndarray
    substeps: int
    table: np.ndarray
    window: np.ndarray
    backpointers: list | None = None
    substep_tables: list | None = None
    time_origin: int = 0
    _powers: dict = field(default_factory=dict, repr=False)

    @property
    def dt(self):
        return 1.0 / self.substeps

    @property
    def discretization(self):
        return self.grid.h + 1.0 / self.substeps

    def drop_backpointers(self):
        self.backpointers = None
        self.substep_tables = None


def lift_window(model, c, grid, dt):
    speed = model.speed_bound(c)
    return np.minimum(np.asarray(grid.periods) / 2.0 + grid.spacings, speed * dt)


def substep_cost(model, c, t, x, y, dt, window=None, grid=None):
    """Modified action of one straight substep from ``x`` to ``y``.

    The midpoint is taken along the chosen lift and then wrapped.  Returns
    ``inf`` when a lift component exceeds the window.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    per = np.asarray(grid.periods if grid is not None else model.periods)
    d = y - x
    delta = d - per * np.floor(d / per + 0.5)
    c = np.asarray(c, dtype=float)
    if window is not None and np.any(np.abs(delta) > np.asarray(window) + 1e-12):
        return np.inf
    mid = np.mod(x + 0.5 * delta, per)
    vel = delta / dt
    tt = np.array([[t + 0.5 * dt]])
    val = dt * (model.lagrangian(tt, mid.reshape(1, -1), vel.reshape(1, -1))[0] - float(np.dot(c, vel)))
    return float(minplus.quantize(val))


def substep_table(model, c, grid, t, dt, window):
    """Dense table of :func:`substep_cost` over all grid pairs; substep starts at ``t``."""
    pts = grid.coords()
    per = np.asarray(grid.periods)
    n, d = pts.shape
    delta = pts[None, :, :] - pts[:, None, :]
    delta -= per * np.floor(delta / per + 0.5)
    ok = np.all(np.abs(delta) <= np.asarray(window) + 1e-12, axis=-1)
    mid = np.mod(pts[:, None, :] + 0.5 * delta, per)
    vel = delta / dt
    tt = np.full((n, n, 1), t + 0.5 * dt)
    lag = model.lagrangian(tt, mid, vel)
    val = dt * (lag - vel @ np.asarray(c, dtype=float))
    table = np.where(ok, minplus.quantize(val), np.inf)
    return table


def build_kernel(model, c, grid, M, *, cap=DEFAULT_CAP, keep_backpointers=True) -> ActionKernel:
    """Min-plus product of the ``M`` substep tables of one period."""
    if M < 1:
        raise ValueError("substep count must be positive")
    grid.check_cap(cap)
    c = np.asarray(c, dtype=float).reshape(model.dim)
    dt = 1.0 / M
    window = lift_window(model, c, grid, dt)
    tables = [substep_table(model, c, grid, j * dt, dt, window) for j in range(M)]
    acc = tables[0]
    backs = []
    for b in tables[1:]:
        if keep_backpointers:
            acc, arg = minplus.product(acc, b)
            backs.append(arg)
        else:
            acc = minplus.product_min(acc, b)
    return ActionKernel(
        model=model,
        grid=grid,
        c=c,
        substeps=M,
        table=acc,
        window=window,
        backpointers=backs if keep_backpointers else None,
        substep_tables=tables if keep_backpointers else None,
    )


def kernel_power(kernel: ActionKernel, n: int) -> np.ndarray:
    """``A_c(0, x; n, y)``; powers of two are memoized on the kernel."""
    if n < 1:
        raise ValueError("power must be >= 1")
    return minplus.power(kernel.table, n, kernel._powers)


@dataclass
class MinimizerPath:
    times: np.ndarray
    points: np.ndarray       # lifted positions, shape (K+1, d)
    velocities: np.ndarray   # per substep, shape (K, d)
    indices: np.ndarray      # grid indices of the nodes
    action_value: float
    momentum_start: np.ndarray
    momentum_end: np.ndarray
    costs: np.ndarray = None


def substep_nodes(kernel: ActionKernel, x: int, y: int) -> np.ndarray:
    """Grid indices visited at substep times by the stored minimizer x -> y."""
    if kernel.backpointers is None:
        raise BackpointersUnavailableError("kernel was built without backpointers")
    M = kernel.substeps
    nodes = np.empty(M + 1, dtype=np.int64)
    nodes[M] = y
    for j in range(M - 1, 0, -1):
        nodes[j] = kernel.backpointers[j - 1][x, nodes[j + 1]]
    nodes[0] = x
    return nodes


def path_from_nodes(kernel: ActionKernel, nodes, t0=0.0) -> MinimizerPath:
    """Lifted path, velocities and re-summed action along substep ``nodes``.

    ``nodes`` spans one or several periods; consecutive entries are one
    substep apart.
    """
    grid = kernel.grid
    M = kernel.substeps
    dt = kernel.dt
    pts = grid.coords()
    nodes = np.asarray(nodes, dtype=np.int64)
    K = nodes.size - 1
    deltas = grid.displacement(pts[nodes[:-1]], pts[nodes[1:]])
    lifted = pts[nodes[0]] + np.concatenate([np.zeros((1, grid.dim)), np.cumsum(deltas, axis=0)])
    costs = np.empty(K)
    total = 0.0
    for j in range(K):
        tab = kernel.substep_tables[j % M] if kernel.substep_tables is not None else None
        if tab is not None:
            costs[j] = tab[nodes[j], nodes[j + 1]]
        else:
            costs[j] = substep_cost(kernel.model, kernel.c, t0 + j * dt, pts[nodes[j]],
                                    pts[nodes[j + 1]], dt, kernel.window, grid)
        total = total + costs[j]
    vel = deltas / dt
    p0, p1 = discrete_momenta(kernel, lifted[0], lifted[1], t0)
    q0, q1 = discrete_momenta(kernel, lifted[-2], lifted[-1], t0 + (K - 1) * dt)
    return MinimizerPath(
        times=t0 + dt * np.arange(K + 1),
        points=lifted,
        velocities=vel,
        indices=nodes,
        action_value=float(total),
        momentum_start=p0,
        momentum_end=q1,
        costs=costs,
    )


def discrete_momenta(kernel, x0, x1, t):
    """Discrete Legendre transforms of the midpoint rule on one substep.

    Returns the momenta at the start and the end of the segment.
    """
    dt = kernel.dt
    model = kernel.model
    mid = (0.5 * (x0 + x1)).reshape(1, -1)
    vel = ((x1 - x0) / dt).reshape(1, -1)
    tt = np.array([[t + 0.5 * dt]])
    pv = model.legendre_v(tt, mid, vel)[0]
    lq = model.dl_dq(tt, mid, vel)[0]
    return pv - 0.5 * dt * lq, pv + 0.5 * dt * lq


def node_momenta(kernel, points, t0=0.0):
    """Momenta at every node of a lifted substep path.

    Interior nodes average the end momentum of the incoming segment and the
    start momentum of the outgoing one; ``jumps`` holds their difference,
    which vanishes for exact discrete Euler-Lagrange solutions.
    """
    points = np.asarray(points, dtype=float)
    K = points.shape[0] - 1
    dt = kernel.dt
    starts = np.empty((K, points.shape[1]))
    ends = np.empty_like(starts)
    for j in range(K):
        starts[j], ends[j] = discrete_momenta(kernel, points[j], points[j + 1], t0 + j * dt)
    p = np.empty_like(points)
    p[0] = starts[0]
    p[-1] = ends[-1]
    p[1:-1] = 0.5 * (ends[:-1] + starts[1:])
    jumps = np.zeros_like(points)
    jumps[1:-1] = starts[1:] - ends[:-1]
    return p, jumps


def backtrack_minimizer(kernel: ActionKernel, x: int, y: int, chain=None) -> MinimizerPath:
    """Reconstruct the discrete minimizer from ``x`` to ``y``.

    ``chain`` optionally lists the integer-time grid indices
    ``[x, z_1, ..., z_{n-1}, y]`` of a multi-period minimizer; each period is
    then expanded through the substep backpointers.
    """
    if kernel.backpointers is None:
        raise BackpointersUnavailableError("kernel was built without backpointers")
    chain = [x, y] if chain is None else list(chain)
    nodes = [chain[0]]
    for a, b in zip(chain[:-1], chain[1:]):
        nodes.extend(substep_nodes(kernel, a, b)[1:])
    return path_from_nodes(kernel, nodes)


def integer_chain(kernel: ActionKernel, x: int, y: int, n: int):
    """Integer-time nodes of an ``n``-period minimizer from ``x`` to ``y``."""
    if n == 1:
        return [x, y]
    rows = [np.full(kernel.grid.n, np.inf)]
    rows[0][x] = 0.0
    for _ in range(n - 1):
        rows.append(minplus.vec_min(rows[-1], kernel.table)[0])
    chain = [y]
    for j in range(n - 1, 0, -1):
        cand = rows[j] + kernel.table[:, chain[-1]]
        chain.append(int(np.argmin(cand)))
    chain.append(x)
    return chain[::-1]


@dataclass
class SpeedReport:
    max_speed: np.ndarray
    bound: np.ndarray
    window_speed: np.ndarray
    saturated: bool
    within_hint: bool


def speed_bound_check(kernel: ActionKernel, max_pairs=4096) -> SpeedReport:
    """Largest substep speed over backtracked minimizers of sampled pairs."""
    n = kernel.grid.n
    rng = np.random.default_rng(0)
    if n * n <= max_pairs:
        pairs = [(i, j) for i in range(n) for j in range(n)]
    else:
        pairs = list(zip(rng.integers(0, n, max_pairs), rng.integers(0, n, max_pairs)))
    vmax = np.zeros(kernel.grid.dim)
    for x, y in pairs:
        if not np.isfinite(kernel.table[x, y]):
            continue
        path = path_from_nodes(kernel, substep_nodes(kernel, int(x), int(y)))
        vmax = np.maximum(vmax, np.max(np.abs(path.velocities), axis=0))
    bound = kernel.model.speed_bound(kernel.c)
    window_speed = kernel.window / kernel.dt
    slack = kernel.grid.spacings / kernel.dt
    saturated = bool(np.any(vmax >= window_speed - 1e-9) and np.any(window_speed < bound))
    return SpeedReport(vmax, bound, window_speed, saturated,
                       bool(np.all(vmax <= bound + slack)))


def kernel_continuity_check(model0, model1, c, grid, M):
    """Both sides of ``||A_L0 - A_L1|| <= max_{|v| <= K} |L1 - L0|`` over one period.

    The right-hand side is maximized over the exact sample set the discrete
    kernels evaluate (substep midpoints and admissible grid velocities), so
    the discrete inequality holds without slack.
    """
    k0 = build_kernel(model0, c, grid, M, keep_backpointers=False)
    k1 = build_kernel(model1, c, grid, M, keep_backpointers=False)
    finite = np.isfinite(k0.table) & np.isfinite(k1.table)
    lhs = float(np.max(np.abs(k0.table - k1.table)[finite])) if finite.any() else 0.0
    window = np.maximum(k0.window, k1.window)
    dt = 1.0 / M
    pts = grid.coords()
    per = np.asarray(grid.periods)
    rhs = 0.0
    for j in range(M):
        delta = pts[None, :, :] - pts[:, None, :]
        delta -= per * np.floor(delta / per + 0.5)
        ok = np.all(np.abs(delta) <= window + 1e-12, axis=-1)
        mid = np.mod(pts[:, None, :] + 0.5 * delta, per)
        vel = delta / dt
        tt = np.full(ok.shape + (1,), (j + 0.5) * dt)
        diff = np.abs(model1.lagrangian(tt, mid, vel) - model0.lagrangian(tt, mid, vel))
        rhs = max(rhs, float(np.max(diff[ok])))
    return lhs, rhs
