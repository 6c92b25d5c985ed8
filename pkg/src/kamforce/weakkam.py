"""Lax-Oleinik operators, alpha brackets, weak KAM solutions and barriers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import minplus
from .action import ActionKernel, kernel_power
from .errors import AlphaTooLooseError, NonConvergenceError, NumericalInconsistencyError
from .semiconcave import GridFunction


@dataclass(frozen=True)
class Tolerances:
    """Tolerances in units of the discretization size ``h + 1/M``."""

    fix: float
    alpha: float
    aubry: float
    mane: float
    orbit: float
    min: float

    @classmethod
    def for_kernel(cls, kernel: ActionKernel, **overrides):
        unit = kernel.discretization
        scale = kernel.model.scale
        fix = 5.0 * unit * scale
        aubry = overrides.pop("aubry", unit * unit * scale)
        base = dict(
            fix=fix,
            alpha=fix / 8.0,
            aubry=aubry,
            mane=2.0 * aubry,
            orbit=10.0 * unit,
            min=3.0 * unit * scale,
        )
        base.update({k: v for k, v in overrides.items() if v is not None})
        if base["aubry"] > base["mane"]:
            raise ValueError("tol_aubry must not exceed tol_mane")
        return cls(**base)

    def to_dict(self):
        return dict(fix=self.fix, alpha=self.alpha, aubry=self.aubry, mane=self.mane,
                    orbit=self.orbit, min=self.min)


def _values(u):
    return np.ascontiguousarray(u.values if isinstance(u, GridFunction) else u, dtype=float)


def lax_oleinik(kernel: ActionKernel, u, *, table=None, return_argmin=False):
    """``T u(x) = min_q u(q) + A(q, x)``."""
    w, arg = minplus.vec_min(_values(u), kernel.table if table is None else table)
    out = GridFunction(kernel.grid, w)
    return (out, arg) if return_argmin else out


def dual_lax_oleinik(kernel: ActionKernel, u, *, table=None, return_argmax=False):
    """``T̆ u(x) = max_q u(q) - A(x, q)``."""
    w, arg = minplus.vec_max(_values(u), kernel.table if table is None else table)
    out = GridFunction(kernel.grid, w)
    return (out, arg) if return_argmax else out


@dataclass
class AlphaEstimate:
    """Bracket for alpha(c).

    ``lower``/``upper`` are ``-M_n/n`` and ``-m_n/n`` for the iterates of
    ``T`` from zero.  ``tight_lower``/``tight_upper`` narrow this to the
    brackets ``-max(u_n - u_{n-k})/k <= alpha <= -min(u_n - u_{n-k})/k``
    over lags ``k``; both enclose the min-plus eigenvalue of the kernel.
    ``value`` is that eigenvalue (minimum cycle mean, negated) rounded to
    the cost lattice, and ``value_error`` bounds the rounding.
    """

    c: np.ndarray
    lower: float
    upper: float
    n_used: int
    tight_lower: float
    tight_upper: float
    value: float
    value_error: float = 0.0
    oscillation: float = 0.0

    @property
    def width(self):
        return self.upper - self.lower

    @property
    def tight_width(self):
        return self.tight_upper - self.tight_lower

    def to_dict(self):
        return dict(c=np.asarray(self.c).tolist(), lower=self.lower, upper=self.upper,
                    n_used=self.n_used, tight_lower=self.tight_lower,
                    tight_upper=self.tight_upper, value=self.value,
                    value_error=self.value_error)


def alpha(kernel: ActionKernel, n: int = 64, max_lag: int = 32, exact: bool = True) -> AlphaEstimate:
    u = np.zeros(kernel.grid.n)
    hist = [u]
    osc = 0.0
    for _ in range(n):
        u = minplus.vec_min(u, kernel.table)[0]
        hist.append(u)
        osc = max(osc, float(np.max(u) - np.min(u)))
    lower = -float(np.max(u)) / n
    upper = -float(np.min(u)) / n
    lo, hi = lower, upper
    for k in range(1, min(max_lag, n) + 1):
        diff = hist[n] - hist[n - k]
        lo = max(lo, -float(np.max(diff)) / k)
        hi = min(hi, -float(np.min(diff)) / k)
    if exact:
        eig = -minplus.min_cycle_mean(kernel.table)
        # rounding slack of Karp's divisions
        slack = 4 * np.finfo(float).eps * max(1.0, abs(eig))
        if not (lo - slack <= eig <= hi + slack):
            raise NumericalInconsistencyError("cycle mean outside the iterate bracket",
                                              eig=eig, lower=lo, upper=hi)
        lo, hi = max(lo, eig - slack), min(hi, eig + slack)
        value = float(minplus.quantize(eig)) + 0.0
        err = abs(value - eig) + slack
    else:
        value = float(minplus.quantize(0.5 * (lo + hi)))
        err = max(value - lo, hi - value)
    return AlphaEstimate(kernel.c.copy(), lower, upper, n, lo, hi, value, err, osc)


@dataclass
class WeakKamSolution:
    c: np.ndarray
    u: GridFunction
    alpha: AlphaEstimate
    residual: float
    residual_trace: list = field(default_factory=list)

    @property
    def grid(self):
        return self.u.grid

    def to_dict(self):
        return dict(c=np.asarray(self.c).tolist(), alpha=self.alpha.to_dict(),
                    residual=self.residual)


def fixed_point_residual(kernel, u, alpha_value):
    tu = lax_oleinik(kernel, u).values + alpha_value
    return float(np.max(np.abs(tu - _values(u))))


def weak_kam_solve(kernel: ActionKernel, alpha_est: AlphaEstimate, seed=None, *,
                   n_burn=64, n_tail=32, tol_fix=None, tol_alpha=None,
                   max_polish=400) -> WeakKamSolution:
    """Tail-window minimum of ``T^n seed + n alpha``, then polished.

    Polishing iterates ``v <- min(v, T v + alpha)`` until the residual
    ``|T v + alpha - v|`` stops changing.
    """
    tols = Tolerances.for_kernel(kernel)
    tol_fix = tols.fix if tol_fix is None else tol_fix
    tol_alpha = tols.alpha if tol_alpha is None else tol_alpha
    if alpha_est.value_error > tol_alpha:
        raise AlphaTooLooseError("alpha error above tol_alpha",
                                 error=alpha_est.value_error, tol_alpha=tol_alpha)
    a = alpha_est.value
    w = np.zeros(kernel.grid.n) if seed is None else _values(seed).copy()
    for _ in range(n_burn):
        w = minplus.vec_min(w, kernel.table)[0] + a
    v = w.copy()
    for _ in range(n_tail):
        w = minplus.vec_min(w, kernel.table)[0] + a
        v = np.minimum(v, w)
    trace = []
    for _ in range(max_polish):
        tv = minplus.vec_min(v, kernel.table)[0] + a
        res = float(np.max(np.abs(tv - v)))
        trace.append(res)
        if len(trace) >= 2 and abs(trace[-1] - trace[-2]) <= minplus.QUANTUM:
            break
        v = np.minimum(v, tv)
    res = trace[-1]
    if res > tol_fix:
        raise NonConvergenceError("weak KAM residual above tol_fix", residual=res,
                                  tol_fix=tol_fix, trace=trace[-10:])
    return WeakKamSolution(kernel.c.copy(), GridFunction(kernel.grid, v), alpha_est, res, trace)


def random_lipschitz_seed(grid, rng, lipschitz=1.0, modes=4):
    """Random trigonometric seed with Lipschitz constant at most ``lipschitz``."""
    x = grid.coords() / np.asarray(grid.periods)
    vals = np.zeros(grid.n)
    total = 0.0
    for _ in range(modes):
        k = rng.integers(-2, 3, size=grid.dim)
        amp = rng.normal()
        phase = rng.uniform(0, 2 * np.pi)
        vals += amp * np.cos(2 * np.pi * x @ k + phase)
        total += abs(amp) * 2 * np.pi * np.linalg.norm(k / np.asarray(grid.periods))
    if total > 0:
        vals *= lipschitz / total
    return GridFunction(grid, minplus.quantize(vals))


@dataclass
class ConjugatePair:
    u: GridFunction
    dual: GridFunction
    decrements: list
    roundtrip: float
    iterations: int
    reached_tol_at: int | None


def conjugate_pair(kernel: ActionKernel, alpha_est: AlphaEstimate, solution: WeakKamSolution,
                   *, tol_fix=None, max_iter=200) -> ConjugatePair:
    """Dual solution ``ŭ = lim T̆^n u - n alpha`` with monotonicity trace.

    The iteration runs until the sup-decrement vanishes or ``max_iter`` is
    reached.  The round trip ``lim T^n ŭ + n alpha`` is compared with ``u``.
    """
    tol_fix = Tolerances.for_kernel(kernel).fix if tol_fix is None else tol_fix
    a = alpha_est.value
    s = solution.u.values.copy()
    decs = []
    hit = None
    for it in range(max_iter):
        nxt = minplus.vec_max(s, kernel.table)[0] - a
        incr = float(np.max(nxt - s))
        if incr > tol_fix:
            raise NumericalInconsistencyError("dual iteration increased", step=it, increase=incr)
        dec = float(np.max(s - nxt))
        decs.append(dec)
        s = nxt
        if hit is None and dec <= tol_fix:
            hit = it + 1
        if dec == 0.0:
            break
    dual = GridFunction(kernel.grid, s)
    r = s.copy()
    for _ in range(max_iter):
        nxt = minplus.vec_min(r, kernel.table)[0] + a
        if np.array_equal(nxt, r):
            break
        r = nxt
    roundtrip = float(np.max(np.abs(r - solution.u.values)))
    return ConjugatePair(solution.u, dual, decs, roundtrip, len(decs), hit)


@dataclass
class PeierlsBarrier:
    c: np.ndarray
    table: np.ndarray
    N: int
    N_prime: int
    error_bound: float
    grid: object = None
    alpha: AlphaEstimate = None
    decrement: float = 0.0

    def diagonal(self):
        return np.diag(self.table).copy()

    def row(self, x):
        return GridFunction(self.grid, self.table[x])

    def column(self, x):
        return GridFunction(self.grid, self.table[:, x])

    def to_dict(self):
        return dict(c=np.asarray(self.c).tolist(), N=self.N, N_prime=self.N_prime,
                    error_bound=self.error_bound, decrement=self.decrement)


def _envelope(kernel, shifted, N, N_prime, cache_b, cache_c):
    """``min_{N <= k <= N'} B^k`` as ``B^N ⊗ (I ⊕ B)^(N'-N)``."""
    bn = minplus.power(shifted, N, cache_b)
    if N_prime == N:
        return bn
    if 1 not in cache_c:
        cache_c[1] = np.minimum(minplus.identity(kernel.grid.n), shifted)
    cm = minplus.power(cache_c[1], N_prime - N, cache_c)
    return minplus.product_min(bn, cm)


def truncated_barrier(kernel: ActionKernel, alpha_est: AlphaEstimate, N=32, N_prime=64,
                      *, max_alpha_error=0.5) -> PeierlsBarrier:
    """``min_{N <= k <= N'} A^k + k alpha`` with an empirical error bound.

    The bound adds the change of the envelope from ``(N/2, N'/2)`` to
    ``(N, N')`` and ``N'`` times the error of ``alpha.value``.
    """
    if N < 1 or N_prime < N:
        raise ValueError("need 1 <= N <= N'")
    width = alpha_est.value_error
    if N_prime * width > max_alpha_error:
        raise AlphaTooLooseError("N' times alpha bracket width too large",
                                 contribution=N_prime * width)
    shifted = kernel.table + alpha_est.value
    cb, cc = {}, {}
    env = _envelope(kernel, shifted, N, N_prime, cb, cc)
    dec = 0.0
    if N >= 2:
        half = _envelope(kernel, shifted, N // 2, max(N // 2, N_prime // 2), cb, cc)
        dec = float(np.max(np.abs(env - half)))
    return PeierlsBarrier(kernel.c.copy(), env, N, N_prime, dec + N_prime * width,
                          kernel.grid, alpha_est, dec)


def solution_barrier_identity(solution, barrier: PeierlsBarrier) -> float:
    """``max_x |u(x) - min_y u(y) + h(y, x)|``."""
    u = _values(solution.u if isinstance(solution, WeakKamSolution) else solution)
    w = minplus.vec_min(u, barrier.table)[0]
    return float(np.max(np.abs(u - w)))
