"""Tonelli Lagrangian models on tori with time-periodic dependence.

All evaluators are vectorized: ``q``, ``v`` and ``p`` are arrays whose last
axis has length ``dim``; ``t`` broadcasts against the leading axes.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import (
    ConfigError,
    IntegrationEscapeError,
    InvalidCoverError,
    ModelEvaluationError,
)

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class TorusPoint:
    coords: tuple

    def __post_init__(self):
        if len(self.coords) not in (1, 2):
            raise ValueError("torus dimension must be 1 or 2")


@dataclass(frozen=True)
class PhasePoint:
    position: np.ndarray
    momentum: np.ndarray


@dataclass(frozen=True)
class LagrangianModel:
    """Evaluator bundle for a Lagrangian, its Hamiltonian and Legendre maps.

    ``dl_dq`` and ``dh_dq`` are the position gradients used by the discrete
    Legendre transforms and by the flow integrator.  ``separable`` marks
    Hamiltonians of the form kinetic(p) + potential(t, q), which admit an
    explicit splitting integrator.
    """

    name: str
    dim: int
    lagrangian: Callable
    hamiltonian: Callable
    legendre_v: Callable
    legendre_p: Callable
    dl_dq: Callable
    dh_dq: Callable
    speed_bound_hint: np.ndarray
    periods: tuple = (1.0,)
    params: dict = field(default_factory=dict)
    scale: float = 1.0
    separable: bool = False
    reversible: bool = False
    autonomous: bool = False
    masses: np.ndarray | None = None
    base_periods: tuple | None = None

    @property
    def period(self):
        return 1.0

    def speed_bound(self, c) -> np.ndarray:
        """Per-axis speed cap for minimizers of the action modified by ``c``."""
        c = np.asarray(c, dtype=float).reshape(self.dim)
        if self.masses is not None:
            shift = np.abs(c) / self.masses
        else:
            t, q = _sample_tq(self.dim, self.periods, 7)
            pc = np.broadcast_to(c, q.shape)
            shift = np.max(np.abs(self.legendre_p(t, q, pc) - self.legendre_p(t, q, 0 * pc)), axis=0)
        return np.asarray(self.speed_bound_hint, dtype=float) + shift

    def describe(self) -> dict:
        return {
            "name": self.name,
            "dim": self.dim,
            "periods": list(self.periods),
            "params": {k: v for k, v in self.params.items() if not callable(v)},
            "speed_bound_hint": np.asarray(self.speed_bound_hint).tolist(),
        }


def _sample_tq(dim, periods, n):
    axes = [np.linspace(0.0, p, n, endpoint=False) for p in periods]
    mesh = np.meshgrid(*axes, indexing="ij")
    q = np.stack([m.ravel() for m in mesh], axis=-1)
    ts = np.linspace(0.0, 1.0, 5, endpoint=False)
    t = np.repeat(ts, q.shape[0])[:, None]
    q = np.tile(q, (ts.size, 1))
    return t, q


# -- mechanical models ------------------------------------------------------


def mechanical_model(name, masses, potential, potential_grad, *, params=None,
                     potential_dt=None, periods=None, speed_hint=None,
                     autonomous=False):
    """Build ``L = sum m_i v_i^2 / 2 + U(t, q)`` and ``H = sum p_i^2/(2 m_i) - U``.

    ``potential`` and ``potential_grad`` take ``(t, q)`` with ``q[..., d]``.
    """
    masses = np.asarray(masses, dtype=float)
    dim = masses.size
    periods = tuple(periods) if periods is not None else (1.0,) * dim

    def lagrangian(t, q, v):
        return 0.5 * np.sum(masses * v * v, axis=-1) + potential(t, q)

    def hamiltonian(t, q, p):
        return 0.5 * np.sum(p * p / masses, axis=-1) - potential(t, q)

    def legendre_v(t, q, v):
        return masses * v

    def legendre_p(t, q, p):
        return p / masses

    def dl_dq(t, q, v):
        return potential_grad(t, q)

    def dh_dq(t, q, p):
        return -potential_grad(t, q)

    # sampled oscillation and time derivative of the potential
    t, q = _sample_tq(dim, periods, 33 if dim == 1 else 17)
    u = potential(t, q)
    osc = float(np.max(u) - np.min(u))
    if potential_dt is None:
        dtu = 0.0
    else:
        dtu = float(np.max(np.abs(potential_dt(t, q))))
    if speed_hint is None:
        diam = np.asarray(periods) / 2.0
        kinetic = 0.5 * np.sum(masses * diam**2) + 2.0 * osc + dtu
        speed_hint = np.sqrt(2.0 * kinetic / masses)
    speed_hint = np.broadcast_to(np.asarray(speed_hint, dtype=float), (dim,)).copy()
    return LagrangianModel(
        name=name,
        dim=dim,
        lagrangian=lagrangian,
        hamiltonian=hamiltonian,
        legendre_v=legendre_v,
        legendre_p=legendre_p,
        dl_dq=dl_dq,
        dh_dq=dh_dq,
        speed_bound_hint=speed_hint,
        periods=periods,
        params=dict(params or {}),
        scale=max(1.0, osc),
        separable=True,
        reversible=True,
        autonomous=autonomous,
        masses=masses,
    )


def free_model(dim=1):
    def grad(t, q):
        return np.zeros(np.shape(q))

    return mechanical_model("free", np.ones(dim), _const_zero(dim), grad,
                            params={"dim": dim}, autonomous=True)


def _const_zero(dim):
    def pot(t, q):
        return np.zeros(np.shape(q)[:-1])
    return pot


def pendulum_model(kappa=1.0):
    """``L = v^2/2 + kappa (1 - cos 2 pi q)``; the rest point q=0 is hyperbolic."""

    def pot(t, q):
        return kappa * (1.0 - np.cos(TWO_PI * q[..., 0]))

    def grad(t, q):
        return kappa * TWO_PI * np.sin(TWO_PI * q)

    return mechanical_model("pendulum", [1.0], pot, grad,
                            params={"kappa": kappa}, autonomous=True)


def forced_pendulum_model(kappa=1.0, eps=0.1):
    """Pendulum plus the resonant forcing ``eps (1 - cos 2 pi (q - t))``."""

    def pot(t, q):
        t = _tcol(t, q)
        x = q[..., 0]
        return kappa * (1.0 - np.cos(TWO_PI * x)) + eps * (1.0 - np.cos(TWO_PI * (x - t)))

    def grad(t, q):
        t = _tcol(t, q)
        x = q[..., 0]
        g = kappa * TWO_PI * np.sin(TWO_PI * x) + eps * TWO_PI * np.sin(TWO_PI * (x - t))
        return g[..., None]

    def dt(t, q):
        t = _tcol(t, q)
        return -eps * TWO_PI * np.sin(TWO_PI * (q[..., 0] - t))

    return mechanical_model("forced_pendulum", [1.0], pot, grad,
                            params={"kappa": kappa, "eps": eps}, potential_dt=dt)


def arnold_model(kappa=0.04, nu=0.1, mu=0.5):
    """Coupled system on T^2 with an invariant annulus at q2 = 0.

    ``L = v1^2/2 + kappa (1 - cos 2 pi q1) + v2^2/4 + V(q2) F(t, q)`` where
    ``V(q2) = nu (1 - cos 2 pi q2)`` vanishes only at q2 = 0 and
    ``F = 1 + mu (cos 2 pi q1 + cos 2 pi t) / 2`` stays positive for mu < 1.
    The dual Hamiltonian is ``p1^2/2 - kappa(1 - cos 2 pi q1) + p2^2 - V F``.
    ``nu = 0`` gives the degenerate model used as a negative control.
    """
    if not 0.0 <= mu < 1.0:
        raise ConfigError("arnold forcing amplitude mu must lie in [0, 1)")

    def pot(t, q):
        t = _tcol(t, q)
        q1, q2 = q[..., 0], q[..., 1]
        f = 1.0 + 0.5 * mu * (np.cos(TWO_PI * q1) + np.cos(TWO_PI * t))
        return kappa * (1.0 - np.cos(TWO_PI * q1)) + nu * (1.0 - np.cos(TWO_PI * q2)) * f

    def grad(t, q):
        t = _tcol(t, q)
        q1, q2 = q[..., 0], q[..., 1]
        f = 1.0 + 0.5 * mu * (np.cos(TWO_PI * q1) + np.cos(TWO_PI * t))
        vv = nu * (1.0 - np.cos(TWO_PI * q2))
        g1 = kappa * TWO_PI * np.sin(TWO_PI * q1) - vv * 0.5 * mu * TWO_PI * np.sin(TWO_PI * q1)
        g2 = nu * TWO_PI * np.sin(TWO_PI * q2) * f
        return np.stack([g1, g2], axis=-1)

    def dt(t, q):
        t = _tcol(t, q)
        vv = nu * (1.0 - np.cos(TWO_PI * q[..., 1]))
        return -vv * 0.5 * mu * TWO_PI * np.sin(TWO_PI * t)

    return mechanical_model("arnold", [1.0, 0.5], pot, grad,
                            params={"kappa": kappa, "nu": nu, "mu": mu}, potential_dt=dt)


def _tcol(t, q):
    t = np.asarray(t, dtype=float)
    if t.ndim and t.shape[-1:] == (1,) and q.ndim == t.ndim:
        return t[..., 0]
    return t


BUILTINS = {
    "free": free_model,
    "pendulum": pendulum_model,
    "forced_pendulum": forced_pendulum_model,
    "arnold": arnold_model,
}

BUILTIN_KEYS = {
    "free": ("dim",),
    "pendulum": ("kappa",),
    "forced_pendulum": ("kappa", "eps"),
    "arnold": ("kappa", "nu", "mu"),
}


def builtin_model(name, **params):
    try:
        factory = BUILTINS[name]
    except KeyError:
        raise ConfigError(f"unknown model {name!r}; choose from {sorted(BUILTINS)}") from None
    unknown = set(params) - set(BUILTIN_KEYS[name])
    if unknown:
        raise ConfigError(f"unknown parameters for {name}: {sorted(unknown)}")
    if name == "free" and "dim" in params:
        params["dim"] = int(params["dim"])
    return factory(**params)


# -- custom expression models -----------------------------------------------


def expression_model(expr: str, dim: int = 1, name: str = "custom", speed_hint=None):
    """Model from a Lagrangian expression in ``t``, ``q1..qd``, ``v1..vd``.

    Only polynomials and ``sin``/``cos`` terms are accepted.  The Hamiltonian
    is evaluated through a Newton inversion of the Legendre map, which is
    globally well posed for convex Lagrangians.
    """
    import sympy as sp

    t = sp.Symbol("t", real=True)
    qs = sp.symbols(" ".join(f"q{i + 1}" for i in range(dim)), real=True)
    vs = sp.symbols(" ".join(f"v{i + 1}" for i in range(dim)), real=True)
    qs = qs if isinstance(qs, tuple) else (qs,)
    vs = vs if isinstance(vs, tuple) else (vs,)
    local = {"t": t, "pi": sp.pi, "sin": sp.sin, "cos": sp.cos}
    local.update({str(s): s for s in (*qs, *vs)})
    if dim == 1:
        local["q"], local["v"] = qs[0], vs[0]
    try:
        lag = sp.sympify(expr, locals=local)
    except (sp.SympifyError, SyntaxError, TypeError) as exc:
        raise ConfigError(f"cannot parse Lagrangian {expr!r}: {exc}") from None
    allowed = {sp.sin, sp.cos}
    for f in lag.atoms(sp.Function):
        if f.func not in allowed:
            raise ConfigError(f"function {f.func} not allowed in custom models")
    extra = lag.free_symbols - {t, *qs, *vs}
    if extra:
        raise ConfigError(f"unknown symbols in Lagrangian: {sorted(map(str, extra))}")

    args = (t, *qs, *vs)
    f_l = sp.lambdify(args, lag, "numpy")
    f_lv = [sp.lambdify(args, sp.diff(lag, v), "numpy") for v in vs]
    f_lq = [sp.lambdify(args, sp.diff(lag, q), "numpy") for q in qs]
    f_lvv = [[sp.lambdify(args, sp.diff(lag, a, b), "numpy") for b in vs] for a in vs]

    def _call(f, t_, q_, v_):
        shape = np.broadcast_shapes(np.shape(q_)[:-1], np.shape(v_)[:-1])
        tt = np.broadcast_to(_tcol(t_, q_), shape)
        qq = [np.broadcast_to(q_[..., i], shape) for i in range(dim)]
        vv = [np.broadcast_to(v_[..., i], shape) for i in range(dim)]
        out = f(tt, *qq, *vv)
        return np.broadcast_to(np.asarray(out, dtype=float), shape)

    def lagrangian(t_, q_, v_):
        return _call(f_l, t_, q_, v_)

    def legendre_v(t_, q_, v_):
        return np.stack([_call(f, t_, q_, v_) for f in f_lv], axis=-1)

    def dl_dq(t_, q_, v_):
        return np.stack([_call(f, t_, q_, v_) for f in f_lq], axis=-1)

    def hessian(t_, q_, v_):
        return np.stack([np.stack([_call(f, t_, q_, v_) for f in row], axis=-1) for row in f_lvv], axis=-2)

    def legendre_p(t_, q_, p_):
        v = np.array(p_, dtype=float, copy=True)
        for _ in range(60):
            r = legendre_v(t_, q_, v) - p_
            hess = hessian(t_, q_, v)
            step = np.linalg.solve(hess, r[..., None])[..., 0]
            v = v - step
            if np.max(np.abs(step), initial=0.0) < 1e-14 * (1.0 + np.max(np.abs(v), initial=0.0)):
                break
        return v

    def hamiltonian(t_, q_, p_):
        v = legendre_p(t_, q_, p_)
        return np.sum(p_ * v, axis=-1) - lagrangian(t_, q_, v)

    def dh_dq(t_, q_, p_):
        return -dl_dq(t_, q_, legendre_p(t_, q_, p_))

    periods = (1.0,) * dim
    tt, qq = _sample_tq(dim, periods, 17 if dim == 1 else 9)
    zero = np.zeros_like(qq)
    l0 = lagrangian(tt, qq, zero)
    if not np.all(np.isfinite(l0)):
        raise ModelEvaluationError("custom Lagrangian is not finite on the sample")
    osc = float(np.max(l0) - np.min(l0))
    if speed_hint is None:
        # comparison with the straight path across half the torus
        diam = np.full(dim, 0.5)
        budget = float(np.max(lagrangian(tt, qq, np.broadcast_to(diam, qq.shape)))) + 2.0 * osc
        hint = np.zeros(dim)
        for i in range(dim):
            s = 0.25
            while s < 1e3:
                vv = np.zeros_like(qq)
                vv[..., i] = s
                if float(np.min(lagrangian(tt, qq, vv) - l0)) > budget + osc:
                    break
                s *= 1.25
            hint[i] = s
        speed_hint = hint
    return LagrangianModel(
        name=name,
        dim=dim,
        lagrangian=lagrangian,
        hamiltonian=hamiltonian,
        legendre_v=legendre_v,
        legendre_p=legendre_p,
        dl_dq=dl_dq,
        dh_dq=dh_dq,
        speed_bound_hint=np.broadcast_to(np.asarray(speed_hint, dtype=float), (dim,)).copy(),
        periods=periods,
        params={"expr": expr},
        scale=max(1.0, osc),
    )


# -- checks and operations ----------------------------------------------------


def legendre_roundtrip(model: LagrangianModel, t, q, v) -> float:
    """``|v - dH/dp(dL/dv)| + |L + H - p v|`` at a single or batched sample."""
    q = np.asarray(q, dtype=float).reshape(-1, model.dim)
    v = np.asarray(v, dtype=float).reshape(-1, model.dim)
    t = np.full((q.shape[0], 1), float(t)) if np.ndim(t) == 0 else np.asarray(t, float).reshape(-1, 1)
    with np.errstate(over="raise", invalid="raise", divide="raise"):
        try:
            p = model.legendre_v(t, q, v)
            v_back = model.legendre_p(t, q, p)
            lag = model.lagrangian(t, q, v)
            ham = model.hamiltonian(t, q, p)
        except FloatingPointError as exc:
            raise ModelEvaluationError(f"non-finite evaluation: {exc}") from None
    vals = np.concatenate([np.ravel(p), np.ravel(v_back), np.ravel(lag), np.ravel(ham)])
    if not np.all(np.isfinite(vals)):
        raise ModelEvaluationError("non-finite model evaluation")
    res = np.max(np.abs(v - v_back), axis=-1) + np.abs(lag + ham - np.sum(p * v, axis=-1))
    return float(np.max(res))


def convexity_spot_check(model: LagrangianModel, t, q, v, step=1e-3) -> float:
    """Smallest eigenvalue of the finite-difference velocity Hessian of ``L``."""
    q = np.asarray(q, float).reshape(1, model.dim)
    v = np.asarray(v, float).reshape(1, model.dim)
    tt = np.array([[float(t)]])
    d = model.dim
    hess = np.zeros((d, d))
    for i in range(d):
        for j in range(d):
            ei = np.zeros(d)
            ej = np.zeros(d)
            ei[i] = step
            ej[j] = step
            f = lambda dv: float(model.lagrangian(tt, q, v + dv)[0])
            hess[i, j] = (f(ei + ej) - f(ei - ej) - f(ej - ei) + f(-ei - ej)) / (4 * step * step)
    return float(np.min(np.linalg.eigvalsh(0.5 * (hess + hess.T))))


def wrap(x, periods):
    periods = np.asarray(periods, dtype=float)
    return np.mod(x, periods)


def _kick(model, t, q, p, tau):
    return p - tau * model.dh_dq(np.asarray(t)[..., None] if np.ndim(t) else t, q, p)


def _leapfrog(model, t, q, p, dt):
    p = _kick(model, t, q, p, 0.5 * dt)
    q = q + dt * model.legendre_p(t, q, p)
    p = _kick(model, t + dt, q, p, 0.5 * dt)
    return q, p


_YOSHIDA_W1 = 1.0 / (2.0 - 2.0 ** (1.0 / 3.0))
_YOSHIDA_W0 = 1.0 - 2.0 * _YOSHIDA_W1


def flow_unwrapped(model: LagrangianModel, q, p, t, dt):
    """One symmetric fourth-order splitting step on lifted coordinates."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    t = np.asarray(t, dtype=float)
    if t.ndim and not model.separable:
        out = [flow_unwrapped(model, qi, pi, ti, dt) for qi, pi, ti in zip(q, p, t.ravel())]
        return np.array([o[0] for o in out]), np.array([o[1] for o in out])
    t = t.ravel().copy() if t.ndim else float(t)
    if model.separable:
        for w in (_YOSHIDA_W1, _YOSHIDA_W0, _YOSHIDA_W1):
            q, p = _leapfrog(model, t, q, p, w * dt)
            t = t + w * dt
        return q, p
    # implicit midpoint, symmetric and symplectic for general H
    tm = t + 0.5 * dt
    qn, pn = q.copy(), p.copy()
    for _ in range(100):
        qm, pm = 0.5 * (q + qn), 0.5 * (p + pn)
        q_new = q + dt * model.legendre_p(tm, qm, pm)
        p_new = p - dt * model.dh_dq(tm, qm, pm)
        done = max(np.max(np.abs(q_new - qn)), np.max(np.abs(p_new - pn))) < 1e-14
        qn, pn = q_new, p_new
        if done:
            break
    return qn, pn


def flow_step(model: LagrangianModel, state, t, dt):
    """Advance Hamilton's equations by ``dt``; returns a wrapped :class:`PhasePoint`.

    ``state`` is a :class:`PhasePoint` or a ``(q, p)`` pair of arrays.
    """
    if dt > 0.1:
        raise ValueError("flow_step requires dt <= 0.1")
    if isinstance(state, PhasePoint):
        q, p = state.position, state.momentum
    else:
        q, p = state
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    qn, pn = flow_unwrapped(model, q, p, t, dt)
    cap = 10.0 * float(np.max(model.speed_bound(np.zeros(model.dim)) *
                              (model.masses if model.masses is not None else 1.0)))
    if not np.all(np.isfinite(pn)) or np.max(np.abs(pn), initial=0.0) > cap:
        raise IntegrationEscapeError("momentum left the a priori bound during integration",
                                     bound=cap)
    return PhasePoint(wrap(qn, model.periods), pn)


def integrate(model, q, p, t0, duration, dt):
    """Integrate over ``duration`` with steps of at most ``dt``; lifted coordinates."""
    n = max(1, int(np.ceil(duration / dt - 1e-12)))
    h = duration / n
    t = t0
    for _ in range(n):
        q, p = flow_unwrapped(model, q, p, t, h)
        t += h
    return q, p


def cover_model(model: LagrangianModel, axis: int, k: int) -> LagrangianModel:
    """Lift ``model`` to the k-fold cover obtained by unwrapping ``axis`` k times."""
    if k < 2 or int(k) != k:
        raise InvalidCoverError(f"cover degree must be an integer >= 2, got {k}")
    if not 0 <= axis < model.dim:
        raise InvalidCoverError(f"axis {axis} out of range for dimension {model.dim}")
    base = np.asarray(model.base_periods or model.periods, dtype=float)
    periods = list(model.periods)
    periods[axis] = periods[axis] * k

    def project(q):
        return np.mod(q, base)

    def comp(f):
        return lambda t, q, w: f(t, project(q), w)

    return replace(
        model,
        name=f"{model.name}_cover{axis}x{k}",
        lagrangian=comp(model.lagrangian),
        hamiltonian=comp(model.hamiltonian),
        legendre_v=comp(model.legendre_v),
        legendre_p=comp(model.legendre_p),
        dl_dq=comp(model.dl_dq),
        dh_dq=comp(model.dh_dq),
        periods=tuple(periods),
        base_periods=tuple(base),
        params={**model.params, "cover_axis": axis, "cover_degree": k},
    )
