"""Forcing certificates, the Mather and Arnold mechanisms and diffusion chains.

A certificate is a list of stages.  Each stage holds the pseudograph it
produces and enough bookkeeping (argmin sources per target, index maps
between a cover and its base) to trace any cell of the final graph back to
a cell of the initial one.  Traced chains are expanded to substep paths and
checked against the Hamiltonian flow, giving pseudo-orbits with measured
defects.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .action import (ActionKernel, SpatialGrid, build_kernel, grid_for, node_momenta,
                     path_from_nodes, substep_nodes)
from .aubry import aubry_set, heteroclinic_points, mane_defects, static_classes, triangle_defect
from .errors import (AcyclicityError, ConfigError, KamError, NoConnectionError,
                     ObstructionError)
from .model import LagrangianModel, cover_model, flow_unwrapped
from .pseudograph import (Evolution, Pseudograph, bump_form, cover_index_to_base,
                          deck_shift, evolve_restricted, flat, lift, modify_cohomology,
                          project, wedge)
from .semiconcave import GridFunction, centered_gradient, min_cells
from .weakkam import Tolerances, alpha, conjugate_pair, truncated_barrier, weak_kam_solve


# -- kernels shared across steps ---------------------------------------------


class KernelFactory:
    """Kernels, alpha estimates and tolerances for one model on one grid."""

    def __init__(self, model: LagrangianModel, sizes, M: int, tol_overrides=None):
        self.model = model
        self.grid = grid_for(model, sizes) if not isinstance(sizes, SpatialGrid) else sizes
        self.M = M
        self.tol_overrides = dict(tol_overrides or {})
        self._kernels = {}
        self._alphas = {}
        self._covers = {}

    def _key(self, c):
        return tuple(np.round(np.asarray(c, dtype=float).reshape(self.model.dim), 12))

    def kernel(self, c) -> ActionKernel:
        key = self._key(c)
        if key not in self._kernels:
            self._kernels[key] = build_kernel(self.model, np.array(key), self.grid, self.M)
        return self._kernels[key]

    def alpha(self, c):
        key = self._key(c)
        if key not in self._alphas:
            self._alphas[key] = alpha(self.kernel(c))
        return self._alphas[key]

    def tolerances(self, c=None) -> Tolerances:
        return Tolerances.for_kernel(self.kernel(np.zeros(self.model.dim) if c is None else c),
                                     **self.tol_overrides)

    @property
    def unit(self):
        return self.grid.h + 1.0 / self.M

    def cover(self, axis, k) -> "KernelFactory":
        if (axis, k) not in self._covers:
            sizes = list(self.grid.sizes)
            sizes[axis] *= k
            self._covers[(axis, k)] = KernelFactory(cover_model(self.model, axis, k), tuple(sizes),
                                                    self.M, self.tol_overrides)
        return self._covers[(axis, k)]


# -- certificates -------------------------------------------------------------


@dataclass
class Stage:
    """One hop of a certificate.

    ``kind`` is one of ``initial``, ``evolve``, ``modify``, ``lift`` or
    ``project``.  Evolution stages carry ``evolution`` and ``kernel``;
    ``lift`` and ``project`` carry ``index_map`` sending each cell of this
    stage to the corresponding cell of the previous one.
    """

    kind: str
    graph: Pseudograph
    model: LagrangianModel
    label: str = ""
    kernel: ActionKernel = None
    evolution: Evolution = None
    index_map: np.ndarray = None
    U: np.ndarray = None

    def to_dict(self):
        out = dict(kind=self.kind, label=self.label, c=self.graph.c.tolist(),
                   sizes=list(self.graph.grid.sizes), model=self.model.name)
        if self.evolution is not None:
            out["steps_range"] = [int(self.evolution.steps.min()), int(self.evolution.steps.max())]
            out["source"] = self.evolution.source.tolist()
            out["steps"] = self.evolution.steps.tolist()
        if self.U is not None:
            out["U"] = np.asarray(self.U).tolist()
        if self.index_map is not None:
            out["index_map"] = self.index_map.tolist()
        return out


@dataclass
class ForcingCertificate:
    from_c: np.ndarray
    to_c: np.ndarray
    mechanism: str
    stages: list
    verification: dict = field(default_factory=dict)

    @property
    def initial(self) -> Pseudograph:
        return self.stages[0].graph

    @property
    def final(self) -> Pseudograph:
        return self.stages[-1].graph

    @property
    def N(self):
        """Largest number of periods along a traced chain."""
        return int(sum(int(s.evolution.steps.max()) for s in self.stages if s.evolution is not None))

    def to_dict(self, full=False):
        out = dict(from_c=np.asarray(self.from_c).tolist(), to_c=np.asarray(self.to_c).tolist(),
                   mechanism=self.mechanism, N=self.N, verification=self.verification,
                   stages=[s.kind + (f":{s.label}" if s.label else "") for s in self.stages])
        if full:
            out["records"] = [s.to_dict() for s in self.stages]
        return out


@dataclass
class Segment:
    stage: int
    kernel: ActionKernel
    chain: list


def trace(stages, x_end: int):
    """Walk from a cell of the last stage back to the first stage.

    Returns the starting cell and the evolution segments in time order.
    """
    x = int(x_end)
    segments = []
    for i in range(len(stages) - 1, 0, -1):
        st = stages[i]
        if st.kind == "evolve":
            ch = st.evolution.chain(x)
            segments.append(Segment(i, st.kernel, ch))
            x = ch[0]
        elif st.kind in ("lift", "project"):
            x = int(st.index_map[x])
        elif st.kind != "modify":
            raise ValueError(f"unknown stage kind {st.kind}")
    return x, segments[::-1]


@dataclass
class PseudoOrbit:
    times: np.ndarray
    positions: np.ndarray        # wrapped to the base torus
    momenta: np.ndarray
    substep_defects: np.ndarray
    joint_defects: list
    joints: list                 # node index where each segment starts
    segment_stage: list

    @property
    def max_defect(self):
        parts = [0.0]
        if self.substep_defects.size:
            parts.append(float(self.substep_defects.max()))
        parts += [d for d in self.joint_defects]
        return max(parts)

    def to_csv(self, path):
        d = self.positions.shape[1]
        head = ["t"] + [f"q{i + 1}" for i in range(d)] + [f"p{i + 1}" for i in range(d)]
        rows = np.column_stack([self.times, self.positions, self.momenta])
        np.savetxt(path, rows, delimiter=",", header=",".join(head), comments="")


def _segment_path(seg: Segment):
    nodes = [seg.chain[0]]
    for a, b in zip(seg.chain[:-1], seg.chain[1:]):
        nodes.extend(substep_nodes(seg.kernel, a, b)[1:])
    path = path_from_nodes(seg.kernel, nodes)
    p, jumps = node_momenta(seg.kernel, path.points)
    return path.points, p


def assemble(segments, base_periods) -> PseudoOrbit:
    """Substep pseudo-orbit through the traced segments.

    Substep defects compare each node, advanced by the flow over one
    substep, with the next node; joint defects are the momentum and
    position jumps between consecutive segments.
    """
    base = np.asarray(base_periods, dtype=float)
    pos, mom, times, sub_def, joints, joint_def, seg_stage = [], [], [], [], [], [], []
    t_off = 0.0
    prev_end = None
    n_nodes = 0
    for seg in segments:
        if len(seg.chain) < 2:
            continue
        q, p = _segment_path(seg)
        k = seg.kernel
        dt = k.dt
        K = q.shape[0] - 1
        tt = np.arange(K) * dt
        qn, pn = flow_unwrapped(k.model, q[:-1], p[:-1], tt, dt)
        err = np.maximum(np.max(np.abs(qn - q[1:]), axis=1), np.max(np.abs(pn - p[1:]), axis=1))
        if prev_end is not None:
            dq = q[0] - prev_end[0]
            dq = dq - base * np.round(dq / base)
            joint_def.append(float(max(np.max(np.abs(dq)), np.max(np.abs(p[0] - prev_end[1])))))
        joints.append(n_nodes - 1 if prev_end is not None else 0)
        seg_stage.append(seg.stage)
        start = 0 if prev_end is None else 1
        if prev_end is not None:
            # keep the outgoing momentum at the joint
            mom[-1] = p[0]
        pos.append(q[start:])
        mom.extend(list(p[start:]))
        times.append(t_off + np.arange(start, K + 1) * dt)
        sub_def.append(err)
        t_off += K * dt
        n_nodes += K + 1 - start
        prev_end = (q[-1], p[-1])
    if not pos:
        d = len(base)
        return PseudoOrbit(np.zeros(0), np.zeros((0, d)), np.zeros((0, d)), np.zeros(0), [], [], [])
    positions = np.mod(np.concatenate(pos), base)
    return PseudoOrbit(np.concatenate(times), positions, np.asarray(mom),
                       np.concatenate(sub_def), joint_def, joints, seg_stage)


def inclusion_defects(stages, segments):
    """Endpoint momenta of each segment against ``c + Du`` of the stage graphs."""
    out = []
    for seg in segments:
        if len(seg.chain) < 2:
            continue
        st = stages[seg.stage]
        q, p = _segment_path(seg)
        end = float(np.max(np.abs(p[-1] - (st.graph.c + centered_gradient(st.graph.u)[seg.chain[-1]]))))
        out.append(end)
    return out


def verify(cert: ForcingCertificate, tol_orbit: float, sample: int = 6, seed: int = 0):
    """Trace every final cell; measure defects on a deterministic sample."""
    n = cert.final.grid.n
    starts = np.array([trace(cert.stages, x)[0] for x in range(n)])
    rng = np.random.default_rng(seed)
    picks = np.unique(np.concatenate([[0], rng.choice(n, size=min(sample, n), replace=False)]))
    worst_sub, worst_joint, worst_incl = 0.0, 0.0, 0.0
    for x in picks:
        _, segs = trace(cert.stages, int(x))
        orb = assemble(segs, cert.stages[0].model.base_periods or cert.stages[0].model.periods)
        if orb.substep_defects.size:
            worst_sub = max(worst_sub, float(orb.substep_defects.max()))
        if orb.joint_defects:
            worst_joint = max(worst_joint, max(orb.joint_defects))
        incl = inclusion_defects(cert.stages, segs)
        if incl:
            worst_incl = max(worst_incl, max(incl))
    cert.verification = dict(
        traced=int(n),
        all_traced=bool(np.all((starts >= 0) & (starts < cert.initial.grid.n))),
        sampled=[int(p) for p in picks],
        max_substep_defect=worst_sub,
        max_joint_defect=worst_joint,
        max_inclusion_defect=worst_incl,
        tol_orbit=tol_orbit,
        ok=bool(max(worst_sub, worst_joint) <= tol_orbit),
    )
    return cert.verification


# -- helpers --------------------------------------------------------------------


def inflate(grid: SpatialGrid, cells, radius=1):
    """Union of cell boxes of the given Chebyshev radius around ``cells``."""
    mask = np.zeros(grid.sizes, dtype=bool)
    mask.reshape(-1)[np.asarray(cells, dtype=int)] = True
    out = mask.copy()
    for off in np.ndindex(*([2 * radius + 1] * grid.dim)):
        shift = tuple(o - radius for o in off)
        out |= np.roll(mask, shift, axis=tuple(range(grid.dim)))
    return np.flatnonzero(out.ravel())


def box(grid: SpatialGrid, center: int, radius=1):
    """Cell box around ``center``; raises if it would wrap around an axis."""
    if any(2 * radius + 1 >= s for s in grid.sizes):
        raise AcyclicityError("box wraps around the torus", radius=radius, sizes=grid.sizes)
    return inflate(grid, [center], radius)


def slab_directions(grid: SpatialGrid, cells):
    """Axes along which some slab ``q_i = s`` misses every cell in ``cells``."""
    mask = np.zeros(grid.sizes, dtype=bool)
    mask.reshape(-1)[np.asarray(cells, dtype=int)] = True
    out = []
    for i in range(grid.dim):
        occ = mask.any(axis=tuple(a for a in range(grid.dim) if a != i))
        if not occ.all():
            out.append(i)
    return out


def invariant_cells(factory: KernelFactory, c, seed=None):
    """Cells of the wedge of a weak KAM solution with its conjugate (the 𝓘 set).

    The wedge is cut at ``tol_aubry`` so it approximates the Aubry set of
    the solution rather than a coarse neighbourhood of it.
    """
    k = factory.kernel(c)
    a = factory.alpha(c)
    tol = factory.tolerances(c)
    sol = weak_kam_solve(k, a, seed=seed, tol_fix=tol.fix)
    cp = conjugate_pair(k, a, sol, tol_fix=tol.fix)
    cells = min_cells(sol.u.values - cp.dual.values, tol.aubry)
    return cells, sol, cp


def r_space_approx(grid: SpatialGrid, cell_sets):
    """Admissible coordinate directions given 𝓘-approximations of stored solutions."""
    cells = np.unique(np.concatenate([np.asarray(c, dtype=int) for c in cell_sets]))
    return slab_directions(grid, cells)


def step_cap(factory: KernelFactory):
    return 10.0 * factory.unit


def _trivial(g, factory, target_c):
    k = factory.kernel(g.c)
    a = factory.alpha(g.c)
    ev = evolve_restricted(g, k, a.value, np.arange(g.grid.n), 1, 1)
    return ForcingCertificate(g.c.copy(), np.asarray(target_c, dtype=float), "identity",
                              [Stage("initial", g, factory.model),
                               Stage("evolve", ev.graph, factory.model, "phi", k, ev)])


# -- mechanisms -------------------------------------------------------------------


def mather_step(g: Pseudograph, target_c, factory: KernelFactory, *, n_burn=32, N=16,
                N_prime=32, cap=None) -> ForcingCertificate:
    """Forcing certificate ``c(g) -> target_c`` through the Mather mechanism.

    Burn in under ``T_c``, take ``U`` as the one-cell inflation of the 𝓘
    set, move the class to ``target_c`` with a bump form vanishing on ``U``
    and evolve with sources restricted to ``U``.
    """
    c0 = g.c
    target_c = np.asarray(target_c, dtype=float).reshape(c0.shape)
    if np.allclose(target_c, c0):
        return _trivial(g, factory, target_c)
    cap = step_cap(factory) if cap is None else cap
    if np.linalg.norm(target_c - c0) > cap + 1e-12:
        raise ConfigError("cohomology step exceeds the step cap", step=float(np.linalg.norm(target_c - c0)),
                          cap=cap)
    model = factory.model
    k0 = factory.kernel(c0)
    a0 = factory.alpha(c0)
    every = np.arange(g.grid.n)
    burn = evolve_restricted(g, k0, a0.value, every, n_burn, n_burn)
    cells, _, _ = invariant_cells(factory, c0, seed=burn.graph.u)
    U = inflate(g.grid, cells, 1)
    g_mod, form = modify_cohomology(burn.graph, target_c, U)
    k1 = factory.kernel(target_c)
    a1 = factory.alpha(target_c)
    ev = evolve_restricted(g_mod, k1, a1.value, U, N, N_prime)
    stages = [
        Stage("initial", g, model),
        Stage("evolve", burn.graph, model, "burn_in", k0, burn),
        Stage("modify", g_mod, model, "bump", U=U),
        Stage("evolve", ev.graph, model, "phi_U", k1, ev, U=U),
    ]
    cert = ForcingCertificate(c0.copy(), target_c, "mather", stages)
    cert.verification = {"I_cells": cells.tolist(), "bump_support": form.support}
    return cert


def _deck_index_map(values, grid, axis, k):
    """For each cover cell, the deck translate attaining the minimum."""
    n_axis = grid.sizes[axis]
    step = n_axis // k
    idx = np.arange(grid.n)
    best = values.copy()
    arg = idx.copy()
    for j in range(1, k):
        shifted_vals = deck_shift(values, grid, axis, j * step)
        shifted_idx = deck_shift(idx, grid, axis, j * step)
        better = shifted_vals < best
        best = np.where(better, shifted_vals, best)
        arg = np.where(better, shifted_idx, arg)
    return best, arg


def arnold_step(g: Pseudograph, target_c, factory: KernelFactory, *, cover_axis=None, k=2,
                n_burn=32, N=16, N_prime=32, barrier_N=(32, 64), cap=None,
                box_radius=1) -> ForcingCertificate:
    """Forcing certificate ``c(g) -> target_c`` through heteroclinic connections.

    Works on the ``k``-fold cover along ``cover_axis`` (default: the last
    axis).  The graph is lifted and burnt in, its restriction to the first
    static class is evolved, the class is changed over a box around a
    heteroclinic point, the graph is evolved from the box and then from a
    neighbourhood of the second class, symmetrized under deck translations
    and projected back.
    """
    model = factory.model
    c0 = g.c
    target_c = np.asarray(target_c, dtype=float).reshape(c0.shape)
    cap = step_cap(factory) if cap is None else cap
    if np.linalg.norm(target_c - c0) > cap + 1e-12:
        raise ConfigError("cohomology step exceeds the step cap", cap=cap)
    axis = model.dim - 1 if cover_axis is None else cover_axis
    cf = factory.cover(axis, k)
    cmodel = cf.model
    cgrid = cf.grid
    base = g.grid

    gl = lift(g, k, axis)
    lift_map = cover_index_to_base(cgrid, base, np.arange(cgrid.n))
    kc = cf.kernel(c0)
    ac = cf.alpha(c0)
    tol = cf.tolerances(c0)
    every = np.arange(cgrid.n)
    burn = evolve_restricted(gl, kc, ac.value, every, n_burn, n_burn)

    barrier = truncated_barrier(kc, ac, *barrier_N)
    aub = aubry_set(barrier, tol.aubry)
    part = static_classes(aub, barrier)
    if len(part) < 2:
        raise NoConnectionError("fewer than two static classes on the cover", classes=len(part))
    s0, s1 = part.classes[0], part.classes[1]
    ev0 = evolve_restricted(burn.graph, kc, ac.value, s0, N, N_prime)

    het = heteroclinic_points(barrier, s0, s1, tol.mane)
    near_aubry = set(inflate(cgrid, aub.cells, box_radius).tolist())
    het = [(x, d) for x, d in het if x not in near_aubry]
    if not het:
        raise NoConnectionError("no heteroclinic point within tol_mane", tol_mane=tol.mane)
    # the heteroclinic point farthest from the Aubry set, ties to the smaller defect
    pts = cgrid.coords()
    far = [float(np.min(cgrid.distance(pts[x], pts[aub.cells]))) for x, _ in het]
    x_h = het[int(np.argmax(far))][0]
    U = box(cgrid, x_h, box_radius)

    g_mod, form = modify_cohomology(ev0.graph, target_c, U)
    kc1 = cf.kernel(target_c)
    ac1 = cf.alpha(target_c)
    ev1 = evolve_restricted(g_mod, kc1, ac1.value, U, N, N_prime)
    U1 = inflate(cgrid, s1, box_radius)
    ev2 = evolve_restricted(ev1.graph, kc1, ac1.value, U1, N, N_prime)

    sym_vals, deck_arg = _deck_index_map(ev2.graph.u.values, cgrid, axis, k)
    sym = Pseudograph(target_c, GridFunction(cgrid, sym_vals))
    proj = project(sym, k, axis)
    # base cell -> fundamental-domain cover cell -> attaining translate
    fund = base.multi_index(np.arange(base.n))
    proj_map = deck_arg[cgrid.flat_index(fund)]

    stages = [
        Stage("initial", g, model),
        Stage("lift", gl, cmodel, "cover", index_map=lift_map),
        Stage("evolve", burn.graph, cmodel, "burn_in", kc, burn),
        Stage("evolve", ev0.graph, cmodel, "phi_S0", kc, ev0, U=s0),
        Stage("modify", g_mod, cmodel, "bump", U=U),
        Stage("evolve", ev1.graph, cmodel, "phi_U", kc1, ev1, U=U),
        Stage("evolve", ev2.graph, cmodel, "phi_U1", kc1, ev2, U=U1),
        Stage("project", proj, model, "deck", index_map=proj_map),
    ]
    cert = ForcingCertificate(c0.copy(), target_c, "arnold", stages)
    cert.verification = {
        "classes": len(part),
        "heteroclinic": {"cell": int(x_h), "coords": pts[x_h].tolist(),
                         "defect": float(dict(het)[x_h])},
        "U": U.tolist(),
        "bump_support": form.support,
    }
    return cert


def forcing_step(g, target_c, factory, **kw):
    """Mather mechanism first, Arnold mechanism on obstruction."""
    try:
        return mather_step(g, target_c, factory, **{k: v for k, v in kw.items()
                                                    if k in ("n_burn", "N", "N_prime", "cap")})
    except ObstructionError:
        return arnold_step(g, target_c, factory, **kw)


# -- orbits -----------------------------------------------------------------


@dataclass
class ConnectingOrbit:
    orbit: PseudoOrbit
    start_cell: int
    end_cell: int
    boundary_start: float
    boundary_end: float
    segment_actions: list

    @property
    def max_defect(self):
        return max(self.orbit.max_defect, self.boundary_start, self.boundary_end)

    def to_dict(self):
        return dict(start_cell=self.start_cell, end_cell=self.end_cell,
                    boundary_start=self.boundary_start, boundary_end=self.boundary_end,
                    max_substep_defect=float(self.orbit.substep_defects.max())
                    if self.orbit.substep_defects.size else 0.0,
                    joint_defects=self.orbit.joint_defects,
                    segment_actions=self.segment_actions,
                    duration=float(self.orbit.times[-1]) if self.orbit.times.size else 0.0)


def connecting_orbit(stages, dual: Pseudograph, tol_min: float = 0.0) -> ConnectingOrbit:
    """Pseudo-orbit from the initial graph of ``stages`` to the graph of ``dual``.

    The end cell is the first minimum of ``u - ŭ`` between the final stage
    and ``dual``; it is traced back through the recorded attainments.
    """
    final = stages[-1].graph
    w = wedge(final, dual, tol_min)
    x_end = int(w.cells[np.argmin((final.u.values - dual.u.values)[w.cells])])
    x0, segs = trace(stages, x_end)
    model0 = stages[0].model
    orb = assemble(segs, model0.base_periods or model0.periods)
    g0 = stages[0].graph
    if orb.momenta.shape[0]:
        p_start = g0.c + centered_gradient(g0.u)[x0]
        p_end = dual.c + centered_gradient(dual.u)[x_end]
        b0 = float(np.max(np.abs(orb.momenta[0] - p_start)))
        b1 = float(np.max(np.abs(orb.momenta[-1] - p_end)))
    else:
        b0 = b1 = 0.0
    actions = [float(sum(s.kernel.table[a, b] for a, b in zip(s.chain[:-1], s.chain[1:])))
               for s in segs]
    return ConnectingOrbit(orb, int(x0), x_end, b0, b1, actions)


def dual_graph(factory: KernelFactory, c):
    """Conjugate (dual) weak KAM pseudograph of class ``c``."""
    _, sol, cp = invariant_cells(factory, c)
    return Pseudograph(c, cp.dual, dual=True)


# -- diffusion ----------------------------------------------------------------


@dataclass
class DiffusionChain:
    classes: list
    certificates: list
    orbit: ConnectingOrbit = None
    joint_p: list = field(default_factory=list)
    visits: list = field(default_factory=list)
    failure: dict = None

    @property
    def complete(self):
        return self.failure is None

    @property
    def mechanisms(self):
        return [c.mechanism for c in self.certificates]

    def to_dict(self):
        return dict(
            classes=[np.asarray(c).tolist() for c in self.classes],
            mechanisms=self.mechanisms,
            certificates=[c.to_dict() for c in self.certificates],
            orbit=self.orbit.to_dict() if self.orbit is not None else None,
            joint_p=[np.asarray(p).tolist() for p in self.joint_p],
            visits=self.visits,
            complete=self.complete,
            failure=self.failure,
        )


def class_path(P, P_prime, step, dim=1, axis=0):
    """Classes from ``P`` to ``P'`` along ``axis`` with steps at most ``step``."""
    n = int(np.ceil(abs(P_prime - P) / step - 1e-9))
    vals = np.linspace(P, P_prime, n + 1) if n else np.array([P])
    out = []
    for v in vals:
        c = np.zeros(dim)
        c[axis] = v
        out.append(c)
    return out


def diffusion_chain(factory: KernelFactory, classes, *, verify_sample=4, **kw) -> DiffusionChain:
    """Chain of forcing certificates along ``classes`` and one pseudo-orbit through all of them."""
    grid = factory.grid
    model = factory.model
    classes = [np.asarray(c, dtype=float).reshape(model.dim) for c in classes]
    if len(classes) < 2:
        return DiffusionChain(classes, [])
    g = flat(grid, classes[0])
    certs = []
    failure = None
    for i, (c_a, c_b) in enumerate(zip(classes[:-1], classes[1:])):
        try:
            cert = forcing_step(g, c_b, factory, **kw)
            verify(cert, factory.tolerances(c_b).orbit, sample=verify_sample)
        except KamError as err:
            failure = dict(step=i, from_c=c_a.tolist(), to_c=c_b.tolist(), **err.to_dict())
            break
        certs.append(cert)
        g = cert.final
    chain = DiffusionChain(classes[:len(certs) + 1], certs, failure=failure)
    if not certs:
        return chain
    stages = [certs[0].stages[0]]
    first_stage = []
    for cert in certs:
        first_stage.append(len(stages))
        stages.extend(cert.stages[1:])
    last_c = chain.classes[-1]
    chain.orbit = connecting_orbit(stages, dual_graph(factory, last_c))
    orb = chain.orbit.orbit
    # momentum where each certificate's first evolution segment starts
    seg_start = {st: j for st, j in zip(orb.segment_stage, orb.joints)}
    for fs in first_stage:
        later = [st for st in orb.segment_stage if st >= fs]
        j = seg_start[later[0]] if later else len(orb.momenta) - 1
        chain.joint_p.append(orb.momenta[j].tolist())
    chain.joint_p.append(orb.momenta[-1].tolist())
    chain.visits = _visits(factory, chain, stages, first_stage)
    return chain


def _visits(factory, chain, stages, first_stage):
    """Closest approach of the orbit to the 𝓘 set of each class, in grid spacings."""
    orb = chain.orbit.orbit
    grid = factory.grid
    pts = grid.coords()
    bounds = list(first_stage) + [len(stages)]
    out = []
    for i, c in enumerate(chain.classes[:-1]):
        cells = chain.certificates[i].verification.get("I_cells")
        if cells is None:
            cells, _, _ = invariant_cells(factory, c)
        mask = np.isin(orb.segment_stage, list(range(bounds[i], bounds[i + 1])))
        seg_idx = np.flatnonzero(mask)
        if seg_idx.size == 0:
            out.append(None)
            continue
        lo = orb.joints[seg_idx[0]]
        hi = orb.joints[seg_idx[-1] + 1] if seg_idx[-1] + 1 < len(orb.joints) else len(orb.positions)
        q = orb.positions[lo:hi]
        dist = grid.distance(q[:, None, :], pts[np.asarray(cells)][None, :, :])
        out.append(float(dist.min() / grid.h))
    return out


# -- twist maps and confinement ---------------------------------------------------


@dataclass
class ForcingClassScan:
    cs: np.ndarray
    in_G: np.ndarray
    aubry_fraction: np.ndarray
    singletons: list
    intervals: list

    def threshold(self):
        """Smallest non-negative sampled class on an invariant circle."""
        pos = self.cs[(self.cs >= 0) & self.in_G]
        return float(pos.min()) if pos.size else None

    def to_dict(self):
        return dict(c=self.cs.tolist(), in_G=self.in_G.tolist(),
                    aubry_fraction=self.aubry_fraction.tolist(),
                    intervals=self.intervals, n_singletons=len(self.singletons),
                    threshold=self.threshold())


def twist_forcing_scan(model: LagrangianModel, cs, sizes=256, M=16, barrier_N=(32, 64),
                       tol_overrides=None) -> ForcingClassScan:
    """Classify sampled classes: on an invariant circle (Aubry set covers the
    circle) or inside an open forcing interval.
    """
    if model.dim != 1:
        raise ConfigError("twist scan needs a one-dimensional model")
    factory = KernelFactory(model, sizes, M, tol_overrides)
    cs = np.asarray(cs, dtype=float)
    in_G = np.zeros(cs.size, dtype=bool)
    frac = np.zeros(cs.size)
    for i, c in enumerate(cs):
        k = build_kernel(model, [c], factory.grid, M, keep_backpointers=False)
        a = alpha(k)
        tol = Tolerances.for_kernel(k, **factory.tol_overrides)
        b = truncated_barrier(k, a, *barrier_N)
        aub = aubry_set(b, tol.aubry)
        frac[i] = aub.cells.size / factory.grid.n
        in_G[i] = aub.cells.size == factory.grid.n
    singletons = cs[in_G].tolist()
    intervals = []
    i = 0
    while i < cs.size:
        if in_G[i]:
            i += 1
            continue
        j = i
        while j + 1 < cs.size and not in_G[j + 1]:
            j += 1
        lo = float(cs[i - 1]) if i > 0 else float("-inf")
        hi = float(cs[j + 1]) if j + 1 < cs.size else float("inf")
        intervals.append((lo, hi))
        i = j + 1
    return ForcingClassScan(cs, in_G, frac, singletons, intervals)


@dataclass
class ConfinementReport:
    max_p2: float
    max_q2_dist: float
    bound: float
    n_cells: int

    @property
    def confined(self):
        return self.max_p2 <= self.bound and self.max_q2_dist <= self.bound

    def to_dict(self):
        return dict(max_p2=self.max_p2, max_q2_dist=self.max_q2_dist, bound=self.bound,
                    n_cells=self.n_cells, confined=self.confined)


def confinement_check(factory: KernelFactory, c1: float, barrier_N=(32, 64), axis=1):
    """Largest ``|p2|`` and distance of ``q2`` from zero over the Mañé cells of ``(c1, 0)``."""
    c = np.zeros(factory.model.dim)
    c[0] = c1
    k = factory.kernel(c)
    a = factory.alpha(c)
    tol = factory.tolerances(c)
    b = truncated_barrier(k, a, *barrier_N)
    aub = aubry_set(b, tol.aubry)
    defect, arg_a, _ = triangle_defect(b, aub.cells, aub.cells)
    cells = np.flatnonzero(defect <= tol.mane)
    pts = factory.grid.coords()
    P = factory.grid.periods[axis]
    q2 = pts[cells, axis]
    dist = np.abs(q2 - P * np.round(q2 / P))
    p2 = np.empty(cells.size)
    for i, x in enumerate(cells):
        row = GridFunction(factory.grid, b.table[arg_a[x]])
        p2[i] = c[axis] + centered_gradient(row)[x, axis]
    bound = 3.0 * factory.unit
    return ConfinementReport(float(np.max(np.abs(p2))), float(dist.max()), bound, int(cells.size)), cells
