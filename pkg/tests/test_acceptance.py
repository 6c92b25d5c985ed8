"""Acceptance criteria, one test per criterion.

Each test prints a ``criterion N: PASS|FAIL`` line with the measured
quantity and its tolerance; the lines are repeated in the pytest summary.
"""

import time

import numpy as np
import pytest

from kamforce import action
from kamforce import aubry as ab
from kamforce import forcing as fc
from kamforce import model as mdl
from kamforce import weakkam as wk
from kamforce.semiconcave import GridFunction, semiconcavity_constant

from oracles import (enumerate_paths, matrix_powers, maupertuis, pendulum_barrier_to_zero,
                     pendulum_substep, pendulum_threshold, relax)
from report import record


def kernel(m, c, sizes, M, **kw):
    return action.build_kernel(m, np.atleast_1d(np.asarray(c, dtype=float)), action.grid_for(m, sizes),
                               M, **kw)


def test_criterion_01_alpha_closed_form():
    t0 = time.perf_counter()
    m = mdl.free_model()
    worst, contained = 0.0, True
    for c in (0.0, 0.25, -0.25, 0.5, -0.5, 1.0, -1.0):
        a = wk.alpha(kernel(m, c, 256, 16, keep_backpointers=False), n=64)
        contained &= a.lower <= c * c / 2 <= a.upper
        worst = max(worst, abs(0.5 * (a.lower + a.upper) - c * c / 2))
    dt = time.perf_counter() - t0
    ok = record(1, contained and worst <= 1e-2 and dt <= 10,
                f"bracket contains c^2/2: {contained}; midpoint error {worst:.2e} <= 1e-2; "
                f"runtime {dt:.1f}s <= 10s")
    assert ok


def test_criterion_02_bracket_width():
    k = kernel(mdl.pendulum_model(), 0.0, 256, 16, keep_backpointers=False)
    fin = k.table[np.isfinite(k.table)]
    K = float(fin.max() - fin.min())
    a64, a128 = wk.alpha(k, n=64), wk.alpha(k, n=128)
    bound = K / 64 + 5 * k.discretization
    ratio = a128.width / a64.width
    ok = record(2, a64.width <= bound and 0.4 <= ratio <= 0.6,
                f"width(64) {a64.width:.3e} <= K/n + 5(h+1/M) = {bound:.3e}; "
                f"width(128)/width(64) = {ratio:.3f} in [0.4, 0.6]")
    assert ok


def test_criterion_03_operator_laws():
    rng = np.random.default_rng(2024)
    kernels = [kernel(mdl.pendulum_model(), 0.3, 128, 8, keep_backpointers=False),
               kernel(mdl.forced_pendulum_model(), -0.5, 128, 8, keep_backpointers=False)]
    violations = 0
    worst = 0.0
    for k in kernels:
        x = k.grid.coords()[:, 0]
        for i in range(100):
            if i % 2:
                u = rng.normal(size=k.grid.n)
                v = u + rng.normal(scale=0.1, size=k.grid.n)
            else:
                u = wk.random_lipschitz_seed(k.grid, rng, lipschitz=3.0).values
                v = np.sin(2 * np.pi * (x + rng.random())) * rng.random()
            a = rng.normal(scale=5)
            tu, tv = wk.lax_oleinik(k, u).values, wk.lax_oleinik(k, v).values
            checks = [
                np.max(np.abs(tu - tv)) - np.max(np.abs(u - v)),
                np.max(wk.lax_oleinik(k, np.minimum(u, v)).values - np.minimum(tu, tv)),
                np.max(np.abs(wk.lax_oleinik(k, u + a).values - tu - a)),
                np.max(wk.dual_lax_oleinik(k, tu).values - u),
            ]
            worst = max(worst, max(checks))
            violations += sum(c > 1e-12 for c in checks)
    ok = record(3, violations == 0,
                f"{violations} violations beyond 1e-12 over 200 functions x 4 laws (worst {worst:.1e})")
    assert ok


def test_criterion_04_weak_kam_residual():
    rows = []
    ok = True
    for m in (mdl.pendulum_model(), mdl.forced_pendulum_model(eps=0.1)):
        for c in (0.0, 0.5):
            k = kernel(m, c, 256, 16, keep_backpointers=False)
            a = wk.alpha(k)
            sol = wk.weak_kam_solve(k, a)
            tol = 5 * k.discretization * m.scale
            ok &= sol.residual <= tol
            rows.append(f"{m.name} c={c}: {sol.residual:.2e}/{tol:.2e}")
    assert record(4, ok, "residual/tolerance " + "; ".join(rows))


def test_criterion_05_barrier_oracle(pendulum_barrier):
    b = pendulum_barrier
    xs = b.grid.coords()[:, 0]
    orc = np.array([pendulum_barrier_to_zero(x) for x in xs])
    h = b.table[:, 0]
    rel = float(np.max(np.abs(h - orc)) / np.max(orc))
    H = b.table
    worst = 0.0
    for y in range(H.shape[0]):
        # h(x, z) <= h(x, y) + h(y, z) over all triples
        worst = max(worst, float(np.max(H - (H[:, y][:, None] + H[y][None, :]))))
    ok = record(5, rel <= 0.05 and worst <= 3 * b.error_bound,
                f"sup relative error {rel:.4f} <= 0.05; worst triangle violation {worst:.2e} "
                f"<= 3 error_bound = {3 * b.error_bound:.2e}")
    assert ok


def test_criterion_06_aubry_detection(pendulum_256, pendulum_barrier):
    k, _ = pendulum_256
    tol = wk.Tolerances.for_kernel(k)
    aub = ab.aubry_set(pendulum_barrier, tol.aubry)
    n_clusters = ab.recurrence_components(aub.cells, k.grid)
    d = pendulum_barrier.diagonal()
    center = float(k.grid.coords()[aub.cells[np.argmin(d[aub.cells])], 0])
    off = min(center, 1 - center)
    m = mdl.free_model()
    kf = kernel(m, 0.0, 256, 16)
    bf = wk.truncated_barrier(kf, wk.alpha(kf))
    free_cells = ab.aubry_set(bf, wk.Tolerances.for_kernel(kf).aubry).cells.size
    ok = record(6, n_clusters == 1 and off <= k.grid.h and free_cells == 256,
                f"pendulum: {n_clusters} cluster, centre {off:.4f} from q=0 (h={k.grid.h:.4f}); "
                f"free: {free_cells}/256 cells")
    assert ok


def _combos():
    return [
        (mdl.free_model(1), [(0.0,), (0.3,)], 128, 8),
        (mdl.pendulum_model(), [(0.0,), (0.5,), (1.5,)], 128, 8),
        (mdl.forced_pendulum_model(), [(0.0,), (0.5,), (1.5,)], 128, 8),
        (mdl.free_model(2), [(0.0, 0.0), (0.3, 0.1)], (16, 16), 4),
        (mdl.arnold_model(), [(0.0, 0.0), (0.4, 0.0)], (32, 32), 8),
    ]


def test_criterion_07_set_inclusions():
    bad = []
    n = 0
    for m, classes, sizes, M in _combos():
        for c in classes:
            k = kernel(m, c, sizes, M)
            a = wk.alpha(k)
            tol = wk.Tolerances.for_kernel(k)
            b = wk.truncated_barrier(k, a)
            aub = ab.aubry_set(b, tol.aubry)
            mane, _ = ab.mane_set(b, aub, tol.mane)
            mather = ab.mather_set_approx(aub, b, k)
            n += 1
            if not (mather.size and set(mather) <= set(aub.cells) <= set(mane)):
                bad.append(f"{m.name} {c}")
    assert record(7, not bad, f"M ⊂ A ⊂ N on {n - len(bad)}/{n} model/class combinations {bad or ''}")


def test_criterion_08_conjugate_pair():
    rows = []
    ok = True
    for m in (mdl.pendulum_model(), mdl.forced_pendulum_model()):
        k = kernel(m, 0.0, 256, 16, keep_backpointers=False)
        a = wk.alpha(k)
        tol = wk.Tolerances.for_kernel(k).fix
        cp = wk.conjugate_pair(k, a, wk.weak_kam_solve(k, a), tol_fix=tol, max_iter=200)
        mono = all(x >= y for x, y in zip(cp.decrements, cp.decrements[1:]))
        ok &= mono and cp.reached_tol_at is not None and cp.reached_tol_at <= 200
        ok &= cp.roundtrip <= 3 * tol
        rows.append(f"{m.name}: monotone {mono}, tol reached at {cp.reached_tol_at}, "
                    f"round trip {cp.roundtrip:.1e} <= {3 * tol:.1e}")
    assert record(8, ok, "; ".join(rows))


def test_criterion_09_twist_scan():
    t0 = time.perf_counter()
    cs = np.round(np.arange(-200, 201) * 0.01, 2)
    scan = fc.twist_forcing_scan(mdl.pendulum_model(1.0), cs, 256, 16)
    dt = time.perf_counter() - t0
    cstar = pendulum_threshold(1.0)
    thr = scan.threshold()
    # one open interval around zero, every other sample an invariant circle
    shape_ok = len(scan.intervals) == 1
    if shape_ok:
        lo, hi = scan.intervals[0]
        shape_ok = abs(lo + cstar) <= 0.03 and abs(hi - cstar) <= 0.03
        shape_ok &= bool(np.all(scan.in_G == ((cs <= lo) | (cs >= hi))))
    ok = record(9, thr is not None and abs(thr - cstar) <= 0.03 and shape_ok and dt <= 300,
                f"threshold {thr} vs c* = {cstar:.4f} (|err| <= 0.03); intervals {scan.intervals}; "
                f"runtime {dt:.0f}s <= 300s")
    assert ok


def test_criterion_10_covering_split():
    m = mdl.cover_model(mdl.pendulum_model(), 0, 2)
    k = kernel(m, 0.0, 256, 16)
    a = wk.alpha(k)
    tol = wk.Tolerances.for_kernel(k)
    b = wk.truncated_barrier(k, a)
    part = ab.static_classes(ab.aubry_set(b, tol.aubry), b)
    het = ab.heteroclinic_points(b, part.classes[0], part.classes[1], tol.mane) if len(part) == 2 else []
    on_sep = 0
    for x, _ in het:
        q = k.grid.coords()[x, 0] % 1.0
        # on the separatrix lift, the barrier from the rest point on the left is the
        # Maupertuis action of the arc [0, q]
        src = part.classes[0] if k.grid.coords()[x, 0] < 1.0 else part.classes[1]
        h = float(np.min(b.table[src, x]))
        on_sep += abs(h - maupertuis(0.0, q)) <= 0.05 * pendulum_threshold()
    best = het[0][1] if het else None
    ok = record(10, len(part) == 2 and on_sep >= 1,
                f"{len(part)} static classes; {len(het)} heteroclinic cells within tol_mane "
                f"{tol.mane:.2e} (best defect {best}), {on_sep} on the separatrix")
    assert ok


def test_criterion_11_arnold_confinement():
    f = fc.KernelFactory(mdl.arnold_model(), (32, 32), 8)
    rows = []
    ok = True
    for c1 in (0.0, 0.15, 0.4):
        t0 = time.perf_counter()
        rep, _ = fc.confinement_check(f, c1)
        dt = time.perf_counter() - t0
        ok &= rep.max_p2 <= rep.bound and dt <= 600
        rows.append(f"c1={c1}: max|p2| {rep.max_p2:.3f} <= {rep.bound:.3f} ({dt:.0f}s)")
    assert record(11, ok, "; ".join(rows))


def test_criterion_12_diffusion_demo():
    t0 = time.perf_counter()
    f = fc.KernelFactory(mdl.arnold_model(), (32, 16), 8)
    chain = fc.diffusion_chain(f, fc.class_path(0.0, 0.6, 0.1, dim=2))
    dt = time.perf_counter() - t0
    tol = f.tolerances().orbit
    cap = fc.step_cap(f)
    if not chain.complete:
        record(12, False, f"chain stopped: {chain.failure}")
        pytest.fail(str(chain.failure))
    orb = chain.orbit
    defects = [orb.orbit.max_defect, orb.boundary_start, orb.boundary_end]
    defects += [c.verification["max_joint_defect"] for c in chain.certificates]
    defects += [c.verification["max_substep_defect"] for c in chain.certificates]
    p1 = np.array(chain.joint_p)[:, 0]
    steps = np.diff(p1)
    mono = bool(np.all(steps >= -tol) and np.all(steps <= cap))
    arnold = chain.mechanisms.count("arnold")
    ok = record(12, max(defects) <= tol and mono and arnold >= 1 and dt <= 1800,
                f"max defect {max(defects):.3f} <= tol_orbit {tol:.3f}; joint p1 "
                f"{np.round(p1, 3).tolist()} monotone within cap {cap:.2f}: {mono}; "
                f"arnold steps {arnold}; runtime {dt:.0f}s")
    assert ok


def test_criterion_13_uniform_families():
    speed_ok = True
    for m, sizes, M in ((mdl.free_model(1), 64, 8), (mdl.pendulum_model(), 64, 8),
                        (mdl.forced_pendulum_model(), 64, 8), (mdl.free_model(2), (12, 12), 4),
                        (mdl.arnold_model(), (12, 12), 4)):
        rep = action.speed_bound_check(kernel(m, np.zeros(m.dim), sizes, M))
        speed_ok &= rep.within_hint
    cont = []
    for m0, m1 in ((mdl.pendulum_model(1.0), mdl.pendulum_model(1.2)),
                   (mdl.forced_pendulum_model(eps=0.1), mdl.forced_pendulum_model(eps=0.2))):
        g = action.grid_for(m0, 64)
        lhs, rhs = action.kernel_continuity_check(m0, m1, [0.3], g, 8)
        cont.append(lhs - rhs)
    g = action.SpatialGrid((64,))
    cont_ok = max(cont) <= 2 * (g.h + 1 / 8)

    def const(c, N, M):
        k = kernel(mdl.pendulum_model(), c, N, M, keep_backpointers=False)
        return max(semiconcavity_constant(GridFunction(k.grid, k.table[:, y])).constant
                   for y in range(N))

    cs = np.linspace(-2, 2, 9)
    coarse = np.array([const(c, 64, 8) for c in cs])
    fine = np.array([const(c, 128, 8) for c in cs])
    K = max(coarse.max(), fine.max())
    stable = float(np.max(np.abs(fine / coarse - 1)))
    ok = record(13, speed_ok and cont_ok and np.isfinite(K) and stable <= 0.25,
                f"speed bound on built-ins: {speed_ok}; continuity excess {max(cont):.2e} "
                f"<= 2(h+1/M); semi-concavity K = {K:.3f} over c in [-2,2], "
                f"change under grid halving {stable:.1%} <= 25%")
    assert ok


def test_criterion_14_brute_force():
    kappa, c, n, M = 1.0, 0.3, 16, 4
    m = mdl.pendulum_model(kappa)
    k = kernel(m, c, n, M)
    dt = 1.0 / M
    window = min(0.5 + 1.0 / n, m.speed_bound([c])[0] * dt)
    tabs = [pendulum_substep(n, c, kappa, dt, (j + 0.5) * dt, window) for j in range(M)]
    exact = bool(np.array_equal(k.table, enumerate_paths(tabs)))
    rng = np.random.default_rng(5)
    lo_err = 0.0
    for _ in range(20):
        u = rng.normal(size=n)
        lo_err = max(lo_err, float(np.max(np.abs(wk.lax_oleinik(k, u).values - relax(u, k.table)))))
    a = wk.alpha(k)
    b = wk.truncated_barrier(k, a, 8, 24)
    powers = matrix_powers(k.table, 24)
    expect = np.min([powers[j - 1] + j * a.value for j in range(8, 25)], axis=0)
    b_err = float(np.max(np.abs(b.table - expect)))
    ok = record(14, exact and lo_err <= 1e-12 and b_err <= 1e-12,
                f"kernel exact: {exact}; lax_oleinik error {lo_err:.1e}; barrier error {b_err:.1e} "
                f"(<= 1e-12)")
    assert ok
