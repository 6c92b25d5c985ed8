import numpy as np
import pytest

from kamforce import forcing as fc
from kamforce import model as mdl
from kamforce import pseudograph as pg
from kamforce.action import SpatialGrid
from kamforce.errors import AcyclicityError, ConfigError, NoConnectionError, ObstructionError

from oracles import pendulum_threshold


@pytest.fixture(scope="module")
def factory():
    return fc.KernelFactory(mdl.pendulum_model(), 128, 8)


def test_inflate_box_and_slabs():
    g = SpatialGrid((6, 5))
    out = fc.inflate(g, [g.flat_index([0, 0])], 1)
    assert out.size == 9
    assert g.flat_index([5, 4]) in out
    with pytest.raises(AcyclicityError):
        fc.box(SpatialGrid((6, 3)), 0, 1)
    assert fc.slab_directions(g, out) == [0, 1]
    row = g.flat_index(np.stack([np.full(5, 2), np.arange(5)], axis=-1))
    assert fc.slab_directions(g, row) == [0]


def test_class_path():
    cls = fc.class_path(0.0, 0.6, 0.1, dim=2)
    assert len(cls) == 7
    np.testing.assert_allclose(cls[-1], [0.6, 0.0])
    steps = np.diff(np.array(cls)[:, 0])
    assert np.all(steps <= 0.1 + 1e-12)


def test_mather_step(factory):
    g = pg.flat(factory.grid, [0.0])
    cert = fc.mather_step(g, [0.05], factory)
    assert cert.mechanism == "mather"
    assert [s.kind for s in cert.stages] == ["initial", "evolve", "modify", "evolve"]
    np.testing.assert_allclose(cert.final.c, [0.05])
    # the 𝓘 set of the pendulum at c = 0 sits at the rest point
    xs = factory.grid.coords()[cert.verification["I_cells"], 0]
    assert np.minimum(xs, 1 - xs).max() < 0.1
    tol = factory.tolerances().orbit
    rep = fc.verify(cert, tol)
    assert rep["ok"] and rep["all_traced"]
    orb = fc.connecting_orbit(cert.stages, fc.dual_graph(factory, [0.05]))
    assert orb.orbit.max_defect <= tol
    assert orb.boundary_start <= tol and orb.boundary_end <= tol


def test_mather_step_refused_on_circle(factory):
    g = pg.flat(factory.grid, [1.5])
    with pytest.raises(ObstructionError):
        fc.mather_step(g, [1.55], factory)
    # the cover has a single class there, so no heteroclinic connection either
    with pytest.raises(NoConnectionError):
        fc.forcing_step(g, [1.55], factory)


def test_step_cap(factory):
    g = pg.flat(factory.grid, [0.0])
    with pytest.raises(ConfigError):
        fc.mather_step(g, [2.0], factory)


def test_arnold_step_on_cover(factory):
    g = pg.flat(factory.grid, [0.0])
    cert = fc.arnold_step(g, [0.02], factory, cover_axis=0)
    assert cert.mechanism == "arnold" and cert.verification["classes"] == 2
    kinds = [s.kind for s in cert.stages]
    assert kinds[1] == "lift" and kinds[-1] == "project"
    assert cert.final.grid == factory.grid
    # the connection passes through a point of the separatrix, away from the rest point
    x = cert.verification["heteroclinic"]["coords"][0] % 1.0
    assert 0.1 < x < 0.9
    assert fc.verify(cert, factory.tolerances().orbit)["ok"]


def test_trivial_step(factory):
    g = pg.flat(factory.grid, [0.0])
    cert = fc.forcing_step(g, [0.0], factory)
    assert cert.mechanism == "identity"


def test_pseudo_orbit_csv(factory, tmp_path):
    g = pg.flat(factory.grid, [0.0])
    cert = fc.mather_step(g, [0.05], factory)
    x0, segs = fc.trace(cert.stages, 5)
    orb = fc.assemble(segs, (1.0,))
    path = tmp_path / "orbit.csv"
    orb.to_csv(path)
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    assert data.shape == (orb.times.size, 3)
    assert np.all(np.diff(data[:, 0]) > 0)


def test_short_diffusion_chain(factory):
    chain = fc.diffusion_chain(factory, fc.class_path(0.0, 0.1, 0.05))
    assert chain.complete and chain.mechanisms == ["mather", "mather"]
    assert chain.orbit.max_defect <= factory.tolerances().orbit
    d = chain.to_dict()
    assert d["complete"] and len(d["joint_p"]) == 3


def test_twist_scan_small():
    cs = np.array([0.0, 0.6, 1.0, 1.5, 2.0])
    scan = fc.twist_forcing_scan(mdl.pendulum_model(), cs, 128, 8)
    np.testing.assert_array_equal(scan.in_G, [False, False, False, True, True])
    assert pendulum_threshold() < 1.5
    assert scan.intervals == [(float("-inf"), 1.5)]


def test_confinement_and_control():
    f = fc.KernelFactory(mdl.arnold_model(), (32, 32), 8)
    rep, _ = fc.confinement_check(f, 0.2)
    assert rep.confined
    f0 = fc.KernelFactory(mdl.arnold_model(nu=0.0), (32, 32), 8)
    rep0, _ = fc.confinement_check(f0, 0.2)
    assert not rep0.confined
