import logging
import math

import numpy as np
import pytest

from ils.fixtures import room4_occupants
from ils.perception import (HIDDEN, PARTIAL, VISIBLE, Receiver, incident_map, luminaire_in_vfoa, luxmeter,
                            occupant_perceived_lux, read_receivers_csv, save_raster_csv, save_raster_pgm,
                            virtual_luxmeter)
from ils.photometry import LSC, DistributionCurve, make_standard
from ils.radiosity import Solution
from ils.scene import Luminaire, Occupant, Patch, Scene
from ils.geometry import VisibilityIndex

ISO = make_standard("isotropic", kind=LSC)


def quad(pid, p0, u, v, rho=0.5, emitter=None):
    p0, u, v = (np.asarray(a, float) for a in (p0, u, v))
    return Patch(pid, [p0, p0 + u, p0 + u + v, p0 + v], rho, emitter)


def wall_scene(B=300.0):
    """A single large wall at x = 2 facing -x, with uniform exitance B."""
    wall = quad(0, [2, -50, -50], [0, 0, 100], [0, 100, 0])
    return Scene((wall,)), Solution(np.array([B]), np.zeros(1))


def test_void_reads_zero():
    scene, sol = wall_scene()
    assert virtual_luxmeter(scene, sol, luxmeter([0, 0, 0], [-1, 0, 0])) == 0.0


def test_zero_exitance_wall_reads_zero():
    front = quad(0, [2, -50, -50], [0, 0, 100], [0, 100, 0])
    back = quad(1, [-2, -50, -50], [0, 100, 0], [0, 0, 100])   # lit, but behind the occupant
    scene = Scene((front, back))
    o = Occupant(1, [0, 0, 0], 0.0, math.radians(30))
    assert occupant_perceived_lux(scene, Solution(np.array([0.0, 500.0]), np.zeros(2)), o) == 0.0


def test_cosine_lsc_on_wall_gives_two_thirds():
    # the LSC multiplies the cos(theta) already inside the illuminance integral
    scene, sol = wall_scene(300.0)
    r = luxmeter([0, 0, 0], [1, 0, 0], lsc=make_standard("cosine_lsc", 1.0))
    val, se = virtual_luxmeter(scene, sol, r, rays=16384, with_error=True)
    assert abs(val - 200.0) <= 3 * se + 0.5


@pytest.mark.parametrize("delta", [20.0, 10.0, 5.0])
def test_narrowing_lsc_matches_quadrature(delta):
    scene, sol = wall_scene(300.0)
    lsc = DistributionCurve(LSC, [0.0, delta, 180.0], [1.0, 0.0, 0.0])
    val, se = virtual_luxmeter(scene, sol, luxmeter([0, 0, 0], [1, 0, 0], lsc=lsc), rays=65536,
                               with_error=True)
    t = np.linspace(0, math.radians(delta), 20001)
    f = (1 - t / math.radians(delta)) * np.cos(t) * np.sin(t)
    oracle = 300.0 / math.pi * 2 * math.pi * np.trapezoid(f, t)
    assert abs(val - oracle) <= 3 * se + 1e-3 * oracle


def test_hemisphere_acceptance_is_the_luxmeter(room4, room4_index, room4_cache):
    sol = Solution(room4_cache.field(np.full(8, 254)), np.zeros(room4.n))
    o = room4_occupants()[0]
    a = occupant_perceived_lux(room4, sol, o, rays=1024, seed=2, index=room4_index, acceptance="hemisphere")
    b = virtual_luxmeter(room4, sol, Receiver(o.head, o.axis(), o.lsc, math.pi / 2, o.id), rays=1024,
                         seed=2, index=room4_index)
    assert abs(a - b) <= 1e-12


def test_room4_ambient_order_of_magnitude(room4, room4_cache):
    # full-lit reading for occupant 1, compared with a ~1200 lux ambient level
    lux = room4_cache.lux_matrix(room4_occupants((0.0, 0.0))).sum(axis=1)
    assert 600.0 <= lux[0] <= 2400.0


def test_occupant_outside_scene_rejected(room4):
    o = Occupant(1, [50, 0, 1.7], 0.0)
    with pytest.raises(ValueError):
        occupant_perceived_lux(room4, Solution(np.zeros(room4.n), np.zeros(room4.n)), o)


def panel_scene(screen=False, offset=np.zeros(3), R=np.eye(3)):
    lum_patch = quad(0, [3, -0.3, 1.4], [0, 0.6, 0], [0, 0, 0.6], 0.0, emitter=1)  # faces -x
    patches = [lum_patch]
    if screen:
        patches.append(quad(1, [2, -1.0, 0.0], [0, 0, 3.0], [0, 1.0, 0]))  # covers y < 0
    moved = [Patch(p.id, p.vertices @ R.T + offset, p.reflectance, p.emitter_id) for p in patches]
    lum = Luminaire(1, R @ [3, 0, 1.7] + offset, R @ [-1, 0, 0], make_standard("lambertian"), 1000, 10, 0)
    return Scene(moved, (lum,))


def classify(scene, heading, head=(0, 0, 1.7), mode="raw"):
    o = Occupant(1, head, heading, math.radians(30))
    return luminaire_in_vfoa(o, scene.luminaires[0], VisibilityIndex(scene.patches), 16, mode)


def test_visibility_classes():
    assert classify(panel_scene(), 0.0) == VISIBLE
    assert classify(panel_scene(), math.pi) == HIDDEN
    assert classify(panel_scene(screen=True), 0.0) == PARTIAL
    # panel straddles the cone boundary
    assert classify(panel_scene(), math.radians(32)) == PARTIAL


@pytest.mark.parametrize("seed", range(5))
def test_visibility_rigid_invariance(seed):
    rng = np.random.default_rng(seed)
    phi = rng.uniform(0, 2 * math.pi)
    c, s = math.cos(phi), math.sin(phi)
    R = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
    t = rng.uniform(-5, 5, 3)
    for screen in (False, True):
        for heading in (0.0, 0.3, math.pi):
            base = classify(panel_scene(screen), heading)
            moved = classify(panel_scene(screen, t, R), heading + phi, head=R @ [0, 0, 1.7] + t)
            assert base == moved


def test_incident_map_and_outputs(tmp_path, caplog):
    floor = quad(0, [0, 0, 0], [4, 0, 0], [0, 4, 0])
    ceiling = quad(1, [0, 0, 3], [0, 4, 0], [4, 0, 0])
    scene = Scene((floor, ceiling))
    sol = Solution(np.array([0.0, 100.0]), np.zeros(2))
    r = incident_map(scene, sol, grid=1.0, plane=1.0, rays=256)
    assert r.lux.shape == (4, 4)
    assert np.all(r.lux > 0) and np.all(r.lux <= 100.0 + 1e-9)
    assert r.lux[1:3, 1:3].min() > r.lux[0, 0]   # centre sees more ceiling than a corner
    save_raster_csv(r, tmp_path / "m.csv")
    save_raster_pgm(r, tmp_path / "m.pgm")
    assert (tmp_path / "m.csv").read_text().count("\n") == 17
    with caplog.at_level(logging.WARNING):
        assert incident_map(scene, sol, plane=9.0).empty
    assert "outside" in caplog.text


def test_receivers_csv(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("id,x,y,z,axis,type\n1,0,0,1,0 0 1,luxmeter\n2,1,1,1,1 0 0,cone:20\n")
    rs = read_receivers_csv(p)
    assert [r.id for r in rs] == [1, 2]
    assert rs[1].half_angle == pytest.approx(math.radians(20))
