import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ils.fixtures import build_cube, build_room4, data_path
from ils.scene import (Occupant, Patch, Scene, SceneError, compass_from_math, load_scene,
                       quantize_heading, save_scene, scene_from_dict)


def square(z=0.0):
    return [[0, 0, z], [1, 0, z], [1, 1, z], [0, 1, z]]


def test_patch_normal_and_area():
    p = Patch(1, square(), 0.5)
    assert np.allclose(p.normal, [0, 0, 1])
    assert p.area == pytest.approx(1.0)
    assert np.allclose(p.centroid, [0.5, 0.5, 0])


@pytest.mark.parametrize("verts, rho", [
    (square(), 1.0),
    (square(), -0.1),
    ([[0, 0, 0], [1, 0, 0], [2, 0, 0]], 0.5),                 # zero area
    ([[0, 0, 0], [1, 0, 0], [1, 1, 0.01], [0, 1, 0]], 0.5),   # warped quad
    ([[0, 0, 0], [1, 0, 0], [0.2, 0.2, 0], [0, 1, 0]], 0.5),  # non-convex
])
def test_patch_invariants(verts, rho):
    with pytest.raises(SceneError):
        Patch(0, verts, rho)


def test_scene_reference_checks():
    with pytest.raises(SceneError, match="emitter"):
        Scene((Patch(0, square(), 0.5, emitter_id=3),))
    with pytest.raises(SceneError, match="duplicate"):
        Scene((Patch(0, square(), 0.5), Patch(0, square(1), 0.5)))
    with pytest.raises(SceneError):
        Scene(())


def test_heading_quantization_boundaries():
    deg = math.radians
    assert quantize_heading(deg(0)) == "N"
    assert quantize_heading(deg(44.999)) == "N"
    assert quantize_heading(deg(45)) == "E"      # boundary goes clockwise
    assert quantize_heading(deg(315)) == "N"
    assert quantize_heading(deg(225)) == "W"
    assert quantize_heading(deg(22.5), bins=8) == "NE"


@given(st.floats(0, 2 * math.pi, exclude_max=True), st.integers(-3, 3))
def test_quantization_is_periodic(b, k):
    assert quantize_heading(b) == quantize_heading(b + 2 * math.pi * k)


def test_occupant_axis_bin_vs_raw():
    o = Occupant(1, [0, 0, 1.7], math.radians(20))   # compass 70 deg -> E
    assert o.vfoa_bin == "E"
    assert np.allclose(o.axis("bin"), [1, 0, 0], atol=1e-12)
    assert np.allclose(o.axis("raw"), [math.cos(math.radians(20)), math.sin(math.radians(20)), 0])
    assert compass_from_math(0.0) == pytest.approx(math.pi / 2)


def test_occupant_cone_bounds():
    with pytest.raises(SceneError):
        Occupant(1, [0, 0, 0], 0.0, cone_half_angle=math.radians(95))


def test_scene_file_roundtrip(tmp_path):
    s = build_room4()
    save_scene(s, tmp_path / "r.scene")
    t = load_scene(tmp_path / "r.scene")
    assert t.geometry_hash() == s.geometry_hash()
    assert t.n == s.n and len(t.occupants) == 2


def test_bundled_fixtures_match_builders():
    assert load_scene(data_path("room4.scene")).geometry_hash() == build_room4().geometry_hash()
    assert load_scene(data_path("cube.scene")).geometry_hash() == build_cube().geometry_hash()


def test_hash_ignores_occupants_and_levels():
    s = build_cube()
    h = s.geometry_hash()
    assert s.with_occupants([Occupant(1, [0.5, 0.5, 0.5], 0.0)]).geometry_hash() == h
    assert s.with_levels({0: 10}).geometry_hash() == h


def test_emission_scales_with_dali_curve():
    s = build_cube(flux=6.0)
    assert np.allclose(s.emission(), 1.0)
    assert np.allclose(s.emission({0: 1}), 1e-3)
    assert np.all(s.emission({0: 0}) == 0)


def test_parse_errors(tmp_path):
    (tmp_path / "bad.scene").write_text("{not json")
    with pytest.raises(SceneError, match="parse error"):
        load_scene(tmp_path / "bad.scene")
    with pytest.raises(SceneError, match="missing key"):
        scene_from_dict({"patches": [{"id": 0, "vertices": square()}]})
    with pytest.raises(SceneError, match="units"):
        scene_from_dict({"meta": {"units": "ft"}, "patches": []})
