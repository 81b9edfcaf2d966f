import numpy as np
import pytest
from hypothesis import given, strategies as st

from ils.controller import (CacheStaleError, ComfortConstraint, DimmingVector, PowerModel, SearchSpaceError,
                            energy_report, evaluate_config, flux_fraction, optimize_exhaustive,
                            optimize_greedy, overhead_for_percent, timeline_energy)
from ils.fixtures import build_room4, room4_occupants
from ils.perception import occupant_perceived_lux
from ils.radiosity import Solution

FULL = 254


class Fixed:
    def __init__(self, M, full, standby=0.0):
        self.M = np.asarray(M, float)
        self.power = PowerModel(full, standby)
        self.lum_ids = tuple(range(self.M.shape[1]))

    def check(self, scene):
        pass

    def lux_matrix(self, occ):
        return self.M


def test_flux_fraction_curve():
    f = flux_fraction(np.arange(255))
    assert f[0] == 0 and f[1] == pytest.approx(1e-3) and f[254] == pytest.approx(1.0)
    assert np.all(np.diff(f[1:]) > 0)
    with pytest.raises(ValueError):
        flux_fraction([255])


def test_dimming_vector_and_power_model():
    d = DimmingVector((0, 254, 1))
    assert d.active == (1, 2)
    with pytest.raises(ValueError):
        DimmingVector((300,))
    p = PowerModel([10.0, 10.0], [1.0, 0.0])
    assert p.total([0, 0]) == pytest.approx(1.0)
    assert p.delta_watt([254, 254]) == pytest.approx(0.0)
    with pytest.raises(ValueError):
        PowerModel([1.0], [2.0])


def test_constraint_semantics():
    c = ComfortConstraint(min_lux=100, max_delta_lux=50)
    base = np.array([200.0, 120.0])
    assert c.feasible([150.0, 100.0], base)
    assert not c.feasible([149.0, 100.0], base)   # dlux 51
    assert not c.feasible([150.0, 99.0], base)    # below min
    assert c.feasible([150.0 - 1e-8, 100.0], base)  # inside the relative tolerance
    with pytest.raises(ValueError):
        ComfortConstraint(max_delta_lux=-1)


def test_exhaustive_tie_breaks_and_infeasible():
    # luminaire 2 contributes nothing: switching either 1 or 2 off saves the same power
    cache = Fixed([[100.0, 0.0, 100.0]], [10.0, 10.0, 10.0])
    d = optimize_exhaustive(None, cache, [object()], ComfortConstraint(max_delta_lux=100.0))
    assert d.levels == (0, 0, 254)  # 1 and 3 symmetric; lexicographic order decides
    d = optimize_exhaustive(None, cache, [object()], ComfortConstraint(min_lux=1e6))
    assert d.infeasible and d.levels == (254, 254, 254)


def test_no_occupants_switches_everything_off():
    cache = Fixed(np.zeros((0, 4)), [5.0] * 4)
    assert optimize_exhaustive(None, cache, [], ComfortConstraint(max_delta_lux=10)).levels == (0,) * 4


def test_search_space_bound():
    cache = Fixed(np.ones((1, 8)), [1.0] * 8)
    with pytest.raises(SearchSpaceError):
        optimize_exhaustive(None, cache, [object()], levels=range(0, 255, 4))


def test_greedy_prefers_hidden_luminaires():
    # lum 0 is visible and costly, lum 1 hidden and cheap; only one may go off
    cache = Fixed([[60.0, 60.0]], [100.0, 10.0])
    cons = ComfortConstraint(max_delta_lux=60.0)
    vis = np.array([[2, 0]])
    assert optimize_greedy(None, cache, [object()], cons, visibility=vis).levels == (254, 0)
    assert optimize_exhaustive(None, cache, [object()], cons).levels == (0, 254)


@given(st.lists(st.floats(0, 500), min_size=3, max_size=3), st.floats(0, 600))
def test_greedy_is_feasible_and_never_beats_exhaustive(row, bound):
    cache = Fixed([row], [20.0, 30.0, 40.0])
    cons = ComfortConstraint(max_delta_lux=bound)
    ex = optimize_exhaustive(None, cache, [object()], cons, (0, 128, 254))
    gr = optimize_greedy(None, cache, [object()], cons, (0, 128, 254), visibility=np.zeros((1, 3), int))
    lux = cache.M @ flux_fraction(gr.array)
    assert cons.feasible(lux, cache.M.sum(axis=1))
    assert cache.power.delta_watt(gr.array) <= cache.power.delta_watt(ex.array) + 1e-9


def test_superposition_matches_direct_perception(room4, room4_index, room4_cache):
    occ = room4_occupants((0.0, 0.0))
    levels = (254, 0, 180, 254, 1, 0, 90, 254)
    ev = evaluate_config(room4, room4_cache, levels, occ)
    sol = Solution(room4_cache.field(np.array(levels)), np.zeros(room4.n))
    for k, o in enumerate(occ):
        direct = occupant_perceived_lux(room4, sol, o, room4_cache.rays, room4_cache.seed, room4_index)
        assert ev.lux[k] == pytest.approx(direct, rel=1e-9)


def test_cache_goes_stale(room4, room4_cache):
    other = build_room4(flux=7000.0)
    with pytest.raises(CacheStaleError):
        evaluate_config(other, room4_cache, (254,) * 8)
    with pytest.raises(ValueError):
        evaluate_config(room4, room4_cache, (254,) * 7)


def test_energy_report_contents():
    p = PowerModel([96.8] * 8, 0.0)
    rep = energy_report((0, 0, 254, 254, 0, 0, 0, 0), p, 8.0, overhead=10.0, delta_lux=(12.5,))
    assert rep.kwh == pytest.approx((580.8 - 10.0) * 8 / 1000)
    assert rep.percent == pytest.approx(570.8 / 784.4 * 100)
    text = rep.text()
    assert "kWh saved = (dW - P_overhead) * hours / 1000" in text and "99 kWh" in text
    lines = rep.csv().splitlines()
    assert lines[0] == "config,delta_watt,delta_lux,kwh,percent"
    assert lines[1].startswith("0 0 254 254 0 0 0 0,")
    with pytest.raises(ValueError):
        energy_report((254,) * 8, p, 0.0)


def test_overhead_inverse_and_timeline():
    p = PowerModel([96.8] * 8, 0.0)
    d = (0, 0, 254, 254, 0, 0, 0, 0)
    for target in (10.0, 50.0, 66.0, 74.0):
        o = overhead_for_percent(p, d, target)
        assert energy_report(d, p, 1.0, o).percent == pytest.approx(target, abs=1e-9)
    kwh, pct = timeline_energy([(1.0, DimmingVector(d)), (1.0, DimmingVector((254,) * 8))], p)
    assert kwh == pytest.approx(0.5808) and pct == pytest.approx(37.5)
