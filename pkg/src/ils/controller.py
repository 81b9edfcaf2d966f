"""Invisible light switch: dimming optimization over cached per-luminaire solutions.

Radiosity is linear in the emission, so the field of any dimming vector is
the flux-weighted sum of one solve per luminaire at full output.  Occupant
readings are linear functionals of that field, which reduces every candidate
evaluation to a small matrix product.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dali import MAX_LEVEL, level_to_flux
from .geometry import VisibilityIndex
from .perception import DEFAULT_RAYS, HIDDEN, PARTIAL, VISIBLE, luminaire_in_vfoa, occupant_gathers
from .radiosity import DirectSolver, problem_from_scene

MAX_CANDIDATES = 10**6
FEAS_RTOL = 1e-9
_FLUX = np.array([level_to_flux(k) for k in range(MAX_LEVEL + 1)])
_VIS_RANK = {HIDDEN: 0, PARTIAL: 1, VISIBLE: 2}


class CacheStaleError(RuntimeError):
    pass


class SearchSpaceError(ValueError):
    pass


def flux_fraction(levels):
    levels = np.asarray(levels)
    if np.any(levels < 0) or np.any(levels > MAX_LEVEL):
        raise ValueError("arc level out of range 0-254")
    return _FLUX[levels.astype(np.int64)]


@dataclass(frozen=True)
class DimmingVector:
    levels: tuple
    infeasible: bool = False

    def __post_init__(self):
        lv = tuple(int(x) for x in self.levels)
        if any(not 0 <= x <= MAX_LEVEL for x in lv):
            raise ValueError("dimming levels must lie in [0, 254]")
        object.__setattr__(self, "levels", lv)

    def __len__(self):
        return len(self.levels)

    @property
    def array(self):
        return np.array(self.levels, dtype=np.int64)

    @property
    def active(self):
        return tuple(k for k, x in enumerate(self.levels) if x > 0)

    @classmethod
    def full(cls, n, infeasible=False):
        return cls((MAX_LEVEL,) * n, infeasible)

    def as_map(self, scene):
        return {l.id: v for l, v in zip(scene.luminaires, self.levels)}


@dataclass(frozen=True, eq=False)
class PowerModel:
    """power(level) = standby + (full - standby) * flux_fraction(level), per luminaire."""
    full: np.ndarray
    standby: np.ndarray

    def __post_init__(self):
        full = np.atleast_1d(np.asarray(self.full, dtype=float))
        standby = np.broadcast_to(np.asarray(self.standby, dtype=float), full.shape).copy()
        if np.any(full < 0) or np.any(standby < 0) or np.any(standby > full):
            raise ValueError("need 0 <= standby <= full power")
        object.__setattr__(self, "full", full)
        object.__setattr__(self, "standby", standby)

    @classmethod
    def from_scene(cls, scene):
        return cls([l.power_w for l in scene.luminaires], [l.standby_w for l in scene.luminaires])

    def power(self, levels):
        """Watts per luminaire; ``levels`` may be (..., L)."""
        return self.standby + (self.full - self.standby) * flux_fraction(levels)

    def total(self, levels):
        return self.power(levels).sum(axis=-1)

    @property
    def full_lit(self):
        return float(self.full.sum())

    def delta_watt(self, levels):
        return self.full_lit - self.total(levels)


@dataclass(frozen=True)
class ComfortConstraint:
    """Per-occupant bounds: perceived lux >= min_lux and (full-lit lux - lux) <= max_delta_lux."""
    min_lux: Optional[float] = None
    max_delta_lux: Optional[float] = None

    def __post_init__(self):
        for v in (self.min_lux, self.max_delta_lux):
            if v is not None and not v >= 0:
                raise ValueError("comfort thresholds must be >= 0")

    def feasible(self, lux, baseline):
        """Boolean per row of ``lux`` (..., O) against per-occupant ``baseline`` (O,)."""
        lux = np.asarray(lux, dtype=float)
        baseline = np.asarray(baseline, dtype=float)
        tol = FEAS_RTOL * np.maximum(1.0, np.abs(baseline))
        ok = np.ones(lux.shape, dtype=bool)
        if self.max_delta_lux is not None:
            ok &= (baseline - lux) <= self.max_delta_lux + tol
        if self.min_lux is not None:
            ok &= lux >= self.min_lux - tol
        return ok.all(axis=-1)


class SolutionCache:
    """Per-luminaire radiosity solutions at full output, keyed to one scene geometry.

    ``basis[l]`` is the exitance vector with only luminaire ``l`` on at level
    254.  Occupant gather rows are memoized by pose so a moving timeline only
    pays for new poses.
    """

    def __init__(self, scene, transport, sense=None, rays=DEFAULT_RAYS, seed=0, index=None,
                 axis_mode="bin"):
        self.scene_hash = scene.geometry_hash()
        self.index = index or VisibilityIndex(scene.patches)
        self.rays, self.seed, self.axis_mode = rays, seed, axis_mode
        self.power = PowerModel.from_scene(scene)
        problem = problem_from_scene(scene, transport, sense=sense)
        solver = DirectSolver(problem)
        self.solver = solver
        lums = scene.luminaires
        self.lum_ids = tuple(l.id for l in lums)
        self.basis = np.zeros((len(lums), scene.n))
        self.incident = np.zeros((len(lums), scene.n))
        for k, lum in enumerate(lums):
            levels = {m.id: (MAX_LEVEL if m.id == lum.id else 0) for m in lums}
            sol = solver.solve(scene.emission(levels))
            self.basis[k] = sol.B
            self.incident[k] = sol.H
        self._gathers = {}
        self._scene = scene

    def check(self, scene):
        if scene.geometry_hash() != self.scene_hash:
            raise CacheStaleError("solution cache does not match the scene (geometry hash changed)")

    @staticmethod
    def _pose_key(o):
        return (o.id, tuple(np.round(o.head, 12)), round(o.heading, 12), round(o.cone_half_angle, 12),
                round(o.pitch, 12), o.bins, o.lsc.name, tuple(o.lsc.values))

    def gathers(self, occupants):
        missing = [o for o in occupants if self._pose_key(o) not in self._gathers]
        if missing:
            W = occupant_gathers(self._scene, missing, self.rays, self.seed, self.index, self.axis_mode)
            for o, w in zip(missing, W):
                self._gathers[self._pose_key(o)] = w
        if not occupants:
            return np.zeros((0, self.basis.shape[1]))
        return np.array([self._gathers[self._pose_key(o)] for o in occupants])

    def lux_matrix(self, occupants):
        """M[o, l]: lux occupant ``o`` perceives from luminaire ``l`` at full output."""
        return self.gathers(occupants) @ self.basis.T

    def field(self, levels):
        return flux_fraction(levels) @ self.basis

    def visibility(self, occupants, samples=16):
        """V[o, l] visibility rank (0 hidden, 1 partial, 2 visible)."""
        V = np.zeros((len(occupants), len(self.lum_ids)), dtype=np.int64)
        for i, o in enumerate(occupants):
            for k, lum in enumerate(self._scene.luminaires):
                V[i, k] = _VIS_RANK[luminaire_in_vfoa(o, lum, self.index, samples, self.axis_mode)]
        return V


@dataclass(frozen=True, eq=False)
class Evaluation:
    levels: DimmingVector
    delta_watt: float
    lux: np.ndarray
    delta_lux: np.ndarray
    B: np.ndarray = field(repr=False, default=None)


def _occupants(scene, occupants):
    return list(scene.occupants if occupants is None else occupants)


def evaluate_config(scene, cache, d, occupants=None):
    """Δwatt against full-lit, perceived lux and Δlux per occupant for dimming vector ``d``."""
    cache.check(scene)
    d = d if isinstance(d, DimmingVector) else DimmingVector(tuple(d))
    if len(d) != len(cache.lum_ids):
        raise ValueError("dimming vector length must equal the luminaire count")
    occ = _occupants(scene, occupants)
    M = cache.lux_matrix(occ)
    f = flux_fraction(d.array)
    lux = M @ f
    base = M.sum(axis=1)
    return Evaluation(d, float(cache.power.delta_watt(d.array)), lux, base - lux, cache.field(d.array))


def _check_space(levels, L):
    levels = sorted({int(x) for x in levels})
    if not levels or levels[0] < 0 or levels[-1] > MAX_LEVEL:
        raise ValueError("allowed levels must lie in [0, 254]")
    if len(levels) ** L > MAX_CANDIDATES:
        raise SearchSpaceError(f"{len(levels)}^{L} candidates exceed the bound of {MAX_CANDIDATES}")
    return np.array(levels, dtype=np.int64)


def _best(configs, dw, tol):
    """Index of max Δwatt, ties -> fewest active -> lexicographically smallest."""
    top = dw.max()
    cand = np.flatnonzero(dw >= top - tol)
    active = (configs[cand] > 0).sum(axis=1)
    cand = cand[active == active.min()]
    order = np.lexsort(configs[cand].T[::-1])
    return cand[order[0]]


def optimize_exhaustive(scene, cache, occupants=None, constraint=ComfortConstraint(), levels=(0, MAX_LEVEL)):
    """Feasible dimming vector with maximum Δwatt over the full level grid."""
    cache.check(scene)
    L = len(cache.lum_ids)
    allowed = _check_space(levels, L)
    occ = _occupants(scene, occupants)
    M = cache.lux_matrix(occ)
    base = M.sum(axis=1)
    grid = np.indices((len(allowed),) * L).reshape(L, -1).T if L else np.zeros((1, 0), dtype=np.int64)
    configs = allowed[grid]
    lux = flux_fraction(configs) @ M.T
    ok = constraint.feasible(lux, base) if len(occ) else np.ones(len(configs), dtype=bool)
    if not ok.any():
        return DimmingVector.full(L, infeasible=True)
    configs = configs[ok]
    dw = cache.power.delta_watt(configs)
    tol = FEAS_RTOL * max(1.0, cache.power.full_lit)
    return DimmingVector(tuple(configs[_best(configs, dw, tol)]))


def optimize_greedy(scene, cache, occupants=None, constraint=ComfortConstraint(), levels=(0, MAX_LEVEL),
                    visibility=None):
    """Visibility-ordered descent from full-lit; every accepted step keeps all constraints.

    At each step the candidate moves are single-luminaire level reductions to
    any lower allowed level.  The move taken is the feasible one on the least
    visible luminaire (hidden < partial < visible to any occupant), then the
    largest saving, then the lowest luminaire index.
    """
    cache.check(scene)
    L = len(cache.lum_ids)
    allowed = sorted({int(x) for x in levels} | {MAX_LEVEL})
    occ = _occupants(scene, occupants)
    M = cache.lux_matrix(occ)
    base = M.sum(axis=1)
    cur = np.full(L, MAX_LEVEL, dtype=np.int64)
    if occ and not constraint.feasible(M @ flux_fraction(cur), base):
        return DimmingVector.full(L, infeasible=True)
    if visibility is None:
        visibility = cache.visibility(occ) if occ else np.zeros((0, L), dtype=np.int64)
    vis = visibility.max(axis=0) if len(occ) else np.zeros(L, dtype=np.int64)
    pw = cache.power
    while True:
        best = None
        for k in range(L):
            for lv in allowed:
                if lv >= cur[k]:
                    break
                trial = cur.copy()
                trial[k] = lv
                if occ and not constraint.feasible(M @ flux_fraction(trial), base):
                    continue
                saving = float(pw.total(cur) - pw.total(trial))
                key = (vis[k], -saving, k, lv)
                if best is None or key < best[0]:
                    best = (key, k, lv)
        if best is None:
            return DimmingVector(tuple(cur))
        cur[best[1]] = best[2]


# --- energy accounting -------------------------------------------------------------

ENERGY_FORMULA = ("kWh saved = (dW - P_overhead) * hours / 1000;  "
                  "percent = (dW - P_overhead) / (P_full + P_overhead) * 100")


@dataclass(frozen=True)
class EnergyReport:
    levels: tuple
    delta_watt: float
    full_watt: float
    overhead_w: float
    hours: float
    kwh: float
    percent: float
    delta_lux: tuple = ()

    def text(self):
        lines = [
            f"configuration (arc levels): {' '.join(str(x) for x in self.levels)}",
            f"full-lit power: {self.full_watt:.4f} W",
            f"dW vs full-lit: {self.delta_watt:.4f} W",
            f"processing overhead: {self.overhead_w:.4f} W",
            f"duration: {self.hours:g} h",
            f"energy saved: {self.kwh:.4f} kWh",
            f"saving: {self.percent:.2f} %",
            f"formula: {ENERGY_FORMULA}",
            f"check: ({self.delta_watt:.4f} - {self.overhead_w:.4f}) W x {self.hours:g} h / 1000 "
            f"= {self.kwh:.4f} kWh",
            "note: a 99 kWh figure for an 8 h day is not reachable at these wattages; "
            "only the arithmetic above is reported",
        ]
        for k, dl in enumerate(self.delta_lux):
            lines.append(f"occupant {k} dlux: {dl:.4f}")
        return "\n".join(lines) + "\n"

    def csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["config", "delta_watt", "delta_lux", "kwh", "percent"])
        w.writerow([" ".join(str(x) for x in self.levels), repr(self.delta_watt),
                    " ".join(repr(float(x)) for x in self.delta_lux), repr(self.kwh), repr(self.percent)])
        return buf.getvalue()


def energy_report(d, power, duration, overhead=0.0, delta_lux=()):
    if not duration > 0:
        raise ValueError("duration must be positive")
    if overhead < 0:
        raise ValueError("overhead must be >= 0")
    d = d if isinstance(d, DimmingVector) else DimmingVector(tuple(d))
    dw = float(power.delta_watt(d.array))
    full = power.full_lit
    net = dw - overhead
    kwh = net * duration / 1000.0
    denom = full + overhead
    percent = 100.0 * net / denom if denom > 0 else 0.0
    return EnergyReport(d.levels, dw, full, float(overhead), float(duration), kwh, percent,
                        tuple(float(x) for x in delta_lux))


def overhead_for_percent(power, d, target_percent):
    """Processing overhead (W) at which the report's percent equals ``target_percent``."""
    dw = float(power.delta_watt(DimmingVector(tuple(d)).array))
    p = target_percent / 100.0
    return (dw - p * power.full_lit) / (1.0 + p)


def timeline_energy(steps, power, overhead=0.0):
    """Energy over a piecewise-constant timeline of (duration_h, DimmingVector)."""
    kwh, full = 0.0, 0.0
    for hours, d in steps:
        dv = d if isinstance(d, DimmingVector) else DimmingVector(tuple(d))
        kwh += (float(power.delta_watt(dv.array)) - overhead) * hours / 1000.0
        full += (power.full_lit + overhead) * hours / 1000.0
    return kwh, (100.0 * kwh / full if full > 0 else 0.0)
