"""Scene domain types, the JSON scene file format, and heading quantization."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Optional

import numpy as np

from .photometry import LDC, LSC, DistributionCurve, make_standard, resolve_curve

COPLANAR_TOL = 1e-6
MAX_REFLECTANCE = 1.0 - 1e-6
DALI_MAX_LEVEL = 254


class SceneError(ValueError):
    """Raised when a scene violates one of its invariants."""


def _vec(x, n=3):
    a = np.array(x, dtype=float).reshape(n)
    a.setflags(write=False)
    return a


def _unit(x, what):
    a = np.array(x, dtype=float).reshape(3)
    norm = np.linalg.norm(a)
    if not np.isfinite(norm) or norm == 0:
        raise SceneError(f"{what} must be a non-zero vector")
    a = a / norm
    a.setflags(write=False)
    return a


def polygon_normal_area(vertices):
    """Newell normal (unit) and area of a planar polygon given in winding order."""
    v = np.asarray(vertices, dtype=float)
    w = np.roll(v, -1, axis=0)
    nv = np.array([
        np.sum((v[:, 1] - w[:, 1]) * (v[:, 2] + w[:, 2])),
        np.sum((v[:, 2] - w[:, 2]) * (v[:, 0] + w[:, 0])),
        np.sum((v[:, 0] - w[:, 0]) * (v[:, 1] + w[:, 1])),
    ])
    mag = np.linalg.norm(nv)
    if mag == 0:
        return np.zeros(3), 0.0
    return nv / mag, 0.5 * mag


@dataclass(frozen=True, eq=False)
class Patch:
    id: int
    vertices: np.ndarray
    reflectance: float
    emitter_id: Optional[int] = None

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 3 or v.shape[0] not in (3, 4):
            raise SceneError(f"patch {self.id}: needs 3 or 4 vertices in 3-D")
        if not np.all(np.isfinite(v)):
            raise SceneError(f"patch {self.id}: non-finite vertex")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        rho = float(self.reflectance)
        if not (0.0 <= rho < 1.0):
            raise SceneError(f"patch {self.id}: reflectance out of range ({rho})")
        object.__setattr__(self, "reflectance", rho)
        n, area = polygon_normal_area(v)
        if not area > 0:
            raise SceneError(f"patch {self.id}: zero area")
        c = v.mean(axis=0)
        off = np.abs((v - c) @ n)
        if off.max() > COPLANAR_TOL:
            raise SceneError(f"patch {self.id}: non-coplanar vertices ({off.max():.3g} m)")
        if len(v) == 4:
            e = np.roll(v, -1, axis=0) - v
            turns = np.cross(e, np.roll(e, -1, axis=0)) @ n
            if np.any(turns <= 0):
                raise SceneError(f"patch {self.id}: non-convex quad")
        n.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "area", float(area))
        object.__setattr__(self, "centroid", c)


@dataclass(frozen=True, eq=False)
class Luminaire:
    id: int
    position: np.ndarray
    aim: np.ndarray
    ldc: DistributionCurve
    flux_lm: float
    power_w: float
    dali: int
    level: int = DALI_MAX_LEVEL
    standby_w: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "position", _vec(self.position))
        object.__setattr__(self, "aim", _unit(self.aim, f"luminaire {self.id} aim"))
        if self.ldc.kind != LDC:
            raise SceneError(f"luminaire {self.id}: ldc must be an LDC curve")
        if not self.flux_lm >= 0:
            raise SceneError(f"luminaire {self.id}: negative flux")
        if not self.power_w >= 0 or not self.standby_w >= 0:
            raise SceneError(f"luminaire {self.id}: negative power")
        if not 0 <= self.dali <= 63:
            raise SceneError(f"luminaire {self.id}: DALI short address out of range")
        if not 0 <= self.level <= DALI_MAX_LEVEL:
            raise SceneError(f"luminaire {self.id}: level out of range")


@dataclass(frozen=True, eq=False)
class LuxmeterSpec:
    id: int
    position: np.ndarray
    facing: np.ndarray
    lsc: DistributionCurve
    patch: Optional[int] = None  # transport patch standing in for the meter

    def __post_init__(self):
        object.__setattr__(self, "position", _vec(self.position))
        object.__setattr__(self, "facing", _unit(self.facing, f"sensor {self.id} facing"))
        if self.lsc.kind != LSC:
            raise SceneError(f"sensor {self.id}: lsc must be an LSC curve")


# --- heading quantization -------------------------------------------------

COMPASS_4 = ("N", "E", "S", "W")
COMPASS_8 = ("N", "NE", "E", "SE", "S", "SW", "W", "NW")


def compass_from_math(heading):
    """Math heading (CCW from +X, radians) to compass bearing (CW from +Y)."""
    return (math.pi / 2 - heading) % (2 * math.pi)


def math_from_compass(bearing):
    return (math.pi / 2 - bearing) % (2 * math.pi)


def quantize_heading(bearing, bins=4):
    """Compass bin label for a bearing in radians.

    Sectors are centred on the bin axes and half-open, so a bearing exactly on
    a boundary goes to the clockwise-next sector (45 degrees is E, not N).
    """
    if bins not in (4, 8):
        raise ValueError("bins must be 4 or 8")
    labels = COMPASS_4 if bins == 4 else COMPASS_8
    width = 2 * math.pi / bins
    x = (bearing + width / 2) % (2 * math.pi)
    k = int(math.floor(x / width + 1e-12)) % bins
    return labels[k]


def bin_bearing(label):
    """Compass bearing of a bin centre."""
    return COMPASS_8.index(label) * math.pi / 4


@dataclass(frozen=True, eq=False)
class Occupant:
    id: int
    head: np.ndarray
    heading: float  # radians, CCW from +X
    cone_half_angle: float = math.radians(30.0)
    lsc: DistributionCurve = field(default_factory=lambda: make_standard("isotropic", 5.0, kind=LSC))
    pitch: float = 0.0  # radians, positive looks up
    bins: int = 4

    def __post_init__(self):
        object.__setattr__(self, "head", _vec(self.head))
        object.__setattr__(self, "heading", float(self.heading) % (2 * math.pi))
        if not 0 < self.cone_half_angle <= math.pi / 2 + 1e-12:
            raise SceneError(f"occupant {self.id}: cone half-angle out of (0, 90] degrees")
        if self.lsc.kind != LSC:
            raise SceneError(f"occupant {self.id}: lsc must be an LSC curve")
        if self.bins not in (4, 8):
            raise SceneError(f"occupant {self.id}: bins must be 4 or 8")

    @property
    def vfoa_bin(self):
        return quantize_heading(compass_from_math(self.heading), self.bins)

    def axis(self, mode="bin"):
        """Unit gaze direction; ``mode`` is ``bin`` (quantized) or ``raw``."""
        if mode == "bin":
            yaw = math_from_compass(bin_bearing(self.vfoa_bin))
        elif mode == "raw":
            yaw = self.heading
        else:
            raise ValueError(f"unknown axis mode {mode!r}")
        cp = math.cos(self.pitch)
        return np.array([cp * math.cos(yaw), cp * math.sin(yaw), math.sin(self.pitch)])


# --- scene ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Scene:
    patches: tuple
    luminaires: tuple = ()
    sensors: tuple = ()
    occupants: tuple = ()
    meta: dict = field(default_factory=lambda: {"units": "m"})

    def __post_init__(self):
        for name in ("patches", "luminaires", "sensors", "occupants"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not self.patches:
            raise SceneError("scene has no patches")
        for kind, items in (("patch", self.patches), ("luminaire", self.luminaires),
                            ("sensor", self.sensors), ("occupant", self.occupants)):
            seen = set()
            for it in items:
                if it.id in seen:
                    raise SceneError(f"duplicate {kind} id {it.id}")
                seen.add(it.id)
        lum_ids = {l.id for l in self.luminaires}
        for p in self.patches:
            if p.emitter_id is not None and p.emitter_id not in lum_ids:
                raise SceneError(f"patch {p.id}: emitter {p.emitter_id} does not resolve")
        addrs = [l.dali for l in self.luminaires]
        if len(set(addrs)) != len(addrs):
            raise SceneError("duplicate DALI short address")
        pids = {p.id for p in self.patches}
        for s in self.sensors:
            if s.patch is not None and s.patch not in pids:
                raise SceneError(f"sensor {s.id}: patch {s.patch} does not resolve")

    @cached_property
    def patch_index(self):
        return {p.id: k for k, p in enumerate(self.patches)}

    @property
    def n(self):
        return len(self.patches)

    @cached_property
    def areas(self):
        return np.array([p.area for p in self.patches])

    @cached_property
    def reflectance(self):
        return np.array([p.reflectance for p in self.patches])

    @cached_property
    def bounds(self):
        pts = np.vstack([p.vertices for p in self.patches])
        return pts.min(axis=0), pts.max(axis=0)

    def luminaire_patches(self, lum_id):
        return [k for k, p in enumerate(self.patches) if p.emitter_id == lum_id]

    @property
    def installed_power(self):
        return float(sum(l.power_w for l in self.luminaires))

    def emission(self, levels=None, flux_fraction=None):
        """Per-patch emitted exitance (lm/m^2) for the given arc levels.

        ``levels`` maps luminaire id to arc level (defaults to each luminaire's
        stored level).  ``flux_fraction`` maps an arc level to a flux fraction
        and defaults to the DALI logarithmic curve.
        """
        if flux_fraction is None:
            from .dali import level_to_flux as flux_fraction
        E = np.zeros(self.n)
        for lum in self.luminaires:
            level = lum.level if levels is None else levels.get(lum.id, lum.level)
            idx = self.luminaire_patches(lum.id)
            if not idx:
                continue
            area = self.areas[idx].sum()
            E[idx] = lum.flux_lm * flux_fraction(level) / area
        return E

    def with_occupants(self, occupants):
        return replace(self, occupants=tuple(occupants))

    def with_levels(self, levels):
        lums = [replace(l, level=int(levels.get(l.id, l.level))) for l in self.luminaires]
        return replace(self, luminaires=tuple(lums))

    def geometry_hash(self):
        """Digest of everything the light transport depends on (not occupants or levels)."""
        h = hashlib.sha256()
        for p in self.patches:
            h.update(np.int64(p.id).tobytes())
            h.update(p.vertices.tobytes())
            h.update(np.float64(p.reflectance).tobytes())
            h.update(np.int64(-1 if p.emitter_id is None else p.emitter_id).tobytes())
        for l in self.luminaires:
            for a in (l.position, l.aim, l.ldc.angles, l.ldc.values):
                h.update(np.ascontiguousarray(a).tobytes())
            h.update(np.float64([l.flux_lm, l.id]).tobytes())
        for s in self.sensors:
            h.update(np.int64([s.id, -1 if s.patch is None else s.patch]).tobytes())
            h.update(s.lsc.angles.tobytes())
            h.update(s.lsc.values.tobytes())
        return h.hexdigest()


# --- file format ------------------------------------------------------------

def _need(d, key, where):
    if key not in d:
        raise SceneError(f"{where}: missing key {key!r}")
    return d[key]


def scene_from_dict(data, base_dir=None):
    if not isinstance(data, dict):
        raise SceneError("scene file must hold a JSON object")
    meta = dict(data.get("meta", {"units": "m"}))
    if meta.get("units", "m") != "m":
        raise SceneError("only metre units are supported")
    try:
        patches = [Patch(int(_need(p, "id", "patch")), _need(p, "vertices", "patch"),
                         float(_need(p, "reflectance", "patch")), p.get("emitter"))
                   for p in data.get("patches", [])]
        lums = [Luminaire(int(_need(l, "id", "luminaire")), _need(l, "position", "luminaire"),
                          l.get("aim", [0, 0, -1]),
                          resolve_curve(l.get("ldc", "lambertian"), LDC, base_dir),
                          float(_need(l, "flux_lm", "luminaire")),
                          float(_need(l, "power_w", "luminaire")),
                          int(_need(l, "dali", "luminaire")),
                          int(l.get("level", DALI_MAX_LEVEL)), float(l.get("standby_w", 0.0)))
                for l in data.get("luminaires", [])]
        sensors = [LuxmeterSpec(int(_need(s, "id", "sensor")), _need(s, "position", "sensor"),
                                s.get("facing", [0, 0, 1]),
                                resolve_curve(s.get("lsc", "isotropic"), LSC, base_dir),
                                s.get("patch"))
                   for s in data.get("sensors", [])]
        occs = [occupant_from_dict(o, base_dir) for o in data.get("occupants", [])]
    except (TypeError, ValueError) as exc:
        if isinstance(exc, SceneError):
            raise
        raise SceneError(str(exc)) from exc
    return Scene(patches, lums, sensors, occs, meta)


def occupant_from_dict(o, base_dir=None):
    return Occupant(int(_need(o, "id", "occupant")), _need(o, "head", "occupant"),
                    math.radians(float(_need(o, "heading_deg", "occupant"))),
                    math.radians(float(o.get("cone_deg", 30.0))),
                    resolve_curve(o.get("lsc", "isotropic"), LSC, base_dir),
                    math.radians(float(o.get("pitch_deg", 0.0))), int(o.get("bins", 4)))


def occupant_to_dict(o):
    d = {"id": o.id, "head": o.head.tolist(), "heading_deg": math.degrees(o.heading),
         "cone_deg": math.degrees(o.cone_half_angle)}
    if o.lsc.name != "isotropic":
        d["lsc"] = o.lsc.name
    if o.pitch:
        d["pitch_deg"] = math.degrees(o.pitch)
    if o.bins != 4:
        d["bins"] = o.bins
    return d


def scene_to_dict(scene):
    patches = []
    for p in scene.patches:
        d = {"id": p.id, "vertices": p.vertices.tolist(), "reflectance": p.reflectance}
        if p.emitter_id is not None:
            d["emitter"] = p.emitter_id
        patches.append(d)
    lums = [{"id": l.id, "position": l.position.tolist(), "aim": l.aim.tolist(),
             "ldc": l.ldc.name, "flux_lm": l.flux_lm, "power_w": l.power_w, "dali": l.dali,
             "level": l.level, "standby_w": l.standby_w} for l in scene.luminaires]
    sensors = []
    for s in scene.sensors:
        d = {"id": s.id, "position": s.position.tolist(), "facing": s.facing.tolist(),
             "lsc": s.lsc.name}
        if s.patch is not None:
            d["patch"] = s.patch
        sensors.append(d)
    return {"meta": dict(scene.meta), "patches": patches, "luminaires": lums,
            "sensors": sensors, "occupants": [occupant_to_dict(o) for o in scene.occupants]}


def load_scene(path):
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SceneError(f"{path}: parse error: {exc}") from None
    return scene_from_dict(data, base_dir=path.parent)


def save_scene(scene, path):
    Path(path).write_text(json.dumps(scene_to_dict(scene), indent=1) + "\n")
