"""Bundled fixtures: the room4 office, a closed unit cube, and the room4 dynamic scenario.

The JSON files in ``ils/data`` are generated by :func:`write_fixtures`; the
builders here are the source of truth.
"""

from __future__ import annotations

import json
import math
from importlib import resources
from pathlib import Path

import numpy as np

from .photometry import LDC, make_standard
from .scene import Luminaire, LuxmeterSpec, Occupant, Patch, Scene, occupant_to_dict, save_scene

ROOM4_POWER_W = 96.8  # 580.8 / 6 = 387.2 / 4 = 193.6 / 2
ROOM4_FLUX_LM = 8000.0
ROOM4_SIZE = (8.0, 7.0, 2.8)
ROOM4_CELL = 0.3
LUMINAIRE_Z = 2.4
EYE_Z = 1.7


def data_path(name):
    return Path(str(resources.files("ils") / "data" / name))


class _Mesher:
    def __init__(self):
        self.patches = []

    def quad(self, p0, u, v, rho, emitter=None):
        p0, u, v = (np.asarray(a, dtype=float) for a in (p0, u, v))
        self.patches.append(Patch(len(self.patches), [p0, p0 + u, p0 + u + v, p0 + v], rho, emitter))
        return self.patches[-1].id

    def grid(self, p0, u, v, cell, rho, emitter=None):
        """Quads tiling the parallelogram p0 + s u + t v; normal is u x v."""
        p0, u, v = (np.asarray(a, dtype=float) for a in (p0, u, v))
        nu = max(1, int(round(np.linalg.norm(u) / cell)))
        nv = max(1, int(round(np.linalg.norm(v) / cell)))
        du, dv = u / nu, v / nv
        return [self.quad(p0 + i * du + j * dv, du, dv, rho, emitter) for j in range(nv) for i in range(nu)]

    def box(self, lo, hi, cell, rho, top_only=False):
        """Outward-facing faces of an axis-aligned box (no bottom)."""
        lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
        dx, dy, dz = hi - lo
        X, Y, Z = np.eye(3)
        self.grid([lo[0], lo[1], hi[2]], dx * X, dy * Y, cell, rho)
        if top_only:
            return
        self.grid(lo, dx * X, dz * Z, cell, rho)                      # -y
        self.grid([lo[0], hi[1], lo[2]], dz * Z, dx * X, cell, rho)   # +y
        self.grid(lo, dz * Z, dy * Y, cell, rho)                      # -x
        self.grid([hi[0], lo[1], lo[2]], dy * Y, dz * Z, cell, rho)   # +x


def room4_luminaire_xy():
    """Row-major 2 x 4 layout: ids 1-4 along y = 1.5, ids 5-8 along y = 5.5."""
    return {k + 1 + 4 * r: (1.0 + 2.0 * k, 1.5 + 4.0 * r) for r in range(2) for k in range(4)}


OCCUPANT_XY = {1: (3.7, 1.5), 2: (5.7, 1.5)}
OCCUPANT_CONE_DEG = 45.0


def room4_occupants(heading_deg=(0.0, 0.0)):
    return tuple(Occupant(k, [*OCCUPANT_XY[k], EYE_Z], math.radians(h), math.radians(OCCUPANT_CONE_DEG))
                 for k, h in zip((1, 2), heading_deg))


def build_room4(cell=ROOM4_CELL, flux=ROOM4_FLUX_LM):
    W, D, H = ROOM4_SIZE
    X, Y, Z = np.eye(3)
    m = _Mesher()
    m.grid([0, 0, 0], W * X, D * Y, cell, 0.25)                 # floor, up
    m.grid([0, 0, H], D * Y, W * X, cell, 0.75)                 # ceiling, down
    m.grid([0, 0, 0], H * Z, W * X, cell, 0.55)                 # y = 0 wall, +y
    m.grid([0, D, 0], W * X, H * Z, cell, 0.55)                 # y = D wall, -y
    m.grid([0, 0, 0], D * Y, H * Z, cell, 0.55)                 # x = 0 wall, +x
    m.grid([W, 0, 0], H * Z, D * Y, cell, 0.55)                 # x = W wall, -x
    desks = [(1.2, 0.3), (5.2, 0.3), (1.2, 5.9), (5.2, 5.9)]
    for x, y in desks:
        m.box([x, y, 0.0], [x + 1.6, y + 0.8, 0.75], 0.4, 0.45)
    lum_ldc = make_standard("lambertian", 5.0)
    lums = []
    for lid, (x, y) in sorted(room4_luminaire_xy().items()):
        # 1.2 m x 0.6 m pendant panel along x, two patches, emitting downwards
        m.grid([x - 0.6, y - 0.3, LUMINAIRE_Z], 0.6 * Y, 1.2 * X, 0.6, 0.0, emitter=lid)
        lums.append(Luminaire(lid, [x, y, LUMINAIRE_Z], [0, 0, -1], lum_ldc, flux, ROOM4_POWER_W, lid - 1))
    cos_lsc = make_standard("cosine", 5.0)
    sensors = []
    for k, (x, y) in enumerate(desks):
        for dx in (0.4, 1.2):
            pid = m.quad([x + dx - 0.05, y + 0.35, 0.76], 0.1 * X, 0.1 * Y, 0.45)
            sensors.append(LuxmeterSpec(len(sensors) + 1, [x + dx, y + 0.4, 0.76], [0, 0, 1], cos_lsc, pid))
    return Scene(tuple(m.patches), tuple(lums), tuple(sensors), room4_occupants(),
                 {"units": "m", "name": "room4"})


def build_cube(rho=0.5, flux=6.0):
    """Interior of the unit cube, six inward patches, all emitting uniformly."""
    m = _Mesher()
    X, Y, Z = np.eye(3)
    m.quad([0, 0, 0], X, Y, rho, 0)
    m.quad([0, 0, 1], Y, X, rho, 0)
    m.quad([0, 0, 0], Z, X, rho, 0)
    m.quad([0, 1, 0], X, Z, rho, 0)
    m.quad([0, 0, 0], Y, Z, rho, 0)
    m.quad([1, 0, 0], Z, Y, rho, 0)
    iso = make_standard("isotropic", 5.0, kind=LDC)
    lum = Luminaire(0, [0.5, 0.5, 0.5], [0, 0, -1], iso, flux, 10.0, 0)
    return Scene(tuple(m.patches), (lum,), (), (), {"units": "m", "name": "cube"})


def room4_scenario():
    """Two standing occupants; at t = 600 s and 1200 s both face east towards luminaires 3 and 4."""
    def pose(h1, h2):
        return [occupant_to_dict(o) for o in room4_occupants((h1, h2))]
    return {
        "scene": "room4.scene",
        "policy": "ils-exhaustive",
        "constraint": {"max_delta_lux": 200.0},
        "levels": [0, 254],
        "timeline": [
            {"t": 0.0, "occupants": pose(180.0, 180.0)},
            {"t": 600.0, "occupants": pose(0.0, 0.0)},
            {"t": 1200.0, "occupants": pose(0.0, 0.0)},
            {"t": 1800.0, "occupants": pose(180.0, 0.0)},
            {"t": 2400.0, "occupants": pose(270.0, 90.0)},
            {"t": 3000.0, "occupants": []},
        ],
        "end": 3600.0,
    }


def write_fixtures(directory=None):
    d = Path(directory) if directory else data_path("")
    d.mkdir(parents=True, exist_ok=True)
    save_scene(build_room4(), d / "room4.scene")
    save_scene(build_cube(), d / "cube.scene")
    (d / "room4_dynamic.json").write_text(json.dumps(room4_scenario(), indent=2) + "\n")
    return d


if __name__ == "__main__":
    print(write_fixtures())
