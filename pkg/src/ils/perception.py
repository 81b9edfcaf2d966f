"""Light arriving at point receivers: virtual luxmeters, occupants' VFOA cones, lux maps.

A receiver integrates L(w) * LSC(theta) * cos(theta) over its acceptance
region, where L is the radiance B/pi of the first patch front face hit along
w.  Directions are drawn cosine-weighted over the whole front hemisphere
and rays outside the acceptance cone are masked, so nested cones share
their samples and a reading is a fixed linear functional of B.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
import numpy as np
from numba import njit

from .geometry import (SHADOW_EPS, VisibilityIndex, _filtered_arrays, _segments_blocked,
                       closest_hit, hash3, rng_next, segments_visible)
from .photometry import LSC, DistributionCurve, make_standard

log = logging.getLogger(__name__)

DEFAULT_RAYS = 4096

VISIBLE = "visible"
PARTIAL = "partial"
HIDDEN = "hidden"


@dataclass(frozen=True, eq=False)
class Receiver:
    position: np.ndarray
    axis: np.ndarray
    lsc: DistributionCurve
    half_angle: float = math.pi / 2  # pi/2 is the full hemisphere of a luxmeter
    id: int = 0

    def __post_init__(self):
        a = np.asarray(self.axis, dtype=float)
        if abs(np.linalg.norm(a) - 1.0) > 1e-9:
            raise ValueError("receiver axis must be a unit vector")
        if not 0 < self.half_angle <= math.pi / 2 + 1e-12:
            raise ValueError("cone half-angle must lie in (0, pi/2]")
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "axis", a)


def luxmeter(position, axis, lsc=None, id=0):
    """Hemispherical receiver; the default LSC is an ideal cosine-corrected meter."""
    a = np.asarray(axis, dtype=float)
    return Receiver(position, a / np.linalg.norm(a), lsc or make_standard("isotropic", 5.0, kind=LSC),
                    math.pi / 2, id)


def occupant_receiver(o, axis_mode="bin", acceptance="cone"):
    half = o.cone_half_angle if acceptance == "cone" else math.pi / 2
    return Receiver(o.head, o.axis(axis_mode), o.lsc, half, o.id)


# --- ray kernel -------------------------------------------------------------------

@njit(cache=True)
def _cast(origins, axes, keys, rays, normals, lo, hi, left, right, start, count,
          tri_v, tri_patch, hit, cost):
    """Cosine-weighted hemisphere rays per receiver; records front-face hits and cos(theta)."""
    m = int(np.sqrt(rays))
    strat = m * m == rays
    d = np.empty(3)
    o = np.empty(3)
    for r in range(origins.shape[0]):
        ax = axes[r]
        # orthonormal frame around the axis
        if abs(ax[0]) < 0.9:
            tx, ty, tz = 0.0, -ax[2], ax[1]
        else:
            tx, ty, tz = ax[2], 0.0, -ax[0]
        tn = np.sqrt(tx * tx + ty * ty + tz * tz)
        tx /= tn
        ty /= tn
        tz /= tn
        bx = ax[1] * tz - ax[2] * ty
        by = ax[2] * tx - ax[0] * tz
        bz = ax[0] * ty - ax[1] * tx
        for a in range(3):
            o[a] = origins[r, a] + SHADOW_EPS * ax[a]
        state = keys[r]
        for k in range(rays):
            state, u = rng_next(state)
            state, v = rng_next(state)
            if strat:
                u = ((k % m) + u) / m
                v = ((k // m) + v) / m
            s = np.sqrt(u)
            c = np.sqrt(max(0.0, 1.0 - u))
            phi = 2.0 * np.pi * v
            lx = s * np.cos(phi)
            ly = s * np.sin(phi)
            d[0] = lx * tx + ly * bx + c * ax[0]
            d[1] = lx * ty + ly * by + c * ax[1]
            d[2] = lx * tz + ly * bz + c * ax[2]
            p, t = closest_hit(o, d, np.inf, lo, hi, left, right, start, count, tri_v, tri_patch)
            if p >= 0:
                nrm = normals[p]
                if d[0] * nrm[0] + d[1] * nrm[1] + d[2] * nrm[2] >= 0.0:
                    p = -1
            hit[r, k] = p
            cost[r, k] = c


@dataclass(frozen=True, eq=False)
class RayBundle:
    """Per-ray first-hit patch (-1 for none/back face) and weight for a receiver."""
    hit: np.ndarray
    weight: np.ndarray  # sums against B to give the reading

    def gather(self, n):
        ok = self.hit >= 0
        return np.bincount(self.hit[ok], self.weight[ok], minlength=n)

    def read(self, B):
        """Reading and its Monte Carlo standard error."""
        per_ray = np.where(self.hit >= 0, B[np.maximum(self.hit, 0)], 0.0) * self.weight
        mean = float(per_ray.sum())
        vals = per_ray * len(per_ray)
        se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
        return mean, se


def cast_receivers(index, receivers, rays=DEFAULT_RAYS, seed=0):
    """Trace ``rays`` directions for each receiver; returns one RayBundle per receiver."""
    if rays < 1:
        raise ValueError("rays must be >= 1")
    R = len(receivers)
    origins = np.array([r.position for r in receivers], dtype=float).reshape(R, 3)
    axes = np.array([r.axis for r in receivers], dtype=float).reshape(R, 3)
    keys = np.array([hash3(np.uint64(seed), np.uint64(r.id), np.uint64(0x5EED)) for r in receivers],
                    dtype=np.uint64)
    hit = np.full((R, rays), -1, dtype=np.int64)
    cost = np.zeros((R, rays))
    if index.n_patches:
        _cast(origins, axes, keys, rays, index.table.normals, *index.arrays, hit, cost)
    out = []
    for k, r in enumerate(receivers):
        theta = np.arccos(np.clip(cost[k], -1.0, 1.0))
        inside = cost[k] >= math.cos(r.half_angle) - 1e-15
        w = np.where(inside, r.lsc(theta), 0.0) / rays
        out.append(RayBundle(hit[k], w))
    return out


def virtual_luxmeter(scene, sol, r, rays=DEFAULT_RAYS, seed=0, index=None, with_error=False):
    """Illuminance-like reading at receiver ``r`` from solved exitances ``sol.B``."""
    index = index or VisibilityIndex(scene.patches)
    bundle = cast_receivers(index, [r], rays, seed)[0]
    val, se = bundle.read(np.asarray(sol.B))
    return (val, se) if with_error else val


def occupant_perceived_lux(scene, sol, o, rays=DEFAULT_RAYS, seed=0, index=None,
                           axis_mode="bin", acceptance="cone", with_error=False):
    """Light reaching an occupant's VFOA, read by a virtual luxmeter between the eyes."""
    lo, hi = scene.bounds
    if np.any(o.head < lo - 1e-9) or np.any(o.head > hi + 1e-9):
        raise ValueError(f"occupant {o.id} is outside the scene bounds")
    return virtual_luxmeter(scene, sol, occupant_receiver(o, axis_mode, acceptance), rays, seed,
                            index, with_error)


def occupant_gathers(scene, occupants, rays=DEFAULT_RAYS, seed=0, index=None, axis_mode="bin"):
    """Row per occupant: vector w with perceived lux = w @ B."""
    index = index or VisibilityIndex(scene.patches)
    recv = [occupant_receiver(o, axis_mode) for o in occupants]
    if not recv:
        return np.zeros((0, scene.n))
    return np.array([b.gather(scene.n) for b in cast_receivers(index, recv, rays, seed)])


# --- luminaire visibility ------------------------------------------------------------

def _sample_grid(v, normal, k):
    m = max(1, int(round(math.sqrt(k))))
    g = (np.arange(m) + 0.5) / m
    uu, vv = np.meshgrid(g, g, indexing="ij")
    uu, vv = uu.ravel(), vv.ravel()
    if len(v) == 3:
        su = np.sqrt(uu)
        pts = ((1 - su)[:, None] * v[0] + (su * (1 - vv))[:, None] * v[1] + (su * vv)[:, None] * v[2])
    else:
        pts = (((1 - uu) * (1 - vv))[:, None] * v[0] + (uu * (1 - vv))[:, None] * v[1]
               + (uu * vv)[:, None] * v[2] + ((1 - uu) * vv)[:, None] * v[3])
    return pts + SHADOW_EPS * normal


def luminaire_in_vfoa(o, lum, index, samples=16, axis_mode="bin"):
    """Classify a luminaire as visible, partial or hidden for occupant ``o``.

    ``samples`` points on each of the luminaire's patches count as seen when
    they lie inside the VFOA cone and the sight line from the head is clear.
    A luminaire without patches is tested at its position alone.
    """
    t = index.table
    own = np.flatnonzero(t.emitters == lum.id)
    if len(own):
        pts = np.vstack([_sample_grid(t.verts[k, :t.nverts[k]], t.normals[k], samples) for k in own])
    else:
        pts = np.asarray(lum.position, dtype=float)[None, :]
    axis = o.axis(axis_mode)
    d = pts - o.head
    dist = np.linalg.norm(d, axis=1)
    cosang = (d @ axis) / np.maximum(dist, 1e-300)
    in_cone = cosang >= math.cos(o.cone_half_angle) - 1e-12
    clear = np.zeros(len(pts), dtype=bool)
    if in_cone.any():
        ex = own.astype(np.int64) if len(own) else np.array([-1], dtype=np.int64)
        clear[in_cone] = _clear_lines(o.head, pts[in_cone], ex, index)
    seen = in_cone & clear
    if seen.all():
        return VISIBLE
    if not seen.any():
        return HIDDEN
    return PARTIAL


def _clear_lines(head, pts, ex, index):
    if len(ex) <= 2:
        pairs = np.tile(np.concatenate([ex, [-1] * (2 - len(ex))]).astype(np.int64), (len(pts), 1))
        return segments_visible(np.tile(head, (len(pts), 1)), pts, index, pairs)
    sub = _filtered_arrays(index, ~np.isin(index.tri_patch, ex))
    out = np.zeros(len(pts), dtype=np.bool_)
    _segments_blocked(np.tile(head, (len(pts), 1)), np.ascontiguousarray(pts),
                      np.full((len(pts), 2), -1, dtype=np.int64), *sub, out)
    return ~out


# --- lux maps -------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Raster:
    x: np.ndarray  # cell centre coordinates
    y: np.ndarray
    lux: np.ndarray  # shape (len(y), len(x))
    plane: float
    empty: bool = False


def incident_map(scene, sol, grid=0.25, plane=0.75, rays=1024, seed=0, index=None):
    """Horizontal illuminance on a regular grid at height ``plane``."""
    if grid <= 0:
        raise ValueError("grid must be positive")
    lo, hi = scene.bounds
    if not lo[2] <= plane <= hi[2]:
        log.warning("plane z=%g lies outside the scene bounds [%g, %g]", plane, lo[2], hi[2])
        return Raster(np.zeros(0), np.zeros(0), np.zeros((0, 0)), plane, empty=True)
    nx = max(1, int(round((hi[0] - lo[0]) / grid)))
    ny = max(1, int(round((hi[1] - lo[1]) / grid)))
    xs = lo[0] + (np.arange(nx) + 0.5) * (hi[0] - lo[0]) / nx
    ys = lo[1] + (np.arange(ny) + 0.5) * (hi[1] - lo[1]) / ny
    index = index or VisibilityIndex(scene.patches)
    up = np.array([0.0, 0.0, 1.0])
    lsc = make_standard("isotropic", 5.0, kind=LSC)
    recv = [Receiver(np.array([x, y, plane]), up, lsc, math.pi / 2, k)
            for k, (y, x) in enumerate((y, x) for y in ys for x in xs)]
    B = np.asarray(sol.B)
    vals = np.array([b.gather(scene.n) @ B for b in cast_receivers(index, recv, rays, seed)])
    return Raster(xs, ys, vals.reshape(ny, nx), plane)


def save_raster_csv(r, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "lux"])
        for iy, y in enumerate(r.y):
            for ix, x in enumerate(r.x):
                w.writerow([f"{x:.6f}", f"{y:.6f}", repr(float(r.lux[iy, ix]))])


def save_raster_pgm(r, path):
    """16-bit PGM, one grey level per lux, clamped at 65535; first row is the largest y."""
    from .depth import write_pgm16
    img = np.clip(np.rint(r.lux[::-1]), 0, 65535).astype(np.uint16) if r.lux.size else \
        np.zeros((0, 0), dtype=np.uint16)
    write_pgm16(path, img)


def read_receivers_csv(path):
    """Batch receivers: columns id, x, y, z, axis ("ax ay az"), type (luxmeter | cone:<deg>)."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            axis = np.array([float(v) for v in row["axis"].split()])
            axis = axis / np.linalg.norm(axis)
            kind = row.get("type", "luxmeter").strip()
            half = math.pi / 2
            if kind.startswith("cone:"):
                half = math.radians(float(kind.split(":", 1)[1]))
            elif kind != "luxmeter":
                raise ValueError(f"unknown receiver type {kind!r}")
            out.append(Receiver(np.array([float(row["x"]), float(row["y"]), float(row["z"])]),
                                axis, make_standard("isotropic", 5.0, kind=LSC), half, int(row["id"])))
    return out
