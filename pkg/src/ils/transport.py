"""Form factors between scene patches, optionally weighted by LDC/LSC curves.

Every pair of patches is integrated by paired, stratified Monte Carlo over
both areas: the same point pairs serve F[i, j] and F[j, i], so the plain
matrix satisfies reciprocity up to rounding and a single shadow ray per
sample pair serves both directions.  Per-pair random streams are keyed on
(seed, patch ids), which keeps the result independent of evaluation order.

Curve weighting follows the extended radiosity idea: the diffuse kernel is
multiplied by the emitter's LDC (angle from the luminaire aim axis) on rows
belonging to luminaire patches, and by the receiver's LSC (angle from the
patch normal) on columns belonging to sensor patches.  LDC weights are
divided by the curve's cosine-weighted hemisphere mean so that a luminaire
still emits its full flux; the isotropic curve then weights by exactly 1.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np
from numba import njit

from .geometry import SHADOW_EPS, VisibilityIndex, hash3, occluded, rng_next, sample_patch

MODES = ("plain", "ldc", "lsc", "ldc+lsc")
MODE_ALIASES = {"no_LDC": "lsc", "no_LSC": "ldc", "no_LDC_LSC": "plain", "full": "ldc+lsc"}
DEFAULT_SAMPLES = 256
_TAGS = {m: k for k, m in enumerate(MODES)}


def canonical_mode(mode):
    mode = MODE_ALIASES.get(mode, mode)
    if mode not in MODES:
        raise ValueError(f"unknown weighting mode {mode!r}")
    return mode


@dataclass(frozen=True, eq=False)
class FormFactorMatrix:
    F: np.ndarray
    sigma: np.ndarray  # standard error of each entry
    areas: np.ndarray
    mode: str = "plain"
    samples: int = DEFAULT_SAMPLES
    seed: int = 0

    @property
    def n(self):
        return self.F.shape[0]

    def row_sums(self):
        return self.F.sum(axis=1), np.sqrt((self.sigma ** 2).sum(axis=1))

    def gather(self):
        """Matrix G with G[i, j] = A_j F[j, i] / A_i, so incident flux density is G @ B.

        Equal to F itself for the plain matrix, by reciprocity.
        """
        return (self.F * self.areas[:, None]).T / self.areas[:, None]


# --- curve tables for the kernel ---------------------------------------------

class _CurveTable:
    def __init__(self):
        self.angles, self.values, self.offsets = [], [], [0]

    def add(self, curve):
        self.angles.append(np.radians(curve.angles))
        self.values.append(np.asarray(curve.values, dtype=float))
        self.offsets.append(self.offsets[-1] + len(curve.angles))
        return len(self.offsets) - 2

    def arrays(self):
        if not self.angles:
            return np.zeros(1), np.zeros(1), np.zeros(2, dtype=np.int64)
        return (np.concatenate(self.angles), np.concatenate(self.values),
                np.array(self.offsets, dtype=np.int64))


def ldc_normalization(curve, aim, normal, n_theta=361, n_phi=720):
    """(1/pi) * integral over the patch's front hemisphere of LDC(angle to aim) cos(angle to normal)."""
    aim = np.asarray(aim, float)
    normal = np.asarray(normal, float)
    if np.allclose(aim, normal, atol=1e-12):
        from .photometry import hemisphere_integral
        return hemisphere_integral(curve) / math.pi
    # midpoint quadrature in the normal's frame
    t = (np.arange(n_theta) + 0.5) * (math.pi / 2) / n_theta
    p = (np.arange(n_phi) + 0.5) * 2 * math.pi / n_phi
    tt, pp = np.meshgrid(t, p, indexing="ij")
    u, v = _frame(normal)
    d = (np.sin(tt)[..., None] * (np.cos(pp)[..., None] * u + np.sin(pp)[..., None] * v)
         + np.cos(tt)[..., None] * normal)
    ang = np.arccos(np.clip(d @ aim, -1.0, 1.0))
    f = curve(ang) * np.cos(tt) * np.sin(tt)
    return float(f.sum() * (math.pi / 2 / n_theta) * (2 * math.pi / n_phi)) / math.pi


def _frame(n):
    a = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(n, a)
    u /= np.linalg.norm(u)
    return u, np.cross(n, u)


def weighting_tables(scene, mode):
    """Per-patch curve indices, axes and scale factors for the given mode."""
    mode = canonical_mode(mode)
    n = scene.n
    table = _CurveTable()
    ldc_idx = np.full(n, -1, dtype=np.int64)
    ldc_axis = np.zeros((n, 3))
    ldc_scale = np.ones(n)
    lsc_idx = np.full(n, -1, dtype=np.int64)
    if "ldc" in mode:
        lums = {l.id: l for l in scene.luminaires}
        cache = {}
        for k, p in enumerate(scene.patches):
            if p.emitter_id is None:
                continue
            lum = lums[p.emitter_id]
            if lum.id not in cache:
                cache[lum.id] = table.add(lum.ldc)
            ldc_idx[k] = cache[lum.id]
            ldc_axis[k] = lum.aim
            norm = ldc_normalization(lum.ldc, lum.aim, p.normal)
            ldc_scale[k] = 1.0 / norm if norm > 0 else 0.0
    if "lsc" in mode:
        for s in scene.sensors:
            if s.patch is not None:
                lsc_idx[scene.patch_index[s.patch]] = table.add(s.lsc)
    angles, values, offsets = table.arrays()
    return ldc_idx, ldc_axis, ldc_scale, lsc_idx, angles, values, offsets


# --- kernels -------------------------------------------------------------------

@njit(cache=True)
def _curve_at(k, cosang, angles, values, offsets):
    a = angles[offsets[k]:offsets[k + 1]]
    v = values[offsets[k]:offsets[k + 1]]
    if cosang > 1.0:
        cosang = 1.0
    elif cosang < -1.0:
        cosang = -1.0
    return np.interp(np.arccos(cosang), a, v)


@njit(cache=True)
def _behind(verts, nv, n, c):
    """True if every vertex of the polygon lies on or behind the plane (n, c)."""
    for k in range(nv):
        s = 0.0
        for a in range(3):
            s += (verts[k, a] - c[a]) * n[a]
        if s > 1e-12:
            return False
    return True


NEAR_FACTOR = 2.0  # pairs closer than this many summed circumradii use the control variate


@njit(cache=True)
def _point_polygon(x, n, verts, nv, nq):
    """Unoccluded form factor from a differential area at ``x`` (normal ``n``) to a polygon.

    The polygon is clipped to the front half-space of ``x`` and summed with
    Lambert's contour formula.  Zero when ``x`` is behind the polygon's plane.
    """
    s = 0.0
    for a in range(3):
        s += (x[a] - verts[0, a]) * nq[a]
    if s <= 0.0:
        return 0.0
    P = np.empty((8, 3))
    m = 0
    for k in range(nv):
        k1 = (k + 1) % nv
        da = 0.0
        db = 0.0
        for a in range(3):
            da += (verts[k, a] - x[a]) * n[a]
            db += (verts[k1, a] - x[a]) * n[a]
        if da >= 0.0:
            for a in range(3):
                P[m, a] = verts[k, a]
            m += 1
        if (da >= 0.0) != (db >= 0.0):
            t = da / (da - db)
            for a in range(3):
                P[m, a] = verts[k, a] + t * (verts[k1, a] - verts[k, a])
            m += 1
    if m < 3:
        return 0.0
    total = 0.0
    for k in range(m):
        k1 = (k + 1) % m
        r0x, r0y, r0z = P[k, 0] - x[0], P[k, 1] - x[1], P[k, 2] - x[2]
        r1x, r1y, r1z = P[k1, 0] - x[0], P[k1, 1] - x[1], P[k1, 2] - x[2]
        cx = r0y * r1z - r0z * r1y
        cy = r0z * r1x - r0x * r1z
        cz = r0x * r1y - r0y * r1x
        cn = np.sqrt(cx * cx + cy * cy + cz * cz)
        if cn < 1e-300:
            continue
        gamma = np.arctan2(cn, r0x * r1x + r0y * r1y + r0z * r1z)
        total += gamma * (n[0] * cx + n[1] * cy + n[2] * cz) / cn
    return abs(total) / (2.0 * np.pi)


@njit(cache=True)
def _radius(verts, nv, c):
    r = 0.0
    for k in range(nv):
        d = 0.0
        for a in range(3):
            d += (verts[k, a] - c[a]) ** 2
        r = max(r, d)
    return np.sqrt(r)


@njit(cache=True)
def _clear_pair(i, j, verts, nverts, normals, lo, hi, left, right, start, count, tri_v, tri_patch):
    """Deterministic pre-test: every mutually facing pair of 5 probe points is unoccluded."""
    us = (0.5, 0.15, 0.85, 0.85, 0.15)
    vs = (0.5, 0.15, 0.15, 0.85, 0.85)
    p = np.empty((5, 3))
    q = np.empty((5, 3))
    for k in range(5):
        sample_patch(verts[i], nverts[i], us[k], vs[k], p[k])
        sample_patch(verts[j], nverts[j], us[k], vs[k], q[k])
    ni = normals[i]
    nj = normals[j]
    o = np.empty(3)
    d = np.empty(3)
    for a in range(5):
        for b in range(5):
            ci = 0.0
            cj = 0.0
            for c in range(3):
                d[c] = q[b, c] - p[a, c]
                ci += d[c] * ni[c]
                cj -= d[c] * nj[c]
            if ci <= 0.0 or cj <= 0.0:
                continue
            for c in range(3):
                o[c] = p[a, c] + SHADOW_EPS * ni[c]
                d[c] = (q[b, c] + SHADOW_EPS * nj[c]) - o[c]
            if occluded(o, d, 0.0, 1.0, i, j, lo, hi, left, right, start, count, tri_v, tri_patch):
                return False
    return True


@njit(cache=True)
def _pair(i, j, seed, samples, verts, nverts, normals, areas, ids,
          ldc_idx, ldc_axis, ldc_scale, lsc_idx, c_ang, c_val, c_off,
          lo, hi, left, right, start, count, tri_v, tri_patch, out):
    """Estimate F[i, j] and F[j, i]; writes (fij, fji, var_ij, var_ji) into out.

    Near, unweighted pairs that pass a fixed visibility pre-test use the
    point-to-polygon form factor as a control variate: each sample
    contributes J_x (F_pt(x -> A_j) + J_y k (V - 1)).  That is unbiased, and
    removes the 1/r^2 singularity of the kernel at shared edges.  The
    pre-test does not touch the random stream, so choosing the estimator
    introduces no bias; other pairs use the plain paired estimate.
    """
    for a in range(4):
        out[a] = 0.0
    ni = normals[i]
    nj = normals[j]
    ci = verts[i, 0]
    cj = verts[j, 0]
    if i == j or _behind(verts[j], nverts[j], ni, ci) or _behind(verts[i], nverts[i], nj, cj):
        return
    gi = np.zeros(3)
    gj = np.zeros(3)
    for k in range(nverts[i]):
        gi += verts[i, k]
    for k in range(nverts[j]):
        gj += verts[j, k]
    gi /= nverts[i]
    gj /= nverts[j]
    near = np.sqrt(np.sum((gi - gj) ** 2)) < NEAR_FACTOR * (_radius(verts[i], nverts[i], gi)
                                                           + _radius(verts[j], nverts[j], gj))
    unweighted = ldc_idx[i] < 0 and ldc_idx[j] < 0 and lsc_idx[i] < 0 and lsc_idx[j] < 0
    near = near and unweighted and _clear_pair(i, j, verts, nverts, normals, lo, hi, left, right,
                                               start, count, tri_v, tri_patch)
    alpha = areas[j] / (areas[i] + areas[j])
    a_id = ids[i]
    b_id = ids[j]
    if a_id > b_id:
        a_id, b_id = b_id, a_id
    state = hash3(seed, a_id, b_id)
    # both directions must see the same sample sequence: order the two patches by id
    first_is_i = ids[i] <= ids[j]
    m = int(np.sqrt(samples))
    strat = m * m == samples
    perm = np.arange(samples)
    for k in range(samples - 1, 0, -1):
        state, r = rng_next(state)
        s = int(r * (k + 1))
        perm[k], perm[s] = perm[s], perm[k]
    x = np.empty(3)
    y = np.empty(3)
    d = np.empty(3)
    o = np.empty(3)
    s1 = 0.0
    s2 = 0.0
    q1 = 0.0
    q2 = 0.0
    for k in range(samples):
        state, u1 = rng_next(state)
        state, v1 = rng_next(state)
        state, u2 = rng_next(state)
        state, v2 = rng_next(state)
        if strat:
            ka = k
            kb = perm[k]
            u1 = ((ka % m) + u1) / m
            v1 = ((ka // m) + v1) / m
            u2 = ((kb % m) + u2) / m
            v2 = ((kb // m) + v2) / m
        if first_is_i:
            ja = sample_patch(verts[i], nverts[i], u1, v1, x)
            jb = sample_patch(verts[j], nverts[j], u2, v2, y)
        else:
            jb = sample_patch(verts[j], nverts[j], u1, v1, y)
            ja = sample_patch(verts[i], nverts[i], u2, v2, x)
        gij = 0.0
        gji = 0.0
        k_ij = 0.0
        if near:
            gij = ja * _point_polygon(x, ni, verts[j], nverts[j], nj)
            gji = jb * _point_polygon(y, nj, verts[i], nverts[i], ni)
        r2 = 0.0
        for a in range(3):
            d[a] = y[a] - x[a]
            r2 += d[a] * d[a]
        cos_i = 0.0
        cos_j = 0.0
        if r2 > 0.0:
            r = np.sqrt(r2)
            cos_i = (d[0] * ni[0] + d[1] * ni[1] + d[2] * ni[2]) / r
            cos_j = -(d[0] * nj[0] + d[1] * nj[1] + d[2] * nj[2]) / r
        if cos_i > 0.0 and cos_j > 0.0:
            k_ij = cos_i * cos_j / (np.pi * r2) * ja * jb
            for a in range(3):
                o[a] = x[a] + SHADOW_EPS * ni[a]
                d[a] = (y[a] + SHADOW_EPS * nj[a]) - o[a]
            vis = 0.0 if occluded(o, d, 0.0, 1.0, i, j, lo, hi, left, right, start, count,
                                  tri_v, tri_patch) else 1.0
            w_ij = 1.0
            w_ji = 1.0
            # direction unit vector i -> j
            ux = (y[0] - x[0]) / r
            uy = (y[1] - x[1]) / r
            uz = (y[2] - x[2]) / r
            if ldc_idx[i] >= 0:
                ax = ldc_axis[i]
                w_ij *= ldc_scale[i] * _curve_at(ldc_idx[i], ux * ax[0] + uy * ax[1] + uz * ax[2],
                                                 c_ang, c_val, c_off)
            if lsc_idx[j] >= 0:
                w_ij *= _curve_at(lsc_idx[j], cos_j, c_ang, c_val, c_off)
            if ldc_idx[j] >= 0:
                ax = ldc_axis[j]
                w_ji *= ldc_scale[j] * _curve_at(ldc_idx[j], -(ux * ax[0] + uy * ax[1] + uz * ax[2]),
                                                 c_ang, c_val, c_off)
            if lsc_idx[i] >= 0:
                w_ji *= _curve_at(lsc_idx[i], cos_i, c_ang, c_val, c_off)
            if near:
                gij += k_ij * (w_ij * vis - 1.0)
                gji += k_ij * (w_ji * vis - 1.0)
            else:
                gij = k_ij * w_ij * vis
                gji = k_ij * w_ji * vis
        if near:
            # both estimate A_i F_ij = A_j F_ji; pooling keeps reciprocity exact.  The
            # estimator that samples the smaller patch varies least, so it gets more weight.
            gij = gji = alpha * gij + (1.0 - alpha) * gji
        s1 += gij
        q1 += gij * gij
        s2 += gji
        q2 += gji * gji
    nS = float(samples)
    m1 = s1 / nS
    m2 = s2 / nS
    out[0] = m1 / areas[i]
    out[1] = m2 / areas[j]
    if samples > 1:
        out[2] = max(q1 / nS - m1 * m1, 0.0) / (nS - 1.0) / (areas[i] * areas[i])
        out[3] = max(q2 / nS - m2 * m2, 0.0) / (nS - 1.0) / (areas[j] * areas[j])


@njit(cache=True)
def _assemble_pairs(pi, pj, seed, samples, verts, nverts, normals, areas, ids,
                    ldc_idx, ldc_axis, ldc_scale, lsc_idx, c_ang, c_val, c_off,
                    lo, hi, left, right, start, count, tri_v, tri_patch, F, V):
    out = np.empty(4)
    for k in range(pi.shape[0]):
        i = pi[k]
        j = pj[k]
        _pair(i, j, seed, samples, verts, nverts, normals, areas, ids,
              ldc_idx, ldc_axis, ldc_scale, lsc_idx, c_ang, c_val, c_off,
              lo, hi, left, right, start, count, tri_v, tri_patch, out)
        F[i, j] = out[0]
        F[j, i] = out[1]
        V[i, j] = out[2]
        V[j, i] = out[3]


def _run(scene, index, pi, pj, samples, seed, mode, F, V):
    t = index.table
    w = weighting_tables(scene, mode)
    _assemble_pairs(np.ascontiguousarray(pi, dtype=np.int64), np.ascontiguousarray(pj, dtype=np.int64),
                    np.uint64(seed), int(samples), t.verts, t.nverts, t.normals, t.areas, t.ids,
                    *w, *index.arrays, F, V)


def form_factor_pair(pi, pj, samples=DEFAULT_SAMPLES, seed=0, weights=None, occluders=()):
    """Monte Carlo form factor from patch ``pi`` to patch ``pj``.

    ``weights`` is an optional (ldc, lsc) pair of curves: the LDC is applied
    about ``pi``'s normal and the LSC about ``pj``'s normal.  ``occluders`` are
    extra patches that may block the pair.  Returns (value, standard error).
    """
    from .scene import Luminaire, LuxmeterSpec, Patch, Scene
    if pi is pj or (pi.id == pj.id and np.array_equal(pi.vertices, pj.vertices)):
        return 0.0, 0.0
    a = Patch(0, pi.vertices, pi.reflectance)
    b = Patch(1, pj.vertices, pj.reflectance)
    extra = [Patch(2 + k, o.vertices, o.reflectance) for k, o in enumerate(occluders)]
    lums, sensors, mode = [], [], "plain"
    if weights is not None:
        ldc, lsc = weights
        if ldc is not None:
            a = Patch(0, pi.vertices, pi.reflectance, emitter_id=0)
            lums = [Luminaire(0, pi.centroid, pi.normal, ldc, 1.0, 0.0, 0)]
            mode = "ldc"
        if lsc is not None:
            sensors = [LuxmeterSpec(0, pj.centroid, pj.normal, lsc, patch=1)]
            mode = "ldc+lsc" if mode == "ldc" else "lsc"
    scene = Scene([a, b] + extra, lums, sensors)
    index = VisibilityIndex(scene.patches)
    F = np.zeros((scene.n, scene.n))
    V = np.zeros_like(F)
    _run(scene, index, [0], [1], samples, seed, mode, F, V)
    return float(F[0, 1]), float(np.sqrt(V[0, 1]))


def assemble(scene, samples=DEFAULT_SAMPLES, seed=0, mode="plain", index=None, base=None):
    """Full form-factor matrix for ``scene``.

    When ``base`` (a matrix from the same scene, samples and seed) is given,
    only pairs touching weighted patches are re-integrated; the per-pair random
    streams make the result identical to a full assembly.
    """
    mode = canonical_mode(mode)
    n = scene.n
    if index is None:
        index = VisibilityIndex(scene.patches)
    if base is not None and base.samples == samples and base.seed == seed and base.n == n:
        F = base.F.copy()
        V = base.sigma ** 2
        rows = np.flatnonzero(weighted_patches(scene, mode) | weighted_patches(scene, base.mode))
        pi, pj = _pairs_touching(rows, n)
    else:
        F = np.zeros((n, n))
        V = np.zeros((n, n))
        pi, pj = np.triu_indices(n, k=1)
    _run(scene, index, pi, pj, samples, seed, mode, F, V)
    return FormFactorMatrix(F, np.sqrt(V), scene.areas.copy(), mode, samples, seed)


def weighted_patches(scene, mode):
    """Mask of patches whose rows or columns carry a curve weight under ``mode``."""
    mode = canonical_mode(mode)
    mask = np.zeros(scene.n, dtype=bool)
    if "ldc" in mode:
        mask |= np.array([p.emitter_id is not None for p in scene.patches])
    if "lsc" in mode:
        for s in scene.sensors:
            if s.patch is not None:
                mask[scene.patch_index[s.patch]] = True
    return mask


def assemble_for_solve(scene, samples=DEFAULT_SAMPLES, seed=0, mode="ldc+lsc", index=None, base=None):
    """Transport and sensing matrices for one weighting mode.

    Interreflection uses only the LDC part of the mode (sensors do not change
    what surfaces reflect); reported illuminance uses the full mode.  Both are
    derived from one plain assembly (``base`` if given) by re-integrating
    only the weighted rows.
    """
    mode = canonical_mode(mode)
    index = index or VisibilityIndex(scene.patches)
    plain = base if base is not None else assemble(scene, samples, seed, "plain", index)
    transport = plain if "ldc" not in mode else assemble(scene, samples, seed, "ldc", index, base=plain)
    sense = transport if "lsc" not in mode else assemble(scene, samples, seed, mode, index, base=plain)
    return transport, sense


def _pairs_touching(rows, n):
    if len(rows) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    pairs = set()
    for r in rows:
        for c in range(n):
            if c != r:
                pairs.add((min(r, c), max(r, c)))
    arr = np.array(sorted(pairs), dtype=np.int64)
    return arr[:, 0], arr[:, 1]


# --- export ----------------------------------------------------------------------

def save_matrix(ffm, path):
    """Binary row-major dump: int32 n, int32 weighting tag, then n*n float64 (little endian)."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<ii", ffm.n, _TAGS[ffm.mode]))
        fh.write(np.ascontiguousarray(ffm.F, dtype="<f8").tobytes())


def load_matrix(path):
    """Inverse of :func:`save_matrix`; returns (F, mode)."""
    with open(path, "rb") as fh:
        n, tag = struct.unpack("<ii", fh.read(8))
        F = np.frombuffer(fh.read(8 * n * n), dtype="<f8").reshape(n, n).copy()
    return F, MODES[tag]


def save_matrix_csv(ffm, path):
    np.savetxt(path, ffm.F, delimiter=",", fmt="%.17g")


def save_npz(ffm, path, scene_hash=""):
    """Full-precision archive of a matrix with its provenance (for reuse across runs)."""
    np.savez(path, F=ffm.F, sigma=ffm.sigma, areas=ffm.areas, mode=ffm.mode,
             samples=ffm.samples, seed=ffm.seed, scene_hash=scene_hash)


def load_npz(path):
    """Inverse of :func:`save_npz`; returns (matrix, scene hash)."""
    with np.load(path) as z:
        ffm = FormFactorMatrix(z["F"], z["sigma"], z["areas"], str(z["mode"]), int(z["samples"]),
                               int(z["seed"]))
        return ffm, str(z["scene_hash"])
