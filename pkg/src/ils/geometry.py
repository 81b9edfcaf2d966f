"""Ray casting against scene patches: a flattened AABB tree plus numba kernels.

Patches are split into triangles (quads along the v0-v2 diagonal).  The tree
is built once in Python; queries run in compiled code so that the form-factor
and receiver integrators can trace millions of rays.
"""

from __future__ import annotations

import numpy as np
from numba import njit

LEAF_SIZE = 4
SHADOW_EPS = 1e-6  # metres, shadow-ray origin offset along the surface normal

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_K1 = np.uint64(0xD6E8FEB86659FD93)
_K2 = np.uint64(0xA0761D6478BD642F)


# --- counter based RNG ------------------------------------------------------

@njit(cache=True)
def _mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def hash3(seed, a, b):
    """Stream key for (seed, a, b); independent of evaluation order."""
    h = _mix64(np.uint64(seed) + _GOLDEN)
    h = _mix64(h ^ (np.uint64(a) * _K1))
    h = _mix64(h ^ (np.uint64(b) * _K2))
    return h


@njit(cache=True)
def rng_next(state):
    """Split-mix step; returns (new state, uniform float in [0, 1))."""
    state = state + _GOLDEN
    z = _mix64(state)
    return state, np.float64(z >> np.uint64(11)) * (1.0 / 9007199254740992.0)


def hash_key(seed, a, b):
    return int(hash3(np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(a), np.uint64(b)))


# --- patch tables -------------------------------------------------------------

class PatchTable:
    """Contiguous arrays describing scene patches for the compiled kernels."""

    def __init__(self, patches):
        n = len(patches)
        self.n = n
        self.verts = np.zeros((n, 4, 3))
        self.nverts = np.zeros(n, dtype=np.int64)
        self.normals = np.zeros((n, 3))
        self.areas = np.zeros(n)
        self.ids = np.zeros(n, dtype=np.int64)
        self.emitters = np.full(n, -1, dtype=np.int64)
        tris = []
        owner = []
        for k, p in enumerate(patches):
            v = p.vertices
            self.verts[k, :len(v)] = v
            self.nverts[k] = len(v)
            self.normals[k] = p.normal
            self.areas[k] = p.area
            self.ids[k] = p.id
            if p.emitter_id is not None:
                self.emitters[k] = p.emitter_id
            tris.append(v[[0, 1, 2]])
            owner.append(k)
            if len(v) == 4:
                tris.append(v[[0, 2, 3]])
                owner.append(k)
        self.tris = np.array(tris, dtype=float).reshape(-1, 3, 3)
        self.tri_owner = np.array(owner, dtype=np.int64)


class VisibilityIndex:
    """AABB tree over the triangles of a set of patches.

    Node arrays are flat: ``lo``/``hi`` boxes, ``left``/``right`` children
    (-1 for leaves), and ``start``/``count`` into the permuted triangle list.
    """

    def __init__(self, patches):
        self.table = PatchTable(patches)
        t = self.table.tris
        m = len(t)
        if m == 0:
            self.lo = np.zeros((1, 3))
            self.hi = np.zeros((1, 3)) - 1.0
            self.left = np.full(1, -1, dtype=np.int64)
            self.right = np.full(1, -1, dtype=np.int64)
            self.start = np.zeros(1, dtype=np.int64)
            self.count = np.zeros(1, dtype=np.int64)
            self.order = np.zeros(0, dtype=np.int64)
        else:
            self._build(t)
        self.tri_v = np.ascontiguousarray(self.table.tris[self.order])
        self.tri_patch = np.ascontiguousarray(self.table.tri_owner[self.order])

    @property
    def n_patches(self):
        return self.table.n

    def _build(self, t):
        tlo = t.min(axis=1)
        thi = t.max(axis=1)
        cen = 0.5 * (tlo + thi)
        lo, hi, left, right, start, count = [], [], [], [], [], []
        order = np.arange(len(t))
        stack = [(0, len(t), -1, 0)]
        # iterative build; each entry is (begin, end, parent, side)
        while stack:
            b, e, parent, side = stack.pop()
            node = len(lo)
            idx = order[b:e]
            lo.append(tlo[idx].min(axis=0))
            hi.append(thi[idx].max(axis=0))
            left.append(-1)
            right.append(-1)
            start.append(b)
            count.append(e - b)
            if parent >= 0:
                (left if side == 0 else right)[parent] = node
            if e - b <= LEAF_SIZE:
                continue
            c = cen[idx]
            axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
            srt = idx[np.argsort(c[:, axis], kind="stable")]
            order[b:e] = srt
            mid = (b + e) // 2
            count[node] = 0
            stack.append((mid, e, node, 1))
            stack.append((b, mid, node, 0))
        self.lo = np.array(lo)
        self.hi = np.array(hi)
        self.left = np.array(left, dtype=np.int64)
        self.right = np.array(right, dtype=np.int64)
        self.start = np.array(start, dtype=np.int64)
        self.count = np.array(count, dtype=np.int64)
        self.order = order

    @property
    def arrays(self):
        return (self.lo, self.hi, self.left, self.right, self.start, self.count,
                self.tri_v, self.tri_patch)


# --- intersection kernels ---------------------------------------------------

@njit(cache=True)
def _ray_tri(o, d, v, tmin, tmax):
    """Moller-Trumbore; returns hit parameter t in (tmin, tmax) or -1."""
    e1x = v[1, 0] - v[0, 0]
    e1y = v[1, 1] - v[0, 1]
    e1z = v[1, 2] - v[0, 2]
    e2x = v[2, 0] - v[0, 0]
    e2y = v[2, 1] - v[0, 1]
    e2z = v[2, 2] - v[0, 2]
    px = d[1] * e2z - d[2] * e2y
    py = d[2] * e2x - d[0] * e2z
    pz = d[0] * e2y - d[1] * e2x
    det = e1x * px + e1y * py + e1z * pz
    scale = abs(e1x * e1x + e1y * e1y + e1z * e1z) * (d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
    if det * det <= 1e-24 * scale * (e2x * e2x + e2y * e2y + e2z * e2z):
        return -1.0
    inv = 1.0 / det
    sx = o[0] - v[0, 0]
    sy = o[1] - v[0, 1]
    sz = o[2] - v[0, 2]
    u = (sx * px + sy * py + sz * pz) * inv
    if u < 0.0 or u > 1.0:
        return -1.0
    qx = sy * e1z - sz * e1y
    qy = sz * e1x - sx * e1z
    qz = sx * e1y - sy * e1x
    w = (d[0] * qx + d[1] * qy + d[2] * qz) * inv
    if w < 0.0 or u + w > 1.0:
        return -1.0
    t = (e2x * qx + e2y * qy + e2z * qz) * inv
    if t <= tmin or t >= tmax:
        return -1.0
    return t


@njit(cache=True)
def _ray_box(o, invd, lo, hi, tmin, tmax):
    for a in range(3):
        t0 = (lo[a] - o[a]) * invd[a]
        t1 = (hi[a] - o[a]) * invd[a]
        if t0 > t1:
            t0, t1 = t1, t0
        if t0 > tmin:
            tmin = t0
        if t1 < tmax:
            tmax = t1
        if tmax < tmin:
            return False
    return True


@njit(cache=True)
def _inv(d):
    out = np.empty(3)
    for a in range(3):
        out[a] = 1.0 / d[a] if d[a] != 0.0 else 1e300
    return out


@njit(cache=True)
def occluded(o, d, tmin, tmax, ex_a, ex_b, lo, hi, left, right, start, count, tri_v, tri_patch):
    """Any-hit query along o + t d for t in (tmin, tmax), skipping patches ex_a, ex_b."""
    if tri_v.shape[0] == 0:
        return False
    invd = _inv(d)
    stack = np.empty(128, dtype=np.int64)
    sp = 0
    stack[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if not _ray_box(o, invd, lo[node], hi[node], tmin - 1e-12, tmax + 1e-12):
            continue
        if left[node] < 0:
            for k in range(start[node], start[node] + count[node]):
                pid = tri_patch[k]
                if pid == ex_a or pid == ex_b:
                    continue
                if _ray_tri(o, d, tri_v[k], tmin, tmax) > 0.0:
                    return True
        else:
            stack[sp] = left[node]
            stack[sp + 1] = right[node]
            sp += 2
    return False


@njit(cache=True)
def closest_hit(o, d, tmax, lo, hi, left, right, start, count, tri_v, tri_patch):
    """Closest triangle hit along o + t d (t in (0, tmax)); returns (patch, t) or (-1, inf)."""
    best_t = tmax
    best = -1
    if tri_v.shape[0] == 0:
        return best, np.inf
    invd = _inv(d)
    stack = np.empty(128, dtype=np.int64)
    stack[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if not _ray_box(o, invd, lo[node], hi[node], 0.0, best_t + 1e-12):
            continue
        if left[node] < 0:
            for k in range(start[node], start[node] + count[node]):
                t = _ray_tri(o, d, tri_v[k], 1e-12, best_t)
                if t > 0.0:
                    best_t = t
                    best = tri_patch[k]
        else:
            stack[sp] = left[node]
            stack[sp + 1] = right[node]
            sp += 2
    if best < 0:
        return best, np.inf
    return best, best_t


@njit(cache=True)
def _segments_blocked(P, Q, ex, lo, hi, left, right, start, count, tri_v, tri_patch, out):
    d = np.empty(3)
    for r in range(P.shape[0]):
        for a in range(3):
            d[a] = Q[r, a] - P[r, a]
        out[r] = occluded(P[r], d, 0.0, 1.0, ex[r, 0], ex[r, 1],
                          lo, hi, left, right, start, count, tri_v, tri_patch)


@njit(cache=True)
def _first_hits(O, D, lo, hi, left, right, start, count, tri_v, tri_patch, pid, tt):
    for r in range(O.shape[0]):
        pid[r], tt[r] = closest_hit(O[r], D[r], np.inf, lo, hi, left, right, start, count,
                                    tri_v, tri_patch)


def visibility(p, q, index, exclude=()):
    """True iff the open segment p-q meets no patch outside ``exclude`` (patch ids)."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if index.n_patches == 0:
        return True
    ex = _exclude_rows(index, exclude, 1)
    out = np.zeros(1, dtype=np.bool_)
    if len(exclude) <= 2:
        _segments_blocked(p[None], q[None], ex, *index.arrays, out)
        return not out[0]
    # larger exclusion sets: hide the excluded triangles behind a filtered index
    keep = ~np.isin(index.table.ids[index.tri_patch], list(exclude))
    sub = _filtered_arrays(index, keep)
    _segments_blocked(p[None], q[None], np.full((1, 2), -1, dtype=np.int64), *sub, out)
    return not out[0]


def segments_visible(P, Q, index, exclude_pairs=None):
    """Vectorised visibility for many segments; ``exclude_pairs`` holds patch indices."""
    P = np.ascontiguousarray(P, dtype=float).reshape(-1, 3)
    Q = np.ascontiguousarray(Q, dtype=float).reshape(-1, 3)
    if exclude_pairs is None:
        exclude_pairs = np.full((len(P), 2), -1, dtype=np.int64)
    out = np.zeros(len(P), dtype=np.bool_)
    if index.n_patches:
        _segments_blocked(P, Q, np.ascontiguousarray(exclude_pairs, dtype=np.int64),
                          *index.arrays, out)
    return ~out


def first_hits(O, D, index):
    """Closest patch index (-1 for none) and hit distance along each ray."""
    O = np.ascontiguousarray(O, dtype=float).reshape(-1, 3)
    D = np.ascontiguousarray(D, dtype=float).reshape(-1, 3)
    pid = np.full(len(O), -1, dtype=np.int64)
    tt = np.full(len(O), np.inf)
    _first_hits(O, D, *index.arrays, pid, tt)
    return pid, tt


def _exclude_rows(index, exclude, rows):
    lookup = {int(i): k for k, i in enumerate(index.table.ids)}
    ex = [lookup[i] for i in exclude if i in lookup][:2]
    ex += [-1] * (2 - len(ex))
    return np.tile(np.array(ex, dtype=np.int64), (rows, 1))


def _filtered_arrays(index, keep):
    # brute-force single leaf over the kept triangles
    tri_v = np.ascontiguousarray(index.tri_v[keep])
    tri_patch = np.ascontiguousarray(index.tri_patch[keep])
    m = len(tri_v)
    if m:
        lo = tri_v.min(axis=(0, 1))[None]
        hi = tri_v.max(axis=(0, 1))[None]
    else:
        lo, hi = np.zeros((1, 3)), -np.ones((1, 3))
    one = np.full(1, -1, dtype=np.int64)
    return (lo, hi, one, one.copy(), np.zeros(1, dtype=np.int64),
            np.array([m], dtype=np.int64), tri_v, tri_patch)


# --- patch sampling ----------------------------------------------------------

@njit(cache=True)
def sample_patch(verts, nv, u, v, out):
    """Map (u, v) in the unit square to a point on the patch; returns the area Jacobian."""
    if nv == 3:
        su = np.sqrt(u)
        b1 = su * (1.0 - v)
        b2 = su * v
        b0 = 1.0 - su
        for a in range(3):
            out[a] = b0 * verts[0, a] + b1 * verts[1, a] + b2 * verts[2, a]
        ax = verts[1, 0] - verts[0, 0]
        ay = verts[1, 1] - verts[0, 1]
        az = verts[1, 2] - verts[0, 2]
        bx = verts[2, 0] - verts[0, 0]
        by = verts[2, 1] - verts[0, 1]
        bz = verts[2, 2] - verts[0, 2]
        cx = ay * bz - az * by
        cy = az * bx - ax * bz
        cz = ax * by - ay * bx
        return 0.5 * np.sqrt(cx * cx + cy * cy + cz * cz)
    w00 = (1.0 - u) * (1.0 - v)
    w10 = u * (1.0 - v)
    w11 = u * v
    w01 = (1.0 - u) * v
    pu = np.empty(3)
    pv = np.empty(3)
    for a in range(3):
        out[a] = w00 * verts[0, a] + w10 * verts[1, a] + w11 * verts[2, a] + w01 * verts[3, a]
        pu[a] = (1.0 - v) * (verts[1, a] - verts[0, a]) + v * (verts[2, a] - verts[3, a])
        pv[a] = (1.0 - u) * (verts[3, a] - verts[0, a]) + u * (verts[2, a] - verts[1, a])
    cx = pu[1] * pv[2] - pu[2] * pv[1]
    cy = pu[2] * pv[0] - pu[0] * pv[2]
    cz = pu[0] * pv[1] - pu[1] * pv[0]
    return np.sqrt(cx * cx + cy * cy + cz * cz)
