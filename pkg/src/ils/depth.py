"""Depth images: 16-bit PGM I/O, validity-aware denoising and back-projection to patches."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .scene import Patch, SceneError

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class DepthImage:
    depth: np.ndarray  # metres, 0 = invalid
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        d = np.array(self.depth, dtype=float)
        if d.ndim != 2:
            raise ValueError("depth must be a 2-D array")
        if not np.all(np.isfinite(d)) or np.any(d < 0):
            raise ValueError("depth values must be finite and >= 0")
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        object.__setattr__(self, "depth", d)

    @property
    def height(self):
        return self.depth.shape[0]

    @property
    def width(self):
        return self.depth.shape[1]

    @property
    def valid(self):
        return self.depth > 0

    def with_depth(self, depth):
        return DepthImage(depth, self.fx, self.fy, self.cx, self.cy)


# --- filtering ------------------------------------------------------------------

def _windows(a, r, fill):
    return sliding_window_view(np.pad(a, r, constant_values=fill), (2 * r + 1, 2 * r + 1))


def masked_median(img, window):
    if window < 1 or window % 2 == 0:
        raise ValueError("median window must be odd and >= 1")
    r = window // 2
    d = np.where(img.valid, img.depth, np.nan)
    out = np.zeros_like(img.depth)
    if r == 0:
        return img.depth.copy()
    win = _windows(d, r, np.nan)
    v = img.valid
    out[v] = np.nanmedian(win[v], axis=(-2, -1))
    return out


def masked_bilateral(depth, sigma_s, sigma_r):
    """Bilateral filter over valid (> 0) pixels; invalid pixels stay 0."""
    if sigma_s <= 0 or sigma_r <= 0:
        return depth.copy()
    r = max(1, int(math.ceil(2.0 * sigma_s)))
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    ws = np.exp(-(xx**2 + yy**2) / (2.0 * sigma_s**2))
    v = depth > 0
    win = _windows(np.where(v, depth, np.nan), r, np.nan)[v]
    centre = depth[v][:, None, None]
    w = ws * np.exp(-((win - centre) ** 2) / (2.0 * sigma_r**2))
    w = np.where(np.isnan(win), 0.0, w)
    out = np.zeros_like(depth)
    out[v] = np.sum(w * np.nan_to_num(win), axis=(-2, -1)) / np.sum(w, axis=(-2, -1))
    return out


def denoise_depth(img, median_window=3, bilateral_sigmas=(1.5, 0.05)):
    """Median then bilateral filtering; invalid pixels are excluded from every support."""
    med = masked_median(img, median_window)
    return img.with_depth(masked_bilateral(med, *bilateral_sigmas))


# --- meshing ----------------------------------------------------------------------

class PatchList(list):
    """List of patches with a ``warning`` flag set when nothing could be meshed."""
    warning = False


def _pose(pose):
    if pose is None:
        return np.eye(3), np.zeros(3)
    if isinstance(pose, tuple):
        R, t = pose
        return np.asarray(R, dtype=float), np.asarray(t, dtype=float)
    T = np.asarray(pose, dtype=float)
    return T[:3, :3], T[:3, 3]


def back_project(img, u, v):
    """Camera-frame points (x right, y down, z forward) for pixel coordinates u, v."""
    z = img.depth[v, u]
    return np.stack([(u - img.cx) * z / img.fx, (v - img.cy) * z / img.fy, z], axis=-1)


def depth_to_patches(img, pose=None, cell=8, reflectance=0.5, first_id=0, plane_tol=5e-3):
    """One quad per cell x cell block of fully valid pixels.

    Corners are the block's corner pixels, back-projected and mapped by
    ``pose`` (4x4 camera-to-world, or (R, t)).  Corners are snapped to their
    best-fit plane; blocks deviating by more than ``plane_tol`` metres (creases,
    depth discontinuities) are skipped like holes.  Winding is chosen so each
    normal faces the camera.
    """
    if cell < 1:
        raise ValueError("cell must be >= 1")
    R, t = _pose(pose)
    cam = t
    valid = img.valid
    out = PatchList()
    pid = first_id
    for j in range(0, img.height - cell, cell):
        for i in range(0, img.width - cell, cell):
            if not valid[j:j + cell + 1, i:i + cell + 1].all():
                continue
            us = np.array([i, i + cell, i + cell, i])
            vs = np.array([j, j, j + cell, j + cell])
            P = back_project(img, us, vs) @ R.T + t
            c = P.mean(axis=0)
            _, _, vt = np.linalg.svd(P - c)
            n = vt[2]
            dev = (P - c) @ n
            if np.abs(dev).max() > plane_tol:
                continue
            P = P - np.outer(dev, n)
            if np.cross(P[1] - P[0], P[2] - P[0]) @ (cam - c) < 0:
                P = P[::-1]
            try:
                out.append(Patch(pid, P, reflectance))
            except SceneError:
                continue
            pid += 1
    if not out:
        out.warning = True
        log.warning("depth_to_patches: no valid blocks")
    return out


# --- file I/O -----------------------------------------------------------------

def write_pgm16(path, img):
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError("PGM image must be 2-D")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(img.astype(">u2").tobytes())


def read_pgm16(path):
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end].decode("ascii"))
        pos = end
    pos += 1
    if tokens[0] != "P5":
        raise ValueError("not a binary PGM (P5) file")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    dtype = ">u2" if maxval > 255 else "u1"
    return np.frombuffer(data, dtype=dtype, count=w * h, offset=pos).reshape(h, w).astype(np.uint16)


def _sidecar(path):
    return Path(str(path) + ".json")


def save_depth(img, path):
    """Millimetre PGM plus ``<path>.json`` intrinsics sidecar."""
    mm = np.clip(np.rint(img.depth * 1000.0), 0, 65535).astype(np.uint16)
    write_pgm16(path, mm)
    _sidecar(path).write_text(json.dumps({"fx": img.fx, "fy": img.fy, "cx": img.cx, "cy": img.cy},
                                         indent=2, sort_keys=True) + "\n")


def load_depth(path, intrinsics=None):
    meta = json.loads(Path(intrinsics or _sidecar(path)).read_text())
    return DepthImage(read_pgm16(path) / 1000.0, meta["fx"], meta["fy"], meta["cx"], meta["cy"])
