"""Axially symmetric light distribution (LDC) and luxmeter sensitivity (LSC) curves.

A curve is a piecewise-linear polar profile sampled at ascending angles on
[0, 180] degrees.  LDC values describe the relative intensity of a luminaire
around its aim axis; LSC values describe the relative response of a sensor
around its facing axis, on top of the cosine law that every illuminance
receiver already obeys.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

LDC = "LDC"
LSC = "LSC"


class CurveError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DistributionCurve:
    kind: str
    angles: np.ndarray  # degrees
    values: np.ndarray
    name: str = ""

    def __post_init__(self):
        angles = np.asarray(self.angles, dtype=float)
        values = np.asarray(self.values, dtype=float)
        angles.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "angles", angles)
        object.__setattr__(self, "values", values)
        _validate(self)

    def __call__(self, theta):
        return curve_eval(self, theta)

    def __eq__(self, other):
        if not isinstance(other, DistributionCurve):
            return NotImplemented
        return (self.kind == other.kind
                and np.array_equal(self.angles, other.angles)
                and np.array_equal(self.values, other.values))

    __hash__ = None

    @property
    def max_slope(self):
        """Largest knot-to-knot slope magnitude, per radian."""
        d = np.abs(np.diff(self.values)) / np.radians(np.diff(self.angles))
        return float(d.max()) if d.size else 0.0


def _validate(c):
    if c.kind not in (LDC, LSC):
        raise CurveError(f"unknown curve kind {c.kind!r}")
    a, v = c.angles, c.values
    if a.ndim != 1 or a.shape != v.shape or a.size < 2:
        raise CurveError("angles and values must be 1-D arrays of equal length >= 2")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(v))):
        raise CurveError("non-finite angle or value")
    if np.any(np.diff(a) <= 0):
        raise CurveError("angles must be strictly ascending")
    if a[0] != 0.0:
        raise CurveError("curve must start at 0 degrees")
    if a[-1] != 180.0:
        raise CurveError("curve must end at 180 degrees")
    if np.any(v < 0):
        raise CurveError("negative curve value")
    if c.kind == LSC:
        if np.any(v > 1.0):
            raise CurveError("LSC values must not exceed 1")
        if np.interp(90.0, a, v) > v[0]:
            raise CurveError("LSC response at 90 degrees exceeds the on-axis response")


def curve_eval(c, theta):
    """Evaluate ``c`` at ``theta`` radians from the curve axis.

    Scalars return a float, arrays an array of the same shape.
    """
    t = np.degrees(np.asarray(theta, dtype=float))
    if np.any(t < -1e-9) or np.any(t > 180.0 + 1e-9) or np.any(np.isnan(t)):
        raise CurveError("angle outside [0, pi]")
    out = np.interp(np.clip(t, 0.0, 180.0), c.angles, c.values)
    return float(out) if out.ndim == 0 else out


def make_standard(name, resolution=5.0, kind=None):
    """Build one of the canonical curves.

    ``isotropic``: constant 1 (LDC) or 1 on the front hemisphere only (LSC).
    ``lambertian``: cos(theta) clamped at zero, an LDC.
    ``cosine_lsc``: max(cos(theta), 0), an LSC.
    """
    resolution = float(resolution)
    steps = 180.0 / resolution
    if resolution <= 0 or abs(steps - round(steps)) > 1e-9:
        raise CurveError(f"resolution {resolution} does not divide 180")
    angles = np.linspace(0.0, 180.0, int(round(steps)) + 1)
    cos = np.maximum(np.cos(np.radians(angles)), 0.0)
    cos[angles >= 90.0] = 0.0
    if name == "isotropic":
        kind = kind or LDC
        values = np.ones_like(angles) if kind == LDC else (angles <= 90.0).astype(float)
    elif name == "lambertian":
        kind = kind or LDC
        values = cos
    elif name in ("cosine_lsc", "cosine"):
        kind = kind or LSC
        values = cos
    else:
        raise CurveError(f"unknown standard curve {name!r}")
    return DistributionCurve(kind, angles, values, name=name)


def load_curve(path, kind=LDC):
    """Read a text file of ``angle value`` lines (degrees).  ``#`` starts a comment."""
    angles, values = [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise CurveError(f"{path}:{lineno}: expected 'angle value'")
        try:
            angles.append(float(parts[0]))
            values.append(float(parts[1]))
        except ValueError as exc:
            raise CurveError(f"{path}:{lineno}: {exc}") from None
    return DistributionCurve(kind, np.array(angles), np.array(values), name=str(path))


def save_curve(c, path):
    lines = [f"{a!r} {v!r}" for a, v in zip(c.angles.tolist(), c.values.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")


def resolve_curve(ref, kind, base_dir=None):
    """Resolve a scene-file curve reference: an inline standard name or a file path."""
    if isinstance(ref, DistributionCurve):
        return ref
    names = {"isotropic": "isotropic", "lambertian": "lambertian", "cosine": "cosine_lsc"}
    if ref in names:
        c = make_standard(names[ref], 5.0, kind=kind)
    else:
        p = Path(ref)
        if base_dir is not None and not p.is_absolute():
            p = Path(base_dir) / p
        c = load_curve(p, kind=kind)
    return DistributionCurve(c.kind, c.angles, c.values, name=str(ref))


def hemisphere_integral(c, n=2001):
    """Integral of c(theta) cos(theta) over the front hemisphere, in steradians.

    Equals pi for the isotropic curve.
    """
    from scipy.integrate import simpson
    theta = np.linspace(0.0, np.pi / 2, n)
    f = curve_eval(c, theta) * np.cos(theta) * np.sin(theta)
    return 2.0 * np.pi * float(simpson(f, x=theta))
