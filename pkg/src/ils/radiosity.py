"""Radiosity system B = E + diag(rho) F B: direct and stationary iterative solvers."""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

log = logging.getLogger(__name__)

MAX_DIRECT = 4096


class ConvergenceError(RuntimeError):
    def __init__(self, message, residual, iterations):
        super().__init__(f"{message} (residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True, eq=False)
class RadiosityProblem:
    """Transport matrix, reflectances and emission of one radiosity solve.

    ``F`` drives the interreflection; ``F_sense`` (optional) is the matrix
    whose gathered rows give the reported incident illuminance, e.g. the
    LSC-weighted variant of ``F``.  Both are plain arrays in the
    "fraction leaving row patch reaching column patch" convention.
    """
    F: np.ndarray
    rho: np.ndarray
    E: np.ndarray
    areas: Optional[np.ndarray] = None
    F_sense: Optional[np.ndarray] = None

    def __post_init__(self):
        n = self.F.shape[0]
        if self.F.shape != (n, n) or self.rho.shape != (n,) or self.E.shape != (n,):
            raise ValueError("dimension mismatch in radiosity problem")
        if np.any(self.rho < 0) or np.any(self.rho >= 1):
            raise ValueError("reflectance must lie in [0, 1)")
        if np.any(self.E < 0):
            raise ValueError("emission must be non-negative")

    @property
    def n(self):
        return self.F.shape[0]

    def with_emission(self, E):
        return RadiosityProblem(self.F, self.rho, np.asarray(E, dtype=float), self.areas, self.F_sense)

    def gather(self, F):
        if self.areas is None:
            return F
        A = self.areas
        return (F * A[:, None]).T / A[:, None]

    def system_matrix(self):
        return self.rho[:, None] * self.gather(self.F)


@dataclass(frozen=True, eq=False)
class Solution:
    B: np.ndarray
    H: np.ndarray
    iterations: int = 0
    residual: float = 0.0
    meta: dict = field(default_factory=dict)


def problem_from_scene(scene, ffm, levels=None, sense=None):
    """Radiosity problem for a scene with its transport matrix.

    ``ffm`` drives interreflection.  ``sense`` optionally supplies the matrix
    used for reported illuminance (defaults to ``ffm``).
    """
    E = scene.emission(levels)
    return RadiosityProblem(ffm.F, scene.reflectance, E, scene.areas,
                            None if sense is None else sense.F)


def _incident(p, B):
    H = p.gather(p.F) @ B
    Hs = H if p.F_sense is None else p.gather(p.F_sense) @ B
    return H, Hs


def residual(p, B):
    return float(np.max(np.abs(B - p.E - p.system_matrix() @ B))) if p.n else 0.0


def _factor(M):
    """LU factors of M; raises LinAlgError when M is singular to working precision."""
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
            lu = scipy.linalg.lu_factor(M, check_finite=True)
    except (np.linalg.LinAlgError, ValueError, scipy.linalg.LinAlgWarning) as exc:
        raise np.linalg.LinAlgError(f"singular radiosity system: {exc}") from None
    if M.size and np.min(np.abs(np.diag(lu[0]))) == 0.0:
        raise np.linalg.LinAlgError("singular radiosity system")
    return lu


def solve_direct(p):
    """Dense LU solve of (I - diag(rho) G) B = E."""
    if p.n > MAX_DIRECT:
        raise ValueError(f"dense solve limited to n <= {MAX_DIRECT}")
    M = np.eye(p.n) - p.system_matrix()
    lu = _factor(M)
    B = scipy.linalg.lu_solve(lu, p.E)
    _, H = _incident(p, B)
    return Solution(B, H, 1, residual(p, B), {"solver": "direct"})


class DirectSolver:
    """Factor once, solve for many emission vectors (per-luminaire superposition)."""

    def __init__(self, p):
        if p.n > MAX_DIRECT:
            raise ValueError(f"dense solve limited to n <= {MAX_DIRECT}")
        self.problem = p
        self._lu = _factor(np.eye(p.n) - p.system_matrix())
        self._G = p.gather(p.F)
        self._Gs = self._G if p.F_sense is None else p.gather(p.F_sense)

    def solve(self, E):
        B = scipy.linalg.lu_solve(self._lu, np.asarray(E, dtype=float))
        return Solution(B, self._Gs @ B, 1, 0.0, {"solver": "direct"})


def solve_iterative(p, tol=1e-9, max_iters=10_000, scheme="gauss_seidel"):
    """Jacobi or Gauss-Seidel sweeps starting from B = E.

    Stops once max|B - E - diag(rho) G B| <= tol * max(1, max|E|).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if scheme not in ("jacobi", "gauss_seidel"):
        raise ValueError(f"unknown scheme {scheme!r}")
    M = p.system_matrix()
    E = p.E
    bound = tol * max(1.0, float(np.max(np.abs(E))) if p.n else 0.0)
    diag = np.diag(M).copy()
    B = E.copy()
    res = np.inf
    for it in range(1, max_iters + 1):
        if scheme == "jacobi":
            B = (E + M @ B - diag * B) / (1.0 - diag)
        else:
            for i in range(p.n):
                B[i] = (E[i] + M[i] @ B - diag[i] * B[i]) / (1.0 - diag[i])
        res = float(np.max(np.abs(B - E - M @ B))) if p.n else 0.0
        if res <= bound:
            _, H = _incident(p, B)
            return Solution(B, H, it, res, {"solver": scheme})
    raise ConvergenceError("radiosity iteration did not converge", res, max_iters)


def save_solution_csv(scene, sol, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["patch_id", "B", "H"])
        for p, b, h in zip(scene.patches, sol.B, sol.H):
            w.writerow([p.id, repr(float(b)), repr(float(h))])


def load_solution_csv(path):
    ids, B, H = [], [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            ids.append(int(row["patch_id"]))
            B.append(float(row["B"]))
            H.append(float(row["H"]))
    return ids, Solution(np.array(B), np.array(H))
