"""Radiosity in a closed cube: Monte Carlo form factors against the analytic answer.

Every face has reflectance 0.5 and emits 1 unit, so in a closed box the
radiosity is E / (1 - rho) = 2 everywhere.  The script shows how close the
sampled transport gets as the per-pair sample count grows, and that all three
solvers agree.
"""
import numpy as np

from ils.fixtures import build_cube
from ils.radiosity import problem_from_scene, solve_direct, solve_iterative
from ils.transport import assemble

cube = build_cube()
print(f"cube: {cube.n} patches")

for samples in (16, 64, 256, 1024):
    ffm = assemble(cube, samples, seed=0)
    sums, sigma = ffm.row_sums()
    B = solve_direct(problem_from_scene(cube, ffm)).B
    print(f"  samples={samples:5d}  row sums {sums.min():.4f}..{sums.max():.4f} (sigma<={sigma.max():.4f})"
          f"  B {B.min():.4f}..{B.max():.4f}")

prob = problem_from_scene(cube, ffm)
ref = solve_direct(prob).B
for scheme in ("jacobi", "gauss_seidel"):
    sol = solve_iterative(prob, tol=1e-10, scheme=scheme)
    print(f"  {scheme:12s} {sol.iterations:3d} sweeps, max |B - direct| = {np.abs(sol.B - ref).max():.2e}")
