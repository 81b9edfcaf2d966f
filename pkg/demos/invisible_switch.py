"""The invisible light switch in the four-desk office.

Two occupants sit facing east.  Luminaires they cannot see are dimmed, subject
to the perceived-illuminance drop staying within the comfort bound.  The room
transport takes about half a minute to assemble at the sample count used here.
"""
import numpy as np

from ils.controller import (ComfortConstraint, PowerModel, SolutionCache, energy_report,
                            evaluate_config, optimize_exhaustive, optimize_greedy)
from ils.fixtures import build_room4, room4_occupants
from ils.geometry import VisibilityIndex
from ils.transport import assemble_for_solve

SAMPLES = 9

room4 = build_room4()
index = VisibilityIndex(room4.patches)
transport, sense = assemble_for_solve(room4, SAMPLES, 0, "ldc+lsc", index)
cache = SolutionCache(room4, transport, sense, 4096, 0, index)
occupants = room4_occupants()

full = evaluate_config(room4, cache, [254] * 8, occupants)
print("full-lit perceived lux:", np.round(full.lux, 1))

vis = cache.visibility(occupants)
print("luminaire visibility per occupant (0 hidden, 1 partial, 2 visible):")
print(vis)

constraint = ComfortConstraint(max_delta_lux=200.0)
for name, opt in (("exhaustive", optimize_exhaustive), ("greedy", optimize_greedy)):
    d = opt(room4, cache, occupants, constraint)
    ev = evaluate_config(room4, cache, d, occupants)
    print(f"{name:10s} levels {d.levels}  dW {ev.delta_watt:.1f} W  dlux {np.round(ev.delta_lux, 1)}")

power = PowerModel.from_scene(room4)
print()
print(energy_report(d, power, 8.0, 0.0, tuple(ev.delta_lux)).text())
