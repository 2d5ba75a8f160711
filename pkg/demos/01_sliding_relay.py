"""Relay system hitting its switching line and staying on it.

The two fields both point at g(x) = x2 = 0 from their own side, so once
the trajectory reaches the line it slides: the integrator switches to
the blended field plus an algebraic variable that pins g to zero.  For
this problem the crossing time has a closed form, which makes it a nice
first check that event location actually works.
"""

import numpy as np

from slidoc import Mode, get_problem, integrate

ocp, grid = get_problem("p2-sliding")
traj = integrate(ocp, grid, steps_per_interval=8)

rec = traj.transitions[0]
print(f"transition: {rec.kind.value} at t = {rec.t:.12f}")
print(f"closed form:              t = {0.5 / 1.2:.12f}")

slide = [k for k in range(traj.K) if traj.mode[k] is Mode.SLIDING]
print(f"\nsliding from node {slide[0]} of {traj.K}")
print(f"max |g(x)| on sliding nodes: "
      f"{max(abs(ocp.g(traj.x[k])) for k in slide):.3e}")
print(f"max |z| anywhere:            {np.max(np.abs(traj.z_node)):.3e}")
print(f"\nx(tf) = {traj.x[-1]}   (exact: [1, 0])")
