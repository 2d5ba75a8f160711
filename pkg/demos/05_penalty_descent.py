"""Exact-penalty descent on a small constrained problem.

One endpoint equality, one endpoint inequality, box bounds on the
control.  Each iteration solves a small QP for a direction, checks that
the penalty weight certifies descent (raising it if not), and takes an
Armijo step on the nonsmooth merit function F0 + c * M.

Things worth watching in the table: sigma stays negative until it hits
the tolerance, c only ever ratchets up, and M collapses once the
iterates reach the constraint set.
"""

from slidoc import get_problem, optimize

ocp, grid = get_problem("constrained-toy")
res = optimize(ocp, grid, steps_per_interval=8)

print("  k       F0            M          c      sigma        alpha")
for r in res.history:
    a = f"{r.alpha:.3f}" if r.alpha is not None else "  --"
    print(f"{r.k:3d}  {r.F0:12.8f}  {r.M:.3e}  {r.c:5.1f}  "
          f"{r.sigma:+.3e}  {a}")

print(f"\nstatus: {res.status} after {len(res.history)} iterations")
print(f"final cost {res.history[-1].F0:.8f} "
      f"(unconstrained optimum would be 0, the equality forces 0.36)")
print(f"final violation M = {res.history[-1].M:.2e}")
