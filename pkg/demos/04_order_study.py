"""Convergence orders measured by self-refinement.

Halve the step four times, compare against a much finer reference, fit
the slope.  The scheme is fifth order at mesh nodes and fourth at the
interior stages; the discrete adjoint keeps third order at its stages.
The endpoint adjoint is the curious one: the theory promises four, the
fit comes out at five, because the endpoint recursion rides the state's
superconvergence on problems this smooth.
"""

from slidoc import get_problem, order_study

ocp, grid = get_problem("smooth-linear")
hs = [0.1 / 2 ** k for k in range(4)]

for q in ("state_endpoint", "state_stage", "adjoint_endpoint",
          "adjoint_stage", "gradient"):
    rep = order_study(ocp, grid, q, hs)
    pairs = "  ".join(f"{o:.2f}" for o in rep.pairwise_orders)
    print(f"{q:17s} slope {rep.slope:.3f}   pairwise {pairs}")
    print(f"{'':17s} errors " +
          "  ".join(f"{e:.3e}" for e in rep.errors))
