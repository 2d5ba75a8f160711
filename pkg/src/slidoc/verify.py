"""Finite-difference gradient oracle and convergence-order studies.

The oracle re-integrates the full hybrid system for every probe, events
and all, so it is an independent check on the adjoint-based gradient.
Probes that change the transition structure (a different sequence of
transition kinds than the base run) are flagged NonSmoothAcrossEvent:
the functional is not differentiable across such a change, so those
entries are excluded from pass/fail comparisons but still reported.

Order studies are self-convergent: the reference is the same integrator
on a mesh 8 times finer than the finest study mesh, cross-checked
against a second reference at twice that resolution.  Stage quantities
are compared against the reference's own collocation interpolant, which
is a cubic through the step endpoint and stage values.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .adjoint import run_adjoint
from .errors import ReferenceUnconverged, ValidationError
from .gradient import reduced_gradient
from .integrator import IntegratorOptions, Trajectory, integrate
from .model import ControlGrid, EndpointFunctional, HybridOCP
from .tableau import ButcherTableau, radau_iia_3

FLAG_NONSMOOTH = "NonSmoothAcrossEvent"

QUANTITIES = ("state_endpoint", "state_stage", "adjoint_endpoint",
              "adjoint_stage", "gradient")


# ---------------------------------------------------------------------------
# finite-difference oracle


@dataclass(frozen=True)
class FDReport:
    entries: np.ndarray          # (N, m) central differences
    flags: np.ndarray            # (N, m) bool, True = NonSmoothAcrossEvent
    eps: float
    base_kinds: tuple            # transition kinds of the unperturbed run

    @property
    def flagged(self) -> list:
        return [[int(n), int(j)] for n, j in zip(*np.nonzero(self.flags))]

    def to_dict(self) -> dict:
        return {"entries": [[float(v) for v in row] for row in self.entries],
                "flagged": self.flagged,
                "flag": FLAG_NONSMOOTH,
                "eps": self.eps,
                "base_kinds": list(self.base_kinds)}


def fd_gradient(ocp: HybridOCP, grid: ControlGrid, steps_per_interval: int = 8,
                functional: Optional[EndpointFunctional] = None,
                eps: float = 1e-6,
                tab: Optional[ButcherTableau] = None,
                opts: Optional[IntegratorOptions] = None) -> FDReport:
    """Central differences of w(x(tf)) in every control entry.

    The probe size is eps scaled by max(1, |u_nj|).  Each evaluation is a
    full re-integration including event location.
    """
    if not eps > 0:
        raise ValidationError(f"eps: must be > 0, got {eps}", field="eps")
    functional = functional if functional is not None else ocp.phi
    tab = tab if tab is not None else radau_iia_3()
    opts = opts if opts is not None else IntegratorOptions()

    base = integrate(ocp, grid, steps_per_interval, tab=tab, opts=opts)
    base_kinds = tuple(base.transition_kinds())

    N, m = grid.N, grid.m
    entries = np.zeros((N, m))
    flags = np.zeros((N, m), dtype=bool)

    def probe(values):
        traj = integrate(ocp, grid.with_values(values), steps_per_interval,
                         tab=tab, opts=opts)
        return functional.value(traj.x[-1]), tuple(traj.transition_kinds())

    for n in range(N):
        for j in range(m):
            step = eps * max(1.0, abs(float(grid.values[n, j])))
            up = grid.values.copy()
            up[n, j] += step
            dn = grid.values.copy()
            dn[n, j] -= step
            w_up, kinds_up = probe(up)
            w_dn, kinds_dn = probe(dn)
            entries[n, j] = (w_up - w_dn) / (2.0 * step)
            if kinds_up != base_kinds or kinds_dn != base_kinds:
                flags[n, j] = True

    entries.flags.writeable = False
    flags.flags.writeable = False
    return FDReport(entries=entries, flags=flags, eps=eps, base_kinds=base_kinds)


@dataclass(frozen=True)
class GradientCheck:
    grad: np.ndarray             # adjoint-based reduced gradient (N, m)
    fd: FDReport
    rel: Optional[float]         # None when every entry is flagged
    max_abs_diff: Optional[float]

    def to_dict(self) -> dict:
        d = self.fd.to_dict()
        d["grad"] = [[float(v) for v in row] for row in self.grad]
        d["rel"] = self.rel
        d["max_abs_diff"] = self.max_abs_diff
        return d


def gradient_check(ocp: HybridOCP, grid: ControlGrid, steps_per_interval: int = 8,
                   functional: Optional[EndpointFunctional] = None,
                   eps: float = 1e-6,
                   tab: Optional[ButcherTableau] = None,
                   opts: Optional[IntegratorOptions] = None) -> GradientCheck:
    """Reduced gradient vs the FD oracle.

    rel is the max-norm difference over unflagged entries divided by
    max(‖fd‖_inf over those entries, 1e-3); the floor keeps near-zero
    gradients from inflating the ratio.
    """
    functional = functional if functional is not None else ocp.phi
    tab = tab if tab is not None else radau_iia_3()
    opts = opts if opts is not None else IntegratorOptions()

    traj = integrate(ocp, grid, steps_per_interval, tab=tab, opts=opts)
    adj = run_adjoint(ocp, traj, grid, functional, tab=tab, eps_tan=opts.eps_tan)
    grad = reduced_gradient(ocp, traj, grid, adj, tab=tab)
    fd = fd_gradient(ocp, grid, steps_per_interval, functional, eps, tab, opts)

    keep = ~fd.flags
    if not np.any(keep):
        return GradientCheck(grad=grad, fd=fd, rel=None, max_abs_diff=None)
    diff = float(np.max(np.abs(grad[keep] - fd.entries[keep])))
    denom = max(float(np.max(np.abs(fd.entries[keep]))), 1e-3)
    return GradientCheck(grad=grad, fd=fd, rel=diff / denom, max_abs_diff=diff)


# ---------------------------------------------------------------------------
# order studies


@dataclass(frozen=True)
class OrderReport:
    quantity: str
    h: list
    errors: list
    pairwise_orders: list        # log(e_i/e_{i+1}) / log(h_i/h_{i+1})
    slope: float                 # least-squares fit of log e vs log h
    reference_gap: float         # ref vs double-resolution ref

    def to_dict(self) -> dict:
        return {"quantity": self.quantity, "h": list(self.h),
                "errors": list(self.errors),
                "pairwise_orders": list(self.pairwise_orders),
                "slope": self.slope, "reference_gap": self.reference_gap}


def _lagrange_eval(nodes, vals, tau):
    """Value at tau of the interpolating polynomial through
    (nodes[i], vals[i]); vals rows are vectors."""
    out = np.zeros_like(vals[0])
    for i in range(len(nodes)):
        w = 1.0
        for l in range(len(nodes)):
            if l != i:
                w *= (tau - nodes[l]) / (nodes[i] - nodes[l])
        out = out + w * vals[i]
    return out


class _RunData:
    """One study run plus whatever the requested quantity needs."""

    def __init__(self, ocp, grid, spi, quantity, functional, tab, opts):
        self.spi = spi
        self.traj = integrate(ocp, grid, spi, tab=tab, opts=opts)
        if self.traj.transitions:
            kinds = ", ".join(self.traj.transition_kinds())
            raise ValidationError(
                f"problem: order study needs a transition-free horizon, got [{kinds}]",
                field="problem")
        self.adj = None
        self.grad = None
        if quantity in ("adjoint_endpoint", "adjoint_stage", "gradient"):
            self.adj = run_adjoint(ocp, self.traj, grid, functional, tab=tab,
                                   eps_tan=opts.eps_tan)
        if quantity == "gradient":
            self.grad = reduced_gradient(ocp, self.traj, grid, self.adj, tab=tab)


def _measure(quantity: str, run: _RunData, ref: _RunData, tab) -> float:
    """Max-norm error of the run against the reference.

    Meshes nest, so node comparisons go by index; stage comparisons
    evaluate the reference's collocation cubic at the run's stage times
    (interior stages only; the last abscissa is the step endpoint)."""
    # steps per interval differ by an integer ratio; nodes align at
    # index k * ratio
    ratio = ref.spi // run.spi
    K = run.traj.K

    if quantity == "gradient":
        return float(np.max(np.abs(run.grad - ref.grad)))

    if quantity == "state_endpoint":
        idx = np.arange(K + 1) * ratio
        return float(np.max(np.abs(run.traj.x - ref.traj.x[idx])))

    if quantity == "adjoint_endpoint":
        idx = np.arange(K + 1) * ratio
        return float(np.max(np.abs(run.adj.lam - ref.adj.lam[idx])))

    c = tab.c
    err = 0.0
    for k in range(K):
        for i in range(len(c) - 1):        # interior stages c_1, c_2
            pos = c[i] * ratio
            sub = int(np.floor(pos))
            tau = pos - sub
            j = k * ratio + sub
            if quantity == "state_stage":
                nodes = (0.0, c[0], c[1], 1.0)
                vals = (ref.traj.x[j], ref.traj.stages_x[j][0],
                        ref.traj.stages_x[j][1], ref.traj.x[j + 1])
                approx = run.traj.stages_x[k][i]
            else:                          # adjoint_stage
                nodes = (0.0, c[0], c[1], 1.0)
                vals = (ref.adj.lam[j], ref.adj.stage_lams[j][0],
                        ref.adj.stage_lams[j][1], ref.adj.lam[j + 1])
                approx = run.adj.stage_lams[k][i]
            exact = _lagrange_eval(nodes, vals, tau)
            err = max(err, float(np.max(np.abs(approx - exact))))
    return err


def order_study(ocp: HybridOCP, grid: ControlGrid, quantity: str, hs,
                functional: Optional[EndpointFunctional] = None,
                tab: Optional[ButcherTableau] = None,
                opts: Optional[IntegratorOptions] = None,
                ref_factor: Optional[int] = None) -> OrderReport:
    """Self-convergence study of one quantity over a ladder of step sizes.

    Every h must put an integer number of steps in each control interval
    and nest into the reference mesh.  The two references (ref_factor and
    2*ref_factor times the finest resolution) must agree to 1e-12 at the
    comparison points, otherwise the study is not trustworthy and
    ReferenceUnconverged is raised.

    ref_factor defaults to 8, except for the stage multipliers whose
    reference converges at third order only and needs 64 times the finest
    resolution to clear the agreement gate.
    """
    if ref_factor is None:
        ref_factor = 64 if quantity == "adjoint_stage" else 8
    if quantity not in QUANTITIES:
        raise ValidationError(
            f"quantity: unknown {quantity!r}; one of {', '.join(QUANTITIES)}",
            field="quantity")
    hs = [float(h) for h in hs]
    if len(hs) < 2:
        raise ValidationError("h: need at least two step sizes", field="h")
    for a, b in zip(hs, hs[1:]):
        if not b < a:
            raise ValidationError(f"h: must be strictly decreasing, got {a} before {b}",
                                  field="h")
    functional = functional if functional is not None else ocp.phi
    tab = tab if tab is not None else radau_iia_3()
    opts = opts if opts is not None else IntegratorOptions()

    span = (grid.tf - grid.t0) / grid.N
    spis = []
    for h in hs:
        spi = span / h
        if not h > 0 or abs(spi - round(spi)) > 1e-9 * max(1.0, abs(spi)):
            raise ValidationError(
                f"h: {h} does not give a whole number of steps per control interval "
                f"(interval span {span})", field="h")
        spis.append(int(round(spi)))

    spi_ref = ref_factor * spis[-1]
    for h, spi in zip(hs, spis):
        if spi_ref % spi:
            raise ValidationError(f"h: {h} does not nest into the reference mesh",
                                  field="h")

    ref = _RunData(ocp, grid, spi_ref, quantity, functional, tab, opts)
    ref2 = _RunData(ocp, grid, 2 * spi_ref, quantity, functional, tab, opts)
    gap = _measure(quantity, ref, ref2, tab)
    if gap > 1e-12:
        raise ReferenceUnconverged(
            f"references at {spi_ref} and {2 * spi_ref} steps per interval "
            f"disagree by {gap:.3e}", quantity=quantity, gap=gap)

    errors = []
    for spi in spis:
        run = _RunData(ocp, grid, spi, quantity, functional, tab, opts)
        err = _measure(quantity, run, ref, tab)
        if not err > 0.0:
            raise ValidationError(
                f"h: error at h={span/spi} is exactly zero; no resolution dependence "
                f"to fit", field="h")
        errors.append(err)

    pairwise = [float(np.log(errors[i] / errors[i + 1]) / np.log(hs[i] / hs[i + 1]))
                for i in range(len(hs) - 1)]
    lh = np.log(hs)
    le = np.log(errors)
    slope = float(np.polyfit(lh, le, 1)[0])
    return OrderReport(quantity=quantity, h=hs, errors=errors,
                       pairwise_orders=pairwise, slope=slope,
                       reference_gap=gap)
