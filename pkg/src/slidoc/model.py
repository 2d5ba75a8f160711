"""Problem container and Filippov surface algebra.

A HybridOCP bundles two smooth vector fields f1, f2 separated by a scalar
switching surface g(x) = 0, an endpoint cost, optional endpoint
constraints, and the control box.  This module also owns the pointwise
algebra on the surface: the convex combination weight alpha, the sliding
field, its Jacobians, and the sign tests that classify what happens when
a trajectory meets the surface.

Conventions: region "below" is g < 0 and flows with f1, region "above"
is g > 0 and flows with f2.  g_x is stored as a 1-D array of length n.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DegenerateDenominator, DimensionMismatch, TangentialAmbiguity


class Mode(enum.Enum):
    BELOW = "below"
    ABOVE = "above"
    SLIDING = "sliding"


class TransitionKind(enum.Enum):
    """What happened at a surface event.  Values are the wire names used
    in CSV/JSON output."""

    CROSS_12 = "Cross12"
    CROSS_21 = "Cross21"
    ENTER_SLIDING = "EnterSliding"
    EXIT_TO_F1 = "ExitToF1"
    EXIT_TO_F2 = "ExitToF2"


class EntryKind(enum.Enum):
    """Verdict of entry_test: either the trajectory passes through the
    surface or it is captured."""

    CROSS = "cross"
    ENTER_SLIDING = "enter_sliding"


@dataclass(frozen=True)
class EndpointFunctional:
    """Scalar function of the final state with its gradient."""

    value: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    name: str = "w"


@dataclass(frozen=True)
class HybridOCP:
    """Two-field hybrid optimal control problem with one switching surface.

    Field callables take (x, u) and return arrays: f(x,u) -> (n,),
    f_x(x,u) -> (n,n), f_u(x,u) -> (n,m).  Surface callables take x alone:
    g -> float, g_x -> (n,), g_xx -> (n,n).  phi is the endpoint cost;
    g1/g2 are endpoint equality/inequality constraint functionals.
    """

    name: str
    n: int
    m: int
    f1: Callable
    f1_x: Callable
    f1_u: Callable
    f2: Callable
    f2_x: Callable
    f2_u: Callable
    g: Callable
    g_x: Callable
    g_xx: Callable
    phi: EndpointFunctional
    x0: np.ndarray
    t0: float
    tf: float
    u_lo: np.ndarray
    u_hi: np.ndarray
    g1: tuple = ()
    g2: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float))
        object.__setattr__(self, "u_lo", np.asarray(self.u_lo, dtype=float))
        object.__setattr__(self, "u_hi", np.asarray(self.u_hi, dtype=float))
        if self.x0.shape != (self.n,):
            raise DimensionMismatch(f"x0 has shape {self.x0.shape}, expected ({self.n},)")
        if self.u_lo.shape != (self.m,) or self.u_hi.shape != (self.m,):
            raise DimensionMismatch("control box shape does not match m")

    def field(self, which: str):
        """Return (f, f_x, f_u) for field id 'f1' or 'f2'."""
        if which == "f1":
            return self.f1, self.f1_x, self.f1_u
        if which == "f2":
            return self.f2, self.f2_x, self.f2_u
        raise ValueError(f"unknown field id {which!r}")


@dataclass(frozen=True)
class ControlGrid:
    """Piecewise-constant control on N uniform intervals of [t0, tf]."""

    t0: float
    tf: float
    values: np.ndarray  # (N, m)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2:
            raise DimensionMismatch(f"control values must be (N, m), got shape {v.shape}")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def N(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]

    def breakpoints(self) -> np.ndarray:
        """Interval endpoints t_0 < t_1 < ... < t_N, computed once so that
        every consumer sees bit-identical node values."""
        N = self.N
        return self.t0 + (self.tf - self.t0) * np.arange(N + 1) / N

    def with_values(self, values: np.ndarray) -> "ControlGrid":
        return ControlGrid(self.t0, self.tf, np.asarray(values, dtype=float))


# ---------------------------------------------------------------------------
# surface algebra


def _w12(ocp: HybridOCP, x: np.ndarray, u: np.ndarray):
    """Normal speeds w1 = g_x f1 and w2 = g_x f2 at (x, u)."""
    gx = ocp.g_x(x)
    return float(gx @ ocp.f1(x, u)), float(gx @ ocp.f2(x, u))


def alpha(ocp: HybridOCP, x: np.ndarray, u: np.ndarray,
          eps_den: float = 1e-12) -> float:
    """Convex weight alpha = g_x f1 / (g_x (f1 - f2)) of the sliding field.

    Raises DegenerateDenominator when the two normal speeds are too close
    for the quotient to be meaningful; the threshold scales with the size
    of the speeds themselves.
    """
    w1, w2 = _w12(ocp, x, u)
    den = w1 - w2
    scale = max(1.0, abs(w1) + abs(w2))
    if abs(den) <= eps_den * scale:
        raise DegenerateDenominator(
            f"g_x(f1 - f2) = {den:.3e} with speeds w1 = {w1:.3e}, w2 = {w2:.3e}",
            w1=w1, w2=w2)
    return w1 / den


def filippov_field(ocp: HybridOCP, x: np.ndarray, u: np.ndarray,
                   eps_den: float = 1e-12):
    """Sliding vector field f_F = (1 - alpha) f1 + alpha f2 and alpha.

    By construction g_x f_F = 0: the field is tangent to the surface.
    """
    a = alpha(ocp, x, u, eps_den=eps_den)
    fF = (1.0 - a) * ocp.f1(x, u) + a * ocp.f2(x, u)
    return fF, a


def filippov_jacobians(ocp: HybridOCP, x: np.ndarray, u: np.ndarray,
                       eps_den: float = 1e-12):
    """Sliding field with its state and control Jacobians.

    Returns (fF, fF_x, fF_u, a, a_x, a_u).  Differentiating the quotient
    alpha = w1 / (w1 - w2) with w_i = g_x(x) f_i(x, u):

        dw_i/dx = f_i^T g_xx + g_x f_i,x      (row)
        a_x = (dw1/dx - a (dw1/dx - dw2/dx)) / (w1 - w2)

    and analogously in u (where g_xx does not enter).
    """
    gx = ocp.g_x(x)
    gxx = ocp.g_xx(x)
    f1v, f2v = ocp.f1(x, u), ocp.f2(x, u)
    f1x, f2x = ocp.f1_x(x, u), ocp.f2_x(x, u)
    f1u, f2u = ocp.f1_u(x, u), ocp.f2_u(x, u)

    w1 = float(gx @ f1v)
    w2 = float(gx @ f2v)
    den = w1 - w2
    scale = max(1.0, abs(w1) + abs(w2))
    if abs(den) <= eps_den * scale:
        raise DegenerateDenominator(
            f"g_x(f1 - f2) = {den:.3e} with speeds w1 = {w1:.3e}, w2 = {w2:.3e}",
            w1=w1, w2=w2)
    a = w1 / den

    dw1_dx = f1v @ gxx + gx @ f1x
    dw2_dx = f2v @ gxx + gx @ f2x
    a_x = (dw1_dx - a * (dw1_dx - dw2_dx)) / den

    dw1_du = gx @ f1u
    dw2_du = gx @ f2u
    a_u = (dw1_du - a * (dw1_du - dw2_du)) / den

    fF = (1.0 - a) * f1v + a * f2v
    diff = f2v - f1v
    fF_x = (1.0 - a) * f1x + a * f2x + np.outer(diff, a_x)
    fF_u = (1.0 - a) * f1u + a * f2u + np.outer(diff, a_u)
    return fF, fF_x, fF_u, a, a_x, a_u


def entry_test(ocp: HybridOCP, x: np.ndarray, u: np.ndarray,
               eps_tan: float = 1e-10) -> EntryKind:
    """Classify arrival at the surface from the normal speeds w1, w2.

    Same nonzero sign on both: the trajectory crosses.  Opposite signs
    with w1 pushing up and w2 pushing down: both fields point at the
    surface and sliding starts.  Speeds within eps_tan of zero cannot be
    classified and raise TangentialAmbiguity.
    """
    w1, w2 = _w12(ocp, x, u)
    if abs(w1) <= eps_tan or abs(w2) <= eps_tan:
        raise TangentialAmbiguity(
            f"normal speeds w1 = {w1:.3e}, w2 = {w2:.3e} within eps_tan = {eps_tan:.1e}",
            w1=w1, w2=w2)
    if w1 > 0.0 and w2 > 0.0:
        return EntryKind.CROSS
    if w1 < 0.0 and w2 < 0.0:
        return EntryKind.CROSS
    if w1 > 0.0 and w2 < 0.0:
        return EntryKind.ENTER_SLIDING
    # w1 < 0 < w2: both fields leave the surface; the solution is not unique.
    raise TangentialAmbiguity(
        f"repulsive surface: w1 = {w1:.3e} < 0 < w2 = {w2:.3e}", w1=w1, w2=w2)


def exit_test(ocp: HybridOCP, x: np.ndarray, u: np.ndarray,
              eps_den: float = 1e-12,
              eps_tan: float = 1e-10) -> Optional[TransitionKind]:
    """Decide whether sliding has ended at (x, u).

    Returns None while alpha stays inside [0, 1].  At alpha <= 0 the blend
    has degenerated to f1; sliding ends towards g < 0 provided f2 still
    points down decisively (w2 < -eps_tan).  Symmetrically at alpha >= 1.
    Sign patterns that fit neither case raise TangentialAmbiguity.
    """
    w1, w2 = _w12(ocp, x, u)
    den = w1 - w2
    scale = max(1.0, abs(w1) + abs(w2))
    if abs(den) <= eps_den * scale:
        raise DegenerateDenominator(
            f"g_x(f1 - f2) = {den:.3e} during sliding exit test", w1=w1, w2=w2)
    a = w1 / den
    if 0.0 < a < 1.0:
        return None
    if a <= 0.0:
        if w2 < -eps_tan:
            return TransitionKind.EXIT_TO_F1
        raise TangentialAmbiguity(
            f"alpha = {a:.3e} at exit but w2 = {w2:.3e} is not decisively negative",
            w1=w1, w2=w2, alpha=a)
    # a >= 1
    if w1 > eps_tan:
        return TransitionKind.EXIT_TO_F2
    raise TangentialAmbiguity(
        f"alpha = {a:.3e} at exit but w1 = {w1:.3e} is not decisively positive",
        w1=w1, w2=w2, alpha=a)
