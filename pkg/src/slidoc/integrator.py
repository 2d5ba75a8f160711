"""Radau IIA integration of the hybrid system.

The mesh is built from the control breakpoints: every interval [t_n,
t_{n+1}] is cut into steps_per_interval equal steps, so breakpoints are
bit-exact mesh nodes and no step ever straddles a control jump.  Surface
events are located inside a step by shrinking the step until the event
function is below tolerance; the located point is committed as a mesh
node, the transition is classified and recorded, and integration resumes
toward the same base node with the new mode.

Off the surface the state advances with step_ode (stage equations of the
3-stage Radau IIA scheme, full Newton).  On the surface it advances with
step_sliding, which solves the index-2 stage system

    x_i = x + h sum_j a_ij (f_F(x_j, u) + g_x(x_j)^T z_j)
    0   = g(x_i)

whose multiplier z vanishes identically in exact arithmetic; its computed
size is a diagnostic for the discretization.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import (ChatteringLimit, NewtonDivergence, NoBracket,
                     SingularIteration, TangentialAmbiguity)
from .model import (ControlGrid, EntryKind, HybridOCP, Mode, TransitionKind,
                    alpha, entry_test, exit_test, filippov_field,
                    filippov_jacobians)
from .tableau import ButcherTableau, radau_iia_3


@dataclass(frozen=True)
class IntegratorOptions:
    newton_tol: float = 1e-12
    max_newton_iters: int = 25
    event_tol: float = 1e-10
    surface_tol: float = 1e-9
    eps_tan: float = 1e-10
    eps_den: float = 1e-12
    max_transitions_per_interval: int = 100
    max_event_iters: int = 80


@dataclass(frozen=True)
class TransitionRecord:
    kind: TransitionKind
    t: float
    k: int                 # node index in the committed mesh
    x_minus: np.ndarray
    x_plus: np.ndarray

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "t_t": self.t, "k": self.k,
                "x_minus": list(map(float, self.x_minus)),
                "x_plus": list(map(float, self.x_plus))}


@dataclass
class Trajectory:
    """Committed mesh with endpoint states, stage data and transitions.

    Arrays are indexed by node k = 0..K (states) and step k = 0..K-1
    (everything else).  stages_z[k] is None on non-sliding steps.  mode
    and field_id describe the step, ctrl[k] is the control interval the
    step belongs to, and breakpoint_nodes[n] is the node index of t_n.
    """

    times: np.ndarray
    x: np.ndarray
    h: np.ndarray
    mode: list
    field_id: list
    ctrl: np.ndarray
    stages_x: list
    stages_z: list
    z_node: np.ndarray
    transitions: list
    breakpoint_nodes: np.ndarray
    terminal_mode: Mode
    spi: int

    @property
    def K(self) -> int:
        return self.h.shape[0]

    def transition_kinds(self) -> list:
        return [rec.kind.value for rec in self.transitions]


# ---------------------------------------------------------------------------
# single steps


def step_ode(ocp: HybridOCP, field_id: str, x: np.ndarray, u: np.ndarray,
             h: float, tab: ButcherTableau, opts: IntegratorOptions):
    """One implicit Runge-Kutta step of x' = f(x, u) with f chosen by
    field_id ('f1', 'f2', or 'ff' for the sliding blend used as a plain
    ODE).  Returns (stages, x_plus) with stages of shape (s, n).
    """
    n = ocp.n
    s = tab.s
    A, b = tab.A, tab.b

    if field_id == "ff":
        def fval(xx):
            return filippov_field(ocp, xx, u, eps_den=opts.eps_den)[0]

        def fjac(xx):
            return filippov_jacobians(ocp, xx, u, eps_den=opts.eps_den)[1]
    else:
        f, f_x, _ = ocp.field(field_id)
        fval = lambda xx: f(xx, u)
        fjac = lambda xx: f_x(xx, u)

    Y = np.tile(x, (s, 1))
    for it in range(opts.max_newton_iters + 1):
        fy = np.array([fval(Y[i]) for i in range(s)])
        res = Y - x[None, :] - h * (A @ fy)
        if np.max(np.abs(res)) <= opts.newton_tol:
            x_plus = x + h * (b @ fy)
            return Y, x_plus
        if it == opts.max_newton_iters:
            break
        J = np.eye(s * n)
        for j in range(s):
            fx_j = fjac(Y[j])
            for i in range(s):
                J[i * n:(i + 1) * n, j * n:(j + 1) * n] -= h * A[i, j] * fx_j
        try:
            delta = np.linalg.solve(J, -res.reshape(s * n))
        except np.linalg.LinAlgError as exc:
            raise SingularIteration(f"stage Newton matrix singular at h = {h:.3e}: {exc}") from exc
        Y = Y + delta.reshape(s, n)
    raise NewtonDivergence(
        f"stage Newton stalled after {opts.max_newton_iters} iterations "
        f"(h = {h:.3e}, residual = {np.max(np.abs(res)):.3e})",
        residual=float(np.max(np.abs(res))), h=h)


def step_sliding(ocp: HybridOCP, x: np.ndarray, u: np.ndarray, h: float,
                 tab: ButcherTableau, opts: IntegratorOptions):
    """One stiffly-accurate step of the sliding index-2 system.

    Unknowns are the stage states and stage multipliers, interleaved as
    (x_1, z_1, ..., x_s, z_s).  Returns (stages_x, stages_z, x_plus,
    z_plus); z_plus is the last stage multiplier.
    """
    n = ocp.n
    s = tab.s
    A, b = tab.A, tab.b
    dim = s * (n + 1)

    X = np.tile(x, (s, 1))
    Z = np.zeros(s)

    def rhs_terms():
        # f_F + g_x^T z and the pieces needed for both residual and Jacobian
        vals = []
        for j in range(s):
            fF, fF_x, _, _, _, _ = filippov_jacobians(ocp, X[j], u, eps_den=opts.eps_den)
            gx = ocp.g_x(X[j])
            gxx = ocp.g_xx(X[j])
            vals.append((fF, fF_x, gx, gxx))
        return vals

    for it in range(opts.max_newton_iters + 1):
        vals = rhs_terms()
        res = np.zeros(dim)
        for i in range(s):
            acc = np.zeros(n)
            for j in range(s):
                fF, _, gx, _ = vals[j]
                acc += A[i, j] * (fF + gx * Z[j])
            res[i * (n + 1):i * (n + 1) + n] = X[i] - x - h * acc
            res[i * (n + 1) + n] = ocp.g(X[i])
        if np.max(np.abs(res)) <= opts.newton_tol:
            acc = np.zeros(n)
            for j in range(s):
                fF, _, gx, _ = vals[j]
                acc += b[j] * (fF + gx * Z[j])
            x_plus = x + h * acc
            return X, Z.copy(), x_plus, float(Z[s - 1])
        if it == opts.max_newton_iters:
            break
        J = np.zeros((dim, dim))
        for i in range(s):
            ri = i * (n + 1)
            for j in range(s):
                cj = j * (n + 1)
                fF, fF_x, gx, gxx = vals[j]
                Jj = fF_x + Z[j] * gxx
                blk = -h * A[i, j] * Jj
                if i == j:
                    blk = blk + np.eye(n)
                J[ri:ri + n, cj:cj + n] = blk
                J[ri:ri + n, cj + n] = -h * A[i, j] * gx
            gx_i = ocp.g_x(X[i])
            J[ri + n, ri:ri + n] = gx_i
        try:
            delta = np.linalg.solve(J, -res)
        except np.linalg.LinAlgError as exc:
            raise SingularIteration(f"sliding stage matrix singular at h = {h:.3e}: {exc}") from exc
        for i in range(s):
            X[i] = X[i] + delta[i * (n + 1):i * (n + 1) + n]
            Z[i] = Z[i] + delta[i * (n + 1) + n]
    raise NewtonDivergence(
        f"sliding stage Newton stalled after {opts.max_newton_iters} iterations "
        f"(h = {h:.3e}, residual = {np.max(np.abs(res)):.3e})",
        residual=float(np.max(np.abs(res))), h=h)


# ---------------------------------------------------------------------------
# event localization


def locate_event(eval_at: Callable[[float], tuple], e0: float, h: float,
                 event_tol: float, max_iters: int = 80):
    """Find tau in (0, h] where the oriented event function crosses zero.

    eval_at(tau) -> (step_data, e) evaluates a trial step of size tau.
    e0 is the event value at tau = 0 (no step); the caller guarantees
    eval_at(h) has the opposite (negative) orientation.  Returns
    (tau, step_data, e) of an accepted trial with |e| <= event_tol, or
    (0.0, None, e0) when the event already sits at the step start.
    Safeguarded secant: every iterate stays inside the current bracket,
    falling back to bisection when the secant point leaves it.
    """
    if abs(e0) <= event_tol:
        return 0.0, None, e0
    if e0 < 0.0:
        raise NoBracket(f"event function already negative at step start (e0 = {e0:.3e})", e0=e0)

    lo, e_lo = 0.0, e0
    hi = h
    data_hi, e_hi = eval_at(hi)
    if abs(e_hi) <= event_tol:
        return hi, data_hi, e_hi
    if e_hi > 0.0:
        raise NoBracket(f"no sign change over the step (e(h) = {e_hi:.3e})", e_h=e_hi)

    best = (hi, data_hi, e_hi)
    for _ in range(max_iters):
        span = hi - lo
        tau = lo - e_lo * span / (e_hi - e_lo)  # secant through bracket ends
        if not (lo + 0.01 * span <= tau <= hi - 0.01 * span):
            tau = lo + 0.5 * span
        data, e = eval_at(tau)
        if abs(e) <= event_tol:
            return tau, data, e
        if abs(e) < abs(best[2]):
            best = (tau, data, e)
        if e > 0.0:
            lo, e_lo = tau, e
        else:
            hi, e_hi, data_hi = tau, e, data
        if hi - lo <= 1e-16 * h:
            break
    tau, data, e = best
    if abs(e) <= 10.0 * event_tol:
        return tau, data, e
    raise NoBracket(f"event localization stalled (best |e| = {abs(e):.3e})", best_e=e)


# ---------------------------------------------------------------------------
# the main loop


def _initial_mode(ocp: HybridOCP, x0: np.ndarray, u: np.ndarray,
                  opts: IntegratorOptions) -> Mode:
    g0 = ocp.g(x0)
    if g0 < -opts.surface_tol:
        return Mode.BELOW
    if g0 > opts.surface_tol:
        return Mode.ABOVE
    verdict = entry_test(ocp, x0, u, eps_tan=opts.eps_tan)
    if verdict is EntryKind.ENTER_SLIDING:
        return Mode.SLIDING
    w1 = float(ocp.g_x(x0) @ ocp.f1(x0, u))
    return Mode.ABOVE if w1 > 0.0 else Mode.BELOW


def _project_to_surface(ocp: HybridOCP, x: np.ndarray) -> np.ndarray:
    gx = ocp.g_x(x)
    return x - gx * (ocp.g(x) / float(gx @ gx))


def _classify_exit(ocp: HybridOCP, x: np.ndarray, u: np.ndarray, boundary: int,
                   eps_tan: float) -> TransitionKind:
    """Exit verdict at a located blend-weight boundary (0 or 1)."""
    gx = ocp.g_x(x)
    w1 = float(gx @ ocp.f1(x, u))
    w2 = float(gx @ ocp.f2(x, u))
    if boundary == 0:
        if w2 < -eps_tan:
            return TransitionKind.EXIT_TO_F1
        raise TangentialAmbiguity(
            f"blend weight reached 0 but w2 = {w2:.3e} is not decisively negative",
            w1=w1, w2=w2)
    if w1 > eps_tan:
        return TransitionKind.EXIT_TO_F2
    raise TangentialAmbiguity(
        f"blend weight reached 1 but w1 = {w1:.3e} is not decisively positive",
        w1=w1, w2=w2)


class _Builder:
    """Accumulates committed steps; keeps integrate() itself readable."""

    def __init__(self, ocp, t0, x0, spi):
        self.ocp = ocp
        self.times = [float(t0)]
        self.xs = [np.array(x0, dtype=float)]
        self.hs = []
        self.modes = []
        self.fields = []
        self.ctrl = []
        self.stages_x = []
        self.stages_z = []
        self.z_node = [0.0]
        self.transitions = []
        self.breakpoint_nodes = [0]
        self.spi = spi

    @property
    def k(self):
        return len(self.hs)

    def commit(self, t_new, x_new, h, mode, field_id, nctrl, stages, zstages, z_new):
        self.times.append(float(t_new))
        self.xs.append(np.array(x_new, dtype=float))
        self.hs.append(float(h))
        self.modes.append(mode)
        self.fields.append(field_id)
        self.ctrl.append(nctrl)
        self.stages_x.append(np.array(stages, dtype=float))
        self.stages_z.append(None if zstages is None else np.array(zstages, dtype=float))
        self.z_node.append(float(z_new))

    def record(self, kind, t, x_minus, x_plus):
        self.transitions.append(TransitionRecord(
            kind=kind, t=float(t), k=len(self.xs) - 1,
            x_minus=np.array(x_minus, dtype=float),
            x_plus=np.array(x_plus, dtype=float)))

    def finish(self, terminal_mode) -> Trajectory:
        return Trajectory(
            times=np.array(self.times), x=np.array(self.xs), h=np.array(self.hs),
            mode=self.modes, field_id=self.fields, ctrl=np.array(self.ctrl, dtype=int),
            stages_x=self.stages_x, stages_z=self.stages_z,
            z_node=np.array(self.z_node), transitions=self.transitions,
            breakpoint_nodes=np.array(self.breakpoint_nodes, dtype=int),
            terminal_mode=terminal_mode, spi=self.spi)


def integrate(ocp: HybridOCP, grid: ControlGrid, steps_per_interval: int = 8,
              tab: Optional[ButcherTableau] = None,
              opts: Optional[IntegratorOptions] = None) -> Trajectory:
    """Integrate the hybrid system over [t0, tf] with piecewise-constant
    control, localizing and recording every surface transition.
    """
    tab = tab if tab is not None else radau_iia_3()
    opts = opts if opts is not None else IntegratorOptions()
    spi = int(steps_per_interval)
    if spi < 1:
        raise ValueError("steps_per_interval must be >= 1")

    bp = grid.breakpoints()
    N = grid.N
    mode = _initial_mode(ocp, ocp.x0, grid.values[0], opts)
    bld = _Builder(ocp, grid.t0, ocp.x0, spi)

    x = np.array(ocp.x0, dtype=float)
    t = float(grid.t0)

    for n in range(N):
        u = grid.values[n]
        nodes = np.linspace(bp[n], bp[n + 1], spi + 1)
        n_transitions = 0

        def note_transition():
            nonlocal n_transitions
            n_transitions += 1
            if n_transitions > opts.max_transitions_per_interval:
                raise ChatteringLimit(
                    f"more than {opts.max_transitions_per_interval} transitions in "
                    f"control interval {n}", interval=n)

        # a control jump can throw the blend weight out of [0, 1] at the
        # very start of the interval: exit immediately at the breakpoint
        if mode is Mode.SLIDING:
            verdict = exit_test(ocp, x, u, eps_den=opts.eps_den, eps_tan=opts.eps_tan)
            if verdict is not None:
                bld.record(verdict, t, x, x)
                bld.z_node[-1] = 0.0
                note_transition()
                mode = Mode.BELOW if verdict is TransitionKind.EXIT_TO_F1 else Mode.ABOVE

        for j in range(spi):
            target = nodes[j + 1]
            while True:
                h = target - t
                if h <= 1e-13 * max(1.0, abs(target)):
                    # within roundoff of the base node: snap instead of
                    # taking a degenerate step, so nodes stay bit-exact
                    t = target
                    bld.times[-1] = target
                    break
                if mode is Mode.SLIDING:
                    t, x, mode = _advance_sliding(ocp, bld, t, x, u, h, n, tab, opts,
                                                  note_transition)
                else:
                    t, x, mode = _advance_ode(ocp, bld, t, x, u, h, n, mode, tab, opts,
                                              note_transition)
        bld.breakpoint_nodes.append(len(bld.xs) - 1)

    return bld.finish(mode)


def _advance_ode(ocp, bld, t, x, u, h, nctrl, mode, tab, opts, note_transition):
    """Try a full step in an off-surface mode; shrink to a located event
    when the endpoint (or an internal stage) lands beyond the surface."""
    field_id = "f1" if mode is Mode.BELOW else "f2"
    sgn = -1.0 if mode is Mode.BELOW else 1.0   # interior sign of g

    stages, x_try = step_ode(ocp, field_id, x, u, h, tab, opts)
    e_end = sgn * ocp.g(x_try)   # positive while we stay in our region

    stage_dip = min(sgn * ocp.g(stages[i]) for i in range(tab.s))
    if e_end < -opts.surface_tol or stage_dip < -opts.surface_tol:
        def eval_at(tau):
            st, xp = step_ode(ocp, field_id, x, u, tau, tab, opts)
            return (st, xp), sgn * ocp.g(xp)

        hi = h
        if e_end >= -opts.surface_tol:
            # the endpoint came back; bracket on the first offending stage time
            hi = None
            for ci in tab.c:
                _, e_probe = eval_at(ci * h)
                if e_probe < -opts.surface_tol:
                    hi = ci * h
                    break
            if hi is None:
                raise NoBracket("stage values dip through the surface but no trial "
                                "endpoint does", stage_dip=float(stage_dip))
        tau, data, _ = locate_event(eval_at, sgn * ocp.g(x), hi,
                                    opts.event_tol, opts.max_event_iters)
        if tau == 0.0:
            # event sits at the step start; classify without advancing
            return _process_surface_point(ocp, bld, t, x, u, mode, opts, note_transition)
        st, xp = data
        bld.commit(t + tau, xp, tau, mode, field_id, nctrl, st, None, 0.0)
        return _process_surface_point(ocp, bld, t + tau, xp, u, mode, opts, note_transition)

    bld.commit(t + h, x_try, h, mode, field_id, nctrl, stages, None, 0.0)
    if abs(ocp.g(x_try)) <= opts.surface_tol:
        # grazed onto the surface exactly at the node
        return _process_surface_point(ocp, bld, t + h, x_try, u, mode, opts, note_transition)
    return t + h, x_try, mode


def _process_surface_point(ocp, bld, t, x, u, mode, opts, note_transition):
    """Classify and record what happens at a state sitting on the surface."""
    verdict = entry_test(ocp, x, u, eps_tan=opts.eps_tan)
    if verdict is EntryKind.ENTER_SLIDING:
        x_new = x
        if abs(ocp.g(x)) > opts.surface_tol:
            x_new = _project_to_surface(ocp, x)
        bld.xs[-1] = np.array(x_new, dtype=float)
        bld.z_node[-1] = 0.0
        bld.record(TransitionKind.ENTER_SLIDING, t, x, x_new)
        note_transition()
        return t, x_new, Mode.SLIDING
    kind = TransitionKind.CROSS_12 if mode is Mode.BELOW else TransitionKind.CROSS_21
    bld.record(kind, t, x, x)
    note_transition()
    new_mode = Mode.ABOVE if mode is Mode.BELOW else Mode.BELOW
    return t, x, new_mode


def _advance_sliding(ocp, bld, t, x, u, h, nctrl, tab, opts, note_transition):
    """Try a full sliding step; shrink to the blend-weight boundary when
    the weight leaves [0, 1]."""
    Xs, Zs, x_try, z_try = step_sliding(ocp, x, u, h, tab, opts)
    a_end = alpha(ocp, x_try, u, eps_den=opts.eps_den)

    if 0.0 < a_end < 1.0:
        bld.commit(t + h, x_try, h, Mode.SLIDING, "fF", nctrl, Xs, Zs, z_try)
        return t + h, x_try, Mode.SLIDING

    boundary = 0 if a_end <= 0.0 else 1
    a0 = alpha(ocp, x, u, eps_den=opts.eps_den)
    orient = 1.0 if boundary == 0 else -1.0    # oriented distance into (0, 1)

    def eval_at(tau):
        data = step_sliding(ocp, x, u, tau, tab, opts)
        return data, orient * (alpha(ocp, data[2], u, eps_den=opts.eps_den) - boundary)

    tau, data, _ = locate_event(eval_at, orient * (a0 - boundary), h,
                                opts.event_tol, opts.max_event_iters)
    if tau == 0.0:
        kind = _classify_exit(ocp, x, u, boundary, opts.eps_tan)
        bld.record(kind, t, x, x)
        bld.z_node[-1] = 0.0
        note_transition()
        return t, x, Mode.BELOW if kind is TransitionKind.EXIT_TO_F1 else Mode.ABOVE

    Xs, Zs, xp, zp = data
    bld.commit(t + tau, xp, tau, Mode.SLIDING, "fF", nctrl, Xs, Zs, zp)
    kind = _classify_exit(ocp, xp, u, boundary, opts.eps_tan)
    bld.record(kind, t + tau, xp, xp)
    note_transition()
    bld.z_node[-1] = 0.0
    return t + tau, xp, Mode.BELOW if kind is TransitionKind.EXIT_TO_F1 else Mode.ABOVE
