"""Discrete adjoint sweeps consistent with the forward discretization.

Each forward step defines an implicit map F(X(k+1), X(k), u) = 0 from the
previous endpoint state to the new stages and endpoint.  The adjoint of
one step is

    F_{X+}^T(k) R(k) = Lambda(k+1),      Lambda(k) = -F_X^T(k) R(k),

solved backwards from the endpoint gradient of the functional.  Only the
endpoint slot of Lambda is ever nonzero (stages of one step never enter
the next), so the sweep carries a vector of length n between steps.

For off-surface steps the solve collapses to a stage recursion in the
reversed-time table a~_ij = a_ji b_j / b_i (adjoint_step_transformed);
the assembled version (adjoint_step_matrix) is kept as the oracle the
two-route tests compare against.  Sliding steps use the assembled form
of the index-2 stage system directly.

At transition nodes the multiplier jumps by pi * g_x^T.  For crossings
and sliding entries pi is pinned by continuity of the Hamiltonian across
the event; for sliding exits (seen backwards: off-surface to sliding) it
is pinned by the algebraic condition g_x lambda = 0 on the sliding side,
and Hamiltonian continuity then holds automatically because g_x f_j = 0
at the blend-weight boundary.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (MeshMismatch, SingularJumpSystem, SingularSystem,
                     SingularTerminalSystem)
from .integrator import Trajectory
from .model import (ControlGrid, EndpointFunctional, HybridOCP, Mode,
                    TransitionKind, filippov_jacobians)
from .tableau import ButcherTableau, adjoint_tableau, radau_iia_3


@dataclass
class AdjointTrajectory:
    """Backward sweep results on the forward mesh.

    lam[k] is the multiplier at node k; at a transition node it is the
    minus-side value (the one step k-1 continues from), with the jump
    size recorded in jumps.  lam_g[k] is the algebraic multiplier on
    sliding nodes, zero elsewhere.  stage_lams[k] holds the transformed
    stage multipliers on off-surface steps and None on sliding steps,
    whose raw step multipliers live in sliding_R for gradient assembly.
    """

    functional: str
    times: np.ndarray
    lam: np.ndarray
    lam_g: np.ndarray
    stage_lams: list
    sliding_R: dict
    jumps: list
    nu1: Optional[float]
    ode_R: dict = field(default_factory=dict)   # filled by the matrix backend only

    @property
    def K(self) -> int:
        return self.lam.shape[0] - 1


# ---------------------------------------------------------------------------
# single-step sweeps, off-surface


def _ode_stage_jacobians(ocp: HybridOCP, traj: Trajectory, k: int, u: np.ndarray):
    f, f_x, _ = ocp.field(traj.field_id[k])
    return [f_x(traj.stages_x[k][i], u) for i in range(traj.stages_x[k].shape[0])]


def adjoint_step_transformed(ocp: HybridOCP, traj: Trajectory, k: int,
                             u: np.ndarray, lam_plus: np.ndarray,
                             tab: ButcherTableau):
    """Stage recursion in the reversed-time table.

    Solves   lam_i = lam_plus + h sum_j a~_ij f_x^T(x_j(k+1), u) lam_j
    and      lam_k = lam_plus + h sum_i b_i f_x^T(x_i(k+1), u) lam_i.
    Returns (stage multipliers (s, n), lam_k).
    """
    n = ocp.n
    s = tab.s
    h = traj.h[k]
    atab = adjoint_tableau(tab)
    fxs = _ode_stage_jacobians(ocp, traj, k, u)

    M = np.eye(s * n)
    for i in range(s):
        for j in range(s):
            M[i * n:(i + 1) * n, j * n:(j + 1) * n] -= h * atab.A[i, j] * fxs[j].T
    rhs = np.tile(lam_plus, s)
    try:
        sol = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(f"transformed adjoint stage system singular at step {k}") from exc
    lam_stages = sol.reshape(s, n)
    lam_k = lam_plus + h * sum(tab.b[i] * (fxs[i].T @ lam_stages[i]) for i in range(s))
    return lam_stages, lam_k


def assemble_ode_step_matrices(ocp: HybridOCP, traj: Trajectory, k: int,
                               u: np.ndarray, tab: ButcherTableau):
    """Dense F_{X+}, F_X and F_u of an off-surface step, in the block
    layout (x_1, ..., x_s, x(k+1)) by (stage rows, endpoint row)."""
    n, m = ocp.n, ocp.m
    s = tab.s
    h = traj.h[k]
    fxs = _ode_stage_jacobians(ocp, traj, k, u)
    _, _, f_u = ocp.field(traj.field_id[k])
    fus = [f_u(traj.stages_x[k][i], u) for i in range(s)]

    dim = (s + 1) * n
    FXp = np.zeros((dim, dim))
    for i in range(s):
        for j in range(s):
            blk = -h * tab.A[i, j] * fxs[j]
            if i == j:
                blk = blk + np.eye(n)
            FXp[i * n:(i + 1) * n, j * n:(j + 1) * n] = blk
    for j in range(s):
        FXp[s * n:, j * n:(j + 1) * n] = -h * tab.b[j] * fxs[j]
    FXp[s * n:, s * n:] = np.eye(n)

    FX = np.zeros((dim, dim))
    for i in range(s + 1):
        FX[i * n:(i + 1) * n, s * n:] = -np.eye(n)

    Fu = np.zeros((dim, m))
    for i in range(s):
        Fu[i * n:(i + 1) * n] = -h * sum(tab.A[i, j] * fus[j] for j in range(s))
    Fu[s * n:] = -h * sum(tab.b[j] * fus[j] for j in range(s))
    return FXp, FX, Fu


def adjoint_step_matrix(ocp: HybridOCP, traj: Trajectory, k: int,
                        u: np.ndarray, Lambda_plus: np.ndarray,
                        tab: ButcherTableau):
    """Assembled one-step adjoint.  Lambda_plus is the full padded vector
    ((s+1) n,); returns (Lambda_k, R)."""
    FXp, FX, _ = assemble_ode_step_matrices(ocp, traj, k, u, tab)
    try:
        R = np.linalg.solve(FXp.T, Lambda_plus)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(f"matrix-form adjoint system singular at step {k}") from exc
    Lambda_k = -FX.T @ R
    return Lambda_k, R


# ---------------------------------------------------------------------------
# single-step sweep, sliding


def assemble_sliding_step_matrices(ocp: HybridOCP, traj: Trajectory, k: int,
                                   u: np.ndarray, tab: ButcherTableau):
    """Dense F_{X+}, F_X and F_u of a sliding step.

    Unknown layout (x_1, z_1, ..., x_s, z_s, x(k+1)); equation layout
    (stage rows + constraint row per stage, endpoint row).  The stage
    state Jacobian is J_j = fF_x(x_j, u) + z_j g_xx(x_j), the derivative
    of f_F + g_x^T z through both arguments.
    """
    n, m = ocp.n, ocp.m
    s = tab.s
    h = traj.h[k]
    Xs = traj.stages_x[k]
    Zs = traj.stages_z[k]

    Js, gxs, fFus = [], [], []
    for j in range(s):
        fF, fF_x, fF_u, _, _, _ = filippov_jacobians(ocp, Xs[j], u)
        gx = ocp.g_x(Xs[j])
        Js.append(fF_x + Zs[j] * ocp.g_xx(Xs[j]))
        gxs.append(gx)
        fFus.append(fF_u)

    dim = s * (n + 1) + n
    FXp = np.zeros((dim, dim))
    for i in range(s):
        ri = i * (n + 1)
        for j in range(s):
            cj = j * (n + 1)
            blk = -h * tab.A[i, j] * Js[j]
            if i == j:
                blk = blk + np.eye(n)
            FXp[ri:ri + n, cj:cj + n] = blk
            FXp[ri:ri + n, cj + n] = -h * tab.A[i, j] * gxs[j]
        FXp[ri + n, ri:ri + n] = gxs[i]
    re = s * (n + 1)
    for j in range(s):
        cj = j * (n + 1)
        FXp[re:, cj:cj + n] = -h * tab.b[j] * Js[j]
        FXp[re:, cj + n] = -h * tab.b[j] * gxs[j]
    FXp[re:, re:] = np.eye(n)

    FX = np.zeros((dim, dim))
    for i in range(s):
        ri = i * (n + 1)
        FX[ri:ri + n, re:] = -np.eye(n)     # stage-diff rows see -x(k)
    FX[re:, re:] = -np.eye(n)               # endpoint row too; constraints do not

    Fu = np.zeros((dim, m))
    for i in range(s):
        ri = i * (n + 1)
        Fu[ri:ri + n] = -h * sum(tab.A[i, j] * fFus[j] for j in range(s))
    Fu[re:] = -h * sum(tab.b[j] * fFus[j] for j in range(s))
    return FXp, FX, Fu


def adjoint_step_sliding(ocp: HybridOCP, traj: Trajectory, k: int,
                         u: np.ndarray, lam_plus: np.ndarray,
                         tab: ButcherTableau):
    """One backward step through the sliding stage system.

    Returns (lam_k, R).  R keeps the raw step multipliers for the
    control-gradient assembly.
    """
    n = ocp.n
    FXp, FX, _ = assemble_sliding_step_matrices(ocp, traj, k, u, tab)
    dim = FXp.shape[0]
    Lam_plus = np.zeros(dim)
    Lam_plus[dim - n:] = lam_plus
    try:
        R = np.linalg.solve(FXp.T, Lam_plus)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(f"sliding adjoint system singular at step {k}") from exc
    Lambda_k = -FX.T @ R
    return Lambda_k[dim - n:], R


# ---------------------------------------------------------------------------
# terminal values and jumps


def lambda_g_pointwise(ocp: HybridOCP, x: np.ndarray, u: np.ndarray, z: float,
                       lam_f: np.ndarray) -> float:
    """Algebraic multiplier recovered from the state multiplier:

        lam_g = (g_x fF_x^T lam + z g_x g_xx lam - (g_xx x')^T lam) / (g_x g_x^T)

    with x' = f_F + g_x^T z the sliding velocity.
    """
    fF, fF_x, _, _, _, _ = filippov_jacobians(ocp, x, u)
    gx = ocp.g_x(x)
    gxx = ocp.g_xx(x)
    xdot = fF + gx * z
    den = float(gx @ gx)
    if den < 1e-30:
        raise SingularTerminalSystem("g_x vanishes; algebraic multiplier undefined")
    num = float((gx @ fF_x.T) @ lam_f) + z * float((gx @ gxx) @ lam_f) \
        - float((gxx @ xdot) @ lam_f)
    return num / den


def terminal_conditions(ocp: HybridOCP, traj: Trajectory, grid: ControlGrid,
                        w: EndpointFunctional):
    """Multiplier start values at tf.

    Off the surface this is just the functional gradient.  On the surface
    lam_f is w_x^T + nu1 g_x^T restricted to the tangent space, found
    from the (n+2) system in (lam_f, lam_g, nu1).
    """
    xK = traj.x[-1]
    wx = np.asarray(w.grad(xK), dtype=float)
    if traj.terminal_mode is not Mode.SLIDING:
        return wx, 0.0, None

    u = grid.values[traj.ctrl[-1]]
    z = float(traj.z_node[-1])
    fF, fF_x, _, _, _, _ = filippov_jacobians(ocp, xK, u)
    gx = ocp.g_x(xK)
    gxx = ocp.g_xx(xK)
    xdot = fF + gx * z

    n = ocp.n
    M = np.zeros((n + 2, n + 2))
    rhs = np.zeros(n + 2)
    M[:n, :n] = np.eye(n)
    M[:n, n + 1] = -gx
    rhs[:n] = wx
    M[n, :n] = gx
    M[n + 1, :n] = -(gx @ fF_x.T) - z * (gx @ gxx) + (gxx @ xdot)
    M[n + 1, n] = float(gx @ gx)
    if float(gx @ gx) < 1e-30:
        raise SingularTerminalSystem("g_x vanishes at the final state")
    try:
        sol = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularTerminalSystem("terminal system singular") from exc
    lam_f = sol[:n]
    return lam_f, float(sol[n]), float(sol[n + 1])


def transition_jump(ocp: HybridOCP, kind: TransitionKind, x_star: np.ndarray,
                    u_minus: np.ndarray, u_plus: np.ndarray,
                    lam_plus: np.ndarray, lam_g_plus: float, z_plus: float,
                    field_before: str, eps_tan: float = 1e-10):
    """Backward jump at a transition node: lam_minus = lam_plus - pi g_x^T.

    kind refers to the forward-time event.  field_before names the field
    active just before the event in forward time ('f1', 'f2' or 'fF').
    Returns (lam_minus, pi).
    """
    gx = ocp.g_x(x_star)

    if kind in (TransitionKind.EXIT_TO_F1, TransitionKind.EXIT_TO_F2):
        # sliding before the event: pi enforces the algebraic condition
        # g_x lam = 0 on the sliding side; Hamiltonian continuity is
        # automatic at the blend-weight boundary
        den = float(gx @ gx)
        if den < 1e-30:
            raise SingularJumpSystem("g_x vanishes at an exit node")
        pi = float(gx @ lam_plus) / den
        return lam_plus - pi * gx, pi

    if field_before == "f1":
        f_b = ocp.f1(x_star, u_minus)
    elif field_before == "f2":
        f_b = ocp.f2(x_star, u_minus)
    else:
        raise SingularJumpSystem(f"field before a {kind.value} event cannot be {field_before!r}")

    if kind is TransitionKind.ENTER_SLIDING:
        fF, _, _, _, _, _ = filippov_jacobians(ocp, x_star, u_plus)
        rhs_H = float(lam_plus @ fF) + z_plus * float(lam_plus @ gx) \
            - lam_g_plus * ocp.g(x_star)
    else:
        f_after = ocp.f2(x_star, u_plus) if kind is TransitionKind.CROSS_12 \
            else ocp.f1(x_star, u_plus)
        rhs_H = float(lam_plus @ f_after)

    gfb = float(gx @ f_b)
    if abs(gfb) <= eps_tan:
        raise SingularJumpSystem(
            f"g_x f = {gfb:.3e} at a {kind.value} node; jump system degenerate",
            g_x_f=gfb)
    pi = (float(lam_plus @ f_b) - rhs_H) / gfb
    return lam_plus - pi * gx, pi


# ---------------------------------------------------------------------------
# full sweeps


def run_adjoint(ocp: HybridOCP, traj: Trajectory, grid: ControlGrid,
                w: EndpointFunctional,
                tab: Optional[ButcherTableau] = None,
                eps_tan: float = 1e-10,
                backend: str = "transformed") -> AdjointTrajectory:
    """Backward sweep of one endpoint functional over the whole mesh.

    backend 'transformed' uses the reversed-table stage recursion on
    off-surface steps (the implementation of record); 'matrix' solves the
    assembled one-step systems instead and keeps the step multipliers,
    which the two-route consistency tests compare against.
    """
    tab = tab if tab is not None else radau_iia_3()
    if backend not in ("transformed", "matrix"):
        raise ValueError(f"unknown adjoint backend {backend!r}")
    K = traj.K
    if grid.N != traj.breakpoint_nodes.shape[0] - 1:
        raise MeshMismatch(f"grid has {grid.N} intervals, trajectory {traj.breakpoint_nodes.shape[0] - 1}")

    n = ocp.n
    lam = np.zeros((K + 1, n))
    lam_g = np.zeros(K + 1)
    stage_lams: list = [None] * K
    sliding_R: dict = {}
    ode_R: dict = {}
    jumps: list = []
    trans_at = {rec.k: rec for rec in traj.transitions}

    lam_K, lam_g_K, nu1 = terminal_conditions(ocp, traj, grid, w)
    lam[K] = lam_K
    lam_g[K] = lam_g_K

    if K in trans_at:
        # trajectory ends exactly on a transition: jump before any step
        rec = trans_at[K]
        lam_minus, pi = _jump_at(ocp, traj, grid, rec, lam[K], lam_g[K], eps_tan)
        jumps.append({"t_t": rec.t, "k": rec.k, "kind": rec.kind.value, "pi": float(pi)})
        lam[K] = lam_minus
        lam_g[K] = _minus_side_lam_g(ocp, traj, grid, rec, lam_minus)

    for k in range(K - 1, -1, -1):
        u = grid.values[traj.ctrl[k]]
        if traj.mode[k] is Mode.SLIDING:
            lam_k, R = adjoint_step_sliding(ocp, traj, k, u, lam[k + 1], tab)
            sliding_R[k] = R
            lam_g[k] = lambda_g_pointwise(ocp, traj.x[k], u, float(traj.z_node[k]), lam_k)
        elif backend == "matrix":
            Lam_plus = np.zeros((tab.s + 1) * n)
            Lam_plus[tab.s * n:] = lam[k + 1]
            Lambda_k, R = adjoint_step_matrix(ocp, traj, k, u, Lam_plus, tab)
            ode_R[k] = R
            lam_k = Lambda_k[tab.s * n:]
        else:
            stages, lam_k = adjoint_step_transformed(ocp, traj, k, u, lam[k + 1], tab)
            stage_lams[k] = stages
        lam[k] = lam_k

        if k in trans_at and k > 0:
            rec = trans_at[k]
            lam_minus, pi = _jump_at(ocp, traj, grid, rec, lam[k], lam_g[k], eps_tan)
            jumps.append({"t_t": rec.t, "k": rec.k, "kind": rec.kind.value, "pi": float(pi)})
            lam[k] = lam_minus
            lam_g[k] = _minus_side_lam_g(ocp, traj, grid, rec, lam_minus)

    jumps.reverse()
    return AdjointTrajectory(functional=w.name, times=traj.times, lam=lam,
                             lam_g=lam_g, stage_lams=stage_lams,
                             sliding_R=sliding_R, jumps=jumps, nu1=nu1,
                             ode_R=ode_R)


def _jump_at(ocp, traj, grid, rec, lam_plus, lam_g_plus, eps_tan):
    k = rec.k
    u_minus = grid.values[traj.ctrl[k - 1]] if k > 0 else grid.values[0]
    u_plus = grid.values[traj.ctrl[k]] if k < traj.K else grid.values[traj.ctrl[-1]]
    field_before = traj.field_id[k - 1] if k > 0 else "f1"
    z_plus = float(traj.z_node[k])
    return transition_jump(ocp, rec.kind, traj.x[k], u_minus, u_plus,
                           lam_plus, lam_g_plus, z_plus, field_before,
                           eps_tan=eps_tan)


def _minus_side_lam_g(ocp, traj, grid, rec, lam_minus):
    """lam_g just before the event in forward time: zero when the minus
    side is off-surface, the pointwise recovery when it is sliding."""
    k = rec.k
    if rec.kind in (TransitionKind.EXIT_TO_F1, TransitionKind.EXIT_TO_F2) and k > 0 \
            and traj.mode[k - 1] is Mode.SLIDING:
        u_minus = grid.values[traj.ctrl[k - 1]]
        z_minus = float(traj.stages_z[k - 1][-1])
        return lambda_g_pointwise(ocp, traj.x[k], u_minus, z_minus, lam_minus)
    return 0.0


def run_adjoints(ocp: HybridOCP, traj: Trajectory, grid: ControlGrid,
                 functionals, tab: Optional[ButcherTableau] = None,
                 eps_tan: float = 1e-10) -> list:
    """Sweep several functionals over one trajectory, concurrently when
    allowed.  SLIDOC_THREADS caps the worker count; the result order
    always matches the input order.
    """
    functionals = list(functionals)
    cap = os.environ.get("SLIDOC_THREADS", "")
    try:
        max_workers = max(1, int(cap)) if cap else min(len(functionals), os.cpu_count() or 1)
    except ValueError:
        max_workers = 1
    if max_workers == 1 or len(functionals) <= 1:
        return [run_adjoint(ocp, traj, grid, w, tab=tab, eps_tan=eps_tan)
                for w in functionals]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(lambda w: run_adjoint(ocp, traj, grid, w, tab=tab,
                                                   eps_tan=eps_tan), functionals))
