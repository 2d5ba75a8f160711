"""Exact-penalty descent for endpoint-constrained control problems.

Minimizes F0(u) subject to endpoint equalities g1_i(u) = 0, inequalities
g2_j(u) <= 0 and the control box, through the nonsmooth penalty

    F_c(u) = F0(u) + c M(u),    M(u) = max(0, max_i |g1_i|, max_j g2_j).

Each iteration solves a direction-finding QP in (d, beta):

    min  <grad F0, d> + c beta + 1/2 d^T H d
    s.t. |g1_i + <grad g1_i, d>| <= beta
         g2_j + <grad g2_j, d>  <= beta
         beta >= 0,   u + d inside the box,

whose value certificate sigma = <grad F0, d> + c (beta - M) must be
negative enough (t_c = sigma + M/c <= 0) before c is accepted; otherwise
c grows geometrically.  An Armijo backtracking line search on F_c
finishes the iteration.  The QP is solved by a primal active-set method:
the problems are small and the method produces sharp KKT residuals,
which the iterate records keep for audit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .adjoint import run_adjoints
from .errors import (CFailure, LineSearchFailure, QPFailure, ValidationError)
from .gradient import reduced_gradient
from .integrator import IntegratorOptions, integrate
from .model import ControlGrid, HybridOCP
from .tableau import ButcherTableau, radau_iia_3


@dataclass(frozen=True)
class OptimizerConfig:
    c0: float = 1.0
    kappa: float = 2.0
    gamma: float = 0.1
    eta: float = 0.5
    epsilon: float = 1e-8
    max_iters: int = 200
    h_scale: float = 1.0
    penalty_growth_cap: int = 60
    line_search_cap: int = 60

    def validate(self):
        if not self.c0 > 0:
            raise ValidationError(f"optimizer.c0: must be > 0, got {self.c0}", field="optimizer.c0")
        if not self.kappa > 1:
            raise ValidationError(f"optimizer.kappa: must be > 1, got {self.kappa}", field="optimizer.kappa")
        if not 0 < self.gamma < 1:
            raise ValidationError(f"optimizer.gamma: must be in (0, 1), got {self.gamma}", field="optimizer.gamma")
        if not 0 < self.eta < 1:
            raise ValidationError(f"optimizer.eta: must be in (0, 1), got {self.eta}", field="optimizer.eta")
        if not self.epsilon > 0:
            raise ValidationError(f"optimizer.epsilon: must be > 0, got {self.epsilon}", field="optimizer.epsilon")
        if self.max_iters < 1:
            raise ValidationError(f"optimizer.max_iters: must be >= 1, got {self.max_iters}", field="optimizer.max_iters")
        if not self.h_scale > 0:
            raise ValidationError(f"optimizer.h_scale: must be > 0, got {self.h_scale}", field="optimizer.h_scale")
        return self


def make_hessian(dim: int, h_scale: float):
    """Scaled-identity QP Hessian with certified spectral bounds.

    The bounds nu1 <= eig(H) <= nu2 are measured, not assumed, so any
    future non-diagonal choice inherits the check.
    """
    H = h_scale * np.eye(dim)
    eig = np.linalg.eigvalsh(H)
    nu1, nu2 = float(eig[0]), float(eig[-1])
    if nu1 <= 0.0:
        raise ValidationError(f"optimizer.h_scale: Hessian not positive definite (min eig {nu1:.3e})",
                              field="optimizer.h_scale")
    return H, nu1, nu2


def constraint_violation(eq_vals, ineq_vals) -> float:
    m = 0.0
    for v in eq_vals:
        m = max(m, abs(float(v)))
    for v in ineq_vals:
        m = max(m, float(v))
    return m


def penalty_value(F0: float, c: float, M: float) -> float:
    return F0 + c * M


# ---------------------------------------------------------------------------
# direction-finding QP


@dataclass
class QPInfo:
    kkt_residual: float
    iterations: int
    active: list


def solve_direction(grad0: np.ndarray, c: float, H: np.ndarray,
                    eqs, ineqs, lo: np.ndarray, hi: np.ndarray,
                    kkt_tol: float = 1e-8):
    """Primal active-set solve of the direction-finding QP.

    eqs and ineqs are sequences of (value, gradient) pairs; lo and hi
    bound d (box minus current control).  Returns (d, beta, QPInfo).

    Variables are y = (d, beta).  Every constraint is one row a^T y <= b;
    the working set always keeps at least one row with a beta component,
    which pins the otherwise-flat beta direction and keeps the reduced
    Hessian positive definite.  When the working set loses its last such
    row the iteration moves straight down in beta until a new one blocks.
    """
    dim = grad0.shape[0]
    nv = dim + 1
    G = np.zeros((nv, nv))
    G[:dim, :dim] = H
    q = np.concatenate([grad0, [c]])

    rows_a, rows_b, beta_rows = [], [], []

    def add_row(a, b, is_beta):
        beta_rows.append(bool(is_beta))
        rows_a.append(np.asarray(a, dtype=float))
        rows_b.append(float(b))

    M0 = constraint_violation([v for v, _ in eqs], [v for v, _ in ineqs])
    for val, gradc in eqs:
        add_row(np.concatenate([gradc, [-1.0]]), -val, True)
        add_row(np.concatenate([-gradc, [-1.0]]), val, True)
    for val, gradc in ineqs:
        add_row(np.concatenate([gradc, [-1.0]]), -val, True)
    add_row(np.concatenate([np.zeros(dim), [-1.0]]), 0.0, True)
    for l in range(dim):
        e = np.zeros(nv)
        e[l] = 1.0
        add_row(e, hi[l], False)
        add_row(-e, -lo[l], False)

    A = np.array(rows_a)
    bvec = np.array(rows_b)
    nrows = A.shape[0]

    y = np.zeros(nv)
    y[dim] = M0
    # start from a beta-type row active at y0: the first max achiever, or
    # the beta >= 0 row when already feasible
    slack0 = bvec - A @ y
    work: list[int] = []
    for l in range(nrows):
        if beta_rows[l] and abs(slack0[l]) <= 1e-12 * max(1.0, M0):
            work.append(l)
            break
    if not work:
        raise QPFailure("no active beta row at the starting point", M=M0)

    feas_tol = 1e-10
    mu_by_row = np.zeros(nrows)
    cap = 50 + 10 * nrows
    for it in range(1, cap + 1):
        has_beta = any(beta_rows[l] for l in work)
        if not has_beta:
            p = np.zeros(nv)
            p[dim] = -1.0
            mu = np.zeros(len(work))
        else:
            Aw = A[work]
            kdim = nv + len(work)
            KKT = np.zeros((kdim, kdim))
            KKT[:nv, :nv] = G
            KKT[:nv, nv:] = Aw.T
            KKT[nv:, :nv] = Aw
            rhs = np.concatenate([-(G @ y + q), np.zeros(len(work))])
            try:
                sol = np.linalg.solve(KKT, rhs)
            except np.linalg.LinAlgError as exc:
                raise QPFailure(f"degenerate working set {sorted(work)}") from exc
            p = sol[:nv]
            mu = sol[nv:]

        if np.max(np.abs(p)) <= 1e-12:
            neg = [(mu[i], i) for i in range(len(work)) if mu[i] < -1e-12]
            if not neg:
                mu_by_row[:] = 0.0
                for i, l in enumerate(work):
                    mu_by_row[l] = mu[i]
                stat = np.max(np.abs(G @ y + q + A.T @ mu_by_row))
                feas = max(0.0, float(np.max(A @ y - bvec)))
                comp = max((abs(mu_by_row[l] * (A[l] @ y - bvec[l])) for l in work),
                           default=0.0)
                res = max(stat, feas, comp)
                if res > kkt_tol:
                    raise QPFailure(f"KKT residual {res:.3e} above {kkt_tol:.1e}",
                                    kkt_residual=float(res))
                beta = max(0.0, float(y[dim]))   # beta >= 0 is a row; scrub roundoff
                return y[:dim].copy(), beta, QPInfo(float(res), it, sorted(work))
            _, drop_i = min(neg)
            work.pop(drop_i)
            continue

        # ratio test against rows not in the working set
        alpha = 1.0
        blocking = -1
        for l in range(nrows):
            if l in work:
                continue
            ap = float(A[l] @ p)
            if ap > 1e-14:
                ratio = (bvec[l] - float(A[l] @ y)) / ap
                if ratio < alpha - 1e-15:
                    alpha = max(ratio, 0.0)
                    blocking = l
        y = y + alpha * p
        if blocking >= 0:
            work.append(blocking)
        elif not has_beta:
            raise QPFailure("unbounded beta descent; no blocking row found")
    raise QPFailure(f"active-set iteration cap {cap} reached", iterations=cap)


def descent_measures(grad0: np.ndarray, d: np.ndarray, beta: float,
                     c: float, M: float):
    """sigma is the QP's decrease certificate; t_c tells whether the
    current penalty weight dominates the violation."""
    sigma = float(grad0 @ d) + c * (beta - M)
    t_c = sigma + M / c
    return sigma, t_c


def adjust_penalty(solve: Callable[[float], tuple], c: float, kappa: float,
                   grad0: np.ndarray, M: float, cap: int = 60):
    """Smallest weight in the ladder c, kappa c, ... with t_c below zero
    (up to roundoff).  solve(c) -> (d, beta, info)."""
    for j in range(cap + 1):
        d, beta, info = solve(c)
        sigma, t_c = descent_measures(grad0, d, beta, c, M)
        if t_c <= 1e-12:
            return c, d, beta, sigma, t_c, info, j
        c = c * kappa
    raise CFailure(f"no acceptable penalty weight within {cap} raises (last t_c = {t_c:.3e})",
                   t_c=float(t_c), c=float(c))


def line_search(merit: Callable[[np.ndarray], float], F_cur: float,
                u: np.ndarray, d: np.ndarray, sigma: float,
                gamma: float, eta: float, cap: int = 60):
    """Largest step in {1, eta, eta^2, ...} with the Armijo decrease
    F_c(u + a d) - F_c(u) <= gamma a sigma.  merit re-integrates."""
    a = 1.0
    for trial in range(cap + 1):
        u_try = u + a * d
        F_try = merit(u_try)
        if F_try - F_cur <= gamma * a * sigma:
            return a, u_try, F_try, trial + 1
        a = a * eta
    raise LineSearchFailure(
        f"no Armijo step within {cap} backtracks (sigma = {sigma:.3e})", sigma=sigma)


# ---------------------------------------------------------------------------
# outer loop


@dataclass
class IterateRecord:
    k: int
    F0: float
    M: float
    c: float
    sigma: float
    t_c: float
    beta: float
    alpha: Optional[float]
    penalty_before: float
    penalty_after: Optional[float]
    kkt_residual: float
    u: np.ndarray
    d: np.ndarray

    def to_dict(self) -> dict:
        return {"k": self.k, "F0": self.F0, "M": self.M, "c": self.c,
                "sigma": self.sigma, "t_c": self.t_c, "beta": self.beta,
                "alpha": self.alpha, "penalty_before": self.penalty_before,
                "penalty_after": self.penalty_after,
                "kkt_residual": self.kkt_residual,
                "u": [list(map(float, row)) for row in self.u],
                "d": [list(map(float, row)) for row in self.d]}


@dataclass
class OptimizeResult:
    grid: ControlGrid
    history: list
    status: str          # 'stationary' or 'max_iters'

    @property
    def converged(self) -> bool:
        return self.status == "stationary"


def optimize(ocp: HybridOCP, grid0: ControlGrid, steps_per_interval: int = 8,
             cfg: Optional[OptimizerConfig] = None,
             integ_opts: Optional[IntegratorOptions] = None,
             tab: Optional[ButcherTableau] = None) -> OptimizeResult:
    """Run the exact-penalty method from grid0 until the certificate
    |sigma| drops below epsilon or the iteration budget runs out."""
    cfg = (cfg if cfg is not None else OptimizerConfig()).validate()
    integ_opts = integ_opts if integ_opts is not None else IntegratorOptions()
    tab = tab if tab is not None else radau_iia_3()

    N, m = grid0.N, grid0.m
    dim = N * m
    H, _, _ = make_hessian(dim, cfg.h_scale)
    lo_flat = np.tile(ocp.u_lo, N)
    hi_flat = np.tile(ocp.u_hi, N)
    functionals = [ocp.phi, *ocp.g1, *ocp.g2]

    def evaluate(uflat: np.ndarray):
        grid = grid0.with_values(uflat.reshape(N, m))
        traj = integrate(ocp, grid, steps_per_interval, tab=tab, opts=integ_opts)
        xK = traj.x[-1]
        vals = [w.value(xK) for w in functionals]
        return grid, traj, vals

    def merit_factory(c):
        def merit(uflat):
            _, _, vals = evaluate(uflat)
            F0 = vals[0]
            M = constraint_violation(vals[1:1 + len(ocp.g1)], vals[1 + len(ocp.g1):])
            return penalty_value(F0, c, M)
        return merit

    u = grid0.values.reshape(dim).copy()
    c = cfg.c0
    history: list[IterateRecord] = []
    status = "max_iters"

    for it in range(cfg.max_iters):
        grid, traj, vals = evaluate(u)
        F0 = vals[0]
        eq_vals = vals[1:1 + len(ocp.g1)]
        ineq_vals = vals[1 + len(ocp.g1):]
        M = constraint_violation(eq_vals, ineq_vals)

        adjs = run_adjoints(ocp, traj, grid, functionals, tab=tab,
                            eps_tan=integ_opts.eps_tan)
        grads = [reduced_gradient(ocp, traj, grid, a, tab=tab).reshape(dim)
                 for a in adjs]
        grad0 = grads[0]
        eqs = list(zip(eq_vals, grads[1:1 + len(ocp.g1)]))
        ineqs = list(zip(ineq_vals, grads[1 + len(ocp.g1):]))

        def solve(cc):
            return solve_direction(grad0, cc, H, eqs, ineqs,
                                   lo_flat - u, hi_flat - u)

        c, d, beta, sigma, t_c, info, _ = adjust_penalty(
            solve, c, cfg.kappa, grad0, M, cap=cfg.penalty_growth_cap)

        rec = IterateRecord(k=it, F0=float(F0), M=float(M), c=float(c),
                            sigma=float(sigma), t_c=float(t_c), beta=float(beta),
                            alpha=None, penalty_before=penalty_value(F0, c, M),
                            penalty_after=None, kkt_residual=info.kkt_residual,
                            u=u.reshape(N, m).copy(), d=d.reshape(N, m).copy())

        if abs(sigma) <= cfg.epsilon:
            history.append(rec)
            status = "stationary"
            break

        merit = merit_factory(c)
        a, u_new, F_new, _ = line_search(merit, rec.penalty_before, u, d, sigma,
                                         cfg.gamma, cfg.eta, cap=cfg.line_search_cap)
        rec.alpha = float(a)
        rec.penalty_after = float(F_new)
        history.append(rec)
        u = np.clip(u_new, lo_flat, hi_flat)

    return OptimizeResult(grid=grid0.with_values(u.reshape(N, m)),
                          history=history, status=status)
