"""Backward sweeps: terminal conditions, stage recursions, jumps, and the
equivalence of the transformed and assembled formulations."""

import dataclasses

import numpy as np
import pytest

from slidoc.adjoint import (adjoint_step_matrix, adjoint_step_sliding,
                            assemble_ode_step_matrices, run_adjoint,
                            run_adjoints, terminal_conditions, transition_jump)
from slidoc.errors import SingularJumpSystem
from slidoc.integrator import IntegratorOptions, integrate
from slidoc.model import (ControlGrid, EndpointFunctional, HybridOCP,
                          TransitionKind)
from slidoc.problems import get_problem
from slidoc.tableau import adjoint_tableau, radau_iia_3

TAB = radau_iia_3()


def test_zero_field_keeps_multiplier_constant():
    w = EndpointFunctional(value=lambda x: float(x[0]),
                           grad=lambda x: np.array([1.0, 0.0]))
    zeros = lambda x, u: np.zeros((2, 2))
    bu = lambda x, u: np.zeros((2, 1))
    still = lambda x, u: np.zeros(2)
    ocp = HybridOCP(name="still", n=2, m=1,
                    f1=still, f1_x=zeros, f1_u=bu,
                    f2=still, f2_x=zeros, f2_u=bu,
                    g=lambda x: float(x[1] - 5.0),
                    g_x=lambda x: np.array([0.0, 1.0]),
                    g_xx=lambda x: np.zeros((2, 2)),
                    phi=w, x0=np.zeros(2), t0=0.0, tf=1.0,
                    u_lo=np.array([-1.0]), u_hi=np.array([1.0]))
    grid = ControlGrid(0.0, 1.0, np.zeros((3, 1)))
    traj = integrate(ocp, grid, 4)
    adj = run_adjoint(ocp, traj, grid, w)
    assert np.all(adj.lam == adj.lam[-1])
    assert np.all(adj.lam[-1] == [1.0, 0.0])


def test_terminal_conditions_off_surface():
    ocp, grid = get_problem("smooth-linear")
    traj = integrate(ocp, grid, 4)
    lam_f, lam_g, nu1 = terminal_conditions(ocp, traj, grid, ocp.phi)
    assert np.array_equal(lam_f, ocp.phi.grad(traj.x[-1]))
    assert lam_g == 0.0
    assert nu1 is None


def test_terminal_conditions_on_surface_are_tangent():
    """Sliding at tf: the terminal multiplier is the cost gradient minus
    its normal component, so g_x lam_f = 0."""
    ocp, grid = get_problem("p2-sliding")
    w = EndpointFunctional(value=lambda x: float(x[0] + 3.0 * x[1]),
                           grad=lambda x: np.array([1.0, 3.0]))
    traj = integrate(ocp, grid, 8)
    lam_f, lam_g, nu1 = terminal_conditions(ocp, traj, grid, w)
    gx = ocp.g_x(traj.x[-1])
    assert abs(float(gx @ lam_f)) <= 1e-12
    assert lam_f == pytest.approx([1.0, 0.0], abs=1e-12)
    # lam_f = w_x + nu1 g_x^T, so nu1 carries minus the normal component
    assert nu1 == pytest.approx(-3.0, abs=1e-12)


def test_relay_sweep_annihilates_the_normal_component():
    """On the relay problem the sliding adjoint kills lambda_2 exactly,
    and the entry jump is zero because the Hamiltonian is continuous."""
    ocp, grid = get_problem("p2-sliding")
    traj = integrate(ocp, grid, 8)
    adj = run_adjoint(ocp, traj, grid, ocp.phi)
    entry = traj.transitions[0].k
    assert np.all(adj.lam[entry:, 1] == 0.0)
    assert adj.lam[0] == pytest.approx([1.0, 0.0], abs=1e-13)
    assert adj.nu1 == 0.0
    assert [j["pi"] for j in adj.jumps] == [pytest.approx(0.0, abs=1e-13)]


def test_sliding_step_is_exact_in_one_step():
    """One backward sliding step on the relay problem maps any lam_plus
    onto the tangent space with no truncation error: the normal component
    is removed completely, the tangential one kept."""
    ocp, grid = get_problem("p2-sliding")
    traj = integrate(ocp, grid, 8)
    k = traj.transitions[0].k + 1          # a fully sliding step
    u = grid.values[traj.ctrl[k]]
    lam_plus = np.array([1.0, 0.7])
    lam_k, R = adjoint_step_sliding(ocp, traj, k, u, lam_plus, TAB)
    assert lam_k == pytest.approx([1.0, 0.0], abs=1e-13)
    assert R.shape == (TAB.s * (ocp.n + 1) + ocp.n,)


def test_two_backends_agree_on_a_smooth_problem():
    ocp, grid = get_problem("smooth-linear")
    traj = integrate(ocp, grid, 6)
    a1 = run_adjoint(ocp, traj, grid, ocp.phi, backend="transformed")
    a2 = run_adjoint(ocp, traj, grid, ocp.phi, backend="matrix")
    assert np.max(np.abs(a1.lam - a2.lam)) <= 1e-12 * max(1.0, np.max(np.abs(a1.lam)))


def test_matrix_backend_keeps_stage_slots_empty():
    """Between steps only the endpoint slot of the padded multiplier
    carries information; the stage slots vanish identically."""
    ocp, grid = get_problem("smooth-linear")
    traj = integrate(ocp, grid, 4)
    adj = run_adjoint(ocp, traj, grid, ocp.phi, backend="matrix")
    n, s = ocp.n, TAB.s
    for k in (0, traj.K // 2, traj.K - 1):
        u = grid.values[traj.ctrl[k]]
        _, FX, _ = assemble_ode_step_matrices(ocp, traj, k, u, TAB)
        Lam_k = -FX.T @ adj.ode_R[k]
        assert np.all(Lam_k[:s * n] == 0.0)
        assert Lam_k[s * n:] == pytest.approx(adj.lam[k], abs=1e-14)


def test_crossing_jump_hand_case():
    """Constant fields, crossing upward: pi = lam^+ (f_b - f_a) / (g_x f_b)."""
    zeros = lambda x, u: np.zeros((2, 2))
    bu = lambda x, u: np.zeros((2, 1))
    w = EndpointFunctional(value=lambda x: float(x[1]),
                           grad=lambda x: np.array([0.0, 1.0]))
    ocp = HybridOCP(name="cross", n=2, m=1,
                    f1=lambda x, u: np.array([1.0, 2.0]), f1_x=zeros, f1_u=bu,
                    f2=lambda x, u: np.array([1.0, 0.5]), f2_x=zeros, f2_u=bu,
                    g=lambda x: float(x[1]),
                    g_x=lambda x: np.array([0.0, 1.0]),
                    g_xx=lambda x: np.zeros((2, 2)),
                    phi=w, x0=np.array([0.0, -0.5]), t0=0.0, tf=1.0,
                    u_lo=np.array([-1.0]), u_hi=np.array([1.0]))
    u = np.zeros(1)
    lam_plus = np.array([0.0, 1.0])
    lam_minus, pi = transition_jump(ocp, TransitionKind.CROSS_12,
                                    np.array([0.5, 0.0]), u, u, lam_plus,
                                    0.0, 0.0, "f1")
    assert pi == pytest.approx((2.0 - 0.5) / 2.0, abs=1e-14)
    assert lam_minus == pytest.approx([0.0, 0.25], abs=1e-14)


def test_crossing_jump_singular_when_tangent():
    zeros = lambda x, u: np.zeros((2, 2))
    bu = lambda x, u: np.zeros((2, 1))
    w = EndpointFunctional(value=lambda x: float(x[1]),
                           grad=lambda x: np.array([0.0, 1.0]))
    ocp = HybridOCP(name="graze", n=2, m=1,
                    f1=lambda x, u: np.array([1.0, 0.0]), f1_x=zeros, f1_u=bu,
                    f2=lambda x, u: np.array([1.0, 0.5]), f2_x=zeros, f2_u=bu,
                    g=lambda x: float(x[1]),
                    g_x=lambda x: np.array([0.0, 1.0]),
                    g_xx=lambda x: np.zeros((2, 2)),
                    phi=w, x0=np.array([0.0, -0.5]), t0=0.0, tf=1.0,
                    u_lo=np.array([-1.0]), u_hi=np.array([1.0]))
    u = np.zeros(1)
    with pytest.raises(SingularJumpSystem):
        transition_jump(ocp, TransitionKind.CROSS_12, np.array([0.5, 0.0]),
                        u, u, np.array([0.0, 1.0]), 0.0, 0.0, "f1")


def test_exit_jump_projects_onto_the_tangent_space():
    """Backward through an exit, the multiplier loses its normal part;
    slide-exit has pi = 1 for the endpoint cost x2."""
    ocp, grid = get_problem("slide-exit")
    traj = integrate(ocp, grid, 8)
    adj = run_adjoint(ocp, traj, grid, ocp.phi)
    pis = {j["kind"]: j["pi"] for j in adj.jumps}
    assert pis["ExitToF1"] == pytest.approx(1.0, abs=1e-10)
    exit_node = traj.transitions[1].k
    gx = ocp.g_x(traj.x[exit_node])
    assert abs(float(gx @ adj.lam[exit_node])) <= 1e-12


def test_stability_function_is_preserved_by_the_transform():
    """Both tableaus apply the same rational map on a scalar linear step."""
    adj = adjoint_tableau(TAB)

    def stab(tab, z):
        s = tab.s
        K = np.linalg.solve(np.eye(s) - z * tab.A, np.ones(s))
        return 1.0 + z * float(tab.b @ K)

    for z in (-2.0, -0.5, -0.1, 0.3):
        assert stab(adj, z) == pytest.approx(stab(TAB, z), abs=1e-13)


def test_concurrent_sweeps_match_sequential():
    ocp, grid = get_problem("constrained-toy")
    traj = integrate(ocp, grid, 8)
    ws = [ocp.phi, ocp.g1[0], ocp.g2[0]]
    batch = run_adjoints(ocp, traj, grid, ws)
    for w, adj in zip(ws, batch):
        solo = run_adjoint(ocp, traj, grid, w)
        assert np.array_equal(adj.lam, solo.lam)


def test_random_linear_two_route_equivalence():
    """Matrix and transformed sweeps agree to near machine precision on
    randomized linear dynamics (a compact version of the larger
    randomized acceptance check)."""
    rng = np.random.default_rng(412)
    for _ in range(10):
        n = int(rng.integers(1, 4))
        A = rng.normal(size=(n, n)) * 0.8
        B = rng.normal(size=(n, 1))
        cvec = rng.normal(size=n)
        w = EndpointFunctional(value=lambda x, c=cvec: float(c @ x),
                               grad=lambda x, c=cvec: c)
        lin = lambda x, u, A=A, B=B: A @ x + B @ u
        lin_x = lambda x, u, A=A: A
        lin_u = lambda x, u, B=B: B
        ocp = HybridOCP(name="rand", n=n, m=1,
                        f1=lin, f1_x=lin_x, f1_u=lin_u,
                        f2=lin, f2_x=lin_x, f2_u=lin_u,
                        g=lambda x: float(x[0] - 1e6),
                        g_x=lambda x, n=n: np.eye(n)[0],
                        g_xx=lambda x, n=n: np.zeros((n, n)),
                        phi=w, x0=rng.normal(size=n), t0=0.0, tf=1.0,
                        u_lo=-2 * np.ones(1), u_hi=2 * np.ones(1))
        grid = ControlGrid(0.0, 1.0, rng.normal(size=(4, 1)) * 0.5)
        traj = integrate(ocp, grid, 2)
        a1 = run_adjoint(ocp, traj, grid, w, backend="transformed")
        a2 = run_adjoint(ocp, traj, grid, w, backend="matrix")
        scale = max(1.0, float(np.max(np.abs(a1.lam))))
        assert np.max(np.abs(a1.lam - a2.lam)) <= 1e-12 * scale
