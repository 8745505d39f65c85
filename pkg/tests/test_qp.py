import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_delta, random_problem
from qp_oracles import kkt_enumeration, lp_feasible, random_qp
from gbdmpc.mld import StackedQP, stack
from gbdmpc.qp import (FarkasCertificate, Feasible, QpSolution, SolverError, dual_value, kkt_report,
                       phase1, solve_qp, verify_farkas)

T1_CERT = FarkasCertificate(np.array([0.0, 0.0]), np.array([1.0, 0.0, 1.0]))


def test_phase1_t1_feasible(t1, t1_th):
    qp = stack(t1, t1_th, [[1.0]])
    res = phase1(qp.A, qp.b, qp.C, qp.d)
    assert isinstance(res, Feasible)
    assert np.abs(qp.A @ res.z0 - qp.b).max() <= 1e-7 * qp.scale
    assert np.all(qp.C @ res.z0 <= qp.d + 1e-7 * qp.scale)


def test_phase1_t1_certificate(t1, t1_th):
    qp = stack(t1, t1_th, [[0.0]])
    res = phase1(qp.A, qp.b, qp.C, qp.d)
    assert isinstance(res, FarkasCertificate)
    assert verify_farkas(res, qp.A, qp.b, qp.C, qp.d)
    assert max(np.abs(res.nu_tilde).max(), np.abs(res.lambda_tilde).max()) == pytest.approx(1.0)


def test_phase1_contradictory_pair():
    A = np.zeros((0, 1))
    C = np.array([[1.0], [-1.0]])
    d = np.array([-1.0, -1.0])
    res = phase1(A, np.zeros(0), C, d)
    assert isinstance(res, FarkasCertificate)
    assert np.allclose(res.lambda_tilde, [1.0, 1.0])


def test_verify_farkas_examples(t1, t1_th):
    q0 = stack(t1, t1_th, [[0.0]])
    q1 = stack(t1, t1_th, [[1.0]])
    assert verify_farkas(T1_CERT, q0.A, q0.b, q0.C, q0.d)
    assert float(q1.b @ T1_CERT.nu_tilde + q1.d @ T1_CERT.lambda_tilde) == pytest.approx(2.0)
    assert not verify_farkas(T1_CERT, q1.A, q1.b, q1.C, q1.d)
    zero = FarkasCertificate(np.zeros(2), np.zeros(3))
    assert not verify_farkas(zero, q0.A, q0.b, q0.C, q0.d)


@given(st.floats(1e-6, 1e6))
def test_verify_farkas_scale_invariant(a):
    from conftest import t1_problem, t1_theta
    qp = stack(t1_problem(), t1_theta(), [[0.0]])
    assert verify_farkas(T1_CERT.scaled(a), qp.A, qp.b, qp.C, qp.d)


def test_solve_qp_t1(t1, t1_th):
    qp = stack(t1, t1_th, [[1.0]])
    sol = solve_qp(qp)
    assert isinstance(sol, QpSolution)
    assert sol.v == pytest.approx(0.5, abs=1e-12)
    assert np.allclose(sol.z_star, [0.0, 0.5, -0.5])
    assert np.allclose(sol.nu_star, [-1.0, -1.0])
    assert np.allclose(sol.lambda_star, 0.0)
    # grid search over the feasible inputs
    us = np.linspace(-1.0, 1.0, 20001)
    costs = us ** 2 + (us + 1.0) ** 2
    feas = -us - 3.0 <= -2.0
    assert costs[feas].min() == pytest.approx(0.5, abs=1e-6)


def test_solve_qp_t1_infeasible(t1, t1_th):
    qp = stack(t1, t1_th, [[0.0]])
    res = solve_qp(qp)
    assert isinstance(res, FarkasCertificate)
    assert verify_farkas(res, qp.A, qp.b, qp.C, qp.d)


def test_solve_qp_unconstrained():
    A = np.array([[1.0, 0.0, 0.0], [-1.0, 1.0, -1.0]])
    qp = StackedQP(np.eye(3), np.zeros(3), A, np.zeros(2), np.zeros((0, 3)), np.zeros(0))
    sol = solve_qp(qp)
    assert np.allclose(sol.z_star, 0.0)
    assert sol.v == pytest.approx(0.0)


def test_dual_value_examples(t1, t1_th):
    qp = stack(t1, t1_th, [[1.0]])
    sol = solve_qp(qp)
    assert dual_value(sol.nu_star, sol.lambda_star, qp) == pytest.approx(0.5, abs=1e-12)
    assert dual_value(np.zeros(2), np.zeros(3), qp) == 0.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_weak_duality_random_duals(seed):
    rng = np.random.default_rng(seed)
    qp = random_qp(rng)
    sol = solve_qp(qp)
    if isinstance(sol, FarkasCertificate):
        return
    for _ in range(5):
        nu = sol.nu_star + rng.normal(size=sol.nu_star.size)
        lam = np.maximum(sol.lambda_star + rng.normal(size=sol.lambda_star.size), 0.0)
        assert dual_value(nu, lam, qp) <= sol.v + 1e-8 * (1 + abs(sol.v))


def test_weak_duality_along_farkas_direction(t1, t1_th):
    # the T1 certificate is a dual ray at delta = 0; at delta = 1 it is not, so adding it lowers g
    qp = stack(t1, t1_th, [[1.0]])
    sol = solve_qp(qp)
    for a in (0.1, 1.0, 10.0):
        g = dual_value(sol.nu_star + a * T1_CERT.nu_tilde, sol.lambda_star + a * T1_CERT.lambda_tilde, qp)
        assert g <= sol.v + 1e-12


def test_kkt_enumeration_oracle_200():
    rng = np.random.default_rng(2024)
    checked = 0
    for _ in range(200):
        qp = random_qp(rng)
        sol = solve_qp(qp)
        ref = kkt_enumeration(qp)
        if isinstance(sol, FarkasCertificate):
            assert ref is None
            assert not lp_feasible(qp.A, qp.b, qp.C, qp.d)
            continue
        assert ref is not None
        assert sol.v == pytest.approx(ref, rel=1e-6, abs=1e-9)
        assert kkt_report(sol, qp).ok
        checked += 1
    assert checked > 150


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_branch_exclusive_and_witness_verifies(seed):
    rng = np.random.default_rng(seed)
    qp = random_qp(rng, feasible=bool(seed % 2))
    if not seed % 2:
        qp.d = qp.d - rng.uniform(0.0, 3.0, size=qp.d.size)
    res = phase1(qp.A, qp.b, qp.C, qp.d)
    truth = lp_feasible(qp.A, qp.b, qp.C, qp.d)
    if isinstance(res, Feasible):
        assert truth
        assert np.abs(qp.A @ res.z0 - qp.b).max(initial=0.0) <= 1e-7 * qp.scale
        assert np.all(qp.C @ res.z0 <= qp.d + 1e-7 * qp.scale)
    else:
        assert not truth
        assert verify_farkas(res, qp.A, qp.b, qp.C, qp.d)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_mld_subproblem_invariants(seed):
    problem, theta = random_problem(seed)
    delta = random_delta(np.random.default_rng(seed), problem)
    qp = stack(problem, theta, delta)
    res = solve_qp(qp)
    if isinstance(res, FarkasCertificate):
        assert verify_farkas(res, qp.A, qp.b, qp.C, qp.d)
        return
    rep = kkt_report(res, qp)
    assert rep.ok, rep
    assert res.lambda_star.min(initial=0.0) >= -1e-9


def test_warm_hint_reproduces_solution():
    rng = np.random.default_rng(5)
    for _ in range(20):
        qp = random_qp(rng)
        sol = solve_qp(qp)
        if isinstance(sol, FarkasCertificate):
            continue
        again = solve_qp(qp, working_set_hint=sol.working_set)
        assert again.v == pytest.approx(sol.v, rel=1e-9, abs=1e-12)


def test_iteration_cap_raises():
    rng = np.random.default_rng(11)
    for _ in range(50):
        qp = random_qp(rng, nz=6, p=0, m=6)
        try:
            solve_qp(qp, max_iter=0)
        except SolverError as e:
            assert "iteration cap" in str(e)
            return
    pytest.fail("no instance needed an active-set iteration")
