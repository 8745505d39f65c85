import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_problem, t1_problem, t1_theta
from gbdmpc.cuts import CutBuffer, farkas_record, optimal_record
from gbdmpc.gbd import (GAP_NOT_CLOSED, MASTER_INFEASIBLE, NO_CONTROL, OPTIMAL, GbdSettings, MpcController,
                        brute_force_miqp, gap, gbd_solve, mpc_step, run_cold)
from gbdmpc.mld import ParameterVector, stack
from gbdmpc.qp import FarkasCertificate, solve_qp

EXACT = GbdSettings(G_a=1e-6, I_max=100, master="enum")


@pytest.mark.parametrize("zp,zd,expect", [(10, 9, 0.1), (5, 5, 0.0), (0.5, -math.inf, math.inf),
                                          (0.0, 0.0, 0.0), (0.0, 1.0, math.inf)])
def test_gap(zp, zd, expect):
    assert gap(zp, zd) == pytest.approx(expect)


def test_t1_cold_step_through(t1, t1_th):
    res = gbd_solve(t1, t1_th, None, EXACT)
    assert res.status == OPTIMAL
    assert res.iters == 2 and res.iters_to_first_control == 2
    h = res.history
    assert h[0].delta.tolist() == [[0.0]] and not h[0].feasible
    assert h[1].delta.tolist() == [[1.0]] and h[1].v == pytest.approx(0.5)
    assert res.UB == pytest.approx(0.5) and res.LB == pytest.approx(0.5)
    assert res.delta_star.tolist() == [[1.0]]
    assert res.u_star == pytest.approx([-0.5])
    assert len(res.new_farkas) == 1 and len(res.new_optimal) == 1


def _t1_buffer(t1, t1_th):
    buf = CutBuffer(problem=t1)
    cert = solve_qp(stack(t1, t1_th, [[0.0]]))
    sol = solve_qp(stack(t1, t1_th, [[1.0]]))
    buf.store([farkas_record(cert, t1, t1_th, [[0.0]])], [optimal_record(sol, t1, t1_th, [[1.0]])])
    return buf


def test_t1_warm_single_iteration(t1, t1_th):
    res = gbd_solve(t1, t1_th, _t1_buffer(t1, t1_th), EXACT)
    assert res.iters == 1 and res.iters_to_first_control == 1
    assert res.history[0].delta.tolist() == [[1.0]]
    assert res.history[0].LB == pytest.approx(0.5)
    assert res.status == OPTIMAL and res.gap == pytest.approx(0.0, abs=1e-12)


def test_all_modes_infeasible(t1):
    th = t1_theta(third=-5.0)
    res = gbd_solve(t1, th, None, EXACT)
    assert res.status == MASTER_INFEASIBLE
    # one certificate already excludes both modes here
    assert 1 <= len(res.new_farkas) <= 2 and res.u_star is None
    assert brute_force_miqp(t1, th)[1] is None


def test_no_control_on_iteration_cap(t1, t1_th):
    res = gbd_solve(t1, t1_th, None, GbdSettings(I_max=1))
    assert res.status == NO_CONTROL and res.u_star is None
    u, res2, _ = mpc_step(t1, t1_th, CutBuffer(), GbdSettings(I_max=1))
    assert res2.status == NO_CONTROL
    assert u.tolist() == [0.0]


def test_run_cold_equals_empty_buffer(t1, t1_th):
    a = run_cold(t1, t1_th, G_a=1e-6, I_max=10)
    b = gbd_solve(t1, t1_th, None, GbdSettings(G_a=1e-6, I_max=10))
    for name in ("UB", "LB", "iters", "iters_to_first_control", "status"):
        assert getattr(a, name) == getattr(b, name)
    assert a.delta_star.tobytes() == b.delta_star.tobytes()
    assert a.z_star.tobytes() == b.z_star.tobytes()


def test_mpc_step_repeat_is_one_iteration(t1, t1_th):
    buf = CutBuffer(problem=t1)
    s = GbdSettings(G_a=1e-6, I_max=10)
    _, r1, buf = mpc_step(t1, t1_th, buf, s)
    _, r2, buf = mpc_step(t1, t1_th, buf, s)
    assert r1.iters_to_first_control == 2
    assert r2.iters == 1 and r2.iters_to_first_control == 1
    assert r2.delta_star.tolist() == r1.delta_star.tolist()


def test_mpc_step_fifo_on_novel_failure():
    p = t1_problem()
    buf = CutBuffer(K_feas=1, problem=p)
    buf.store([farkas_record(FarkasCertificate(np.zeros(2), np.array([1.0, 0.0, 1.0])), p, t1_theta(), [[0.0]])])
    old = buf.farkas[0]
    # u <= -2 with u >= -1: a failure the stored ray does not describe
    th = ParameterVector.constant(p, [0.0], [-2.0, 1.0, 10.0])
    _, res, _ = mpc_step(p, th, buf, GbdSettings(G_a=1e-6, I_max=10))
    assert res.status == MASTER_INFEASIBLE
    assert len(buf.farkas) == 1 and buf.farkas[0] is not old
    assert np.allclose(buf.farkas[0].cert.lambda_tilde, [1.0, 1.0, 0.0])


def test_storage_keeps_only_pre_first_control_duals(t1, t1_th):
    res = gbd_solve(t1, t1_th, None, EXACT)
    assert len(res.stored_farkas) == 1 and res.stored_optimal == []
    inc = gbd_solve(t1, t1_th, None, GbdSettings(G_a=1e-6, I_max=100, master="enum", store_inclusive=True))
    assert len(inc.stored_optimal) == 1


def test_log_record_fields(t1, t1_th):
    rec = gbd_solve(t1, t1_th, None, EXACT).log_record(0.5)
    assert set(rec) == {"t", "iters", "iters_to_first_control", "UB", "LB", "gap", "n_feas_cuts",
                        "n_opt_cuts", "solve_time_ns", "status"}
    assert rec["t"] == 0.5 and rec["status"] == OPTIMAL


def test_cold_log_record_infinities(t1, t1_th):
    rec = gbd_solve(t1, t1_th, None, GbdSettings(I_max=1)).log_record(0.0)
    assert rec["UB"] == "inf" and rec["LB"] == "-inf" and rec["gap"] == "inf"


def test_controller_modes(t1, t1_th):
    warm = MpcController(t1, GbdSettings(G_a=1e-6, I_max=10))
    cold = MpcController(t1, GbdSettings(G_a=1e-6, I_max=10), warm=False)
    for _ in range(2):
        _, rw = warm(t1_th)
        _, rc = cold(t1_th)
    assert rw.iters_to_first_control == 1 and rc.iters_to_first_control == 2
    assert len(cold.buffer.farkas) == 0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_exact_master_matches_brute_force(seed):
    problem, theta = random_problem(seed)
    res = gbd_solve(problem, theta, None, EXACT)
    v, d = brute_force_miqp(problem, theta)
    if d is None:
        assert res.status == MASTER_INFEASIBLE
        return
    assert res.status == OPTIMAL
    assert abs(res.UB - v) <= 1e-5 * max(abs(v), 1e-12)
    # bounds and bookkeeping
    lbs = [h.LB for h in res.history]
    assert all(b >= a - 1e-9 for a, b in zip(lbs, lbs[1:]))
    assert res.UB >= res.LB - 1e-9
    keys = [h.delta.tobytes() for h in res.history]
    assert len(keys) == len(set(keys))
    assert res.iters <= EXACT.I_max
    again = solve_qp(stack(problem, theta, res.delta_star))
    assert again.v == pytest.approx(res.UB, rel=1e-9, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(["enum", "greedy"]))
def test_warm_start_identity(seed, master):
    problem, theta = random_problem(seed)
    s = GbdSettings(G_a=1e-6, I_max=200, master=master)
    buf = CutBuffer(problem=problem)
    _, r1, buf = mpc_step(problem, theta, buf, s)
    if r1.delta_star is None:
        return
    _, r2, _ = mpc_step(problem, theta, buf, s)
    assert r2.iters_to_first_control == 1
    assert np.array_equal(r2.delta_star, r1.delta_star)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_greedy_status_contract(seed):
    problem, theta = random_problem(seed)
    res = gbd_solve(problem, theta, None, GbdSettings(G_a=1e-6, I_max=8))
    assert res.iters <= 8
    assert res.status in (OPTIMAL, GAP_NOT_CLOSED, NO_CONTROL, MASTER_INFEASIBLE)
    if res.status == OPTIMAL:
        assert gap(res.UB, res.LB) < 1e-6
    if res.u_star is None:
        assert math.isinf(res.UB)
