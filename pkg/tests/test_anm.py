import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from anmsolve import (BorderedSystem, ComputeGraph, ContinuationOptions, Homotopy,
                      SparseAffineMap, continuation, equational_continuation, rms, rov_taylor,
                      solve_coefficients)
from anmsolve.errors import InvalidStartError, NoProgressError
from anmsolve.toy import START, homotopy_graph, residual, solve_toy, system_graph


def test_bordered_order_one_on_toy():
    P = np.array([[-3.0, -6.0], [2.0, -2.0]])
    bs = BorderedSystem.factorize(P, np.array([0.0, -6.0]))
    x1, lam1 = bs.solve(None, 1)
    s = math.sqrt(6.0)
    np.testing.assert_allclose([*x1, lam1], [2 / s, -1 / s, 1 / s], atol=1e-14)


def test_bordered_identity_with_no_lam_coupling():
    bs = BorderedSystem.factorize(sp.eye(3), np.zeros(3))
    x1, lam1 = bs.solve(None, 1)
    np.testing.assert_array_equal(x1, 0)
    assert lam1 == 1.0
    q = np.array([1.0, -2.0, 0.5])
    xk, lk = bs.solve(q, 2)
    np.testing.assert_allclose(xk, -q)
    assert lk == 0.0


def _random_spd(rng, n):
    a = rng.normal(size=(n, n))
    return a @ a.T + n * np.eye(n)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 30), st.integers(0, 10_000))
def test_bordered_solution_properties(n, seed):
    rng = np.random.default_rng(seed)
    P, v = _random_spd(rng, n), rng.normal(size=n)
    bs = BorderedSystem.factorize(P, v)
    x1, lam1 = bs.solve(None, 1)
    assert abs(x1 @ x1 + lam1**2 - 1.0) <= 1e-12
    q = rng.normal(size=n)
    xk, lk = bs.solve(q, 3)
    assert np.abs(P @ xk + v * lk + q).max() <= 1e-10 * (1 + np.abs(q).max())
    assert abs(x1 @ xk + lam1 * lk) <= 1e-10 * (1 + np.linalg.norm(xk))


def test_series_satisfies_every_order():
    # plugging the truncated series into H leaves only O(a^(N+1))
    g = homotopy_graph()
    series = solve_coefficients(g, START, 0.0, 10)
    u = series.augmented()
    for a in (1e-2, 2e-2):
        val = np.polynomial.polynomial.polyval(a, u)
        assert rms(g.evaluate(val[:-1], val[-1])) <= 1e3 * a**11 + 1e-14


def test_linear_homotopy_terminates_at_order_one():
    M = np.array([[2.0, 1.0], [0.5, 3.0]])
    g = ComputeGraph(2)
    g.add_output(g.input(SparseAffineMap(M, (2, 1))))
    g.set_output_affine(lam_vec=[1.0, -1.0])
    series = solve_coefficients(g, np.zeros(2), 0.0, 8)
    np.testing.assert_allclose(series.x[2:], 0, atol=1e-15)
    np.testing.assert_allclose(series.lam[2:], 0, atol=1e-15)
    x, trace = continuation(g, np.zeros(2), 0.0, 1.0)
    assert trace.iterations == 1
    np.testing.assert_allclose(M @ x + [1.0, -1.0], 0, atol=1e-14)


def test_rov_taylor_examples():
    u = np.array([[0.0], [1.0], [0.5], [0.25]])
    assert rov_taylor(u, 1e-4) == pytest.approx((1e-4 / 0.25) ** 0.5)
    assert rov_taylor(np.array([[0.0], [2.0], [0.0], [2.0]]), 1.0) == pytest.approx(1.0)
    assert math.isinf(rov_taylor(np.array([[1.0], [1.0], [0.0]]), 1e-4))
    rng = np.random.default_rng(0)
    w = rng.normal(size=(6, 4))
    assert rov_taylor(7.5 * w, 1e-3) == pytest.approx(rov_taylor(w, 1e-3))


def test_target_equal_to_start_does_nothing():
    x, trace = continuation(homotopy_graph(), START, 0.3, 0.3)
    assert trace.iterations == 0
    np.testing.assert_array_equal(x, START)


def test_invalid_start_is_rejected():
    with pytest.raises(InvalidStartError):
        continuation(homotopy_graph(), [0.1, -1.0], 0.0, 1.0)


@pytest.mark.parametrize("use_pade", [False, True])
def test_toy_continuation(use_pade):
    opts = ContinuationOptions(eps_rov=1e-6, use_pade=use_pade, keep_approximants=True)
    g = homotopy_graph()
    x, trace = continuation(g, START, 0.0, 1.0, opts)
    assert trace.iterations <= 3
    assert residual(x) <= 1e-5
    lams = trace.lams()
    assert np.all(np.diff(np.concatenate([[0.0], lams])) > 0)
    assert lams[-1] == 1.0
    for rec in trace.steps:
        assert rec.residual <= 1e-4
    mid = trace.state_at(0.5)
    assert rms(g.evaluate(mid, 0.5)) <= 1e-4
    with pytest.raises(ValueError):
        trace.state_at(1.5)


def test_toy_equational_reaches_tight_residual():
    out = solve_toy(equational=True)
    assert out.residual <= 1e-8
    res = out.trace.residuals()
    assert np.all(res[1:] <= res[:-1] * (1 + 1e-6))


def test_equational_at_solution_takes_no_steps():
    g = system_graph()
    v = -g.evaluate(START)
    x, trace = equational_continuation(g, v, START)
    assert trace.iterations == 0


def test_accept_hook_halves_the_step():
    g = homotopy_graph()
    opts = ContinuationOptions(eps_rov=1e-6)
    _, free = continuation(g, START, 0.0, 1.0, opts)
    calls = []

    def reject_first(x, lam):
        calls.append(lam)
        return len(calls) > 1

    opts.accept = reject_first
    x, trace = continuation(g, START, 0.0, 1.0, opts)
    first = trace.steps[0]
    assert first.a == pytest.approx(0.5 * free.steps[0].a, rel=1e-12)
    assert first.lam < free.steps[0].lam
    assert trace.lams()[-1] == 1.0
    assert residual(x) <= 1e-5


def test_never_accepting_hook_fails():
    opts = ContinuationOptions(accept=lambda x, lam: False, max_halvings=3)
    with pytest.raises(NoProgressError):
        continuation(homotopy_graph(), START, 0.0, 1.0, opts)


def test_homotopy_affine_terms():
    g = system_graph()
    h = Homotopy(g, lam_vec=[1.0, 2.0], offset=[0.5, 0.5])
    np.testing.assert_allclose(h(START, 2.0), [2.5, 4.5], atol=1e-14)
