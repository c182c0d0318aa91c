import numpy as np
import pytest

from fosctl.errors import DimensionMismatch, NumericOverflow, SingularAggregateMatrix
from fosctl.fos_model import (FosModel, FosSimulator, reform_coeffs, residual_from_history,
                              simulate_exact, validate_model)
from fosctl.frac_core import gl_coefficients

from conftest import random_model

A = np.array([[1.0, 1.0], [0.0, 1.0]])


def gl_apply(terms, seq, t):
    """sum_i M_i Delta^{a_i} seq(t), zero before t=0."""
    out = 0.0
    for M, a in terms:
        c = gl_coefficients(a, t)
        out = out + M @ sum(c[j] * seq[t - j] for j in range(t + 1))
    return out


def equation_defect(model, traj):
    """Largest violation of the original difference equation along a trajectory."""
    X, U, W = traj.states, traj.inputs, traj.disturbances
    worst = 0.0
    for k in range(len(X) - 1):
        lhs = gl_apply(model.state_terms, X, k + 1)
        rhs = gl_apply(model.input_terms, U, k)
        if model.p:
            rhs = rhs + gl_apply(model.dist_terms, W, k)
        worst = max(worst, np.max(np.abs(lhs - rhs)) / (1 + np.max(np.abs(X[: k + 2]))))
    return worst


def test_example_is_valid(ex_model):
    rep = validate_model(ex_model.state_terms, ex_model.input_terms, ex_model.dist_terms)
    assert rep.ok and rep.rcond == pytest.approx(1.0)
    assert (ex_model.n, ex_model.m, ex_model.p) == (2, 1, 2)
    np.testing.assert_allclose(sum(M for M, _ in ex_model.state_terms), np.eye(2))


def test_singular_aggregate_rejected():
    with pytest.raises(SingularAggregateMatrix, match="singular aggregate matrix"):
        FosModel([(np.zeros((2, 2)), 0.5)], [(np.ones((2, 1)), 0.0)])
    with pytest.raises(SingularAggregateMatrix):
        FosModel([(A, 0.3), (-A, 1.1)], [(np.ones((2, 1)), 0.0)])
    rep = validate_model([(A, 0.3), (-A, 1.1)], [(np.ones((2, 1)), 0.0)])
    assert not rep.ok and rep.errors


def test_dimension_checks():
    with pytest.raises(DimensionMismatch):
        FosModel([(np.eye(2), 0.5)], [(np.ones((3, 1)), 0.0)])
    with pytest.raises(DimensionMismatch):
        FosModel([(np.eye(2), 0.5), (np.eye(3), 0.0)], [(np.ones((2, 1)), 0.0)])
    with pytest.raises(DimensionMismatch):
        FosModel([(np.eye(2), 0.5)], [(np.ones((2, 1)), 0.0)], [(np.ones((3, 2)), 0.0)])
    with pytest.raises(ValueError):
        FosModel([(np.eye(2), -0.5)], [(np.ones((2, 1)), 0.0)])
    with pytest.raises(ValueError):
        FosModel([(np.eye(2), 0.5)], [(np.ones((2, 1)), 0.0)], b_w=-1.0)


def test_reform_coeffs_example(ex_model):
    rc = reform_coeffs(ex_model, 30)
    c = gl_coefficients(1.7, 30)
    np.testing.assert_allclose(rc.hatA[0], np.eye(2))
    np.testing.assert_allclose(rc.checkA[1], 1.7 * A)
    for j in range(1, 31):
        np.testing.assert_allclose(rc.checkA[j], -A * c[j], atol=1e-15)
        np.testing.assert_allclose(rc.checkB[j], 0.0)
    np.testing.assert_allclose(rc.checkB[0], [[0.0], [1.0]])


def test_reform_coeffs_definitions(rng):
    for _ in range(10):
        model = random_model(rng)
        rc = reform_coeffs(model, 12)
        inv = np.linalg.inv(rc.hatA[0])
        for j in range(1, 13):
            np.testing.assert_allclose(rc.checkA[j], -inv @ rc.hatA[j], atol=1e-12)
        for j in range(13):
            np.testing.assert_allclose(rc.checkB[j], inv @ rc.hatB[j], atol=1e-12)
            np.testing.assert_allclose(rc.checkG[j], inv @ rc.hatG[j], atol=1e-12)


def test_all_zero_orders_is_static(rng):
    model = FosModel([(np.eye(2) + 0.3 * rng.standard_normal((2, 2)), 0.0)],
                     [(rng.standard_normal((2, 1)), 0.0)], [(np.eye(2), 0.0)])
    rc = reform_coeffs(model, 10)
    assert np.all(rc.checkA[1:] == 0) and np.all(rc.checkB[1:] == 0)
    u = rng.standard_normal((21, 1))
    w = rng.standard_normal((21, 2))
    tr = simulate_exact(model, lambda k: u[k], lambda k: w[k], x0=[5.0, -1.0], K=20)
    for k in range(20):
        np.testing.assert_allclose(tr.states[k + 1], rc.checkB[0] @ u[k] + rc.checkG[0] @ w[k],
                                   atol=1e-13)


def test_zero_solution(ex_model):
    tr = simulate_exact(ex_model, K=50)
    assert np.all(tr.states == 0)
    assert tr.states.shape == (51, 2) and tr.inputs.shape == (51, 1)
    assert tr.K == 50 and list(tr.times[:3]) == [0, 1, 2]


def test_first_step_example(ex_model):
    tr = simulate_exact(ex_model, x0=[1.0, 0.0], K=3)
    np.testing.assert_allclose(tr.states[1], [1.7, 0.0], atol=1e-15)


def test_satisfies_original_equation(rng):
    for _ in range(5):
        model = random_model(rng)
        K = 25
        u = rng.uniform(-1, 1, (K + 1, model.m))
        w = rng.uniform(-1, 1, (K + 1, model.p))
        tr = simulate_exact(model, lambda k: u[k], lambda k: w[k],
                            x0=rng.standard_normal(model.n), K=K)
        assert equation_defect(model, tr) < 1e-10


def test_causality(rng):
    model = random_model(rng)
    K, k0 = 30, 12
    u = rng.standard_normal((K + 1, model.m))
    w = rng.standard_normal((K + 1, model.p))
    u2, w2 = u.copy(), w.copy()
    u2[k0:] += 3.0
    w2[k0:] -= 2.0
    x0 = rng.standard_normal(model.n)
    a = simulate_exact(model, lambda k: u[k], lambda k: w[k], x0, K)
    b = simulate_exact(model, lambda k: u2[k], lambda k: w2[k], x0, K)
    assert np.array_equal(a.states[: k0 + 1], b.states[: k0 + 1])
    assert not np.allclose(a.states[k0 + 1], b.states[k0 + 1])


def test_linearity(rng):
    for _ in range(10):
        model = random_model(rng)
        K = int(rng.integers(5, 41))
        sig = [(rng.standard_normal(model.n), rng.standard_normal((K + 1, model.m)),
                rng.standard_normal((K + 1, model.p))) for _ in range(2)]
        alpha, beta = rng.standard_normal(2)
        run = lambda x0, u, w: simulate_exact(model, lambda k: u[k], lambda k: w[k], x0, K).states
        mix = run(*(alpha * s1 + beta * s2 for s1, s2 in zip(*sig)))
        ref = alpha * run(*sig[0]) + beta * run(*sig[1])
        assert np.max(np.abs(mix - ref)) <= 1e-10 * max(1.0, np.max(np.abs(ref)))


def test_integer_order_equivalence(rng):
    for _ in range(10):
        n, m = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        A1 = np.eye(n) + 0.3 * rng.standard_normal((n, n))
        B1 = rng.standard_normal((n, m))
        model = FosModel([(A1, 1.0)], [(B1, 0.0)])
        rc = reform_coeffs(model, 2)
        K = 30
        u = rng.uniform(-1, 1, (K + 1, m))
        x0 = rng.standard_normal(n)
        tr = simulate_exact(model, lambda k: u[k], None, x0, K)
        x = x0.copy()
        for k in range(K):
            np.testing.assert_allclose(tr.states[k], x, rtol=1e-12, atol=1e-12)
            x = rc.checkA[1] @ x + rc.checkB[0] @ u[k]
        assert np.all(rc.checkA[2:] == 0)


def test_feedback_closure(ex_model):
    K_fb = np.array([[-0.5, -1.0]])

    def law(k, sim):
        return K_fb @ sim.x[k]
    law.feedback = True
    tr = simulate_exact(ex_model, law, x0=[1.0, 1.0], K=20)
    for k in range(21):
        np.testing.assert_allclose(tr.inputs[k], K_fb @ tr.states[k])


def test_simulator_overflow_marks_divergence():
    model = FosModel([(np.eye(1), 0.0)], [(np.ones((1, 1)), 0.0)])
    sim = FosSimulator(model, [1.0], 10, overflow=1e3)
    sim.step([10.0], np.zeros(0))
    with pytest.raises(NumericOverflow):
        sim.step([1e6], np.zeros(0))
    assert sim.diverged


def test_residual_from_history_matches_definition(rng):
    model = random_model(rng)
    K, v = 20, 3
    u = rng.standard_normal((K + 1, model.m))
    w = rng.standard_normal((K + 1, model.p))
    tr = simulate_exact(model, lambda k: u[k], lambda k: w[k], rng.standard_normal(model.n), K)
    rc = reform_coeffs(model, K + 1)
    for k in range(K):
        r = residual_from_history(rc, tr.states, tr.inputs, tr.disturbances, k, v)
        want = sum((rc.checkA[j] @ tr.states[k - j + 1] for j in range(v + 1, k + 2)),
                   np.zeros(model.n))
        want = want + sum((rc.checkB[j] @ tr.inputs[k - j] for j in range(v + 1, k + 1)),
                          np.zeros(model.n))
        want = want + sum(rc.checkG[j] @ tr.disturbances[k - j] for j in range(k + 1))
        np.testing.assert_allclose(r, want, atol=1e-12)


def test_checkA_decay_is_polynomial(ex_model):
    # The factorial-type decay bound fails for fractional orders; the actual
    # decay of the GL coefficients is like j^(-a-1).
    rc = reform_coeffs(ex_model, 200)
    norms = np.linalg.norm(rc.checkA, ord=2, axis=(1, 2))
    j = np.arange(100, 201)
    slope = np.polyfit(np.log(j), np.log(norms[100:]), 1)[0]
    assert slope == pytest.approx(-2.7, abs=0.05)
