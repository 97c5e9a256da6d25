"""Planar pose-group tests: closed forms against independent oracles."""

import numpy as np
import pytest

from curviplan.liegroup import (
    AngleAtBranchCut,
    Pose,
    adjoint,
    curly_hat,
    dot_operator,
    exp_map,
    hat,
    left_jacobian,
    left_jacobian_inv,
    log_map,
)


def integrate_twist_ode(xi, dt, steps=20000):
    """4th-order Runge-Kutta integration of dM/dt = M @ hat(xi), M(0)=I."""
    m = np.eye(3)
    w = hat(xi)
    h = dt / steps
    for _ in range(steps):
        k1 = m @ w
        k2 = (m + 0.5 * h * k1) @ w
        k3 = (m + 0.5 * h * k2) @ w
        k4 = (m + h * k3) @ w
        m = m + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return m


def series_left_jacobian(xi, terms=20):
    """Truncated-series oracle: sum_n ad(xi)^n / (n+1)!."""
    ad = curly_hat(xi)
    out = np.zeros((3, 3))
    term = np.eye(3)
    fact = 1.0
    for n in range(terms):
        fact *= n + 1
        out += term / fact
        term = term @ ad
    return out


def test_exp_zero_twist_is_identity():
    p = exp_map(np.zeros(3), dt=1.0)
    np.testing.assert_allclose(p.rot, np.eye(2), atol=1e-15)
    np.testing.assert_allclose(p.trans, np.zeros(2), atol=1e-15)


def test_exp_pure_translation():
    p = exp_map(np.array([1.0, 0.0, 0.0]), dt=2.0)
    np.testing.assert_allclose(p.trans, [2.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(p.rot, np.eye(2), atol=1e-15)


def test_exp_unit_curvature_arc_matches_ode():
    xi = np.array([1.0, 0.0, np.pi / 2])
    p = exp_map(xi, dt=1.0)
    m = integrate_twist_ode(xi, 1.0)
    np.testing.assert_allclose(p.as_matrix(), m, atol=1e-9)


def test_exp_random_twists_match_ode():
    rng = np.random.default_rng(7)
    for _ in range(5):
        xi = rng.uniform(-1.5, 1.5, size=3)
        np.testing.assert_allclose(
            exp_map(xi, dt=1.0).as_matrix(), integrate_twist_ode(xi, 1.0), atol=1e-8
        )


def test_log_identity_and_pure_translation():
    np.testing.assert_allclose(log_map(Pose.identity()), np.zeros(3), atol=1e-15)
    np.testing.assert_allclose(
        log_map(Pose.from_xyt(3.0, 4.0, 0.0)), [3.0, 4.0, 0.0], atol=1e-14
    )


def test_log_raises_at_branch_cut():
    with pytest.raises(AngleAtBranchCut):
        log_map(Pose.from_xyt(1.0, 0.0, np.pi))


def test_exp_log_round_trip_10k():
    rng = np.random.default_rng(11)
    xis = rng.uniform(-1.0, 1.0, size=(10000, 3))
    xis[:, 2] = rng.uniform(-(np.pi - 0.1), np.pi - 0.1, size=10000)
    worst = 0.0
    for xi in xis:
        err = np.linalg.norm(log_map(exp_map(xi)) - xi)
        worst = max(worst, err)
    assert worst <= 1e-9


def test_left_jacobian_identity_and_first_order():
    np.testing.assert_allclose(left_jacobian(np.zeros(3)), np.eye(3), atol=1e-15)
    xi = np.array([1e-4, -2e-4, 1.5e-4])
    np.testing.assert_allclose(
        left_jacobian(xi), np.eye(3) + 0.5 * curly_hat(xi), atol=1e-7
    )


def test_left_jacobian_matches_series():
    rng = np.random.default_rng(3)
    for _ in range(50):
        xi = rng.uniform(-2.0, 2.0, size=3)
        np.testing.assert_allclose(
            left_jacobian(xi), series_left_jacobian(xi, terms=25), atol=1e-9
        )


def test_left_jacobian_inverse():
    xi = np.array([0.4, -0.7, 1.1])
    np.testing.assert_allclose(
        left_jacobian(xi) @ left_jacobian_inv(xi), np.eye(3), atol=1e-12
    )


def test_left_jacobian_first_order_exp_relation():
    # exp((x + dx)^) ~ exp((J_l(x) dx)^) exp(x^), finite-difference check.
    rng = np.random.default_rng(5)
    for _ in range(10):
        x = rng.uniform(-1.0, 1.0, size=3)
        dx = rng.uniform(-1.0, 1.0, size=3) * 1e-6
        lhs = exp_map(x + dx).as_matrix()
        rhs = (exp_map(left_jacobian(x) @ dx) @ exp_map(x)).as_matrix()
        np.testing.assert_allclose(lhs, rhs, atol=1e-11)


def test_adjoint_identity():
    # T exp(x^) = exp((Ad_T x)^) T
    rng = np.random.default_rng(13)
    for _ in range(100):
        t = Pose.from_xyt(*rng.uniform(-5, 5, 2), rng.uniform(-3, 3))
        x = rng.uniform(-1, 1, 3)
        lhs = (t @ exp_map(x)).as_matrix()
        rhs = (exp_map(adjoint(t) @ x) @ t).as_matrix()
        np.testing.assert_allclose(lhs, rhs, atol=1e-9)


def test_dot_operator_identity_and_origin():
    rng = np.random.default_rng(17)
    for _ in range(100):
        eps = rng.uniform(-2, 2, 3)
        p = rng.uniform(-5, 5, 3)
        np.testing.assert_allclose(hat(eps) @ p, dot_operator(p) @ eps, atol=1e-12)
    # homogeneous origin: unit eta, zero position
    np.testing.assert_allclose(
        dot_operator(np.array([0.0, 0.0, 1.0])),
        np.array([[1.0, 0, 0], [0, 1.0, 0], [0, 0, 0]]),
        atol=1e-15,
    )
    np.testing.assert_allclose(
        dot_operator(np.array([2.0, -1.0, 1.0])) @ np.zeros(3), np.zeros(3), atol=1e-15
    )


def test_pose_composition_closure():
    rng = np.random.default_rng(19)
    for _ in range(50):
        a = Pose.from_xyt(*rng.uniform(-5, 5, 2), rng.uniform(-3, 3))
        b = Pose.from_xyt(*rng.uniform(-5, 5, 2), rng.uniform(-3, 3))
        c = a @ b
        np.testing.assert_allclose(c.rot @ c.rot.T, np.eye(2), atol=1e-9)
        assert abs(np.linalg.det(c.rot) - 1.0) < 1e-9
        ident = (a @ a.inverse()).as_matrix()
        np.testing.assert_allclose(ident, np.eye(3), atol=1e-9)
