"""MPC tests: reference selection, corridor construction, barriers, the
Gauss-Newton solver and its finite-difference gradient oracle."""

import numpy as np
import pytest

from curviplan.costmap import Circle, rasterize_obstacles
from curviplan.liegroup import PLANAR, Pose
from curviplan.mpc import (
    CorridorBounds,
    DegenerateCorridor,
    InfeasiblePoint,
    MpcConfig,
    MpcProblem,
    PolylineRef,
    augmented_cost,
    barrier_term,
    build_corridor,
    gn_solve,
    gradient_and_normal,
    select_reference_poses,
    solve_corridor,
    solve_direct_tracking,
)
from curviplan.planner import LateralBitStar, PlannerConfig


class _AxisSolution:
    """Stand-in planner solution lying on the reference axis."""

    def q_at(self, p):
        return np.zeros_like(np.asarray(p, dtype=float))


def straight_refs(x0, v, h, K):
    return [Pose.from_xyt(x0 + v * h * k, 0.0, 0.0) for k in range(1, K + 1)]


# ----------------------------------------------------------------------
# reference selection
# ----------------------------------------------------------------------

def test_reference_offsets():
    line = PolylineRef(np.array([[0, 0, 0], [10, 0, 0]], dtype=float))
    refs = select_reference_poses(line, 1.25, 0.1, 4, 0.0)
    xs = [r.trans[0] for r in refs]
    np.testing.assert_allclose(xs, [0.125, 0.25, 0.375, 0.5], atol=1e-12)


def test_reference_clamps_at_end():
    line = PolylineRef(np.array([[0, 0, 0], [1, 0, 0]], dtype=float))
    refs = select_reference_poses(line, 1.25, 0.1, 12, 0.9)
    assert all(r.trans[0] == pytest.approx(1.0) for r in refs[1:])


def test_references_collinear_on_straight():
    line = PolylineRef(np.array([[0, 0, 0], [10, 0, 0]], dtype=float))
    refs = select_reference_poses(line, 1.0, 0.1, 10, 2.0)
    assert all(abs(r.trans[1]) < 1e-12 and abs(r.angle()) < 1e-12 for r in refs)


# ----------------------------------------------------------------------
# corridor
# ----------------------------------------------------------------------

def make_grid(obstacles):
    return rasterize_obstacles(obstacles, origin=(-2, -4), width_m=20,
                               height_m=8, resolution=0.05)


def test_corridor_empty_map(straight_frame):
    cor = build_corridor(straight_frame, make_grid([]), _AxisSolution(),
                         np.linspace(2, 6, 10), q_max=2.5)
    np.testing.assert_allclose(cor.q_hi, 2.5)
    np.testing.assert_allclose(cor.q_lo, -2.5)


def test_corridor_obstacle_band(straight_frame):
    # obstacle occupying q in [1, 2] at p = 4: upper bound stops just short
    grid = make_grid([Circle((4.0, 1.5), 0.5)])

    class Sol:
        def q_at(self, p):
            return np.full_like(np.asarray(p, dtype=float), 0.5)

    cor = build_corridor(straight_frame, grid, Sol(), np.array([4.0]),
                         q_max=2.5, step=0.1)
    # inflation (0.3) pulls the occupied band down to q ~ 0.7
    assert 0.5 < cor.q_hi[0] <= 0.75
    assert cor.q_lo[0] == pytest.approx(-2.5)
    assert cor.q_lo[0] < cor.q_ref[0] < cor.q_hi[0]


def test_corridor_degenerate_when_ref_occupied(straight_frame):
    grid = make_grid([Circle((4.0, 0.0), 0.5)])
    with pytest.raises(DegenerateCorridor):
        build_corridor(straight_frame, grid, _AxisSolution(),
                       np.array([4.0]), q_max=2.5)


# ----------------------------------------------------------------------
# barriers
# ----------------------------------------------------------------------

def test_barrier_values():
    v, _ = barrier_term(2.0, 3.0, "upper", 0.7)
    assert v == pytest.approx(0.0, abs=1e-15)          # unit slack
    v, _ = barrier_term(3.0 - np.exp(-1), 3.0, "upper", 1.0)
    assert v == pytest.approx(1.0, abs=1e-12)
    v2, _ = barrier_term(3.0 - np.exp(-1), 3.0, "upper", 2.0)
    assert v2 == pytest.approx(2.0 * v, abs=1e-12)     # linear in beta


def test_barrier_derivative_matches_finite_difference():
    for side, bound, x in (("upper", 1.0, 0.7), ("lower", -1.0, -0.7)):
        _, d = barrier_term(x, bound, side, 0.9)
        eps = 1e-7
        vp, _ = barrier_term(x + eps, bound, side, 0.9)
        vm, _ = barrier_term(x - eps, bound, side, 0.9)
        assert d == pytest.approx((vp - vm) / (2 * eps), abs=1e-6)


def test_barrier_infeasible_raises():
    with pytest.raises(InfeasiblePoint):
        barrier_term(3.0, 3.0, "upper", 1.0)
    with pytest.raises(InfeasiblePoint):
        barrier_term(4.0, 3.0, "upper", 1.0)


# ----------------------------------------------------------------------
# Gauss-Newton solver
# ----------------------------------------------------------------------

def test_steady_tracking_recovers_reference_speed():
    cfg = MpcConfig(K=10, r_weights=(1e-9, 1e-9), v_barrier=0.0)
    refs = straight_refs(0.0, cfg.v_ref, cfg.h, cfg.K)
    problem = MpcProblem(Pose.identity(), refs, cfg)
    u0 = np.tile([1.0, 0.0], (cfg.K, 1))
    traj = gn_solve(problem, u0)
    assert traj.converged
    np.testing.assert_allclose(traj.controls[:, 0], cfg.v_ref, atol=1e-6)
    np.testing.assert_allclose(traj.controls[:, 1], 0.0, atol=1e-6)
    for ref, got in zip(refs, traj.poses):
        assert np.linalg.norm(ref.trans - got.trans) <= 1e-6


def test_velocity_bounds_strictly_satisfied():
    cfg = MpcConfig(K=12, u_max=(1.0, 1.5), v_ref=1.25)
    refs = straight_refs(0.0, cfg.v_ref, cfg.h, cfg.K)
    traj = gn_solve(MpcProblem(Pose.identity(), refs, cfg),
                    np.tile([0.8, 0.0], (cfg.K, 1)))
    assert np.all(traj.controls[:, 0] < 1.0)
    assert np.all(traj.controls[:, 0] > cfg.u_min[0])
    assert np.all(np.abs(traj.controls[:, 1]) < 1.5)


def test_rollout_consistency_exact():
    cfg = MpcConfig(K=8)
    refs = straight_refs(0.0, cfg.v_ref, cfg.h, cfg.K)
    problem = MpcProblem(Pose.from_xyt(0, 0.1, 0.05), refs, cfg)
    traj = gn_solve(problem, np.tile([1.0, 0.0], (cfg.K, 1)))
    x = problem.x0
    for k in range(cfg.K):
        x = x @ PLANAR.exp_map(problem.model.full_twist(traj.controls[k]), cfg.h)
        assert np.array_equal(x.as_matrix(), traj.poses[k].as_matrix())


def _random_feasible_problem(rng, with_corridor=True):
    cfg = MpcConfig(K=6)
    refs = []
    x = 0.0
    for k in range(cfg.K):
        x += cfg.v_ref * cfg.h
        refs.append(Pose.from_xyt(x, 0.05 * np.sin(x), 0.1 * np.cos(x)))
    corridor = None
    if with_corridor:
        corridor = CorridorBounds(q_lo=np.full(cfg.K, -1.5),
                                  q_hi=np.full(cfg.K, 1.5),
                                  q_ref=np.zeros(cfg.K))
    problem = MpcProblem(Pose.from_xyt(0, rng.uniform(-0.1, 0.1),
                                       rng.uniform(-0.1, 0.1)),
                         refs, cfg, corridor=corridor)
    u = np.column_stack([rng.uniform(0.2, 1.2, cfg.K),
                         rng.uniform(-0.5, 0.5, cfg.K)])
    return problem, u


def test_gradient_matches_central_differences():
    rng = np.random.default_rng(0)
    beta = 1e-2
    for _ in range(20):
        problem, u = _random_feasible_problem(rng)
        grad, _, _, _ = gradient_and_normal(problem, u, beta)
        flat = u.reshape(-1)
        num = np.empty_like(flat)
        eps = 1e-6
        for i in range(len(flat)):
            up = flat.copy(); up[i] += eps
            dn = flat.copy(); dn[i] -= eps
            num[i] = (augmented_cost(problem, up.reshape(u.shape), beta)
                      - augmented_cost(problem, dn.reshape(u.shape), beta)) / (2 * eps)
        rel = np.linalg.norm(grad - num) / max(np.linalg.norm(num), 1e-9)
        assert rel <= 1e-4


def test_gn_descent_non_increasing():
    rng = np.random.default_rng(1)
    problem, u = _random_feasible_problem(rng)
    trace = []
    gn_solve(problem, u, trace=trace)
    # within each beta stage the accepted costs never increase
    by_beta = {}
    for beta, cost in trace:
        by_beta.setdefault(beta, []).append(cost)
    assert by_beta
    for costs in by_beta.values():
        assert all(a >= b - 1e-9 for a, b in zip(costs, costs[1:]))


# ----------------------------------------------------------------------
# the two controllers end to end
# ----------------------------------------------------------------------

def test_direct_tracking_straight(straight_frame):
    grid = make_grid([])
    sol = LateralBitStar(straight_frame, PlannerConfig(seed=0)).plan(grid, (0.0, 0.0))
    traj = solve_direct_tracking(sol, Pose.from_xyt(2.0, 0.0, 0.0))
    assert traj.converged
    assert np.all(np.abs(traj.controls[:, 1]) <= 1e-3)


def test_corridor_controller_respects_narrow_corridor(straight_frame):
    grid = make_grid([])
    cfg = MpcConfig(K=15)
    # force a narrow corridor by capping q_max at 0.4
    traj = solve_corridor(straight_frame, _AxisSolution(), grid,
                          Pose.from_xyt(2.0, 0.05, 0.0), config=cfg, q_max=0.4)
    assert traj.converged
    assert np.all(np.abs(traj.laterals) < 0.4)


def test_corridor_controller_weaves_with_planner(straight_frame):
    grid = make_grid([Circle((7.5, 0.0), 0.4)])
    sol = LateralBitStar(straight_frame, PlannerConfig(seed=2)).plan(grid, (0.0, 0.0))
    traj = solve_corridor(straight_frame, sol, grid,
                          Pose.from_xyt(5.5, sol.q_at(5.5), 0.0),
                          config=MpcConfig(K=25))
    assert traj.status in ("converged", "max_iters") or traj.converged
    # every rolled-out pose strictly inside its corridor bounds
    cor = build_corridor(straight_frame, grid, sol,
                         [5.5 + 1.25 * 0.1 * k for k in range(1, 26)], 2.5)
    assert np.all(traj.laterals < cor.q_hi) and np.all(traj.laterals > cor.q_lo)
