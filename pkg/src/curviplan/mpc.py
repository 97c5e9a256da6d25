"""Model-predictive controllers on the planar pose group.

Two flavours share one Gauss-Newton core:
  - direct tracking: reference poses taken along the planner's Euclidean
    solution polyline;
  - homotopy-guided corridor: reference poses taken on the teach path, with
    per-step lateral corridor bounds (from the planner solution's homotopy
    class) enforced through squared-log barriers.

The solver linearizes the pose error and the lateral constraint with the
group's Jacobians and the homogeneous-point "dot" operator, eliminates the
pose perturbations through the kinematic recursion, and solves a dense
quadratic in the stacked control update.  An outer loop decays the barrier
scalar with warm starts; a backtracking line search keeps every accepted
iterate strictly feasible.

Pose convention is world-from-body throughout (see liegroup); the pose error
for step k is log(ref_k^-1 * X_k), whose lateral component is exactly the
robot's offset in the reference frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .liegroup import PLANAR, Pose

_FEAS_EPS = 1e-9
_CORRIDOR_MARGIN = 1e-3    # strict-interior margin when forming barriers (m)


class DegenerateCorridor(RuntimeError):
    """The corridor reference point itself is occupied: the planner solution
    is stale and the caller must replan before controlling."""


class InfeasiblePoint(ValueError):
    """Barrier evaluated at or beyond its bound."""


@dataclass
class MpcConfig:
    K: int = 25                      # horizon steps
    h: float = 0.1                   # step period (s)
    q_weights: tuple = (2.0, 10.0, 4.0)    # pose-error weights (x, y, yaw)
    r_weights: tuple = (0.3, 0.15)         # effort weights (v, omega)
    v_barrier: float = 1.0           # velocity-barrier weight (V diagonal)
    w_barrier: float = 1.0           # corridor-barrier weight (W diagonal)
    beta: float = 1e-2               # barrier scalar, decays across reweights
    beta_decay: float = 0.5
    outer_reweights: int = 3
    u_min: tuple = (-0.5, -1.5)      # (v, omega) lower bounds
    u_max: tuple = (2.0, 1.5)
    v_ref: float = 1.25              # nominal tracking speed (m/s)
    gn_tol: float = 1e-6
    gn_max_iters: int = 50


@dataclass
class KinematicModel:
    """Selection matrix P mapping reduced controls to the full twist; the
    unicycle keeps forward and yaw rates only."""

    projection: np.ndarray = field(
        default_factory=lambda: np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]))
    group: object = PLANAR

    def full_twist(self, u):
        return self.projection.T @ np.asarray(u, dtype=float)


UNICYCLE = KinematicModel()


@dataclass
class CorridorBounds:
    q_lo: np.ndarray      # (K,) signed lower lateral bound per step
    q_hi: np.ndarray      # (K,) signed upper lateral bound per step
    q_ref: np.ndarray     # (K,) planner solution lateral value per step

    def width(self):
        return self.q_hi - self.q_lo


@dataclass
class Trajectory:
    poses: list            # K Pose values (rollout of controls from x0)
    controls: np.ndarray   # (K, 2)
    converged: bool
    iterations: int
    status: str = "converged"
    cost: float = np.nan
    laterals: np.ndarray = None   # (K,) lateral offsets in reference frames


# ----------------------------------------------------------------------
# references
# ----------------------------------------------------------------------

class PolylineRef:
    """Arc-length-parameterized reference over an (x, y, psi) polyline."""

    def __init__(self, xyt: np.ndarray):
        xyt = np.asarray(xyt, dtype=float)
        self.xyt = xyt.copy()
        self.xyt[:, 2] = np.unwrap(xyt[:, 2])
        d = np.linalg.norm(np.diff(xyt[:, :2], axis=0), axis=1)
        self.s = np.concatenate([[0.0], np.cumsum(d)])
        self.length = float(self.s[-1])

    def pose_at(self, s: float) -> np.ndarray:
        s = float(np.clip(s, 0.0, self.length))
        i = int(np.clip(np.searchsorted(self.s, s, side="right") - 1,
                        0, len(self.s) - 2))
        ds = self.s[i + 1] - self.s[i]
        t = 0.0 if ds <= 0 else (s - self.s[i]) / ds
        return self.xyt[i] * (1 - t) + self.xyt[i + 1] * t

    def nearest_s(self, xy) -> float:
        d = np.linalg.norm(self.xyt[:, :2] - np.asarray(xy), axis=1)
        return float(self.s[int(np.argmin(d))])


def select_reference_poses(source, v_ref: float, h: float, K: int,
                           from_p: float):
    """K reference poses at arc offsets v_ref*h*k beyond from_p; the terminal
    pose repeats past the end of the source."""
    out = []
    for k in range(1, K + 1):
        xyt = source.pose_at(from_p + v_ref * h * k)
        out.append(Pose.from_xyt(*xyt))
    return out


# ----------------------------------------------------------------------
# corridor construction
# ----------------------------------------------------------------------

def build_corridor(frame, costmap, planner_solution, ref_ps, q_max,
                   step: float = 0.10) -> CorridorBounds:
    """Lateral free-space bounds around the teach path at each reference
    arc length, ray-marched in curvilinear space from the planner solution's
    lateral value out to the corridor limits."""
    ref_ps = np.asarray(ref_ps, dtype=float)
    K = len(ref_ps)
    q_lo = np.empty(K)
    q_hi = np.empty(K)
    q_ref = np.empty(K)
    roc = frame.roc
    for k, p in enumerate(ref_ps):
        qr = float(planner_solution.q_at(p)) if planner_solution is not None else 0.0
        q_ref[k] = qr
        pt = frame.curv_to_euclid(p, qr)
        if costmap.is_occupied(pt[0], pt[1]):
            raise DegenerateCorridor(f"reference point at p={p:.2f} occupied")
        seg = int(np.clip(np.searchsorted(frame.p_table, p, side="right") - 1,
                          0, len(roc) - 1))
        cap = min(q_max, float(frame.q_max_at(p)))
        # the inside of a turn is only meaningful out to the turn radius
        hi_cap = min(cap, abs(roc[seg])) if roc[seg] > 0 else cap
        lo_cap = min(cap, abs(roc[seg])) if roc[seg] < 0 else cap
        q_hi[k] = _march(frame, costmap, p, qr, +1.0, hi_cap, step)
        q_lo[k] = _march(frame, costmap, p, qr, -1.0, lo_cap, step)
    return CorridorBounds(q_lo, q_hi, q_ref)


def _march(frame, costmap, p, q_start, direction, cap, step):
    """Last collision-free lateral value before the first occupied sample;
    the full (signed) cap when the whole ray is free."""
    limit = direction * cap
    span = limit - direction * q_start
    if span <= 0:
        return q_start
    n = int(np.floor(span / step + 1e-9))
    qs = q_start + direction * step * np.arange(1, n + 1)
    qs = np.append(qs, limit) if n == 0 or direction * qs[-1] < cap - 1e-9 else qs
    pts = np.atleast_2d(frame.curv_to_euclid(np.full(len(qs), p), qs))
    occ = costmap.is_occupied(pts[:, 0], pts[:, 1])
    hit = np.nonzero(occ)[0]
    if len(hit) == 0:
        return limit
    return q_start if hit[0] == 0 else float(qs[hit[0] - 1])


# ----------------------------------------------------------------------
# barriers
# ----------------------------------------------------------------------

def barrier_term(x: float, bound: float, side: str, beta: float):
    """Squared-log barrier value and derivative at x for one inequality.

    Upper side penalizes x <= bound with beta*ln^2(bound - x); lower side
    penalizes x >= bound with beta*ln^2(x - bound).  Zero at unit slack,
    infinite at the bound.
    """
    slack = (bound - x) if side == "upper" else (x - bound)
    if slack <= 0.0:
        raise InfeasiblePoint(f"barrier slack {slack} <= 0")
    ln = np.log(slack)
    sign = -1.0 if side == "upper" else 1.0
    return beta * ln * ln, sign * 2.0 * beta * ln / slack


# ----------------------------------------------------------------------
# the Gauss-Newton core
# ----------------------------------------------------------------------

@dataclass
class MpcProblem:
    x0: Pose
    refs: list                      # K reference Pose values
    config: MpcConfig
    model: KinematicModel = field(default_factory=lambda: UNICYCLE)
    corridor: CorridorBounds = None


def _rollout(problem: MpcProblem, u: np.ndarray):
    g = problem.model.group
    h = problem.config.h
    poses = []
    x = problem.x0
    for k in range(len(u)):
        x = x @ g.exp_map(problem.model.full_twist(u[k]), h)
        poses.append(x)
    return poses


def _errors_and_laterals(problem, poses):
    g = problem.model.group
    errs = []
    lats = np.empty(len(poses))
    rel_mats = []
    for k, (ref, x) in enumerate(zip(problem.refs, poses)):
        rel = ref.inverse() @ x
        errs.append(g.log_map(rel))
        lats[k] = rel.trans[g.LATERAL_INDEX]
        rel_mats.append(rel.as_matrix())
    return np.array(errs), lats, rel_mats


def _barrier_cost(problem, u, lats, beta):
    cfg = problem.config
    total = 0.0
    for k in range(len(u)):
        for i in (0, 1):
            v, _ = barrier_term(u[k, i], cfg.u_max[i], "upper", beta)
            total += cfg.v_barrier * v
            v, _ = barrier_term(u[k, i], cfg.u_min[i], "lower", beta)
            total += cfg.v_barrier * v
    if problem.corridor is not None:
        for k in range(len(u)):
            hi = problem.corridor.q_hi[k] - _CORRIDOR_MARGIN
            lo = problem.corridor.q_lo[k] + _CORRIDOR_MARGIN
            v, _ = barrier_term(lats[k], hi, "upper", beta)
            total += cfg.w_barrier * v
            v, _ = barrier_term(lats[k], lo, "lower", beta)
            total += cfg.w_barrier * v
    return total


def augmented_cost(problem: MpcProblem, u: np.ndarray, beta: float) -> float:
    """Full nonlinear cost: pose tracking + effort + all barriers."""
    poses = _rollout(problem, u)
    errs, lats, _ = _errors_and_laterals(problem, poses)
    qw = np.asarray(problem.config.q_weights)
    rw = np.asarray(problem.config.r_weights)
    cost = float(np.sum(errs * errs * qw) + np.sum(u * u * rw))
    return cost + _barrier_cost(problem, u, lats, beta)


def _feasible(problem, u, lats) -> bool:
    cfg = problem.config
    if np.any(u <= np.asarray(cfg.u_min) + _FEAS_EPS):
        return False
    if np.any(u >= np.asarray(cfg.u_max) - _FEAS_EPS):
        return False
    if problem.corridor is not None:
        if np.any(lats >= problem.corridor.q_hi - _CORRIDOR_MARGIN - _FEAS_EPS):
            return False
        if np.any(lats <= problem.corridor.q_lo + _CORRIDOR_MARGIN + _FEAS_EPS):
            return False
    return True


def gradient_and_normal(problem: MpcProblem, u: np.ndarray, beta: float):
    """Analytic gradient of the augmented cost and the Gauss-Newton normal
    matrix at the operating point u (both in the stacked control space)."""
    g = problem.model.group
    cfg = problem.config
    K = len(u)
    nx = g.DIM
    nu = u.shape[1]
    h = cfg.h
    P_T = problem.model.projection.T

    poses = _rollout(problem, u)
    errs, lats, rel_mats = _errors_and_laterals(problem, poses)

    # control-to-pose-perturbation map D: eta = D du, via the recursion
    # eta_k = B_k eta_{k-1} + A_k P^T du_k
    D = np.zeros((nx * K, nu * K))
    prev = None
    for k in range(K):
        phi = problem.model.full_twist(u[k]) * h
        A_k = g.left_jacobian(-phi) * h          # J_r(phi) h = J_l(-phi) h
        B_k = g.adjoint(g.exp_map(-phi))         # Ad(exp(phi))^-1
        row = slice(nx * k, nx * (k + 1))
        if prev is not None:
            D[row] = B_k @ D[prev]
        D[row, nu * k: nu * (k + 1)] += A_k @ P_T
        prev = row

    # pose-error linearization e ~ e_op + F eta
    E = np.empty_like(D)
    for k in range(K):
        row = slice(nx * k, nx * (k + 1))
        F_k = g.right_jacobian_inv(errs[k])
        E[row] = F_k @ D[row]

    qw = np.tile(np.asarray(cfg.q_weights, dtype=float), K)
    rw = np.tile(np.asarray(cfg.r_weights, dtype=float), K)
    e_op = errs.reshape(-1)
    u_op = u.reshape(-1)

    normal = (E * qw[:, None]).T @ E + np.diag(rw)
    grad = E.T @ (qw * e_op) + rw * u_op

    # velocity barriers: residuals beta*ln(slack), Jacobian M
    umax = np.tile(np.asarray(cfg.u_max, dtype=float), K)
    umin = np.tile(np.asarray(cfg.u_min, dtype=float), K)
    s_up = umax - u_op
    s_lo = u_op - umin
    phi_up = beta * np.log(s_up)
    phi_lo = beta * np.log(s_lo)
    m_up = -beta / s_up
    m_lo = beta / s_lo
    vb = cfg.v_barrier
    grad += vb * (m_up * phi_up + m_lo * phi_lo)
    normal += np.diag(vb * (m_up ** 2 + m_lo ** 2))

    if problem.corridor is not None:
        origin_dot = g.dot_operator(g.HOMOGENEOUS_ORIGIN)
        L = np.empty((K, nu * K))
        for k in range(K):
            gk = (rel_mats[k] @ origin_dot)[g.LATERAL_INDEX]
            L[k] = gk @ D[nx * k: nx * (k + 1)]
        hi = problem.corridor.q_hi - _CORRIDOR_MARGIN
        lo = problem.corridor.q_lo + _CORRIDOR_MARGIN
        s_hi = hi - lats
        s_lo2 = lats - lo
        phi_hi = beta * np.log(s_hi)
        phi_lo2 = beta * np.log(s_lo2)
        n_hi = -beta / s_hi
        n_lo = beta / s_lo2
        wb = cfg.w_barrier
        grad += L.T @ (wb * (n_hi * phi_hi + n_lo * phi_lo2))
        normal += (L * (wb * (n_hi ** 2 + n_lo ** 2))[:, None]).T @ L

    return 2.0 * grad, 2.0 * normal, poses, lats


def gn_solve(problem: MpcProblem, u_init: np.ndarray,
             trace: list = None) -> Trajectory:
    """Iteratively reweighted Gauss-Newton with backtracking line search.

    The initial controls must be strictly inside the velocity bounds and the
    initial rollout strictly inside the corridor (when present).  When given,
    `trace` collects (beta, augmented cost) after every accepted step.
    """
    cfg = problem.config
    u = np.array(u_init, dtype=float).reshape(cfg.K, -1)
    poses = _rollout(problem, u)
    _, lats, _ = _errors_and_laterals(problem, poses)
    if not _feasible(problem, u, lats):
        return Trajectory(poses, u, False, 0, status="infeasible_start",
                          cost=np.nan, laterals=lats)

    beta = cfg.beta
    status = "converged"
    iters = 0
    for outer in range(cfg.outer_reweights):
        for _ in range(cfg.gn_max_iters):
            iters += 1
            grad, normal, poses, lats = gradient_and_normal(problem, u, beta)
            try:
                du = np.linalg.solve(normal, -grad)
            except np.linalg.LinAlgError:
                du = np.linalg.lstsq(normal, -grad, rcond=None)[0]
            du = du.reshape(cfg.K, -1)
            if np.linalg.norm(du) < cfg.gn_tol:
                break
            cost_op = augmented_cost(problem, u, beta)
            step_ok = False
            scale = 1.0
            for _ in range(6):   # 1, 1/2, ..., 1/32; spec allows 5 halvings
                u_try = u + scale * du
                poses_try = _rollout(problem, u_try)
                _, lats_try, _ = _errors_and_laterals(problem, poses_try)
                if _feasible(problem, u_try, lats_try):
                    cost_try = augmented_cost(problem, u_try, beta)
                    if cost_try <= cost_op + 1e-12:
                        u = u_try
                        step_ok = True
                        if trace is not None:
                            trace.append((beta, cost_try))
                        break
                scale *= 0.5
            if not step_ok:
                status = "line_search_failure"
                break
        if status == "line_search_failure":
            break
        beta *= cfg.beta_decay
    poses = _rollout(problem, u)
    _, lats, _ = _errors_and_laterals(problem, poses)
    return Trajectory(poses, u, status == "converged", iters, status=status,
                      cost=augmented_cost(problem, u, beta / cfg.beta_decay),
                      laterals=lats)


# ----------------------------------------------------------------------
# the two controllers
# ----------------------------------------------------------------------

def _default_controls(cfg: MpcConfig) -> np.ndarray:
    u0 = np.array([min(cfg.v_ref, 0.8 * cfg.u_max[0]), 0.0])
    return np.tile(u0, (cfg.K, 1))


def _sanitize_controls(u, cfg) -> np.ndarray:
    lo = np.asarray(cfg.u_min) + 1e-3
    hi = np.asarray(cfg.u_max) - 1e-3
    return np.clip(np.asarray(u, dtype=float).reshape(cfg.K, -1), lo, hi)


def solve_direct_tracking(planner_solution, robot_pose: Pose,
                          config: MpcConfig = None,
                          model: KinematicModel = None,
                          u_init=None) -> Trajectory:
    """Track the planner's Euclidean solution polyline directly."""
    cfg = config or MpcConfig()
    model = model or UNICYCLE
    ref = PolylineRef(planner_solution.euclid)
    from_s = ref.nearest_s(robot_pose.trans)
    refs = select_reference_poses(ref, cfg.v_ref, cfg.h, cfg.K, from_s)
    problem = MpcProblem(robot_pose, refs, cfg, model, corridor=None)
    u0 = _sanitize_controls(u_init, cfg) if u_init is not None \
        else _default_controls(cfg)
    return gn_solve(problem, u0)


def solve_corridor(frame, planner_solution, costmap, robot_pose: Pose,
                   config: MpcConfig = None, model: KinematicModel = None,
                   u_init=None, q_max: float = None,
                   collision_step: float = 0.10, hint_p: float = None) -> Trajectory:
    """Track the teach path inside lateral corridor bounds derived from the
    planner solution's homotopy class."""
    cfg = config or MpcConfig()
    model = model or UNICYCLE
    p_rob, _, _ = frame.euclid_to_curv_nearest(np.asarray(robot_pose.trans),
                                               hint_p=hint_p)
    ref_ps = np.array([min(p_rob + cfg.v_ref * cfg.h * k, frame.p_len)
                       for k in range(1, cfg.K + 1)])
    refs = [Pose.from_xyt(*frame.interpolate_pose(p)) for p in ref_ps]
    cap = q_max if q_max is not None else frame.q_bound()
    corridor = build_corridor(frame, costmap, planner_solution, ref_ps, cap,
                              step=collision_step)
    problem = MpcProblem(robot_pose, refs, cfg, model, corridor=corridor)

    candidates = []
    if u_init is not None:
        candidates.append(_sanitize_controls(u_init, cfg))
    candidates.append(_default_controls(cfg))
    candidates.append(_midline_controls(frame, corridor, ref_ps, robot_pose,
                                        cfg, model))
    for u0 in candidates:
        poses = _rollout(problem, u0)
        _, lats, _ = _errors_and_laterals(problem, poses)
        if _feasible(problem, u0, lats):
            return gn_solve(problem, u0)
    # no strictly feasible start: hold, flag for replanning
    u_hold = np.tile([1e-3, 0.0], (cfg.K, 1))
    poses = _rollout(problem, u_hold)
    _, lats, _ = _errors_and_laterals(problem, poses)
    return Trajectory(poses, u_hold, False, 0, status="infeasible_start",
                      cost=np.nan, laterals=lats)


def _midline_controls(frame, corridor, ref_ps, robot_pose, cfg, model):
    """Feasibility fallback: controls that chase the corridor midline."""
    g = model.group
    mid = 0.5 * (corridor.q_lo + corridor.q_hi)
    u = np.zeros((cfg.K, 2))
    x = robot_pose
    lo = np.asarray(cfg.u_min) + 1e-3
    hi = np.asarray(cfg.u_max) - 1e-3
    for k in range(cfg.K):
        tgt = frame.curv_to_euclid(ref_ps[k], mid[k])
        xi = g.log_map(x.inverse() @ Pose.from_xyt(*tgt))
        u[k] = np.clip([xi[0] / cfg.h / max(cfg.K - k, 1) * 2.0,
                        xi[2] / cfg.h / max(cfg.K - k, 1) * 2.0], lo, hi)
        x = x @ g.exp_map(model.full_twist(u[k]), cfg.h)
    return u
