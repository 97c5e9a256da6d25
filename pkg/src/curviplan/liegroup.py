"""Minimal matrix Lie-group layer for the planar pose group.

Conventions (shared by the MPC and the simulator):
  - A Pose is the world-from-body transform: p_world = rot @ p_body + trans.
  - A twist is xi = (v_x, v_y, omega) expressed in the body frame,
    translation components first.
  - Driving with body twist xi for dt seconds composes on the body side:
    pose' = pose * exp_map(xi, dt).

Closed forms are used for exp/log/left Jacobian; the truncated-series
definitions are kept only as test oracles.  The MPC is written against the
small group interface at the bottom of this module so a spatial group can be
dropped in later.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# 90-degree rotation generator; S @ v rotates v by +pi/2.
_S = np.array([[0.0, -1.0], [1.0, 0.0]])

_BRANCH_CUT_TOL = 1e-9
_SMALL_ANGLE = 1e-7


class AngleAtBranchCut(ValueError):
    """Rotation angle is at pi within tolerance: the principal log is not
    unique and the caller must perturb the pose before taking log_map."""


@dataclass(frozen=True)
class Pose:
    """Planar rigid transform (world-from-body)."""

    rot: np.ndarray    # (2, 2) orthonormal, det +1
    trans: np.ndarray  # (2,) meters

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(2), np.zeros(2))

    @staticmethod
    def from_xyt(x: float, y: float, theta: float) -> "Pose":
        c, s = np.cos(theta), np.sin(theta)
        return Pose(np.array([[c, -s], [s, c]]), np.array([float(x), float(y)]))

    def to_xyt(self) -> np.ndarray:
        return np.array([self.trans[0], self.trans[1], self.angle()])

    def angle(self) -> float:
        return float(np.arctan2(self.rot[1, 0], self.rot[0, 0]))

    def compose(self, other: "Pose") -> "Pose":
        return Pose(self.rot @ other.rot, self.rot @ other.trans + self.trans)

    def __matmul__(self, other: "Pose") -> "Pose":
        return self.compose(other)

    def inverse(self) -> "Pose":
        rt = self.rot.T
        return Pose(rt, -(rt @ self.trans))

    def apply(self, pts: np.ndarray) -> np.ndarray:
        """Map body-frame point(s), shape (2,) or (N, 2), into the world."""
        return pts @ self.rot.T + self.trans

    def as_matrix(self) -> np.ndarray:
        m = np.eye(3)
        m[:2, :2] = self.rot
        m[:2, 2] = self.trans
        return m


def hat(xi: np.ndarray) -> np.ndarray:
    """Lie-algebra matrix of a twist: xi^ = [[0,-w,vx],[w,0,vy],[0,0,0]]."""
    vx, vy, w = xi
    return np.array([[0.0, -w, vx], [w, 0.0, vy], [0.0, 0.0, 0.0]])


def curly_hat(xi: np.ndarray) -> np.ndarray:
    """Adjoint-algebra matrix ad(xi), so that ad(a) b = (a^ b^ - b^ a^)v."""
    vx, vy, w = xi
    return np.array([[0.0, -w, vy], [w, 0.0, -vx], [0.0, 0.0, 0.0]])


def _v_coeffs(theta: float) -> tuple[float, float]:
    """Coefficients (a, b) of V(theta) = a I + b S."""
    if abs(theta) < _SMALL_ANGLE:
        t2 = theta * theta
        return 1.0 - t2 / 6.0, theta / 2.0 - theta * t2 / 24.0
    return np.sin(theta) / theta, (1.0 - np.cos(theta)) / theta


def exp_map(xi: np.ndarray, dt: float = 1.0) -> Pose:
    """Group exponential of the scaled twist xi * dt."""
    phi = np.asarray(xi, dtype=float) * dt
    rho, theta = phi[:2], float(phi[2])
    c, s = np.cos(theta), np.sin(theta)
    a, b = _v_coeffs(theta)
    v = a * np.eye(2) + b * _S
    return Pose(np.array([[c, -s], [s, c]]), v @ rho)


def log_map(pose: Pose) -> np.ndarray:
    """Principal logarithm; rotation angle must be strictly inside (-pi, pi)."""
    theta = pose.angle()
    if abs(abs(theta) - np.pi) < _BRANCH_CUT_TOL:
        raise AngleAtBranchCut(f"rotation angle {theta} at the +/-pi branch cut")
    a, b = _v_coeffs(theta)
    # V^-1 = (a I - b S) / (a^2 + b^2)
    vinv = (a * np.eye(2) - b * _S) / (a * a + b * b)
    rho = vinv @ pose.trans
    return np.array([rho[0], rho[1], theta])


def left_jacobian(xi: np.ndarray) -> np.ndarray:
    """Left Jacobian J_l(xi) = sum_n ad(xi)^n / (n+1)!, closed form."""
    xi = np.asarray(xi, dtype=float)
    rho, theta = xi[:2], float(xi[2])
    a, b = _v_coeffs(theta)
    if abs(theta) < _SMALL_ANGLE:
        t2 = theta * theta
        w1 = 0.5 - t2 / 24.0           # (1 - cos t) / t^2
        w2 = theta / 6.0 - theta * t2 / 120.0  # (t - sin t) / t^2
    else:
        w1 = (1.0 - np.cos(theta)) / (theta * theta)
        w2 = (theta - np.sin(theta)) / (theta * theta)
    col = (w1 * np.eye(2) + w2 * _S) @ (-(_S @ rho))
    out = np.eye(3)
    out[:2, :2] = a * np.eye(2) + b * _S
    out[:2, 2] = col
    return out


def left_jacobian_inv(xi: np.ndarray) -> np.ndarray:
    return np.linalg.inv(left_jacobian(xi))


def right_jacobian_inv(xi: np.ndarray) -> np.ndarray:
    """J_r(xi)^-1 = J_l(-xi)^-1."""
    return left_jacobian_inv(-np.asarray(xi, dtype=float))


def adjoint(pose: Pose) -> np.ndarray:
    """Matrix T with pose * exp(xi^) = exp((T xi)^) * pose for all twists."""
    out = np.eye(3)
    out[:2, :2] = pose.rot
    out[:2, 2] = -(_S @ pose.trans)
    return out


def dot_operator(p: np.ndarray) -> np.ndarray:
    """Matrix p_dot with xi^ p = p_dot xi for homogeneous p = (px, py, eta)."""
    px, py, eta = np.asarray(p, dtype=float)
    return np.array([[eta, 0.0, -py], [0.0, eta, px], [0.0, 0.0, 0.0]])


class PlanarGroup:
    """Group interface the MPC solver is written against.

    A spatial-group drop-in must provide the same attributes: DIM, the
    homogeneous origin, the lateral component index, and the exp/log/
    Jacobian/adjoint/dot operators with matching twist ordering.
    """

    DIM = 3
    LATERAL_INDEX = 1          # row of T_ref^-1 T selecting lateral offset
    HOMOGENEOUS_ORIGIN = np.array([0.0, 0.0, 1.0])

    exp_map = staticmethod(exp_map)
    log_map = staticmethod(log_map)
    left_jacobian = staticmethod(left_jacobian)
    right_jacobian_inv = staticmethod(right_jacobian_inv)
    adjoint = staticmethod(adjoint)
    dot_operator = staticmethod(dot_operator)
    hat = staticmethod(hat)


PLANAR = PlanarGroup()
