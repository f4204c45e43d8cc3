"""Small kinematics utilities: rotation conversions and damped-least-squares IK."""

import numpy as np

from . import NJ, ModelError, RobotModel, kernels


class IkError(ModelError):
    """IK did not converge within the iteration/restart budget."""


def rotvec_from_matrix(R: np.ndarray) -> np.ndarray:
    """Angle-axis vector of a rotation matrix (inverse of Rodrigues)."""
    c = min(1.0, max(-1.0, 0.5 * (np.trace(R) - 1.0)))
    ang = np.arccos(c)
    if ang < 1e-12:
        return np.zeros(3)
    if np.pi - ang < 1e-6:
        # near pi the off-diagonal form degenerates; take axis from R + I
        A = 0.5 * (R + np.eye(3))
        ax = np.sqrt(np.maximum(np.diag(A), 0.0))
        k = int(np.argmax(ax))
        ax = A[:, k] / max(ax[k], 1e-12)
        ax = ax / np.linalg.norm(ax)
        return ang * ax
    ax = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return ang / (2.0 * np.sin(ang)) * ax


def matrix_from_rotvec(v: np.ndarray) -> np.ndarray:
    ang = np.linalg.norm(v)
    if ang < 1e-12:
        return np.eye(3)
    k = v / ang
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(ang) * K + (1 - np.cos(ang)) * (K @ K)


def pose_error(target: np.ndarray, T: np.ndarray) -> np.ndarray:
    """6-vector (position, rotation-vector) error taking T toward target."""
    e = np.empty(6)
    e[:3] = target[:3, 3] - T[:3, 3]
    e[3:] = rotvec_from_matrix(target[:3, :3] @ T[:3, :3].T)
    return e


def ik_solve(model: RobotModel, target: np.ndarray, q0: np.ndarray,
             pos_tol: float = 1e-8, rot_tol: float = 1e-8,
             max_iter: int = 200, restarts: int = 8,
             rng: np.random.Generator | None = None) -> np.ndarray:
    """Damped-least-squares IK with joint-limit clipping and random restarts.

    Returns the solution continuing from q0 (nearest branch) when it
    exists; raises IkError after the restart budget is exhausted.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    seed_q = np.asarray(q0, dtype=float).copy()
    for attempt in range(restarts + 1):
        q = seed_q.copy() if attempt == 0 else rng.uniform(model.q_min, model.q_max)
        lam = 1e-2
        for _ in range(max_iter):
            T = kernels.fk(model.dh, q)
            e = pose_error(target, T)
            if np.linalg.norm(e[:3]) < pos_tol and np.linalg.norm(e[3:]) < rot_tol:
                return q
            J = kernels.jacobian(model.dh, q)
            step = J.T @ np.linalg.solve(J @ J.T + lam ** 2 * np.eye(6), e)
            n = np.linalg.norm(step)
            if n > 0.5:
                step *= 0.5 / n
            q = np.clip(q + step, model.q_min, model.q_max)
    raise IkError("IK failed to reach the target pose within the restart budget")
