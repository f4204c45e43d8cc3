"""Rigid-body model of a 6-joint serial arm and its standard dynamics maps.

The public functions wrap numba kernels; a RobotModel carries geometry
(modified DH), inertial data, joint friction and motor constants, and
is loaded from / saved to a plain-text model file (see modelfile).
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels

NJ = kernels.NJ

FRICTION_NONE = 0
FRICTION_SIGNUM = 1
FRICTION_SIGMOID = 2

_FRICTION_MODES = {"none": FRICTION_NONE, "signum": FRICTION_SIGNUM, "sigmoid": FRICTION_SIGMOID}


class ModelError(ValueError):
    """Raised for inconsistent model data or a numerically unusable state."""


def friction_mode_id(mode: str) -> int:
    try:
        return _FRICTION_MODES[mode]
    except KeyError:
        raise ModelError(f"unknown friction mode {mode!r}") from None


@dataclass
class JointState:
    q: np.ndarray
    dq: np.ndarray
    ddq: np.ndarray | None = None

    def copy(self) -> "JointState":
        return JointState(self.q.copy(), self.dq.copy(),
                          None if self.ddq is None else self.ddq.copy())


@dataclass
class RobotModel:
    name: str
    gravity: np.ndarray                 # (3,) base-frame gravity vector
    dh: np.ndarray                      # (NJ, 4): alpha_{i-1}, a_{i-1}, d_i, theta_offset_i
    mass: np.ndarray                    # (NJ,)
    com: np.ndarray                     # (NJ, 3) COM in link frame
    inertia: np.ndarray                 # (NJ, 3, 3) about COM, link axes
    friction: np.ndarray                # (NJ, 7): C_C, C_S, C_V, v_S, phi1, phi2, phi3
    motor_k: np.ndarray                 # (NJ,) torque per unit current
    q_min: np.ndarray
    q_max: np.ndarray
    dq_max: np.ndarray
    selftest_pos: np.ndarray = field(default=None)   # FK position at q = 0
    selftest_rot: np.ndarray = field(default=None)   # FK rotation at q = 0
    singular_q: np.ndarray = field(default=None)     # a configuration with rank(J) < 6

    def arrays(self):
        """Kernel argument bundle (dh, mass, com, inertia, gravity, friction)."""
        return (self.dh, self.mass, self.com, self.inertia, self.gravity, self.friction)

    def copy(self) -> "RobotModel":
        return RobotModel(
            self.name, self.gravity.copy(), self.dh.copy(), self.mass.copy(),
            self.com.copy(), self.inertia.copy(), self.friction.copy(),
            self.motor_k.copy(), self.q_min.copy(), self.q_max.copy(),
            self.dq_max.copy(),
            None if self.selftest_pos is None else self.selftest_pos.copy(),
            None if self.selftest_rot is None else self.selftest_rot.copy(),
            None if self.singular_q is None else self.singular_q.copy(),
        )

    def barycentric_params(self) -> np.ndarray:
        """Per-link (m, h, I_origin) rows: the coordinates dynamics is linear in.

        h = m c and I_origin = I_com + m (c.c E - c c^T) (parallel axis).
        """
        out = np.empty((NJ, 10))
        for i in range(NJ):
            m = self.mass[i]
            c = self.com[i]
            Io = self.inertia[i] + m * (np.dot(c, c) * np.eye(3) - np.outer(c, c))
            out[i, 0] = m
            out[i, 1:4] = m * c
            out[i, 4] = Io[0, 0]
            out[i, 5] = Io[0, 1]
            out[i, 6] = Io[0, 2]
            out[i, 7] = Io[1, 1]
            out[i, 8] = Io[1, 2]
            out[i, 9] = Io[2, 2]
        return out

    def validate(self) -> None:
        if self.dh.shape != (NJ, 4):
            raise ModelError(f"dh must be ({NJ}, 4), got {self.dh.shape}")
        if np.any(self.mass <= 0):
            raise ModelError("link masses must be positive")
        for i in range(NJ):
            I = self.inertia[i]
            if not np.allclose(I, I.T, atol=0.0, rtol=0.0):
                raise ModelError(f"link {i + 1} inertia tensor is not symmetric")
            ev = np.linalg.eigvalsh(I)
            if np.any(ev <= 0):
                raise ModelError(f"link {i + 1} inertia tensor is not positive definite")
        if np.any(self.friction[:, 3] <= 0):
            raise ModelError("stribeck velocity scale must be positive")
        if np.any(self.friction[:, :3] < 0):
            raise ModelError("coulomb/stiction/viscous coefficients must be non-negative")
        if np.any(self.friction[:, 5] <= 0):
            raise ModelError("sigmoid slope phi2 must be positive")
        if np.any(self.motor_k <= 0):
            raise ModelError("motor constants must be positive")
        if np.any(self.q_min >= self.q_max):
            raise ModelError("joint limits must satisfy q_min < q_max")
        if np.any(self.dq_max <= 0):
            raise ModelError("velocity limits must be positive")
        if self.selftest_pos is not None:
            T = fk(self, np.zeros(NJ))
            if (np.max(np.abs(T[:3, 3] - self.selftest_pos)) > 1e-9
                    or np.max(np.abs(T[:3, :3] - self.selftest_rot)) > 1e-9):
                raise ModelError("zero-configuration FK does not match the model self-test block")


def _vec(x, n=NJ) -> np.ndarray:
    a = np.ascontiguousarray(x, dtype=np.float64)
    if a.shape != (n,):
        raise ModelError(f"expected shape ({n},), got {a.shape}")
    return a


def fk(model: RobotModel, q) -> np.ndarray:
    """End-effector pose as a 4x4 homogeneous transform in the base frame."""
    return kernels.fk(model.dh, _vec(q))


def frame_poses(model: RobotModel, q) -> np.ndarray:
    """Base-frame poses of all joint frames, identity first, (NJ+1, 4, 4)."""
    return kernels.frame_chain(model.dh, _vec(q))


def jacobian(model: RobotModel, q) -> np.ndarray:
    """Geometric Jacobian (6, NJ) at the end-effector, base frame, linear rows first."""
    return kernels.jacobian(model.dh, _vec(q))


def inverse_dynamics(model: RobotModel, q, dq, ddq, friction: str = "sigmoid") -> np.ndarray:
    """Motor torque realizing (q, dq, ddq) with no external wrench."""
    tau = kernels.rnea(model.dh, model.mass, model.com, model.inertia,
                       model.gravity, _vec(q), _vec(dq), _vec(ddq))
    mode = friction_mode_id(friction)
    if mode != FRICTION_NONE:
        tau = tau + kernels.friction_torque(model.friction, _vec(dq), mode == FRICTION_SIGMOID)
    return tau


def mass_matrix(model: RobotModel, q) -> np.ndarray:
    return kernels.mass_matrix(model.dh, model.mass, model.com, model.inertia, _vec(q))


def coriolis_matrix(model: RobotModel, q, dq) -> np.ndarray:
    """Christoffel-factorized C(q, dq); dM/dt - 2C is skew-symmetric."""
    return kernels.coriolis_matrix(model.dh, model.mass, model.com, model.inertia,
                                   _vec(q), _vec(dq))


def gravity(model: RobotModel, q) -> np.ndarray:
    return kernels.gravity_torque(model.dh, model.mass, model.com, model.inertia,
                                  model.gravity, _vec(q))


def friction_torque(model: RobotModel, dq, mode: str = "sigmoid") -> np.ndarray:
    m = friction_mode_id(mode)
    if m == FRICTION_NONE:
        return np.zeros(NJ)
    return kernels.friction_torque(model.friction, _vec(dq), m == FRICTION_SIGMOID)


def forward_dynamics(model: RobotModel, q, dq, tau_motor, tau_ext=None,
                     friction: str = "sigmoid") -> np.ndarray:
    """Joint acceleration under motor torque and joint-space external torque."""
    q = _vec(q)
    M = mass_matrix(model, q)
    c = np.linalg.cond(M)
    if not np.isfinite(c) or c > 1e12:
        raise ModelError(f"mass matrix is numerically singular (cond {c:.3e})")
    ext = np.zeros(NJ) if tau_ext is None else _vec(tau_ext)
    b = kernels.bias_torque(model.dh, model.mass, model.com, model.inertia,
                            model.gravity, model.friction, q, _vec(dq),
                            friction_mode_id(friction))
    return np.linalg.solve(M, _vec(tau_motor) + ext - b)


def kinetic_energy(model: RobotModel, q, dq) -> float:
    return kernels.kinetic_energy(model.dh, model.mass, model.com, model.inertia,
                                  _vec(q), _vec(dq))


def potential_energy(model: RobotModel, q) -> float:
    return kernels.potential_energy(model.dh, model.mass, model.com, model.gravity, _vec(q))


from .modelfile import load_robot_model, save_robot_model, ModelFileError  # noqa: E402
from .kinutil import (  # noqa: E402
    IkError, ik_solve, matrix_from_rotvec, pose_error, rotvec_from_matrix,
)

__all__ = [
    "NJ", "RobotModel", "JointState", "ModelError", "ModelFileError", "IkError",
    "fk", "frame_poses", "jacobian", "inverse_dynamics", "mass_matrix",
    "coriolis_matrix", "gravity", "friction_torque", "forward_dynamics",
    "kinetic_energy", "potential_energy", "ik_solve", "pose_error",
    "rotvec_from_matrix", "matrix_from_rotvec",
    "load_robot_model", "save_robot_model", "friction_mode_id",
]
