"""Momentum-residual observer and wrench mapping.

The residual r = L (M dq - integral of (tau_bar + r) - p0) converges to
the external joint torque as a per-joint first-order lag with rate L_ii,
without needing acceleration.  tau_bar = C^T dq - g - tau_f + tau_motor;
the integral is seeded with the initial momentum so r starts at exactly
zero.  Discretized with the trapezoidal rule, solved implicitly (L is
diagonal, so the solve is elementwise).
"""

from dataclasses import dataclass

import numpy as np

from .dyncore import (NJ, JointState, ModelError, RobotModel,
                      friction_mode_id, kernels)

FAULT_LIMIT = 1e6          # residual norm beyond this flags estimator fault
SIGMA_GUARD = 0.05         # raise damping when J's smallest sv drops below


class CalibrationError(ModelError):
    """Motor-constant fit attempted on insufficiently excited data."""


@dataclass
class GmoState:
    """Observer accumulator; owned by one loop, updated in sample order."""
    gain: np.ndarray         # (NJ,) diagonal of L, 1/s
    dt: float
    integral: np.ndarray     # running integral of (tau_bar + r), seeded at p0
    residual: np.ndarray     # last r
    momentum: np.ndarray     # last p = M(q) dq
    tau_bar: np.ndarray      # last integrand contribution besides r
    fric_mode: int
    fault: bool = False


def _tau_bar(model: RobotModel, q, dq, tau_motor, fric_mode: int) -> np.ndarray:
    C = kernels.coriolis_matrix(model.dh, model.mass, model.com, model.inertia, q, dq)
    g = kernels.gravity_torque(model.dh, model.mass, model.com, model.inertia,
                               model.gravity, q)
    tb = C.T @ dq - g + np.asarray(tau_motor, dtype=float)
    if fric_mode:
        tb -= kernels.friction_torque(model.friction, dq, fric_mode == 2)
    return tb


def init_gmo(model: RobotModel, js: JointState, tau_motor, gain=25.0,
             dt: float = 0.01, friction: str = "sigmoid") -> GmoState:
    """Seed the observer at the first sample; r(0) is exactly zero."""
    gain = np.broadcast_to(np.asarray(gain, dtype=float), (NJ,)).copy()
    if np.any(gain <= 0):
        raise ModelError("observer gains must be positive")
    if dt <= 0:
        raise ModelError("sample period must be positive")
    mode = friction_mode_id(friction)
    M = kernels.mass_matrix(model.dh, model.mass, model.com, model.inertia, js.q)
    p0 = M @ js.dq
    return GmoState(gain=gain, dt=dt, integral=p0.copy(),
                    residual=np.zeros(NJ), momentum=p0,
                    tau_bar=_tau_bar(model, js.q, js.dq, tau_motor, mode),
                    fric_mode=mode)


def gmo_step(state: GmoState, model: RobotModel, js: JointState, tau_motor) -> np.ndarray:
    """Advance one sample; returns the new residual estimate (N*m, NJ)."""
    M = kernels.mass_matrix(model.dh, model.mass, model.com, model.inertia, js.q)
    p = M @ js.dq
    tb = _tau_bar(model, js.q, js.dq, tau_motor, state.fric_mode)
    L, dt = state.gain, state.dt
    # implicit trapezoid: (1 + L dt/2) r_k = L (p_k - s_{k-1} - dt/2 (f_{k-1} + tb_k))
    f_prev = state.tau_bar + state.residual
    r = L * (p - state.integral - 0.5 * dt * (f_prev + tb)) / (1.0 + 0.5 * L * dt)
    state.integral += 0.5 * dt * (f_prev + tb + r)
    state.residual = r
    state.momentum = p
    state.tau_bar = tb
    if not np.all(np.isfinite(r)) or np.linalg.norm(r) > FAULT_LIMIT:
        state.fault = True
    return r.copy()


@dataclass
class WrenchEstimate:
    force: np.ndarray        # N, expressed in base axes
    torque: np.ndarray       # N*m about the flange point
    frame: str
    sigma_min: float         # smallest singular value of J at this q
    damping: float           # damping actually applied

    @property
    def wrench(self) -> np.ndarray:
        return np.concatenate([self.force, self.torque])


def residual_to_wrench(model: RobotModel, q, r, damping: float = 1e-3) -> WrenchEstimate:
    """Damped least-squares wrench from a joint-torque residual.

    Solves (J J^T + lam^2 I) w = J r.  Damping is raised near kinematic
    singularities (smallest singular value under SIGMA_GUARD) so the
    estimate stays bounded by |r|/lam.
    """
    r = np.asarray(r, dtype=float)
    if not np.all(np.isfinite(r)):
        raise ModelError("residual must be finite")
    J = kernels.jacobian(model.dh, np.asarray(q, dtype=float))
    sigma_min = float(np.linalg.svd(J, compute_uv=False)[-1])
    lam = float(damping)
    if sigma_min < SIGMA_GUARD:
        lam = max(lam, SIGMA_GUARD - sigma_min)
    w = np.linalg.solve(J @ J.T + lam ** 2 * np.eye(6), J @ r)
    return WrenchEstimate(force=w[:3], torque=w[3:], frame="base",
                          sigma_min=sigma_min, damping=lam)


@dataclass
class MotorCalibration:
    k: np.ndarray            # N*m/A per joint
    r_squared: np.ndarray    # per-joint fit quality


def calibrate_motor_constants(frames, model: RobotModel, friction: str = "sigmoid",
                              min_variance: float = 1e-8) -> MotorCalibration:
    """Per-joint motor constants from frames with a measured wrench.

    Each frame must carry q, dq, ddq, current and the sensed wrench.  The
    balance k_i I_i = tau_model_i + (J^T w)_i is linear in k_i; the fit is
    a through-origin least squares per joint with R^2 against the torque
    signal.  Joints whose current barely moves are refused.
    """
    frames = list(frames)
    if len(frames) < 2:
        raise CalibrationError("need at least two frames")
    mode = friction_mode_id(friction)
    n = len(frames)
    I = np.empty((n, NJ))
    y = np.empty((n, NJ))
    for j, fr in enumerate(frames):
        q = np.asarray(fr.q, dtype=float)
        dq = np.asarray(fr.dq, dtype=float)
        ddq = np.asarray(fr.ddq, dtype=float)
        tau = kernels.rnea(model.dh, model.mass, model.com, model.inertia,
                           model.gravity, q, dq, ddq)
        if mode:
            tau += kernels.friction_torque(model.friction, dq, mode == 2)
        J = kernels.jacobian(model.dh, q)
        I[j] = fr.current
        y[j] = tau + J.T @ np.asarray(fr.wrench, dtype=float)
    k = np.empty(NJ)
    r2 = np.empty(NJ)
    for i in range(NJ):
        if np.var(I[:, i]) < min_variance:
            raise CalibrationError(f"joint {i + 1}: current variance too low to fit")
        k[i] = (I[:, i] @ y[:, i]) / (I[:, i] @ I[:, i])
        ss_res = np.sum((y[:, i] - k[i] * I[:, i]) ** 2)
        ss_tot = np.sum((y[:, i] - np.mean(y[:, i])) ** 2)
        r2[i] = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    if np.any(k <= 0):
        raise CalibrationError("fitted motor constant not positive; data inconsistent")
    return MotorCalibration(k=k, r_squared=r2)
