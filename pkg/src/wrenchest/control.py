"""Admittance force control and reference paths for the closed-loop tasks.

The admittance integrates per-axis virtual dynamics

    m x'' + d x' + k x = f_measured - f_desired

in a chosen plane frame and turns the offset into joint commands through
IK.  Discretization is exact (matrix exponential of the per-axis 2x2
system under a zero-order-held wrench), so the 100 Hz recursion lands on
the continuous-time response at every sample.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .dyncore import NJ, ModelError, RobotModel, kernels
from .dyncore import ik_solve, IkError, matrix_from_rotvec

RATE = 100.0
DT = 1.0 / RATE


@dataclass
class AdmittanceConfig:
    """Virtual per-axis dynamics plus the frame they act in.

    Axes are ordered (x, y, z, rx, ry, rz) in the plane frame; rotation
    offsets are small-angle rotation vectors.  `plane` holds the plane
    axes as columns in base coordinates, so wrenches map base -> plane
    by its transpose.
    """
    mass: np.ndarray = field(default_factory=lambda: np.full(6, 50.0))
    damping: np.ndarray = field(default_factory=lambda: np.full(6, 500.0))
    stiffness: np.ndarray = field(default_factory=lambda: np.zeros(6))
    f_desired: np.ndarray = field(default_factory=lambda: np.zeros(6))
    plane: np.ndarray = field(default_factory=lambda: np.eye(3))
    active: np.ndarray = field(
        default_factory=lambda: np.array([1, 1, 1, 0, 0, 0], dtype=bool))
    rate: float = RATE

    def __post_init__(self):
        self.mass = np.asarray(self.mass, dtype=float).reshape(6)
        self.damping = np.asarray(self.damping, dtype=float).reshape(6)
        self.stiffness = np.asarray(self.stiffness, dtype=float).reshape(6)
        self.f_desired = np.asarray(self.f_desired, dtype=float).reshape(6)
        self.plane = np.asarray(self.plane, dtype=float).reshape(3, 3)
        self.active = np.asarray(self.active, dtype=bool).reshape(6)
        if np.any(self.mass <= 0) or np.any(self.damping <= 0):
            raise ModelError("virtual mass and damping must be positive")
        if np.any(self.stiffness < 0):
            raise ModelError("virtual stiffness must be nonnegative")
        if np.abs(self.plane @ self.plane.T - np.eye(3)).max() > 1e-9:
            raise ModelError("plane frame must be orthonormal")
        if self.rate != RATE:
            raise ModelError("admittance loop runs at 100 Hz")
        self._disc = None

    def discrete(self):
        """Per-axis exact ZOH discretization: x_{k+1} = Ad x_k + Bd u_k."""
        if self._disc is None:
            Ad = np.empty((6, 2, 2))
            Bd = np.empty((6, 2))
            dt = 1.0 / self.rate
            for i in range(6):
                m, d, k = self.mass[i], self.damping[i], self.stiffness[i]
                blk = np.zeros((3, 3))
                blk[0, 1] = 1.0
                blk[1, 0] = -k / m
                blk[1, 1] = -d / m
                blk[1, 2] = 1.0 / m
                E = scipy.linalg.expm(blk * dt)
                Ad[i] = E[:2, :2]
                Bd[i] = E[:2, 2]
            self._disc = (Ad, Bd)
        return self._disc


@dataclass
class AdmittanceLoop:
    """Stateful admittance loop: wrench in, commanded joint positions out.

    The anchor pose is where offsets are measured from; x/v hold the
    per-axis offset state.  IK failures hold the previous command and
    latch the fault flag rather than raising (a real controller would
    freeze, not crash).
    """
    model: RobotModel
    cfg: AdmittanceConfig
    anchor: np.ndarray                 # (4, 4) base-frame anchor pose
    q_start: np.ndarray                # IK warm start
    x: np.ndarray = field(default_factory=lambda: np.zeros(6))
    v: np.ndarray = field(default_factory=lambda: np.zeros(6))
    fault: bool = False
    ik_faults: int = 0

    def __post_init__(self):
        self.anchor = np.asarray(self.anchor, dtype=float).reshape(4, 4)
        self.q_cmd = np.asarray(self.q_start, dtype=float).reshape(NJ).copy()
        self.dq_cmd = np.zeros(NJ)

    def target_pose(self, overlay=None) -> np.ndarray:
        """Anchor composed with the current offsets (plus a path overlay)."""
        R_pb = self.cfg.plane
        d = self.x[:3].copy()
        rot = self.x[3:].copy()
        if overlay is not None:
            ov = np.asarray(overlay, dtype=float)
            d += ov[:3]
            if ov.shape[0] == 6:
                rot += ov[3:]
        T = self.anchor.copy()
        T[:3, 3] = self.anchor[:3, 3] + R_pb @ d
        T[:3, :3] = matrix_from_rotvec(R_pb @ rot) @ self.anchor[:3, :3]
        return T

    def step(self, wrench_base, overlay=None):
        """One 10 ms tick.  Returns (q_cmd, dq_cmd)."""
        w = np.asarray(wrench_base, dtype=float).reshape(6)
        if not np.all(np.isfinite(w)):
            raise ModelError("wrench input must be finite")
        R_pb = self.cfg.plane
        u = np.empty(6)
        u[:3] = R_pb.T @ w[:3]
        u[3:] = R_pb.T @ w[3:]
        u -= self.cfg.f_desired
        Ad, Bd = self.cfg.discrete()
        for i in range(6):
            if not self.cfg.active[i]:
                continue
            xi = Ad[i, 0, 0] * self.x[i] + Ad[i, 0, 1] * self.v[i] + Bd[i, 0] * u[i]
            vi = Ad[i, 1, 0] * self.x[i] + Ad[i, 1, 1] * self.v[i] + Bd[i, 1] * u[i]
            self.x[i], self.v[i] = xi, vi
        q_prev = self.q_cmd.copy()
        try:
            self.q_cmd = ik_solve(self.model, self.target_pose(overlay),
                                  self.q_cmd, pos_tol=1e-9, rot_tol=1e-9,
                                  max_iter=60, restarts=0)
            self.dq_cmd = (self.q_cmd - q_prev) * self.cfg.rate
        except IkError:
            self.fault = True
            self.ik_faults += 1
            self.dq_cmd = np.zeros(NJ)
        return self.q_cmd, self.dq_cmd


# ---------------------------------------------------------------------------
# reference paths

@dataclass
class QuinticPath:
    """Minimum-jerk joint move: rest to rest over [0, T], clamped outside."""
    q0: np.ndarray
    q1: np.ndarray
    T: float

    def __post_init__(self):
        self.q0 = np.asarray(self.q0, dtype=float)
        self.q1 = np.asarray(self.q1, dtype=float)
        if self.T <= 0:
            raise ModelError("path duration must be positive")

    def sample(self, t: float):
        s = min(max(t / self.T, 0.0), 1.0)
        b = 10 * s**3 - 15 * s**4 + 6 * s**5
        db = (30 * s**2 - 60 * s**3 + 30 * s**4) / self.T
        d = self.q1 - self.q0
        return self.q0 + b * d, db * d

    @property
    def peak_speed(self) -> np.ndarray:
        # quintic peak velocity is 15/8 of the mean
        return 1.875 * np.abs(self.q1 - self.q0) / self.T


def quintic_duration(q0, q1, v_peak) -> float:
    """Duration so the quintic's peak joint speed hits v_peak elementwise."""
    d = np.abs(np.asarray(q1, dtype=float) - np.asarray(q0, dtype=float))
    return float(max(1.875 * (d / np.asarray(v_peak, dtype=float)).max(), 1e-2))


@dataclass
class LinePath:
    """Straight 3-vector move with quintic timing; peak speed = `speed`."""
    p0: np.ndarray
    p1: np.ndarray
    speed: float

    def __post_init__(self):
        self.p0 = np.asarray(self.p0, dtype=float)
        self.p1 = np.asarray(self.p1, dtype=float)
        if self.speed <= 0:
            raise ModelError("path speed must be positive")
        self.T = max(1.875 * np.linalg.norm(self.p1 - self.p0) / self.speed,
                     1e-2)

    def sample(self, t: float) -> np.ndarray:
        s = min(max(t / self.T, 0.0), 1.0)
        b = 10 * s**3 - 15 * s**4 + 6 * s**5
        return self.p0 + b * (self.p1 - self.p0)


@dataclass
class TrapezoidPath:
    """Straight 3-vector move: cosine speed blends around a constant cruise.

    Unlike LinePath this spends almost all of its time at `speed`, which
    matters when the motion itself is the signal (sliding friction keeps
    a fixed direction only while the slip speed is well above the
    regularization knee).  Short moves shrink the ramps to fit.
    """
    p0: np.ndarray
    p1: np.ndarray
    speed: float
    ramp: float = 0.4

    def __post_init__(self):
        self.p0 = np.asarray(self.p0, dtype=float)
        self.p1 = np.asarray(self.p1, dtype=float)
        if self.speed <= 0:
            raise ModelError("path speed must be positive")
        if self.ramp < 0:
            raise ModelError("ramp time must be nonnegative")
        self.dist = float(np.linalg.norm(self.p1 - self.p0))
        self.ramp_eff = min(self.ramp, self.dist / self.speed)
        self.T = max(self.dist / self.speed + self.ramp_eff, 1e-2)

    def _arc(self, t: float) -> float:
        v, tr = self.speed, self.ramp_eff
        t = min(max(t, 0.0), self.T)
        if tr == 0.0:
            return v * t
        if t < tr:
            return 0.5 * v * (t - tr / np.pi * np.sin(np.pi * t / tr))
        if t <= self.T - tr:
            return 0.5 * v * tr + v * (t - tr)
        return self.dist - self._arc(self.T - t)

    def sample(self, t: float) -> np.ndarray:
        if self.dist == 0.0:
            return self.p0.copy()
        return self.p0 + self._arc(t) / self.dist * (self.p1 - self.p0)


def spiral_offsets(duration: float, pitch: float = 2e-3, speed: float = 5e-3,
                   dt: float = DT) -> np.ndarray:
    """Archimedean spiral at constant path speed, as (N, 2) plane offsets.

    r = pitch * theta / 2pi; theta advanced so ds/dt = speed throughout.
    """
    if pitch <= 0 or speed <= 0:
        raise ModelError("spiral pitch and speed must be positive")
    n = int(round(duration / dt))
    out = np.empty((n, 2))
    b = pitch / (2 * np.pi)
    theta = 0.0
    for k in range(n):
        r = b * theta
        out[k, 0] = r * np.cos(theta)
        out[k, 1] = r * np.sin(theta)
        theta += speed * dt / np.hypot(r, b)
    return out
