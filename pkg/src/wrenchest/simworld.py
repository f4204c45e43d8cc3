"""Ground-truth world simulation.

Forward dynamics of the reference arm under RK4 at sub-millisecond
substeps, with penalty-based plane contact at the flange, smooth injected
wrench processes (the stand-in for a human pushing on the robot), an
optional weak tether spring, and the sensor pipeline that turns exact
states into what a 100 Hz controller would actually see: quantized
encoders, Butterworth-filtered derivatives, noisy currents, noisy F/T.

The wrench returned by the stepping functions is computed by the same
code path the integrator used, so supervised labels are exact by
construction.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.signal
from numba import njit

from .dyncore import (NJ, JointState, ModelError, RobotModel,
                      friction_mode_id, kernels)

SUBSTEP_LIMIT = 5e-4          # s, integration substep ceiling
DEPTH_LIMIT = 5e-3            # m, penetration beyond this is a fault
SLIP_REG = 1e-3               # m/s, tangential regularization knee


class ContactFault(ModelError):
    """Penetration blew past the allowed depth; stiffness/step mismatch."""


# ---------------------------------------------------------------------------
# jitted world core

@njit(cache=True)
def _gate_env(t, win, ramp):
    """Sum of raised-cosine-edged unit windows; windows must be disjoint."""
    env = 0.0
    for k in range(win.shape[0]):
        a, b = win[k, 0], win[k, 1]
        if t < a or t >= b:
            continue
        if t < a + ramp:
            env += 0.5 * (1.0 - np.cos(np.pi * (t - a) / ramp))
        elif t > b - ramp:
            env += 0.5 * (1.0 - np.cos(np.pi * (b - t) / ramp))
        else:
            env += 1.0
    return env


@njit(cache=True)
def _injected_wrench(t, amp, omg, ph, win, ramp, out):
    env = _gate_env(t, win, ramp)
    for a in range(6):
        s = 0.0
        for j in range(amp.shape[1]):
            s += amp[a, j] * np.sin(omg[a, j] * t + ph[a, j])
        out[a] = env * s


@njit(cache=True)
def _external_at(dh, q, dq, t, planes, tether, inj_on, amp, omg, ph, win, ramp):
    """Net external wrench at the flange plus worst penetration depth.

    planes rows: p0(3), unit n(3), stiffness, damping, mu.
    tether: anchor(3), stiffness, damping, enabled flag.
    Returns (wrench6, tau_ext6, depth).
    """
    T = kernels.frame_chain(dh, q)
    pos = T[NJ, :3, 3]
    J = kernels.jacobian(dh, q)
    v6 = J @ dq
    vel = v6[:3]
    w = np.zeros(6)
    if inj_on:
        _injected_wrench(t, amp, omg, ph, win, ramp, w)
    depth = 0.0
    for p in range(planes.shape[0]):
        n = planes[p, 3:6]
        gap = ((pos[0] - planes[p, 0]) * n[0] + (pos[1] - planes[p, 1]) * n[1]
               + (pos[2] - planes[p, 2]) * n[2])
        if gap >= 0.0:
            continue
        d = -gap
        if d > depth:
            depth = d
        vn = vel[0] * n[0] + vel[1] * n[1] + vel[2] * n[2]
        approach = -vn
        fn = planes[p, 6] * d + planes[p, 7] * max(approach, 0.0)
        if fn < 0.0:
            fn = 0.0
        # tangential: Coulomb against slip, smoothed near zero slip speed
        vt0 = vel[0] - vn * n[0]
        vt1 = vel[1] - vn * n[1]
        vt2 = vel[2] - vn * n[2]
        s = np.sqrt(vt0 * vt0 + vt1 * vt1 + vt2 * vt2)
        scale = planes[p, 8] * fn / np.sqrt(s * s + SLIP_REG * SLIP_REG)
        w[0] += fn * n[0] - scale * vt0
        w[1] += fn * n[1] - scale * vt1
        w[2] += fn * n[2] - scale * vt2
    if tether[7] > 0.0:
        k, c = tether[3], tether[4]
        for i in range(3):
            w[i] += k * (tether[i] - pos[i]) - c * vel[i]
    tau_ext = J.T @ w
    return w, tau_ext, depth


@njit(cache=True)
def _accel(dh, mass, com, inertia, gvec, fric, fric_mode, q, dq, tau_motor, tau_ext):
    b = kernels.bias_torque(dh, mass, com, inertia, gvec, fric, q, dq, fric_mode)
    M = kernels.mass_matrix(dh, mass, com, inertia, q)
    # M is SPD, so a plain Cholesky solve beats the LAPACK call by a lot
    # at this size (6x6, called four times per RK4 substep).
    rhs = tau_motor + tau_ext - b
    n = rhs.shape[0]
    for j in range(n):
        s = M[j, j]
        for k in range(j):
            s -= M[j, k] * M[j, k]
        d = np.sqrt(s)
        M[j, j] = d
        for i in range(j + 1, n):
            s = M[i, j]
            for k in range(j):
                s -= M[i, k] * M[j, k]
            M[i, j] = s / d
    for i in range(n):
        s = rhs[i]
        for k in range(i):
            s -= M[i, k] * rhs[k]
        rhs[i] = s / M[i, i]
    for i in range(n - 1, -1, -1):
        s = rhs[i]
        for k in range(i + 1, n):
            s -= M[k, i] * rhs[k]
        rhs[i] = s / M[i, i]
    return rhs


@njit(cache=True)
def _world_tick(dh, mass, com, inertia, gvec, fric, fric_mode,
                q, dq, t0, h, n_sub, tau_motor,
                planes, tether, inj_on, amp, omg, ph, win, ramp,
                depth_limit):
    """Advance n_sub RK4 substeps under zero-order-hold motor torque.

    Returns (q, dq, end wrench, max depth seen, fault flag).
    """
    max_depth = 0.0
    for s in range(n_sub):
        t = t0 + s * h

        w1, te1, d1 = _external_at(dh, q, dq, t, planes, tether,
                                   inj_on, amp, omg, ph, win, ramp)
        a1 = _accel(dh, mass, com, inertia, gvec, fric, fric_mode, q, dq,
                    tau_motor, te1)
        q2 = q + 0.5 * h * dq
        v2 = dq + 0.5 * h * a1
        w2, te2, d2 = _external_at(dh, q2, v2, t + 0.5 * h, planes, tether,
                                   inj_on, amp, omg, ph, win, ramp)
        a2 = _accel(dh, mass, com, inertia, gvec, fric, fric_mode, q2, v2,
                    tau_motor, te2)
        q3 = q + 0.5 * h * v2
        v3 = dq + 0.5 * h * a2
        w3, te3, d3 = _external_at(dh, q3, v3, t + 0.5 * h, planes, tether,
                                   inj_on, amp, omg, ph, win, ramp)
        a3 = _accel(dh, mass, com, inertia, gvec, fric, fric_mode, q3, v3,
                    tau_motor, te3)
        q4 = q + h * v3
        v4 = dq + h * a3
        w4, te4, d4 = _external_at(dh, q4, v4, t + h, planes, tether,
                                   inj_on, amp, omg, ph, win, ramp)
        a4 = _accel(dh, mass, com, inertia, gvec, fric, fric_mode, q4, v4,
                    tau_motor, te4)

        q = q + (h / 6.0) * (dq + 2.0 * v2 + 2.0 * v3 + v4)
        dq = dq + (h / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4)

        d = max(max(d1, d2), max(d3, d4))
        if d > max_depth:
            max_depth = d
        if max_depth > depth_limit:
            return q, dq, w4, max_depth, True

    w_end, _, d_end = _external_at(dh, q, dq, t0 + n_sub * h, planes, tether,
                                   inj_on, amp, omg, ph, win, ramp)
    if d_end > max_depth:
        max_depth = d_end
    return q, dq, w_end, max_depth, max_depth > depth_limit


# ---------------------------------------------------------------------------
# world-side configuration objects

@dataclass
class ContactPlane:
    """Penalty plane: spring in depth, damper on approach, Coulomb slide."""
    point: np.ndarray
    normal: np.ndarray
    stiffness: float = 2e5     # 20 N push deflects 0.1 mm
    damping: float = 500.0
    mu: float = 0.3

    def __post_init__(self):
        self.point = np.asarray(self.point, dtype=float).reshape(3)
        self.normal = np.asarray(self.normal, dtype=float).reshape(3)
        if abs(np.linalg.norm(self.normal) - 1.0) > 1e-9:
            raise ModelError("plane normal must be unit length")
        if self.stiffness <= 0:
            raise ModelError("plane stiffness must be positive")
        if self.damping < 0:
            raise ModelError("plane damping must be nonnegative")
        if not 0.0 <= self.mu <= 2.0:
            raise ModelError("mu out of the sane range [0, 2]")

    def row(self) -> np.ndarray:
        return np.concatenate([self.point, self.normal,
                               [self.stiffness, self.damping, self.mu]])


@dataclass
class TetherSpring:
    """Weak recentering spring at the flange; keeps guided runs on station."""
    anchor: np.ndarray
    stiffness: float = 15.0
    damping: float = 8.0

    def __post_init__(self):
        self.anchor = np.asarray(self.anchor, dtype=float).reshape(3)
        if self.stiffness < 0 or self.damping < 0:
            raise ModelError("tether coefficients must be nonnegative")

    def row(self) -> np.ndarray:
        return np.concatenate([self.anchor, [self.stiffness, self.damping,
                                             0.0, 0.0, 1.0]])


_NO_TETHER = np.zeros(8)
_NO_WIN = np.zeros((0, 2))
_NO_SINES = np.zeros((6, 1))


@dataclass
class InjectionProcess:
    """Smooth random wrench process: 3 sinusoids per axis, gated on/off.

    Stands in for a person pushing/pulling at the flange, reproducibly.
    """
    amp: np.ndarray            # (6, S) N / N*m
    omega: np.ndarray          # (6, S) rad/s
    phase: np.ndarray          # (6, S)
    windows: np.ndarray        # (K, 2) on/off times, disjoint, sorted
    ramp: float                # raised-cosine edge length, s

    def eval(self, t) -> np.ndarray:
        t = float(t)
        out = np.empty(6)
        _injected_wrench(t, self.amp, self.omega, self.phase,
                         self.windows, self.ramp, out)
        return out

    def envelope(self, t) -> float:
        return _gate_env(float(t), self.windows, self.ramp)


def draw_injection(seed, duration, force_peak=(5.0, 30.0), torque_peak=(0.2, 1.5),
                   band=(0.1, 1.0), sines=3, on_span=(4.0, 12.0),
                   off_span=(1.0, 5.0), ramp=0.8) -> InjectionProcess:
    """Random but reproducible wrench process over [0, duration]."""
    rng = np.random.default_rng(seed)
    amp = np.empty((6, sines))
    for a in range(6):
        lo, hi = force_peak if a < 3 else torque_peak
        peak = rng.uniform(lo, hi)
        parts = rng.dirichlet(np.ones(sines))
        amp[a] = peak * parts
    omega = 2 * np.pi * rng.uniform(band[0], band[1], size=(6, sines))
    phase = rng.uniform(0, 2 * np.pi, size=(6, sines))
    wins = []
    t = rng.uniform(*off_span)
    while t < duration:
        on = rng.uniform(*on_span)
        on = max(on, 2.5 * ramp)   # window must fit both ramps
        wins.append((t, min(t + on, duration + ramp)))
        t += on + rng.uniform(*off_span)
    windows = np.array(wins, dtype=float).reshape(-1, 2)
    return InjectionProcess(amp=amp, omega=omega, phase=phase,
                            windows=windows, ramp=ramp)


@dataclass
class WorldState:
    """One simulation run: owned state, stepped strictly in sequence."""
    model: RobotModel
    q: np.ndarray
    dq: np.ndarray
    t: float = 0.0
    planes: list = field(default_factory=list)
    injection: InjectionProcess | None = None
    tether: TetherSpring | None = None
    seed: int = 0
    friction: str = "sigmoid"
    injection_tag: str = "none"

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).reshape(NJ).copy()
        self.dq = np.asarray(self.dq, dtype=float).reshape(NJ).copy()
        self._fric_mode = friction_mode_id(self.friction)

    def _plane_rows(self) -> np.ndarray:
        if not self.planes:
            return np.zeros((0, 9))
        return np.stack([p.row() for p in self.planes])

    def _tether_row(self) -> np.ndarray:
        return self.tether.row() if self.tether is not None else _NO_TETHER

    def _inj_arrays(self):
        inj = self.injection
        if inj is None:
            return False, _NO_SINES, _NO_SINES, _NO_SINES, _NO_WIN, 1.0
        return True, inj.amp, inj.omega, inj.phase, inj.windows, inj.ramp

    def external_wrench(self) -> np.ndarray:
        """Net external flange wrench at the current state (logging path)."""
        inj_on, amp, omg, ph, win, ramp = self._inj_arrays()
        w, _, _ = _external_at(self.model.dh, self.q, self.dq, self.t,
                               self._plane_rows(), self._tether_row(),
                               inj_on, amp, omg, ph, win, ramp)
        return w

    def contact_depth(self) -> float:
        """Deepest current plane penetration, 0.0 when clear."""
        inj_on, amp, omg, ph, win, ramp = self._inj_arrays()
        _, _, depth = _external_at(self.model.dh, self.q, self.dq, self.t,
                                   self._plane_rows(), self._tether_row(),
                                   inj_on, amp, omg, ph, win, ramp)
        return depth


def _n_substeps(dt_ctrl: float) -> int:
    return max(1, int(np.ceil(dt_ctrl / SUBSTEP_LIMIT - 1e-12)))


def step_world(ws: WorldState, tau_motor, dt_ctrl: float = 0.01):
    """Advance one control tick under constant motor torque.

    Returns (ws, true external wrench at the end of the tick).
    """
    m = ws.model
    n_sub = _n_substeps(dt_ctrl)
    h = dt_ctrl / n_sub
    inj_on, amp, omg, ph, win, ramp = ws._inj_arrays()
    q, dq, w, depth, fault = _world_tick(
        m.dh, m.mass, m.com, m.inertia, m.gravity, m.friction, ws._fric_mode,
        ws.q, ws.dq, ws.t, h, n_sub,
        np.asarray(tau_motor, dtype=float),
        ws._plane_rows(), ws._tether_row(),
        inj_on, amp, omg, ph, win, ramp, DEPTH_LIMIT)
    ws.q, ws.dq = q, dq
    ws.t += dt_ctrl
    if fault:
        raise ContactFault(
            f"contact penetration {depth * 1e3:.2f} mm exceeds "
            f"{DEPTH_LIMIT * 1e3:.1f} mm at t={ws.t:.3f} s")
    return ws, w


def servo_torque(model: RobotModel, q, dq, q_cmd, dq_cmd=None,
                 bandwidth: float = 2 * np.pi * 8.0, friction: str = "sigmoid",
                 qdd_extra=None):
    """Computed-torque law toward a commanded joint state.

    Critically damped: qdd_des = w^2 (q_cmd - q) + 2 w (dq_cmd - dq).
    Evaluated once per tick and held (a discrete controller, so the logged
    motor torque is exactly what the plant received).

    Friction feedforward is taken at the COMMANDED velocity, not the
    measured one.  Measured-velocity compensation flips sign mid-tick at
    the low-inertia wrist joints under a 10 ms hold and pumps a limit
    cycle; the commanded velocity is smooth, so the feedforward never
    feeds back through the plant, and the plant's own friction supplies
    the damping near standstill.
    """
    q = np.asarray(q, dtype=float)
    dq = np.asarray(dq, dtype=float)
    q_cmd = np.asarray(q_cmd, dtype=float)
    dq_cmd = np.zeros(NJ) if dq_cmd is None else np.asarray(dq_cmd, dtype=float)
    w = bandwidth
    qdd = w * w * (q_cmd - q) + 2.0 * w * (dq_cmd - dq)
    if qdd_extra is not None:
        qdd = qdd + np.asarray(qdd_extra, dtype=float)
    M = kernels.mass_matrix(model.dh, model.mass, model.com, model.inertia, q)
    b = kernels.bias_torque(model.dh, model.mass, model.com, model.inertia,
                            model.gravity, model.friction, q, dq, 0)
    mode = friction_mode_id(friction)
    tf = kernels.friction_torque(model.friction, dq_cmd, mode)
    return M @ qdd + b + tf


@dataclass
class ServoTracker:
    """Tracking controller with integral action for closed-loop runs.

    The integrator trims the static offset the friction feedforward
    leaves behind at standstill (it compensates at the commanded
    velocity, which is zero there).  Gain is w^3/10 with a clamp so a
    blocked joint cannot wind up past roughly twice its breakaway
    torque.
    """
    model: RobotModel
    bandwidth: float = 2 * np.pi * 8.0
    ki_scale: float = 0.3          # integral gain = ki_scale * w^3
    clamp: float = 0.05            # rad*s, elementwise anti-windup
    friction: str = "sigmoid"
    integral: np.ndarray = field(default_factory=lambda: np.zeros(NJ))

    def torque(self, q, dq, q_cmd, dq_cmd=None):
        w = self.bandwidth
        return servo_torque(self.model, q, dq, q_cmd, dq_cmd,
                            bandwidth=w, friction=self.friction,
                            qdd_extra=self.ki_scale * w ** 3 * self.integral)

    def step(self, ws: WorldState, q_cmd, dq_cmd=None, dt_ctrl: float = 0.01):
        """One closed-loop tick.  Returns (ws, true wrench, motor torque)."""
        tau = self.torque(ws.q, ws.dq, q_cmd, dq_cmd)
        e = np.asarray(q_cmd, dtype=float) - ws.q
        self.integral = np.clip(self.integral + dt_ctrl * e,
                                -self.clamp, self.clamp)
        ws, wr = step_world(ws, tau, dt_ctrl)
        return ws, wr, tau

    def reset(self):
        self.integral = np.zeros(NJ)


def step_world_position(ws: WorldState, q_cmd, dq_cmd=None, dt_ctrl: float = 0.01,
                        bandwidth: float = 2 * np.pi * 8.0):
    """Stateless servo tick (no integrator): compute torque, step under hold.

    Returns (ws, true wrench, motor torque applied).
    """
    tau = servo_torque(ws.model, ws.q, ws.dq, q_cmd, dq_cmd,
                       bandwidth=bandwidth, friction=ws.friction)
    ws, w = step_world(ws, tau, dt_ctrl)
    return ws, w, tau


# ---------------------------------------------------------------------------
# sensor pipeline

@dataclass
class SensorConfig:
    """What the controller sees; noise defaults are artifact choices, the
    source only fixes rate, filter order and 'some noise retained'."""
    rate: float = 100.0
    cutoff: float = 10.0           # Hz, third-order Butterworth
    position_quantum: float = 1e-5  # rad, encoder step
    current_noise: float = 0.01     # A, per joint
    ft_force_noise: float = 0.1     # N, simulated F/T sensor
    ft_torque_noise: float = 0.01   # N*m

    ORDER = 3

    def __post_init__(self):
        if not 0 < self.cutoff < self.rate / 2:
            raise ModelError("cutoff must sit below Nyquist")
        for name in ("position_quantum", "current_noise",
                     "ft_force_noise", "ft_torque_noise"):
            if getattr(self, name) < 0:
                raise ModelError(f"{name} must be nonnegative")

    def butter(self):
        return scipy.signal.butter(self.ORDER, self.cutoff, fs=self.rate)


def synthesize_current(model: RobotModel, tau_motor, cfg: SensorConfig | None = None,
                       rng=None) -> np.ndarray:
    """Motor current that would produce tau_motor, plus sensor noise."""
    tau_motor = np.asarray(tau_motor, dtype=float)
    cur = tau_motor / model.motor_k
    if cfg is not None and cfg.current_noise > 0 and rng is not None:
        cur = cur + rng.normal(scale=cfg.current_noise, size=cur.shape)
    return cur


def measure_wrench(w_true, cfg: SensorConfig, rng) -> np.ndarray:
    """Simulated F/T sensor reading of a true wrench."""
    w = np.asarray(w_true, dtype=float).copy()
    w[:3] += rng.normal(scale=cfg.ft_force_noise, size=3)
    w[3:] += rng.normal(scale=cfg.ft_torque_noise, size=3)
    return w


def quantize(q, quantum: float) -> np.ndarray:
    if quantum <= 0:
        return np.asarray(q, dtype=float)
    return np.round(np.asarray(q, dtype=float) / quantum) * quantum


class StateFilter:
    """Causal encoder-to-state pipeline, usable online or in batch.

    Chain: quantize -> three Butterworth passes (B3) -> per channel
      q   := avg . avg . B3           (two half-sample averagers)
      dq  := avg . diff . B3 / dt
      ddq := diff . diff . B3 / dt^2
    so every output channel carries the same group delay, 3*tau_B + 1
    sample.  Online and batch paths share scipy's lfilter with carried
    state, hence produce identical samples.
    """

    def __init__(self, cfg: SensorConfig, n_channels: int = NJ):
        self.cfg = cfg
        self.n = n_channels
        self.dt = 1.0 / cfg.rate
        self.b, self.a = cfg.butter()
        self._zi_proto = scipy.signal.lfilter_zi(self.b, self.a)
        self._state = None

    # -- filter plumbing

    def _init_state(self, x0):
        # steady-state inits: constant input passes through with zero
        # derivative outputs from the very first sample; stages fed by a
        # differencer see zero, so their carry must start at zero
        zi = [np.outer(self._zi_proto, x0) for _ in range(3)]
        za_q = [0.5 * x0.copy(), 0.5 * x0.copy()]
        zd_dq = [-x0.copy()]
        za_dq = [np.zeros_like(x0)]
        zd_dd = [-x0.copy(), np.zeros_like(x0)]
        self._state = {"b3": zi, "aq": za_q, "dv": zd_dq, "av": za_dq,
                       "dd": zd_dd}

    def _run(self, x):
        """x: (T, n) chunk; returns (q, dq, ddq) each (T, n)."""
        st = self._state
        y = x
        for i in range(3):
            y, st["b3"][i] = scipy.signal.lfilter(self.b, self.a, y, axis=0,
                                                  zi=st["b3"][i])
        qf = y
        for i in range(2):
            qf, st["aq"][i] = scipy.signal.lfilter([0.5, 0.5], [1.0], qf,
                                                   axis=0, zi=st["aq"][i][None])
            st["aq"][i] = st["aq"][i][0]
        dv, st["dv"][0] = scipy.signal.lfilter([1.0, -1.0], [1.0], y, axis=0,
                                               zi=st["dv"][0][None])
        st["dv"][0] = st["dv"][0][0]
        dvf, st["av"][0] = scipy.signal.lfilter([0.5, 0.5], [1.0], dv, axis=0,
                                                zi=st["av"][0][None])
        st["av"][0] = st["av"][0][0]
        dd = y
        for i in range(2):
            dd, st["dd"][i] = scipy.signal.lfilter([1.0, -1.0], [1.0], dd,
                                                   axis=0, zi=st["dd"][i][None])
            st["dd"][i] = st["dd"][i][0]
        return qf, dvf / self.dt, dd / self.dt ** 2

    # -- public api

    def push(self, q_raw):
        """One sample in, one (q, dq, ddq) sample out."""
        x = quantize(np.asarray(q_raw, dtype=float).reshape(1, self.n),
                     self.cfg.position_quantum)
        if self._state is None:
            self._init_state(x[0])
        qf, dqf, ddqf = self._run(x)
        return qf[0], dqf[0], ddqf[0]

    def reset(self):
        self._state = None


def derive_states(positions, cfg: SensorConfig):
    """Batch form of the pipeline; identical samples to the online path."""
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    if positions.shape[0] < 50:
        raise ModelError("need at least 50 samples (filter warmup)")
    f = StateFilter(cfg, n_channels=positions.shape[1])
    x = quantize(positions, cfg.position_quantum)
    f._init_state(x[0])
    return f._run(x)


def pipeline_delay_samples(cfg: SensorConfig, freq: float | None = None) -> float:
    """Analytic group delay of every output channel, in samples."""
    b, a = cfg.butter()
    w = 1e-6 if freq is None else 2 * np.pi * freq / cfg.rate
    _, gd = scipy.signal.group_delay((b, a), w=[w])
    return 3.0 * float(gd[0]) + 1.0


def channel_response(cfg: SensorConfig, freq: float, channel: str = "dq"):
    """Complex frequency response of one output channel at freq (Hz)."""
    b, a = cfg.butter()
    _, H = scipy.signal.freqz(b, a, worN=[freq], fs=cfg.rate)
    B = H[0] ** 3
    zinv = np.exp(-2j * np.pi * freq / cfg.rate)
    avg = 0.5 * (1 + zinv)
    dif = 1 - zinv
    if channel == "q":
        return B * avg * avg
    if channel == "dq":
        return B * avg * dif * cfg.rate
    if channel == "ddq":
        return B * dif * dif * cfg.rate ** 2
    raise ValueError(channel)


def noise_gain(cfg: SensorConfig, channel: str = "ddq", n: int = 4096) -> float:
    """RMS amplification of white input noise for one channel."""
    imp = np.zeros((n, 1))
    imp[0, 0] = 1.0
    f = StateFilter(cfg, n_channels=1)
    f._init_state(np.zeros(1))
    qf, dqf, ddqf = f._run(imp)
    h = {"q": qf, "dq": dqf, "ddq": ddqf}[channel][:, 0]
    return float(np.sqrt(np.sum(h ** 2)))
