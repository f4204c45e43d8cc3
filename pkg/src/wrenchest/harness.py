"""Estimator comparisons: scored replays, closed-loop tasks, and the CLI.

Three experiment runners mirror the data-collection procedures.  Free
motion is generated at a held-out seed and scored offline; force-tracked
sliding and hand guiding close the admittance loop on the network
estimate itself, with the true wrench logged for scoring.  Every report
grades all estimators on the exact same frames, and a run is a pure
function of its seed, so report files are byte-stable across reruns.

The momentum-observer baseline runs on a deliberately jittered copy of
the robot model.  With the exact model in an exact simulator it would
win by construction and the comparison would say nothing; the jitter
magnitudes are config knobs and show up in every report.  A matched
diagnostic (exact model, exact signals, stiff gain) stays available to
pin down that the observer's table-run errors come from model mismatch
and not from the observer itself.
"""

import argparse
import configparser
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import load_reference_model
from .dyncore import (NJ, IkError, JointState, ModelError,
                      coriolis_matrix, ik_solve, inverse_dynamics,
                      jacobian, kernels, mass_matrix)
from . import control, datagen, identify, learn, observer, simworld

log = logging.getLogger(__name__)

DT = datagen.DT
AXES = ("fx", "fy", "fz", "tx", "ty", "tz")

# comfortable elbow-up start posture, tool pointing down
_Q_HOME = np.array([0.0, 0.63, -1.79, 0.0, 1.15, 0.0])
_DOWN = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])


def _pose(p, R=_DOWN):
    T = np.eye(4)
    T[:3, :3] = R
    T[:3, 3] = p
    return T


# ---------------------------------------------------------------------------
# baseline model mismatch

def perturb_model(model, seed, inertial=0.10, friction=0.30):
    """Copy of the model with its dynamic parameters jittered.

    Every link picks up independent relative errors: up to `inertial` on
    mass, COM and the inertia tensor, up to `friction` on each friction
    coefficient.  Scaling an inertia tensor by a positive factor keeps
    it positive definite and scaling friction magnitudes keeps their
    signs, so the result is always a loadable model, just a wrong one.
    Motor constants stay exact; current calibration is its own
    procedure and the comparison should not conflate the two.
    """
    m = model.copy()
    rng = np.random.default_rng([seed, 17])
    m.mass *= 1.0 + rng.uniform(-inertial, inertial, NJ)
    m.com *= 1.0 + rng.uniform(-inertial, inertial, (NJ, 3))
    m.inertia *= (1.0 + rng.uniform(-inertial, inertial, NJ))[:, None, None]
    m.friction *= 1.0 + rng.uniform(-friction, friction, (NJ, 7))
    m.name = model.name + "_perturbed"
    m.validate()
    return m


# ---------------------------------------------------------------------------
# estimator adapters: uniform offline scoring over a frame log

class NnEstimator:
    """Offline scorer wrapping a trained network: one prediction per row."""

    def __init__(self, net, label):
        self.net = net
        self.label = label
        self.fault = False
        self.info = {}

    def estimate(self, ds):
        return self.net.forward(ds.features()), np.ones(len(ds), dtype=bool)


class GmoEstimator:
    """Momentum-observer replay over logged frames.

    A dataset row holds the encoder-pipeline state, which lags the true
    state by the pipeline group delay, while its current column belongs
    to the torque commanded on that same row.  The observer wants state
    and torque from one instant, so the replay pairs row k's state with
    the current from `delay` rows back, and the resulting estimate is
    scored against the label `delay` rows back as well.  The network
    never gets this alignment help; it learned the lag from data.
    """

    def __init__(self, model, label="gmo", gain=25.0, sensor=None):
        self.model = model
        self.label = label
        self.gain = float(gain)
        self.delay = int(round(simworld.pipeline_delay_samples(
            sensor or simworld.SensorConfig())))
        self.fault = False
        self.info = {}

    def estimate(self, ds):
        n = len(ds)
        d = self.delay
        if n <= d + 1:
            raise ModelError("frame log too short for the observer replay")
        tau = ds.current * self.model.motor_k
        est = np.zeros((n, 6))
        valid = np.zeros(n, dtype=bool)
        state = observer.init_gmo(self.model,
                                  JointState(q=ds.q[0], dq=ds.dq[0]),
                                  tau[0], gain=self.gain, dt=DT)
        for k in range(1, n):
            js = JointState(q=ds.q[k], dq=ds.dq[k])
            r = observer.gmo_step(state, self.model, js, tau[max(k - d, 0)])
            if state.fault:
                break
            if k >= d:
                w = observer.residual_to_wrench(self.model, ds.q[k], r)
                est[k - d] = w.wrench
                valid[k - d] = True
        self.fault = state.fault
        return est, valid


def perturbed_gmo(model, seed, *, inertial=0.10, friction=0.30, gain=25.0,
                  label="gmo", sensor=None) -> GmoEstimator:
    """The table-run baseline: observer on a jittered copy of the model."""
    est = GmoEstimator(perturb_model(model, seed, inertial, friction),
                       label=label, gain=gain, sensor=sensor)
    est.info = {"perturb_seed": seed, "perturb_inertial": inertial,
                "perturb_friction": friction, "gain": gain}
    return est


# ---------------------------------------------------------------------------
# reports

@dataclass
class ExperimentReport:
    """Scored experiment: per-axis errors, task metrics, health flags."""
    name: str
    seed: int
    digest: str
    n_frames: int
    rmse: dict                                    # label -> (6,) N and N*m
    metrics: dict = field(default_factory=dict)   # scalar task numbers
    flags: dict = field(default_factory=dict)     # True means healthy
    frames: object = None                         # run log, not serialized

    def __post_init__(self):
        clean = {}
        for label, r in self.rmse.items():
            r = np.asarray(r, dtype=float).reshape(6)
            if not np.all(np.isfinite(r)) or np.any(r < 0):
                raise ModelError(
                    f"RMSE for {label!r} must be finite and nonnegative")
            clean[label] = r
        self.rmse = clean

    def ok(self) -> bool:
        return all(bool(v) for v in self.flags.values())

    def csv(self) -> str:
        lines = ["kind,label,axis,value",
                 f"meta,name,,{self.name}",
                 f"meta,seed,,{self.seed}",
                 f"meta,digest,,{self.digest}",
                 f"meta,frames,,{self.n_frames}"]
        for label, r in self.rmse.items():
            for ax, v in zip(AXES, r):
                lines.append(f"rmse,{label},{ax},{float(v)!r}")
        for k in sorted(self.metrics):
            lines.append(f"metric,{k},,{float(self.metrics[k])!r}")
        for k in sorted(self.flags):
            lines.append(f"flag,{k},,{int(bool(self.flags[k]))}")
        return "\n".join(lines) + "\n"

    def table(self) -> str:
        head = (f"{self.name}  seed={self.seed}  digest={self.digest}"
                f"  frames={self.n_frames}")
        lines = [head, "-" * len(head),
                 f"{'estimator':<12}" + "".join(f"{ax:>10}" for ax in AXES)]
        for label, r in self.rmse.items():
            lines.append(f"{label:<12}" + "".join(f"{v:>10.4f}" for v in r))
        for k in sorted(self.metrics):
            lines.append(f"{k} = {float(self.metrics[k]):.6g}")
        for k in sorted(self.flags):
            lines.append(f"{k}: {'ok' if self.flags[k] else 'FAIL'}")
        return "\n".join(lines) + "\n"

    def write(self, directory) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / "report.csv").write_text(self.csv())
        (d / "report.txt").write_text(self.table())
        return d / "report.csv"


def rmse_report(truth, estimates, mask=None, *, name="rmse", seed=0,
                digest="", metrics=None, flags=None) -> ExperimentReport:
    """Per-axis RMSE of every estimator against the same truth rows.

    `estimates` maps label -> (est, valid).  The scored rows are the AND
    of all validity masks (and `mask` when given), so no estimator gets
    graded on frames another one skipped.
    """
    truth = np.asarray(truth, dtype=float)
    if truth.ndim != 2 or truth.shape[1] != 6:
        raise ModelError("truth log must have shape (n, 6)")
    n = truth.shape[0]
    if mask is None:
        keep = np.ones(n, dtype=bool)
    else:
        keep = np.asarray(mask, dtype=bool).copy()
        if keep.shape != (n,):
            raise ModelError("mask length does not match the log")
    arrs = {}
    for label, (est, valid) in estimates.items():
        est = np.asarray(est, dtype=float)
        if est.shape != truth.shape:
            raise ModelError(
                f"estimate log {label!r} is misaligned with the truth log")
        valid = np.asarray(valid, dtype=bool)
        if valid.shape != (n,):
            raise ModelError(f"validity mask for {label!r} has wrong length")
        keep &= valid
        arrs[label] = est
    if not np.any(keep):
        raise ModelError("no frames left to score")
    rmse = {}
    for label, est in arrs.items():
        e = est[keep] - truth[keep]
        rmse[label] = np.sqrt(np.mean(e * e, axis=0))
    return ExperimentReport(name=name, seed=seed, digest=digest,
                            n_frames=int(keep.sum()), rmse=rmse,
                            metrics=dict(metrics or {}),
                            flags=dict(flags or {}))


def score_on_dataset(ds, estimators, *, name, settle=100, metrics=None,
                     flags=None) -> ExperimentReport:
    """Run every estimator over one frame log, grade on the shared rows.

    The first `settle` rows are dropped for everyone; they hold the
    filter warmup and the observer's convergence from its zero start.
    """
    labels = [e.label for e in estimators]
    if len(set(labels)) != len(labels):
        raise ModelError("estimator labels must be unique")
    fl = dict(flags or {})
    mx = dict(metrics or {})
    ests = {}
    for e in estimators:
        ests[e.label] = e.estimate(ds)
        fl[e.label + "_clean"] = not e.fault
        for k, v in e.info.items():
            mx[f"{e.label}_{k}"] = v
    mask = np.zeros(len(ds), dtype=bool)
    mask[settle:] = True
    return rmse_report(ds.wrench, ests, mask=mask, name=name, seed=ds.seed,
                       digest=ds.digest, metrics=mx, flags=fl)


def motion_force_cosine(model, ds, f_min=2.0, v_min=2e-3):
    """Mean cosine between flange velocity and applied force direction.

    Computed over frames where both are meaningfully nonzero.  Free
    motion should sit near zero (pushes do not steer the arm), guided
    motion near one (pushes are exactly what steers it).  Returns
    (mean cosine, frames counted).
    """
    n = len(ds)
    v = np.empty((n, 3))
    for k in range(n):
        v[k] = kernels.jacobian(model.dh, ds.q[k])[:3] @ ds.dq[k]
    f = ds.wrench[:, :3]
    fn = np.linalg.norm(f, axis=1)
    vn = np.linalg.norm(v, axis=1)
    m = (fn > f_min) & (vn > v_min)
    if not np.any(m):
        return 0.0, 0
    cos = np.sum(f[m] * v[m], axis=1) / (fn[m] * vn[m])
    return float(np.mean(cos)), int(m.sum())


# ---------------------------------------------------------------------------
# matched-model observer diagnostic

def matched_gmo_diagnostic(model, seed=0, *, duration=20.0, gain=2000.0,
                           settle=2.0):
    """Observer floor under ideal conditions: exact model, exact signals.

    Smooth sum-of-sines joint motion plus a known injected flange
    wrench; the motor torque is synthesized to balance the dynamics
    exactly, so what remains is the observer's own first-order lag.
    The default gain keeps that lag small against the injection's ramp
    rates (the implicit-trapezoid update has no stability ceiling, so
    stiff gains are fine).  Run this to check that the table runs' GMO
    errors come from the jittered model, not from the observer.
    """
    rng = np.random.default_rng([seed, 23])
    q0 = _Q_HOME + rng.uniform(-0.15, 0.15, NJ)
    amp = rng.uniform(0.10, 0.35, NJ)
    omg = 2 * np.pi * rng.uniform(0.05, 0.3, NJ)
    ph = rng.uniform(0.0, 2 * np.pi, NJ)
    inj = simworld.draw_injection([seed, 24], duration)
    n = int(round(duration / DT))
    est = np.empty((n, 6))
    tru = np.empty((n, 6))
    state = None
    for k in range(n):
        t = k * DT
        s = np.sin(omg * t + ph)
        q = q0 + amp * s
        dq = amp * omg * np.cos(omg * t + ph)
        ddq = -amp * omg ** 2 * s
        w = inj.eval(t)
        tau = inverse_dynamics(model, q, dq, ddq) - jacobian(model, q).T @ w
        js = JointState(q=q, dq=dq)
        if state is None:
            state = observer.init_gmo(model, js, tau, gain=gain, dt=DT)
            r = np.zeros(NJ)
        else:
            r = observer.gmo_step(state, model, js, tau)
        est[k] = observer.residual_to_wrench(model, q, r).wrench
        tru[k] = w
    keep = np.arange(n) * DT >= settle
    e = est[keep] - tru[keep]
    rmse = np.sqrt(np.mean(e * e, axis=0))
    return {"rmse": rmse, "force_rmse": float(rmse[:3].max()),
            "torque_rmse": float(rmse[3:].max()), "gain": float(gain),
            "frames": int(keep.sum())}


# ---------------------------------------------------------------------------
# closed-loop plumbing shared by the sliding and guiding runners

class _LiveSensors:
    """Online sensor path for closed-loop runs.

    Encoder pipeline plus a current read of whatever torque the drive
    is holding right now, which is the torque commanded one tick ago.
    The log row's own current column belongs to the torque commanded on
    that row; the feedback read cannot see that one yet, so feedback
    and log draw from separate noise streams.
    """

    def __init__(self, model, sensor, seed, tau_hold):
        self.model = model
        self.sensor = sensor
        self.filt = simworld.StateFilter(sensor)
        self.rng_fb = np.random.default_rng([seed, 5])
        self.rng_log = np.random.default_rng([seed, 6])
        self.tau = np.asarray(tau_hold, dtype=float).copy()

    def sample(self, q_true):
        qf, dqf, ddqf = self.filt.push(q_true)
        cur = simworld.synthesize_current(self.model, self.tau, self.sensor,
                                          self.rng_fb)
        return qf, dqf, ddqf, cur

    def log_current(self, tau_cmd):
        self.tau = np.asarray(tau_cmd, dtype=float).copy()
        return simworld.synthesize_current(self.model, tau_cmd, self.sensor,
                                           self.rng_log)


class _FrameLog:
    """Row collector for closed-loop runs (pipeline values come in ready)."""

    def __init__(self):
        self.rows = {k: [] for k in ("t", "q", "dq", "ddq", "cur", "w", "c")}

    def push(self, t, qf, dqf, ddqf, cur, wrench, contact):
        r = self.rows
        r["t"].append(float(t))
        r["q"].append(np.asarray(qf, dtype=float).copy())
        r["dq"].append(np.asarray(dqf, dtype=float).copy())
        r["ddq"].append(np.asarray(ddqf, dtype=float).copy())
        r["cur"].append(np.asarray(cur, dtype=float).copy())
        r["w"].append(np.asarray(wrench, dtype=float).copy())
        r["c"].append(bool(contact))

    def dataset(self, tag, seed, digest) -> datagen.Dataset:
        r = self.rows
        return datagen.Dataset(tag, seed, digest, np.array(r["t"]),
                               np.stack(r["q"]), np.stack(r["dq"]),
                               np.stack(r["ddq"]), np.stack(r["cur"]),
                               np.stack(r["w"]),
                               np.array(r["c"], dtype=bool))


# ---------------------------------------------------------------------------
# experiment runners

def run_free_motion_test(model, estimators, seed, *, n_waypoints=40,
                         sensor=None, settle=100, **gen_kw):
    """Free-space run at a held-out seed, scored offline frame by frame."""
    ds = datagen.gen_fsds(model, seed, n_waypoints=n_waypoints,
                          sensor=sensor, tag="TEST", **gen_kw)
    rep = score_on_dataset(ds, estimators, name="free", settle=settle)
    rep.frames = ds
    return rep


def run_spiral_sliding(model, net, estimators, seed, *, feedback="net",
                       tilt_deg=10.0, f_normal=20.0, pitch=2e-3, speed=5e-3,
                       slide_time=25.0, hold_time=2.0, mass=30.0,
                       damping=3600.0, point=(0.42, 0.0, 0.18), sensor=None,
                       settle=100) -> ExperimentReport:
    """Press on a tilted plane and slide a spiral, estimator in the loop.

    The admittance loop's only force feedback is the network estimate
    (or the true wrench with feedback="truth", the quality ceiling);
    ground truth is logged for scoring either way.  The plane is tilted
    about the base y axis and the spiral overlay lives in the plane
    frame.  The true normal force doubles as the safety monitor: above
    60 N or out of contact for half a second ends the run as a failure.
    """
    if feedback not in ("net", "truth"):
        raise ModelError("feedback must be 'net' or 'truth'")
    if feedback == "net" and net is None:
        raise ModelError("estimate feedback needs a network")
    sensor = sensor or simworld.SensorConfig()
    digest = datagen.config_digest(
        kind="spiral", seed=seed, feedback=feedback, tilt_deg=tilt_deg,
        f_normal=f_normal, pitch=pitch, speed=speed, slide_time=slide_time,
        hold_time=hold_time, mass=mass, damping=damping,
        point=tuple(point), sensor=vars(sensor))
    th = np.radians(tilt_deg)
    c, s = np.cos(th), np.sin(th)
    R_pb = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    normal = R_pb[:, 2].copy()
    R_tool = R_pb @ _DOWN
    point = np.asarray(point, dtype=float)
    plane = simworld.ContactPlane(point=point, normal=normal)

    hover = 3e-3
    approach = 4e-3
    try:
        q0 = ik_solve(model, _pose(point + hover * normal, R_tool), _Q_HOME,
                      restarts=0)
    except IkError:
        raise ModelError("contact plane is out of reach") from None
    ws = simworld.WorldState(model=model, q=q0, dq=np.zeros(NJ),
                             planes=[plane], seed=seed)
    trk = simworld.ServoTracker(model=model, ki_scale=0.0)
    sens = _LiveSensors(model, sensor, seed,
                        inverse_dynamics(model, q0, np.zeros(NJ),
                                         np.zeros(NJ)))
    flog = _FrameLog()
    cfg = control.AdmittanceConfig(
        mass=np.full(6, mass), damping=np.full(6, damping), plane=R_pb,
        active=np.zeros(6, dtype=bool))

    st = {"t": 0.0, "w": ws.external_wrench(), "q_cmd": q0.copy()}
    phases = []

    def read():
        pipe = sens.sample(ws.q)
        if feedback == "truth":
            return pipe, st["w"].copy()
        return pipe, net.forward(np.concatenate(pipe))

    def advance(pipe, q_cmd, dq_cmd, phase):
        contact = ws.contact_depth() > 0.0
        _, w_next, tau = trk.step(ws, q_cmd, dq_cmd)
        flog.push(st["t"], pipe[0], pipe[1], pipe[2], sens.log_current(tau),
                  st["w"], contact)
        phases.append(phase)
        st["t"] += DT
        st["w"] = w_next
        st["q_cmd"] = q_cmd

    # descend along -normal until the feedback wrench sees the plane
    z = 0.0
    touched = False
    for _ in range(int((hover + 2e-3) / (approach * DT))):
        pipe, w_fb = read()
        if float(w_fb[:3] @ normal) > 1.5:
            touched = True
            advance(pipe, st["q_cmd"], np.zeros(NJ), datagen.PHASE_FREE)
            break
        z += approach * DT
        try:
            q_cmd = ik_solve(model, _pose(point + (hover - z) * normal,
                                          R_tool), st["q_cmd"], restarts=0)
        except IkError:
            raise ModelError("IK failed during the engage descent") from None
        advance(pipe, q_cmd, (q_cmd - st["q_cmd"]) / DT, datagen.PHASE_FREE)
    if not touched:
        raise ModelError("no contact found below the expected surface height")

    cfg.active[2] = True
    cfg.f_desired[2] = f_normal
    loop = control.AdmittanceLoop(
        model, cfg, anchor=_pose(point + (hover - z) * normal, R_tool),
        q_start=st["q_cmd"])
    loop.v[2] = -approach      # keep the descent rate through the takeover

    offs = control.spiral_offsets(slide_time, pitch=pitch, speed=speed)
    plan = [(np.zeros(2), datagen.PHASE_HOLD)] * int(round(hold_time / DT))
    plan += [(offs[k], datagen.PHASE_SLIDE) for k in range(offs.shape[0])]

    abort = ""
    lost = 0
    for ov_xy, phase in plan:
        fn_true = float(st["w"][:3] @ normal)
        if fn_true > 60.0:
            abort = "overforce"
            break
        lost = lost + 1 if fn_true < 0.5 else 0
        if lost >= 50:
            abort = "contact lost"
            break
        pipe, w_fb = read()
        q_cmd, dq_cmd = loop.step(w_fb,
                                  overlay=np.array([ov_xy[0], ov_xy[1], 0.0]))
        advance(pipe, q_cmd, dq_cmd, phase)
    if abort:
        log.warning("sliding run aborted (%s) at t=%.2f s", abort, st["t"])

    ds = flog.dataset("TEST", seed, digest)
    ph = np.array(phases, dtype=int)
    fn = ds.wrench[:, :3] @ normal
    slide = ph == datagen.PHASE_SLIDE
    metrics = {
        "track_mae": float(np.mean(np.abs(fn[slide] - f_normal)))
        if slide.any() else float("nan"),
        "fn_peak": float(fn.max()),
        "slide_frames": float(slide.sum()),
    }
    flags = {"completed": not abort, "loop_clean": loop.ik_faults == 0}
    rep = score_on_dataset(ds, estimators, name="spiral-" + feedback,
                           settle=settle, metrics=metrics, flags=flags)
    rep.frames = ds
    return rep


def run_hand_guiding(model, net, estimators, seed, *, feedback="net",
                     duration=60.0, box=None, mass=60.0, damping=600.0,
                     margin=0.02, recover_gain=200.0, recover_cap=10.0,
                     sensor=None, settle=100) -> ExperimentReport:
    """Guide-force process with the network estimate closing the loop.

    Same world as the hand-guiding dataset: a slow wrench process stands
    in for a person's hand, the admittance loop yields to the feedback
    wrench, workspace-edge pauses drop the guide force while a weak
    spring recenters.  The difference is what the loop trusts: the
    estimate instead of a wrist sensor.
    """
    if feedback not in ("net", "truth"):
        raise ModelError("feedback must be 'net' or 'truth'")
    if feedback == "net" and net is None:
        raise ModelError("estimate feedback needs a network")
    box = datagen.DEFAULT_BOX if box is None else np.asarray(box, dtype=float)
    sensor = sensor or simworld.SensorConfig()
    if np.any(box[:, 1] - box[:, 0] <= 4 * margin):
        raise ModelError("box too small for the pause hysteresis band")
    digest = datagen.config_digest(
        kind="handguide", seed=seed, feedback=feedback, duration=duration,
        box=box.tolist(), mass=mass, damping=damping, margin=margin,
        recover_gain=recover_gain, recover_cap=recover_cap,
        sensor=vars(sensor))
    center = box.mean(axis=1)
    try:
        q0 = ik_solve(model, _pose(center), _Q_HOME, restarts=0)
    except IkError:
        raise ModelError("workspace box center is out of reach") from None
    inj = simworld.draw_injection([seed, 2], duration, force_peak=(5.0, 20.0),
                                  torque_peak=(0.1, 0.6), band=(0.05, 0.5),
                                  on_span=(6.0, 14.0), off_span=(2.0, 5.0),
                                  ramp=1.2)
    ws = simworld.WorldState(model=model, q=q0, dq=np.zeros(NJ),
                             injection=inj, seed=seed, injection_tag="hgds")
    trk = simworld.ServoTracker(model=model, ki_scale=0.0)
    sens = _LiveSensors(model, sensor, seed,
                        inverse_dynamics(model, q0, np.zeros(NJ),
                                         np.zeros(NJ)))
    flog = _FrameLog()
    cfg = control.AdmittanceConfig(
        mass=np.full(6, mass), damping=np.full(6, damping),
        active=np.array([True, True, True, False, False, False]))
    loop = control.AdmittanceLoop(model, cfg, anchor=_pose(center),
                                  q_start=q0)

    lo, hi = box[:, 0], box[:, 1]
    paused = False
    pauses = 0
    paused_rows = []
    t = 0.0
    for _ in range(int(round(duration / DT))):
        pos = kernels.fk(model.dh, ws.q)[:3, 3]
        if not paused and (np.any(pos < lo + margin)
                           or np.any(pos > hi - margin)):
            paused = True
            pauses += 1
        elif paused and np.all(pos > lo + 2 * margin) \
                and np.all(pos < hi - 2 * margin):
            paused = False
        ws.injection = None if paused else inj
        w_now = ws.external_wrench()
        pipe = sens.sample(ws.q)
        if feedback == "truth":
            u = w_now.copy()
        else:
            u = net.forward(np.concatenate(pipe))
        if paused:
            u[:3] += np.clip(recover_gain * (center - pos),
                             -recover_cap, recover_cap)
        q_cmd, dq_cmd = loop.step(u)
        _, _, tau = trk.step(ws, q_cmd, dq_cmd)
        flog.push(t, pipe[0], pipe[1], pipe[2], sens.log_current(tau),
                  w_now, False)
        paused_rows.append(paused)
        t += DT

    ds = flog.dataset("TEST", seed, digest)
    cos, n_cos = motion_force_cosine(model, ds)
    metrics = {"cosine": cos, "cosine_frames": float(n_cos),
               "pauses": float(pauses),
               "quiet_drift": _quiet_drift(model, ds, np.array(paused_rows))}
    flags = {"completed": True, "loop_clean": loop.ik_faults == 0}
    rep = score_on_dataset(ds, estimators, name="handguide-" + feedback,
                           settle=settle, metrics=metrics, flags=flags)
    rep.frames = ds
    return rep


def _quiet_drift(model, ds, paused, min_len=150, skip=100):
    """Largest end-to-end flange drift over zero-force unpaused stretches.

    NaN when the run never goes quiet for min_len frames.  The first
    `skip` frames are warmup and do not count.
    """
    quiet = (np.linalg.norm(ds.wrench[:, :3], axis=1) < 1e-12) & ~paused
    quiet[:skip] = False
    worst = float("nan")
    k = 0
    n = len(ds)
    while k < n:
        if not quiet[k]:
            k += 1
            continue
        j = k
        while j < n and quiet[j]:
            j += 1
        if j - k >= min_len:
            p0 = kernels.fk(model.dh, ds.q[k])[:3, 3]
            p1 = kernels.fk(model.dh, ds.q[j - 1])[:3, 3]
            d = float(np.linalg.norm(p1 - p0))
            worst = d if np.isnan(worst) else max(worst, d)
        k = j
    return worst


# ---------------------------------------------------------------------------
# command line

def _cfg(path) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    if path is not None and not cp.read(path):
        raise ModelError(f"config file {path} not found")
    return cp


def _floats(text):
    return tuple(float(x) for x in str(text).split(","))


def _ints(text):
    return tuple(int(x) for x in str(text).split(","))


def _sensor_from(cp) -> simworld.SensorConfig:
    g = cp.getfloat
    return simworld.SensorConfig(
        rate=cp.getint("sensor", "rate", fallback=100),
        cutoff=g("sensor", "cutoff", fallback=10.0),
        position_quantum=g("sensor", "position_quantum", fallback=1e-5),
        current_noise=g("sensor", "current_noise", fallback=0.01),
        ft_force_noise=g("sensor", "ft_force_noise", fallback=0.1),
        ft_torque_noise=g("sensor", "ft_torque_noise", fallback=0.01))


def _train_config(cp, seed) -> learn.TrainConfig:
    g = cp.getfloat
    return learn.TrainConfig(
        lr=g("train", "lr", fallback=1e-3),
        batch=cp.getint("train", "batch", fallback=256),
        epochs=cp.getint("train", "epochs", fallback=200),
        patience=cp.getint("train", "patience", fallback=20),
        seed=seed)


def _split_from(cp, ds):
    fr = _floats(cp.get("train", "fractions", fallback="0.8,0.1,0.1"))
    return datagen.split(ds, fr,
                         seed=cp.getint("train", "split_seed", fallback=0))


def _gmo_from(cp, model, sensor) -> GmoEstimator:
    g = cp.getfloat
    return perturbed_gmo(
        model, cp.getint("gmo", "perturb_seed", fallback=1),
        inertial=g("gmo", "perturb_inertial", fallback=0.10),
        friction=g("gmo", "perturb_friction", fallback=0.30),
        gain=g("gmo", "gain", fallback=25.0), sensor=sensor)


def _rundir(args, label, digest) -> Path:
    d = Path(args.out) / f"{label}-{digest}"
    d.mkdir(parents=True, exist_ok=True)
    return d


def _finish(args, rep, label) -> int:
    d = _rundir(args, label, rep.digest)
    rep.write(d)
    if rep.frames is not None:
        rep.frames.write(d / "frames.csv")
    print(rep.table())
    print(f"wrote {d}")
    return 0 if rep.ok() else 1


def _cmd_model(args) -> int:
    m = load_reference_model()
    m.validate()
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100):
        q = rng.uniform(m.q_min, m.q_max)
        dq = rng.uniform(-1.0, 1.0, NJ)
        x = rng.normal(size=NJ)
        h = 1e-6
        Md = (mass_matrix(m, q + h * dq) - mass_matrix(m, q - h * dq)) / (2 * h)
        S = Md - 2.0 * coriolis_matrix(m, q, dq)
        worst = max(worst, abs(x @ S @ x))
    print(f"model {m.name}: parameters valid, FK self-test ok")
    print(f"max |x^T (Mdot - 2C) x| over 100 states: {worst:.3e}")
    if worst > 1e-5:
        print("dynamics consistency check FAILED")
        return 1
    return 0


def _cmd_identify(args) -> int:
    cp = _cfg(args.config)
    m = load_reference_model()
    g = cp.getfloat
    n_states = cp.getint("identify", "n_states", fallback=160)
    noise = g("identify", "noise_rel", fallback=0.02)
    digest = datagen.config_digest(kind="identify", seed=args.seed,
                                   n_states=n_states, noise_rel=noise)
    red = identify.base_reduction(m, n_states=n_states, seed=args.seed)
    traj = identify.generate_excitation(
        m, red, seed=args.seed,
        harmonics=cp.getint("identify", "harmonics", fallback=5),
        base_freq=g("identify", "base_freq", fallback=0.1),
        cond_bound=g("identify", "cond_bound", fallback=300.0))
    (Q, DQ, DDQ), cur = identify.synthesize_currents(m, traj,
                                                     noise_rel=noise,
                                                     seed=args.seed)
    W = identify.stack_regressor(m, Q, DQ, DDQ)
    res = identify.identify_parameters(identify.current_stack(m, W), cur, red)
    d = _rundir(args, "identify", digest)
    with open(d / "params.txt", "w") as fh:
        fh.write(f"# base parameters, cond={res.cond!r}, rank={res.rank}\n")
        for v in res.pi_base:
            fh.write(repr(float(v)) + "\n")
    ratio = res.residual_rms / res.signal_rms
    lines = ["joint,residual_rms,signal_rms,ratio"]
    for i in range(NJ):
        lines.append(f"{i + 1},{res.residual_rms[i]!r},"
                     f"{res.signal_rms[i]!r},{ratio[i]!r}")
    (d / "fit.csv").write_text("\n".join(lines) + "\n")
    print(f"excitation cond {traj.cond:.1f}, fit cond {res.cond:.1f}, "
          f"rank {res.rank}")
    print(f"worst residual/signal: {ratio.max():.4f}")
    print(f"wrote {d}")
    return 0


def _cmd_gen(args) -> int:
    cp = _cfg(args.config)
    m = load_reference_model()
    sensor = _sensor_from(cp)
    g = cp.getfloat
    if args.kind == "fsds":
        ds = datagen.gen_fsds(
            m, args.seed,
            n_waypoints=cp.getint("fsds", "n_waypoints", fallback=80),
            sensor=sensor)
    elif args.kind == "csds":
        ds = datagen.gen_csds(
            m, args.seed,
            n_points=cp.getint("csds", "n_points", fallback=6),
            hold=g("csds", "hold", fallback=8.0), sensor=sensor)
    else:
        ds = datagen.gen_hgds(
            m, args.seed,
            duration=g("hgds", "duration", fallback=120.0), sensor=sensor)
    d = _rundir(args, args.kind, ds.digest)
    ds.write(d / "data.csv")
    print(f"{len(ds)} frames, digest {ds.digest}")
    print(f"wrote {d}")
    return 0


def _cmd_train(args) -> int:
    cp = _cfg(args.config)
    ds = datagen.Dataset.read(args.data)
    tr, va, te = _split_from(cp, ds)
    hidden = _ints(cp.get("train", "hidden", fallback="1024,1024"))
    net = learn.MlpEstimator.init(hidden=hidden, seed=args.seed)
    net, curves = learn.train(net, tr, va, _train_config(cp, args.seed))
    digest = datagen.config_digest(kind="train", data=ds.digest,
                                   hidden=hidden, seed=args.seed)
    d = _rundir(args, "train", digest)
    learn.save(net, d / "model.txt")
    learn.write_curves(curves, d / "curves.csv")
    rmse = learn.rmse_per_axis(net, te.features(), te.labels())
    print("test RMSE: " + " ".join(f"{ax}={v:.4f}"
                                   for ax, v in zip(AXES, rmse)))
    print(f"wrote {d}")
    return 0


def _cmd_finetune(args) -> int:
    cp = _cfg(args.config)
    base = learn.load(args.model)
    ds = datagen.Dataset.read(args.data)
    tr, va, te = _split_from(cp, ds)
    net, curves = learn.finetune(base, tr, va, _train_config(cp, args.seed))
    digest = datagen.config_digest(kind="finetune", data=ds.digest,
                                   base=base.meta.get("train_digest", ""),
                                   seed=args.seed)
    d = _rundir(args, "finetune", digest)
    learn.save(net, d / "model.txt")
    learn.write_curves(curves, d / "curves.csv")
    rmse = learn.rmse_per_axis(net, te.features(), te.labels())
    print("test RMSE: " + " ".join(f"{ax}={v:.4f}"
                                   for ax, v in zip(AXES, rmse)))
    print(f"wrote {d}")
    return 0


def _cmd_run(args) -> int:
    cp = _cfg(args.config)
    m = load_reference_model()
    sensor = _sensor_from(cp)
    g = cp.getfloat
    base = learn.load(args.model) if args.model else None
    ft = learn.load(args.finetuned) if args.finetuned else None
    if base is None and ft is None:
        raise ModelError("run needs --model and/or --finetuned")
    ests = []
    if ft is not None:
        ests.append(NnEstimator(ft, "nn-ft"))
    if base is not None:
        ests.append(NnEstimator(base, "nn-base"))
    ests.append(_gmo_from(cp, m, sensor))
    loop_net = ft if ft is not None else base
    if args.kind == "free":
        rep = run_free_motion_test(
            m, ests, args.seed,
            n_waypoints=cp.getint("free", "n_waypoints", fallback=40),
            sensor=sensor)
    elif args.kind == "spiral":
        rep = run_spiral_sliding(
            m, loop_net, ests, args.seed,
            feedback=cp.get("spiral", "feedback", fallback="net"),
            tilt_deg=g("spiral", "tilt_deg", fallback=10.0),
            f_normal=g("spiral", "f_normal", fallback=20.0),
            pitch=g("spiral", "pitch", fallback=2e-3),
            speed=g("spiral", "speed", fallback=5e-3),
            slide_time=g("spiral", "slide_time", fallback=25.0),
            hold_time=g("spiral", "hold_time", fallback=2.0),
            mass=g("spiral", "mass", fallback=30.0),
            damping=g("spiral", "damping", fallback=3600.0),
            sensor=sensor)
    else:
        rep = run_hand_guiding(
            m, loop_net, ests, args.seed,
            feedback=cp.get("handguide", "feedback", fallback="net"),
            duration=g("handguide", "duration", fallback=60.0),
            mass=g("handguide", "mass", fallback=60.0),
            damping=g("handguide", "damping", fallback=600.0),
            sensor=sensor)
    return _finish(args, rep, args.kind)


def _cmd_report(args) -> int:
    cp = _cfg(args.config)
    ds = datagen.Dataset.read(args.data)
    sensor = _sensor_from(cp)
    ests = []
    seen = set()
    for path in args.model or []:
        label = Path(path).stem
        while label in seen:
            label += "'"
        seen.add(label)
        ests.append(NnEstimator(learn.load(path), label))
    if args.gmo:
        ests.append(_gmo_from(cp, load_reference_model(), sensor))
    if not ests:
        raise ModelError("report needs at least one --model (or --gmo)")
    rep = score_on_dataset(ds, ests, name="report",
                           settle=cp.getint("report", "settle", fallback=100))
    return _finish(args, rep, "report")


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="wrenchest",
        description="external-wrench estimation experiments")
    sub = ap.add_subparsers(dest="cmd", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="INI config file")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default="runs", help="artifact root")

    p = sub.add_parser("model", help="validate the robot model")
    p.add_argument("action", choices=["check"])
    common(p)
    p = sub.add_parser("identify", help="excite, fit, report parameters")
    common(p)
    p = sub.add_parser("gen", help="generate a dataset")
    p.add_argument("kind", choices=["fsds", "csds", "hgds"])
    common(p)
    p = sub.add_parser("train", help="train a base network")
    p.add_argument("--data", required=True, help="dataset csv")
    common(p)
    p = sub.add_parser("finetune", help="adapt a base network")
    p.add_argument("--model", required=True, help="base model file")
    p.add_argument("--data", required=True, help="dataset csv")
    common(p)
    p = sub.add_parser("run", help="run a scored experiment")
    p.add_argument("kind", choices=["free", "spiral", "handguide"])
    p.add_argument("--model", default=None, help="base model file")
    p.add_argument("--finetuned", default=None, help="fine-tuned model file")
    common(p)
    p = sub.add_parser("report", help="re-score a saved frame log")
    p.add_argument("--data", required=True, help="frame log csv")
    p.add_argument("--model", action="append", help="model file (repeatable)")
    p.add_argument("--gmo", action="store_true",
                   help="include the perturbed-model observer")
    common(p)

    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    handlers = {"model": _cmd_model, "identify": _cmd_identify,
                "gen": _cmd_gen, "train": _cmd_train,
                "finetune": _cmd_finetune, "run": _cmd_run,
                "report": _cmd_report}
    try:
        return handlers[args.cmd](args)
    except ModelError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
