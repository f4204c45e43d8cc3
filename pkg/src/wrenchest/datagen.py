"""Dataset families for wrench-estimator training, and their on-disk form.

Three collection procedures, all logged at 100 Hz through the sensor
pipeline with exact ground-truth wrench labels:

  FSDS  free-space waypoint motion with random injected pushes; motion
        and wrench are statistically independent.
  CSDS  contact cycles on a plane (engage, force-controlled hold with a
        wandering setpoint, slide, disengage).
  HGDS  guide-force process driving an admittance-compliant robot, so
        motion correlates strongly with the applied wrench.

Frame convention: row k holds the encoder-pipeline state at t_k, the
motor current for the torque commanded at t_k (held over the next tick),
and the true external wrench acting at t_k.
"""

import hashlib
import logging

import numpy as np

from .dyncore import NJ, ModelError, RobotModel, kernels, ik_solve, IkError
from .dyncore import matrix_from_rotvec
from . import control, simworld

log = logging.getLogger(__name__)

TAGS = ("FSDS", "CSDS", "HGDS", "TEST")
DT = 0.01
BLOCK = 1000                   # split granularity: 10 s of frames

PHASE_FREE, PHASE_HOLD, PHASE_SLIDE, PHASE_LIFT = 0, 1, 2, 3

# comfortable elbow-up tool-down region in front of the arm
DEFAULT_BOX = np.array([[0.34, 0.50], [-0.12, 0.12], [0.24, 0.40]])
_DOWN = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])
_Q_COMFORT = np.array([0.0, 0.63, -1.79, 0.0, 1.15, 0.0])

HEADER = ("t," + ",".join(f"q{i}" for i in range(1, 7)) + ","
          + ",".join(f"dq{i}" for i in range(1, 7)) + ","
          + ",".join(f"ddq{i}" for i in range(1, 7)) + ","
          + ",".join(f"i{i}" for i in range(1, 7))
          + ",fx,fy,fz,tx,ty,tz,contact")


class GenerationError(ModelError):
    """Configuration asks for something the generator cannot deliver."""


class FrameSample:
    """One logged 10 ms frame (view into a Dataset row)."""

    __slots__ = ("t", "q", "dq", "ddq", "current", "wrench", "contact")

    def __init__(self, t, q, dq, ddq, current, wrench, contact):
        self.t = t
        self.q = q
        self.dq = dq
        self.ddq = ddq
        self.current = current
        self.wrench = wrench
        self.contact = contact


class Dataset:
    """Column-array frame log with provenance (tag, seed, config digest)."""

    def __init__(self, tag, seed, digest, t, q, dq, ddq, current, wrench,
                 contact):
        if tag not in TAGS:
            raise ModelError(f"unknown dataset tag {tag!r}")
        self.tag = tag
        self.seed = int(seed)
        self.digest = str(digest)
        self.t = np.asarray(t, dtype=float)
        self.q = np.asarray(q, dtype=float)
        self.dq = np.asarray(dq, dtype=float)
        self.ddq = np.asarray(ddq, dtype=float)
        self.current = np.asarray(current, dtype=float)
        self.wrench = np.asarray(wrench, dtype=float)
        self.contact = np.asarray(contact, dtype=bool)
        self.validate()

    def validate(self):
        n = self.t.shape[0]
        for name in ("q", "dq", "ddq", "current", "wrench"):
            a = getattr(self, name)
            if a.shape != (n, 6):
                raise ModelError(
                    f"{name} shape {a.shape} does not match {n} frames")
            if not np.all(np.isfinite(a)):
                raise ModelError(f"{name} contains non-finite values")
        if self.contact.shape != (n,):
            raise ModelError("contact flag length mismatch")
        if n > 1:
            steps = np.diff(self.t)
            if np.any(steps <= 0):
                raise ModelError("timestamps must be strictly increasing")
            # gaps are fine (splits drop whole blocks) but frames must
            # stay on the 10 ms grid
            offgrid = np.abs(steps / DT - np.round(steps / DT))
            if offgrid.max() > 1e-6:
                raise ModelError("timestamps off the 10 ms grid")

    def __len__(self):
        return self.t.shape[0]

    def frame(self, i) -> FrameSample:
        return FrameSample(float(self.t[i]), self.q[i], self.dq[i],
                           self.ddq[i], self.current[i], self.wrench[i],
                           bool(self.contact[i]))

    def features(self) -> np.ndarray:
        """(N, 24) estimator input: q, dq, ddq, motor current."""
        return np.hstack([self.q, self.dq, self.ddq, self.current])

    def labels(self) -> np.ndarray:
        return self.wrench

    def subset(self, mask) -> "Dataset":
        return Dataset(self.tag, self.seed, self.digest,
                       self.t[mask], self.q[mask], self.dq[mask],
                       self.ddq[mask], self.current[mask], self.wrench[mask],
                       self.contact[mask])

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.tag == other.tag and self.seed == other.seed
                and self.digest == other.digest
                and all(np.array_equal(getattr(self, k), getattr(other, k))
                        for k in ("t", "q", "dq", "ddq", "current", "wrench",
                                  "contact")))

    # -- disk format: CSV with a fixed header, plus a plain-text sidecar.
    # Floats are written with repr() so a read-back is bit exact.

    def write(self, path):
        path = str(path)
        with open(path, "w") as fh:
            fh.write(HEADER + "\n")
            for i in range(len(self)):
                row = [repr(float(self.t[i]))]
                for block in (self.q, self.dq, self.ddq, self.current,
                              self.wrench):
                    row.extend(repr(float(x)) for x in block[i])
                row.append("1" if self.contact[i] else "0")
                fh.write(",".join(row) + "\n")
        with open(path + ".meta", "w") as fh:
            fh.write(f"tag: {self.tag}\nseed: {self.seed}\n"
                     f"digest: {self.digest}\nframes: {len(self)}\n")

    @classmethod
    def read(cls, path) -> "Dataset":
        path = str(path)
        with open(path) as fh:
            head = fh.readline().rstrip("\n")
            if head != HEADER:
                raise ModelError("unrecognized dataset header")
            rows = [[float(x) for x in line.rstrip("\n").split(",")]
                    for line in fh]
        rows = np.array(rows, dtype=float).reshape(len(rows), 32)
        meta = {}
        try:
            with open(path + ".meta") as fh:
                for line in fh:
                    k, _, v = line.partition(":")
                    meta[k.strip()] = v.strip()
        except FileNotFoundError:
            raise ModelError(f"missing sidecar {path}.meta") from None
        if int(meta["frames"]) != rows.shape[0]:
            raise ModelError("sidecar frame count disagrees with the file")
        return cls(meta["tag"], int(meta["seed"]), meta["digest"],
                   rows[:, 0], rows[:, 1:7], rows[:, 7:13], rows[:, 13:19],
                   rows[:, 19:25], rows[:, 25:31],
                   rows[:, 31] != 0.0)


def config_digest(**kw) -> str:
    """Short stable digest of generator settings."""
    canon = ";".join(f"{k}={kw[k]!r}" for k in sorted(kw))
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


# ---------------------------------------------------------------------------
# shared generation plumbing

class _Recorder:
    """Sensor-pipeline frame logger: true state in, dataset rows out."""

    def __init__(self, model: RobotModel, sensor: simworld.SensorConfig,
                 noise_seed):
        self.model = model
        self.sensor = sensor
        self.filter = simworld.StateFilter(sensor)
        self.rng = np.random.default_rng(noise_seed)
        self.rows = {k: [] for k in ("t", "q", "dq", "ddq", "cur", "w", "c")}

    def push(self, t, q_true, tau_motor, wrench, contact):
        qf, dqf, ddqf = self.filter.push(q_true)
        cur = simworld.synthesize_current(self.model, tau_motor, self.sensor,
                                          self.rng)
        r = self.rows
        r["t"].append(t)
        r["q"].append(qf)
        r["dq"].append(dqf)
        r["ddq"].append(ddqf)
        r["cur"].append(cur)
        r["w"].append(np.asarray(wrench, dtype=float).copy())
        r["c"].append(bool(contact))

    def dataset(self, tag, seed, digest) -> Dataset:
        r = self.rows
        return Dataset(tag, seed, digest, np.array(r["t"]), np.stack(r["q"]),
                       np.stack(r["dq"]), np.stack(r["ddq"]),
                       np.stack(r["cur"]), np.stack(r["w"]),
                       np.array(r["c"], dtype=bool))


class _ContactWatch:
    """Debounced contact-loss detector on the feedback normal force.

    Counts consecutive samples below threshold; a real separation sits
    at zero for as long as it lasts, while the commanded force floor is
    4 N, so 50 samples = 0.5 s is a clean trip point either way.
    """

    def __init__(self, threshold: float = 0.5, limit: int = 50):
        self.threshold = threshold
        self.limit = limit
        self.count = 0

    def push(self, f_normal: float) -> bool:
        self.count = self.count + 1 if f_normal < self.threshold else 0
        return self.count >= self.limit

    def reset(self):
        self.count = 0


def _pose(p, R=_DOWN):
    T = np.eye(4)
    T[:3, :3] = R
    T[:3, 3] = p
    return T


def _sample_pose(rng, box, tilt_max):
    p = rng.uniform(box[:, 0], box[:, 1])
    yaw = rng.uniform(-np.pi / 2, np.pi / 2)
    cy, sy = np.cos(yaw), np.sin(yaw)
    Rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    phi = rng.uniform(0.0, 2 * np.pi)
    ang = rng.uniform(0.0, tilt_max)
    tilt = matrix_from_rotvec(np.array([np.cos(phi), np.sin(phi), 0.0]) * ang)
    return _pose(p, tilt @ Rz @ _DOWN)


# ---------------------------------------------------------------------------
# FSDS: free-space waypoint motion, independent injected pushes

def gen_fsds(model: RobotModel, seed: int, n_waypoints: int = 80,
             box=None, injection: bool = True, sensor=None,
             v_frac: float = 0.35, tilt_max: float = 0.44,
             ik_budget: int = 25, tag: str = "FSDS") -> Dataset:
    """Random reachable poses chained by minimum-jerk joint moves.

    Peak joint speed per move is v_frac of the velocity limit, which
    keeps the 95th-percentile speeds comfortably under half the limit.
    A pose draw whose IK fails from the previous waypoint is resampled;
    running out of the per-waypoint budget means the box or tilt range
    is unreasonable for the arm, which is a configuration error.
    """
    box = DEFAULT_BOX if box is None else np.asarray(box, dtype=float)
    sensor = sensor or simworld.SensorConfig()
    digest = config_digest(kind="fsds", seed=seed, n_waypoints=n_waypoints,
                           box=box.tolist(), injection=injection,
                           v_frac=v_frac, tilt_max=tilt_max,
                           sensor=vars(sensor))
    rng = np.random.default_rng([seed, 0])

    try:
        q_home = ik_solve(model, _pose(box.mean(axis=1)), _Q_COMFORT,
                          restarts=0)
    except IkError:
        raise GenerationError("workspace box center is out of reach") from None
    v_peak = v_frac * model.dq_max

    paths = [control.QuinticPath(q_home, q_home, 1.0)]   # settle hold
    q_prev = q_home
    for _ in range(n_waypoints):
        for _attempt in range(ik_budget):
            try:
                q_next = ik_solve(model, _sample_pose(rng, box, tilt_max),
                                  q_prev, restarts=0)
                break
            except IkError:
                continue
        else:
            raise GenerationError(
                "IK resample budget exhausted; shrink the box or tilt range")
        T = control.quintic_duration(q_prev, q_next, v_peak)
        paths.append(control.QuinticPath(q_prev, q_next, max(T, 0.4)))
        q_prev = q_next

    total = float(sum(p.T for p in paths))
    inj = simworld.draw_injection([seed, 2], total) if injection else None

    ws = simworld.WorldState(model=model, q=q_home, dq=np.zeros(NJ),
                             injection=inj, seed=seed,
                             injection_tag="fsds" if injection else "none")
    trk = simworld.ServoTracker(model=model)
    rec = _Recorder(model, sensor, noise_seed=[seed, 1])

    t = 0.0
    w_now = ws.external_wrench()
    for path in paths:
        for k in range(int(np.ceil(path.T / DT - 1e-9))):
            q_ref, dq_ref = path.sample(k * DT)
            q_pre = ws.q
            _, w_next, tau = trk.step(ws, q_ref, dq_ref)
            rec.push(t, q_pre, tau, w_now, False)
            t += DT
            w_now = w_next
    return rec.dataset(tag, seed, digest)


# ---------------------------------------------------------------------------
# CSDS: force-controlled contact cycles on a plane

def gen_csds(model: RobotModel, seed: int, n_points: int = 6, plane=None,
             hold: float = 8.0, slide_speed: float = 6e-3,
             approach_speed: float = 4e-3, force_span=(4.0, 30.0),
             resample: float = 0.2, f_lag: float = 0.5, patch: float = 0.05,
             sensor=None, tag: str = "CSDS") -> Dataset:
    """Engage, hold under a wandering force setpoint, slide, disengage.

    The normal axis runs an admittance loop on the ground-truth wrench,
    standing in for the F/T sensor the real collection rig carries.  The
    raw setpoint (resampled every 0.2 s) is shaped by a first-order lag
    so the commanded reference stays within the force loop's bandwidth.
    Contact loss for 0.5 s aborts the segment, lifts off, re-engages at
    the segment start and logs a retry.
    """
    plane = plane if plane is not None else simworld.ContactPlane(
        point=np.array([0.42, 0.0, 0.18]), normal=np.array([0.0, 0.0, 1.0]))
    sensor = sensor or simworld.SensorConfig()
    digest = config_digest(kind="csds", seed=seed, n_points=n_points,
                           plane=plane.row().tolist(), hold=hold,
                           slide_speed=slide_speed,
                           approach_speed=approach_speed,
                           force_span=tuple(force_span), resample=resample,
                           f_lag=f_lag, patch=patch, sensor=vars(sensor))
    rng = np.random.default_rng([seed, 0])

    # contact points on the patch, spaced so slides dwell at cruise speed
    lo = plane.point[:2] - patch
    hi = plane.point[:2] + patch
    pts_xy = [rng.uniform(lo, hi)]
    for _ in range(200):
        if len(pts_xy) == n_points:
            break
        cand = rng.uniform(lo, hi)
        if np.linalg.norm(cand - pts_xy[-1]) >= 0.03:
            pts_xy.append(cand)
    else:
        raise GenerationError("could not space contact points; patch too small")
    pts_xy = np.array(pts_xy)
    z_surf = float(plane.point[2])
    hover = 3e-3

    try:
        q0 = ik_solve(model, _pose([*pts_xy[0], z_surf + hover]), _Q_COMFORT,
                      restarts=0)
    except IkError:
        raise GenerationError("contact patch is out of reach") from None
    ws = simworld.WorldState(model=model, q=q0, dq=np.zeros(NJ),
                             planes=[plane], seed=seed)
    trk = simworld.ServoTracker(model=model, ki_scale=0.0)
    rec = _Recorder(model, sensor, noise_seed=[seed, 1])
    watch = _ContactWatch()
    # the plant the force loop sees is the servo compliance in series
    # with the surface, about 2.4e4 N/m, far softer than the surface
    # alone; damping is sized against that for a ~13 rad/s loop
    cfg = control.AdmittanceConfig(
        mass=np.full(6, 30.0), damping=np.full(6, 1800.0),
        active=np.array([False, False, True, False, False, False]))

    st = {"t": 0.0, "w": ws.external_wrench(), "q_cmd": q0.copy(),
          "shaped": 5.0, "raw": 5.0, "fticks": 0, "loop": None}
    stats = {"f_ref": [], "phase": [], "sdir": []}
    decay = float(np.exp(-DT / f_lag))
    n_resample = max(1, int(round(resample / DT)))

    def advance(q_cmd, dq_cmd, phase, f_ref=np.nan, sdir=(np.nan, np.nan)):
        q_pre = ws.q
        contact = ws.contact_depth() > 0.0
        _, w_next, tau = trk.step(ws, q_cmd, dq_cmd)
        rec.push(st["t"], q_pre, tau, st["w"], contact)
        stats["f_ref"].append(f_ref)
        stats["phase"].append(phase)
        stats["sdir"].append(sdir)
        st["t"] += DT
        st["w"] = w_next
        st["q_cmd"] = q_cmd

    def track_to(target_p, speed, phase):
        """Position-mode straight-line Cartesian move (down-facing tool)."""
        path = control.LinePath(ws_pos_cmd(), np.asarray(target_p, float),
                                speed)
        for k in range(int(np.ceil(path.T / DT - 1e-9))):
            target = _pose(path.sample((k + 1) * DT))
            try:
                q_cmd = ik_solve(model, target, st["q_cmd"], restarts=0)
            except IkError:
                raise GenerationError(
                    "IK failed on a transit move; contact patch out of reach")
            dq_cmd = (q_cmd - st["q_cmd"]) / DT
            advance(q_cmd, dq_cmd, phase)

    def ws_pos_cmd():
        return kernels.fk(model.dh, st["q_cmd"])[:3, 3].copy()

    def engage(xy):
        """Descend until the wrench feedback sees contact, then go compliant."""
        track_to([*xy, z_surf + hover], 10e-3, PHASE_FREE)
        z = z_surf + hover
        for _ in range(int((hover + 2e-3) / (approach_speed * DT))):
            if st["w"][2] > 1.0:
                break
            z -= approach_speed * DT
            try:
                q_cmd = ik_solve(model, _pose([*xy, z]), st["q_cmd"],
                                 restarts=0)
            except IkError:
                raise GenerationError("IK failed during engage descent")
            advance(q_cmd, (q_cmd - st["q_cmd"]) / DT, PHASE_FREE)
        else:
            raise GenerationError(
                "no contact found below the expected surface height")
        cfg.active[2] = True
        loop = control.AdmittanceLoop(model, cfg, anchor=_pose([*xy, z]),
                                      q_start=st["q_cmd"])
        loop.v[2] = -approach_speed    # carry the descent rate, no jump
        st["loop"] = loop
        st["anchor_xy"] = np.asarray(xy, dtype=float)
        # start the setpoint at the force we actually have, and give the
        # takeover one resample period before the reference starts moving
        st["shaped"] = st["raw"] = float(np.clip(st["w"][2], *force_span))
        st["fticks"] = 1
        watch.reset()

    def shape_setpoint():
        if st["fticks"] % n_resample == 0:
            st["raw"] = rng.uniform(*force_span)
        st["fticks"] += 1
        st["shaped"] = st["raw"] + (st["shaped"] - st["raw"]) * decay
        cfg.f_desired[2] = st["shaped"]
        return st["shaped"]

    def force_tick(ov_xy, phase, sdir=(np.nan, np.nan)):
        """One admittance tick; returns False when contact was lost."""
        f_ref = shape_setpoint()
        if watch.push(st["w"][2]):
            return False
        ov = np.array([ov_xy[0] - st["anchor_xy"][0],
                       ov_xy[1] - st["anchor_xy"][1], 0.0])
        q_cmd, dq_cmd = st["loop"].step(st["w"], overlay=ov)
        advance(q_cmd, dq_cmd, phase, f_ref=f_ref, sdir=sdir)
        return True

    def liftoff():
        cfg.active[2] = False
        base = ws_pos_cmd()     # last commanded pose, overlay included
        for k in range(int(np.ceil(8e-3 / (approach_speed * DT)))):
            ov = np.array([0.0, 0.0, min((k + 1) * approach_speed * DT,
                                         8e-3)])
            T = _pose(base + ov)
            try:
                q_cmd = ik_solve(model, T, st["q_cmd"], restarts=0)
            except IkError:
                raise GenerationError("IK failed during liftoff")
            advance(q_cmd, (q_cmd - st["q_cmd"]) / DT, PHASE_LIFT)
        st["loop"] = None

    segments = [("hold", pts_xy[0], pts_xy[0])]
    for i in range(1, n_points):
        segments.append(("slide", pts_xy[i - 1], pts_xy[i]))
        segments.append(("hold", pts_xy[i], pts_xy[i]))

    retries = 0
    engage(pts_xy[0])
    si = 0
    while si < len(segments):
        kind, a, b = segments[si]
        ok = True
        if kind == "hold":
            for _ in range(int(round(hold / DT))):
                if not force_tick(a, PHASE_HOLD):
                    ok = False
                    break
        else:
            path = control.TrapezoidPath(np.append(a, 0.0), np.append(b, 0.0),
                                         slide_speed)
            d = b - a
            sdir = tuple(d / np.linalg.norm(d))
            for k in range(int(np.ceil(path.T / DT - 1e-9))):
                if not force_tick(path.sample((k + 1) * DT)[:2], PHASE_SLIDE,
                                  sdir):
                    ok = False
                    break
        if ok:
            si += 1
            continue
        retries += 1
        log.warning("contact lost during %s #%d at t=%.2f s; re-engaging "
                    "(retry %d)", kind, si, st["t"], retries)
        if retries > n_points:
            raise GenerationError(
                "contact keeps dropping; check plane location and gains")
        liftoff()
        engage(a)

    liftoff()
    ds = rec.dataset(tag, seed, digest)
    phases = np.array(stats["phase"], dtype=int)
    ds.gen_stats = {
        "f_ref": np.array(stats["f_ref"], dtype=float),
        "phase": phases,
        "slide_dir": np.array(stats["sdir"], dtype=float),
        "duty": float(np.mean((phases == PHASE_HOLD)
                              | (phases == PHASE_SLIDE))),
        "retries": retries,
    }
    return ds


# ---------------------------------------------------------------------------
# HGDS: hand-guiding, the robot yields to the measured wrench

def gen_hgds(model: RobotModel, seed: int, duration: float = 120.0,
             box=None, sensor=None, mass: float = 60.0,
             damping: float = 600.0, margin: float = 0.02,
             recover_gain: float = 200.0, recover_cap: float = 10.0,
             tag: str = "HGDS") -> Dataset:
    """Slow guide-force process pulling an admittance-compliant arm around.

    The injected wrench stands in for a person's hand, so its band sits
    at 0.05 to 0.5 Hz.  Near the workspace edge the guide force pauses
    (the "hand" lets go) and a weak virtual spring walks the arm back
    toward the box center; both events are logged.  Guide pauses mean
    the recorded wrench is exactly zero while the arm still moves, which
    is the honest label for those frames.
    """
    box = DEFAULT_BOX if box is None else np.asarray(box, dtype=float)
    sensor = sensor or simworld.SensorConfig()
    digest = config_digest(kind="hgds", seed=seed, duration=duration,
                           box=box.tolist(), mass=mass, damping=damping,
                           margin=margin, recover_gain=recover_gain,
                           recover_cap=recover_cap, sensor=vars(sensor))
    ft_rng = np.random.default_rng([seed, 3])

    if np.any(box[:, 1] - box[:, 0] <= 4 * margin):
        raise ModelError("box too small for the pause hysteresis band")
    center = box.mean(axis=1)
    try:
        q0 = ik_solve(model, _pose(center), _Q_COMFORT, restarts=0)
    except IkError:
        raise GenerationError("workspace box center is out of reach") from None
    inj = simworld.draw_injection([seed, 2], duration, force_peak=(5.0, 20.0),
                                  torque_peak=(0.1, 0.6), band=(0.05, 0.5),
                                  on_span=(6.0, 14.0), off_span=(2.0, 5.0),
                                  ramp=1.2)
    ws = simworld.WorldState(model=model, q=q0, dq=np.zeros(NJ),
                             injection=inj, seed=seed, injection_tag="hgds")
    trk = simworld.ServoTracker(model=model, ki_scale=0.0)
    rec = _Recorder(model, sensor, noise_seed=[seed, 1])
    cfg = control.AdmittanceConfig(
        mass=np.full(6, mass), damping=np.full(6, damping),
        active=np.array([True, True, True, False, False, False]))
    loop = control.AdmittanceLoop(model, cfg, anchor=_pose(center),
                                  q_start=q0)

    lo, hi = box[:, 0], box[:, 1]
    paused = False
    pauses = 0
    paused_log = []
    t = 0.0
    for _ in range(int(round(duration / DT))):
        pos = kernels.fk(model.dh, ws.q)[:3, 3]
        if not paused and (np.any(pos < lo + margin)
                           or np.any(pos > hi - margin)):
            paused = True
            pauses += 1
            log.info("workspace edge at t=%.2f s; guide force paused", t)
        elif paused and np.all(pos > lo + 2 * margin) \
                and np.all(pos < hi - 2 * margin):
            paused = False
        ws.injection = None if paused else inj
        w_now = ws.external_wrench()

        u = simworld.measure_wrench(w_now, sensor, ft_rng)
        if paused:
            u[:3] += np.clip(recover_gain * (center - pos),
                             -recover_cap, recover_cap)
        q_cmd, dq_cmd = loop.step(u)

        q_pre = ws.q
        _, _, tau = trk.step(ws, q_cmd, dq_cmd)
        rec.push(t, q_pre, tau, w_now, False)
        paused_log.append(paused)
        t += DT

    ds = rec.dataset(tag, seed, digest)
    ds.gen_stats = {"paused": np.array(paused_log, dtype=bool),
                    "pauses": pauses, "ik_faults": loop.ik_faults}
    return ds


# ---------------------------------------------------------------------------
# splitting

def split(ds: Dataset, fractions=(0.8, 0.1, 0.1), seed: int = 0,
          block: int = BLOCK):
    """Partition into train/val/test by contiguous time blocks.

    Whole 10 s blocks go to one side or the other, so the sensor
    pipeline's 0.1 s memory cannot leak a frame's neighborhood across
    the split.  Frames keep their original order inside each part.
    """
    fr = np.asarray(fractions, dtype=float)
    if fr.shape != (3,) or np.any(fr < 0) or abs(fr.sum() - 1.0) > 1e-9:
        raise ModelError("fractions must be 3 nonnegative numbers summing to 1")
    n = len(ds)
    n_blocks = int(np.ceil(n / block))
    if n_blocks < 3:
        raise ModelError(
            f"need at least 3 blocks of {block} frames to split, have {n_blocks}")
    counts = [int(round(fr[0] * n_blocks)), int(round(fr[1] * n_blocks)), 0]
    counts[1] = min(counts[1], n_blocks - counts[0])
    counts[2] = n_blocks - counts[0] - counts[1]
    for i in range(3):
        if fr[i] > 0 and counts[i] == 0:
            counts[int(np.argmax(counts))] -= 1
            counts[i] += 1
    if min(counts) < 0:
        raise ModelError("fractions round to an impossible block partition")

    perm = np.random.default_rng(seed).permutation(n_blocks)
    out = []
    start = 0
    for role, c in zip(("train", "val", "test"), counts):
        blocks = np.sort(perm[start:start + c])
        start += c
        mask = np.zeros(n, dtype=bool)
        for b in blocks:
            mask[b * block:min((b + 1) * block, n)] = True
        part = ds.subset(mask)
        part.digest = config_digest(kind="split", parent=ds.digest,
                                    seed=seed, fractions=tuple(fr.tolist()),
                                    role=role)
        out.append(part)
    return tuple(out)
