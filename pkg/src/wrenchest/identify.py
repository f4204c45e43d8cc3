"""Dynamic parameter identification for the reference arm.

Joint torque is linear in the 78-vector of standard parameters: per link
(m, m*c, inertia about the frame origin) and per joint the identifiable
friction triple (coulomb, stiction, viscous) with the signum form.  The
regressor is assembled column-by-column from unit-parameter runs of the
barycentric Newton-Euler kernel; a numerical QR sweep over random states
yields the base (identifiable) parameter combinations; identification is
an SVD least squares on the base columns, on torque or current level.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .dyncore import NJ, ModelError, RobotModel, friction_mode_id, kernels

N_RIGID = 10 * NJ
N_FRIC = 3 * NJ
N_PARAMS = N_RIGID + N_FRIC


class ExcitationError(ModelError):
    """No admissible excitation trajectory found within the retry budget."""


def model_params(model: RobotModel) -> np.ndarray:
    """The model's true parameter vector in regressor ordering."""
    pi = np.empty(N_PARAMS)
    pi[:N_RIGID] = model.barycentric_params().ravel()
    pi[N_RIGID:] = model.friction[:, :3].ravel()
    return pi


def build_regressor(model: RobotModel, q, dq, ddq) -> np.ndarray:
    """Regressor Y(q, dq, ddq) with Y pi = tau, shape (NJ, N_PARAMS)."""
    return stack_regressor(model, [q], [dq], [ddq])


def stack_regressor(model: RobotModel, Q, DQ, DDQ) -> np.ndarray:
    """Row-stacked regressor over a batch of states, shape (N*NJ, N_PARAMS)."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    DQ = np.atleast_2d(np.asarray(DQ, dtype=float))
    DDQ = np.atleast_2d(np.asarray(DDQ, dtype=float))
    return kernels.regressor_stack(model.dh, model.gravity,
                                   np.ascontiguousarray(model.friction[:, 3]),
                                   Q, DQ, DDQ)


@dataclass
class BaseReduction:
    """Numerical base-parameter map pi_base = pi[ind] + Kd @ pi[dep]."""
    ind: np.ndarray          # indices of independent columns
    dep: np.ndarray          # indices of the dependent remainder
    Kd: np.ndarray           # (len(ind), len(dep)) regrouping coefficients
    null_dim: int            # structurally unidentifiable directions

    @property
    def n_base(self) -> int:
        return len(self.ind)

    def base_params(self, pi_full: np.ndarray) -> np.ndarray:
        return pi_full[self.ind] + self.Kd @ pi_full[self.dep]

    def base_columns(self, W: np.ndarray) -> np.ndarray:
        return W[:, self.ind]

    def base_map(self) -> np.ndarray:
        """Dense (n_base, N_PARAMS) matrix A with pi_base = A pi."""
        A = np.zeros((self.n_base, N_PARAMS))
        A[np.arange(self.n_base), self.ind] = 1.0
        A[:, self.dep] = self.Kd
        return A


def base_reduction(model: RobotModel, n_states: int = 160, seed: int = 0,
                   rtol: float = 1e-8) -> BaseReduction:
    """Identify base parameter combinations from a random-state QR sweep."""
    rng = np.random.default_rng(seed)
    Q = rng.uniform(model.q_min, model.q_max, size=(n_states, NJ))
    DQ = rng.uniform(-model.dq_max, model.dq_max, size=(n_states, NJ))
    DDQ = rng.uniform(-10, 10, size=(n_states, NJ))
    W = stack_regressor(model, Q, DQ, DDQ)
    # scale columns so rank detection is unit-independent; structurally
    # silent columns (torque-free parameters, norm at roundoff level) must
    # not get amplified into fake pivots
    scale = np.linalg.norm(W, axis=0)
    scale[scale < 1e-10 * scale.max()] = 1.0
    R, piv = scipy.linalg.qr(W / scale, mode="r", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > rtol * diag[0]))
    ind = np.sort(piv[:rank])
    dep = np.sort(piv[rank:])
    # dependency coefficients in the original (unscaled) units
    Wi = W[:, ind]
    Wd = W[:, dep]
    Kd, *_ = np.linalg.lstsq(Wi, Wd, rcond=None)
    # structural null space exists iff some dependent column is not exactly
    # representable; with exact rank detection the residual is roundoff
    return BaseReduction(ind=ind, dep=dep, Kd=Kd, null_dim=N_PARAMS - rank)


def nullspace_vector(model: RobotModel, reduction: BaseReduction, seed: int = 0) -> np.ndarray:
    """A unit vector nu with Y(q,dq,ddq) nu = 0 for all states."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=len(reduction.dep))
    nu = np.zeros(N_PARAMS)
    nu[reduction.dep] = x
    nu[reduction.ind] = -reduction.Kd @ x
    return nu / np.linalg.norm(nu)


@dataclass
class ExcitationTrajectory:
    """Finite Fourier series joint trajectory, periodic in duration = 1/base_freq."""
    q0: np.ndarray               # (NJ,) offsets
    a: np.ndarray                # (NJ, H) sine coefficients
    b: np.ndarray                # (NJ, H) cosine coefficients
    base_freq: float
    rate: float = 100.0
    cond: float = field(default=np.nan)

    @property
    def duration(self) -> float:
        return 1.0 / self.base_freq

    def sample(self, t) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        H = self.a.shape[1]
        k = np.arange(1, H + 1)
        wk = 2 * np.pi * self.base_freq * k
        ph = np.outer(t, wk)                      # (T, H)
        s, c = np.sin(ph), np.cos(ph)
        q = self.q0 + s @ self.a.T + c @ self.b.T
        dq = (c * wk) @ self.a.T - (s * wk) @ self.b.T
        ddq = -(s * wk ** 2) @ self.a.T - (c * wk ** 2) @ self.b.T
        return q, dq, ddq

    def grid(self) -> np.ndarray:
        n = int(round(self.duration * self.rate))
        return np.arange(n) / self.rate


def generate_excitation(model: RobotModel, reduction: BaseReduction,
                        seed: int = 0, harmonics: int = 5, base_freq: float = 0.1,
                        rate: float = 100.0, cond_bound: float = 300.0,
                        margin: float = 0.85, max_tries: int = 60) -> ExcitationTrajectory:
    """Draw Fourier excitations until limits and conditioning are acceptable.

    Conditioning is measured on the column-normalized base-parameter
    regressor stacked over one period at the sample rate.
    """
    if base_freq * harmonics >= 0.4 * (rate / 2):
        raise ExcitationError("harmonic content too close to the sample Nyquist")
    rng = np.random.default_rng(seed)
    mid = 0.5 * (model.q_min + model.q_max)
    span = 0.5 * (model.q_max - model.q_min)
    best = None
    best_cond = np.inf
    for _ in range(max_tries):
        a = rng.normal(size=(NJ, harmonics)) / np.arange(1, harmonics + 1)
        b = rng.normal(size=(NJ, harmonics)) / np.arange(1, harmonics + 1)
        traj = ExcitationTrajectory(q0=mid.copy(), a=a, b=b, base_freq=base_freq, rate=rate)
        tt = np.linspace(0.0, traj.duration, 2000, endpoint=False)
        q, dq, _ = traj.sample(tt)
        # deterministic per-joint shrink until limits hold with margin
        for i in range(NJ):
            amp = np.max(np.abs(q[:, i] - mid[i]))
            vel = np.max(np.abs(dq[:, i]))
            f = min(margin * span[i] / amp if amp > 0 else np.inf,
                    margin * model.dq_max[i] / vel if vel > 0 else np.inf, 1.0)
            traj.a[i] *= f
            traj.b[i] *= f
        # start the period from rest-ish state is not required; recentre offset
        # so the sampled mean sits mid-range
        q, dq, _ = traj.sample(tt)
        traj.q0 += mid - q.mean(axis=0)
        Q, DQ, DDQ = traj.sample(traj.grid())
        W = stack_regressor(model, Q, DQ, DDQ)
        B = reduction.base_columns(W)
        nrm = np.linalg.norm(B, axis=0)
        nrm[nrm == 0] = 1.0
        c = np.linalg.cond(B / nrm)
        if c < best_cond:
            best, best_cond = traj, c
        if c < cond_bound:
            traj.cond = c
            return traj
    raise ExcitationError(
        f"no trajectory met cond < {cond_bound} in {max_tries} tries (best {best_cond:.1f})")


@dataclass
class IdentifyResult:
    pi_base: np.ndarray
    reduction: BaseReduction
    residual_rms: np.ndarray     # per joint, measurement units
    signal_rms: np.ndarray       # per joint
    cond: float                  # column-normalized base-regressor condition
    rank: int

    def predict(self, W: np.ndarray) -> np.ndarray:
        return self.reduction.base_columns(W) @ self.pi_base


def identify_parameters(W: np.ndarray, meas: np.ndarray,
                        reduction: BaseReduction) -> IdentifyResult:
    """Min-norm least squares fit of base parameters to stacked measurements.

    W is the stacked full regressor (N*NJ, N_PARAMS); meas the matching
    torque (or current, with W row-scaled accordingly) stack.
    """
    B = reduction.base_columns(W)
    y = np.asarray(meas, dtype=float).ravel()
    if B.shape[0] != y.shape[0]:
        raise ModelError("regressor stack and measurement length differ")
    nrm = np.linalg.norm(B, axis=0)
    nrm[nrm == 0] = 1.0
    cond = np.linalg.cond(B / nrm)
    # solve in column-normalized space; raw column norms span ~9 decades
    # (first-link gravity terms vs wrist inertia products) and would trip
    # the svd cutoff
    z, _, rank, _ = np.linalg.lstsq(B / nrm, y, rcond=None)
    pi = z / nrm
    res = (y - B @ pi).reshape(-1, NJ)
    sig = y.reshape(-1, NJ)
    return IdentifyResult(
        pi_base=pi, reduction=reduction,
        residual_rms=np.sqrt(np.mean(res ** 2, axis=0)),
        signal_rms=np.sqrt(np.mean(sig ** 2, axis=0)),
        cond=cond, rank=int(rank))


def current_stack(model: RobotModel, W: np.ndarray) -> np.ndarray:
    """Row-scale a torque regressor stack to predict motor currents."""
    scale = np.tile(1.0 / model.motor_k, W.shape[0] // NJ)
    return W * scale[:, None]


def synthesize_currents(model: RobotModel, traj: ExcitationTrajectory,
                        noise_rel: float = 0.0, seed: int = 0,
                        friction: str = "signum"):
    """Kinematic-trajectory current synthesis for identification runs.

    Returns (states (Q, DQ, DDQ), currents (N, NJ)).  Relative noise is
    scaled by the per-joint current RMS.
    """
    Q, DQ, DDQ = traj.sample(traj.grid())
    n = Q.shape[0]
    tau = np.empty((n, NJ))
    mode = friction_mode_id(friction)
    for k in range(n):
        tau[k] = kernels.rnea(model.dh, model.mass, model.com, model.inertia,
                              model.gravity, Q[k], DQ[k], DDQ[k])
        if mode:
            tau[k] += kernels.friction_torque(model.friction, DQ[k], mode == 2)
    cur = tau / model.motor_k
    if noise_rel > 0:
        rng = np.random.default_rng(seed)
        sigma = noise_rel * np.sqrt(np.mean(cur ** 2, axis=0))
        cur = cur + rng.normal(size=cur.shape) * sigma
    return (Q, DQ, DDQ), cur


def reconstruct_full_params(reduction: BaseReduction, pi_base: np.ndarray,
                            pi_prior: np.ndarray) -> np.ndarray:
    """Full 78-vector nearest to the prior that realizes the base estimate."""
    A = reduction.base_map()
    d = pi_base - A @ pi_prior
    corr = A.T @ np.linalg.solve(A @ A.T, d)
    return pi_prior + corr


def params_to_model(prior: RobotModel, pi_full: np.ndarray,
                    eig_floor: float = 1e-6) -> RobotModel:
    """Rebuild a model file view of a full parameter vector.

    COM inertia tensors are symmetrized and eigenvalue-floored so the
    result stays loadable; masses come out of the first parameter slot.
    """
    m = prior.copy()
    rig = pi_full[:N_RIGID].reshape(NJ, 10)
    for i in range(NJ):
        mass = rig[i, 0]
        if mass <= 0:
            mass = prior.mass[i]
        com = rig[i, 1:4] / mass
        Io = np.array([[rig[i, 4], rig[i, 5], rig[i, 6]],
                       [rig[i, 5], rig[i, 7], rig[i, 8]],
                       [rig[i, 6], rig[i, 8], rig[i, 9]]])
        Ic = Io - mass * (np.dot(com, com) * np.eye(3) - np.outer(com, com))
        Ic = 0.5 * (Ic + Ic.T)
        ev, V = np.linalg.eigh(Ic)
        Ic = (V * np.maximum(ev, eig_floor)) @ V.T
        Ic = 0.5 * (Ic + Ic.T)   # recomposition roundoff breaks bitwise symmetry
        m.mass[i] = mass
        m.com[i] = com
        m.inertia[i] = Ic
    fr = pi_full[N_RIGID:].reshape(NJ, 3)
    m.friction[:, 0] = np.maximum(fr[:, 0], 0.0)
    m.friction[:, 1] = np.maximum(fr[:, 1], 0.0)
    m.friction[:, 2] = np.maximum(fr[:, 2], 0.0)
    # keep the smooth standstill behaviour consistent with the refit level
    m.friction[:, 4] = 2.0 * m.friction[:, 0]
    m.name = prior.name + "_identified"
    return m


@dataclass
class SigmoidFitResult:
    phi1: float
    phi2: float
    phi3: float
    c_stiction: float
    c_viscous: float
    v_stribeck: float
    rms: float

    def predict(self, v) -> np.ndarray:
        return _sigmoid_curve(np.asarray(v, dtype=float),
                              self.phi1, self.phi2, self.phi3,
                              self.c_stiction, self.c_viscous, self.v_stribeck)


def _sig(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _sigmoid_curve(v, phi1, phi2, phi3, cs, cv, vs):
    r = v * v / vs
    coul = phi1 * _sig(phi2 * (v + phi3)) - phi1 * _sig(np.full_like(v, phi2 * phi3))
    return coul + cs * np.exp(-r * r) * np.sign(v) + cv * v


def fit_sigmoid_friction(v, tau, max_iter: int = 120) -> SigmoidFitResult:
    """Gauss-Newton fit of the smooth friction curve to velocity/torque pairs.

    Nonlinear parameters (phi2, phi3, v_s) are updated with a damped
    Gauss-Newton step and backtracking; (phi1, C_S, C_V) are re-solved
    linearly at every iterate (variable projection).  Multi-started over
    a small slope/stribeck grid: for large v_s the stribeck basis turns
    into a second signum and the problem has a flat degenerate valley.
    """
    v = np.asarray(v, dtype=float).ravel()
    tau = np.asarray(tau, dtype=float).ravel()
    if v.size < 12:
        raise ModelError("need at least a dozen samples to fit the friction curve")
    vs_cap = 2.0 * np.max(np.abs(v)) ** 2

    def linear_solve(theta):
        phi2, phi3, vs = theta
        r = v * v / vs
        b1 = _sig(phi2 * (v + phi3)) - _sig(np.full_like(v, phi2 * phi3))
        b2 = np.exp(-r * r) * np.sign(v)
        B = np.column_stack([b1, b2, v])
        coef, *_ = np.linalg.lstsq(B, tau, rcond=None)
        return coef, tau - B @ coef

    def gn(theta):
        theta = theta.copy()
        coef, res = linear_solve(theta)
        cost = res @ res
        for _ in range(max_iter):
            J = np.empty((v.size, 3))
            h = 1e-6 * np.maximum(np.abs(theta), 1e-2)
            for k in range(3):
                tp = theta.copy()
                tp[k] += h[k]
                _, rp = linear_solve(tp)
                J[:, k] = (rp - res) / h[k]
            g = J.T @ res
            H = J.T @ J + 1e-12 * np.eye(3)
            step = -np.linalg.solve(H, g)
            alpha = 1.0
            improved = False
            for _ in range(30):
                cand = theta + alpha * step
                cand[0] = min(max(cand[0], 1e-3), 1e4)   # slope positive, finite
                cand[2] = min(max(cand[2], 1e-6), vs_cap)
                ccoef, cres = linear_solve(cand)
                ccost = cres @ cres
                if ccost < cost:
                    gain = cost - ccost
                    theta, coef, res, cost = cand, ccoef, cres, ccost
                    improved = True
                    break
                alpha *= 0.5
            if not improved or gain < 1e-12 * (cost + 1e-300):
                break
        return theta, coef, cost

    vmax = np.max(np.abs(v))
    best = None
    for phi2_0 in (30.0, 80.0, 200.0):
        for vs_0 in (0.2 * vmax ** 2, 0.05 * vmax ** 2, 0.01 * vmax ** 2):
            theta, coef, cost = gn(np.array([phi2_0, 0.0, vs_0]))
            if best is None or cost < best[2]:
                best = (theta, coef, cost)
            if best[2] < (1e-10 * np.sqrt(np.mean(tau ** 2))) ** 2 * v.size:
                break
        else:
            continue
        break
    theta, coef, cost = best
    phi1, cs, cv = coef
    return SigmoidFitResult(phi1=phi1, phi2=theta[0], phi3=theta[1],
                            c_stiction=cs, c_viscous=cv, v_stribeck=theta[2],
                            rms=float(np.sqrt(cost / v.size)))
