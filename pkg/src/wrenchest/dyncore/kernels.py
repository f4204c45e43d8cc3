"""Numba kernels for serial-chain kinematics and dynamics.

All kernels operate on plain float64 arrays unpacked from RobotModel
(see RobotModel.arrays()) so they stay nopython-compatible.  Joint
frames follow the modified (proximal) DH convention: the transform
from frame i-1 to frame i is Rx(alpha) Dx(a) Rz(theta) Dz(d), with
alpha and a indexed by the previous link.  Joint i rotates about the
z axis of frame i.
"""

import numpy as np
from numba import njit

NJ = 6  # chain length is fixed; kernels are written against it


@njit(cache=True)
def _link_transform(alpha: float, a: float, d: float, theta: float) -> np.ndarray:
    ca, sa = np.cos(alpha), np.sin(alpha)
    ct, st = np.cos(theta), np.sin(theta)
    T = np.empty((4, 4))
    T[0, 0], T[0, 1], T[0, 2], T[0, 3] = ct, -st, 0.0, a
    T[1, 0], T[1, 1], T[1, 2], T[1, 3] = st * ca, ct * ca, -sa, -d * sa
    T[2, 0], T[2, 1], T[2, 2], T[2, 3] = st * sa, ct * sa, ca, d * ca
    T[3, 0], T[3, 1], T[3, 2], T[3, 3] = 0.0, 0.0, 0.0, 1.0
    return T


@njit(cache=True)
def frame_chain(dh: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Stacked base-frame poses T_0^i for i = 0..NJ (identity first)."""
    out = np.empty((NJ + 1, 4, 4))
    out[0] = np.eye(4)
    for i in range(NJ):
        A = _link_transform(dh[i, 0], dh[i, 1], dh[i, 2], q[i] + dh[i, 3])
        out[i + 1] = out[i] @ A
    return out


@njit(cache=True)
def fk(dh: np.ndarray, q: np.ndarray) -> np.ndarray:
    T = np.eye(4)
    for i in range(NJ):
        T = T @ _link_transform(dh[i, 0], dh[i, 1], dh[i, 2], q[i] + dh[i, 3])
    return T


@njit(cache=True)
def jacobian(dh: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Geometric Jacobian in the base frame, rows 0:3 linear, 3:6 angular."""
    frames = frame_chain(dh, q)
    pe = frames[NJ, :3, 3]
    J = np.empty((6, NJ))
    for i in range(NJ):
        z = frames[i + 1, :3, 2]
        p = frames[i + 1, :3, 3]
        r0, r1, r2 = pe[0] - p[0], pe[1] - p[1], pe[2] - p[2]
        J[0, i] = z[1] * r2 - z[2] * r1
        J[1, i] = z[2] * r0 - z[0] * r2
        J[2, i] = z[0] * r1 - z[1] * r0
        J[3, i] = z[0]
        J[4, i] = z[1]
        J[5, i] = z[2]
    return J


@njit(cache=True)
def _cross(a, b, out):
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]


@njit(cache=True)
def _local_frames(dh, q, R, P):
    # R[i] maps frame-i vectors into frame i-1; P[i] is frame i's origin
    for i in range(NJ):
        ca, sa = np.cos(dh[i, 0]), np.sin(dh[i, 0])
        th = q[i] + dh[i, 3]
        ct, st = np.cos(th), np.sin(th)
        R[i, 0, 0], R[i, 0, 1], R[i, 0, 2] = ct, -st, 0.0
        R[i, 1, 0], R[i, 1, 1], R[i, 1, 2] = st * ca, ct * ca, -sa
        R[i, 2, 0], R[i, 2, 1], R[i, 2, 2] = st * sa, ct * sa, ca
        P[i, 0], P[i, 1], P[i, 2] = dh[i, 1], -dh[i, 2] * sa, dh[i, 2] * ca


@njit(cache=True)
def rnea(dh, mass, com, inertia, gvec, q, dq, ddq):
    """Recursive Newton-Euler inverse dynamics, rigid-body terms only.

    inertia is about each link COM in link axes.  Gravity enters as a
    base acceleration of -gvec.  Returns joint torques (NJ,).
    All vector algebra is unrolled to scalars: this is the innermost
    primitive of the whole package and small-array matmuls cost more
    than the physics.
    """
    R = np.empty((NJ, 3, 3))
    P = np.empty((NJ, 3))
    _local_frames(dh, q, R, P)

    w0 = w1 = w2 = 0.0          # angular velocity, current frame
    wd0 = wd1 = wd2 = 0.0
    a0, a1, a2 = -gvec[0], -gvec[1], -gvec[2]   # origin linear acceleration
    F = np.empty((NJ, 3))       # net force on link, link frame
    N = np.empty((NJ, 3))       # net moment about link COM

    for i in range(NJ):
        p0, p1, p2 = P[i, 0], P[i, 1], P[i, 2]
        # acceleration of frame-i origin, still in frame i-1
        u0 = w1 * p2 - w2 * p1          # w x P
        u1 = w2 * p0 - w0 * p2
        u2 = w0 * p1 - w1 * p0
        s0 = a0 + (wd1 * p2 - wd2 * p1) + (w1 * u2 - w2 * u1)
        s1 = a1 + (wd2 * p0 - wd0 * p2) + (w2 * u0 - w0 * u2)
        s2 = a2 + (wd0 * p1 - wd1 * p0) + (w0 * u1 - w1 * u0)
        r00, r01, r02 = R[i, 0, 0], R[i, 0, 1], R[i, 0, 2]
        r10, r11, r12 = R[i, 1, 0], R[i, 1, 1], R[i, 1, 2]
        r20, r21, r22 = R[i, 2, 0], R[i, 2, 1], R[i, 2, 2]
        # rotate parent quantities into frame i (R^T v)
        wp0 = r00 * w0 + r10 * w1 + r20 * w2
        wp1 = r01 * w0 + r11 * w1 + r21 * w2
        wp2 = r02 * w0 + r12 * w1 + r22 * w2
        dp0 = r00 * wd0 + r10 * wd1 + r20 * wd2
        dp1 = r01 * wd0 + r11 * wd1 + r21 * wd2
        dp2 = r02 * wd0 + r12 * wd1 + r22 * wd2
        a0 = r00 * s0 + r10 * s1 + r20 * s2
        a1 = r01 * s0 + r11 * s1 + r21 * s2
        a2 = r02 * s0 + r12 * s1 + r22 * s2
        qd = dq[i]
        w0, w1, w2 = wp0, wp1, wp2 + qd
        wd0 = dp0 + wp1 * qd
        wd1 = dp1 - wp0 * qd
        wd2 = dp2 + ddq[i]

        c0, c1, c2 = com[i, 0], com[i, 1], com[i, 2]
        u0 = w1 * c2 - w2 * c1
        u1 = w2 * c0 - w0 * c2
        u2 = w0 * c1 - w1 * c0
        acc0 = a0 + (wd1 * c2 - wd2 * c1) + (w1 * u2 - w2 * u1)
        acc1 = a1 + (wd2 * c0 - wd0 * c2) + (w2 * u0 - w0 * u2)
        acc2 = a2 + (wd0 * c1 - wd1 * c0) + (w0 * u1 - w1 * u0)
        m = mass[i]
        F[i, 0] = m * acc0
        F[i, 1] = m * acc1
        F[i, 2] = m * acc2
        i00, i01, i02 = inertia[i, 0, 0], inertia[i, 0, 1], inertia[i, 0, 2]
        i10, i11, i12 = inertia[i, 1, 0], inertia[i, 1, 1], inertia[i, 1, 2]
        i20, i21, i22 = inertia[i, 2, 0], inertia[i, 2, 1], inertia[i, 2, 2]
        iw0 = i00 * w0 + i01 * w1 + i02 * w2
        iw1 = i10 * w0 + i11 * w1 + i12 * w2
        iw2 = i20 * w0 + i21 * w1 + i22 * w2
        N[i, 0] = i00 * wd0 + i01 * wd1 + i02 * wd2 + (w1 * iw2 - w2 * iw1)
        N[i, 1] = i10 * wd0 + i11 * wd1 + i12 * wd2 + (w2 * iw0 - w0 * iw2)
        N[i, 2] = i20 * wd0 + i21 * wd1 + i22 * wd2 + (w0 * iw1 - w1 * iw0)

    tau = np.empty(NJ)
    f0 = f1 = f2 = 0.0
    n0 = n1 = n2 = 0.0
    for i in range(NJ - 1, -1, -1):
        if i < NJ - 1:
            j = i + 1
            fc0 = R[j, 0, 0] * f0 + R[j, 0, 1] * f1 + R[j, 0, 2] * f2
            fc1 = R[j, 1, 0] * f0 + R[j, 1, 1] * f1 + R[j, 1, 2] * f2
            fc2 = R[j, 2, 0] * f0 + R[j, 2, 1] * f1 + R[j, 2, 2] * f2
            nc0 = R[j, 0, 0] * n0 + R[j, 0, 1] * n1 + R[j, 0, 2] * n2
            nc1 = R[j, 1, 0] * n0 + R[j, 1, 1] * n1 + R[j, 1, 2] * n2
            nc2 = R[j, 2, 0] * n0 + R[j, 2, 1] * n1 + R[j, 2, 2] * n2
            p0, p1, p2 = P[j, 0], P[j, 1], P[j, 2]
            n0 = N[i, 0] + nc0 + (p1 * fc2 - p2 * fc1)
            n1 = N[i, 1] + nc1 + (p2 * fc0 - p0 * fc2)
            n2 = N[i, 2] + nc2 + (p0 * fc1 - p1 * fc0)
            f0 = F[i, 0] + fc0
            f1 = F[i, 1] + fc1
            f2 = F[i, 2] + fc2
        else:
            n0, n1, n2 = N[i, 0], N[i, 1], N[i, 2]
            f0, f1, f2 = F[i, 0], F[i, 1], F[i, 2]
        c0, c1, c2 = com[i, 0], com[i, 1], com[i, 2]
        n0 += c1 * F[i, 2] - c2 * F[i, 1]
        n1 += c2 * F[i, 0] - c0 * F[i, 2]
        n2 += c0 * F[i, 1] - c1 * F[i, 0]
        tau[i] = n2
    return tau


@njit(cache=True)
def rnea_barycentric(dh, params, gvec, q, dq, ddq):
    """Inverse dynamics linear in params[i] = (m, hx, hy, hz, Ixx, Ixy, Ixz, Iyy, Iyz, Izz).

    h = m*c is the first moment and I the inertia about the link frame
    origin, both in link axes.  Exactly equivalent to rnea() when the
    parameters are consistent; used to build torque regressors column
    by column.  Unrolled like rnea and for the same reason.
    """
    R = np.empty((NJ, 3, 3))
    P = np.empty((NJ, 3))
    _local_frames(dh, q, R, P)

    w0 = w1 = w2 = 0.0
    wd0 = wd1 = wd2 = 0.0
    a0, a1, a2 = -gvec[0], -gvec[1], -gvec[2]
    F = np.empty((NJ, 3))
    N = np.empty((NJ, 3))      # moment about the frame origin here

    for i in range(NJ):
        p0, p1, p2 = P[i, 0], P[i, 1], P[i, 2]
        u0 = w1 * p2 - w2 * p1
        u1 = w2 * p0 - w0 * p2
        u2 = w0 * p1 - w1 * p0
        s0 = a0 + (wd1 * p2 - wd2 * p1) + (w1 * u2 - w2 * u1)
        s1 = a1 + (wd2 * p0 - wd0 * p2) + (w2 * u0 - w0 * u2)
        s2 = a2 + (wd0 * p1 - wd1 * p0) + (w0 * u1 - w1 * u0)
        r00, r01, r02 = R[i, 0, 0], R[i, 0, 1], R[i, 0, 2]
        r10, r11, r12 = R[i, 1, 0], R[i, 1, 1], R[i, 1, 2]
        r20, r21, r22 = R[i, 2, 0], R[i, 2, 1], R[i, 2, 2]
        wp0 = r00 * w0 + r10 * w1 + r20 * w2
        wp1 = r01 * w0 + r11 * w1 + r21 * w2
        wp2 = r02 * w0 + r12 * w1 + r22 * w2
        dp0 = r00 * wd0 + r10 * wd1 + r20 * wd2
        dp1 = r01 * wd0 + r11 * wd1 + r21 * wd2
        dp2 = r02 * wd0 + r12 * wd1 + r22 * wd2
        a0 = r00 * s0 + r10 * s1 + r20 * s2
        a1 = r01 * s0 + r11 * s1 + r21 * s2
        a2 = r02 * s0 + r12 * s1 + r22 * s2
        qd = dq[i]
        w0, w1, w2 = wp0, wp1, wp2 + qd
        wd0 = dp0 + wp1 * qd
        wd1 = dp1 - wp0 * qd
        wd2 = dp2 + ddq[i]

        m = params[i, 0]
        h0, h1, h2 = params[i, 1], params[i, 2], params[i, 3]
        # force: m*a + wd x h + w x (w x h)
        u0 = w1 * h2 - w2 * h1
        u1 = w2 * h0 - w0 * h2
        u2 = w0 * h1 - w1 * h0
        F[i, 0] = m * a0 + (wd1 * h2 - wd2 * h1) + (w1 * u2 - w2 * u1)
        F[i, 1] = m * a1 + (wd2 * h0 - wd0 * h2) + (w2 * u0 - w0 * u2)
        F[i, 2] = m * a2 + (wd0 * h1 - wd1 * h0) + (w0 * u1 - w1 * u0)
        # moment about frame origin: Io wd + w x (Io w) + h x a
        i00, i01, i02 = params[i, 4], params[i, 5], params[i, 6]
        i11, i12, i22 = params[i, 7], params[i, 8], params[i, 9]
        iw0 = i00 * w0 + i01 * w1 + i02 * w2
        iw1 = i01 * w0 + i11 * w1 + i12 * w2
        iw2 = i02 * w0 + i12 * w1 + i22 * w2
        N[i, 0] = i00 * wd0 + i01 * wd1 + i02 * wd2 + (w1 * iw2 - w2 * iw1) + (h1 * a2 - h2 * a1)
        N[i, 1] = i01 * wd0 + i11 * wd1 + i12 * wd2 + (w2 * iw0 - w0 * iw2) + (h2 * a0 - h0 * a2)
        N[i, 2] = i02 * wd0 + i12 * wd1 + i22 * wd2 + (w0 * iw1 - w1 * iw0) + (h0 * a1 - h1 * a0)

    tau = np.empty(NJ)
    f0 = f1 = f2 = 0.0
    n0 = n1 = n2 = 0.0
    for i in range(NJ - 1, -1, -1):
        if i < NJ - 1:
            j = i + 1
            fc0 = R[j, 0, 0] * f0 + R[j, 0, 1] * f1 + R[j, 0, 2] * f2
            fc1 = R[j, 1, 0] * f0 + R[j, 1, 1] * f1 + R[j, 1, 2] * f2
            fc2 = R[j, 2, 0] * f0 + R[j, 2, 1] * f1 + R[j, 2, 2] * f2
            nc0 = R[j, 0, 0] * n0 + R[j, 0, 1] * n1 + R[j, 0, 2] * n2
            nc1 = R[j, 1, 0] * n0 + R[j, 1, 1] * n1 + R[j, 1, 2] * n2
            nc2 = R[j, 2, 0] * n0 + R[j, 2, 1] * n1 + R[j, 2, 2] * n2
            p0, p1, p2 = P[j, 0], P[j, 1], P[j, 2]
            n0 = N[i, 0] + nc0 + (p1 * fc2 - p2 * fc1)
            n1 = N[i, 1] + nc1 + (p2 * fc0 - p0 * fc2)
            n2 = N[i, 2] + nc2 + (p0 * fc1 - p1 * fc0)
            f0 = F[i, 0] + fc0
            f1 = F[i, 1] + fc1
            f2 = F[i, 2] + fc2
        else:
            n0, n1, n2 = N[i, 0], N[i, 1], N[i, 2]
            f0, f1, f2 = F[i, 0], F[i, 1], F[i, 2]
        tau[i] = n2
    return tau


@njit(cache=True)
def regressor_stack(dh, gvec, vs, Q, DQ, DDQ):
    """Stacked torque regressor over a state batch, shape (n*NJ, 78).

    Columns 0..59 are the per-link barycentric parameters in
    rnea_barycentric order; 60..77 hold per-joint (signum, stribeck,
    viscous) friction shapes with stribeck scale vs[i].  Row block s
    gives the joint torques of state s as W_s @ params.
    """
    n = Q.shape[0]
    np_rigid = 10 * NJ
    W = np.zeros((n * NJ, np_rigid + 3 * NJ))
    basis = np.zeros((NJ, 10))
    for s in range(n):
        q = Q[s]
        dq = DQ[s]
        ddq = DDQ[s]
        for j in range(NJ):
            for k in range(10):
                basis[j, k] = 1.0
                col = rnea_barycentric(dh, basis, gvec, q, dq, ddq)
                basis[j, k] = 0.0
                for i in range(NJ):
                    W[s * NJ + i, 10 * j + k] = col[i]
        for i in range(NJ):
            v = dq[i]
            sgn = np.sign(v)
            r = v * v / vs[i]
            W[s * NJ + i, np_rigid + 3 * i + 0] = sgn
            W[s * NJ + i, np_rigid + 3 * i + 1] = np.exp(-r * r) * sgn
            W[s * NJ + i, np_rigid + 3 * i + 2] = v
    return W


@njit(cache=True)
def mass_matrix(dh, mass, com, inertia, q):
    """Joint-space inertia matrix by unit-acceleration RNEA columns."""
    M = np.empty((NJ, NJ))
    zero = np.zeros(NJ)
    g0 = np.zeros(3)
    e = np.zeros(NJ)
    for j in range(NJ):
        e[j] = 1.0
        M[:, j] = rnea(dh, mass, com, inertia, g0, q, zero, e)
        e[j] = 0.0
    # symmetrize against last-bit asymmetry from the column sweep
    for i in range(NJ):
        for j in range(i + 1, NJ):
            v = 0.5 * (M[i, j] + M[j, i])
            M[i, j] = v
            M[j, i] = v
    return M


@njit(cache=True)
def gravity_torque(dh, mass, com, inertia, gvec, q):
    zero = np.zeros(NJ)
    return rnea(dh, mass, com, inertia, gvec, q, zero, zero)


@njit(cache=True)
def velocity_torque(dh, mass, com, inertia, q, v):
    """Coriolis/centrifugal torque C(q, v) v (no gravity)."""
    zero = np.zeros(NJ)
    g0 = np.zeros(3)
    return rnea(dh, mass, com, inertia, g0, q, v, zero)


@njit(cache=True)
def coriolis_matrix(dh, mass, com, inertia, q, dq):
    """Christoffel-factorized C(q, dq).

    The velocity-product torque is a quadratic form in dq whose unique
    symmetric coefficients are the first-kind Christoffel symbols, so
    polarizing unit-velocity RNEA calls recovers them exactly and the
    resulting factorization satisfies dM/dt = C + C^T to roundoff.
    """
    hv = np.empty((NJ, NJ))        # hv[j] = h(e_j)
    e = np.zeros(NJ)
    for j in range(NJ):
        e[j] = 1.0
        hv[j] = velocity_torque(dh, mass, com, inertia, q, e)
        e[j] = 0.0

    G = np.empty((NJ, NJ, NJ))     # G[i, j, k] = c_ijk
    for j in range(NJ):
        for i in range(NJ):
            G[i, j, j] = hv[j, i]
    ee = np.zeros(NJ)
    for j in range(NJ):
        for k in range(j + 1, NJ):
            ee[j] = 1.0
            ee[k] = 1.0
            hjk = velocity_torque(dh, mass, com, inertia, q, ee)
            ee[j] = 0.0
            ee[k] = 0.0
            for i in range(NJ):
                c = 0.5 * (hjk[i] - hv[j, i] - hv[k, i])
                G[i, j, k] = c
                G[i, k, j] = c

    C = np.zeros((NJ, NJ))
    for i in range(NJ):
        for j in range(NJ):
            s = 0.0
            for k in range(NJ):
                s += G[i, j, k] * dq[k]
            C[i, j] = s
    return C


@njit(cache=True)
def _stable_sigmoid(x: float) -> float:
    if x >= 0.0:
        return 1.0 / (1.0 + np.exp(-x))
    z = np.exp(x)
    return z / (1.0 + z)


@njit(cache=True)
def friction_torque(fric, dq, sigmoid_mode):
    """Joint friction torque.

    fric columns: coulomb, stiction, viscous, stribeck_v, phi1, phi2, phi3.
    sigmoid_mode True swaps the discontinuous coulomb term for the
    shifted-sigmoid form, which is exactly zero at dq = 0.
    """
    tau = np.empty(NJ)
    for i in range(NJ):
        cc, cs, cv, vs = fric[i, 0], fric[i, 1], fric[i, 2], fric[i, 3]
        v = dq[i]
        s = np.sign(v)
        r = v * v / vs
        stric = cs * np.exp(-r * r) * s
        if sigmoid_mode:
            p1, p2, p3 = fric[i, 4], fric[i, 5], fric[i, 6]
            coul = p1 * _stable_sigmoid(p2 * (v + p3)) - p1 * _stable_sigmoid(p2 * p3)
        else:
            coul = cc * s
        tau[i] = coul + stric + cv * v
    return tau


@njit(cache=True)
def bias_torque(dh, mass, com, inertia, gvec, fric, q, dq, fric_mode):
    """C(q,dq) dq + g(q) + tau_f(dq).  fric_mode: 0 none, 1 signum, 2 sigmoid."""
    zero = np.zeros(NJ)
    b = rnea(dh, mass, com, inertia, gvec, q, dq, zero)
    if fric_mode == 1:
        b += friction_torque(fric, dq, False)
    elif fric_mode == 2:
        b += friction_torque(fric, dq, True)
    return b


@njit(cache=True)
def forward_dynamics(dh, mass, com, inertia, gvec, fric, q, dq, tau_motor, tau_ext, fric_mode):
    b = bias_torque(dh, mass, com, inertia, gvec, fric, q, dq, fric_mode)
    M = mass_matrix(dh, mass, com, inertia, q)
    return np.linalg.solve(M, tau_motor + tau_ext - b)


@njit(cache=True)
def potential_energy(dh, mass, com, gvec, q):
    frames = frame_chain(dh, q)
    U = 0.0
    for i in range(NJ):
        p = frames[i + 1, :3, :3] @ com[i] + frames[i + 1, :3, 3]
        U -= mass[i] * (gvec[0] * p[0] + gvec[1] * p[1] + gvec[2] * p[2])
    return U


@njit(cache=True)
def kinetic_energy(dh, mass, com, inertia, q, dq):
    M = mass_matrix(dh, mass, com, inertia, q)
    return 0.5 * dq @ (M @ dq)
